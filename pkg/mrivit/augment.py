"""Training-time augmentation.

Two levels are applied, only to the training split:

* pixel level, per image, in a fixed order: horizontal flip, small rotation,
  translation, zoom, contrast jitter (:func:`pixel_augment`). Vertical flips
  and large rotations never occur since brain anatomy has a fixed
  superior-inferior orientation;
* sample level, per batch: MixUp or CutMix, one strategy drawn per batch
  (:func:`mix_batch`).

Every function takes an explicit generator (see :mod:`mrivit.rng`), so the
same stream always produces the same augmentation.
"""
import logging
import math
from collections import namedtuple
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .constants import Constants
from .imaging import adjust_contrast, hflip, rotate_small, translate, zoom

logger = logging.getLogger('mrivit')

PixelParams = namedtuple('PixelParams', ['flip', 'degrees', 'dx', 'dy', 'zoom', 'contrast'])
MixedBatch = namedtuple('MixedBatch', ['images', 'soft_labels', 'lambda_used', 'strategy'])


@dataclass(frozen=True)
class AugmentConfig:
    hflip_prob: float = 0.5
    rot_degrees: float = 15.0
    translate_frac: float = 0.05
    zoom_frac: float = 0.08
    contrast_frac: float = 0.10
    mixup_alpha: float = 0.2
    cutmix_alpha: float = 1.0
    strategy_probs: Tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must lie in [0, 1], got %r" % self.hflip_prob)
        if any(not 0.0 <= prob <= 1.0 for prob in self.strategy_probs) \
                or len(self.strategy_probs) != 2:
            raise ValueError(
                "strategy_probs must be two values in [0, 1], got %r" % (self.strategy_probs,))
        if self.mixup_alpha <= 0 or self.cutmix_alpha <= 0:
            raise ValueError("MixUp/CutMix alphas must be positive")
        if not 0.0 <= self.rot_degrees <= 45.0:
            raise ValueError("rot_degrees must lie in [0, 45], got %r" % self.rot_degrees)
        if min(self.translate_frac, self.zoom_frac, self.contrast_frac) < 0 \
                or self.zoom_frac >= 1 or self.contrast_frac >= 1:
            raise ValueError("Augmentation fractions must lie in [0, 1)")


# ---[ PIXEL LEVEL ]---

def sample_pixel_params(cfg, rng):
    """Draw the parameters of one pixel augmentation, always in the same order."""
    flip = bool(rng.random() < cfg.hflip_prob)
    degrees = float(rng.uniform(-cfg.rot_degrees, cfg.rot_degrees))
    dx = float(rng.uniform(-cfg.translate_frac, cfg.translate_frac))
    dy = float(rng.uniform(-cfg.translate_frac, cfg.translate_frac))
    scale = float(rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac))
    contrast = float(rng.uniform(1.0 - cfg.contrast_frac, 1.0 + cfg.contrast_frac))
    return PixelParams(flip, degrees, dx, dy, scale, contrast)


def apply_pixel_params(image, params):
    """Replay :class:`PixelParams` through the imaging transforms."""
    if params.flip:
        image = hflip(image)
    image = rotate_small(image, params.degrees)
    image = translate(image, params.dx, params.dy)
    image = zoom(image, params.zoom)
    return adjust_contrast(image, params.contrast)


def pixel_augment(image, cfg, rng):
    """Randomly flip, rotate, translate, zoom and contrast-jitter one image."""
    params = sample_pixel_params(cfg, rng)
    logger.debug("Pixel augmentation %s", params)
    return apply_pixel_params(image, params)


# ---[ SAMPLE LEVEL ]---

def sample_strategy(rng, probs=(0.5, 0.5)):
    """Pick MixUp or CutMix for one batch; ``(0, 0)`` disables mixing."""
    total = float(probs[0]) + float(probs[1])
    if total <= 0:
        return Constants.NO_MIX
    draw = rng.random()
    return Constants.MIXUP if draw < probs[0] / total else Constants.CUTMIX


def _unmixed(batch):
    return MixedBatch(batch.images, batch.labels, 1.0, Constants.NO_MIX)


def mixup(batch, alpha=0.2, rng=None, lam=None):
    """Blend every sample with a partner from one shuffled permutation.

    :param batch: :class:`~mrivit.dataset.Batch`.
    :param float alpha: Beta(alpha, alpha) concentration.
    :param rng: Generator for lambda and the partner permutation.
    :param lam: Force lambda instead of drawing it.
    :rtype: :class:`MixedBatch`
    """
    size = batch.images.shape[0]
    if size < 2:
        return _unmixed(batch)
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    partner = rng.permutation(size)
    first = batch.images.astype(np.float64)
    second = first[partner]
    images = np.clip(lam * first + (1.0 - lam) * second,
                     np.minimum(first, second), np.maximum(first, second))
    labels = lam * batch.labels + (1.0 - lam) * batch.labels[partner]
    return MixedBatch(images.astype(batch.images.dtype), labels, lam, Constants.MIXUP)


def cutmix_box(height, width, lam, center_y, center_x):
    """Return the clipped ``(y1, y2, x1, x2)`` box for ``lam`` centred at a pixel.

    The side lengths ``int(height * sqrt(1 - lam))`` and
    ``int(width * sqrt(1 - lam))`` are halved with floor division on either
    side of the centre, so an odd side loses one pixel. The box is then
    clipped to the image. Callers recompute lambda from the returned box
    (see :func:`cutmix`), not from ``lam``.
    """
    ratio = math.sqrt(1.0 - lam)
    cut_h, cut_w = int(height * ratio), int(width * ratio)
    y1 = int(np.clip(center_y - cut_h // 2, 0, height))
    y2 = int(np.clip(center_y + cut_h // 2, 0, height))
    x1 = int(np.clip(center_x - cut_w // 2, 0, width))
    x2 = int(np.clip(center_x + cut_w // 2, 0, width))
    return y1, y2, x1, x2


def cutmix(batch, alpha=1.0, rng=None, lam=None, center=None):
    """Paste a partner's rectangle into every sample; labels mix by pasted area.

    The box side is ``sqrt(1 - lam)`` of the image side, centred on a uniformly
    drawn pixel and clipped to the image. The returned lambda is recomputed
    from the clipped area: ``1 - box_area / (H * W)``.

    :param center: Force the ``(row, col)`` box centre instead of drawing it.
    """
    size, _, height, width = batch.images.shape
    if size < 2:
        return _unmixed(batch)
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    if center is None:
        center = (int(rng.integers(height)), int(rng.integers(width)))
    partner = rng.permutation(size)
    y1, y2, x1, x2 = cutmix_box(height, width, lam, *center)
    images = batch.images.copy()
    images[:, :, y1:y2, x1:x2] = batch.images[partner][:, :, y1:y2, x1:x2]
    adjusted = 1.0 - (y2 - y1) * (x2 - x1) / (height * width)
    labels = adjusted * batch.labels + (1.0 - adjusted) * batch.labels[partner]
    return MixedBatch(images, labels, adjusted, Constants.CUTMIX)


def mix_batch(batch, cfg, rng):
    """Draw a strategy and apply it; all draws come from ``rng``."""
    strategy = sample_strategy(rng, cfg.strategy_probs)
    if strategy == Constants.MIXUP:
        return mixup(batch, cfg.mixup_alpha, rng)
    if strategy == Constants.CUTMIX:
        return cutmix(batch, cfg.cutmix_alpha, rng)
    return _unmixed(batch)
