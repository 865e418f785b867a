"""Prediction with Test-Time Augmentation, and Attention Rollout heatmaps.

TTA scores five deterministic views of a scan and averages the softmax
probabilities: the original, a horizontal flip, quarter turns clockwise and
counter-clockwise, and a contrast-enhanced copy. Every view goes through the
model on its own, so a prediction never depends on what else is in a batch.

Attention Rollout follows the CLS token's attention down through every
layer. For each layer the heads are averaged, the identity is added for the
residual path and rows are renormalized; the per-layer matrices are then
multiplied with the latest layer on the left. The CLS row of the product,
without its own entry, reshaped to the patch grid and min-max normalized, is
the heatmap.
"""
import logging
import math
from collections import namedtuple

import numpy as np

from .constants import Constants
from .dataset import to_model_input
from .exceptions import ContractException, DimensionException
from .imaging import adjust_contrast, as_image, hflip, overlay_heatmap, rotate90
from .model import AttentionTrace, forward
from .tensor import softmax_array
from .utils import write_csv

logger = logging.getLogger('mrivit')

TtaResult = namedtuple('TtaResult', ['views', 'view_probabilities', 'probabilities', 'predicted'])
TtaResult.__doc__ = """Per-view ``(V, K)`` probabilities, their average ``(K,)`` and the argmax."""

RolloutMap = namedtuple('RolloutMap', ['grid', 'source', 'matrix'])
RolloutMap.__doc__ = """Normalized ``(sqrt(N), sqrt(N))`` heatmap, source name, rollout matrix."""


# ---[ TEST-TIME AUGMENTATION ]---

def tta_views(image):
    """Return the five TTA views of a square uint8 image, in ``Constants.TTA_VIEWS`` order."""
    image = as_image(image)
    if image.shape[0] != image.shape[1]:
        raise DimensionException(
            "Test-time augmentation needs a square image, got %dx%d"
            % (image.shape[1], image.shape[0]))
    return [
        image,
        hflip(image),
        rotate90(image, Constants.CW),
        rotate90(image, Constants.CCW),
        adjust_contrast(image, Constants.TTA_CONTRAST_FACTOR),
    ]


def predict_probabilities(params, images):
    """Eval-mode softmax probabilities of a ``(B, C, H, W)`` batch."""
    return softmax_array(forward(params, images).logits.data, axis=-1)


def _single_view(params, image):
    cfg = params.config
    prepared = to_model_input(image, cfg.image_size, cfg.channels)[np.newaxis]
    return predict_probabilities(params, prepared)[0].astype(np.float64)


def average_views(view_probabilities):
    """Arithmetic mean of the view rows, anchored on the first view.

    ``p0 + sum(p_i - p0) / V`` is the mean, and returns ``p0`` bit for bit when
    every view agrees.
    """
    view_probabilities = np.asarray(view_probabilities, dtype=np.float64)
    first = view_probabilities[0]
    return first + np.sum(view_probabilities - first, axis=0) / len(view_probabilities)


def tta_predict(params, image, tta=True):
    """Classify one uint8 image.

    :param params: :class:`~mrivit.model.ViTParams`.
    :param image: Any-size uint8 image; each view is resized and scaled as in
        evaluation.
    :param bool tta: Average the five views; ``False`` scores the original only.
    :rtype: :class:`TtaResult`
    """
    views = tta_views(image) if tta else [as_image(image)]
    tags = Constants.TTA_VIEWS if tta else Constants.TTA_VIEWS[:1]
    view_probabilities = np.stack([_single_view(params, view) for view in views])
    probabilities = average_views(view_probabilities)
    # np.argmax keeps the lowest index on ties
    predicted = int(np.argmax(probabilities))
    logger.debug("Predicted class %d from %d views: %s", predicted, len(views), probabilities)
    return TtaResult(tuple(tags), view_probabilities, probabilities, predicted)


# ---[ ATTENTION ROLLOUT ]---

def augment_attention(layer):
    """Average a ``(heads, T, T)`` layer over heads, add the identity, renormalize rows."""
    averaged = np.asarray(layer, dtype=np.float64).mean(axis=0)
    augmented = averaged + np.eye(averaged.shape[0])
    return augmented / augmented.sum(axis=-1, keepdims=True)


def _trace_layers(trace):
    layers = trace.layers if isinstance(trace, AttentionTrace) else list(trace)
    if not layers:
        raise ContractException("Attention rollout needs at least one layer")
    layers = [np.asarray(layer) for layer in layers]
    if layers[0].ndim == 4:
        if layers[0].shape[0] != 1:
            raise DimensionException(
                "Attention rollout works on one sample, got a batch of %d" % layers[0].shape[0])
        layers = [layer[0] for layer in layers]
    shape = layers[0].shape
    for index, layer in enumerate(layers):
        if layer.ndim != 3 or layer.shape != shape or layer.shape[1] != layer.shape[2]:
            raise DimensionException(
                "Layer %d attention has shape %s, expected %s with square maps"
                % (index, layer.shape, shape))
    return layers


def rollout_matrix(trace):
    """``A_aug(L) @ ... @ A_aug(1)`` for an :class:`~mrivit.model.AttentionTrace`."""
    layers = _trace_layers(trace)
    rollout = np.eye(layers[0].shape[-1])
    for layer in layers:
        rollout = augment_attention(layer) @ rollout
    return rollout


def normalize_map(values):
    """Min-max normalize to ``[0, 1]``; a flat map becomes all zeros."""
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def attention_rollout(trace, source=None):
    """Turn captured attention into a patch-grid heatmap.

    :param trace: :class:`~mrivit.model.AttentionTrace` of a single sample
        (or a batch of one), or a list of ``(heads, T, T)`` arrays.
    :param source: Optional name of the image the trace belongs to.
    :rtype: :class:`RolloutMap`
    """
    matrix = rollout_matrix(trace)
    patches = matrix.shape[0] - 1
    side = math.isqrt(patches)
    if side * side != patches:
        raise DimensionException("%d patch tokens do not form a square grid" % patches)
    grid = matrix[0, 1:].reshape(side, side)
    return RolloutMap(normalize_map(grid), source, matrix)


def rollout_for_image(params, image, source=None):
    """Capture attention for one uint8 image and compute its rollout map."""
    cfg = params.config
    prepared = to_model_input(image, cfg.image_size, cfg.channels)[np.newaxis]
    trace = forward(params, prepared, capture_attention=True).attention
    return attention_rollout(trace.sample(0), source)


def render_rollout(image, rollout_map, alpha=0.45):
    """Upsample the heatmap bilinearly to ``image`` and blend it in jet colours."""
    grid = rollout_map.grid if isinstance(rollout_map, RolloutMap) else rollout_map
    return overlay_heatmap(image, grid, alpha)


def write_grid_csv(rollout_map, path):
    """Dump the normalized grid, one CSV row per patch row."""
    grid = rollout_map.grid
    header = ['col_%d' % index for index in range(grid.shape[1])]
    write_csv(path, header, [[repr(float(value)) for value in row] for row in grid])
