import os

import numpy as np

from mrivit.constants import Constants
from mrivit.dataset import MemorySamples
from mrivit.imaging import save_png
from mrivit.model import ViTConfig, init_params
from mrivit.rng import stream
from mrivit.tensor import FLOAT32


def pattern_image(label, size=32, rng=None, noise=12.0):
    """Grayscale uint8 image with one geometric pattern per class.

    0: horizontal stripes, 1: vertical stripes, 2: centred disk, 3: checkerboard.
    The patterns survive a horizontal flip and small rotations.
    """
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
    period = max(2, size // 4)
    if label == 0:
        mask = (rows // (period // 2)) % 2 == 0
    elif label == 1:
        mask = (cols // (period // 2)) % 2 == 0
    elif label == 2:
        center = (size - 1) / 2.0
        mask = (rows - center) ** 2 + (cols - center) ** 2 <= (size / 4.0) ** 2
    else:
        mask = ((rows // period) + (cols // period)) % 2 == 0
    values = np.where(mask, 200.0, 40.0)
    if rng is not None and noise:
        values = values + rng.normal(0.0, noise, size=values.shape)
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)[:, :, np.newaxis]


def synthetic_samples(per_class, seed=0, size=32):
    """:class:`MemorySamples` with ``per_class`` noisy pattern images per class."""
    rng = stream(seed, 'synthetic-images')
    images, labels = [], []
    for _ in range(per_class):
        for label in range(Constants.NUM_CLASSES):
            images.append(pattern_image(label, size, rng))
            labels.append(label)
    return MemorySamples(images, labels)


def write_class_tree(root, counts, size=16):
    """Write ``counts[i]`` pattern images under ``root/<class i>/``; return the paths."""
    rng = stream(0, 'class-tree')
    paths = []
    for label, (name, count) in enumerate(zip(Constants.CLASS_NAMES, counts)):
        directory = os.path.join(str(root), name)
        os.makedirs(directory, exist_ok=True)
        for index in range(count):
            path = os.path.join(directory, '%s_%03d.png' % (name, index))
            save_png(pattern_image(label, size, rng), path)
            paths.append(path)
    return paths


def tiny_config(**overrides):
    return ViTConfig.preset(Constants.PRESET_TINY, **overrides)


def tiny_params(seed=0, dtype=FLOAT32, **overrides):
    return init_params(tiny_config(**overrides), stream(seed, Constants.STREAM_INIT), dtype)


def randomized(params, seed=0, spread=0.3):
    """Copy of ``params`` with every entry redrawn, so that gradients are not tiny."""
    rng = np.random.default_rng(seed)
    result = params.copy()
    for name, array in result.items():
        noise = rng.normal(0.0, spread, size=array.shape).astype(array.dtype)
        if name.endswith('.gamma'):
            array[...] = 1.0 + noise
        else:
            array[...] = noise
    return result
