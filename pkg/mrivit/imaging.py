"""Image I/O, colour conversion, CLAHE, geometric transforms and overlays.

Images are ``uint8`` numpy arrays shaped ``(height, width, channels)`` with
one (grayscale) or three (sRGB) channels. Heatmaps are float arrays shaped
``(height, width)`` with values in ``[0, 1]``.

.. note::

    **Sampling convention.** Pixel ``(row, col)`` is centred at coordinates
    ``(row, col)``. Resizing maps output pixel ``i`` to input coordinate
    ``(i + 0.5) * in / out - 0.5`` (half-pixel centres) and clamps at the
    borders. Rotations, translations and zooms sample bilinearly around the
    image centre ``((h - 1) / 2, (w - 1) / 2)``; samples falling outside the
    image read black, which is the MRI background. Every conversion back to
    ``uint8`` rounds half up and clamps to ``[0, 255]``.

.. note::

    **Jet colormap.** ``jet(v)`` is the piecewise-linear ramp through the
    control points::

        v      0.0    0.125  0.375  0.625  0.875  1.0
        RGB    0,0,.5 0,0,1  0,1,1  1,1,0  1,0,0  .5,0,0

    i.e. ``r = clip(1.5 - |4v - 3|)``, ``g = clip(1.5 - |4v - 2|)`` and
    ``b = clip(1.5 - |4v - 1|)``.
"""
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .constants import Constants
from .exceptions import ImageFormatException, ImageSizeException, MissingImageException

logger = logging.getLogger('mrivit')

PNG_COMPRESS_LEVEL = 6

# sRGB (D65) to CIE XYZ.
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


@dataclass(frozen=True)
class ClaheConfig:
    """CLAHE parameters. ``tiles_x``/``tiles_y`` count tiles, they are not tile sizes."""
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ImageSizeException(
                "CLAHE needs at least one tile per axis, got %dx%d"
                % (self.tiles_x, self.tiles_y))
        if not self.clip_limit > 0:
            raise ValueError("CLAHE clip limit must be positive, got %r" % self.clip_limit)
        if not 1 <= self.bins <= 256:
            raise ValueError("CLAHE bins must be within [1, 256], got %r" % self.bins)


# ---[ I/O ]---

def as_image(array):
    """Return ``array`` as a ``(h, w, c)`` uint8 image, adding the channel axis if needed."""
    image = np.asarray(array)
    if image.ndim == 2:
        image = image[:, :, np.newaxis]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ImageFormatException(
            "Images must be (height, width, 1|3), got shape %s" % (image.shape,))
    if image.dtype != np.uint8:
        raise ImageFormatException("Images must be uint8, got %s" % image.dtype)
    return image


def load_image(path):
    """Decode a PNG or JPEG file.

    :param path: Image path.
    :return: uint8 image; grayscale files stay single-channel, everything
        else is converted to RGB.
    :raises MissingImageException: the file does not exist.
    :raises ImageFormatException: the file is not a readable PNG/JPEG.
    """
    if not os.path.isfile(path):
        raise MissingImageException("Image %s does not exist" % path)
    try:
        with Image.open(path) as handle:
            if handle.format not in ('PNG', 'JPEG'):
                raise ImageFormatException(
                    "Unsupported image format %s for %s" % (handle.format, path))
            if handle.mode in ('L', 'LA', 'I', 'I;16', '1'):
                decoded = handle.convert('L')
            else:
                decoded = handle.convert('RGB')
            array = np.array(decoded, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as error:
        raise ImageFormatException("Cannot decode image %s: %s" % (path, error))
    return as_image(array)


def save_png(image, path):
    """Write ``image`` as PNG with fixed encoder settings (byte-stable output)."""
    image = as_image(image)
    if image.shape[2] == 1:
        pil_image = Image.fromarray(image[:, :, 0], mode='L')
    else:
        pil_image = Image.fromarray(image, mode='RGB')
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    pil_image.save(path, format='PNG', compress_level=PNG_COMPRESS_LEVEL, optimize=False)


def to_uint8(values):
    """Round half up and clamp real values to a uint8 array."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def ensure_channels(image, channels):
    """Convert between grayscale and RGB (ITU-R 601 luma for RGB to gray)."""
    image = as_image(image)
    if image.shape[2] == channels:
        return image
    if channels == 3:
        return np.repeat(image, 3, axis=2)
    luma = image.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    return to_uint8(luma)[:, :, np.newaxis]


# ---[ COLOUR ]---

def to_lab(image):
    """Convert an sRGB image to CIE LAB (D65), float ``(h, w, 3)``."""
    image = as_image(image)
    if image.shape[2] != 3:
        raise ImageFormatException(
            "LAB conversion needs 3 channels, got %d" % image.shape[2])
    rgb = image.astype(np.float64) / 255.0
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T / _D65_WHITE
    threshold = _LAB_DELTA ** 3
    f = np.where(xyz > threshold, np.cbrt(xyz), xyz / (3 * _LAB_DELTA ** 2) + 4.0 / 29.0)
    lightness = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([lightness, a, b], axis=-1)


def from_lab(lab):
    """Convert a CIE LAB (D65) array back to an sRGB uint8 image."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[2] != 3:
        raise ImageFormatException("LAB arrays must be (h, w, 3), got %s" % (lab.shape,))
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f > _LAB_DELTA, f ** 3, 3 * _LAB_DELTA ** 2 * (f - 4.0 / 29.0))
    linear = np.clip((xyz * _D65_WHITE) @ _XYZ_TO_RGB.T, 0.0, 1.0)
    rgb = np.where(
        linear <= 0.0031308, 12.92 * linear, 1.055 * np.power(linear, 1.0 / 2.4) - 0.055)
    return to_uint8(rgb * 255.0)


# ---[ CLAHE ]---

def _tile_edges(length, tiles):
    return [(index * length) // tiles for index in range(tiles + 1)]


def _tile_mapping(tile, cfg):
    """256-entry mapping of one tile: clipped histogram, one-pass redistribution, CDF."""
    count = tile.size
    bin_of_value = (np.arange(256) * cfg.bins) // 256
    hist = np.bincount(bin_of_value[tile.ravel()], minlength=cfg.bins).astype(np.float64)
    threshold = cfg.clip_limit * (count / cfg.bins)
    excess = np.sum(np.maximum(hist - threshold, 0.0))
    hist = np.minimum(hist, threshold) + excess / cfg.bins
    cdf = np.cumsum(hist)
    return (cdf * 255.0 / count)[bin_of_value]


def _interpolation_axis(edges, length):
    """Neighbouring tile indices and blend weights for every pixel along one axis."""
    centers = np.array(
        [(edges[i] + edges[i + 1] - 1) / 2.0 for i in range(len(edges) - 1)])
    positions = np.arange(length, dtype=np.float64)
    lower = np.clip(np.searchsorted(centers, positions, side='right') - 1, 0, len(centers) - 1)
    upper = np.minimum(lower + 1, len(centers) - 1)
    span = centers[upper] - centers[lower]
    weight = np.divide(
        positions - centers[lower], span, out=np.zeros(length), where=span > 0)
    return lower, upper, np.clip(weight, 0.0, 1.0)


def clahe_channel(channel, cfg):
    """Apply CLAHE to a single 2-D uint8 channel."""
    height, width = channel.shape
    if height < cfg.tiles_y or width < cfg.tiles_x:
        raise ImageSizeException(
            "Image of %dx%d pixels is smaller than the %dx%d CLAHE tile grid"
            % (width, height, cfg.tiles_x, cfg.tiles_y))
    rows = _tile_edges(height, cfg.tiles_y)
    cols = _tile_edges(width, cfg.tiles_x)
    mappings = np.empty((cfg.tiles_y, cfg.tiles_x, 256))
    for ty in range(cfg.tiles_y):
        for tx in range(cfg.tiles_x):
            tile = channel[rows[ty]:rows[ty + 1], cols[tx]:cols[tx + 1]]
            mappings[ty, tx] = _tile_mapping(tile, cfg)

    y0, y1, wy = _interpolation_axis(rows, height)
    x0, x1, wx = _interpolation_axis(cols, width)
    y0, y1, wy = y0[:, None], y1[:, None], wy[:, None]
    x0, x1, wx = x0[None, :], x1[None, :], wx[None, :]
    top_left = mappings[y0, x0, channel]
    top_right = mappings[y0, x1, channel]
    bottom_left = mappings[y1, x0, channel]
    bottom_right = mappings[y1, x1, channel]
    top = top_left + wx * (top_right - top_left)
    bottom = bottom_left + wx * (bottom_right - bottom_left)
    return to_uint8(top + wy * (bottom - top))


def clahe(image, cfg=None):
    """Contrast Limited Adaptive Histogram Equalization.

    :param image: uint8 image.
    :param cfg: :class:`ClaheConfig` (8x8 tile grid, clip limit 2.0 by default).
    :return: Equalized uint8 image of the same shape.

    Grayscale images are equalized directly. RGB images are converted to LAB,
    the L channel is rescaled to ``[0, 255]``, equalized, scaled back and the
    image converted back to sRGB, leaving the chroma channels untouched.
    """
    cfg = cfg or ClaheConfig()
    image = as_image(image)
    if image.shape[2] == 1:
        return clahe_channel(image[:, :, 0], cfg)[:, :, np.newaxis]
    lab = to_lab(image)
    lightness = to_uint8(lab[..., 0] * 255.0 / 100.0)
    lab[..., 0] = clahe_channel(lightness, cfg).astype(np.float64) * 100.0 / 255.0
    return from_lab(lab)


# ---[ RESAMPLING ]---

def _resize_axis(in_length, out_length):
    src = (np.arange(out_length) + 0.5) * (in_length / out_length) - 0.5
    src = np.clip(src, 0.0, in_length - 1)
    lower = np.floor(src).astype(np.intp)
    upper = np.minimum(lower + 1, in_length - 1)
    return lower, upper, src - lower


def resize_bilinear_float(values, out_h, out_w):
    """Half-pixel bilinear resize of a real-valued ``(h, w)`` or ``(h, w, c)`` array."""
    if out_h < 1 or out_w < 1:
        raise ImageSizeException("Output size must be positive, got %dx%d" % (out_w, out_h))
    values = np.asarray(values, dtype=np.float64)
    y0, y1, wy = _resize_axis(values.shape[0], out_h)
    x0, x1, wx = _resize_axis(values.shape[1], out_w)
    extra = (np.newaxis,) * (values.ndim - 2)
    top, bottom = values[y0], values[y1]
    rows = top + wy[(slice(None), np.newaxis) + extra] * (bottom - top)
    left, right = rows[:, x0], rows[:, x1]
    return left + wx[(np.newaxis, slice(None)) + extra] * (right - left)


def resize_bilinear(image, out_h, out_w):
    """Half-pixel bilinear resize of a uint8 image."""
    image = as_image(image)
    if image.shape[:2] == (out_h, out_w):
        return image.copy()
    return to_uint8(resize_bilinear_float(image, out_h, out_w))


# ---[ GEOMETRY ]---

def hflip(image):
    return as_image(image)[:, ::-1].copy()


def rotate90(image, direction=Constants.CW):
    """Rotate by a quarter turn, ``'cw'`` or ``'ccw'``; an exact pixel permutation."""
    if direction not in (Constants.CW, Constants.CCW):
        raise ValueError("Rotation direction must be 'cw' or 'ccw', got %r" % direction)
    k = -1 if direction == Constants.CW else 1
    return np.ascontiguousarray(np.rot90(as_image(image), k=k, axes=(0, 1)))


def _sample_bilinear(image, src_y, src_x):
    """Sample ``image`` at real coordinates, reading black outside the image."""
    height, width = image.shape[:2]
    data = image.astype(np.float64)
    y0 = np.floor(src_y).astype(np.intp)
    x0 = np.floor(src_x).astype(np.intp)
    wy = (src_y - y0)[..., np.newaxis]
    wx = (src_x - x0)[..., np.newaxis]

    def gather(rows, cols):
        inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        picked = data[np.clip(rows, 0, height - 1), np.clip(cols, 0, width - 1)]
        return picked * inside[..., np.newaxis]

    top_left, top_right = gather(y0, x0), gather(y0, x0 + 1)
    bottom_left, bottom_right = gather(y0 + 1, x0), gather(y0 + 1, x0 + 1)
    top = top_left + wx * (top_right - top_left)
    bottom = bottom_left + wx * (bottom_right - bottom_left)
    return to_uint8(top + wy * (bottom - top))


def _centered_grid(image):
    height, width = image.shape[:2]
    rows, cols = np.meshgrid(
        np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing='ij')
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    return rows - cy, cols - cx, cy, cx


def rotate_small(image, degrees):
    """Rotate by ``degrees`` in ``[-45, 45]`` around the centre (positive is clockwise)."""
    if not -45.0 <= degrees <= 45.0:
        raise ValueError("Small rotations must lie within [-45, 45] degrees, got %r" % degrees)
    image = as_image(image)
    dy, dx, cy, cx = _centered_grid(image)
    theta = math.radians(degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    src_x = cos * dx + sin * dy + cx
    src_y = -sin * dx + cos * dy + cy
    return _sample_bilinear(image, src_y, src_x)


def translate(image, dx_frac, dy_frac):
    """Shift content right by ``dx_frac * width`` and down by ``dy_frac * height`` pixels."""
    image = as_image(image)
    height, width = image.shape[:2]
    rows, cols = np.meshgrid(
        np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing='ij')
    return _sample_bilinear(image, rows - dy_frac * height, cols - dx_frac * width)


def zoom(image, scale):
    """Magnify by ``scale`` around the centre; values below 1 shrink and pad with black."""
    if not scale > 0:
        raise ValueError("Zoom scale must be positive, got %r" % scale)
    image = as_image(image)
    dy, dx, cy, cx = _centered_grid(image)
    return _sample_bilinear(image, dy / scale + cy, dx / scale + cx)


def adjust_contrast(image, factor):
    """Scale deviations from the per-channel mean: ``p -> mean + factor * (p - mean)``."""
    if not factor > 0:
        raise ValueError("Contrast factor must be positive, got %r" % factor)
    image = as_image(image)
    if factor == 1.0:
        return image.copy()
    data = image.astype(np.float64)
    channel_mean = data.mean(axis=(0, 1), keepdims=True)
    return to_uint8(channel_mean + factor * (data - channel_mean))


# ---[ OVERLAYS ]---

def jet(values):
    """Map values in ``[0, 1]`` to RGB in ``[0, 1]`` (see the module notes)."""
    values = np.asarray(values, dtype=np.float64)
    red = np.clip(1.5 - np.abs(4.0 * values - 3.0), 0.0, 1.0)
    green = np.clip(1.5 - np.abs(4.0 * values - 2.0), 0.0, 1.0)
    blue = np.clip(1.5 - np.abs(4.0 * values - 1.0), 0.0, 1.0)
    return np.stack([red, green, blue], axis=-1)


def overlay_heatmap(image, heatmap, alpha=0.45):
    """Blend ``jet(heatmap)`` over ``image``: ``(1 - alpha) * image + alpha * jet``.

    :param image: uint8 image; grayscale is expanded to RGB unless
        ``alpha`` is 0, which returns a copy of the image unchanged.
    :param heatmap: Real ``(h, w)`` map in ``[0, 1]``, resized bilinearly when
        its size differs from the image.
    :param float alpha: Heatmap opacity in ``[0, 1]``.
    :return: uint8 image.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("Overlay opacity must lie in [0, 1], got %r" % alpha)
    if alpha == 0.0:
        return as_image(image).copy()
    image = ensure_channels(image, 3)
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if heatmap.shape != image.shape[:2]:
        heatmap = resize_bilinear_float(heatmap, image.shape[0], image.shape[1])
    colors = jet(np.clip(heatmap, 0.0, 1.0)) * 255.0
    return to_uint8((1.0 - alpha) * image.astype(np.float64) + alpha * colors)


def side_by_side(left, right):
    """Place two images of equal height next to each other (RGB output)."""
    left, right = ensure_channels(left, 3), ensure_channels(right, 3)
    if left.shape[0] != right.shape[0]:
        right = resize_bilinear(right, left.shape[0], right.shape[1])
    return np.concatenate([left, right], axis=1)


def montage(rows, tile=64, gap=2):
    """Lay out rows of images as one RGB grid.

    :param rows: Sequence of rows, each a sequence of uint8 images. Every
        image is resized to ``tile`` x ``tile``; short rows leave black cells.
    :param int tile: Cell side in pixels.
    :param int gap: Black border between cells.
    :return: RGB uint8 image.
    """
    if tile < 1 or gap < 0:
        raise ValueError("Montage needs tile >= 1 and gap >= 0, got %r and %r" % (tile, gap))
    columns = max((len(row) for row in rows), default=0)
    if not columns:
        raise ValueError("Montage needs at least one image")
    step = tile + gap
    grid = np.zeros((len(rows) * step - gap, columns * step - gap, 3), dtype=np.uint8)
    for row_index, row in enumerate(rows):
        for col_index, image in enumerate(row):
            cell = ensure_channels(resize_bilinear(image, tile, tile), 3)
            top, left = row_index * step, col_index * step
            grid[top:top + tile, left:left + tile] = cell
    return grid
