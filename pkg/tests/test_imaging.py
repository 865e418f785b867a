import unittest

import numpy as np
import pytest

from mrivit.exceptions import ImageFormatException, ImageSizeException, MissingImageException
from mrivit.imaging import (
    ClaheConfig,
    adjust_contrast,
    as_image,
    clahe,
    ensure_channels,
    from_lab,
    hflip,
    jet,
    load_image,
    montage,
    overlay_heatmap,
    resize_bilinear,
    rotate90,
    rotate_small,
    save_png,
    side_by_side,
    to_lab,
    to_uint8,
    translate,
    zoom,
)

from . import pattern_image


def random_image(shape, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=shape, dtype=np.uint8)


class TestImageFiles(unittest.TestCase):
    def test_as_image_adds_channel_axis(self):
        assert as_image(np.zeros((4, 5), dtype=np.uint8)).shape == (4, 5, 1)

    def test_as_image_rejects_float(self):
        with pytest.raises(ImageFormatException):
            as_image(np.zeros((4, 4), dtype=np.float32))

    def test_as_image_rejects_four_channels(self):
        with pytest.raises(ImageFormatException):
            as_image(np.zeros((4, 4, 4), dtype=np.uint8))


def test_png_keeps_pixels_and_channels(tmpdir):
    gray = random_image((7, 9, 1))
    rgb = random_image((6, 5, 3), seed=1)
    save_png(gray, str(tmpdir.join('gray.png')))
    save_png(rgb, str(tmpdir.join('sub', 'rgb.png')))
    np.testing.assert_array_equal(load_image(str(tmpdir.join('gray.png'))), gray)
    np.testing.assert_array_equal(load_image(str(tmpdir.join('sub', 'rgb.png'))), rgb)


def test_png_output_is_byte_stable(tmpdir):
    image = pattern_image(2, 16)
    first, second = str(tmpdir.join('a.png')), str(tmpdir.join('b.png'))
    save_png(image, first)
    save_png(image, second)
    with open(first, 'rb') as a, open(second, 'rb') as b:
        assert a.read() == b.read()


def test_missing_image(tmpdir):
    with pytest.raises(MissingImageException):
        load_image(str(tmpdir.join('nothing.png')))


def test_undecodable_image(tmpdir):
    path = str(tmpdir.join('broken.png'))
    with open(path, 'w') as handle:
        handle.write('not an image')
    with pytest.raises(ImageFormatException):
        load_image(path)


def test_to_uint8_rounds_half_up_and_clamps():
    np.testing.assert_array_equal(to_uint8([0.5, 1.49, 254.5, 255.6, -3.0]), [1, 1, 255, 255, 0])


def test_ensure_channels():
    gray = np.full((2, 2, 1), 7, dtype=np.uint8)
    assert ensure_channels(gray, 3).shape == (2, 2, 3)
    assert np.all(ensure_channels(gray, 3) == 7)
    red = np.zeros((1, 1, 3), dtype=np.uint8)
    red[..., 0] = 255
    assert ensure_channels(red, 1)[0, 0, 0] == 76


class TestColour(unittest.TestCase):
    def test_white_is_full_lightness(self):
        lab = to_lab(np.full((1, 1, 3), 255, dtype=np.uint8))
        np.testing.assert_allclose(lab[0, 0], [100.0, 0.0, 0.0], atol=1e-3)

    def test_lab_round_trip_is_close(self):
        image = random_image((8, 8, 3))
        restored = from_lab(to_lab(image))
        assert np.max(np.abs(restored.astype(int) - image.astype(int))) <= 1

    def test_lab_needs_rgb(self):
        with pytest.raises(ImageFormatException):
            to_lab(np.zeros((2, 2, 1), dtype=np.uint8))


class TestClahe(unittest.TestCase):
    def test_single_tile_without_clipping_is_histogram_equalization(self):
        image = np.arange(256, dtype=np.uint8).reshape(16, 16)
        result = clahe(image, ClaheConfig(tiles_x=1, tiles_y=1, clip_limit=1000.0))
        expected = to_uint8((np.arange(256) + 1) * 255.0 / 256.0).reshape(16, 16, 1)
        np.testing.assert_array_equal(result, expected)

    def test_clipping_redistributes_excess(self):
        # One full bin clipped to twice the mean, the rest spread over every bin.
        black = np.zeros((16, 16), dtype=np.uint8)
        assert np.all(clahe(black, ClaheConfig(tiles_x=1, tiles_y=1)) == 3)
        assert np.all(clahe(black) == 3)

    def test_constant_image_stays_constant(self):
        result = clahe(np.full((40, 24, 1), 90, dtype=np.uint8))
        assert result.shape == (40, 24, 1)
        assert len(np.unique(result)) == 1

    def test_single_tile_mapping_is_monotonic(self):
        image = random_image((20, 20))
        result = clahe(image, ClaheConfig(tiles_x=1, tiles_y=1))[:, :, 0]
        order = np.argsort(image.ravel(), kind='stable')
        assert np.all(np.diff(result.ravel()[order].astype(int)) >= 0)

    def test_rgb_keeps_shape_and_is_deterministic(self):
        image = random_image((24, 32, 3))
        first, second = clahe(image), clahe(image)
        assert first.shape == image.shape
        assert first.dtype == np.uint8
        np.testing.assert_array_equal(first, second)

    def test_gray_rgb_stays_gray(self):
        image = np.repeat(random_image((16, 16, 1)), 3, axis=2)
        result = clahe(image).astype(int)
        assert np.max(np.abs(result[..., 0] - result[..., 1])) <= 1
        assert np.max(np.abs(result[..., 1] - result[..., 2])) <= 1

    def test_image_smaller_than_grid(self):
        with pytest.raises(ImageSizeException):
            clahe(np.zeros((4, 16), dtype=np.uint8))

    def test_config_validation(self):
        with pytest.raises(ImageSizeException):
            ClaheConfig(tiles_x=0)
        with pytest.raises(ValueError):
            ClaheConfig(clip_limit=0.0)
        with pytest.raises(ValueError):
            ClaheConfig(bins=0)


class TestGeometry(unittest.TestCase):
    def test_resize_uses_half_pixel_centres(self):
        image = np.array([[0, 100]], dtype=np.uint8)
        np.testing.assert_array_equal(resize_bilinear(image, 1, 4)[0, :, 0], [0, 25, 75, 100])

    def test_resize_to_same_size_copies(self):
        image = random_image((5, 5, 1))
        result = resize_bilinear(image, 5, 5)
        np.testing.assert_array_equal(result, image)
        assert result is not image

    def test_resize_rejects_empty_output(self):
        with pytest.raises(ImageSizeException):
            resize_bilinear(random_image((4, 4, 1)), 0, 4)

    def test_quarter_turns(self):
        image = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        np.testing.assert_array_equal(rotate90(image, 'cw')[:, :, 0], [[3, 1], [4, 2]])
        np.testing.assert_array_equal(rotate90(image, 'ccw')[:, :, 0], [[2, 4], [1, 3]])
        np.testing.assert_array_equal(rotate90(rotate90(image, 'cw'), 'ccw'), as_image(image))

    def test_quarter_turn_direction_is_checked(self):
        with pytest.raises(ValueError):
            rotate90(random_image((2, 2)), 'left')

    def test_hflip_is_an_involution(self):
        image = random_image((3, 5, 3))
        np.testing.assert_array_equal(hflip(hflip(image)), image)
        np.testing.assert_array_equal(hflip(image)[:, 0], image[:, -1])

    def test_identity_transforms(self):
        image = random_image((9, 9, 1))
        np.testing.assert_array_equal(rotate_small(image, 0.0), image)
        np.testing.assert_array_equal(translate(image, 0.0, 0.0), image)
        np.testing.assert_array_equal(zoom(image, 1.0), image)
        np.testing.assert_array_equal(adjust_contrast(image, 1.0), image)

    def test_small_rotation_range(self):
        with pytest.raises(ValueError):
            rotate_small(random_image((4, 4)), 46.0)

    def test_translate_pads_with_black(self):
        image = np.full((4, 4, 1), 200, dtype=np.uint8)
        shifted = translate(image, 0.25, 0.0)
        assert np.all(shifted[:, 0] == 0)
        assert np.all(shifted[:, 1:] == 200)

    def test_zoom_out_pads_with_black(self):
        image = np.full((8, 8, 1), 200, dtype=np.uint8)
        shrunk = zoom(image, 0.5)
        assert shrunk[0, 0, 0] == 0
        assert shrunk[4, 4, 0] == 200

    def test_contrast_scales_around_the_mean(self):
        image = np.array([[100], [200]], dtype=np.uint8)
        np.testing.assert_array_equal(adjust_contrast(image, 2.0)[:, 0, 0], [50, 250])
        with pytest.raises(ValueError):
            adjust_contrast(image, 0.0)


class TestOverlay(unittest.TestCase):
    def test_jet_control_points(self):
        np.testing.assert_allclose(jet([0.0, 0.5, 1.0]),
                                   [[0.0, 0.0, 0.5], [0.5, 1.0, 0.5], [0.5, 0.0, 0.0]])

    def test_transparent_overlay_keeps_the_image(self):
        for shape in ((6, 6, 1), (6, 6, 3)):
            image = random_image(shape)
            result = overlay_heatmap(image, np.ones((2, 2)), alpha=0.0)
            assert result.shape == shape
            np.testing.assert_array_equal(result, image)
            assert result is not image

    def test_transparent_overlay_of_a_plain_gray_array(self):
        image = random_image((5, 7))
        result = overlay_heatmap(image, np.ones((5, 7)), alpha=0.0)
        np.testing.assert_array_equal(result[:, :, 0], image)
        assert result.shape == (5, 7, 1)

    def test_opaque_overlay_is_the_colormap(self):
        result = overlay_heatmap(random_image((4, 4, 3)), np.zeros((4, 4)), alpha=1.0)
        assert np.all(result[..., 2] == 128)
        assert np.all(result[..., :2] == 0)

    def test_opacity_range(self):
        with pytest.raises(ValueError):
            overlay_heatmap(random_image((4, 4, 1)), np.zeros((4, 4)), alpha=1.5)

    def test_side_by_side(self):
        assert side_by_side(random_image((4, 3, 1)), random_image((4, 5, 3))).shape == (4, 8, 3)

    def test_montage_layout(self):
        rows = [[np.full((10, 10), 7, dtype=np.uint8)],
                [np.tile(np.array([1, 2, 3], dtype=np.uint8), (20, 20, 1)),
                 np.full((6, 8, 1), 200, dtype=np.uint8)]]
        grid = montage(rows, tile=4, gap=1)
        assert grid.shape == (9, 9, 3)
        assert np.all(grid[:4, :4] == 7)
        assert np.all(grid[5:, :4] == [1, 2, 3])
        assert np.all(grid[5:, 5:] == 200)
        assert np.all(grid[:4, 5:] == 0)
        assert np.all(grid[4] == 0) and np.all(grid[:, 4] == 0)

    def test_montage_needs_an_image(self):
        with pytest.raises(ValueError):
            montage([[], []])
        with pytest.raises(ValueError):
            montage([[random_image((4, 4))]], tile=0)


def reference_clahe(image, tiles, clip_limit):
    """Tile-by-tile CLAHE with explicit loops, bilinear between tile centres."""
    height, width = image.shape
    tile_h, tile_w = height // tiles, width // tiles
    tables = {}
    for ty in range(tiles):
        for tx in range(tiles):
            tile = image[ty * tile_h:(ty + 1) * tile_h, tx * tile_w:(tx + 1) * tile_w]
            counts = [int(np.count_nonzero(tile == value)) for value in range(256)]
            threshold = clip_limit * tile.size / 256.0
            excess = sum(max(count - threshold, 0.0) for count in counts)
            running, table = 0.0, []
            for count in counts:
                running += min(count, threshold) + excess / 256.0
                table.append(running * 255.0 / tile.size)
            tables[ty, tx] = table

    def neighbours(position, size):
        offset = (position - (size - 1) / 2.0) / size
        if offset <= 0:
            return 0, 0, 0.0
        if offset >= tiles - 1:
            return tiles - 1, tiles - 1, 0.0
        lower = int(np.floor(offset))
        return lower, lower + 1, offset - lower

    result = np.empty((height, width))
    for y in range(height):
        top, bottom, wy = neighbours(y, tile_h)
        for x in range(width):
            left, right, wx = neighbours(x, tile_w)
            value = image[y, x]
            upper = (1 - wx) * tables[top, left][value] + wx * tables[top, right][value]
            lower = (1 - wx) * tables[bottom, left][value] + wx * tables[bottom, right][value]
            result[y, x] = (1 - wy) * upper + wy * lower
    return result


@pytest.mark.parametrize('clip_limit', [1000.0, 2.0])
def test_clahe_gradient_matches_tile_interpolation(clip_limit):
    ramp = np.arange(64)
    image = (ramp[:, np.newaxis] + 3 * ramp[np.newaxis, :]).astype(np.uint8)
    result = clahe(image, ClaheConfig(tiles_x=2, tiles_y=2, clip_limit=clip_limit))
    expected = reference_clahe(image, 2, clip_limit)
    assert np.max(np.abs(result[:, :, 0] - expected)) <= 0.5 + 1e-9


@pytest.mark.parametrize('clip_limit, dark, bright', [(1000.0, 128, 255), (2.0, 52, 201)])
def test_clahe_two_regions(clip_limit, dark, bright):
    image = np.full((16, 16), 200, dtype=np.uint8)
    image[:, :8] = 50
    result = clahe(image, ClaheConfig(tiles_x=1, tiles_y=1, clip_limit=clip_limit))[:, :, 0]
    assert np.all(result[:, :8] == dark)
    assert np.all(result[:, 8:] == bright)
