import unittest

import numpy as np
import pytest

from mrivit.constants import Constants
from mrivit.exceptions import ContractException, DimensionException, ImproperlyConfigured
from mrivit.model import (
    ViTConfig,
    ViTParams,
    count_params,
    forward,
    gradients,
    param_shapes,
    patchify,
    patchify_batch,
)
from mrivit.rng import stream
from mrivit.tensor import backward
from mrivit.training import smoothed_soft_cross_entropy

from . import randomized, tiny_config, tiny_params


def random_images(cfg, batch=2, seed=0):
    shape = (batch, cfg.channels, cfg.image_size, cfg.image_size)
    return np.random.default_rng(seed).random(shape)


class TestConfig(unittest.TestCase):
    def test_default_is_vit_b16(self):
        cfg = ViTConfig()
        assert (cfg.num_patches, cfg.head_dim, cfg.patch_dim) == (196, 64, 768)
        assert count_params(cfg) == 85996548

    def test_tiny_preset(self):
        cfg = tiny_config()
        assert (cfg.image_size, cfg.patch_size, cfg.embed_dim, cfg.depth) == (32, 8, 16, 2)
        assert cfg.num_patches == 16

    def test_preset_overrides(self):
        assert ViTConfig.preset(Constants.PRESET_VIT_B16, channels=1).channels == 1
        assert tiny_config(depth=3).depth == 3

    def test_unknown_preset(self):
        with pytest.raises(ImproperlyConfigured):
            ViTConfig.preset('vit_l32')

    def test_validation(self):
        with pytest.raises(ImproperlyConfigured):
            ViTConfig(image_size=230)
        with pytest.raises(ImproperlyConfigured):
            ViTConfig(num_heads=7)
        with pytest.raises(ImproperlyConfigured):
            ViTConfig(channels=2)
        with pytest.raises(ImproperlyConfigured):
            ViTConfig(head_dropout=1.0)

    def test_text_form_reads_back(self):
        cfg = tiny_config(head_dropout=0.25)
        assert ViTConfig.from_text(cfg.to_text()) == cfg

    def test_text_form_rejects_unknown_fields(self):
        with pytest.raises(ImproperlyConfigured):
            ViTConfig.from_text('image_size=32\nwidth=4\n')


class TestParams(unittest.TestCase):
    def test_layout_order(self):
        names = [name for name, _ in param_shapes(tiny_config())]
        assert names[:4] == ['patch_embed.weight', 'patch_embed.bias', 'cls_token', 'pos_embed']
        assert names[4] == 'blocks.0.norm1.gamma'
        assert names[-6:] == ['norm.gamma', 'norm.beta', 'head.fc1.weight', 'head.fc1.bias',
                              'head.fc2.weight', 'head.fc2.bias']
        assert len(names) == 4 + 16 * 2 + 6

    def test_init(self):
        params = tiny_params()
        assert params.count() == count_params(params.config)
        assert params.dtype == np.float32
        assert np.all(params['blocks.1.norm2.gamma'] == 1.0)
        assert np.all(params['blocks.1.attn.q.bias'] == 0.0)
        assert np.max(np.abs(params['blocks.0.mlp.fc1.weight'])) <= 0.04
        assert np.std(params['pos_embed']) > 0

    def test_init_is_seeded(self):
        first, second, other = tiny_params(seed=1), tiny_params(seed=1), tiny_params(seed=2)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])
        assert not np.array_equal(first['patch_embed.weight'], other['patch_embed.weight'])

    def test_head_and_backbone_names(self):
        params = tiny_params()
        assert params.head_names() == ['head.fc1.weight', 'head.fc1.bias', 'head.fc2.weight',
                                       'head.fc2.bias']
        assert len(params.backbone_names()) + 4 == len(params)

    def test_copy_is_deep(self):
        params = tiny_params()
        copied = params.copy()
        copied['norm.beta'][...] = 5.0
        assert np.all(params['norm.beta'] == 0.0)

    def test_wrong_shape(self):
        arrays = [(name, np.zeros(shape)) for name, shape in param_shapes(tiny_config())]
        arrays[0] = (arrays[0][0], np.zeros((3, 3)))
        with pytest.raises(DimensionException):
            ViTParams(tiny_config(), arrays)

    def test_wrong_names(self):
        arrays = [(name, np.zeros(shape)) for name, shape in param_shapes(tiny_config())][:-1]
        with pytest.raises(ContractException):
            ViTParams(tiny_config(), arrays)


def test_patch_rows_are_channel_major():
    image = np.arange(32, dtype=np.float64).reshape(2, 4, 4)
    patches = patchify(image, 2)
    assert patches.shape == (4, 8)
    np.testing.assert_array_equal(patches[0], [0, 1, 4, 5, 16, 17, 20, 21])
    np.testing.assert_array_equal(patches[1], [2, 3, 6, 7, 18, 19, 22, 23])
    np.testing.assert_array_equal(patches[2], [8, 9, 12, 13, 24, 25, 28, 29])


def test_patchify_needs_divisible_sides():
    with pytest.raises(DimensionException):
        patchify_batch(np.zeros((1, 1, 6, 6)), 4)


class TestForward(unittest.TestCase):
    def setUp(self):
        self.params = tiny_params()
        self.images = random_images(self.params.config)

    def test_logits_and_attention_shapes(self):
        result = forward(self.params, self.images, capture_attention=True)
        assert result.logits.shape == (2, Constants.NUM_CLASSES)
        assert result.logits.dtype == np.float32
        assert len(result.attention) == 2
        layer = result.attention.layers[0]
        assert layer.shape == (2, 2, 17, 17)
        np.testing.assert_allclose(layer.sum(axis=-1), 1.0, rtol=1e-5)
        assert result.attention.sample(1).layers[0].shape == (2, 17, 17)

    def test_attention_is_not_captured_by_default(self):
        assert forward(self.params, self.images).attention is None

    def test_eval_is_deterministic(self):
        first = forward(self.params, self.images).logits.data
        second = forward(self.params, self.images).logits.data
        np.testing.assert_array_equal(first, second)

    def test_samples_are_independent(self):
        batch = forward(self.params, self.images).logits.data
        single = forward(self.params, self.images[1:]).logits.data
        np.testing.assert_allclose(batch[1], single[0], rtol=1e-5, atol=1e-6)

    def test_train_mode_applies_head_dropout(self):
        params = randomized(self.params)
        eval_logits = forward(params, self.images).logits.data
        train_logits = forward(params, self.images, mode=Constants.MODE_TRAIN,
                               rng=np.random.default_rng(0)).logits.data
        assert not np.allclose(eval_logits, train_logits)

    def test_train_mode_needs_a_generator(self):
        with pytest.raises(ContractException):
            forward(self.params, self.images, mode=Constants.MODE_TRAIN)

    def test_unknown_mode(self):
        with pytest.raises(ContractException):
            forward(self.params, self.images, mode='predict')

    def test_image_shape_is_checked(self):
        with pytest.raises(DimensionException):
            forward(self.params, np.zeros((1, 3, 16, 16)))
        with pytest.raises(DimensionException):
            forward(self.params, np.zeros((3, 32, 32)))

    def test_frozen_leaves_get_no_gradient(self):
        result = forward(self.params, self.images)
        assert all(not leaf.requires_grad for leaf in result.leaves.values())


def _loss(params, images, targets):
    result = forward(params, images, mode=Constants.MODE_TRAIN,
                     rng=stream(7, Constants.STREAM_DROPOUT), trainable=True)
    return smoothed_soft_cross_entropy(result.logits, targets, 0.1), result.leaves


@pytest.mark.parametrize('seed', range(5))
def test_backward_matches_finite_differences(seed):
    params = randomized(tiny_params(seed=seed, dtype=np.float64), seed=seed)
    rng = np.random.default_rng(seed)
    images = random_images(params.config, seed=seed)
    targets = rng.dirichlet(np.ones(Constants.NUM_CLASSES), size=2)

    loss, leaves = _loss(params, images, targets)
    backward(loss)
    analytic = gradients(leaves)

    step = 1e-5
    for name in params:
        array = params[name]
        for flat in rng.choice(array.size, size=min(3, array.size), replace=False):
            index = np.unravel_index(flat, array.shape)
            original = array[index]
            array[index] = original + step
            plus = _loss(params, images, targets)[0].item()
            array[index] = original - step
            minus = _loss(params, images, targets)[0].item()
            array[index] = original
            numeric = (plus - minus) / (2 * step)
            np.testing.assert_allclose(analytic[name][index], numeric, rtol=1e-4, atol=1e-8,
                                       err_msg=name)
