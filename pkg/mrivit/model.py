"""Vision Transformer with attention capture.

The layout follows ViT-B/16: the image is cut into non-overlapping patches,
each flattened patch is projected linearly to a token, a learnable CLS token
is prepended and positional embeddings are added. Pre-norm encoder blocks
follow::

    x = x + MHSA(LN1(x))
    x = x + MLP(LN2(x))        MLP = Linear -> GELU -> Linear

then a final LayerNorm. The CLS vector feeds the classification head
``Linear(head_hidden) -> GELU -> Dropout(0.3) -> Linear(num_classes)``.
Dropout only exists in the head and is the identity in eval mode.

Weights are stored ``(in_features, out_features)`` so that a linear layer is
``x @ weight + bias``.
"""
from collections import OrderedDict, namedtuple
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .constants import Constants
from .exceptions import ContractException, DimensionException, ImproperlyConfigured
from .tensor import (
    FLOAT32,
    Tensor,
    add,
    concat,
    dropout,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    select,
    softmax,
    transpose,
)

INIT_STD = 0.02

ForwardResult = namedtuple('ForwardResult', ['logits', 'attention', 'leaves'])


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 3
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_dim: int = 3072
    head_hidden: int = 256
    head_dropout: float = 0.3
    num_classes: int = Constants.NUM_CLASSES

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ImproperlyConfigured(
                "image_size %d is not divisible by patch_size %d"
                % (self.image_size, self.patch_size))
        if self.embed_dim % self.num_heads:
            raise ImproperlyConfigured(
                "embed_dim %d is not divisible by num_heads %d"
                % (self.embed_dim, self.num_heads))
        if self.channels not in (1, 3):
            raise ImproperlyConfigured("channels must be 1 or 3, got %r" % self.channels)
        if not 0.0 <= self.head_dropout < 1.0:
            raise ImproperlyConfigured(
                "head_dropout must lie in [0, 1), got %r" % self.head_dropout)

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def grid_size(self):
        return self.image_size // self.patch_size

    @property
    def num_patches(self):
        return self.grid_size ** 2

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    @classmethod
    def preset(cls, name, **overrides):
        """Return the ``vit_b16`` (full-size) or ``tiny`` (desk-scale) configuration."""
        if name == Constants.PRESET_VIT_B16:
            return replace(cls(), **overrides)
        if name == Constants.PRESET_TINY:
            tiny = dict(image_size=32, patch_size=8, embed_dim=16, depth=2, num_heads=2,
                        mlp_dim=32, head_hidden=8)
            tiny.update(overrides)
            return cls(**tiny)
        raise ImproperlyConfigured(
            "Unknown model preset %r, expected %s or %s"
            % (name, Constants.PRESET_VIT_B16, Constants.PRESET_TINY))

    def to_text(self):
        return ''.join('%s=%r\n' % (key, value) for key, value in asdict(self).items())

    @classmethod
    def from_text(cls, text):
        types = {item.name: item.type for item in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition('=')
            if key not in types:
                raise ImproperlyConfigured("Unknown model config field %r" % key)
            values[key] = float(raw) if types[key] in (float, 'float') else int(raw)
        return cls(**values)


def param_shapes(cfg):
    """Ordered ``(name, shape)`` pairs of every parameter; the order is stable."""
    dim, hidden = cfg.embed_dim, cfg.mlp_dim
    shapes = [
        ('patch_embed.weight', (cfg.patch_dim, dim)),
        ('patch_embed.bias', (dim,)),
        ('cls_token', (1, dim)),
        ('pos_embed', (cfg.num_patches + 1, dim)),
    ]
    for index in range(cfg.depth):
        prefix = 'blocks.%d.' % index
        shapes += [
            (prefix + 'norm1.gamma', (dim,)),
            (prefix + 'norm1.beta', (dim,)),
            (prefix + 'attn.q.weight', (dim, dim)),
            (prefix + 'attn.q.bias', (dim,)),
            (prefix + 'attn.k.weight', (dim, dim)),
            (prefix + 'attn.k.bias', (dim,)),
            (prefix + 'attn.v.weight', (dim, dim)),
            (prefix + 'attn.v.bias', (dim,)),
            (prefix + 'attn.proj.weight', (dim, dim)),
            (prefix + 'attn.proj.bias', (dim,)),
            (prefix + 'norm2.gamma', (dim,)),
            (prefix + 'norm2.beta', (dim,)),
            (prefix + 'mlp.fc1.weight', (dim, hidden)),
            (prefix + 'mlp.fc1.bias', (hidden,)),
            (prefix + 'mlp.fc2.weight', (hidden, dim)),
            (prefix + 'mlp.fc2.bias', (dim,)),
        ]
    shapes += [
        ('norm.gamma', (dim,)),
        ('norm.beta', (dim,)),
        ('head.fc1.weight', (dim, cfg.head_hidden)),
        ('head.fc1.bias', (cfg.head_hidden,)),
        ('head.fc2.weight', (cfg.head_hidden, cfg.num_classes)),
        ('head.fc2.bias', (cfg.num_classes,)),
    ]
    return shapes


def count_params(cfg):
    return int(sum(np.prod(shape) for _, shape in param_shapes(cfg)))


def is_head(name):
    return name.startswith(Constants.HEAD_PREFIX)


class ViTParams:
    """All learnable arrays of a model, keyed by name in :func:`param_shapes` order."""
    def __init__(self, config, arrays):
        arrays = OrderedDict(arrays)
        expected = param_shapes(config)
        if [name for name, _ in expected] != list(arrays):
            raise ContractException("Parameter names do not match the model configuration")
        for name, shape in expected:
            if tuple(arrays[name].shape) != tuple(shape):
                raise DimensionException(
                    "Parameter %s has shape %s, expected %s"
                    % (name, arrays[name].shape, shape))
        self.config = config
        self.arrays = OrderedDict(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def names(self):
        return list(self.arrays)

    def head_names(self):
        return [name for name in self.arrays if is_head(name)]

    def backbone_names(self):
        return [name for name in self.arrays if not is_head(name)]

    def count(self):
        return int(sum(array.size for array in self.arrays.values()))

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def copy(self):
        return ViTParams(self.config, [(name, array.copy()) for name, array in self.items()])

    def astype(self, dtype):
        return ViTParams(
            self.config, [(name, array.astype(dtype)) for name, array in self.items()])


def _truncated_normal(rng, shape, std):
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2.0 * std
    while np.any(outside):
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2.0 * std
    return values


def init_params(cfg, rng, dtype=FLOAT32):
    """Draw fresh parameters.

    Weights follow N(0, 0.02^2) truncated at two standard deviations, biases
    start at zero, the CLS token and positional embeddings follow N(0, 0.02^2)
    and LayerNorm starts as the identity (gamma 1, beta 0).
    """
    arrays = []
    for name, shape in param_shapes(cfg):
        if name.endswith('.gamma'):
            value = np.ones(shape)
        elif name.endswith('.beta') or name.endswith('.bias'):
            value = np.zeros(shape)
        elif name in ('cls_token', 'pos_embed'):
            value = rng.normal(0.0, INIT_STD, size=shape)
        else:
            value = _truncated_normal(rng, shape, INIT_STD)
        arrays.append((name, value.astype(dtype)))
    return ViTParams(cfg, arrays)


def patchify_batch(images, patch_size):
    """Cut ``(B, C, H, W)`` images into ``(B, N, C * P * P)`` patch rows.

    Patches are ordered row-major from the top-left; inside a row the values
    are channel-major, then row-major within the patch.
    """
    batch, channels, height, width = images.shape
    if height % patch_size or width % patch_size:
        raise DimensionException(
            "Image %dx%d is not divisible into %dx%d patches"
            % (height, width, patch_size, patch_size))
    rows, cols = height // patch_size, width // patch_size
    patches = images.reshape(batch, channels, rows, patch_size, cols, patch_size)
    patches = patches.transpose(0, 2, 4, 1, 3, 5)
    return patches.reshape(batch, rows * cols, channels * patch_size * patch_size)


def patchify(image, patch_size):
    """Patch rows of a single ``(C, H, W)`` image."""
    return patchify_batch(np.asarray(image)[np.newaxis], patch_size)[0]


class AttentionTrace:
    """Post-softmax attention weights captured layer by layer.

    ``layers[l]`` is shaped ``(B, heads, N + 1, N + 1)`` for a batch trace, or
    ``(heads, N + 1, N + 1)`` for a single sample (see :meth:`sample`).
    """
    def __init__(self, layers):
        self.layers = list(layers)

    def __len__(self):
        return len(self.layers)

    def sample(self, index):
        return AttentionTrace(layer[index] for layer in self.layers)


def _linear(x, leaves, prefix):
    return add(matmul(x, leaves[prefix + '.weight']), leaves[prefix + '.bias'])


def _attention(x, leaves, prefix, cfg, captured):
    batch, tokens, dim = x.shape
    heads, head_dim = cfg.num_heads, cfg.head_dim

    def split_heads(projected, axes):
        return transpose(reshape(projected, (batch, tokens, heads, head_dim)), axes)

    query = split_heads(_linear(x, leaves, prefix + '.q'), (0, 2, 1, 3))
    key_t = split_heads(_linear(x, leaves, prefix + '.k'), (0, 2, 3, 1))
    value = split_heads(_linear(x, leaves, prefix + '.v'), (0, 2, 1, 3))
    scores = scale(matmul(query, key_t), 1.0 / np.sqrt(head_dim))
    weights = softmax(scores, axis=-1)
    if captured is not None:
        captured.append(weights.data.copy())
    context = transpose(matmul(weights, value), (0, 2, 1, 3))
    return _linear(reshape(context, (batch, tokens, dim)), leaves, prefix + '.proj')


def forward(params, images, mode=Constants.MODE_EVAL, capture_attention=False, rng=None,
            trainable=False):
    """Run the model on a batch.

    :param params: :class:`ViTParams`.
    :param images: ``(B, C, H, W)`` array in [0, 1]; cast to the parameter dtype.
    :param str mode: ``'train'`` enables head dropout, ``'eval'`` disables it.
    :param bool capture_attention: Record every layer's attention weights.
    :param rng: Generator for the dropout mask (required in train mode).
    :param bool trainable: Wrap parameters as trainable leaves so that
        :func:`~mrivit.tensor.backward` fills their gradients.
    :return: ``ForwardResult(logits, attention, leaves)``; ``attention`` is an
        :class:`AttentionTrace` or ``None`` and ``leaves`` maps parameter
        names to the tensors used.
    """
    cfg = params.config
    images = np.asarray(images)
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise DimensionException(
            "Expected images shaped (B, %d, %d, %d), got %s" % (expected + (images.shape,)))
    if mode not in (Constants.MODE_TRAIN, Constants.MODE_EVAL):
        raise ContractException("Unknown mode %r" % mode)
    if mode == Constants.MODE_TRAIN and cfg.head_dropout > 0 and rng is None:
        raise ContractException("Train-mode forward needs a generator for dropout")

    dtype = params.dtype
    leaves = OrderedDict(
        (name, Tensor(array, requires_grad=trainable)) for name, array in params.items())
    batch = images.shape[0]
    patches = Tensor(patchify_batch(images.astype(dtype), cfg.patch_size))
    tokens = _linear(patches, leaves, 'patch_embed')
    cls = add(Tensor(np.zeros((batch, 1, cfg.embed_dim), dtype=dtype)), leaves['cls_token'])
    x = add(concat([cls, tokens], axis=1), leaves['pos_embed'])

    captured = [] if capture_attention else None
    for index in range(cfg.depth):
        prefix = 'blocks.%d' % index
        normed = layer_norm(x, leaves[prefix + '.norm1.gamma'], leaves[prefix + '.norm1.beta'])
        x = add(x, _attention(normed, leaves, prefix + '.attn', cfg, captured))
        normed = layer_norm(x, leaves[prefix + '.norm2.gamma'], leaves[prefix + '.norm2.beta'])
        hidden = gelu(_linear(normed, leaves, prefix + '.mlp.fc1'))
        x = add(x, _linear(hidden, leaves, prefix + '.mlp.fc2'))

    x = layer_norm(x, leaves['norm.gamma'], leaves['norm.beta'])
    features = select(x, 0, axis=1)
    hidden = gelu(_linear(features, leaves, 'head.fc1'))
    if mode == Constants.MODE_TRAIN:
        hidden = dropout(hidden, cfg.head_dropout, rng)
    logits = _linear(hidden, leaves, 'head.fc2')
    attention = AttentionTrace(captured) if capture_attention else None
    return ForwardResult(logits, attention, leaves)


def gradients(leaves):
    """Collect ``{name: grad}`` after backward; untouched leaves get zeros."""
    return OrderedDict(
        (name, leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in leaves.items())
