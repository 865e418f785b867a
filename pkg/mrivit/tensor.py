"""Minimal N-dimensional tensor with reverse-mode differentiation.

The module implements exactly the primitive set the Vision Transformer
needs: matmul, add, elementwise multiply, scalar scale, softmax,
log-softmax, layer-norm, GELU, dropout-mask-apply, reshape, transpose,
concatenation, index selection, sum and mean.

Each primitive returns a new :class:`Tensor`. When at least one input is
trainable (``requires_grad``), the output keeps references to its parents and
a closure computing the parents' gradients from its own, so that
:func:`backward` can walk the graph in reverse topological order::

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> loss = tensor_sum(mul(x, x))
    >>> graph = backward(loss)
    >>> x.grad
    array([2., 4.])

Precision follows the inputs: float64 arrays stay float64 (gradient
verification), float32 arrays stay float32 (training runs).
"""
import math

import numpy as np
from scipy.special import erf

from .exceptions import ContractException, DimensionException, NonFiniteException

FLOAT32 = np.float32
FLOAT64 = np.float64

LAYER_NORM_EPS = 1e-6

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A node of the differentiable graph.

    :param data: Array-like values. Integer input is promoted to float64.
    :param bool requires_grad: Mark the tensor as a trainable leaf.
    :param dtype: Optional explicit float dtype.
    """
    __slots__ = ('data', 'grad', 'requires_grad', 'op', '_parents', '_backward')

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None,
                 op='leaf'):
        array = np.asarray(data, dtype=dtype)
        if dtype is None and array.dtype not in (FLOAT32, FLOAT64):
            array = array.astype(FLOAT64)
        if array.ndim == 0:
            array = array.reshape(())
        self.data = array
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractException(
                "Only single-element tensors can be converted to a scalar, got shape %s"
                % (self.shape,))
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return 'Tensor(shape=%s, dtype=%s, op=%s)' % (self.shape, self.dtype, self.op)


def as_tensor(value, dtype=None):
    """Return ``value`` unchanged when already a tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _check_finite(array, op):
    if not np.all(np.isfinite(array)):
        raise NonFiniteException("Non-finite value produced by %s" % op)


def _make(data, parents, backward, op):
    """Build the output node, keeping graph links only when a parent is trainable."""
    _check_finite(data, op)
    if any(parent.requires_grad for parent in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)
    return Tensor(data, op=op)


def unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap_last(array):
    return np.swapaxes(array, -1, -2)


# ---[ PRIMITIVES ]---

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as error:
        raise DimensionException("Cannot add shapes %s and %s: %s" % (a.shape, b.shape, error))

    def backward(grad):
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)
    return _make(data, (a, b), backward, 'add')


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as error:
        raise DimensionException(
            "Cannot multiply shapes %s and %s: %s" % (a.shape, b.shape, error))

    def backward(grad):
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)
    return _make(data, (a, b), backward, 'mul')


def scale(a, factor):
    a = as_tensor(a)
    factor = a.data.dtype.type(factor)
    data = a.data * factor

    def backward(grad):
        return (grad * factor,)
    return _make(data, (a,), backward, 'scale')


def matmul(a, b):
    """Matrix product over the last two axes, batch axes broadcast.

    The gradient rule is ``d/da = g @ b.T`` and ``d/db = a.T @ g``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionException(
            "matmul inner dimensions do not agree: %s x %s" % (a.shape, b.shape))
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as error:
        raise DimensionException(
            "matmul batch dimensions are not broadcastable: %s x %s (%s)"
            % (a.shape, b.shape, error))

    def backward(grad):
        grad_a = np.matmul(grad, _swap_last(b.data))
        grad_b = np.matmul(_swap_last(a.data), grad)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)
    return _make(data, (a, b), backward, 'matmul')


def _normalize_axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise DimensionException("Axis %d is out of bounds for %d dimensions" % (axis, ndim))
    return axis % ndim


def softmax_array(x, axis=-1):
    """Numerically stable softmax on a plain array."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=axis, keepdims=True)


def softmax(x, axis=-1):
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim)
    probs = softmax_array(x.data, axis)

    def backward(grad):
        inner = np.sum(grad * probs, axis=axis, keepdims=True)
        return (probs * (grad - inner),)
    return _make(probs, (x,), backward, 'softmax')


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    data = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def backward(grad):
        return (grad - np.exp(data) * np.sum(grad, axis=axis, keepdims=True),)
    return _make(data, (x,), backward, 'log_softmax')


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    """Normalize over the last axis to zero mean and unit variance, then ``gamma * x + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionException(
            "layer_norm affine shapes %s/%s do not match last axis %d"
            % (gamma.shape, beta.shape, width))
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    normed = centered * inv_std
    data = normed * gamma.data + beta.data

    def backward(grad):
        reduce_axes = tuple(range(grad.ndim - 1))
        grad_gamma = np.sum(grad * normed, axis=reduce_axes)
        grad_beta = np.sum(grad, axis=reduce_axes)
        grad_normed = grad * gamma.data
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True))
        return grad_x, grad_gamma, grad_beta
    return _make(data, (x, gamma, beta), backward, 'layer_norm')


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through ``erf``."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    cdf = cdf.astype(x.dtype, copy=False)
    data = x.data * cdf

    def backward(grad):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (grad * (cdf + x.data * pdf.astype(x.dtype, copy=False)),)
    return _make(data, (x,), backward, 'gelu')


def dropout_mask(shape, rate, rng, dtype=FLOAT64):
    """Inverted-dropout mask: kept entries hold ``1 / (1 - rate)``, dropped ones 0."""
    keep = 1.0 - rate
    kept = rng.random(shape) >= rate
    return (kept / keep).astype(dtype)


def dropout(x, rate, rng):
    """Apply an inverted dropout mask drawn from ``rng``; ``rate == 0`` is the identity."""
    x = as_tensor(x)
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ContractException("Dropout rate must be below 1, got %r" % rate)
    mask = dropout_mask(x.shape, rate, rng, x.dtype)
    data = x.data * mask

    def backward(grad):
        return (grad * mask,)
    return _make(data, (x,), backward, 'dropout')


def reshape(x, shape):
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as error:
        raise DimensionException("Cannot reshape %s to %s: %s" % (x.shape, shape, error))

    def backward(grad):
        return (grad.reshape(x.shape),)
    return _make(data, (x,), backward, 'reshape')


def transpose(x, axes):
    x = as_tensor(x)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionException("Invalid permutation %s for %d axes" % (axes, x.ndim))
    inverse = np.argsort(axes)
    data = np.transpose(x.data, axes)

    def backward(grad):
        return (np.transpose(grad, inverse),)
    return _make(data, (x,), backward, 'transpose')


def concat(tensors, axis):
    tensors = [as_tensor(tensor) for tensor in tensors]
    axis = _normalize_axis(axis, tensors[0].ndim)
    try:
        data = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    except ValueError as error:
        raise DimensionException("Cannot concatenate: %s" % error)
    bounds = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def backward(grad):
        return tuple(np.split(grad, bounds, axis=axis))
    return _make(data, tuple(tensors), backward, 'concat')


def select(x, index, axis):
    """Take position ``index`` along ``axis``, dropping that axis."""
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim)
    data = np.take(x.data, index, axis=axis)

    def backward(grad):
        full = np.zeros_like(x.data)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        full[tuple(slicer)] = grad
        return (full,)
    return _make(data, (x,), backward, 'select')


def tensor_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)
    return _make(np.asarray(data), (x,), backward, 'sum')


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---[ GRAPH ]---

class DifferentiableGraph:
    """Ordered record of the primitive applications leading to an output.

    ``nodes`` is a valid evaluation order (every node appears after its
    parents) and ``leaves`` lists the trainable leaves in first-visit order.
    """
    def __init__(self, nodes):
        self.nodes = nodes
        self.leaves = [node for node in nodes if node.requires_grad and not node._parents]

    @classmethod
    def trace(cls, output):
        """Collect every trainable-dependent node reachable from ``output``."""
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss, graph=None):
    """Back-propagate from the scalar ``loss`` into every trainable leaf.

    :param loss: Scalar :class:`Tensor`.
    :param graph: Optional pre-traced :class:`DifferentiableGraph`.
    :return: The traced graph. Gradients are stored on ``leaf.grad``; leaves
        reached twice accumulate.
    """
    if loss.size != 1:
        raise ContractException("backward expects a scalar loss, got shape %s" % (loss.shape,))
    if graph is None:
        graph = DifferentiableGraph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if not node._parents:
            node.grad = grad if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if not parent.requires_grad or parent_grad is None:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
    return graph


def finite_difference_grad(f, x, h=1e-5, indices=None):
    """Central-difference gradient of the scalar function ``f`` at ``x``.

    :param f: Callable taking an array shaped like ``x`` and returning a
        scalar (a float or a single-element :class:`Tensor`).
    :param x: Evaluation point (array-like, not modified).
    :param float h: Step, must be positive.
    :param indices: Optional iterable of multi-indices to evaluate; the other
        entries of the result are left at zero.
    """
    if h <= 0:
        raise ContractException("Finite-difference step must be positive, got %r" % h)
    point = np.array(x, dtype=FLOAT64, copy=True)
    result = np.zeros_like(point)
    if indices is None:
        indices = np.ndindex(*point.shape)

    def evaluate(value):
        out = f(value)
        return out.item() if isinstance(out, Tensor) else float(out)

    for index in indices:
        original = point[index]
        point[index] = original + h
        upper = evaluate(point)
        point[index] = original - h
        lower = evaluate(point)
        point[index] = original
        result[index] = (upper - lower) / (2.0 * h)
    return result
