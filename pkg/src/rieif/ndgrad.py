"""Reverse-mode gradient engine on dense float64 arrays.

A ``Tensor`` wraps a NumPy array and records, per forward pass, the
closures needed to backpropagate through the supported primitive set
(matmul, add, elementwise multiply, concatenate, reshape, Softplus,
sigmoid, tanh, L2-normalize, masked softmax, square, sqrt, sum, mean,
epsilon-guarded division).  The tape lives only for one forward/backward
cycle and is dropped with the tensors; a tape is confined to a single
thread.

Also provides the training stack used on top of it: central
finite-difference gradients (the verification oracle), AdamW with
decoupled weight decay, cosine learning-rate decay, and global-norm
gradient clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rieif import kernels as K


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible operand shapes."""

    def __init__(self, op, shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    """A differentiable value: float64 array plus its tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, parents=(), bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, bwd):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, parents=tuple(parents) if rg else (), bwd=bwd if rg else None)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of NumPy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b):
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", (a.shape, b.shape)) from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bwd)


def mul(a, b):
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", (a.shape, b.shape)) from None

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bwd)


def scale(a, s):
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _make(a.data * s, (a,), bwd)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul", (a.shape, b.shape), "operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", (a.shape, b.shape), "inner dimensions differ")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", (a.shape, b.shape)) from None

    def bwd(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), bwd)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", [t.shape for t in tensors]) from None
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _make(data, tuple(tensors), bwd)


def reshape(a, shape):
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", (a.shape, shape)) from None

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), bwd)


def swap_last2(a):
    if a.data.ndim < 2:
        raise ShapeError("swap_last2", (a.shape,), "needs at least 2 axes")

    def bwd(g):
        return (g.swapaxes(-1, -2),)

    return _make(a.data.swapaxes(-1, -2), (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError("transpose", (a.shape,), f"bad permutation {axes}")
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bwd)


def broadcast_to(a, shape):
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", (a.shape, shape)) from None

    def bwd(g):
        return (_unbroadcast(g, a.shape),)

    return _make(data, (a,), bwd)


def narrow(a, start, stop, axis=-1):
    """Contiguous slice [start:stop) along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bwd)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape),)

    return _make(data, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def square(a):
    def bwd(g):
        return (2.0 * a.data * g,)

    return _make(a.data * a.data, (a,), bwd)


def sqrt(a):
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * (0.5 / out),)

    return _make(out, (a,), bwd)


def div_eps(a, b, eps):
    """Elementwise a / (b + eps) with broadcasting."""
    denom = b.data + eps
    try:
        data = a.data / denom
    except ValueError:
        raise ShapeError("div_eps", (a.shape, b.shape)) from None

    def bwd(g):
        ga = _unbroadcast(g / denom, a.shape)
        gb = _unbroadcast(-g * a.data / (denom * denom), b.shape)
        return ga, gb

    return _make(data, (a, b), bwd)


def softplus(a):
    def bwd(g):
        return (K.softplus_grad(a.data, g),)

    return _make(K.softplus(a.data), (a,), bwd)


def sigmoid(a):
    out = K.sigmoid(a.data)

    def bwd(g):
        return (K.sigmoid_grad(out, g),)

    return _make(out, (a,), bwd)


def tanh(a):
    out = K.tanh(a.data)

    def bwd(g):
        return (K.tanh_grad(out, g),)

    return _make(out, (a,), bwd)


def l2_normalize(a, eps=1e-8):
    """Rows (last axis) scaled to unit norm: x / (||x|| + eps)."""
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    denom = norm + eps
    out = a.data / denom

    def bwd(g):
        proj = (a.data * g).sum(axis=-1, keepdims=True)
        return (g / denom - a.data * (proj / (np.maximum(norm, 1e-30) * denom * denom)),)

    return _make(out, (a,), bwd)


def masked_softmax(a, mask):
    """Softmax over the last axis restricted to mask != 0 (mask is constant).

    Excluded logits are pushed to -1e30 before normalization; fully
    masked rows return all-zero weights so the caller can detect
    isolated nodes.
    """
    mask = np.asarray(mask, dtype=np.float64)
    probs = K.masked_softmax(a.data, mask)

    def bwd(g):
        return (K.masked_softmax_grad(probs, g),)

    return _make(probs, (a,), bwd)


# ---------------------------------------------------------------------------
# backward pass & program evaluation
# ---------------------------------------------------------------------------


def backward(out):
    """Accumulate gradients of a scalar tensor into the recorded graph."""
    if out.data.size != 1:
        raise ShapeError("backward", (out.shape,), "output must be scalar")
    topo = []
    visited = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    out.grad = np.ones_like(out.data)
    for node in reversed(topo):
        if node._bwd is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._bwd(node.grad)):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad += g


def evaluate(program, params):
    """Run ``program`` on plain (non-recorded) tensors; return the scalar."""
    out = program({k: Tensor(v) for k, v in params.items()})
    if out.data.size != 1:
        raise ShapeError("program", (out.shape,), "output must be scalar")
    return float(out.data.reshape(()))


def evaluate_with_gradients(program, params):
    """Forward + reverse pass of ``program`` at ``params``.

    ``program`` maps a dict of named Tensors to a scalar Tensor.  Returns
    the loss and a dict of gradients with the same shapes as ``params``
    (zero for parameters the program never touches).
    """
    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    out = program(tensors)
    if out.data.size != 1:
        raise ShapeError("program", (out.shape,), "output must be scalar")
    backward(out)
    grads = {
        k: t.grad if t.grad is not None else np.zeros_like(t.data)
        for k, t in tensors.items()
    }
    return float(out.data.reshape(())), grads


def finite_difference_gradient(program, params, step=1e-5):
    """Central-difference gradient estimate, coordinate by coordinate.

    This is the independent oracle used to verify the reverse pass; it
    never touches the tape.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for k, v in work.items():
        g = np.zeros_like(v)
        flat, gflat = v.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = evaluate(program, work)
            flat[i] = orig - step
            f_minus = evaluate(program, work)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads[k] = g
    return grads


# ---------------------------------------------------------------------------
# optimizer / schedule / clipping
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """AdamW state: per-parameter moments plus hyperparameters."""

    learning_rate: float
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adamw_init(params, learning_rate, weight_decay=1e-5, beta1=0.9, beta2=0.999, epsilon=1e-8):
    state = OptimizerState(learning_rate, weight_decay, beta1, beta2, epsilon)
    state.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
    state.second_moment = {k: np.zeros_like(v) for k, v in params.items()}
    return state


def adamw_step(state, params, grads):
    """One AdamW update; weight decay is decoupled from the moment update."""
    state.step_count += 1
    t = state.step_count
    lr, wd = state.learning_rate, state.weight_decay
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_params = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError("adamw_step", (p.shape, g.shape), f"parameter {k!r}")
        m = state.first_moment[k]
        v = state.second_moment[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[k] = p - lr * wd * p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, state


def cosine_lr(base_lr, epoch, max_epochs):
    """Half-cosine decay from base_lr at epoch 0 to 0 at max_epochs."""
    if not 0 <= epoch <= max_epochs or max_epochs < 1:
        raise ValueError(f"epoch {epoch} outside [0, {max_epochs}]")
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / max_epochs))


def global_grad_norm(grads):
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_grad_norm(grads, max_norm):
    """Scale all gradients so the global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}
