"""Kernel backend selection.

The hot inner loop of training is a long chain of small elementwise and
row-softmax kernels; a compiled extension (``rieif._ckernels``) fuses
them into single passes.  When the extension is missing, or when
``RIEIF_PURE_PYTHON=1`` is set, a NumPy fallback with identical
semantics is used instead.  ``BACKEND`` reports which one is active.
"""

import os

import numpy as np

from rieif import _kernels_numpy as _np_impl

_ck = None
if not os.environ.get("RIEIF_PURE_PYTHON"):
    try:
        from rieif import _ckernels as _ck
    except ImportError:
        _ck = None

BACKEND = "cython" if _ck is not None else "numpy"

MASK_FILL = _np_impl.MASK_FILL


def backend_name():
    return BACKEND


def _flat(x):
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1)


def softplus(x):
    if _ck is None:
        return _np_impl.softplus(x)
    return _ck.softplus_flat(_flat(x)).reshape(x.shape)


def softplus_grad(x, g):
    if _ck is None:
        return _np_impl.softplus_grad(x, g)
    return _ck.softplus_grad_flat(_flat(x), _flat(g)).reshape(x.shape)


def sigmoid(x):
    if _ck is None:
        return _np_impl.sigmoid(x)
    return _ck.sigmoid_flat(_flat(x)).reshape(x.shape)


def sigmoid_grad(y, g):
    if _ck is None:
        return _np_impl.sigmoid_grad(y, g)
    return _ck.sigmoid_grad_flat(_flat(y), _flat(g)).reshape(y.shape)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, g):
    if _ck is None:
        return _np_impl.tanh_grad(y, g)
    return _ck.tanh_grad_flat(_flat(y), _flat(g)).reshape(y.shape)


def masked_softmax(scores, mask):
    """Softmax over the last axis restricted to ``mask != 0`` entries.

    Fully masked rows return all-zero weights.  ``mask`` must broadcast
    against ``scores``; the common case is a shared (M, n) mask under
    leading batch/head axes.
    """
    if _ck is not None and scores.ndim >= 2 and mask.shape == scores.shape[-2:]:
        m, n = scores.shape[-2:]
        flat = np.ascontiguousarray(scores, dtype=np.float64).reshape(-1, m, n)
        mask_c = np.ascontiguousarray(mask, dtype=np.float64)
        return _ck.masked_softmax3(flat, mask_c).reshape(scores.shape)
    return _np_impl.masked_softmax(scores, np.broadcast_to(mask, scores.shape).astype(np.float64))


def masked_softmax_grad(probs, g):
    if _ck is None:
        return _np_impl.masked_softmax_grad(probs, g)
    n = probs.shape[-1]
    flat_p = np.ascontiguousarray(probs, dtype=np.float64).reshape(-1, n)
    flat_g = np.ascontiguousarray(g, dtype=np.float64).reshape(-1, n)
    return _ck.masked_softmax_grad2(flat_p, flat_g).reshape(probs.shape)
