"""Pure NumPy implementations of the hot inner-loop kernels.

These are the fallback used when the compiled extension is unavailable
(or when ``RIEIF_PURE_PYTHON=1``).  Same contracts as ``_ckernels``:
float64 in, float64 out, no mutation of inputs.
"""

import numpy as np

MASK_FILL = -1e30


def softplus(x):
    # max(x,0) + log1p(exp(-|x|)) is stable on both tails
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_grad(x, g):
    return g * sigmoid(x)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y, g):
    return g * y * (1.0 - y)


def tanh_grad(y, g):
    return g * (1.0 - y * y)


def masked_softmax(scores, mask):
    """Row softmax over the last axis with hard masking.

    Excluded logits (mask == 0) get MASK_FILL added before normalization;
    rows with no admissible entry come back all-zero.
    """
    shifted = scores + MASK_FILL * (1.0 - mask)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * mask
    denom = e.sum(axis=-1, keepdims=True)
    return e / np.maximum(denom, 1e-300)


def masked_softmax_grad(probs, g):
    # all-zero rows (fully masked) yield zero gradient automatically
    return probs * (g - (probs * g).sum(axis=-1, keepdims=True))
