"""Dual-stream forward pass over a positivity-preserving latent chart.

Per time step: delay-embedded inputs are lifted through Softplus into a
positive latent cone; a flatten-project-LSTM macro stream produces one
global tangent update; stacked attention layers, masked by the
knowledge graph and scoring on the unit hypersphere, produce per-node
micro tangent updates; a sigmoid gate fuses the two channel-wise and
the result is retracted back to the cone before a linear readout.

All functions here build on the ``ndgrad`` tape, so the same code path
serves inference and training.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from rieif import ndgrad as ng
from rieif.util import derive_rng

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Shapes, geometry constants, and ablation switches."""

    n_nodes: int
    emb_dim: int = 5
    delay: int = 1
    latent_dim: int = 32
    heads: int = 8
    micro_layers: int = 2
    d_pe: int = 16
    seg_len: int = 32
    epsilon: float = 1e-8
    use_head_merge: bool = True
    euclidean_attention: bool = False
    no_macro: bool = False
    no_micro: bool = False
    fixed_gate: bool = False
    node_wise_projection: bool = False

    def validate(self):
        dims = (
            self.n_nodes, self.emb_dim, self.delay, self.latent_dim,
            self.heads, self.micro_layers, self.d_pe, self.seg_len,
        )
        if any(d < 1 for d in dims):
            raise ValueError("all model dimensions must be >= 1")
        if self.latent_dim % self.heads != 0:
            raise ValueError(
                f"latent_dim {self.latent_dim} not divisible by heads {self.heads}"
            )
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        return self

    @property
    def head_dim(self):
        return self.latent_dim // self.heads


def init_params(config, seed):
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

    The LSTM forget-gate bias starts at +1 and the head-merge matrix at
    identity.
    """
    config.validate()
    rng = derive_rng(seed, "init")
    n, k, d = config.n_nodes, config.emb_dim, config.latent_dim
    h, dk, dpe = config.heads, config.head_dim, config.d_pe

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = {
        "W_in": uniform((k, d), k),
        "b_in": np.zeros(d),
        "b_glob": np.zeros(d),
        "lstm.W_x": uniform((d, 4 * d), d),
        "lstm.W_h": uniform((d, 4 * d), d),
        "lstm.b": np.zeros(4 * d),
        "gate.W1": uniform((2 * d, d), 2 * d),
        "gate.b1": np.zeros(d),
        "gate.W2": uniform((d, d), d),
        "gate.b2": np.zeros(d),
        "W_out": uniform((d, 1), d),
        "b_out": np.zeros(1),
    }
    if config.node_wise_projection:
        params["W_glob"] = uniform((k, d), k)
    else:
        params["W_glob"] = uniform((n * k, d), n * k)
    params["lstm.b"][d:2 * d] = 1.0
    for layer in range(config.micro_layers):
        p = f"micro.{layer}."
        params[p + "W_Q"] = uniform((h, d, dk), d)
        params[p + "W_K"] = uniform((h, d, dk), d)
        params[p + "W_V"] = uniform((h, d, dk), d)
        params[p + "W_Qpe"] = uniform((h, dpe, dk), dpe)
        params[p + "W_Kpe"] = uniform((h, dpe, dk), dpe)
        params[p + "W_O"] = np.eye(d)
    return params


def _tensors(params):
    return {k: ng._as_tensor(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# individual stages (each usable on its own; all tape-recorded)
# ---------------------------------------------------------------------------


def lift_nodes(params, x_t):
    """Positive-cone lifting: Softplus(X W_in + b_in), strictly positive."""
    p = _tensors(params)
    return ng.softplus(ng.add(ng.matmul(ng._as_tensor(x_t), p["W_in"]), p["b_in"]))


def spherical_normalize(h, eps=1e-8):
    """Rows onto the (positive) unit hypersphere: h / (||h|| + eps)."""
    return ng.l2_normalize(ng._as_tensor(h), eps)


def fisher_rao_distance(z_a, z_b):
    """2 * arccos(<z_a, z_b>) between unit vectors (diagnostic only)."""
    dot = float(np.dot(np.asarray(z_a, float), np.asarray(z_b, float)))
    return 2.0 * float(np.arccos(np.clip(dot, -1.0, 1.0)))


def macro_carry_init(config, batch):
    shape = (
        (batch, config.n_nodes, config.latent_dim)
        if config.node_wise_projection
        else (batch, config.latent_dim)
    )
    return ng.Tensor(np.zeros(shape)), ng.Tensor(np.zeros(shape))


def lstm_cell(p, x, carry, d):
    """Standard LSTM cell; gate order (input, forget, cell, output)."""
    s_prev, c_prev = carry
    z = ng.add(
        ng.add(ng.matmul(x, p["lstm.W_x"]), ng.matmul(s_prev, p["lstm.W_h"])),
        p["lstm.b"],
    )
    i = ng.sigmoid(ng.narrow(z, 0, d))
    f = ng.sigmoid(ng.narrow(z, d, 2 * d))
    g = ng.tanh(ng.narrow(z, 2 * d, 3 * d))
    o = ng.sigmoid(ng.narrow(z, 3 * d, 4 * d))
    c = ng.add(ng.mul(f, c_prev), ng.mul(i, g))
    s = ng.mul(o, ng.tanh(c))
    return s, (s, c)


def macro_stream_step(params, x_t, carry, config):
    """Global inertia: flatten -> Softplus projection -> LSTM cell.

    The output lives in the tangent chart (sign-free); the caller
    broadcasts it over nodes.  The node-wise-projection ablation swaps
    the global flatten for a per-node map and runs the cell per node.
    """
    p = _tensors(params)
    x_t = ng._as_tensor(x_t)
    batch = x_t.shape[0]
    if config.node_wise_projection:
        glob = x_t  # (B, N, K): local history only
    else:
        glob = ng.reshape(x_t, (batch, config.n_nodes * config.emb_dim))
    h_macro = ng.softplus(ng.add(ng.matmul(glob, p["W_glob"]), p["b_glob"]))
    return lstm_cell(p, h_macro, carry, config.latent_dim)


def micro_stream_layer(params, layer, h_in, lap_pe, att_mask, config):
    """One KG-masked attention layer on the spherical chart.

    Queries/keys come from normalized states plus positional encodings
    and are re-normalized, so scores are cosine similarities; values
    carry the unnormalized positive-cone states.  Returns the tangent
    update and the retracted layer state.
    """
    p = _tensors(params)
    h_in = ng._as_tensor(h_in)
    prefix = f"micro.{layer}."
    batch, n = h_in.shape[0], config.n_nodes
    d, heads, dk = config.latent_dim, config.heads, config.head_dim

    if config.euclidean_attention:
        z = h_in
    else:
        z = ng.l2_normalize(h_in, config.epsilon)
    z4 = ng.reshape(z, (batch, 1, n, d))
    pe = ng._as_tensor(lap_pe)  # (N, d_pe) constant
    q = ng.add(ng.matmul(z4, p[prefix + "W_Q"]), ng.matmul(pe, p[prefix + "W_Qpe"]))
    k = ng.add(ng.matmul(z4, p[prefix + "W_K"]), ng.matmul(pe, p[prefix + "W_Kpe"]))
    if not config.euclidean_attention:
        q = ng.l2_normalize(q, config.epsilon)
        k = ng.l2_normalize(k, config.epsilon)
    scores = ng.scale(ng.matmul(q, ng.swap_last2(k)), 1.0 / np.sqrt(dk))
    alpha = ng.masked_softmax(scores, att_mask)  # (B, H, N, N)

    v = ng.matmul(ng.reshape(h_in, (batch, 1, n, d)), p[prefix + "W_V"])
    mixed = ng.matmul(alpha, v)  # (B, H, N, dk)
    u = ng.reshape(ng.transpose(mixed, (0, 2, 1, 3)), (batch, n, heads * dk))
    if config.use_head_merge:
        u = ng.matmul(u, p[prefix + "W_O"])
    return u, retract(h_in, u), alpha


def geometric_gate_fuse(params, u_micro, u_macro, config):
    """Channel-wise convex fusion of micro and macro tangent updates."""
    p = _tensors(params)
    u_micro = ng._as_tensor(u_micro)
    u_macro = ng._as_tensor(u_macro)
    if config.no_macro and config.no_micro:
        zero = ng.Tensor(np.zeros(u_micro.shape))
        return None, zero
    if config.no_macro:
        return None, u_micro
    if config.no_micro:
        return None, u_macro
    if config.fixed_gate:
        gate = ng.Tensor(np.full(u_micro.shape, 0.5))
    else:
        cat = ng.concat([u_micro, u_macro], axis=-1)
        hidden = ng.softplus(ng.add(ng.matmul(cat, p["gate.W1"]), p["gate.b1"]))
        gate = ng.sigmoid(ng.add(ng.matmul(hidden, p["gate.W2"]), p["gate.b2"]))
    one_minus = ng.add(ng.scale(gate, -1.0), ng.Tensor(np.ones(gate.shape)))
    total = ng.add(ng.mul(gate, u_micro), ng.mul(one_minus, u_macro))
    return gate, total


def retract(h0, u):
    """Positivity-preserving update: Softplus(h0 + u)."""
    return ng.softplus(ng.add(ng._as_tensor(h0), ng._as_tensor(u)))


def readout(params, h_hat):
    """Linear map back to measurement space (full real range)."""
    p = _tensors(params)
    h_hat = ng._as_tensor(h_hat)
    out = ng.add(ng.matmul(h_hat, p["W_out"]), p["b_out"])
    return ng.reshape(out, h_hat.shape[:-1])


def _broadcast_macro(u_macro, batch, n, d, config):
    if config.node_wise_projection:
        return u_macro  # already (B, N, D)
    return ng.broadcast_to(ng.reshape(u_macro, (batch, 1, d)), (batch, n, d))


def forward_batch(params, x, att_mask, lap_pe, config, trace=None):
    """Forward over a batch of segments: x (B, T, N, K) -> (B, T, N).

    The LSTM carry starts at zero per segment.  When ``trace`` is a
    list, per-step state snapshots (plain arrays) are appended to it.
    """
    p = _tensors(params)
    batch, seg_len, n, _ = x.shape
    d = config.latent_dim
    carry = macro_carry_init(config, batch)
    step_preds = []
    for t in range(seg_len):
        x_t = ng.Tensor(x[:, t])
        h0 = lift_nodes(p, x_t)

        if config.no_macro and config.no_micro:
            u_macro_b = None
        elif config.no_macro:
            u_macro_b = None
        else:
            u_macro, carry = macro_stream_step(p, x_t, carry, config)
            u_macro_b = _broadcast_macro(u_macro, batch, n, d, config)

        u_micro = None
        if not config.no_micro:
            h_layer = h0
            for layer in range(config.micro_layers):
                u_micro, h_layer, alpha = micro_stream_layer(
                    p, layer, h_layer, lap_pe, att_mask, config
                )

        if u_micro is None:
            u_micro = ng.Tensor(np.zeros((batch, n, d)))
        if u_macro_b is None:
            u_macro_b = ng.Tensor(np.zeros((batch, n, d)))
        gate, u_total = geometric_gate_fuse(p, u_micro, u_macro_b, config)
        h_hat = retract(h0, u_total)
        x_hat = readout(p, h_hat)
        step_preds.append(ng.reshape(x_hat, (batch, 1, n)))

        if trace is not None:
            trace.append(
                {
                    "H0": h0.data.copy(),
                    "u_macro": u_macro_b.data.copy(),
                    "U_micro": u_micro.data.copy(),
                    "G": None if gate is None else gate.data.copy(),
                    "H_hat": h_hat.data.copy(),
                    "x_hat": x_hat.data.copy(),
                    "alpha": alpha.data.copy() if not config.no_micro else None,
                }
            )
    return ng.concat(step_preds, axis=1)


def forward_segment(params, x, att_mask, lap_pe, config, trace=None):
    """Single-segment forward: x (T, N, K) -> predictions (T, N)."""
    out = forward_batch(params, x[None], att_mask, lap_pe, config, trace=trace)
    return ng.reshape(out, out.shape[1:])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params, config, extra=None):
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "params": {
            k: {"shape": list(v.shape), "data": np.asarray(v).ravel().tolist()}
            for k, v in params.items()
        },
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_checkpoint(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    config = ModelConfig(**doc["config"]).validate()
    params = {
        k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
        for k, v in doc["params"].items()
    }
    return params, config
