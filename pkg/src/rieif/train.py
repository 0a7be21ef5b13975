"""Hybrid scale+shape objective and the full training loop.

Supervision touches only protocol-masked cells: the loss multiplies by
the blind-spot indicator, so gradients at observed indices are exactly
zero.  Training masks are resampled every epoch from per-epoch seeds;
validation masks are fixed once per run and drive early stopping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rieif import dataio, kgraph, maskproto, model
from rieif import ndgrad as ng
from rieif.util import derive_rng


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    lambda_scale: float = 1.0
    lambda_shape: float = 1.0
    base_lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 15
    batch_size: int = 32
    weight_decay: float = 1e-5
    clip_norm: float = 5.0
    seed: int = 0
    train_frac: float = 0.8
    val_frac: float = 0.125  # carved from the training portion

    def validate(self):
        if self.lambda_scale < 0 or self.lambda_shape < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lambda_scale + self.lambda_shape <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.base_lr <= 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("bad optimizer settings")
        return self


@dataclass
class MaskProtocol:
    """Blind-spot sampling parameters shared by training and evaluation."""

    i_star: int
    rho: float = 0.4
    block_len: int = 32


def hybrid_loss(x_hat, x_gt, lambda_scale=1.0, lambda_shape=1.0, eps=1e-8):
    """lambda_scale * MSE + lambda_shape * (1 - cosine) on gathered values."""
    gt = np.asarray(x_gt, dtype=np.float64)
    if gt.size < 1:
        raise ValueError("empty target index set")
    pred = ng._as_tensor(x_hat)
    if pred.data.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.data.shape} != target {gt.shape}")
    diff = ng.add(pred, ng.Tensor(-gt))
    mse = ng.tmean(ng.square(diff))
    dot = ng.tsum(ng.mul(pred, ng.Tensor(gt)))
    norms = ng.mul(ng.sqrt(ng.tsum(ng.square(pred))), ng.Tensor(np.linalg.norm(gt)))
    cosine = ng.div_eps(dot, norms, eps)
    shape_term = ng.add(ng.Tensor(np.ones(())), ng.scale(cosine, -1.0))
    return ng.add(ng.scale(mse, lambda_scale), ng.scale(shape_term, lambda_shape))


def masked_hybrid_loss(pred, gt, sup, lambda_scale=1.0, lambda_shape=1.0, eps=1e-8):
    """Same objective expressed through a 0/1 supervision mask.

    Exactly equals ``hybrid_loss`` on the gathered entries (masked-out
    cells contribute zero to every term), and keeps gradients at
    unsupervised indices identically zero.
    """
    n_tar = float(sup.sum())
    if n_tar < 1:
        raise ValueError("empty target index set")
    sup_t = ng.Tensor(sup)
    masked_pred = ng.mul(pred, sup_t)
    masked_gt = np.asarray(gt) * sup
    diff = ng.add(masked_pred, ng.Tensor(-masked_gt))
    mse = ng.scale(ng.tsum(ng.square(diff)), 1.0 / n_tar)
    dot = ng.tsum(ng.mul(masked_pred, ng.Tensor(masked_gt)))
    norms = ng.mul(
        ng.sqrt(ng.tsum(ng.square(masked_pred))), ng.Tensor(np.linalg.norm(masked_gt))
    )
    cosine = ng.div_eps(dot, norms, eps)
    shape_term = ng.add(ng.Tensor(np.ones(())), ng.scale(cosine, -1.0))
    return ng.add(ng.scale(mse, lambda_scale), ng.scale(shape_term, lambda_shape))


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    """Standardized panel with its split ranges (statistics fit on train)."""

    panel: dataio.StandardizedPanel
    train_range: tuple
    val_range: tuple
    test_range: tuple


def prepare_panel(raw_panel, config, seg_len):
    t_total = raw_panel.values.shape[1]
    trainval, test = dataio.chronological_split(t_total, config.train_frac, min_len=seg_len)
    val_len = int(round(config.val_frac * (trainval[1] - trainval[0])))
    train_range = (trainval[0], trainval[1] - val_len)
    val_range = (trainval[1] - val_len, trainval[1])
    if train_range[1] - train_range[0] < seg_len or val_len < seg_len:
        raise ValueError("training or validation range shorter than one segment")
    panel = dataio.zscore_standardize(raw_panel, train_range)
    return PreparedData(panel, train_range, val_range, test_range=test)


def _batch_arrays(panel, segments, masks, config, noise=None):
    """Model inputs for a batch of (segment, mask) pairs.

    Returns X (B, T, N, K), ground truth (B, T, N) and the supervision
    indicator (B, T, N).  ``noise`` perturbs model inputs only.
    """
    xs, gts, sups = [], [], []
    y_in = panel.Y if noise is None else panel.Y + noise
    for seg, mask in zip(segments, masks):
        xs.append(
            dataio.segment_phase_tensor(y_in, mask.M, seg, config.emb_dim, config.delay)
        )
        window = slice(seg.start, seg.stop)
        gts.append(panel.Y[:, window].T)
        sups.append(mask.blind[:, window].T.astype(np.float64))
    return np.stack(xs), np.stack(gts), np.stack(sups)


def _sample_masks(panel, segments, protocol, proxies, seed, label, epoch=0):
    masks = []
    for seg in segments:
        mask_seed = int(
            derive_rng(seed, label, epoch, seg.start).integers(0, 2**62)
        )
        masks.append(
            maskproto.sample_blind_spot_mask(
                panel,
                protocol.i_star,
                protocol.rho,
                protocol.block_len,
                mask_seed,
                place_range=(seg.start, seg.stop),
                proxies=proxies,
            )
        )
    return masks


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def train(raw_panel, graph, protocol, model_config, train_config, stride=None):
    """Fit the model under the blind-spot protocol.

    Returns (best_params, history, info); history rows are dicts with
    epoch, train_loss, val_loss, lr.  Deterministic for a fixed seed.
    """
    train_config.validate()
    model_config.validate()
    seg_len = model_config.seg_len
    stride = seg_len if stride is None else stride
    data = prepare_panel(raw_panel, train_config, seg_len)
    panel = data.panel

    att_mask = kgraph.attention_mask_matrix(graph)
    lap_pe = kgraph.laplacian_positional_encoding(graph, model_config.d_pe)
    proxies = maskproto.select_proxies(
        panel, data.train_range, protocol.i_star, protocol.rho
    )

    train_segments = dataio.make_segments(data.train_range, seg_len, stride)
    val_segments = dataio.make_segments(data.val_range, seg_len, seg_len)
    if not train_segments or not val_segments:
        raise ValueError("need at least one training and one validation segment")
    val_masks = _sample_masks(
        panel, val_segments, protocol, proxies, train_config.seed, "val-mask"
    )
    val_x, val_gt, val_sup = _batch_arrays(panel, val_segments, val_masks, model_config)

    params = model.init_params(model_config, train_config.seed)
    opt = ng.adamw_init(
        params, train_config.base_lr, weight_decay=train_config.weight_decay
    )

    def loss_program(tensors, x, gt, sup):
        pred = model.forward_batch(tensors, x, att_mask, lap_pe, model_config)
        return masked_hybrid_loss(
            pred, gt, sup, train_config.lambda_scale, train_config.lambda_shape
        )

    best = {k: v.copy() for k, v in params.items()}
    best_val = np.inf
    since_improve = 0
    history = []

    for epoch in range(train_config.max_epochs):
        lr = ng.cosine_lr(train_config.base_lr, epoch, train_config.max_epochs)
        opt.learning_rate = lr
        order = derive_rng(train_config.seed, "shuffle", epoch).permutation(
            len(train_segments)
        )
        masks = _sample_masks(
            panel, train_segments, protocol, proxies, train_config.seed,
            "train-mask", epoch,
        )
        epoch_losses = []
        for lo in range(0, len(order), train_config.batch_size):
            idx = order[lo:lo + train_config.batch_size]
            segs = [train_segments[i] for i in idx]
            batch_masks = [masks[i] for i in idx]
            x, gt, sup = _batch_arrays(panel, segs, batch_masks, model_config)
            if sup.sum() < 1:
                continue
            loss, grads = ng.evaluate_with_gradients(
                lambda t: loss_program(t, x, gt, sup), params
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}",
                    {"epoch": epoch, "batch_start": int(lo), "history": history},
                )
            grads = ng.clip_grad_norm(grads, train_config.clip_norm)
            params, opt = ng.adamw_step(opt, params, grads)
            epoch_losses.append(loss)

        val_loss = ng.evaluate(
            lambda t: loss_program(t, val_x, val_gt, val_sup), params
        )
        if not np.isfinite(val_loss):
            raise TrainingDiverged(
                f"non-finite validation loss at epoch {epoch}",
                {"epoch": epoch, "history": history},
            )
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else np.nan,
                "val_loss": val_loss,
                "lr": lr,
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best = {k: v.copy() for k, v in params.items()}
            since_improve = 0
        else:
            since_improve += 1
            if since_improve > train_config.patience:
                break

    info = {
        "proxies": list(proxies),
        "best_val_loss": best_val,
        "train_range": data.train_range,
        "val_range": data.val_range,
        "test_range": data.test_range,
        "epochs_run": len(history),
    }
    return best, history, info


def predict_masked(params, model_config, panel, segment, mask, att_mask, lap_pe, noise=None):
    """Predictions exactly at the masked cells of one segment.

    Returns [((node, t), x_hat_zscored), ...] sorted by index; use
    ``panel.destandardize`` for raw units.
    """
    x, _, _ = _batch_arrays(panel, [segment], [mask], model_config, noise=noise)
    pred = model.forward_batch(params, x, att_mask, lap_pe, model_config).data[0]
    out = []
    for i, t in maskproto.target_index_set(mask):
        if segment.start <= t < segment.stop:
            out.append(((i, t), float(pred[t - segment.start, i])))
    return out
