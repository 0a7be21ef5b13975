"""Reproducible systemic blind-spot masking.

A blind spot hides a target node together with every node whose
absolute training-split Pearson correlation with it reaches a threshold
(the proxy set), over one contiguous time block.  Masked entries read
as zero to the model; their ground truth stays available for
supervision and scoring.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from rieif.util import derive_rng


@dataclass(frozen=True)
class MaskSet:
    """Missingness pattern over an (N, T) panel; immutable once built."""

    blind: np.ndarray  # bool (N, T): protocol-masked cells
    raw_missing: np.ndarray  # bool (N, T): cells absent at ingestion
    i_star: int
    proxies: tuple
    block: tuple  # (start, stop), half-open
    rho: float
    seed: int = None

    @property
    def M(self):
        """Model-facing mask: protocol blind spot OR raw-missing."""
        return self.blind | self.raw_missing

    @property
    def masked_nodes(self):
        return (self.i_star,) + tuple(self.proxies)


def pearson_corr(a, b, missing_a=None, missing_b=None):
    """Pearson coefficient with pairwise deletion of missing samples.

    Returns 0.0 when either retained series is constant; fewer than two
    retained pairs is an error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"series shapes differ: {a.shape} vs {b.shape}")
    keep = np.ones(a.shape[0], dtype=bool)
    if missing_a is not None:
        keep &= ~np.asarray(missing_a, dtype=bool)
    if missing_b is not None:
        keep &= ~np.asarray(missing_b, dtype=bool)
    a, b = a[keep], b[keep]
    if a.size < 2:
        raise ValueError(f"only {a.size} retained pairs; need at least 2")
    da, db = a - a.mean(), b - b.mean()
    va, vb = (da * da).sum(), (db * db).sum()
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return float(np.clip((da * db).sum() / np.sqrt(va * vb), -1.0, 1.0))


def select_proxies(panel, train_range, i_star, rho):
    """P(i*): nodes j != i* with |corr(j, i*)| >= rho on the training split."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must be in (0, 1]")
    lo, hi = train_range
    target = panel.Y[i_star, lo:hi]
    miss_t = panel.raw_missing[i_star, lo:hi] if panel.raw_missing is not None else None
    proxies = []
    for j in range(panel.n_nodes):
        if j == i_star:
            continue
        miss_j = panel.raw_missing[j, lo:hi] if panel.raw_missing is not None else None
        if abs(pearson_corr(target, panel.Y[j, lo:hi], miss_t, miss_j)) >= rho:
            proxies.append(j)
    return tuple(proxies)


def sample_blind_spot_mask(
    panel, i_star, rho, block_len, seed, *, place_range, corr_range=None, proxies=None
):
    """Draw one systemic blind spot: proxies from the training split,
    block position uniform inside ``place_range``.

    ``proxies`` short-circuits the correlation scan when the caller has
    already computed P(i*) (it never depends on the block draw);
    otherwise ``corr_range`` must name the training split.
    """
    lo, hi = place_range
    if block_len < 1 or block_len > hi - lo:
        raise ValueError(f"block length {block_len} exceeds range ({lo}, {hi})")
    if proxies is None:
        if corr_range is None:
            raise ValueError("corr_range is required when proxies are not given")
        proxies = select_proxies(panel, corr_range, i_star, rho)
    rng = derive_rng(seed, "mask-block")
    start = int(rng.integers(lo, hi - block_len + 1))
    blind = np.zeros(panel.Y.shape, dtype=bool)
    nodes = [i_star, *proxies]
    blind[np.asarray(nodes)[:, None], np.arange(start, start + block_len)[None, :]] = True
    raw = (
        panel.raw_missing.copy()
        if panel.raw_missing is not None
        else np.zeros(panel.Y.shape, dtype=bool)
    )
    return MaskSet(blind, raw, i_star, tuple(proxies), (start, start + block_len), rho, seed)


def apply_mask(y, mask):
    """Model view of the panel: masked entries read as zero."""
    return np.where(mask.M, 0.0, y)


def target_index_set(mask, include_raw_missing=False):
    """Sorted (node, time) pairs under supervision/evaluation.

    Raw-missing cells have no ground truth, so they join only on request.
    """
    m = mask.M if include_raw_missing else mask.blind
    return sorted((int(i), int(t)) for i, t in np.argwhere(m))


def save_mask(mask, node_names, csv_path, json_path):
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["node", "t"])
        for i, t in target_index_set(mask, include_raw_missing=True):
            writer.writerow([node_names[i], t])
    header = {
        "i_star": node_names[mask.i_star],
        "proxies": [node_names[j] for j in mask.proxies],
        "rho": mask.rho,
        "block": list(mask.block),
        "seed": mask.seed,
    }
    with open(json_path, "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)
        f.write("\n")


def load_mask(csv_path, json_path, node_names, n_times):
    with open(json_path) as f:
        header = json.load(f)
    index = {n: i for i, n in enumerate(node_names)}
    cells = np.zeros((len(node_names), n_times), dtype=bool)
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for name, t in reader:
            cells[index[name], int(t)] = True
    return MaskSet(
        blind=cells,
        raw_missing=np.zeros_like(cells),
        i_star=index[header["i_star"]],
        proxies=tuple(index[p] for p in header["proxies"]),
        block=tuple(header["block"]),
        rho=header["rho"],
        seed=header["seed"],
    )
