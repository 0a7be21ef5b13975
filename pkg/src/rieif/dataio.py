"""Panel ingestion, standardization, splitting, time-delay embedding, and
the synthetic graph-coupled generator used as the benchmark data source.

Time ranges are half-open 0-based ``(start, stop)`` pairs throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from rieif import kgraph
from rieif.util import derive_rng

STD_EPS = 1e-12


class PanelFormatError(ValueError):
    """CSV panel parse failure, carrying the offending row/column."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where += f" at row {row}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(message + where)


@dataclass
class RawPanel:
    """N x T measurements in raw units, one row per node."""

    node_names: list
    values: np.ndarray
    sample_period: float = 1.0
    raw_missing: np.ndarray = None  # bool (N, T); cells absent at ingestion

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n, t = self.values.shape
        if n < 2 or t < 2:
            raise ValueError(f"panel needs N >= 2 and T >= 2, got {n} x {t}")
        if len(self.node_names) != n:
            raise ValueError("node_names length does not match values")
        if self.raw_missing is None:
            self.raw_missing = np.zeros((n, t), dtype=bool)


@dataclass
class StandardizedPanel:
    """Z-scored panel plus the statistics needed to invert the transform."""

    node_names: list
    Y: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    raw_missing: np.ndarray = None

    @property
    def n_nodes(self):
        return self.Y.shape[0]

    @property
    def n_times(self):
        return self.Y.shape[1]

    def destandardize(self, i, value):
        return self.mean[i] + self.std[i] * np.asarray(value)


def zscore_standardize(panel, fit_range):
    """Per-node z-scoring with statistics from ``fit_range`` only.

    Population standard deviation; rows constant over the fit range get
    std 1 so they standardize to zeros instead of dividing by zero.
    """
    lo, hi = fit_range
    t = panel.values.shape[1]
    if not (0 <= lo < hi <= t):
        raise ValueError(f"empty or out-of-range fit range ({lo}, {hi}) for T={t}")
    window = panel.values[:, lo:hi]
    mean = window.mean(axis=1)
    std = window.std(axis=1)
    std = np.where(std < STD_EPS, 1.0, std)
    y = (panel.values - mean[:, None]) / std[:, None]
    return StandardizedPanel(
        list(panel.node_names), y, mean, std, raw_missing=panel.raw_missing.copy()
    )


def chronological_split(n_times, train_frac, min_len=1):
    """(train, test) ranges in time order: train gets floor(frac * T)."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    cut = int(np.floor(train_frac * n_times))
    train, test = (0, cut), (cut, n_times)
    if cut < min_len or n_times - cut < min_len:
        raise ValueError(
            f"split ({cut}, {n_times - cut}) leaves a range shorter than {min_len}"
        )
    return train, test


@dataclass(frozen=True)
class Segment:
    """A fixed-length window [start, start+length) into a panel."""

    start: int
    length: int

    @property
    def stop(self):
        return self.start + self.length


def make_segments(time_range, seg_len, stride):
    """Non-ragged sliding windows; a trailing partial window is dropped."""
    lo, hi = time_range
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if seg_len > hi - lo:
        raise ValueError(f"segment length {seg_len} exceeds range length {hi - lo}")
    return [Segment(s, seg_len) for s in range(lo, hi - seg_len + 1, stride)]


def time_delay_embed(y, missing, i, t, emb_dim, delay):
    """Delay vector [y_t, y_{t-tau}, ...] with zeros at masked/padded lags."""
    if emb_dim < 1 or delay < 1:
        raise ValueError("emb_dim and delay must be >= 1")
    out = np.zeros(emb_dim)
    for ell in range(emb_dim):
        idx = t - ell * delay
        if idx >= 0 and not (missing is not None and missing[i, idx]):
            out[ell] = y[i, idx]
    return out


def segment_phase_tensor(y, missing, segment, emb_dim, delay):
    """Stacked delay vectors for one segment: (T_seg, N, K).

    Masked and out-of-range lags read as zero; lags may reach panel
    history before the segment start.
    """
    n, t_total = y.shape
    times = segment.start + np.arange(segment.length)[:, None] - np.arange(emb_dim)[None, :] * delay
    valid = times >= 0
    clipped = np.clip(times, 0, t_total - 1)
    vals = y[:, clipped]  # (N, T_seg, K)
    vals = np.where(valid[None, :, :], vals, 0.0)
    if missing is not None:
        vals = np.where(missing[:, clipped], 0.0, vals)
    return np.ascontiguousarray(vals.transpose(1, 0, 2))


# ---------------------------------------------------------------------------
# synthetic graph-coupled generator
# ---------------------------------------------------------------------------


@dataclass
class GeneratorSpec:
    """Configuration of the synthetic panel generator (JSON-mappable)."""

    N: int = 34
    T: int = 4096
    seed: int = 0
    noise_std: float = 0.1
    coupling_density: float = 1.0
    trend_amplitude: float = 1.0
    cross_scale: float = 1.0  # scales all cross-node weights (0 = pure AR)
    root_drive: float = 1.0  # scales the sinusoid drive on root nodes
    burn_in: int = 256

    def validate(self):
        if self.N < 4:
            raise ValueError("generator needs N >= 4")
        if self.T < 256:
            raise ValueError("generator needs T >= 256")
        if not 0.0 <= self.coupling_density <= 1.0:
            raise ValueError("coupling_density must be in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        return self

    @classmethod
    def from_json_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        bad = set(doc) - known
        if bad:
            raise ValueError(f"unknown generator fields: {sorted(bad)}")
        return cls(**doc).validate()


def _synthetic_roles(n):
    """Role layout emulating a dual-connectivity measurement stack."""
    roles = []
    for leg in ("a", "b"):
        for layer in ("PDCP", "RLC", "MAC", "PHY"):
            roles.append(
                kgraph.NodeRole(f"{layer.lower()}_thpt_{leg}", layer, "throughput", leg=leg)
            )
    for leg in ("a", "b"):
        roles += [
            kgraph.NodeRole(f"mcs_{leg}", "MAC", "coding", leg=leg),
            kgraph.NodeRole(f"prb_{leg}", "MAC", "power", leg=leg),
            kgraph.NodeRole(f"ri_{leg}", "PHY", "spatial", leg=leg),
            kgraph.NodeRole(f"pathloss_{leg}", "PHY", "quality", leg=leg),
            kgraph.NodeRole(f"txpower_{leg}", "PHY", "power", leg=leg),
            kgraph.NodeRole(f"bler_{leg}", "PHY", "quality", leg=leg),
            kgraph.NodeRole(f"acknack_{leg}", "MAC", "quality", leg=leg),
        ]
    roles.append(kgraph.NodeRole("phr", "MAC", "power"))
    i = 0
    while len(roles) < n:
        roles.append(kgraph.NodeRole(f"aux{i:02d}", "other", "quality"))
        i += 1
    return roles[:n]


@dataclass
class Dynamics:
    """Fully drawn coupling system behind a synthetic panel."""

    roles: list
    edges: list  # (src, dst)
    weight: dict
    delay: dict
    func: dict  # "identity" or "sat"
    ar: np.ndarray
    trend_load: np.ndarray
    drive_amp: np.ndarray
    drive_period: np.ndarray
    drive_phase: np.ndarray
    offset: np.ndarray
    gain: np.ndarray

    def graph(self):
        return kgraph.KnowledgeGraph([r.name for r in self.roles], list(self.edges), list(self.roles))


def synthetic_dynamics(spec, seed=None):
    """Draw the coupling system for ``spec`` (deterministic per seed)."""
    spec.validate()
    seed = spec.seed if seed is None else seed
    rng = derive_rng(seed, "synth-params")
    roles = _synthetic_roles(spec.N)
    base = kgraph.build_wireless_kg(roles)
    edges = [e for e in base.edges if rng.random() < spec.coupling_density]

    weight, delay, func = {}, {}, {}
    for e in edges:
        sign = 1.0 if rng.random() < 0.7 else -1.0
        weight[e] = sign * rng.uniform(0.25, 0.6) * spec.cross_scale
        delay[e] = int(rng.integers(1, 3))
        func[e] = "sat" if rng.random() < 0.5 else "identity"

    n = spec.N
    ar = rng.uniform(0.45, 0.85, size=n)
    trend_load = rng.uniform(0.5, 1.0, size=n)
    in_deg = np.zeros(n, int)
    for _, d in edges:
        in_deg[d] += 1
    drive_amp = np.where(in_deg == 0, rng.uniform(0.6, 1.2, size=n), 0.0) * spec.root_drive
    drive_period = rng.integers(64, 257, size=n).astype(float)
    drive_phase = rng.uniform(0, 2 * np.pi, size=n)
    offset = rng.uniform(-5.0, 50.0, size=n)
    gain = rng.uniform(0.5, 20.0, size=n)
    return Dynamics(
        roles, edges, weight, delay, func, ar, trend_load,
        drive_amp, drive_period, drive_phase, offset, gain,
    )


def _trend(total, spec, rng):
    t = np.arange(total)
    m = np.sin(2 * np.pi * t / 384.0) + 0.6 * np.sin(2 * np.pi * t / 96.0 + 1.3)
    walk = np.empty(total)
    acc = 0.0
    steps = rng.normal(scale=0.02, size=total)
    for i in range(total):
        acc = 0.995 * acc + steps[i]
        walk[i] = acc
    return spec.trend_amplitude * (m + walk)


def simulate(dynamics, spec, seed=None):
    """Run the coupled recursion; returns the raw (N, T) value matrix."""
    seed = spec.seed if seed is None else seed
    rng = derive_rng(seed, "synth-noise")
    n = len(dynamics.roles)
    total = spec.T + spec.burn_in
    trend = _trend(total, spec, rng)
    noise = rng.normal(scale=spec.noise_std, size=(n, total))

    # group edges into dense mixing matrices by (delay, func)
    groups = {}
    for e in dynamics.edges:
        key = (dynamics.delay[e], dynamics.func[e])
        mat = groups.setdefault(key, np.zeros((n, n)))
        mat[e[1], e[0]] = dynamics.weight[e]

    tgrid = np.arange(total)
    drive = dynamics.drive_amp[:, None] * np.sin(
        2 * np.pi * tgrid[None, :] / dynamics.drive_period[:, None]
        + dynamics.drive_phase[:, None]
    )

    x = np.zeros((n, total))
    for t in range(total):
        acc = dynamics.trend_load * trend[t] + drive[:, t] + noise[:, t]
        if t > 0:
            acc = acc + dynamics.ar * x[:, t - 1]
        for (d, fname), mat in groups.items():
            if t - d < 0:
                continue
            src = x[:, t - d]
            if fname == "sat":
                src = np.tanh(src)
            acc = acc + mat @ src
        x[:, t] = acc

    x = x[:, spec.burn_in:]
    return dynamics.offset[:, None] + dynamics.gain[:, None] * x


def generate_synthetic_panel(spec, seed=None):
    """Synthetic panel plus its exact coupling graph as ground truth."""
    spec.validate()
    dyn = synthetic_dynamics(spec, seed)
    values = simulate(dyn, spec, seed)
    names = [r.name for r in dyn.roles]
    return RawPanel(names, values), dyn.graph()


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def load_panel_csv(path):
    """Read a panel CSV: header of node names, one row per time step.

    Empty cells become raw-missing flags; anything else must parse as a
    float.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("empty file") from None
        names = [h.strip() for h in header]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise PanelFormatError(f"duplicate node names {dup}", row=0)
        rows = []
        missing_rows = []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(names):
                raise PanelFormatError(
                    f"expected {len(names)} cells, found {len(row)}", row=r
                )
            vals, miss = [], []
            for c, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    vals.append(0.0)
                    miss.append(True)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise PanelFormatError(
                        f"non-numeric cell {cell!r}", row=r, column=names[c]
                    ) from None
                miss.append(False)
            rows.append(vals)
            missing_rows.append(miss)
    values = np.array(rows, dtype=np.float64).T
    raw_missing = np.array(missing_rows, dtype=bool).T
    return RawPanel(names, values, raw_missing=raw_missing)


def save_panel_csv(panel, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(panel.node_names)
        for t in range(panel.values.shape[1]):
            row = [
                "" if panel.raw_missing[i, t] else format(panel.values[i, t], ".17g")
                for i in range(panel.values.shape[0])
            ]
            writer.writerow(row)
