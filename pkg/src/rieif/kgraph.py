"""Protocol-derived knowledge graph over measurement nodes.

Nodes are labeled with a stack layer and a semantic category; directed
edges come from deterministic rules (cross-layer throughput chains plus
intra-layer control loops), or are given explicitly (used for synthetic
ground-truth graphs).  From the graph we derive the attention mask, the
symmetrized normalized Laplacian, and Laplacian positional encodings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

LAYERS = ("PDCP", "RLC", "MAC", "PHY", "other")
CATEGORIES = ("coding", "throughput", "quality", "spatial", "power")

_THROUGHPUT_CHAIN = ("PDCP", "RLC", "MAC", "PHY")

# canonical field kinds recognized from node names (token match)
_KIND_ALIASES = {
    "mcs": {"mcs"},
    "prb": {"prb"},
    "ri": {"ri", "rank"},
    "pathloss": {"pathloss"},
    "txp": {"txp", "txpower"},
    "bler": {"bler"},
    "acknack": {"ack", "nack", "acknack"},
    "thpt": {"thpt", "tput", "throughput"},
    "phr": {"phr", "headroom"},
}


@dataclass(frozen=True)
class NodeRole:
    """Semantic label of one measurement node."""

    name: str
    layer: str
    category: str
    leg: str = ""  # dual-connectivity leg tag; "" means shared/global

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"unknown layer {self.layer!r} for node {self.name!r}")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r} for node {self.name!r}")


def field_kind(name):
    """Canonical field kind inferred from a node name, or 'other'."""
    tokens = [t for t in re.split(r"[^a-z0-9]+", name.lower()) if t]
    if "path" in tokens and "loss" in tokens:
        return "pathloss"
    if "tx" in tokens and ("power" in tokens or "pwr" in tokens):
        return "txp"
    for kind, aliases in _KIND_ALIASES.items():
        if any(t in aliases for t in tokens):
            return kind
    return "other"


@dataclass
class KnowledgeGraph:
    """Directed dependency graph; immutable after construction."""

    node_names: list
    edges: list  # (src, dst) index pairs, deduplicated, sorted
    roles: list = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.node_names)) != len(self.node_names):
            raise ValueError("duplicate node names")
        n = len(self.node_names)
        seen = set()
        cleaned = []
        for s, d in self.edges:
            if not (0 <= s < n and 0 <= d < n):
                raise ValueError(f"edge ({s},{d}) out of range")
            if s == d or (s, d) in seen:
                continue
            seen.add((s, d))
            cleaned.append((s, d))
        self.edges = sorted(cleaned)

    @property
    def n_nodes(self):
        return len(self.node_names)

    def index(self, name):
        return self.node_names.index(name)


def _leg_compatible(a, b):
    return a.leg == b.leg or a.leg == "" or b.leg == ""


def build_wireless_kg(roles):
    """Apply the deterministic edge rules to labeled nodes.

    Vertical: throughput nodes chained along consecutive present layers
    of PDCP->RLC->MAC->PHY within each dual-connectivity leg.
    Horizontal: {MCS, PRB, RI} -> PHY throughput, Pathloss -> TxP ->
    BLER, and BLER -> ACK/NACK, within leg-compatible nodes.
    """
    roles = list(roles)
    names = [r.name for r in roles]
    kinds = [field_kind(r.name) for r in roles]
    edges = []

    # vertical throughput chains, per leg
    legs = sorted({r.leg for r in roles})
    for leg in legs:
        chain_layers = []
        for layer in _THROUGHPUT_CHAIN:
            members = [
                i
                for i, r in enumerate(roles)
                if r.category == "throughput" and r.layer == layer and r.leg == leg
            ]
            if members:
                chain_layers.append(members)
        for upper, lower in zip(chain_layers, chain_layers[1:]):
            for s in upper:
                for d in lower:
                    edges.append((s, d))

    def nodes_of_kind(kind):
        return [i for i, k in enumerate(kinds) if k == kind]

    phy_thpt = [
        i
        for i, r in enumerate(roles)
        if r.category == "throughput" and r.layer == "PHY"
    ]
    for kind in ("mcs", "prb", "ri"):
        for s in nodes_of_kind(kind):
            for d in phy_thpt:
                if _leg_compatible(roles[s], roles[d]):
                    edges.append((s, d))
    for src_kind, dst_kind in (("pathloss", "txp"), ("txp", "bler"), ("bler", "acknack")):
        for s in nodes_of_kind(src_kind):
            for d in nodes_of_kind(dst_kind):
                if _leg_compatible(roles[s], roles[d]):
                    edges.append((s, d))

    return KnowledgeGraph(names, edges, roles)


def incoming_neighborhood(kg, i, include_self=True):
    """Sources of edges into node i (attention uses self-loops too)."""
    nbrs = {s for s, d in kg.edges if d == i}
    if include_self:
        nbrs.add(i)
    return nbrs


def adjacency(kg):
    a = np.zeros((kg.n_nodes, kg.n_nodes))
    for s, d in kg.edges:
        a[s, d] = 1.0
    return a


def symmetrized_normalized_laplacian(kg):
    """L = I - D^{-1/2} A_sym D^{-1/2} with A_sym = max(A, A^T).

    Self-loops are not added here; degree-0 nodes use the convention
    D^{-1/2} = 0, which leaves L_ii = 1 on isolated nodes.
    """
    a = adjacency(kg)
    a_sym = np.maximum(a, a.T)
    deg = a_sym.sum(axis=1)
    with np.errstate(divide="ignore"):
        d_inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    lap = np.eye(kg.n_nodes) - d_inv_sqrt[:, None] * a_sym * d_inv_sqrt[None, :]
    return lap


def laplacian_positional_encoding(kg, d_pe):
    """Smallest nontrivial Laplacian eigenvectors, one row per node.

    The trivial eigenspace (eigenvalues ~ 0, one per connected component
    that carries edges) is skipped; min(d_pe, N - #trivial) columns are
    kept, sorted by ascending eigenvalue, zero-padded to d_pe, and
    sign-fixed so each column's first nonzero component is positive.
    """
    if d_pe < 1:
        raise ValueError("d_pe must be >= 1")
    lap = symmetrized_normalized_laplacian(kg)
    vals, vecs = np.linalg.eigh(lap)
    n_trivial = int(np.sum(vals < 1e-9))
    keep = min(d_pe, kg.n_nodes - n_trivial)
    enc = np.zeros((kg.n_nodes, d_pe))
    for c in range(keep):
        v = vecs[:, n_trivial + c]
        nz = np.flatnonzero(np.abs(v) > 1e-10)
        if nz.size and v[nz[0]] < 0:
            v = -v
        enc[:, c] = v
    return enc


def attention_mask_matrix(kg, include_self=True):
    """mask[i, j] = 1 iff node i may attend to node j (incoming edges)."""
    mask = adjacency(kg).T  # row i lists sources j with (j, i) in E
    if include_self:
        mask = np.maximum(mask, np.eye(kg.n_nodes))
    return mask


def random_kg(node_names, n_edges, seed):
    """Random directed graph on the same nodes (topology ablation)."""
    rng = np.random.default_rng(seed)
    n = len(node_names)
    pairs = [(s, d) for s in range(n) for d in range(n) if s != d]
    idx = rng.choice(len(pairs), size=min(n_edges, len(pairs)), replace=False)
    return KnowledgeGraph(list(node_names), [pairs[i] for i in sorted(idx)])


def fully_connected_kg(node_names):
    n = len(node_names)
    return KnowledgeGraph(
        list(node_names), [(s, d) for s in range(n) for d in range(n) if s != d]
    )


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------


def to_json_dict(kg):
    nodes = []
    roles = kg.roles if kg.roles else [NodeRole(n, "other", "quality") for n in kg.node_names]
    for r in roles:
        node = {"name": r.name, "layer": r.layer, "category": r.category}
        if r.leg:
            node["leg"] = r.leg
        nodes.append(node)
    return {
        "nodes": nodes,
        "edges": [[kg.node_names[s], kg.node_names[d]] for s, d in kg.edges],
    }


def save_kg(kg, path):
    with open(path, "w") as f:
        json.dump(to_json_dict(kg), f, indent=2)
        f.write("\n")


def load_kg(path):
    """Load a KG JSON file.

    When an explicit "edges" list is present it is used verbatim;
    otherwise the deterministic role rules are applied.
    """
    with open(path) as f:
        doc = json.load(f)
    roles = [
        NodeRole(n["name"], n.get("layer", "other"), n.get("category", "quality"), n.get("leg", ""))
        for n in doc["nodes"]
    ]
    names = [r.name for r in roles]
    if doc.get("edges") is not None:
        index = {n: i for i, n in enumerate(names)}
        edges = [(index[s], index[d]) for s, d in doc["edges"]]
        return KnowledgeGraph(names, edges, roles)
    return build_wireless_kg(roles)
