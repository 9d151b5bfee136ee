"""Weighted undirected graphs, their normalized Laplacian, and decoupled filters.

A :class:`Graph` wraps a symmetric non-negative adjacency matrix with a zero
diagonal. The three filter maps (self-loop convolution, Chebyshev stacking,
sample-and-aggregate concatenation) are all linear in the signal, so each
layer factors as ``filter(X) @ theta`` downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .numerics import RngStream, ensure_finite, sym_eig

__all__ = [
    "ConnectivityError",
    "Graph",
    "IsolatedNodeError",
    "SpectralSplit",
    "chebyshev_feature_map",
    "erdos_renyi",
    "gcn_filter",
    "load_graph",
    "low_energy_perturbation",
    "mismatch_bound",
    "normalized_laplacian",
    "perturb_edges",
    "sage_feature_map",
    "save_graph",
    "spectral_split",
]


class IsolatedNodeError(ValueError):
    """A node with zero degree where the operation needs every degree > 0."""


class ConnectivityError(RuntimeError):
    """Random graph generation failed to produce a connected graph."""


@dataclass(frozen=True)
class Graph:
    adjacency: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if np.any(a < 0):
            raise ValueError("edge weights must be non-negative")
        ensure_finite(a, "adjacency")
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """Unordered edges (i < j) read off the nonzero upper triangle."""
        iu, ju = np.nonzero(np.triu(self.adjacency, k=1))
        return tuple(zip(iu.tolist(), ju.tolist()))

    def is_connected(self) -> bool:
        n = self.n
        if n == 0:
            return True
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in np.nonzero(self.adjacency[i] > 0)[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        return bool(seen.all())

    @cached_property
    def gcn_matrix(self) -> np.ndarray:
        """Symmetric convolution matrix of the graph with self-loops added."""
        w = self.adjacency + np.eye(self.n)
        inv_sqrt = 1.0 / np.sqrt(w.sum(axis=1))
        return inv_sqrt[:, None] * w * inv_sqrt[None, :]

    @cached_property
    def mean_aggregation_matrix(self) -> np.ndarray:
        """Row-stochastic neighbor averaging; needs every node to have a neighbor."""
        d = self.degrees
        if np.any(d == 0):
            raise IsolatedNodeError("neighbor averaging undefined for isolated nodes")
        return self.adjacency / d[:, None]

    @cached_property
    def laplacian(self) -> np.ndarray:
        return normalized_laplacian(self)

    @cached_property
    def laplacian_rescaled(self) -> np.ndarray:
        """Laplacian mapped onto [-1, 1] so Chebyshev recurrences stay stable."""
        lam_max = float(sym_eig(self.laplacian)[0].max())
        return (2.0 / lam_max) * self.laplacian - np.eye(self.n)


def normalized_laplacian(g: Graph) -> np.ndarray:
    """``I - D^{-1/2} W D^{-1/2}``; symmetric with spectrum inside [0, 2]."""
    d = g.degrees
    if np.any(d == 0):
        raise IsolatedNodeError("normalized Laplacian undefined for isolated nodes")
    inv_sqrt = 1.0 / np.sqrt(d)
    lap = np.eye(g.n) - inv_sqrt[:, None] * g.adjacency * inv_sqrt[None, :]
    return (lap + lap.T) / 2.0


# ---------------------------------------------------------------------------
# Filters (all linear in x; x has shape (..., n, C))
# ---------------------------------------------------------------------------


def gcn_filter(g: Graph, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] != g.n:
        raise ValueError(f"signal has {x.shape[-2]} rows, graph has {g.n} nodes")
    return g.gcn_matrix @ x


def chebyshev_feature_map(g: Graph, x: np.ndarray, order: int) -> np.ndarray:
    """Stack ``T_1(Lhat) x .. T_K(Lhat) x`` along the channel axis.

    The recurrence starts at ``T_1 = Lhat`` (there is no identity block), so
    the output has ``order * C`` channels and the layer parameters are the
    per-order blocks stacked vertically.
    """
    if order < 1:
        raise ValueError("Chebyshev order must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] != g.n:
        raise ValueError(f"signal has {x.shape[-2]} rows, graph has {g.n} nodes")
    lhat = g.laplacian_rescaled
    prev = x
    cur = lhat @ x
    blocks = [cur]
    for _ in range(order - 1):
        prev, cur = cur, 2.0 * (lhat @ cur) - prev
        blocks.append(cur)
    return np.concatenate(blocks, axis=-1)


def sage_feature_map(g: Graph, x: np.ndarray) -> np.ndarray:
    """Concatenate each node's own signal with its neighbor mean."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] != g.n:
        raise ValueError(f"signal has {x.shape[-2]} rows, graph has {g.n} nodes")
    return np.concatenate([x, g.mean_aggregation_matrix @ x], axis=-1)


# ---------------------------------------------------------------------------
# Random graphs
# ---------------------------------------------------------------------------


def erdos_renyi(n: int, p: float, rng: RngStream, max_attempts: int = 1000) -> Graph:
    """Connected Erdos-Renyi graph; resamples until connected."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    iu, ju = np.triu_indices(n, k=1)
    for attempt in range(max_attempts):
        draws = rng.split(attempt).generator().random(iu.size)
        adj = np.zeros((n, n))
        keep = draws < p
        adj[iu[keep], ju[keep]] = 1.0
        adj += adj.T
        g = Graph(adj)
        if g.is_connected():
            return g
    raise ConnectivityError(
        f"no connected graph with n={n}, p={p} in {max_attempts} attempts"
    )


LITERAL = "literal"
BALANCED = "balanced"


def perturb_edges(g: Graph, frac: float, rng: RngStream, mode: str = LITERAL) -> Graph:
    """Randomly discard observed edges and insert absent ones.

    ``literal`` removes ``floor(frac * |E|)`` edges and inserts
    ``floor(frac * |E^c|)`` non-edges; ``balanced`` inserts only as many as it
    removes. Inserted edges get weight 1; the result stays symmetric with a
    zero diagonal but is not guaranteed connected.
    """
    if not 0.0 <= frac < 1.0:
        raise ValueError("frac must be in [0, 1)")
    if mode not in (LITERAL, BALANCED):
        raise ValueError(f"unknown perturbation mode {mode!r}")
    edges = list(g.edges)
    iu, ju = np.triu_indices(g.n, k=1)
    absent = [
        (int(i), int(j))
        for i, j in zip(iu, ju)
        if g.adjacency[i, j] == 0
    ]
    n_remove = int(frac * len(edges))
    n_insert = int(frac * (len(absent) if mode == LITERAL else len(edges)))
    n_insert = min(n_insert, len(absent))
    gen = rng.generator()
    adj = g.adjacency.copy()
    if n_remove:
        for k in gen.choice(len(edges), size=n_remove, replace=False):
            i, j = edges[int(k)]
            adj[i, j] = adj[j, i] = 0.0
    if n_insert:
        for k in gen.choice(len(absent), size=n_insert, replace=False):
            i, j = absent[int(k)]
            adj[i, j] = adj[j, i] = 1.0
    return Graph(adj)


# ---------------------------------------------------------------------------
# Spectral energy split and low-energy mismatch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralSplit:
    """Laplacian split into its top-k (by |eigenvalue|) and remaining parts."""

    k: int
    high: np.ndarray
    low: np.ndarray
    high_basis: np.ndarray = field(repr=False)
    low_basis: np.ndarray = field(repr=False)


def spectral_split(g: Graph, k: int) -> SpectralSplit:
    lap = g.laplacian
    n = g.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    values, vectors = sym_eig(lap)
    order = np.argsort(-np.abs(values), kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    hi_vals, hi_vecs = values[:k], vectors[:, :k]
    lo_vals, lo_vecs = values[k:], vectors[:, k:]
    high = (hi_vecs * hi_vals) @ hi_vecs.T
    low = (lo_vecs * lo_vals) @ lo_vecs.T
    return SpectralSplit(k=k, high=high, low=low, high_basis=hi_vecs, low_basis=lo_vecs)


def low_energy_perturbation(g: Graph, k: int, delta: float, rng: RngStream) -> np.ndarray:
    """A filter matrix that agrees with the Laplacian on its top-k eigenspace.

    Adds a random symmetric perturbation supported on the low-energy
    eigenspace with operator norm at most ``delta``.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    lap = g.laplacian
    split = spectral_split(g, k)
    m = g.n - k
    if delta == 0 or m == 0:
        return lap.copy()
    raw = rng.generator().standard_normal((m, m))
    sym = (raw + raw.T) / 2.0
    norm = float(np.abs(sym_eig(sym)[0]).max())
    if norm == 0:
        return lap.copy()
    scaled = sym * (delta * (1.0 - 1e-10) / norm)
    u = split.low_basis
    return lap + u @ scaled @ u.T


def mismatch_bound(delta: float, lipschitz: float, mean_low_norm: float, theta_norm: float) -> float:
    """Prediction-gap bound for a filter whose low-energy block moved by ``delta``."""
    for name, v in (
        ("delta", delta),
        ("lipschitz", lipschitz),
        ("mean_low_norm", mean_low_norm),
        ("theta_norm", theta_norm),
    ):
        if v < 0:
            raise ValueError(f"{name} must be >= 0")
    return lipschitz * delta * mean_low_norm * theta_norm


# ---------------------------------------------------------------------------
# Serialization: "n=<count>" header then one "i j weight" triple per line
# ---------------------------------------------------------------------------


def save_graph(g: Graph, path) -> None:
    lines = [f"n={g.n}"]
    for i, j in g.edges:
        lines.append(f"{i} {j} {float(g.adjacency[i, j])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph(path) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise ValueError("graph file must start with an 'n=<count>' header")
    n = int(lines[0][2:])
    adj = np.zeros((n, n))
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise ValueError(f"bad edge line: {ln!r}")
        i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        adj[i, j] = adj[j, i] = w
    return Graph(adj)
