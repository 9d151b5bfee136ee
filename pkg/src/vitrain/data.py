"""Dataset generation and the panel-to-graph pipeline.

Datasets hold stacked sample arrays: features ``(N, n, C)``, labels
``(N, n, F)`` with entries in {0, 1}, and, for planted-model data, the true
conditional expectations. Tabular data uses a single node row per sample.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graphs import Graph, load_graph, save_graph
from .network import (
    INIT_TEACHER,
    LayerSpec,
    Network,
    forward,
    init_params,
)
from .numerics import Activation, RngStream, ensure_finite, gaussian

__all__ = [
    "Dataset",
    "PanelSpec",
    "gen_gcn_teacher",
    "gen_probit",
    "gen_synthetic_panel",
    "gen_two_moons",
    "knn_graph_from_labels",
    "lag_features",
    "load_dataset",
    "load_panel_csv",
    "save_dataset",
    "save_panel_csv",
    "train_test_split",
]

BINARY = "binary"
CATEGORICAL = "categorical"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    label_kind: str = BINARY
    expectations: np.ndarray | None = None
    graph: Graph | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 3 or self.labels.ndim != 3:
            raise ValueError("features and labels must have shape (N, n, F)")
        if self.features.shape[:2] != self.labels.shape[:2]:
            raise ValueError("features and labels are misaligned")
        ensure_finite(self.features, "features")
        if not np.all(np.isin(self.labels, (0.0, 1.0))):
            raise ValueError("labels must be 0/1")
        if self.label_kind not in (BINARY, CATEGORICAL):
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        if self.label_kind == CATEGORICAL:
            if self.labels.shape[-1] < 2:
                raise ValueError("categorical labels need at least 2 classes")
            if not np.allclose(self.labels.sum(axis=-1), 1.0):
                raise ValueError("categorical labels must be one-hot")
        if self.expectations is not None:
            self.expectations = np.asarray(self.expectations, dtype=np.float64)
            if self.expectations.shape != self.labels.shape:
                raise ValueError("expectations are misaligned with labels")
            if np.any(self.expectations < 0) or np.any(self.expectations > 1):
                raise ValueError("expectations must lie in [0, 1]")
        if self.graph is not None and self.graph.n != self.features.shape[1]:
            raise ValueError("graph size does not match the node dimension")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            expectations=None if self.expectations is None else self.expectations[idx],
        )


def train_test_split(ds: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    """First ``n_train`` samples train, the rest test; order is preserved
    because panels are temporal."""
    if not 1 <= n_train < len(ds):
        raise ValueError("n_train must be in [1, N)")
    return ds.subset(slice(0, n_train)), ds.subset(slice(n_train, None))


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def _bernoulli(expectations: np.ndarray, rng: RngStream) -> np.ndarray:
    u = rng.generator().random(expectations.shape)
    return (u < expectations).astype(np.float64)


def _categorical_onehot(probs: np.ndarray, rng: RngStream) -> np.ndarray:
    """Sample one-hot rows from per-row class probabilities (last axis)."""
    u = rng.generator().random(probs.shape[:-1] + (1,))
    cum = np.cumsum(probs, axis=-1)
    idx = np.sum(u > cum, axis=-1)
    idx = np.minimum(idx, probs.shape[-1] - 1)
    out = np.zeros_like(probs)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def gen_probit(n_samples: int, dim: int, rng: RngStream) -> tuple[Dataset, Network]:
    """Binary responses through a Gaussian-CDF link on slightly shifted
    Gaussian features; the planted coefficients come back as a one-layer
    network.
    """
    if n_samples < 1 or dim < 1:
        raise ValueError("n_samples and dim must be >= 1")
    beta = gaussian(rng.split(0), -0.05, 1.0, (dim, 1))
    b = gaussian(rng.split(1), -0.1, 1.0, (1,))
    x = gaussian(rng.split(2), 0.05, 1.0, (n_samples, 1, dim))
    teacher = Network(
        specs=(LayerSpec(dim, 1, activation=Activation("normal_cdf")),),
        weights=[beta],
        biases=[b],
    )
    expectations, _ = forward(teacher, x, mode="eval")
    labels = _bernoulli(expectations, rng.split(3))
    ds = Dataset(
        features=x,
        labels=labels,
        label_kind=BINARY,
        expectations=expectations,
    )
    return ds, teacher


def gen_two_moons(n_samples: int, noise: float, rng: RngStream) -> Dataset:
    """Two interleaved half circles with Gaussian jitter, one-hot two-class
    labels, exactly half the samples on each moon."""
    if n_samples % 2:
        raise ValueError("n_samples must be even")
    half = n_samples // 2
    t_a = rng.split(0).generator().uniform(0.0, np.pi, half)
    t_b = rng.split(1).generator().uniform(0.0, np.pi, half)
    moon_a = np.stack([np.cos(t_a), np.sin(t_a)], axis=1)
    moon_b = np.stack([1.0 - np.cos(t_b), -np.sin(t_b) + 0.5], axis=1)
    pts = np.concatenate([moon_a, moon_b], axis=0)
    if noise > 0:
        pts = pts + gaussian(rng.split(2), 0.0, noise, pts.shape)
    labels = np.zeros((n_samples, 2))
    labels[:half, 0] = 1.0
    labels[half:, 1] = 1.0
    return Dataset(
        features=pts[:, None, :],
        labels=labels[:, None, :],
        label_kind=CATEGORICAL,
    )


def gen_gcn_teacher(
    graph: Graph,
    n_samples: int,
    specs,
    rng: RngStream,
    teacher_rng: RngStream | None = None,
) -> tuple[Dataset, Network]:
    """Plant a graph network with unit-variance weights centered at 1 and
    sample node labels from its outputs.

    ``teacher_rng`` pins the planted parameters independently of the data
    draw so several trials can share one ground truth.
    """
    specs = tuple(specs)
    final = specs[-1].activation.kind
    if final not in ("sigmoid", "softmax"):
        raise ValueError("teacher's final activation must be sigmoid or softmax")
    teacher = init_params(
        specs, INIT_TEACHER, teacher_rng if teacher_rng is not None else rng.split(0),
        graph=graph,
    )
    x = gaussian(rng.split(1), 0.0, 1.0, (n_samples, graph.n, specs[0].in_channels))
    expectations, _ = forward(teacher, x, mode="eval")
    if final == "sigmoid":
        labels = _bernoulli(expectations, rng.split(2))
        kind = BINARY
    else:
        labels = _categorical_onehot(expectations, rng.split(2))
        kind = CATEGORICAL
    ds = Dataset(
        features=x,
        labels=labels,
        label_kind=kind,
        expectations=expectations,
        graph=graph,
    )
    return ds, teacher


# ---------------------------------------------------------------------------
# Panel pipeline (time x node label matrices)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelSpec:
    lag: int
    knn: int
    date_column: str = "date"
    label_columns: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.lag < 1 or self.knn < 1:
            raise ValueError("lag and knn must be >= 1")


def lag_features(panel: np.ndarray, lag: int, n_classes: int | None = None) -> Dataset:
    """Turn a time-by-node label panel into per-day samples.

    Day ``t`` gets the previous ``lag`` days as node features (most recent
    first) and its own labels as the target; the first ``lag`` days are
    dropped. Labels wider than {0, 1} are one-hot encoded.
    """
    panel = np.asarray(panel, dtype=np.float64)
    if panel.ndim != 2:
        raise ValueError("panel must be a (time, node) matrix")
    t_len, n = panel.shape
    if t_len <= lag:
        raise ValueError(f"panel too short: {t_len} rows with lag {lag}")
    n_out = t_len - lag
    feats = np.empty((n_out, n, lag))
    for j in range(lag):
        feats[:, :, j] = panel[lag - 1 - j : t_len - 1 - j]
    raw = panel[lag:]
    if n_classes is None:
        n_classes = int(panel.max()) + 1 if panel.max() > 1 else 1
    if n_classes <= 2 and np.all(np.isin(raw, (0.0, 1.0))):
        labels = raw[:, :, None]
        kind = BINARY
    else:
        labels = np.eye(int(n_classes))[raw.astype(np.int64)]
        kind = CATEGORICAL
    return Dataset(features=feats, labels=labels, label_kind=kind)


def knn_graph_from_labels(panel: np.ndarray, k: int) -> Graph:
    """Connect each node to its k most correlated peers (union over
    directions, unit weights, ties to the lower index)."""
    panel = np.asarray(panel, dtype=np.float64)
    t_len, n = panel.shape
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < node count")
    stds = panel.std(axis=0)
    bad = np.nonzero(stds == 0)[0]
    if bad.size:
        raise ValueError(f"zero-variance node column(s): {bad.tolist()}")
    corr = np.corrcoef(panel.T)
    adj = np.zeros((n, n))
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (-corr[i, j], j))
        for j in order[:k]:
            adj[i, j] = adj[j, i] = 1.0
    return Graph(adj)


def load_panel_csv(path, spec: PanelSpec) -> np.ndarray:
    """Strictly parse a date-plus-node-columns CSV of integer labels in
    {0, 1, 2}; returns the time-by-node matrix in file order."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty panel file") from None
        if spec.date_column not in header:
            raise ValueError(f"missing date column {spec.date_column!r}")
        date_idx = header.index(spec.date_column)
        node_names = [h for i, h in enumerate(header) if i != date_idx]
        if spec.label_columns is not None:
            missing = [c for c in spec.label_columns if c not in node_names]
            if missing:
                raise ValueError(f"unknown label column(s): {missing}")
            node_names = list(spec.label_columns)
        col_idx = [header.index(c) for c in node_names]
        rows = []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"row {r}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for c in col_idx:
                cell = row[c].strip()
                if not cell:
                    raise ValueError(f"row {r}, column {header[c]!r}: missing value")
                try:
                    v = int(cell)
                except ValueError:
                    raise ValueError(
                        f"row {r}, column {header[c]!r}: not an integer label"
                    ) from None
                if v not in (0, 1, 2):
                    raise ValueError(f"row {r}, column {header[c]!r}: label {v} not in 0..2")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ValueError("panel has a header but no data rows")
    return np.array(rows, dtype=np.float64)


def save_panel_csv(panel: np.ndarray, path, date_column: str = "date", node_names=None) -> None:
    panel = np.asarray(panel)
    t_len, n = panel.shape
    if node_names is None:
        node_names = [f"node{j}" for j in range(n)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([date_column, *node_names])
        for t in range(t_len):
            writer.writerow([f"d{t:05d}", *[int(v) for v in panel[t]]])


def gen_synthetic_panel(
    graph: Graph,
    t_len: int,
    rng: RngStream,
    rho: float = 0.6,
    coupling: float = 0.3,
    n_classes: int = 2,
) -> np.ndarray:
    """Artifact-only panel generator for exercising the real-data path.

    A per-node AR(1) latent ``z_t = rho z_{t-1} + coupling * (neighbor-mean
    of z_{t-1}) + noise`` is thresholded into labels: above 0 for binary
    panels, or split at the +-0.8 sigma points for three classes (0 normal,
    1 high, 2 low).
    """
    if n_classes not in (2, 3):
        raise ValueError("panel labels support 2 or 3 classes")
    n = graph.n
    mix = graph.mean_aggregation_matrix
    noise = gaussian(rng, 0.0, 1.0, (t_len, n))
    z = np.zeros((t_len, n))
    z[0] = noise[0]
    for t in range(1, t_len):
        z[t] = rho * z[t - 1] + coupling * (mix @ z[t - 1]) + noise[t]
    if n_classes == 2:
        return (z > 0).astype(np.float64)
    scale = z.std()
    panel = np.zeros((t_len, n))
    panel[z > 0.8 * scale] = 1.0
    panel[z < -0.8 * scale] = 2.0
    return panel


# ---------------------------------------------------------------------------
# Dataset directory serialization
# ---------------------------------------------------------------------------


def save_dataset(ds: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "n_samples": int(ds.features.shape[0]),
        "nodes": int(ds.features.shape[1]),
        "channels": int(ds.features.shape[2]),
        "outputs": int(ds.labels.shape[2]),
        "label_kind": ds.label_kind,
        "has_expectations": ds.expectations is not None,
        "has_graph": ds.graph is not None,
    }
    (d / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    ds.features.astype("<f8").tofile(d / "features.bin")
    ds.labels.astype(np.uint8).tofile(d / "labels.bin")
    if ds.expectations is not None:
        ds.expectations.astype("<f8").tofile(d / "expectations.bin")
    if ds.graph is not None:
        save_graph(ds.graph, d / "graph.txt")


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    shape_x = (meta["n_samples"], meta["nodes"], meta["channels"])
    shape_y = (meta["n_samples"], meta["nodes"], meta["outputs"])
    feats = np.fromfile(d / "features.bin", dtype="<f8").reshape(shape_x)
    labels = np.fromfile(d / "labels.bin", dtype=np.uint8).reshape(shape_y).astype(np.float64)
    expectations = None
    if meta["has_expectations"]:
        expectations = np.fromfile(d / "expectations.bin", dtype="<f8").reshape(shape_y)
    graph = load_graph(d / "graph.txt") if meta["has_graph"] else None
    return Dataset(
        features=feats,
        labels=labels,
        label_kind=meta["label_kind"],
        expectations=expectations,
        graph=graph,
    )
