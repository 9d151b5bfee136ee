"""Experiment builders and comparison runners.

Every builder returns the four things a run needs: train set, test set, a
freshly initialized student, and the training configuration. The compare
runner executes the operator method and the gradient baseline on identical
inputs (same data, same initialization, same batch sequence) and aggregates
final metrics over seeds as mean plus standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import data as dt
from .graphs import Graph, erdos_renyi, perturb_edges
from .network import LayerSpec, Network, init_params
from .numerics import Activation, RngStream
from .trainer import METHOD_SGD, METHOD_SVI, TrainConfig, TrainHistory, train

__all__ = [
    "RunSetup",
    "build_gcn_recovery",
    "build_panel",
    "build_probit",
    "build_two_moon",
    "compare_methods",
    "recovery_teacher_graphs",
    "summarize",
    "PRESETS",
]

# Stream labels for the independent random choices of one experiment seed.
_DATA, _INIT, _PERTURB, _TEST = 11, 13, 17, 19

# Fixed stream for planted recovery parameters, shared across trial seeds.
_TEACHER_STREAM = RngStream(777_000_001)

PRESETS: dict[str, dict] = {
    "probit": dict(
        n_train=2000, n_test=500, dim=50, epochs=200, batch_size=200,
        lr=0.005, momentum=0.9, nesterov=False, loss="mse",
    ),
    "two-moon": dict(
        n_train=500, n_test=500, hidden=64, noise=0.1, epochs=100,
        batch_size=100, lr=0.15, momentum=0.0, nesterov=False, loss="mse",
    ),
    "gcn-recover": dict(
        nodes=15, edge_prob=0.15, channels=2, teacher_hidden=2, hidden=8,
        perturb_frac=0.2, n_train=2000, n_test=2000, epochs=200,
        batch_size=100, lr=0.001, momentum=0.99, nesterov=True, loss="mse",
    ),
    "panel": dict(
        lag=5, knn=4, hidden=16, n_train_days=360, epochs=100, batch_size=30,
        lr=0.001, momentum=0.99, nesterov=True,
    ),
}


@dataclass
class RunSetup:
    train_set: dt.Dataset
    test_set: dt.Dataset
    net: Network
    config: TrainConfig
    reference: Network | None = None
    setting: str = ""


def _config(method: str, seed: int, p: dict, **overrides) -> TrainConfig:
    kw = dict(
        method=method,
        epochs=p["epochs"],
        batch_size=p["batch_size"],
        lr=p["lr"],
        momentum=p["momentum"],
        nesterov=p["nesterov"],
        loss=p.get("loss", "mse"),
        seed=seed,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def build_probit(seed: int, method: str, **overrides) -> RunSetup:
    """One-layer Gaussian-CDF model recovery; data redrawn per seed."""
    p = {**PRESETS["probit"], **overrides}
    rng = RngStream(seed)
    ds, teacher = dt.gen_probit(p["n_train"] + p["n_test"], p["dim"], rng.split(_DATA))
    train_set, test_set = dt.train_test_split(ds, p["n_train"])
    specs = [LayerSpec(p["dim"], 1, activation=Activation("normal_cdf"))]
    net = init_params(specs, "glorot", rng.split(_INIT))
    cfg = _config(method, seed, p, snapshot_every=p.get("snapshot_every", 1))
    return RunSetup(train_set, test_set, net, cfg, reference=teacher,
                    setting=f"dim={p['dim']}")


def build_two_moon(seed: int, method: str, **overrides) -> RunSetup:
    """Two-layer fully connected classifier on the interleaved half circles."""
    p = {**PRESETS["two-moon"], **overrides}
    rng = RngStream(seed)
    train_set = dt.gen_two_moons(p["n_train"], p["noise"], rng.split(_DATA))
    test_set = dt.gen_two_moons(p["n_test"], p["noise"], rng.split(_TEST))
    specs = [
        LayerSpec(2, p["hidden"], activation=Activation("relu")),
        LayerSpec(p["hidden"], 2, activation=Activation("softmax")),
    ]
    net = init_params(specs, "glorot", rng.split(_INIT))
    cfg = _config(method, seed, p, snapshot_every=p.get("snapshot_every", 1))
    return RunSetup(train_set, test_set, net, cfg, setting=f"H={p['hidden']}")


def recovery_teacher_graphs(p: dict) -> tuple[Graph, Graph]:
    """The fixed small and large recovery graphs (shared across seeds)."""
    small = erdos_renyi(15, p.get("edge_prob", 0.15), _TEACHER_STREAM.split(1))
    large = erdos_renyi(40, p.get("edge_prob", 0.15), _TEACHER_STREAM.split(2))
    return small, large


def build_gcn_recovery(seed: int, method: str, perturbed: bool = False, **overrides) -> RunSetup:
    """Two-layer graph-convolution teacher-student recovery.

    The planted parameters and the graph are fixed across seeds; features and
    labels are redrawn per seed. When ``perturbed`` the student sees a graph
    with a fraction of edges discarded and inserted.
    """
    p = {**PRESETS["gcn-recover"], **overrides}
    n = p["nodes"]
    graph = erdos_renyi(n, p["edge_prob"], _TEACHER_STREAM.split(1 if n == 15 else 2))
    rng = RngStream(seed)
    c, th = p["channels"], p["teacher_hidden"]
    teacher_specs = [
        LayerSpec(c, th, filter="gcn", activation=Activation("relu")),
        LayerSpec(th, 1, filter="gcn", activation=Activation("sigmoid")),
    ]
    ds, teacher = dt.gen_gcn_teacher(
        graph, p["n_train"] + p["n_test"], teacher_specs, rng.split(_DATA),
        teacher_rng=_TEACHER_STREAM.split(3),
    )
    train_set, test_set = dt.train_test_split(ds, p["n_train"])
    student_graph = graph
    if perturbed:
        student_graph = perturb_edges(graph, p["perturb_frac"], rng.split(_PERTURB))
    h = p["hidden"]
    student_specs = [
        LayerSpec(c, h, filter="gcn", activation=Activation("relu")),
        LayerSpec(h, 1, filter="gcn", activation=Activation("sigmoid")),
    ]
    net = init_params(student_specs, "glorot", rng.split(_INIT), graph=student_graph)
    cfg = _config(
        method, seed, p,
        snapshot_every=p.get("snapshot_every", 10),
        bn=p.get("bn"),
        record_dynamics=p.get("record_dynamics", False),
    )
    setting = f"n={n} H={h} graph={'perturbed' if perturbed else 'known'}"
    return RunSetup(train_set, test_set, net, cfg, reference=teacher, setting=setting)


def build_panel(panel: np.ndarray, seed: int, method: str, **overrides) -> RunSetup:
    """Lagged-feature node classification on a time-by-node label panel.

    The neighbor graph comes from label correlations over the training days
    only; the chronological split point is in days.
    """
    p = {**PRESETS["panel"], **overrides}
    lag, knn = p["lag"], p["knn"]
    n_train_days = p["n_train_days"]
    t_len = panel.shape[0]
    if not lag < n_train_days < t_len:
        raise ValueError("need lag < n_train_days < panel length")
    graph = dt.knn_graph_from_labels(panel[:n_train_days], knn)
    lagged = dt.lag_features(panel, lag)
    lagged.graph = graph
    train_set, test_set = dt.train_test_split(lagged, n_train_days - lag)
    binary = lagged.label_kind == dt.BINARY
    out = lagged.labels.shape[-1]
    h = p["hidden"]
    specs = [
        LayerSpec(lag, h, filter="gcn", activation=Activation("relu")),
        LayerSpec(h, h, filter="gcn", activation=Activation("relu")),
        LayerSpec(h, out, filter="gcn",
                  activation=Activation("sigmoid" if binary else "softmax")),
    ]
    rng = RngStream(seed)
    net = init_params(specs, "glorot", rng.split(_INIT), graph=graph)
    cfg = _config(
        method, seed, p,
        loss=p.get("loss", "mse" if binary else "cce"),
        snapshot_every=p.get("snapshot_every", 10),
        bn=p.get("bn"),
    )
    return RunSetup(train_set, test_set, net, cfg, setting=f"H={h}")


# ---------------------------------------------------------------------------
# Comparison running and aggregation
# ---------------------------------------------------------------------------


@dataclass
class CompareResult:
    setting: str
    histories: dict[str, dict[int, TrainHistory]] = field(default_factory=dict)
    finals: dict[str, dict[int, dict[str, dict[str, float]]]] = field(default_factory=dict)


def run_setup(setup: RunSetup) -> TrainHistory:
    _, history = train(
        setup.net, setup.train_set, setup.config,
        test_set=setup.test_set, reference=setup.reference,
    )
    return history


def compare_methods(builder, seeds, methods=(METHOD_SVI, METHOD_SGD), **kwargs) -> CompareResult:
    """Run each method on identical per-seed inputs; collect histories and
    final metric tables."""
    result = CompareResult(setting="")
    for method in methods:
        result.histories[method] = {}
        result.finals[method] = {}
        for seed in seeds:
            setup = builder(seed, method, **kwargs)
            result.setting = setup.setting
            history = run_setup(setup)
            result.histories[method][seed] = history
            result.finals[method][seed] = history.points[-1].metrics
    return result


def summarize(result: CompareResult):
    """Rows ``(setting, method, metric, split, mean, stderr)`` over seeds."""
    rows = []
    for method in sorted(result.finals):
        per_seed = result.finals[method]
        seeds = sorted(per_seed)
        if not seeds:
            continue
        splits = sorted(per_seed[seeds[0]])
        for split in splits:
            for metric in sorted(per_seed[seeds[0]][split]):
                vals = np.array([per_seed[s][split][metric] for s in seeds])
                stderr = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
                rows.append(
                    (result.setting, method, metric, split, float(vals.mean()), stderr)
                )
    return rows
