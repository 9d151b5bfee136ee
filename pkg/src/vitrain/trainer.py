"""Training loops: the operator method, the gradient baseline, and last-layer
operator extrapolation.

Both the operator method and the baseline run the same loop; they differ only
in what fills the per-layer update directions. Batch sequences, parameter
initialization and the normalization schedule are identical for a given seed,
which is the fairness contract the comparison experiments rely on.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as mt
from .data import BINARY, Dataset
from .network import (
    BN_HALF,
    BN_OFF,
    BnState,
    Network,
    forward,
    param_gradient_sgd,
)
from .numerics import RngStream
from .vi import (
    UNCONSTRAINED,
    LayerOperator,
    ParamDomain,
    adaptive_step,
    estimate_modulus,
    layer_operators,
    last_layer_operator,
    oe_select_iterate,
    oe_step,
    pack_params,
    unpack_params,
    vi_step,
)

__all__ = [
    "METHOD_OE_LAST",
    "METHOD_SGD",
    "METHOD_SVI",
    "EvalPoint",
    "TrainConfig",
    "TrainHistory",
    "apply_bn_mode",
    "dynamics_rows",
    "evaluate_metrics",
    "history_digest",
    "history_rows",
    "make_batches",
    "train",
]

METHOD_SVI = "svi"
METHOD_SGD = "sgd"
METHOD_OE_LAST = "oe_last"
_METHODS = (METHOD_SVI, METHOD_SGD, METHOD_OE_LAST)

_STRONG_ACTS = ("sigmoid", "normal_cdf", "softplus")


@dataclass(frozen=True)
class TrainConfig:
    method: str = METHOD_SVI
    epochs: int = 100
    batch_size: int = 100
    lr: float | None = 0.01
    adaptive_kappa: bool = False
    momentum: float = 0.0
    nesterov: bool = False
    domain: ParamDomain = UNCONSTRAINED
    loss: str = "mse"
    seed: int = 0
    snapshot_every: int = 1
    bn: str | None = None
    bn_freeze_frac: float = 0.5
    record_params: bool = False
    record_dynamics: bool = False

    def __post_init__(self) -> None:
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.adaptive_kappa:
            if self.lr is not None:
                raise ValueError("set either a learning rate or adaptive_kappa")
        elif self.method != METHOD_OE_LAST and (self.lr is None or self.lr < 0):
            raise ValueError("learning rate must be >= 0")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


@dataclass
class EvalPoint:
    epoch: int
    iteration: int
    metrics: dict[str, dict[str, float]]
    params: list | None = None
    dynamics: np.ndarray | None = None


@dataclass
class TrainHistory:
    points: list[EvalPoint] = field(default_factory=list)
    batch_digest: str = ""
    init_digest: str = ""
    kappa: float | None = None
    lipschitz: float | None = None
    oe_selected_iteration: int | None = None


def make_batches(n_samples: int, batch_size: int, rng: RngStream, epochs: int):
    """Per-epoch batch index lists: a fresh uniform shuffle every epoch, cut
    into ceil(N/B) contiguous chunks with the last one possibly short."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    out = []
    per = max(1, math.ceil(n_samples / batch_size))
    for e in range(epochs):
        perm = rng.split(e).generator().permutation(n_samples)
        out.append([perm[i * batch_size : (i + 1) * batch_size] for i in range(per)])
    return out


def apply_bn_mode(net: Network, mode: str) -> None:
    """Force every layer's normalization mode, resetting running statistics."""
    net.specs = tuple(replace(s, bn=mode) for s in net.specs)
    net.bn_running = [
        BnState.fresh(s.out_channels) if s.bn != BN_OFF else None for s in net.specs
    ]
    net.bn_frozen = False


# ---------------------------------------------------------------------------
# Metric evaluation
# ---------------------------------------------------------------------------


def evaluate_metrics(net: Network, ds: Dataset, reference: Network | None = None) -> dict[str, float]:
    pred, _ = forward(net, ds.features, mode="eval", update_stats=False)
    binary = ds.label_kind == BINARY
    out = {
        "mse": mt.mse_loss(pred, ds.labels),
        "squared_mse": mt.squared_mse_loss(pred, ds.labels),
        "cross_entropy": mt.cross_entropy_loss(pred, ds.labels, binary=binary),
        "classification_error": mt.classification_error(pred, ds.labels),
        "weighted_f1": mt.weighted_f1(pred, ds.labels),
    }
    if ds.expectations is not None:
        out["l2_model_error"] = mt.lp_model_error(pred, ds.expectations, 2)
        out["l2_model_error_rel"] = mt.lp_model_error(pred, ds.expectations, 2, relative=True)
        out["linf_model_error"] = mt.lp_model_error(pred, ds.expectations, np.inf)
    if reference is not None and _params_compatible(net, reference):
        hat = list(zip(net.weights, net.biases))
        star = list(zip(reference.weights, reference.biases))
        out["l2_param_error"] = mt.lp_param_error(hat, star, 2)
        out["l2_param_error_rel"] = mt.lp_param_error(hat, star, 2, relative=True)
        out["linf_param_error"] = mt.lp_param_error(hat, star, np.inf)
    return out


def _params_compatible(a: Network, b: Network) -> bool:
    if a.n_layers != b.n_layers:
        return False
    return all(
        wa.shape == wb.shape and (ba is None) == (bb is None)
        for (wa, ba), (wb, bb) in zip(
            zip(a.weights, a.biases), zip(b.weights, b.biases)
        )
    )


def _dynamics_snapshot(net: Network, w1_init: np.ndarray) -> np.ndarray:
    """Per hidden neuron: projection of its first-layer weights onto their
    initial direction, and its scalar output weight."""
    w1 = net.weights[0]
    norms = np.linalg.norm(w1_init, axis=0)
    signed = np.einsum("ch,ch->h", w1, w1_init) / norms
    return np.stack([signed, net.weights[1][:, 0]], axis=1)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _digest_arrays(arrays) -> str:
    h = hashlib.blake2b(digest_size=16)
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def train(
    net: Network,
    train_set: Dataset,
    config: TrainConfig,
    test_set: Dataset | None = None,
    reference: Network | None = None,
) -> tuple[Network, TrainHistory]:
    """Run the configured method over the training set, mutating ``net``.

    Momentum applies to the operator method and the gradient baseline; the
    extrapolation method follows its own two-point recursion and ignores it.
    The history records metrics at epoch 0, every ``snapshot_every`` epochs,
    and the final epoch.
    """
    if config.bn is not None:
        apply_bn_mode(net, config.bn)
    if config.record_dynamics and not (
        net.n_layers == 2 and net.specs[-1].out_channels == 1
    ):
        raise ValueError("dynamics recording needs a 2-layer, scalar-output network")
    if config.adaptive_kappa and net.specs[-1].activation.kind not in _STRONG_ACTS:
        raise ValueError("adaptive schedule needs a strongly monotone capable last activation")

    rng = RngStream(config.seed)
    n = len(train_set)
    iters_per_epoch = max(1, math.ceil(n / config.batch_size))
    batches = make_batches(n, config.batch_size, rng.split(1), config.epochs)

    history = TrainHistory(
        batch_digest=_digest_arrays(np.concatenate(ep) for ep in batches) if batches else "",
        init_digest=_digest_arrays(
            w for w, b in zip(net.weights, net.biases)
        ),
    )

    kappa = None
    gamma_fixed = config.lr
    if config.adaptive_kappa:
        est = estimate_modulus(net, train_set.features)
        kappa, history.kappa, history.lipschitz = est.kappa, est.kappa, est.lipschitz
        if kappa <= 1e-12:
            raise ValueError(
                "estimated modulus is zero; the adaptive schedule does not "
                "apply, use the extrapolation method"
            )
    oe_iterates = None
    oe_prev_op = None
    last = net.n_layers - 1
    if config.method == METHOD_OE_LAST:
        est = estimate_modulus(net, train_set.features)
        history.kappa, history.lipschitz = est.kappa, est.lipschitz
        if est.lipschitz <= 0:
            raise ValueError("Lipschitz estimate is zero; cannot set the step size")
        gamma_fixed = 1.0 / (4.0 * est.lipschitz)
        oe_iterates = [pack_params(net.weights[last], net.biases[last])]

    w1_init = net.weights[0].copy() if config.record_dynamics else None
    freeze_epoch = None
    if any(s.bn == BN_HALF for s in net.specs):
        freeze_epoch = math.ceil(config.epochs * config.bn_freeze_frac)

    def record(epoch: int, iteration: int) -> None:
        point = EvalPoint(
            epoch=epoch,
            iteration=iteration,
            metrics={"train": evaluate_metrics(net, train_set, reference)},
        )
        if test_set is not None:
            point.metrics["test"] = evaluate_metrics(net, test_set, reference)
        if config.record_params:
            point.params = net.snapshot_params()
        if config.record_dynamics:
            point.dynamics = _dynamics_snapshot(net, w1_init)
        history.points.append(point)

    record(0, 0)
    velocity: list[np.ndarray | None] = [None] * net.n_layers
    t = 0
    for epoch in range(config.epochs):
        if freeze_epoch is not None and epoch == freeze_epoch:
            net.bn_frozen = True
        for idx in batches[epoch]:
            t += 1
            xb = train_set.features[idx]
            yb = train_set.labels[idx]
            _, trace = forward(net, xb, mode="train")
            gamma = adaptive_step(kappa, t) if config.adaptive_kappa else gamma_fixed
            if gamma == 0:
                continue
            if config.method == METHOD_OE_LAST:
                op = last_layer_operator(net, trace, yb)
                flat_op = pack_params(op.weight, op.bias)
                flat = oe_iterates[-1]
                if oe_prev_op is None:
                    oe_prev_op = flat_op
                new = oe_step(
                    oe_iterates[-2] if len(oe_iterates) > 1 else flat,
                    flat, oe_prev_op, flat_op, gamma_fixed, 1.0, config.domain,
                )
                oe_prev_op = flat_op
                oe_iterates.append(new)
                net.weights[last], net.biases[last] = unpack_params(
                    new, net.weights[last].shape, net.specs[last].bias
                )
                continue
            if config.method == METHOD_SVI:
                ops = layer_operators(net, trace, yb, config.loss)
            else:
                grads = param_gradient_sgd(net, trace, config.loss, yb)
                ops = [
                    LayerOperator(layer=l, weight=gw, bias=gb, batch_size=len(idx))
                    for l, (gw, gb) in enumerate(grads)
                ]
            for l, op in enumerate(ops):
                flat = pack_params(net.weights[l], net.biases[l])
                flat_op = pack_params(op.weight, op.bias)
                flat, velocity[l] = vi_step(
                    flat, flat_op, gamma, config.domain,
                    velocity[l], config.momentum, config.nesterov,
                )
                net.weights[l], net.biases[l] = unpack_params(
                    flat, net.weights[l].shape, net.specs[l].bias
                )
        done = epoch + 1
        if done % config.snapshot_every == 0 or done == config.epochs:
            record(done, t)

    if config.method == METHOD_OE_LAST and len(oe_iterates) > 2:
        chosen = oe_select_iterate(oe_iterates, rng.split(2))
        history.oe_selected_iteration = oe_iterates.index(chosen)
        net.weights[last], net.biases[last] = unpack_params(
            chosen, net.weights[last].shape, net.specs[last].bias
        )
        record(config.epochs, t)
    return net, history


# ---------------------------------------------------------------------------
# Tabular exports
# ---------------------------------------------------------------------------


def history_rows(history: TrainHistory):
    """Long-format rows ``(epoch, iter, split, metric, value)``."""
    rows = []
    for pt in history.points:
        for split in sorted(pt.metrics):
            for name in sorted(pt.metrics[split]):
                rows.append((pt.epoch, pt.iteration, split, name, pt.metrics[split][name]))
    return rows


def dynamics_rows(history: TrainHistory):
    """Rows ``(snapshot, neuron, signed_norm, out_weight)`` for 2-layer runs."""
    rows = []
    snap_points = [p for p in history.points if p.dynamics is not None]
    if not snap_points:
        raise ValueError("history has no dynamics snapshots")
    for s, pt in enumerate(snap_points):
        for h in range(pt.dynamics.shape[0]):
            rows.append((s, h, float(pt.dynamics[h, 0]), float(pt.dynamics[h, 1])))
    return rows


def history_digest(history: TrainHistory) -> str:
    h = hashlib.blake2b(digest_size=16)
    for row in history_rows(history):
        h.update(repr(row).encode())
    for pt in history.points:
        if pt.params is not None:
            for w, b in pt.params:
                h.update(w.tobytes())
                if b is not None:
                    h.update(b.tobytes())
    return h.hexdigest()
