"""Layered networks whose every layer factors as ``activation(filter(X) @ W + b)``.

The filter is parameter-free (identity, graph convolution, Chebyshev stack,
or neighbor-mean concatenation), so the trainable part of each layer is the
channel-mixing matrix plus an optional bias. Batch normalization, when
enabled, sits between the linear map and the activation.

The forward pass caches everything the backward pass and the operator
construction need in a :class:`ForwardTrace`. Batches are arrays of shape
``(B, n, C)``; tabular data uses ``n = 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph
from .numerics import (
    Activation,
    RngStream,
    activation_vjp,
    apply_activation,
    ensure_finite,
    gaussian,
    uniform,
)

__all__ = [
    "BN_HALF",
    "BN_OFF",
    "BN_ON",
    "BnState",
    "ForwardTrace",
    "LayerSpec",
    "Network",
    "backward_pass",
    "filter_transpose_apply",
    "filter_width",
    "forward",
    "forward_from",
    "grad_wrt_hidden",
    "init_params",
    "load_network",
    "param_gradient_sgd",
    "save_network",
    "training_loss",
]

FILTER_DENSE = "dense"
FILTER_GCN = "gcn"
FILTER_CHEB = "cheb"
FILTER_SAGE = "sage"
_FILTERS = (FILTER_DENSE, FILTER_GCN, FILTER_CHEB, FILTER_SAGE)

BN_OFF = "off"
BN_ON = "on"
BN_HALF = "half"
_BN_MODES = (BN_OFF, BN_ON, BN_HALF)

BN_EPS_SIGMA = 1e-5
BN_MOMENTUM = 0.1
_CLIP = 1e-12

LOSS_MSE = "mse"
LOSS_BCE = "bce"
LOSS_CCE = "cce"
_LOSSES = (LOSS_MSE, LOSS_BCE, LOSS_CCE)


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    filter: str = FILTER_DENSE
    activation: Activation = Activation("identity")
    bias: bool = True
    bn: str = BN_OFF
    cheb_order: int = 1

    def __post_init__(self) -> None:
        if self.filter not in _FILTERS:
            raise ValueError(f"unknown filter {self.filter!r}")
        if self.bn not in _BN_MODES:
            raise ValueError(f"unknown bn mode {self.bn!r}")
        if self.filter == FILTER_CHEB and self.cheb_order < 1:
            raise ValueError("Chebyshev order must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")


def filter_width(spec: LayerSpec) -> int:
    """Channel count after the filter (Chebyshev stacks, SAGE concatenates)."""
    if spec.filter == FILTER_CHEB:
        return spec.in_channels * spec.cheb_order
    if spec.filter == FILTER_SAGE:
        return 2 * spec.in_channels
    return spec.in_channels


@dataclass
class BnState:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "BnState":
        return cls(mean=np.zeros(channels), var=np.ones(channels))


@dataclass
class Network:
    specs: tuple[LayerSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray | None]
    graph: Graph | None = None
    bn_running: list[BnState | None] = field(default_factory=list)
    bn_frozen: bool = False

    def __post_init__(self) -> None:
        self.specs = tuple(self.specs)
        _validate_specs(self.specs, self.graph)
        if not self.bn_running:
            self.bn_running = [
                BnState.fresh(s.out_channels) if s.bn != BN_OFF else None
                for s in self.specs
            ]
        for l, spec in enumerate(self.specs):
            w = self.weights[l]
            if w.shape != (filter_width(spec), spec.out_channels):
                raise ValueError(f"layer {l} weight shape {w.shape} mismatches spec")
            ensure_finite(w, f"layer {l} weights")
            b = self.biases[l]
            if spec.bias:
                if b is None or b.shape != (spec.out_channels,):
                    raise ValueError(f"layer {l} bias missing or mis-shaped")
                ensure_finite(b, f"layer {l} bias")
            elif b is not None:
                raise ValueError(f"layer {l} has bias disabled but a bias array")

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    def snapshot_params(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        return [
            (w.copy(), None if b is None else b.copy())
            for w, b in zip(self.weights, self.biases)
        ]

    def load_params(self, params) -> None:
        for l, (w, b) in enumerate(params):
            self.weights[l] = w.copy()
            self.biases[l] = None if b is None else b.copy()

    def uses_bn(self) -> bool:
        return any(s.bn != BN_OFF for s in self.specs)


def _validate_specs(specs, graph) -> None:
    if not specs:
        raise ValueError("network needs at least one layer")
    for l, spec in enumerate(specs):
        if spec.activation.kind == "softmax" and l != len(specs) - 1:
            raise ValueError("softmax is only permitted on the final layer")
        if spec.filter != FILTER_DENSE and graph is None:
            raise ValueError(f"layer {l} uses a graph filter but no graph is set")
        if l > 0 and spec.in_channels != specs[l - 1].out_channels:
            raise ValueError(
                f"layer {l} expects {spec.in_channels} channels, previous layer "
                f"produces {specs[l - 1].out_channels}"
            )


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

INIT_GLOROT = "glorot"
INIT_TEACHER = "teacher"


def init_params(specs, scheme: str, rng: RngStream, graph: Graph | None = None) -> Network:
    """Build a network with freshly initialized parameters.

    ``glorot`` draws weights uniformly on +-sqrt(6 / (fan_in + fan_out)) with
    zero biases; ``teacher`` draws every weight and bias i.i.d. from a unit
    variance Gaussian centered at 1 (used to plant ground-truth models).
    """
    specs = tuple(specs)
    _validate_specs(specs, graph)
    weights: list[np.ndarray] = []
    biases: list[np.ndarray | None] = []
    for l, spec in enumerate(specs):
        shape = (filter_width(spec), spec.out_channels)
        layer_rng = rng.split(l)
        if scheme == INIT_GLOROT:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            w = uniform(layer_rng.split(0), -limit, limit, shape)
            b = np.zeros(spec.out_channels) if spec.bias else None
        elif scheme == INIT_TEACHER:
            w = gaussian(layer_rng.split(0), 1.0, 1.0, shape)
            b = gaussian(layer_rng.split(1), 1.0, 1.0, spec.out_channels) if spec.bias else None
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        weights.append(w)
        biases.append(b)
    return Network(specs=specs, weights=weights, biases=biases, graph=graph)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Per-layer cache from one forward pass over a batch."""

    mode: str
    inputs: list[np.ndarray]
    filtered: list[np.ndarray]
    preact: list[np.ndarray]
    bn_normed: list[np.ndarray | None]
    bn_mean: list[np.ndarray | None]
    bn_sigma: list[np.ndarray | None]
    bn_live: list[bool]
    bn_floored: list[np.ndarray | None]
    act_input: list[np.ndarray]
    outputs: list[np.ndarray]

    @property
    def prediction(self) -> np.ndarray:
        return self.outputs[-1]

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, :, :]
    if x.ndim == 3:
        return x
    raise ValueError(f"expected (n, C) or (B, n, C) input, got shape {x.shape}")


def _apply_filter(spec: LayerSpec, graph: Graph | None, x: np.ndarray) -> np.ndarray:
    from . import graphs as gr

    if spec.filter == FILTER_DENSE:
        return x
    if spec.filter == FILTER_GCN:
        return gr.gcn_filter(graph, x)
    if spec.filter == FILTER_CHEB:
        return gr.chebyshev_feature_map(graph, x, spec.cheb_order)
    if spec.filter == FILTER_SAGE:
        return gr.sage_feature_map(graph, x)
    raise AssertionError(spec.filter)


def filter_transpose_apply(spec: LayerSpec, graph: Graph | None, d_eta: np.ndarray) -> np.ndarray:
    """Pull a gradient at the filter output back to the layer input."""
    if spec.filter == FILTER_DENSE:
        return d_eta
    if spec.filter == FILTER_GCN:
        return graph.gcn_matrix @ d_eta
    if spec.filter == FILTER_CHEB:
        lhat = graph.laplacian_rescaled
        c = spec.in_channels
        prev = np.eye(graph.n)
        cur = lhat
        out = cur @ d_eta[..., :c]
        for k in range(1, spec.cheb_order):
            prev, cur = cur, 2.0 * (lhat @ cur) - prev
            out = out + cur @ d_eta[..., k * c : (k + 1) * c]
        return out
    if spec.filter == FILTER_SAGE:
        c = spec.in_channels
        return d_eta[..., :c] + graph.mean_aggregation_matrix.T @ d_eta[..., c:]
    raise AssertionError(spec.filter)


def _bn_forward(net: Network, layer: int, z: np.ndarray, mode: str, update_stats: bool):
    """Returns (normed, mean, sigma, live, floored_mask)."""
    state = net.bn_running[layer]
    live = mode == "train" and not net.bn_frozen
    if live:
        mean = z.mean(axis=(0, 1))
        var = z.var(axis=(0, 1))
        sigma = np.sqrt(var)
        floored = sigma < BN_EPS_SIGMA
        sigma = np.maximum(sigma, BN_EPS_SIGMA)
        if update_stats:
            state.mean = (1.0 - BN_MOMENTUM) * state.mean + BN_MOMENTUM * mean
            state.var = (1.0 - BN_MOMENTUM) * state.var + BN_MOMENTUM * var
    else:
        mean = state.mean
        sigma = np.maximum(np.sqrt(state.var), BN_EPS_SIGMA)
        floored = np.zeros(mean.shape, dtype=bool)
    normed = (z - mean) / sigma
    return normed, mean, sigma, live, floored


def forward(
    net: Network,
    x: np.ndarray,
    mode: str = "train",
    update_stats: bool | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the network over a batch, caching per-layer intermediates.

    In train mode batch-normalized layers use batch statistics (and update
    running statistics unless ``update_stats=False`` or the network's BN is
    frozen); in eval mode they use the running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if update_stats is None:
        update_stats = mode == "train"
    squeeze = np.asarray(x).ndim == 2
    cur = _as_batch(x)
    if cur.shape[-1] != net.specs[0].in_channels:
        raise ValueError(
            f"input has {cur.shape[-1]} channels, first layer expects "
            f"{net.specs[0].in_channels}"
        )
    trace = ForwardTrace("train" if mode == "train" else "eval",
                         [], [], [], [], [], [], [], [], [], [])
    for l, spec in enumerate(net.specs):
        trace.inputs.append(cur)
        eta = _apply_filter(spec, net.graph, cur)
        trace.filtered.append(eta)
        z = eta @ net.weights[l]
        if spec.bias:
            z = z + net.biases[l]
        trace.preact.append(z)
        if spec.bn != BN_OFF:
            normed, mean, sigma, live, floored = _bn_forward(net, l, z, mode, update_stats)
            trace.bn_normed.append(normed)
            trace.bn_mean.append(mean)
            trace.bn_sigma.append(sigma)
            trace.bn_live.append(live)
            trace.bn_floored.append(floored)
            act_in = normed
        else:
            trace.bn_normed.append(None)
            trace.bn_mean.append(None)
            trace.bn_sigma.append(None)
            trace.bn_live.append(False)
            trace.bn_floored.append(None)
            act_in = z
        trace.act_input.append(act_in)
        cur = apply_activation(spec.activation, act_in)
        trace.outputs.append(cur)
    ensure_finite(cur, "network prediction")
    return (cur[0] if squeeze else cur), trace


def forward_from(net: Network, start_layer: int, x_mid: np.ndarray, mode: str = "train") -> np.ndarray:
    """Prediction from an intermediate representation onward; never touches
    running statistics."""
    cur = _as_batch(x_mid)
    for l in range(start_layer, net.n_layers):
        spec = net.specs[l]
        eta = _apply_filter(spec, net.graph, cur)
        z = eta @ net.weights[l]
        if spec.bias:
            z = z + net.biases[l]
        if spec.bn != BN_OFF:
            z, *_ = _bn_forward(net, l, z, mode, update_stats=False)
        cur = apply_activation(spec.activation, z)
    return cur


# ---------------------------------------------------------------------------
# Losses (per-sample loss sums over nodes; batches aggregate by mean)
# ---------------------------------------------------------------------------


def training_loss(loss: str, pred: np.ndarray, y: np.ndarray, reduction: str = "mean") -> float:
    """Scalar training objective over a batch.

    Per sample: squared error is ``0.5 * sum((p - y)^2)``; cross entropies sum
    the per-node terms with probabilities clipped at 1e-12. ``reduction`` is
    ``mean`` (over samples) or ``sum``.
    """
    pred = _as_batch(pred)
    y = _as_batch(y)
    if pred.shape != y.shape:
        raise ValueError("prediction and label shapes differ")
    if loss == LOSS_MSE:
        per = 0.5 * np.sum((pred - y) ** 2, axis=(1, 2))
    elif loss == LOSS_BCE:
        p = np.clip(pred, _CLIP, 1.0 - _CLIP)
        per = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p), axis=(1, 2))
    elif loss == LOSS_CCE:
        p = np.clip(pred, _CLIP, None)
        per = -np.sum(y * np.log(p), axis=(1, 2))
    else:
        raise ValueError(f"unknown loss {loss!r}")
    total = float(per.sum())
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / pred.shape[0]
    raise ValueError(f"unknown reduction {reduction!r}")


def _loss_pred_gradient(loss: str, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample gradient of the per-sample loss at the prediction."""
    if loss == LOSS_MSE:
        return pred - y
    if loss == LOSS_BCE:
        p = np.clip(pred, _CLIP, 1.0 - _CLIP)
        inside = (pred > _CLIP) & (pred < 1.0 - _CLIP)
        return np.where(inside, (p - y) / (p * (1.0 - p)), 0.0)
    if loss == LOSS_CCE:
        p = np.clip(pred, _CLIP, None)
        return np.where(pred > _CLIP, -y / p, 0.0)
    raise ValueError(f"unknown loss {loss!r}")


def _fused_ce(spec: LayerSpec, loss: str) -> bool:
    kind = spec.activation.kind
    return (kind == "sigmoid" and loss == LOSS_BCE) or (
        kind == "softmax" and loss == LOSS_CCE
    )


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _bn_backward(trace: ForwardTrace, layer: int, d_normed: np.ndarray) -> np.ndarray:
    sigma = trace.bn_sigma[layer]
    if not trace.bn_live[layer]:
        return d_normed / sigma
    normed = trace.bn_normed[layer]
    mean_d = d_normed.mean(axis=(0, 1))
    mean_dn = (d_normed * normed).mean(axis=(0, 1))
    full = (d_normed - mean_d - normed * mean_dn) / sigma
    capped = (d_normed - mean_d) / sigma
    return np.where(trace.bn_floored[layer], capped, full)


def backward_pass(net: Network, trace: ForwardTrace, loss: str, y: np.ndarray):
    """One reverse sweep; returns per-layer parameter gradients and hidden
    gradients.

    The sweep differentiates the batch-summed loss. ``param_grads[l]`` is the
    pair ``(dW, db)`` summed over the batch (callers divide by the batch size
    for a mean). ``hidden_grads[l]`` is the gradient with respect to the
    output of layer ``l`` for ``l < L - 1``, one matrix per sample; without
    batch normalization these are exactly the per-sample loss gradients.

    When the final activation and loss form a matched cross-entropy pair
    (sigmoid with binary, softmax with categorical) the gradient at the final
    preactivation is computed directly as ``prediction - y``; this keeps the
    parameter gradient bit-identical to the monotone-operator construction.
    """
    y = _as_batch(y)
    L = net.n_layers
    pred = trace.outputs[-1]
    if pred.shape != y.shape:
        raise ValueError("label shape does not match prediction")
    param_grads: list[tuple[np.ndarray, np.ndarray | None]] = [None] * L
    hidden_grads: list[np.ndarray | None] = [None] * L
    fused = _fused_ce(net.specs[-1], loss)
    d_out = None if fused else _loss_pred_gradient(loss, pred, y)
    for l in range(L - 1, -1, -1):
        spec = net.specs[l]
        if fused and l == L - 1:
            d_act_in = pred - y
        else:
            d_act_in = activation_vjp(spec.activation, trace.act_input[l], d_out)
        if spec.bn != BN_OFF:
            dz = _bn_backward(trace, l, d_act_in)
        else:
            dz = d_act_in
        eta = trace.filtered[l]
        dw = np.einsum("bnc,bnf->cf", eta, dz)
        db = dz.sum(axis=(0, 1)) if spec.bias else None
        param_grads[l] = (dw, db)
        if l > 0:
            d_eta = dz @ net.weights[l].T
            d_out = filter_transpose_apply(spec, net.graph, d_eta)
            hidden_grads[l - 1] = d_out
    return param_grads, hidden_grads


def param_gradient_sgd(net: Network, trace: ForwardTrace, loss: str, y: np.ndarray):
    """Exact gradients of the batch-mean loss for every weight and bias.

    Under batch normalization these are gradients with respect to the raw
    parameters, including the dependence of the batch statistics on them.
    """
    if trace.mode != "train":
        raise ValueError("parameter gradients need a train-mode trace")
    b = trace.batch_size
    grads, _ = backward_pass(net, trace, loss, y)
    return [(dw / b, None if db is None else db / b) for dw, db in grads]


def grad_wrt_hidden(net: Network, trace: ForwardTrace, loss: str, y: np.ndarray, layer: int):
    """Per-sample gradients of the batch loss at the output of ``layer``.

    Valid for every layer but the last; the final layer is handled by the
    operator construction instead.
    """
    if trace.mode != "train":
        raise ValueError("hidden gradients need a train-mode trace")
    if not 0 <= layer < net.n_layers - 1:
        raise ValueError("hidden gradient only defined for non-final layers")
    _, hidden = backward_pass(net, trace, loss, y)
    return hidden[layer]


# ---------------------------------------------------------------------------
# Checkpoints (canonical JSON text; round-trips byte-identically)
# ---------------------------------------------------------------------------


def _spec_to_dict(spec: LayerSpec) -> dict:
    return {
        "in_channels": spec.in_channels,
        "out_channels": spec.out_channels,
        "filter": spec.filter,
        "activation": spec.activation.kind,
        "beta": spec.activation.beta,
        "bias": spec.bias,
        "bn": spec.bn,
        "cheb_order": spec.cheb_order,
    }


def _spec_from_dict(d: dict) -> LayerSpec:
    return LayerSpec(
        in_channels=d["in_channels"],
        out_channels=d["out_channels"],
        filter=d["filter"],
        activation=Activation(d["activation"], d["beta"]),
        bias=d["bias"],
        bn=d["bn"],
        cheb_order=d["cheb_order"],
    )


def save_network(net: Network, path) -> None:
    doc = {
        "specs": [_spec_to_dict(s) for s in net.specs],
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [None if b is None else b.tolist() for b in net.biases],
        "bn_running": [
            None if st is None else {"mean": st.mean.tolist(), "var": st.var.tolist()}
            for st in net.bn_running
        ],
        "bn_frozen": net.bn_frozen,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_network(path, graph: Graph | None = None) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    specs = tuple(_spec_from_dict(d) for d in doc["specs"])
    weights = [
        np.array(w, dtype=np.float64).reshape(filter_width(s), s.out_channels)
        for w, s in zip(doc["weights"], specs)
    ]
    biases = [
        None if b is None else np.array(b, dtype=np.float64)
        for b in doc["biases"]
    ]
    bn_running = [
        None
        if st is None
        else BnState(np.array(st["mean"]), np.array(st["var"]))
        for st in doc["bn_running"]
    ]
    return Network(
        specs=specs,
        weights=weights,
        biases=biases,
        graph=graph,
        bn_running=bn_running,
        bn_frozen=doc["bn_frozen"],
    )
