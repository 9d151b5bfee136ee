"""Monotone operator construction and the projected iteration it drives.

The last-layer operator is the batch mean of ``eta(X_L)^T (phi(Z_L) - Y)``;
hidden layers replace the residual with the gradient of the loss at the
layer's output. Under batch normalization the operators are directions for
the normalized parameters, so they are rescaled by the batch sigma to act on
the raw weights and biases.

Step rules: plain projected steps with optional heavy-ball or Nesterov
momentum (the torch.optim.SGD formulas, pinned explicitly), the modulus
adaptive schedule ``1 / (kappa (t+1))``, and operator extrapolation for the
merely monotone case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import BN_OFF, ForwardTrace, Network, backward_pass
from .numerics import (
    RngStream,
    activation_lipschitz,
    ensure_finite,
    min_activation_derivative,
    sym_eig,
)

__all__ = [
    "LayerOperator",
    "ModulusEstimate",
    "ParamDomain",
    "UNCONSTRAINED",
    "adaptive_step",
    "estimate_modulus",
    "hidden_layer_operator",
    "last_layer_operator",
    "layer_operators",
    "oe_select_iterate",
    "oe_step",
    "pack_params",
    "project",
    "unpack_params",
    "vi_step",
]


@dataclass
class LayerOperator:
    """Operator estimate for one layer, shaped like that layer's parameters."""

    layer: int
    weight: np.ndarray
    bias: np.ndarray | None
    batch_size: int


@dataclass(frozen=True)
class ParamDomain:
    """Feasible set for one layer's stacked parameter vector."""

    kind: str = "unconstrained"
    radius: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("unconstrained", "ball"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "ball" and not (self.radius and self.radius > 0):
            raise ValueError("ball domain needs a positive radius")


UNCONSTRAINED = ParamDomain()


@dataclass(frozen=True)
class ModulusEstimate:
    kappa: float
    lipschitz: float
    sample_count: int

    def __post_init__(self) -> None:
        if self.kappa > self.lipschitz + 1e-9:
            raise ValueError("kappa estimate exceeds the Lipschitz estimate")


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _bn_rescale(op_w, op_b, trace: ForwardTrace, layer: int):
    sigma = trace.bn_sigma[layer]
    if sigma is None:
        return op_w, op_b
    return op_w * sigma, None if op_b is None else op_b * sigma


def last_layer_operator(net: Network, trace: ForwardTrace, y: np.ndarray) -> LayerOperator:
    """Batch mean of ``eta^T (prediction - y)`` at the final layer."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    b = trace.batch_size
    if b < 1 or y.shape[0] != b:
        raise ValueError("labels do not match the traced batch")
    l = net.n_layers - 1
    resid = trace.outputs[l] - y
    eta = trace.filtered[l]
    op_w = np.einsum("bnc,bnf->cf", eta, resid) / b
    op_b = resid.sum(axis=(0, 1)) / b if net.specs[l].bias else None
    op_w, op_b = _bn_rescale(op_w, op_b, trace, l)
    ensure_finite(op_w, "last-layer operator")
    return LayerOperator(layer=l, weight=op_w, bias=op_b, batch_size=b)


def hidden_layer_operator(
    net: Network, trace: ForwardTrace, y: np.ndarray, loss: str, layer: int
) -> LayerOperator:
    """Batch mean of ``eta^T grad_wrt_hidden`` for a non-final layer."""
    if not 0 <= layer < net.n_layers - 1:
        raise ValueError("hidden operator only defined below the final layer")
    _, hidden = backward_pass(net, trace, loss, y)
    return _hidden_operator_from(net, trace, hidden, layer)


def _hidden_operator_from(net, trace, hidden, layer) -> LayerOperator:
    b = trace.batch_size
    g = hidden[layer]
    eta = trace.filtered[layer]
    op_w = np.einsum("bnc,bnf->cf", eta, g) / b
    op_b = g.sum(axis=(0, 1)) / b if net.specs[layer].bias else None
    op_w, op_b = _bn_rescale(op_w, op_b, trace, layer)
    ensure_finite(op_w, f"hidden operator {layer}")
    return LayerOperator(layer=layer, weight=op_w, bias=op_b, batch_size=b)


def layer_operators(net: Network, trace: ForwardTrace, y: np.ndarray, loss: str) -> list[LayerOperator]:
    """All per-layer operators from a single trace and a single backward sweep."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    ops: list[LayerOperator] = []
    if net.n_layers > 1:
        _, hidden = backward_pass(net, trace, loss, y)
        for l in range(net.n_layers - 1):
            ops.append(_hidden_operator_from(net, trace, hidden, l))
    ops.append(last_layer_operator(net, trace, y))
    return ops


# ---------------------------------------------------------------------------
# Modulus and smoothness estimation
# ---------------------------------------------------------------------------


def estimate_modulus(net: Network, x: np.ndarray) -> ModulusEstimate:
    """Estimate the strong-monotonicity modulus and Lipschitz constant of the
    last-layer operator from a data sample.

    kappa multiplies the smallest activation derivative seen at the realized
    final preactivations by the sample mean of the smallest eigenvalue of
    ``eta^T eta``; the Lipschitz estimate multiplies the activation's global
    Lipschitz constant by the sample mean of the squared spectral norm of
    ``eta``.
    """
    from .network import forward

    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] < 1:
        raise ValueError("need a non-empty sample")
    _, trace = forward(net, x, mode="eval", update_stats=False)
    l = net.n_layers - 1
    act = net.specs[l].activation
    eta = trace.filtered[l]
    lam_min = np.empty(x.shape[0])
    lam_max = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        gram = eta[i].T @ eta[i]
        values, _ = sym_eig(gram)
        lam_min[i] = values.min()
        lam_max[i] = values.max()
    kappa = min_activation_derivative(act, trace.act_input[l]) * max(0.0, float(lam_min.mean()))
    lipschitz = activation_lipschitz(act) * float(lam_max.mean())
    return ModulusEstimate(kappa=kappa, lipschitz=lipschitz, sample_count=x.shape[0])


# ---------------------------------------------------------------------------
# Parameter packing, projection and steps (flat per-layer vectors)
# ---------------------------------------------------------------------------


def pack_params(weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    if bias is None:
        return weight.ravel().copy()
    return np.concatenate([weight.ravel(), bias.ravel()])


def unpack_params(vec: np.ndarray, weight_shape, has_bias: bool):
    k = int(np.prod(weight_shape))
    w = vec[:k].reshape(weight_shape).copy()
    b = vec[k:].copy() if has_bias else None
    return w, b


def project(theta: np.ndarray, domain: ParamDomain) -> np.ndarray:
    """Euclidean projection of a flat parameter vector onto the domain."""
    if domain.kind == "unconstrained":
        return theta
    norm = float(np.linalg.norm(theta))
    if norm <= domain.radius:
        return theta
    return theta * (domain.radius / norm)


def vi_step(
    theta: np.ndarray,
    op: np.ndarray,
    gamma: float,
    domain: ParamDomain = UNCONSTRAINED,
    velocity: np.ndarray | None = None,
    momentum: float = 0.0,
    nesterov: bool = False,
):
    """One projected operator step, optionally with momentum.

    With momentum the velocity accumulates operators, ``v <- mu v + F``, and
    the update direction is ``v`` (heavy ball) or ``F + mu v`` (Nesterov's
    lookahead in its common reformulation). Returns the new parameters and
    the new velocity.
    """
    if gamma <= 0:
        raise ValueError("step size must be positive")
    if momentum == 0.0:
        direction = op
        new_velocity = velocity
    else:
        new_velocity = op if velocity is None else momentum * velocity + op
        direction = op + momentum * new_velocity if nesterov else new_velocity
    return project(theta - gamma * direction, domain), new_velocity


def adaptive_step(kappa: float, t: int) -> float:
    """Step size ``1 / (kappa (t+1))`` for a strongly monotone operator."""
    if kappa <= 0:
        raise ValueError("adaptive schedule needs kappa > 0; use extrapolation instead")
    if t < 0:
        raise ValueError("iteration index must be >= 0")
    return 1.0 / (kappa * (t + 1))


def oe_step(
    prev_theta: np.ndarray,
    theta: np.ndarray,
    prev_op: np.ndarray,
    op: np.ndarray,
    gamma: float,
    lam: float = 1.0,
    domain: ParamDomain = UNCONSTRAINED,
) -> np.ndarray:
    """Operator-extrapolation update ``Proj(theta - gamma (F + lam (F - F_prev)))``."""
    if gamma <= 0:
        raise ValueError("step size must be positive")
    del prev_theta  # kept in the signature to mirror the two-point recursion
    return project(theta - gamma * (op + lam * (op - prev_op)), domain)


def oe_select_iterate(iterates, rng: RngStream) -> np.ndarray:
    """Pick the returned iterate uniformly from indices 2..T.

    ``iterates[t]`` is the parameter vector after ``t`` steps, with
    ``iterates[0]`` the initial point, so ``T = len(iterates) - 1 >= 2``.
    """
    t_final = len(iterates) - 1
    if t_final < 2:
        raise ValueError("need at least two completed steps to select from")
    r = int(rng.generator().integers(2, t_final + 1))
    return iterates[r]
