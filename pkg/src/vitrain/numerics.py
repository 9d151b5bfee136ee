"""Dense numerics shared by every other module.

Matrices are plain float64 numpy arrays (row-major). Functions here are pure:
they never mutate their inputs, and random draws are fully determined by the
(seed, stream) pair of the :class:`RngStream` they receive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Activation",
    "DerivativeBoundUnavailable",
    "RngStream",
    "activation_lipschitz",
    "activation_vjp",
    "apply_activation",
    "ensure_finite",
    "gaussian",
    "matmul",
    "min_activation_derivative",
    "normal_cdf",
    "normal_pdf",
    "sym_eig",
    "sym_eig_max",
    "sym_eig_min",
    "uniform",
]

_MASK64 = (1 << 64) - 1
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DerivativeBoundUnavailable(ValueError):
    """Raised when an activation has no useful positive derivative bound."""


def ensure_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")
    return a


# ---------------------------------------------------------------------------
# Deterministic, splittable random streams
# ---------------------------------------------------------------------------


def _mix64(z: int) -> int:
    """SplitMix64 finalizer; decorrelates derived stream ids."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngStream:
    """A named position in a counter-based random sequence.

    The same ``(seed, stream)`` pair always yields the same draws, on any
    platform. Streams are value-like: drawing from one does not advance it,
    so callers that need several independent sequences derive children with
    :meth:`split`.
    """

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", self.seed & _MASK64)
        object.__setattr__(self, "stream", self.stream & _MASK64)

    def split(self, label: int) -> "RngStream":
        """Child stream for an integer label; children never collide in practice."""
        return RngStream(self.seed, _mix64(self.stream ^ _mix64(label & _MASK64)))

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def gaussian(rng: RngStream, mean: float, stddev: float, shape) -> np.ndarray:
    """Gaussian draws; ``stddev=0`` returns a constant array of ``mean``."""
    if stddev < 0:
        raise ValueError("stddev must be >= 0")
    z = rng.generator().standard_normal(shape)
    return z * stddev + mean


def uniform(rng: RngStream, low: float, high: float, shape) -> np.ndarray:
    return rng.generator().uniform(low, high, shape)


# ---------------------------------------------------------------------------
# Matrix product and symmetric eigensolver
# ---------------------------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def _check_symmetric(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) > tol:
        raise ValueError("matrix is not symmetric within tolerance")
    return a


def sym_eig(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Returns ``(values, vectors)`` with ``vectors[:, k]`` the eigenvector for
    ``values[k]``. Pairs are reported in the order they settle on the diagonal,
    which is deterministic for a given input; callers that need a particular
    order sort explicitly. Sweeps stop once the off-diagonal Frobenius norm
    drops below ``tol`` (scaled up for very large inputs).
    """
    a = _check_symmetric(a)
    n = a.shape[0]
    d = a.copy()
    v = np.eye(n)
    if n < 2:
        return np.diag(d).copy(), v
    stop = max(tol, 1e-15 * max(1.0, float(np.linalg.norm(a))))
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(d[off_mask]))
        if off < stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = d[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (d[q, q] - d[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = np.sign(theta) if theta != 0 else 1.0
                    t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * d[:, p] - s * d[:, q]
                rot_q = s * d[:, p] + c * d[:, q]
                d[:, p], d[:, q] = rot_p, rot_q
                rot_p = c * d[p, :] - s * d[q, :]
                rot_q = s * d[p, :] + c * d[q, :]
                d[p, :], d[q, :] = rot_p, rot_q
                d[p, q] = d[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    else:
        raise FloatingPointError("Jacobi sweeps failed to converge")
    return np.diag(d).copy(), v


def sym_eig_min(a: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    values, _ = sym_eig(a)
    return float(values.min())


def sym_eig_max(a: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    values, _ = sym_eig(a)
    return float(values.max())


# ---------------------------------------------------------------------------
# Scalar special functions
# ---------------------------------------------------------------------------


def normal_cdf(x):
    """Standard normal CDF, accurate to well below 1e-7."""
    return ndtr(x) if np.ndim(x) else float(ndtr(x))


def normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

IDENTITY = "identity"
RELU = "relu"
SIGMOID = "sigmoid"
SOFTMAX = "softmax"
SOFTPLUS = "softplus"
NORMAL_CDF = "normal_cdf"

_KINDS = (IDENTITY, RELU, SIGMOID, SOFTMAX, SOFTPLUS, NORMAL_CDF)


@dataclass(frozen=True)
class Activation:
    """An activation function; ``beta`` only applies to softplus."""

    kind: str
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == SOFTPLUS and not self.beta > 0:
            raise ValueError("softplus beta must be > 0")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def apply_activation(act: Activation, z: np.ndarray) -> np.ndarray:
    """Apply the activation elementwise (rowwise along the last axis for softmax)."""
    z = np.asarray(z, dtype=np.float64)
    if act.kind == IDENTITY:
        return z.copy()
    if act.kind == RELU:
        return np.maximum(z, 0.0)
    if act.kind == SIGMOID:
        return _sigmoid(z)
    if act.kind == SOFTMAX:
        if z.shape[-1] < 2:
            raise ValueError("softmax needs at least 2 channels")
        return _softmax(z)
    if act.kind == SOFTPLUS:
        b = act.beta
        # log1p(exp(b z)) / b, computed stably on both tails
        return np.logaddexp(0.0, b * z) / b
    if act.kind == NORMAL_CDF:
        return ndtr(z)
    raise AssertionError(act.kind)


def activation_vjp(act: Activation, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pull ``upstream`` back through the activation's Jacobian at ``z``.

    Pointwise kinds multiply by the derivative; softmax contracts the full
    rowwise ``diag(s) - s s^T`` block. The ReLU derivative at exactly 0 is 0.
    """
    z = np.asarray(z, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if z.shape != upstream.shape:
        raise ValueError("z and upstream must have the same shape")
    if act.kind == IDENTITY:
        return upstream.copy()
    if act.kind == RELU:
        return np.where(z > 0, upstream, 0.0)
    if act.kind == SIGMOID:
        s = _sigmoid(z)
        return upstream * s * (1.0 - s)
    if act.kind == SOFTMAX:
        s = _softmax(z)
        su = s * upstream
        return su - s * su.sum(axis=-1, keepdims=True)
    if act.kind == SOFTPLUS:
        return upstream * _sigmoid(act.beta * z)
    if act.kind == NORMAL_CDF:
        return upstream * normal_pdf(z)
    raise AssertionError(act.kind)


def min_activation_derivative(act: Activation, z: np.ndarray) -> float:
    """Smallest Jacobian eigenvalue of the activation over the given inputs.

    For pointwise differentiable kinds this is the smallest derivative seen
    at any entry of ``z``; for softmax it is exactly 0 because every Jacobian
    block annihilates the all-ones vector. ReLU and identity carry no useful
    bound and raise :class:`DerivativeBoundUnavailable`.
    """
    z = np.asarray(z, dtype=np.float64)
    if act.kind == SIGMOID:
        s = _sigmoid(z)
        return float(np.min(s * (1.0 - s)))
    if act.kind == SOFTMAX:
        return 0.0
    if act.kind == SOFTPLUS:
        return float(np.min(_sigmoid(act.beta * z)))
    if act.kind == NORMAL_CDF:
        return float(np.min(normal_pdf(z)))
    raise DerivativeBoundUnavailable(
        f"derivative bound unavailable for {act.kind}; treat as 0"
    )


def activation_lipschitz(act: Activation) -> float:
    """Lipschitz constant used when estimating operator smoothness."""
    if act.kind == SIGMOID:
        return 0.25
    if act.kind == SOFTMAX:
        return 1.0
    if act.kind == NORMAL_CDF:
        return _INV_SQRT_2PI
    if act.kind == SOFTPLUS:
        return act.beta / 4.0
    if act.kind in (RELU, IDENTITY):
        return 1.0
    raise AssertionError(act.kind)
