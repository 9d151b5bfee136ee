"""Evaluation metrics for recovery and prediction experiments.

Conventions: predictions and labels are batches of shape ``(N, n, F)``. The
"MSE" metric is the mean over samples of the summed per-node unsquared
Euclidean norms (the squared variant is available separately); cross entropy
is the standard negative-log form with probabilities clipped at 1e-12.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ce_loss_gap_bound",
    "classification_error",
    "cross_entropy_loss",
    "lp_model_error",
    "lp_param_error",
    "mse_loss",
    "predicted_classes",
    "squared_mse_loss",
    "weighted_f1",
]

_CLIP = 1e-12


def _as_batch(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None]
    if a.ndim != 3:
        raise ValueError(f"expected (N, n, F) array, got shape {a.shape}")
    return a


def _aligned(preds, labels):
    p = _as_batch(preds)
    y = _as_batch(labels)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    return p, y


def mse_loss(preds: np.ndarray, labels: np.ndarray) -> float:
    """Mean over samples of the summed per-node l2 norms of the residual rows."""
    p, y = _aligned(preds, labels)
    node_norms = np.linalg.norm(p - y, axis=-1)
    return float(node_norms.sum(axis=1).mean())


def squared_mse_loss(preds: np.ndarray, labels: np.ndarray) -> float:
    """Mean over samples of the summed squared residual entries."""
    p, y = _aligned(preds, labels)
    return float(np.sum((p - y) ** 2, axis=(1, 2)).mean())


def cross_entropy_loss(preds: np.ndarray, labels: np.ndarray, binary: bool | None = None) -> float:
    """Mean over samples of the per-node cross entropies.

    Binary form scores each channel with both the positive and negative term;
    the categorical form scores only the labelled class. When ``binary`` is
    not given it is inferred: single-channel outputs are binary, wider ones
    categorical.
    """
    p, y = _aligned(preds, labels)
    if binary is None:
        binary = p.shape[-1] == 1
    pc = np.clip(p, _CLIP, 1.0 - _CLIP)
    if binary:
        per = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    else:
        per = -y * np.log(pc)
    return float(per.sum(axis=(1, 2)).mean())


def predicted_classes(preds: np.ndarray, binary: bool | None = None) -> np.ndarray:
    """Node-level class decisions; argmax with ties to the lower index,
    threshold 0.5 for single-channel binary outputs."""
    p = _as_batch(preds)
    if binary is None:
        binary = p.shape[-1] == 1
    if binary and p.shape[-1] == 1:
        return (p[..., 0] > 0.5).astype(np.int64)
    return np.argmax(p, axis=-1)


def classification_error(preds: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of node-level class decisions that disagree with the labels."""
    p, y = _aligned(preds, labels)
    return float(np.mean(predicted_classes(p) != predicted_classes(y)))


def lp_param_error(theta_hat, theta_star, p: float = 2, relative: bool = False) -> float:
    """Parameter recovery error over all layers' stacked entries.

    ``theta_hat`` and ``theta_star`` are sequences of ``(weight, bias)``
    pairs; ``p`` is 2 or inf. Relative mode divides by the same norm of the
    reference parameters.
    """
    flat_hat, flat_star = [], []
    for (wh, bh), (ws, bs) in zip(theta_hat, theta_star, strict=True):
        if wh.shape != ws.shape or (bh is None) != (bs is None):
            raise ValueError("parameter shapes do not match")
        flat_hat.append(wh.ravel())
        flat_star.append(ws.ravel())
        if bh is not None:
            flat_hat.append(bh.ravel())
            flat_star.append(bs.ravel())
    diff = np.concatenate(flat_hat) - np.concatenate(flat_star)
    ref = np.concatenate(flat_star)
    if p == 2:
        err, ref_norm = np.linalg.norm(diff), np.linalg.norm(ref)
    elif p == np.inf:
        err, ref_norm = np.abs(diff).max(initial=0.0), np.abs(ref).max(initial=0.0)
    else:
        raise ValueError("p must be 2 or inf")
    if relative:
        if ref_norm == 0:
            raise ZeroDivisionError("reference parameters have zero norm")
        return float(err / ref_norm)
    return float(err)


def lp_model_error(pred_expectations, true_expectations, p: float = 2, relative: bool = False) -> float:
    """Mean over samples of summed per-node lp distances between the
    predicted and true conditional expectations."""
    ph, pt = _aligned(pred_expectations, true_expectations)
    if p == 2:
        node = np.linalg.norm(ph - pt, axis=-1)
        ref = np.linalg.norm(pt, axis=-1)
    elif p == np.inf:
        if relative:
            raise ValueError("relative model error is defined for p=2 only")
        node = np.abs(ph - pt).max(axis=-1)
        ref = None
    else:
        raise ValueError("p must be 2 or inf")
    err = float(node.sum(axis=1).mean())
    if relative:
        denom = float(ref.sum(axis=1).mean())
        if denom == 0:
            raise ZeroDivisionError("true expectations have zero norm")
        return err / denom
    return err


def weighted_f1(preds: np.ndarray, labels: np.ndarray) -> float:
    """Per-class F1 averaged with weights equal to each class's true support."""
    p, y = _aligned(preds, labels)
    pred_cls = predicted_classes(p).ravel()
    true_cls = predicted_classes(y).ravel()
    n_classes = max(2, p.shape[-1])
    score = 0.0
    total = true_cls.size
    for c in range(n_classes):
        support = int(np.sum(true_cls == c))
        if support == 0:
            continue
        tp = int(np.sum((pred_cls == c) & (true_cls == c)))
        fp = int(np.sum((pred_cls == c) & (true_cls != c)))
        fn = support - tp
        denom = 2 * tp + fp + fn
        f1 = (2.0 * tp / denom) if denom else 0.0
        score += support * f1
    return score / total


def ce_loss_gap_bound(true_expectations: np.ndarray, eps: float, labels: np.ndarray) -> float:
    """Upper bound on the binary cross-entropy gap between the estimated and
    true models when the predicted expectations are within ``eps`` of the
    true ones entrywise.

    Requires ``eps < min(E, 1 - E)`` for every entry of the true
    expectations ``E``; the labelled entries contribute
    ``ln(E / (E - eps))`` and the unlabelled ones the mirrored term.
    """
    e, y = _aligned(true_expectations, labels)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if np.any(eps >= np.minimum(e, 1.0 - e)):
        raise ValueError("eps too large: needs eps < min(E, 1-E) entrywise")
    terms = y * np.log(e / (e - eps)) + (1.0 - y) * np.log((1.0 - e) / (1.0 - e - eps))
    return float(terms.sum())
