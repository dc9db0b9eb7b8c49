"""Training losses and their analytic gradients.

All kernels work on a single logit vector (shape ``(C,)``) or a batch
(shape ``(N, C)``). For a batch the per-sample values are returned; reduction
to a scalar happens in :func:`total_objective`.

Contrastive rank form, with ``P``/``N`` the positive/negative index sets::

    L+ = sum_{i in P} log(1 + sum_{j in N} exp((s_j - s_i) / tau))
    L- = sum_{j in N} log(1 + sum_{i in P} exp((s_j - s_i) / tau))

ZLPR::

    log(1 + sum_{i in P} exp(-s_i)) + log(1 + sum_{j in N} exp(s_j))
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError, ShapeError

CONTRASTIVE = "contrastive"
ZLPR = "zlpr"
VARIANTS = (CONTRASTIVE, ZLPR)


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    variant: str = CONTRASTIVE

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")


def _as_batch(logits, labels) -> tuple[np.ndarray, np.ndarray, bool]:
    s = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ShapeError(f"logits shape {s.shape} does not match labels shape {y.shape}")
    if s.ndim not in (1, 2):
        raise ShapeError("logits must be a vector or a (samples, labels) matrix")
    if not np.all(np.isfinite(s)):
        raise NumericalError("non-finite logit")
    single = s.ndim == 1
    if single:
        s, y = s[None, :], y[None, :]
    return s, y.astype(bool), single


def _log1p_sumexp(x: np.ndarray, mask: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """``log(1 + sum(exp(x[mask])))`` along ``axis`` and the matching softmax weights.

    The implicit ``1`` acts as an extra zero exponent, so the shift is ``max(0, max x)``.
    """
    x = np.where(mask, x, -np.inf)
    shift = np.maximum(np.max(x, axis=axis, keepdims=True), 0.0)
    e = np.exp(x - shift)
    total = e.sum(axis=axis, keepdims=True)
    denom = np.exp(-shift) + total
    # log1p keeps full precision when every exponent is far below zero
    with np.errstate(divide="ignore"):
        value = np.where(shift > 0, shift + np.log(denom), np.log1p(total))
    return np.squeeze(value, axis=axis), e / denom


def _contrastive(s: np.ndarray, y: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    # diff[b, i, j] = (s_j - s_i) / tau, only i positive / j negative count
    diff = (s[:, None, :] - s[:, :, None]) / tau
    mask = y[:, :, None] & ~y[:, None, :]
    pos_val, p = _log1p_sumexp(diff, mask, axis=2)
    neg_val, q = _log1p_sumexp(diff, mask, axis=1)
    value = np.where(y, pos_val, 0.0).sum(axis=1) + np.where(~y, neg_val, 0.0).sum(axis=1)
    w = (p + q) / tau
    grad = w.sum(axis=1) - w.sum(axis=2)
    return value, grad


def _zlpr(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos_val, p = _log1p_sumexp(-s, y, axis=1)
    neg_val, q = _log1p_sumexp(s, ~y, axis=1)
    return pos_val + neg_val, q - p


def _mlc(logits, labels, tau: float, variant: str):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s, y, single = _as_batch(logits, labels)
    if variant == CONTRASTIVE:
        value, grad = _contrastive(s, y, tau)
    elif variant == ZLPR:
        value, grad = _zlpr(s, y)
    else:
        raise ValueError(f"unknown loss variant {variant!r}")
    if single:
        return float(value[0]), grad[0]
    return value, grad


def contrastive_mlc(logits, labels, tau: float = 1.0):
    """Contrastive multi-label loss; float for a vector, per-sample array for a batch."""
    return _mlc(logits, labels, tau, CONTRASTIVE)[0]


def zlpr(logits, labels):
    return _mlc(logits, labels, 1.0, ZLPR)[0]


def mlc_loss(logits, labels, config: LossConfig):
    return _mlc(logits, labels, config.tau, config.variant)[0]


def loss_gradient(logits, labels, config: LossConfig) -> np.ndarray:
    """d(loss)/d(logits) for the configured variant, same shape as ``logits``."""
    return _mlc(logits, labels, config.tau, config.variant)[1]


def _pair_array(pairs, width: int) -> np.ndarray:
    idx = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise ShapeError(f"exclusive pair index out of range for {width} labels")
    if np.any(idx[:, 0] == idx[:, 1]):
        raise ShapeError("exclusive pair joins a label with itself")
    return idx


def _exclusivity(s: np.ndarray, pairs) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample penalty and per-sample logit gradient for a ``(N, C)`` batch."""
    idx = _pair_array(pairs, s.shape[1])
    grad = np.zeros_like(s)
    if idx.size == 0:
        return np.zeros(s.shape[0]), grad
    z = s[:, idx[:, 0]] + s[:, idx[:, 1]]
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    np.add.at(grad.T, idx[:, 0], sig.T)
    np.add.at(grad.T, idx[:, 1], sig.T)
    return np.logaddexp(0.0, z).sum(axis=1), grad


def exclusivity_penalty(logits, pairs: Sequence[tuple[int, int]]):
    """Softplus penalty ``sum log(1 + exp(s_i + s_j))`` over exclusive index pairs.

    Vector input: per-sample value and gradient. Batch input: mean over samples
    and the gradient of that mean.
    """
    s = np.asarray(logits, dtype=np.float64)
    if s.ndim not in (1, 2):
        raise ShapeError("logits must be a vector or a (samples, labels) matrix")
    if not np.all(np.isfinite(s)):
        raise NumericalError("non-finite logit")
    single = s.ndim == 1
    per_sample, grad = _exclusivity(s[None, :] if single else s, pairs)
    if single:
        return float(per_sample[0]), grad[0]
    n = s.shape[0]
    return (float(per_sample.mean()) if n else 0.0), grad / max(n, 1)


def exclusivity_per_sample(logits: np.ndarray, pairs) -> np.ndarray:
    return _exclusivity(np.atleast_2d(np.asarray(logits, dtype=np.float64)), pairs)[0]


def bottleneck_loss(go_logits, go_labels, mask, config: LossConfig):
    """Same loss variant on the bottleneck logits; masked samples contribute exactly 0.

    ``mask`` is True where the gene has GO annotations.
    """
    value, _ = bottleneck_loss_and_grad(go_logits, go_labels, mask, config)
    return value


def bottleneck_loss_and_grad(go_logits, go_labels, mask, config: LossConfig):
    s = np.asarray(go_logits, dtype=np.float64)
    single = s.ndim == 1
    m = np.atleast_1d(np.asarray(mask, dtype=bool))
    value, grad = _mlc(go_logits, go_labels, config.tau, config.variant)
    if single:
        return (value, grad) if m[0] else (0.0, np.zeros_like(grad))
    if m.shape != (s.shape[0],):
        raise ShapeError("mask must hold one flag per sample")
    return np.where(m, value, 0.0), np.where(m[:, None], grad, 0.0)


@dataclass(frozen=True)
class ObjectiveResult:
    value: float
    grad_logits: np.ndarray
    grad_go: np.ndarray | None
    per_sample: np.ndarray  # per-sample total loss before averaging


def total_objective(
    logits: np.ndarray,
    labels: np.ndarray,
    pairs: Sequence[tuple[int, int]],
    go_logits: np.ndarray | None,
    go_labels: np.ndarray | None,
    go_mask: np.ndarray | None,
    config: LossConfig,
) -> ObjectiveResult:
    """Batch mean of ``L_MLC + lambda1 * L_ex + lambda2 * L_GO`` and its logit gradients."""
    s = np.asarray(logits, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError("total_objective expects a (samples, labels) batch")
    n = s.shape[0]
    if n == 0:
        return ObjectiveResult(0.0, np.zeros_like(s), None if go_logits is None else np.zeros_like(go_logits), np.zeros(0))
    mlc_val, mlc_grad = _mlc(s, labels, config.tau, config.variant)
    per_sample = mlc_val.copy()
    grad = mlc_grad.copy()
    if config.lambda1 and len(pairs):
        ex, ex_grad = _exclusivity(s, pairs)
        per_sample += config.lambda1 * ex
        grad += config.lambda1 * ex_grad
    grad_go = None
    if go_logits is not None:
        g = np.asarray(go_logits, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != n:
            raise ShapeError("go_logits must be a (samples, bottleneck) batch aligned with logits")
        if go_labels is None or go_mask is None:
            raise ShapeError("go_labels and go_mask are required with go_logits")
        go_val, go_grad = bottleneck_loss_and_grad(g, go_labels, go_mask, config)
        per_sample += config.lambda2 * go_val
        grad_go = config.lambda2 * go_grad / n
    return ObjectiveResult(float(per_sample.mean()), grad / n, grad_go, per_sample)
