"""Deterministic mini-batch training under the combined objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import Dataset
from .errors import DataFormatError, DivergenceError, NumericalError, ShapeError, UnsupportedOperation
from .evaluation import fmax_dense
from .exclusivity import ExclusivePairSet
from .model import BOTTLENECK, Dims, ModelParameters, backward, forward
from .objective import CONTRASTIVE, LossConfig, total_objective

LOGGER = logging.getLogger(__name__)

DEFAULT_SEED = 605


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 12
    epochs: int = 100
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = DEFAULT_SEED
    grad_norm_tol: float = 1e-5
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_norm_tol <= 0:
            raise ValueError("grad_norm_tol must be positive")


CONFIG_KEYS = (
    "kind", "d", "h", "n", "C", "variant", "tau", "lambda1", "lambda2",
    "optimizer", "learning_rate", "batch_size", "epochs", "seed", "grad_norm_tol",
)


@dataclass(frozen=True)
class RunConfig:
    """Contents of a flat ``key = value`` training config file."""

    kind: str
    dims: Dims
    train: TrainConfig


def parse_config(text: str) -> RunConfig:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise DataFormatError(f"expected 'key = value', got {line!r}", lineno)
        if key not in CONFIG_KEYS:
            raise DataFormatError(f"unknown config key {key!r}", lineno)
        if key in values:
            raise DataFormatError(f"duplicate config key {key!r}", lineno)
        values[key] = value.strip()
    try:
        kind = values.get("kind", BOTTLENECK)
        dims = Dims(
            d=int(values["d"]),
            C=int(values["C"]),
            h=int(values.get("h", 768 if kind == BOTTLENECK else 0)),
            n=int(values.get("n", 0)),
        )
        loss = LossConfig(
            tau=float(values.get("tau", 1.0)),
            lambda1=float(values.get("lambda1", 1.0)),
            lambda2=float(values.get("lambda2", 1.0)),
            variant=values.get("variant", CONTRASTIVE),
        )
        train = TrainConfig(
            learning_rate=float(values.get("learning_rate", 1e-5)),
            batch_size=int(values.get("batch_size", 12)),
            epochs=int(values.get("epochs", 100)),
            optimizer=values.get("optimizer", "adam"),
            seed=int(values.get("seed", DEFAULT_SEED)),
            grad_norm_tol=float(values.get("grad_norm_tol", 1e-5)),
            loss=loss,
        )
    except KeyError as exc:
        raise DataFormatError(f"missing required config key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise DataFormatError(f"bad config value: {exc}") from None
    return RunConfig(kind, dims, train)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    valid_fmax: list[float] = field(default_factory=list)  # NaN when there is no validation split
    final_grad_norm: float = math.nan
    selected_epoch: int = 0
    converged: bool = False

    def to_tsv(self) -> str:
        lines = [
            f"# selected_epoch\t{self.selected_epoch}",
            f"# final_grad_inf_norm\t{format(self.final_grad_norm, '.17g')}",
            f"# converged\t{int(self.converged)}",
            "epoch\ttrain_loss\tvalid_fmax",
        ]
        for k, (loss, fm) in enumerate(zip(self.epoch_loss, self.valid_fmax), start=1):
            lines.append(f"{k}\t{format(loss, '.17g')}\t{'NA' if math.isnan(fm) else format(fm, '.17g')}")
        return "\n".join(lines) + "\n"


def pair_indices(pairs: ExclusivePairSet | Sequence[tuple[int, int]], term_ids: Sequence[str]) -> list[tuple[int, int]]:
    if isinstance(pairs, ExclusivePairSet):
        idx = pairs.index_pairs(term_ids)
        if len(idx) < len(pairs):
            LOGGER.info("%d exclusive pair(s) reference terms outside the label set", len(pairs) - len(idx))
        return idx
    return [(int(i), int(j)) for i, j in pairs]


def _check_dims(params: ModelParameters, ds: Dataset) -> None:
    dims = params.dims
    if ds.features.shape[1] != dims.d or len(ds.phenotypes.term_ids) != dims.C:
        raise ShapeError(
            f"model expects d={dims.d}, C={dims.C}; data has d={ds.features.shape[1]}, "
            f"C={len(ds.phenotypes.term_ids)}"
        )
    if params.kind == BOTTLENECK and len(ds.go.term_ids) != dims.n:
        raise ShapeError(f"model bottleneck width {dims.n} != {len(ds.go.term_ids)} bottleneck terms")


def objective_and_grads(params: ModelParameters, X, Y, G, mask, pair_idx, loss: LossConfig):
    """Mean objective over the rows and its parameter gradients."""
    S, Ghat = forward(params, X)
    if Ghat is None:
        res = total_objective(S, Y, pair_idx, None, None, None, loss)
        grads = backward(params, X, res.grad_logits)
    else:
        res = total_objective(S, Y, pair_idx, Ghat, G, mask, loss)
        grads = backward(params, X, res.grad_logits, res.grad_go)
    return res.value, grads


def _inf_norm(grads: dict[str, np.ndarray]) -> float:
    return max((float(np.max(np.abs(g))) for g in grads.values() if g.size), default=0.0)


def check_stationarity(
    params: ModelParameters,
    ds: Dataset,
    pairs,
    config: TrainConfig,
    split: str | None = "train",
) -> float:
    """Infinity-norm of the full-batch parameter gradient on ``split`` (0 for no data)."""
    X, Y, G, mask = ds.arrays(split if split in ds.splits else None)
    if X.shape[0] == 0:
        return 0.0
    _, grads = objective_and_grads(params, X, Y, G, mask, pair_indices(pairs, ds.phenotypes.term_ids), config.loss)
    return _inf_norm(grads)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def train(
    params: ModelParameters,
    ds: Dataset,
    pairs,
    config: TrainConfig,
) -> tuple[ModelParameters, TrainReport]:
    """Train a copy of ``params`` and return the best-validation checkpoint.

    Uses the ``train`` split (all genes if the dataset has no splits). Without a
    non-empty ``valid`` split the last epoch is returned. Training stops early
    once the full-batch gradient infinity-norm drops to ``grad_norm_tol``.
    """
    _check_dims(params, ds)
    pair_idx = pair_indices(pairs, ds.phenotypes.term_ids)
    train_split = "train" if ds.splits.get("train") else None
    X, Y, G, mask = ds.arrays(train_split)
    has_valid = bool(ds.splits.get("valid"))
    if has_valid:
        Xv, Yv, _, _ = ds.arrays("valid")
    loss = config.loss
    if loss.variant == CONTRASTIVE and X.shape[0] and not Y.any(axis=1).all():
        LOGGER.warning("contrastive loss ignores %d all-negative training rows", int((~Y.any(axis=1)).sum()))

    rng = np.random.default_rng(config.seed)
    current = params.copy()
    best = current.copy()
    report = TrainReport()
    best_fmax = -math.inf
    m = {k: np.zeros_like(v) for k, v in current.tensors.items()}
    v = {k: np.zeros_like(v) for k, v in current.tensors.items()}
    step = 0
    n = X.shape[0]
    full_batch = config.batch_size >= n
    b1, b2 = config.betas

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        pre_step_norm = math.nan
        for batch_no, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            try:
                # divergence is detected explicitly below, so overflow warnings are noise
                with np.errstate(over="ignore", invalid="ignore"):
                    value, grads = objective_and_grads(current, X[idx], Y[idx], G[idx], mask[idx], pair_idx, loss)
            except NumericalError as exc:
                raise DivergenceError(epoch, batch_no, str(exc)) from None
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(epoch, batch_no)
            total += value * len(idx)
            if full_batch:
                pre_step_norm = _inf_norm(grads)
                if pre_step_norm <= config.grad_norm_tol:
                    break
            step += 1
            for k, g in grads.items():
                if config.optimizer == "sgd":
                    current.tensors[k] = current.tensors[k] - config.learning_rate * g
                else:
                    m[k] = b1 * m[k] + (1 - b1) * g
                    v[k] = b2 * v[k] + (1 - b2) * g * g
                    m_hat = m[k] / (1 - b1 ** step)
                    v_hat = v[k] / (1 - b2 ** step)
                    current.tensors[k] = current.tensors[k] - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
            if not all(np.all(np.isfinite(t)) for t in current.tensors.values()):
                raise DivergenceError(epoch, batch_no, "parameters became non-finite")
        report.epoch_loss.append(total / n if n else 0.0)

        if has_valid:
            Sv, _ = forward(current, Xv)
            fm = fmax_dense(sigmoid(Sv), Yv).fmax
            report.valid_fmax.append(fm)
            if fm > best_fmax:
                best_fmax, best, report.selected_epoch = fm, current.copy(), epoch
        else:
            report.valid_fmax.append(math.nan)
            report.selected_epoch = epoch

        if full_batch and pre_step_norm <= config.grad_norm_tol:
            report.converged = True
            break
        if not full_batch and check_stationarity(current, ds, pair_idx, config, train_split) <= config.grad_norm_tol:
            report.converged = True
            break

    result = best if has_valid else current
    report.final_grad_norm = check_stationarity(result, ds, pair_idx, config, train_split)
    return result, report


@dataclass(frozen=True)
class AuditResult:
    conflict_rate: dict[tuple[int, int], float]
    risk: float
    bound: float

    @property
    def satisfied(self) -> bool:
        return all(rate <= self.bound for rate in self.conflict_rate.values())


def exclusivity_audit(
    params: ModelParameters,
    ds: Dataset,
    pairs,
    lambda1: float,
    loss: LossConfig | None = None,
    split: str | None = None,
) -> AuditResult:
    """Per-pair conflict rate against ``risk / (lambda1 * log 2)`` on one split.

    ``risk`` is the mean combined objective evaluated with ``lambda1``. Each
    conflicting sample contributes at least ``lambda1 * log 2`` to it, so the
    bound holds on any evaluated sample.
    """
    if not lambda1 > 0:
        raise UnsupportedOperation("the conflict bound needs lambda1 > 0")
    loss = LossConfig(
        tau=loss.tau if loss else 1.0,
        lambda1=lambda1,
        lambda2=loss.lambda2 if loss else 1.0,
        variant=loss.variant if loss else CONTRASTIVE,
    )
    pair_idx = pair_indices(pairs, ds.phenotypes.term_ids)
    X, Y, G, mask = ds.arrays(split)
    S, Ghat = forward(params, X)
    res = total_objective(S, Y, pair_idx, Ghat, G if Ghat is not None else None, mask if Ghat is not None else None, loss)
    rates = {}
    for i, j in pair_idx:
        rates[(i, j)] = float(np.mean((S[:, i] > 0) & (S[:, j] > 0))) if len(S) else 0.0
    return AuditResult(rates, res.value, res.value / (lambda1 * math.log(2)))


def conflict_rates(params: ModelParameters, X: np.ndarray, pair_idx) -> np.ndarray:
    S, _ = forward(params, X)
    return np.array([np.mean((S[:, i] > 0) & (S[:, j] > 0)) for i, j in pair_idx])
