"""CAFA-style metrics: gene-centric Fmax, term-centric AUC, frequency-stratified reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .ontology import AnnotationMatrix

THRESHOLDS = np.arange(1, 101) / 100.0

# (label, low, high) inclusive; high None means unbounded
FREQUENCY_BINS = (("11-30", 11, 30), ("31-100", 31, 100), ("101-300", 101, 300), (">=301", 301, None))
ALL = "All"


@dataclass(frozen=True)
class PredictionMatrix:
    gene_ids: tuple[str, ...]
    term_ids: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.gene_ids), len(self.term_ids)):
            raise ShapeError("score matrix shape does not match id lists")
        if scores.size and (np.nanmin(scores) < 0 or np.nanmax(scores) > 1 or np.isnan(scores).any()):
            raise ValueError("prediction scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)


def _aligned_truth(pred: PredictionMatrix, truth: AnnotationMatrix) -> np.ndarray:
    if tuple(pred.gene_ids) != tuple(truth.gene_ids) or tuple(pred.term_ids) != tuple(truth.term_ids):
        raise ShapeError("prediction and ground-truth ids are not aligned")
    return truth.to_dense(dtype=bool)


@dataclass(frozen=True)
class FmaxResult:
    fmax: float
    threshold: float
    curve: tuple[tuple[float, float, float, float], ...]  # (threshold, precision, recall, F)


def fmax_dense(scores: np.ndarray, truth: np.ndarray) -> FmaxResult:
    """Fmax over the 0.01..1.00 grid.

    Genes without any true term are not evaluated. Precision is averaged over
    genes with at least one prediction at the threshold, recall over all
    evaluated genes.
    """
    truth = np.asarray(truth, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    keep = truth.any(axis=1)
    truth, scores = truth[keep], scores[keep]
    n_true = truth.sum(axis=1)
    best = (0.0, float(THRESHOLDS[0]))
    curve = []
    for t in THRESHOLDS:
        pred = scores >= t
        n_pred = pred.sum(axis=1)
        tp = (pred & truth).sum(axis=1)
        covered = n_pred > 0
        if truth.shape[0] == 0 or not covered.any():
            curve.append((float(t), 0.0, 0.0, 0.0))
            continue
        precision = float(np.mean(tp[covered] / n_pred[covered]))
        recall = float(np.mean(tp / n_true))
        f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        curve.append((float(t), precision, recall, f))
        if f > best[0]:
            best = (f, float(t))
    return FmaxResult(best[0], best[1], tuple(curve))


def fmax(pred: PredictionMatrix, truth: AnnotationMatrix) -> FmaxResult:
    return fmax_dense(pred.scores, _aligned_truth(pred, truth))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with tied scores counted as half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    # average ranks over ties
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the step-interpolated precision envelope.

    Each distinct score is one operating point; interpolated precision at
    recall r is the best precision at any recall >= r.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = labels.sum()
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("PR-AUC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last_of_tie = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last_of_tie], fp[last_of_tie]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    widths = np.diff(np.r_[0.0, recall])
    return float(np.sum(widths * envelope))


@dataclass(frozen=True)
class TermAucResult:
    mode: str
    per_term: dict[str, float]
    macro: float
    excluded: tuple[str, ...] = field(default=())


def term_auc_dense(scores: np.ndarray, truth: np.ndarray, term_ids: Sequence[str], mode: str = "roc") -> TermAucResult:
    if mode not in ("roc", "pr"):
        raise ValueError(f"unknown AUC mode {mode!r}")
    fn = roc_auc if mode == "roc" else pr_auc
    truth = np.asarray(truth, dtype=bool)
    per_term, excluded = {}, []
    for j, term in enumerate(term_ids):
        col = truth[:, j]
        if col.all() or not col.any():
            excluded.append(term)
            continue
        per_term[term] = fn(scores[:, j], col)
    if not per_term:
        raise ValueError("no term has both positive and negative genes")
    return TermAucResult(mode, per_term, float(np.mean(list(per_term.values()))), tuple(excluded))


def term_auc(pred: PredictionMatrix, truth: AnnotationMatrix, mode: str = "roc") -> TermAucResult:
    return term_auc_dense(pred.scores, _aligned_truth(pred, truth), pred.term_ids, mode)


def assign_bin(frequency: int) -> str | None:
    for label, lo, hi in FREQUENCY_BINS:
        if frequency >= lo and (hi is None or frequency <= hi):
            return label
    return None


@dataclass(frozen=True)
class BinResult:
    name: str
    n_terms: int
    fmax: float | None
    threshold: float | None
    auc_roc: float | None
    aupr: float | None


@dataclass(frozen=True)
class EvaluationReport:
    auc_mode: str
    bins: tuple[BinResult, ...]
    curve: tuple[tuple[float, float, float, float], ...]

    def row(self, name: str) -> BinResult:
        return next(b for b in self.bins if b.name == name)

    def to_tsv(self) -> str:
        primary, secondary = ("AUC-ROC", "AUPR") if self.auc_mode == "roc" else ("AUC-PR", "AUC-ROC")
        lines = [f"bin\tFmax\t{primary}\t{secondary}\tn_terms"]

        def pct(v):
            return "NA" if v is None else f"{100.0 * v:.2f}"

        for b in self.bins:
            first, second = (b.auc_roc, b.aupr) if self.auc_mode == "roc" else (b.aupr, b.auc_roc)
            lines.append(f"{b.name}\t{pct(b.fmax)}\t{pct(first)}\t{pct(second)}\t{b.n_terms}")
        return "\n".join(lines) + "\n"

    def curve_tsv(self) -> str:
        lines = ["threshold\tprecision\trecall\tF"]
        lines += [f"{t:.2f}\t{p:.6f}\t{r:.6f}\t{f:.6f}" for t, p, r, f in self.curve]
        return "\n".join(lines) + "\n"


def _bin_metrics(name: str, scores, truth, term_ids) -> BinResult:
    if len(term_ids) == 0:
        return BinResult(name, 0, None, None, None, None)
    fm = fmax_dense(scores, truth)
    try:
        roc = term_auc_dense(scores, truth, term_ids, "roc").macro
        pr = term_auc_dense(scores, truth, term_ids, "pr").macro
    except ValueError:
        roc = pr = None
    return BinResult(name, len(term_ids), fm.fmax, fm.threshold, roc, pr)


def stratify(
    pred: PredictionMatrix,
    truth: AnnotationMatrix,
    frequencies: dict[str, int],
    auc_mode: str = "roc",
) -> EvaluationReport:
    """Metrics per label-frequency bin plus ``All``.

    ``frequencies`` counts positive genes per term over the full propagated
    dataset; terms below 11 appear only in ``All``.
    """
    dense = _aligned_truth(pred, truth)
    terms = list(pred.term_ids)
    results = []
    for label, _, _ in FREQUENCY_BINS:
        cols = [j for j, t in enumerate(terms) if assign_bin(frequencies.get(t, 0)) == label]
        results.append(_bin_metrics(label, pred.scores[:, cols], dense[:, cols], [terms[j] for j in cols]))
    all_result = _bin_metrics(ALL, pred.scores, dense, terms)
    results.append(all_result)
    curve = fmax_dense(pred.scores, dense).curve if terms else ()
    return EvaluationReport(auc_mode, tuple(results), curve)


def frequency_prior(train_truth: np.ndarray, n_genes: int) -> np.ndarray:
    """Baseline scoring every gene with each term's training frequency."""
    freq = np.asarray(train_truth, dtype=np.float64).mean(axis=0) if len(train_truth) else 0.0
    return np.tile(freq, (n_genes, 1))
