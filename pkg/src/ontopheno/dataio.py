"""Dataset files, seeded synthetic generation, and stratified splitting.

A processed dataset directory holds::

    features.csv          gene_id,f0,...,f{d-1}
    phenotype_terms.txt   ordered phenotype term ids, one per line
    phenotypes.tsv        gene_id<TAB>term_id (propagated)
    bottleneck_terms.txt  ordered bottleneck GO term ids
    go.tsv                gene_id<TAB>term_id over bottleneck terms
    go_genes.txt          genes that carry GO annotations (the GO mask)
    splits.txt            [train] / [valid] / [test] sections
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, OntologyError
from .exclusivity import ExclusivePairSet
from .model import LINEAR, ModelParameters
from .ontology import AnnotationMatrix, OntologyGraph, propagate

LOGGER = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "valid", "test")


@dataclass(frozen=True)
class FeatureTable:
    gene_ids: tuple[str, ...]
    values: np.ndarray

    def rows(self, gene_ids: Sequence[str]) -> np.ndarray:
        index = {g: i for i, g in enumerate(self.gene_ids)}
        missing = [g for g in gene_ids if g not in index]
        if missing:
            raise DataFormatError("no feature row for genes: " + ", ".join(missing[:10]))
        return self.values[[index[g] for g in gene_ids]]


def parse_features(text: str) -> FeatureTable:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError("empty feature file", 1) from None
    if not header or header[0] != "gene_id":
        raise DataFormatError("header must start with gene_id", 1)
    d = len(header) - 1
    if header[1:] != [f"f{k}" for k in range(d)]:
        raise DataFormatError("feature columns must be named f0..f{d-1}", 1)
    ids, rows, seen = [], [], set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise DataFormatError(f"expected {d + 1} fields, got {len(row)}", lineno)
        gene = row[0]
        if gene in seen:
            raise DataFormatError(f"duplicate gene id {gene}", lineno)
        seen.add(gene)
        try:
            values = [float(v) for v in row[1:]]
        except ValueError:
            bad = next(k for k, v in enumerate(row[1:]) if not _is_float(v))
            raise DataFormatError(f"non-numeric value {row[bad + 1]!r} in column f{bad}", lineno) from None
        ids.append(gene)
        rows.append(values)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return FeatureTable(tuple(ids), values)


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def format_features(table: FeatureTable) -> str:
    d = table.values.shape[1]
    lines = ["gene_id," + ",".join(f"f{k}" for k in range(d))]
    for gene, row in zip(table.gene_ids, table.values):
        lines.append(gene + "," + ",".join(format(float(v), ".17g") for v in row))
    return "\n".join(lines) + "\n"


def load_features(path: str | Path) -> FeatureTable:
    return parse_features(Path(path).read_text(encoding="utf-8"))


def parse_annotation_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        cols = raw.rstrip("\r\n").split("\t")
        if len(cols) != 2 or not cols[0].strip() or not cols[1].strip():
            raise DataFormatError("expected gene_id<TAB>term_id", lineno)
        pairs.append((cols[0].strip(), cols[1].strip()))
    return pairs


def format_annotations(ann: AnnotationMatrix) -> str:
    return "".join(f"{g}\t{t}\n" for g, t in ann.pairs())


def load_annotations(
    path_or_text: str | Path,
    graph: OntologyGraph,
    propagate_flag: bool = True,
    gene_ids: Iterable[str] | None = None,
) -> AnnotationMatrix:
    """Annotation TSV as a matrix over the graph's non-obsolete terms."""
    text = Path(path_or_text).read_text(encoding="utf-8") if isinstance(path_or_text, Path) else path_or_text
    pairs = sorted(set(parse_annotation_pairs(text)))
    unknown = sorted({t for _, t in pairs if t not in graph.terms})
    if unknown:
        raise OntologyError("annotations reference unknown terms: " + ", ".join(unknown))
    obsolete = sorted({t for _, t in pairs if graph.terms[t].obsolete})
    if obsolete:
        raise OntologyError("annotations reference obsolete terms: " + ", ".join(obsolete))
    genes = set(gene_ids) if gene_ids is not None else {g for g, _ in pairs}
    ann = AnnotationMatrix.from_pairs(pairs, genes, graph.active_terms())
    return propagate(graph, ann) if propagate_flag else ann


def parse_splits(text: str) -> dict[str, list[str]]:
    splits: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in splits:
                raise DataFormatError(f"unknown split section {line}", lineno)
            continue
        if current is None:
            raise DataFormatError("gene id before any split section", lineno)
        splits[current].append(line)
    seen: set[str] = set()
    for name in SPLIT_NAMES:
        overlap = seen & set(splits[name])
        if overlap:
            raise DataFormatError("genes assigned to several splits: " + ", ".join(sorted(overlap)))
        seen |= set(splits[name])
    return splits


def format_splits(splits: dict[str, Sequence[str]]) -> str:
    out = []
    for name in SPLIT_NAMES:
        out.append(f"[{name}]")
        out.extend(splits.get(name, []))
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class Dataset:
    gene_ids: tuple[str, ...]
    features: np.ndarray  # (N, d), row order = gene_ids
    phenotypes: AnnotationMatrix
    go: AnnotationMatrix
    go_mask: np.ndarray  # (N,) bool
    splits: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.gene_ids)
        if self.features.shape[0] != n or self.go_mask.shape != (n,):
            raise DataFormatError("features and GO mask must have one row per gene")
        if self.phenotypes.gene_ids != self.gene_ids or self.go.gene_ids != self.gene_ids:
            raise DataFormatError("annotation matrices must share the dataset gene order")

    @property
    def Y(self) -> np.ndarray:
        return self.phenotypes.to_dense()

    @property
    def G(self) -> np.ndarray:
        return self.go.to_dense()

    @property
    def label_ratio(self) -> float:
        n, c = self.phenotypes.shape
        return len(self.phenotypes.entries) / (n * c) if n * c else 0.0

    def indices(self, split: str | None) -> np.ndarray:
        if split is None:
            return np.arange(len(self.gene_ids))
        index = {g: i for i, g in enumerate(self.gene_ids)}
        return np.array([index[g] for g in self.splits.get(split, [])], dtype=np.int64)

    def arrays(self, split: str | None = None):
        """(features, phenotype labels, GO labels, GO mask) for one split (or all genes)."""
        idx = self.indices(split)
        return self.features[idx], self.Y[idx], self.G[idx], self.go_mask[idx]

    def subset_ids(self, split: str | None) -> list[str]:
        return [self.gene_ids[i] for i in self.indices(split)]


def save_dataset(ds: Dataset, directory: str | Path) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "features.csv").write_text(format_features(FeatureTable(ds.gene_ids, ds.features)), encoding="utf-8")
    (out / "phenotype_terms.txt").write_text("".join(t + "\n" for t in ds.phenotypes.term_ids), encoding="utf-8")
    (out / "phenotypes.tsv").write_text(format_annotations(ds.phenotypes), encoding="utf-8")
    (out / "bottleneck_terms.txt").write_text("".join(t + "\n" for t in ds.go.term_ids), encoding="utf-8")
    (out / "go.tsv").write_text(format_annotations(ds.go), encoding="utf-8")
    masked = [g for g, m in zip(ds.gene_ids, ds.go_mask) if m]
    (out / "go_genes.txt").write_text("".join(g + "\n" for g in masked), encoding="utf-8")
    (out / "splits.txt").write_text(format_splits(ds.splits), encoding="utf-8")


def _read_lines(path: Path) -> list[str]:
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_dataset(directory: str | Path) -> Dataset:
    src = Path(directory)
    table = load_features(src / "features.csv")
    pheno_terms = _read_lines(src / "phenotype_terms.txt")
    go_terms = _read_lines(src / "bottleneck_terms.txt")
    pheno = AnnotationMatrix.from_pairs(
        parse_annotation_pairs((src / "phenotypes.tsv").read_text(encoding="utf-8")), table.gene_ids, pheno_terms
    )
    go = AnnotationMatrix.from_pairs(
        parse_annotation_pairs((src / "go.tsv").read_text(encoding="utf-8")), table.gene_ids, go_terms
    )
    # matrices sort their gene axis; keep features in the same order
    features = table.rows(pheno.gene_ids)
    go_genes = set(_read_lines(src / "go_genes.txt")) if (src / "go_genes.txt").exists() else {g for g, _ in go.pairs()}
    mask = np.array([g in go_genes for g in pheno.gene_ids], dtype=bool)
    splits_path = src / "splits.txt"
    splits = parse_splits(splits_path.read_text(encoding="utf-8")) if splits_path.exists() else {}
    unknown = sorted({g for ids in splits.values() for g in ids} - set(pheno.gene_ids))
    if unknown:
        raise DataFormatError("split file names genes without features: " + ", ".join(unknown[:10]))
    return Dataset(pheno.gene_ids, features, pheno, go, mask, splits)


def missing_go_block(n_rows: int, dim: int, seed: int) -> np.ndarray:
    """Stand-in auxiliary GO features for genes without GO: standard normal rows scaled to unit norm."""
    rng = np.random.default_rng(seed)
    block = rng.standard_normal((n_rows, dim))
    return block / np.linalg.norm(block, axis=1, keepdims=True)


def fill_missing_go_features(block: np.ndarray, mask: np.ndarray, seed: int) -> np.ndarray:
    out = np.array(block, dtype=np.float64, copy=True)
    missing = ~np.asarray(mask, dtype=bool)
    if missing.any():
        out[missing] = missing_go_block(int(missing.sum()), out.shape[1], seed)
    return out


@dataclass(frozen=True)
class SynthSpec:
    N: int = 400
    d: int = 20
    C: int = 12
    n: int = 6
    pairs: int = 3
    noise: float = 0.05
    margin: float = 0.5
    x_max: float = 2.0
    seed: int = 605
    go_fraction: float = 0.8
    aux_dim: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        for name in ("N", "d", "C", "n"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.pairs < 0 or self.pairs > self.C // 2:
            raise ValueError(f"cannot plant {self.pairs} exclusive pairs among {self.C} phenotypes")
        if not 0 <= self.noise < 0.5:
            raise ValueError("noise rate must lie in [0, 0.5)")
        if self.x_max <= 0:
            raise ValueError("x_max must be positive")
        if not 0 <= self.go_fraction <= 1:
            raise ValueError("go_fraction must lie in [0, 1]")

    @classmethod
    def from_strings(cls, items: Iterable[str]) -> "SynthSpec":
        kwargs = {}
        types = {f: type(getattr(cls(), f)) for f in cls.__dataclass_fields__}
        for item in items:
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ValueError(f"bad synth spec entry {item!r}")
            if key == "split":
                kwargs[key] = tuple(float(v) for v in value.split(","))
            else:
                kwargs[key] = types[key](value.strip())
        return cls(**kwargs)


@dataclass(frozen=True)
class PlantedModel:
    params: ModelParameters  # linear model with W = links @ go_directions, b = 0
    links: np.ndarray  # (C, n) bottleneck-to-phenotype weights
    go_directions: np.ndarray  # (n, d) unit rows
    strongest: tuple[tuple[int, int], ...]  # (phenotype, go) indices of the largest |links|


def _sample_ball(rng, n: int, d: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)
    return direction * r


def _flip(rng, labels: np.ndarray, rate: float, forbidden: Sequence[tuple[int, int]] = ()) -> np.ndarray:
    flips = rng.uniform(size=labels.shape) < rate
    out = labels ^ flips
    # undo flips that would make a forbidden pair co-positive
    for i, j in forbidden:
        both = out[:, i] & out[:, j]
        for c in (i, j):
            revert = both & flips[:, c] & out[:, c]
            out[revert, c] = False
            both = out[:, i] & out[:, j]
    return out


def synth_generate(spec: SynthSpec) -> tuple[Dataset, ExclusivePairSet, PlantedModel]:
    """Seeded synthetic dataset with planted exclusive pairs and a planted bottleneck.

    Phenotype weights are ``W* = A V`` with ``V`` unit GO directions and ``A``
    sparse links scaled so every row of ``W*`` has unit norm. One unpaired
    phenotype (when available) links to a single GO term, which makes it the
    strongest planted link. Paired phenotypes get ``w_j = -w_i``.
    """
    rng = np.random.default_rng(spec.seed)
    V = rng.standard_normal((spec.n, spec.d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)

    order = rng.permutation(spec.C)
    pair_idx = [(int(order[2 * k]), int(order[2 * k + 1])) for k in range(spec.pairs)]
    partners = {j: i for i, j in pair_idx}
    unpaired = [int(c) for c in order[2 * spec.pairs:]]
    single = unpaired[0] if unpaired else pair_idx[0][0]

    A = np.zeros((spec.C, spec.n))
    for c in range(spec.C):
        if c in partners:
            continue
        if c == single:
            A[c, c % spec.n] = 1.0
        else:
            k = min(spec.n, 3)
            cols = rng.choice(spec.n, size=k, replace=False)
            A[c, cols] = rng.uniform(0.5, 1.0, size=k) * rng.choice([-1.0, 1.0], size=k)
        A[c] /= np.linalg.norm(A[c] @ V)
    for j, i in partners.items():
        A[j] = -A[i]
    W = A @ V

    mags = np.abs(A)
    peak = mags.max()
    strongest = tuple((int(c), int(k)) for c, k in zip(*np.nonzero(mags >= peak - 1e-12)))

    X = _sample_ball(rng, spec.N, spec.d, spec.x_max)
    Y = (X @ W.T) >= spec.margin
    Y = _flip(rng, Y, spec.noise, pair_idx)
    for i, j in pair_idx:
        Y[Y[:, i] & Y[:, j], j] = False  # only reachable with margin <= 0

    G = (X @ V.T) >= spec.margin
    G = _flip(rng, G, spec.noise)
    n_masked = int(round(spec.go_fraction * spec.N))
    mask = np.zeros(spec.N, dtype=bool)
    mask[rng.choice(spec.N, size=n_masked, replace=False)] = True
    G[~mask] = False

    features = X
    if spec.aux_dim:
        aux = _sample_ball(rng, spec.N, spec.aux_dim, 1.0)
        features = np.hstack([X, fill_missing_go_features(aux, mask, spec.seed + 1)])

    width = len(str(max(spec.N, spec.C, spec.n) - 1))
    genes = tuple(f"G{k:0{max(4, width)}d}" for k in range(spec.N))
    pheno_terms = tuple(f"SP:{k:04d}" for k in range(spec.C))
    go_terms = tuple(f"SG:{k:04d}" for k in range(spec.n))
    pheno = AnnotationMatrix(genes, pheno_terms, frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(Y)))))
    go = AnnotationMatrix(genes, go_terms, frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(G)))))
    ds = Dataset(genes, features, pheno, go, mask, {})
    ds = replace(ds, splits=split(ds, spec.split, spec.seed))

    pairs = ExclusivePairSet.from_pairs((pheno_terms[i], pheno_terms[j]) for i, j in pair_idx)
    W_full = np.hstack([W, np.zeros((spec.C, spec.aux_dim))]) if spec.aux_dim else W
    planted = PlantedModel(ModelParameters(LINEAR, {"W": W_full, "b": np.zeros(spec.C)}), A, V, strongest)
    return ds, pairs, planted


def _split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    for k in sorted(range(len(raw)), key=lambda k: (-(raw[k] - sizes[k]), k))[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def split(ds: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 605) -> dict[str, list[str]]:
    """Greedy frequency-stratified train/valid/test split.

    Genes are shuffled, then visited rarest-term-first; each goes to the split
    furthest below its target share, so rare terms spread across splits.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("need three positive split fractions")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError("split fractions must sum to 1")
    n = len(ds.gene_ids)
    sizes = _split_sizes(n, fractions)
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(n)
    counts = ds.phenotypes.column_counts()
    rarest = np.full(n, np.inf)
    for g, t in ds.phenotypes.entries:
        rarest[g] = min(rarest[g], counts[t])
    visit = sorted(range(n), key=lambda pos: (rarest[shuffled[pos]], pos))
    assigned: list[list[str]] = [[], [], []]
    for pos in visit:
        gene = shuffled[pos]
        open_splits = [k for k in range(3) if len(assigned[k]) < sizes[k]]
        k = min(open_splits, key=lambda k: (len(assigned[k]) / sizes[k], k))
        assigned[k].append(ds.gene_ids[gene])
    return {name: sorted(ids) for name, ids in zip(SPLIT_NAMES, assigned)}
