"""OBO-subset ontology parsing, depth computation and annotation propagation.

Only ``is_a`` and ``relationship: part_of`` edges are loaded. Terms are kept in
lexicographic id order everywhere so that matrices and reports are reproducible.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DataFormatError, OntologyError

LOGGER = logging.getLogger(__name__)

RELATIONS = ("is_a", "part_of")


@dataclass(frozen=True)
class OntologyTerm:
    id: str
    name: str = ""
    parents: tuple[tuple[str, str], ...] = ()  # (parent id, relation kind)
    obsolete: bool = False

    @property
    def parent_ids(self) -> tuple[str, ...]:
        return tuple(sorted({p for p, _ in self.parents}))


@dataclass(frozen=True)
class OntologyGraph:
    """Validated DAG of ontology terms.

    Construct through :func:`parse_obo` or :meth:`from_terms`; both check for
    duplicate ids, dangling parents and cycles.
    """

    terms: Mapping[str, OntologyTerm]
    roots: tuple[str, ...]
    depth: Mapping[str, int]
    children: Mapping[str, tuple[str, ...]] = field(repr=False)
    _ancestors: Mapping[str, frozenset[str]] = field(repr=False)

    @classmethod
    def from_terms(cls, terms: Iterable[OntologyTerm]) -> "OntologyGraph":
        by_id: dict[str, OntologyTerm] = {}
        for term in terms:
            if term.id in by_id:
                raise OntologyError(f"duplicate term id {term.id}")
            by_id[term.id] = term

        for term in by_id.values():
            if term.obsolete and term.parents:
                by_id[term.id] = OntologyTerm(term.id, term.name, (), True)
        for term in by_id.values():
            for parent, rel in term.parents:
                if rel not in RELATIONS:
                    raise OntologyError(f"unknown relation {rel!r} on {term.id}")
                if parent not in by_id:
                    raise OntologyError(f"term {term.id} references missing parent {parent}")
                if by_id[parent].obsolete:
                    raise OntologyError(f"term {term.id} references obsolete parent {parent}")
                if parent == term.id:
                    raise OntologyError(f"cycle detected: {term.id} -> {term.id}")

        children: dict[str, set[str]] = {tid: set() for tid in by_id}
        for term in by_id.values():
            for parent in term.parent_ids:
                children[parent].add(term.id)
        frozen_children = {tid: tuple(sorted(c)) for tid, c in children.items()}

        order = _topological_order(by_id, frozen_children)

        active = [tid for tid in sorted(by_id) if not by_id[tid].obsolete]
        roots = tuple(tid for tid in active if not by_id[tid].parents)

        depth: dict[str, int] = {r: 0 for r in roots}
        queue = deque(roots)
        while queue:
            tid = queue.popleft()
            for child in frozen_children[tid]:
                if child not in depth:
                    depth[child] = depth[tid] + 1
                    queue.append(child)

        ancestors: dict[str, frozenset[str]] = {}
        for tid in order:
            acc: set[str] = set()
            for parent in by_id[tid].parent_ids:
                acc.add(parent)
                acc |= ancestors[parent]
            ancestors[tid] = frozenset(acc)

        return cls(
            terms=dict(sorted(by_id.items())),
            roots=roots,
            depth=depth,
            children=frozen_children,
            _ancestors=ancestors,
        )

    def __contains__(self, term_id: object) -> bool:
        return term_id in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> dict[str, str]:
        return {tid: t.name for tid, t in self.terms.items()}

    def active_terms(self) -> list[str]:
        """Ids of non-obsolete terms in lexicographic order."""
        return [tid for tid, t in self.terms.items() if not t.obsolete]

    def ancestors(self, term_id: str) -> frozenset[str]:
        """All strict ancestors of ``term_id`` along is_a and part_of edges."""
        if term_id not in self.terms:
            raise OntologyError(f"unknown term id {term_id}")
        return self._ancestors[term_id]

    def check_root_count(self, expected: int) -> None:
        if len(self.roots) != expected:
            raise OntologyError(
                f"expected {expected} root(s), found {len(self.roots)}: {', '.join(self.roots)}"
            )


def _topological_order(terms: Mapping[str, OntologyTerm], children: Mapping[str, tuple[str, ...]]) -> list[str]:
    indegree = {tid: len(t.parent_ids) for tid, t in terms.items()}
    queue = deque(sorted(tid for tid, k in indegree.items() if k == 0))
    order: list[str] = []
    while queue:
        tid = queue.popleft()
        order.append(tid)
        for child in children[tid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                queue.append(child)
    if len(order) != len(terms):
        remaining = {tid for tid, k in indegree.items() if k > 0}
        cycle = _find_cycle(terms, remaining)
        raise OntologyError("cycle detected: " + " -> ".join(cycle))
    return order


def _find_cycle(terms: Mapping[str, OntologyTerm], candidates: set[str]) -> list[str]:
    # Every node left after Kahn's algorithm has a parent inside the leftover set,
    # so walking parents from any of them must revisit a node.
    start = min(candidates)
    path = [start]
    seen = {start: 0}
    node = start
    while True:
        node = next(p for p in terms[node].parent_ids if p in candidates)
        if node in seen:
            return path[seen[node]:] + [node]
        seen[node] = len(path)
        path.append(node)


def parse_obo(text: str) -> OntologyGraph:
    """Parse the ``[Term]`` stanzas of an OBO document into a validated graph.

    Recognised keys are ``id``, ``name``, ``is_a``, ``relationship: part_of`` and
    ``is_obsolete``. Anything else, including non-Term stanzas, is ignored.
    """
    terms: list[OntologyTerm] = []
    current: dict | None = None
    in_term = False

    def flush():
        if current is None:
            return
        if not current.get("id"):
            raise DataFormatError("[Term] stanza without id", current["line"])
        terms.append(
            OntologyTerm(
                id=current["id"],
                name=current.get("name", ""),
                parents=tuple(current["parents"]),
                obsolete=current.get("obsolete", False),
            )
        )

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("[") and line.endswith("]"):
            flush()
            in_term = line == "[Term]"
            current = {"line": lineno, "parents": []} if in_term else None
            continue
        if not in_term:
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise DataFormatError(f"expected 'key: value', got {line!r}", lineno)
        key = key.strip()
        value = value.split(" ! ", 1)[0].strip()
        if key == "id":
            if current.get("id"):
                raise DataFormatError("stanza has more than one id", lineno)
            current["id"] = value
        elif key == "name":
            current["name"] = value
        elif key == "is_a":
            current["parents"].append((value.split()[0], "is_a"))
        elif key == "relationship":
            parts = value.split()
            if len(parts) >= 2 and parts[0] == "part_of":
                current["parents"].append((parts[1], "part_of"))
        elif key == "is_obsolete":
            current["obsolete"] = value.lower() == "true"
    flush()

    return OntologyGraph.from_terms(terms)


def load_obo(path: str | Path) -> OntologyGraph:
    return parse_obo(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class AnnotationMatrix:
    """Sparse binary gene x term matrix; ``entries`` holds (gene index, term index) pairs."""

    gene_ids: tuple[str, ...]
    term_ids: tuple[str, ...]
    entries: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise OntologyError("duplicate gene ids in annotation matrix")
        if len(set(self.term_ids)) != len(self.term_ids):
            raise OntologyError("duplicate term ids in annotation matrix")
        n_genes, n_terms = len(self.gene_ids), len(self.term_ids)
        for g, t in self.entries:
            if not (0 <= g < n_genes and 0 <= t < n_terms):
                raise OntologyError(f"annotation entry ({g}, {t}) out of range")

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[str, str]],
        gene_ids: Iterable[str] | None = None,
        term_ids: Iterable[str] | None = None,
    ) -> "AnnotationMatrix":
        pairs = list(pairs)
        genes = tuple(sorted(set(gene_ids) if gene_ids is not None else {g for g, _ in pairs}))
        terms = tuple(sorted(set(term_ids) if term_ids is not None else {t for _, t in pairs}))
        g_index = {g: i for i, g in enumerate(genes)}
        t_index = {t: i for i, t in enumerate(terms)}
        missing = sorted({t for _, t in pairs if t not in t_index})
        if missing:
            raise OntologyError("annotations reference unknown terms: " + ", ".join(missing))
        missing_genes = sorted({g for g, _ in pairs if g not in g_index})
        if missing_genes:
            raise OntologyError("annotations reference unknown genes: " + ", ".join(missing_genes))
        return cls(genes, terms, frozenset((g_index[g], t_index[t]) for g, t in pairs))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.gene_ids), len(self.term_ids)

    def pairs(self) -> list[tuple[str, str]]:
        """(gene id, term id) pairs in row-major order."""
        return [(self.gene_ids[g], self.term_ids[t]) for g, t in sorted(self.entries)]

    def positives(self, gene: str | int) -> set[str]:
        gi = self.gene_ids.index(gene) if isinstance(gene, str) else gene
        return {self.term_ids[t] for g, t in self.entries if g == gi}

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.shape, dtype=dtype)
        if self.entries:
            rows, cols = zip(*self.entries)
            out[list(rows), list(cols)] = 1
        return out

    def column_counts(self) -> np.ndarray:
        counts = np.zeros(len(self.term_ids), dtype=np.int64)
        for _, t in self.entries:
            counts[t] += 1
        return counts

    def restrict(self, gene_ids: Iterable[str] | None = None, term_ids: Iterable[str] | None = None) -> "AnnotationMatrix":
        """Sub-matrix over the given genes/terms (kept in sorted order)."""
        keep_genes = self.gene_ids if gene_ids is None else tuple(sorted(set(gene_ids)))
        keep_terms = self.term_ids if term_ids is None else tuple(sorted(set(term_ids)))
        unknown = sorted(set(keep_genes) - set(self.gene_ids)) + sorted(set(keep_terms) - set(self.term_ids))
        if unknown:
            raise OntologyError("restrict() got unknown ids: " + ", ".join(unknown))
        g_set, t_set = set(keep_genes), set(keep_terms)
        return AnnotationMatrix.from_pairs(
            [(g, t) for g, t in self.pairs() if g in g_set and t in t_set], keep_genes, keep_terms
        )


def propagate(graph: OntologyGraph, ann: AnnotationMatrix) -> AnnotationMatrix:
    """Close every gene's positive set upward along is_a/part_of edges.

    The output term axis is the union of the input terms and every ancestor
    needed for closure.
    """
    bad = sorted(t for t in ann.term_ids if t not in graph.terms)
    obsolete = sorted(t for t in ann.term_ids if t in graph.terms and graph.terms[t].obsolete)
    used = {ann.term_ids[t] for _, t in ann.entries}
    offenders = [t for t in bad + obsolete if t in used]
    if offenders:
        raise OntologyError("annotations reference unknown or obsolete terms: " + ", ".join(offenders))

    pairs = set()
    for gene, term in ann.pairs():
        pairs.add((gene, term))
        for anc in graph.ancestors(term):
            pairs.add((gene, anc))
    terms = set(ann.term_ids) | {t for _, t in pairs}
    return AnnotationMatrix.from_pairs(pairs, ann.gene_ids, terms)


def select_bottleneck_terms(graph: OntologyGraph, train_ann: AnnotationMatrix, depth: int = 2) -> list[str]:
    """Terms exactly ``depth`` edges below their nearest root with a nonzero training column."""
    counts = dict(zip(train_ann.term_ids, train_ann.column_counts()))
    return sorted(
        tid for tid, d in graph.depth.items() if d == depth and counts.get(tid, 0) > 0
    )


def ancestors(graph: OntologyGraph, term_id: str) -> frozenset[str]:
    return graph.ancestors(term_id)


def propagate_scores(graph: OntologyGraph, scores: np.ndarray, term_ids: list[str]) -> np.ndarray:
    """Raise each term's score to the max over its descendants present in ``term_ids``."""
    index = {t: i for i, t in enumerate(term_ids)}
    out = np.array(scores, dtype=np.float64, copy=True)
    for t, i in index.items():
        for anc in graph.ancestors(t):
            j = index.get(anc)
            if j is not None:
                out[:, j] = np.maximum(out[:, j], scores[:, i])
    return out
