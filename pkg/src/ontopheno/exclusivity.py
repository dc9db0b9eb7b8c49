"""Mutually exclusive sibling pairs: keyword mining, pair-file ingestion and
the file-based request/response contract for external annotation."""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataFormatError, OntologyError
from .ontology import OntologyGraph

LOGGER = logging.getLogger(__name__)

KEYWORD = "keyword"
EXTERNAL = "external"
# keyword wins when the same pair arrives from both sources, so union stays commutative
_PROVENANCE_RANK = {KEYWORD: 0, EXTERNAL: 1}

OPPOSING_WORDS = [
    ("increased", "decreased"),
    ("high", "low"),
    ("big", "small"),
    ("tall", "short"),
    ("excess", "deficient"),
    ("accelerated", "delayed"),
    ("early", "late"),
    ("enlarged", "reduced"),
]
OPPOSING_PREFIXES = [
    ("hyper", "hypo"),
    ("macro", "micro"),
    ("over", "under"),
]

PROMPT = (
    "You are a biomedical expert. Given a list of phenotype pairs, determine whether "
    "each pair is biologically mutually exclusive.\n"
    "Return 1 if they are mutually exclusive (i.e., cannot occur together in the same "
    "DNA individual), or 0 if they are not exclusive or unclear.\n"
    "\n"
    "Respond in the format:\n"
    "Phenotype_1 vs Phenotype_2: 1 or 0\n"
)

_RESPONSE_RE = re.compile(r"^\s*(?P<a>.+?)\s+vs\.?\s+(?P<b>.+?)\s*:\s*(?P<flag>[01])\s*$")


def _ordered(a: str, b: str) -> tuple[str, str]:
    if a == b:
        raise ValueError(f"exclusive pair must join two distinct terms, got {a!r} twice")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class ExclusivePairSet:
    """Symmetric, irreflexive set of exclusive term pairs stored as ``(a, b)`` with ``a < b``."""

    provenance: Mapping[tuple[str, str], str] = field(default_factory=dict)
    rejected: frozenset[tuple[str, str]] = frozenset()

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]], tag: str = EXTERNAL) -> "ExclusivePairSet":
        return cls({_ordered(a, b): tag for a, b in pairs})

    @property
    def pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.provenance)

    @property
    def rejected_count(self) -> int:
        return len(self.rejected)

    def __len__(self) -> int:
        return len(self.provenance)

    def __iter__(self):
        return iter(sorted(self.provenance))

    def __contains__(self, pair) -> bool:
        a, b = pair
        return (a, b) in self.provenance or (b, a) in self.provenance

    def union(self, other: "ExclusivePairSet") -> "ExclusivePairSet":
        merged = dict(self.provenance)
        for pair, tag in other.provenance.items():
            if pair not in merged or _PROVENANCE_RANK[tag] < _PROVENANCE_RANK[merged[pair]]:
                merged[pair] = tag
        return ExclusivePairSet(dict(sorted(merged.items())), self.rejected | other.rejected)

    __or__ = union

    def index_pairs(self, term_ids: list[str] | tuple[str, ...]) -> list[tuple[int, int]]:
        """Map pairs onto column indices; pairs with a term outside ``term_ids`` are skipped."""
        index = {t: i for i, t in enumerate(term_ids)}
        out = []
        for a, b in self:
            if a in index and b in index:
                out.append((index[a], index[b]))
        return out

    def to_tsv(self) -> str:
        lines = [f"{a}\t{b}\t1\t{tag}" for (a, b), tag in sorted(self.provenance.items())]
        return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class SiblingGroup:
    parent_id: str
    children: tuple[str, ...]

    def pairs(self) -> list[tuple[str, str]]:
        return list(itertools.combinations(self.children, 2))


def sibling_groups(graph: OntologyGraph) -> list[SiblingGroup]:
    """One group per term with at least two direct children, ordered by parent id."""
    return [
        SiblingGroup(parent, children)
        for parent, children in sorted(graph.children.items())
        if len(children) >= 2
    ]


def _casefold_keyword(original: str, replacement: str) -> str:
    if original.isupper() and len(original) > 1:
        return replacement.upper()
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def _single_substitutions(name: str) -> Iterable[str]:
    """Every string obtained by swapping exactly one opposing keyword occurrence in ``name``."""
    for src, dst in OPPOSING_WORDS + [(b, a) for a, b in OPPOSING_WORDS]:
        for m in re.finditer(rf"\b{src}\b", name, flags=re.IGNORECASE):
            yield name[: m.start()] + _casefold_keyword(m.group(0), dst) + name[m.end():]
    for src, dst in OPPOSING_PREFIXES + [(b, a) for a, b in OPPOSING_PREFIXES]:
        for m in re.finditer(rf"\b{src}", name, flags=re.IGNORECASE):
            yield name[: m.start()] + _casefold_keyword(m.group(0), dst) + name[m.end():]


def names_are_opposed(name_a: str, name_b: str) -> bool:
    """True when one opposing-keyword swap turns ``name_a`` into ``name_b`` (case-insensitive)."""
    target = name_b.casefold()
    if name_a.casefold() == target:
        return False
    return any(cand.casefold() == target for cand in _single_substitutions(name_a))


def mine_keyword_pairs(groups: Iterable[SiblingGroup], names: Mapping[str, str]) -> ExclusivePairSet:
    found: dict[tuple[str, str], str] = {}
    for group in groups:
        for a, b in group.pairs():
            if names_are_opposed(names[a], names[b]):
                found[_ordered(a, b)] = KEYWORD
    return ExclusivePairSet(dict(sorted(found.items())))


def share_parent(graph: OntologyGraph, a: str, b: str) -> bool:
    return bool(set(graph.terms[a].parent_ids) & set(graph.terms[b].parent_ids))


def _resolver(graph: OntologyGraph):
    by_name: dict[str, list[str]] = {}
    for tid, term in graph.terms.items():
        if term.name:
            by_name.setdefault(term.name, []).append(tid)

    def resolve(token: str) -> str | None:
        if token in graph.terms:
            return token
        hits = by_name.get(token, [])
        if len(hits) > 1:
            raise OntologyError(f"term name {token!r} is ambiguous: {', '.join(hits)}")
        return hits[0] if hits else None

    return resolve


def ingest_pairs(text: str, graph: OntologyGraph) -> ExclusivePairSet:
    """Read ``term_a<TAB>term_b<TAB>flag[<TAB>provenance]`` rows; keep flag-1 sibling pairs.

    Terms may be ids or exact names. Pairs whose terms share no direct parent
    are dropped and reported in ``rejected``.
    """
    resolve = _resolver(graph)
    rows: list[tuple[int, str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) not in (3, 4):
            raise DataFormatError(f"expected 3 tab-separated columns, got {len(cols)}", lineno)
        if cols[2] not in ("0", "1"):
            raise DataFormatError(f"flag must be 0 or 1, got {cols[2]!r}", lineno)
        if not cols[0] or not cols[1]:
            raise DataFormatError("empty term field", lineno)
        if cols[2] == "1":
            rows.append((lineno, cols[0], cols[1]))

    unresolved = sorted({tok for _, a, b in rows for tok in (a, b) if resolve(tok) is None})
    if unresolved:
        raise OntologyError("unresolvable terms in pair file: " + "; ".join(unresolved))

    kept: dict[tuple[str, str], str] = {}
    rejected: set[tuple[str, str]] = set()
    for lineno, a, b in rows:
        ia, ib = resolve(a), resolve(b)
        if ia == ib:
            raise DataFormatError(f"pair joins a term with itself ({ia})", lineno)
        pair = _ordered(ia, ib)
        if share_parent(graph, ia, ib):
            kept[pair] = EXTERNAL
        else:
            rejected.add(pair)
    if rejected:
        LOGGER.warning("dropped %d non-sibling pair(s) during ingestion", len(rejected))
    return ExclusivePairSet(dict(sorted(kept.items())), frozenset(rejected))


def load_pairs(path: str | Path, graph: OntologyGraph) -> ExclusivePairSet:
    return ingest_pairs(Path(path).read_text(encoding="utf-8"), graph)


def read_pair_ids(text: str) -> ExclusivePairSet:
    """Read a pair TSV by id only, without ontology checks (used for processed datasets)."""
    found: dict[tuple[str, str], str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        cols = [c.strip() for c in raw.split("\t")]
        if len(cols) not in (3, 4) or cols[2] not in ("0", "1"):
            raise DataFormatError("expected term_a, term_b, flag[, provenance]", lineno)
        if cols[2] == "0":
            continue
        if cols[0] == cols[1]:
            raise DataFormatError(f"pair joins a term with itself ({cols[0]})", lineno)
        tag = cols[3] if len(cols) == 4 else EXTERNAL
        if tag not in _PROVENANCE_RANK:
            raise DataFormatError(f"unknown provenance tag {tag!r}", lineno)
        found[_ordered(cols[0], cols[1])] = tag
    return ExclusivePairSet(dict(sorted(found.items())))


@dataclass(frozen=True)
class RequestDocument:
    parent_id: str
    parent_name: str
    pairs: tuple[tuple[str, str], ...]  # term ids
    text: str


def emit_annotation_requests(
    groups: Iterable[SiblingGroup], names: Mapping[str, str], batch_size: int
) -> list[RequestDocument]:
    """Prompt documents with at most ``batch_size`` pairs each; groups are never mixed."""
    if batch_size < 1:
        raise ValueError("batch_size must be a positive integer")
    docs = []
    for group in groups:
        pairs = group.pairs()
        for start in range(0, len(pairs), batch_size):
            chunk = tuple(pairs[start:start + batch_size])
            body = "".join(f"{names[a]} vs {names[b]}\n" for a, b in chunk)
            docs.append(
                RequestDocument(group.parent_id, names.get(group.parent_id, ""), chunk, PROMPT + "\n" + body)
            )
    return docs


def parse_response(text: str) -> list[tuple[str, str, int]]:
    """Parse ``A vs B: 1`` lines into (A, B, flag) rows. Blank lines are skipped."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        m = _RESPONSE_RE.match(raw)
        if m is None:
            raise DataFormatError(f"response line does not match 'A vs B: 0|1': {raw.strip()!r}", lineno)
        rows.append((m["a"], m["b"], int(m["flag"])))
    return rows


def response_to_tsv(text: str) -> str:
    return "".join(f"{a}\t{b}\t{flag}\n" for a, b, flag in parse_response(text))
