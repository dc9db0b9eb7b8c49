import pytest
from hypothesis import given, strategies as st

from conftest import DATA
from ontopheno.errors import DataFormatError, OntologyError
from ontopheno.exclusivity import (
    EXTERNAL,
    KEYWORD,
    PROMPT,
    ExclusivePairSet,
    emit_annotation_requests,
    ingest_pairs,
    mine_keyword_pairs,
    names_are_opposed,
    parse_response,
    read_pair_ids,
    response_to_tsv,
    sibling_groups,
)
from ontopheno.ontology import load_obo, parse_obo

ADIPOSE_PARENT = "FX:0000010"


@pytest.fixture(scope="module")
def graph():
    return load_obo(DATA / "phenotype_fixture.obo")


class TestSiblingGroups:
    def test_three_children(self):
        g = parse_obo("[Term]\nid: P\n\n" + "".join(f"[Term]\nid: {c}\nis_a: P\n\n" for c in "XYZ"))
        groups = sibling_groups(g)
        assert [(x.parent_id, x.children) for x in groups] == [("P", ("X", "Y", "Z"))]
        assert len(groups[0].pairs()) == 3

    def test_child_with_two_parents_in_both_groups(self):
        text = "[Term]\nid: P\n\n[Term]\nid: Q\n\n"
        text += "[Term]\nid: A\nis_a: P\nis_a: Q\n\n[Term]\nid: B\nis_a: P\n\n[Term]\nid: C\nis_a: Q\n"
        groups = {x.parent_id: x.children for x in sibling_groups(parse_obo(text))}
        assert "A" in groups["P"] and "A" in groups["Q"]

    def test_adipose_group_has_45_pairs(self, graph):
        group = next(x for x in sibling_groups(graph) if x.parent_id == ADIPOSE_PARENT)
        assert len(group.children) == 10 and len(group.pairs()) == 45


class TestKeywordRule:
    @pytest.mark.parametrize(
        "a, b",
        [
            ("Hypotonia", "Hypertonia"),
            ("Increased adipose tissue", "Decreased adipose tissue"),
            ("Macrocephaly", "Microcephaly"),
            ("High palate", "Low palate"),
            ("short stature", "TALL stature"),
        ],
    )
    def test_opposed(self, a, b):
        assert names_are_opposed(a, b) and names_are_opposed(b, a)

    @pytest.mark.parametrize(
        "a, b",
        [
            ("Increased adipose tissue", "Increased adipose tissue"),
            ("Increased bone density", "Decreased adipose tissue"),
            ("Increased high signal", "Decreased low signal"),
            ("Highlighted rim", "Lowlighted rim"),
            ("Adipocyte hypertrophy", "Lipodystrophy"),
        ],
    )
    def test_not_opposed(self, a, b):
        assert not names_are_opposed(a, b)

    def test_adipose_group(self, graph):
        group = [x for x in sibling_groups(graph) if x.parent_id == ADIPOSE_PARENT]
        mined = mine_keyword_pairs(group, graph.names)
        assert {frozenset(graph.names[t] for t in p) for p in mined} == {
            frozenset({"Increased adipose tissue", "Decreased adipose tissue"})
        }
        assert all(mined.provenance[p] == KEYWORD for p in mined)

    def test_muscle_tone_prefix_rule(self, graph):
        mined = mine_keyword_pairs(sibling_groups(graph), graph.names)
        assert ("FX:0000031", "FX:0000032") in mined
        assert len(mined) == 2


class TestPairSet:
    def test_symmetric_storage(self):
        s = ExclusivePairSet.from_pairs([("b", "a"), ("a", "b")])
        assert s.pairs == {("a", "b")} and ("b", "a") in s

    def test_union_prefers_keyword(self):
        kw = ExclusivePairSet.from_pairs([("a", "b")], KEYWORD)
        ext = ExclusivePairSet.from_pairs([("a", "b"), ("c", "d")], EXTERNAL)
        assert (kw | ext).provenance == (ext | kw).provenance
        assert (kw | ext).provenance[("a", "b")] == KEYWORD

    @given(st.sets(st.tuples(st.sampled_from("abcde"), st.sampled_from("abcde")).filter(lambda p: p[0] != p[1])))
    def test_union_idempotent_and_tsv_roundtrip(self, raw):
        s = ExclusivePairSet.from_pairs(raw)
        assert s | s == s
        assert read_pair_ids(s.to_tsv()) == s

    def test_index_pairs(self):
        s = ExclusivePairSet.from_pairs([("x", "z")])
        assert s.index_pairs(["x", "y", "z"]) == [(0, 2)]


class TestIngest:
    def test_adipose_table(self, graph):
        text = (DATA / "adipose_pairs.tsv").read_text()
        pairs = ingest_pairs(text, graph)
        flagged = {
            frozenset(line.split("\t")[:2]) for line in text.splitlines() if line.split("\t")[2] == "1"
        }
        assert {frozenset(graph.names[t] for t in p) for p in pairs} == flagged
        assert len(pairs) == 8
        assert pairs.rejected_count == 0

    def test_flag_zero_dropped_and_duplicates_merged(self, graph):
        text = "Hypotonia\tHypertonia\t1\nHypertonia\tHypotonia\t1\nFX:0000011\tFX:0000012\t0\n"
        assert ingest_pairs(text, graph).pairs == {("FX:0000031", "FX:0000032")}

    def test_non_siblings_rejected(self, graph):
        pairs = ingest_pairs("Hypotonia\tLipodystrophy\t1\n", graph)
        assert len(pairs) == 0 and pairs.rejected_count == 1

    def test_unknown_term(self, graph):
        with pytest.raises(OntologyError, match="Nonexistent"):
            ingest_pairs("Hypotonia\tNonexistent\t1\n", graph)

    def test_self_pair(self, graph):
        with pytest.raises(DataFormatError, match="line 2"):
            ingest_pairs("Hypotonia\tHypertonia\t1\nHypotonia\tFX:0000031\t1\n", graph)

    @pytest.mark.parametrize("row", ["a\tb\n", "a\tb\tyes\n", "a\tb\t1\tweird\textra\n"])
    def test_malformed(self, graph, row):
        with pytest.raises(DataFormatError):
            ingest_pairs(row, graph)


class TestRequests:
    def test_document_layout(self, graph):
        group = [x for x in sibling_groups(graph) if x.parent_id == "FX:0000030"]
        (doc,) = emit_annotation_requests(group, graph.names, batch_size=10)
        assert doc.text == PROMPT + "\nHypotonia vs Hypertonia\n"
        assert PROMPT.startswith("You are a biomedical expert.")
        assert PROMPT.endswith("Phenotype_1 vs Phenotype_2: 1 or 0\n")

    def test_batching_never_mixes_groups(self, graph):
        docs = emit_annotation_requests(sibling_groups(graph), graph.names, batch_size=20)
        assert [len(d.pairs) for d in docs] == [1, 20, 20, 5, 1]
        assert len({d.parent_id for d in docs}) == 3

    def test_bad_batch_size(self, graph):
        with pytest.raises(ValueError):
            emit_annotation_requests(sibling_groups(graph), graph.names, 0)

    def test_response_roundtrip(self, graph):
        response = "Hypotonia vs Hypertonia: 1\n\nLipodystrophy vs Panniculitis: 0\n"
        assert parse_response(response) == [("Hypotonia", "Hypertonia", 1), ("Lipodystrophy", "Panniculitis", 0)]
        pairs = ingest_pairs(response_to_tsv(response), graph)
        assert pairs.pairs == {("FX:0000031", "FX:0000032")}

    def test_response_contract_violation(self):
        with pytest.raises(DataFormatError, match="line 1"):
            parse_response("A ~ B: yes\n")
