from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import CHAIN_OBO
from ontopheno.dataio import (
    FeatureTable,
    SynthSpec,
    fill_missing_go_features,
    format_features,
    format_splits,
    load_annotations,
    load_dataset,
    parse_features,
    parse_splits,
    save_dataset,
    split,
    synth_generate,
)
from ontopheno.errors import DataFormatError, OntologyError
from ontopheno.model import forward
from ontopheno.ontology import parse_obo


class TestFeatures:
    def test_small_file(self):
        table = parse_features("gene_id,f0,f1\ng1,1.5,-2\ng2,0,3e-1\n")
        assert table.gene_ids == ("g1", "g2")
        np.testing.assert_array_equal(table.values, [[1.5, -2.0], [0.0, 0.3]])

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        table = FeatureTable(("a", "b", "c"), rng.normal(size=(3, 4)) * 1e-3)
        back = parse_features(format_features(table))
        assert back.gene_ids == table.gene_ids and np.array_equal(back.values, table.values)

    def test_duplicate_gene(self):
        with pytest.raises(DataFormatError, match="line 3"):
            parse_features("gene_id,f0\ng1,1\ng1,2\n")

    def test_non_numeric_cell_located(self):
        with pytest.raises(DataFormatError, match=r"line 2.*f1"):
            parse_features("gene_id,f0,f1\ng1,1,abc\n")

    @pytest.mark.parametrize("text", ["", "gene,f0\n", "gene_id,x\n", "gene_id,f0\ng1,1,2\n"])
    def test_malformed(self, text):
        with pytest.raises(DataFormatError):
            parse_features(text)


class TestAnnotations:
    def test_propagation_on_and_off(self):
        g = parse_obo(CHAIN_OBO)
        assert len(load_annotations("g1\tT:C\n", g).entries) == 3
        assert len(load_annotations("g1\tT:C\n", g, propagate_flag=False).entries) == 1

    def test_empty(self):
        ann = load_annotations("", parse_obo(CHAIN_OBO))
        assert ann.shape == (0, 3) and not ann.entries

    def test_unknown_term(self):
        with pytest.raises(OntologyError):
            load_annotations("g1\tT:Q\n", parse_obo(CHAIN_OBO))

    def test_file_path(self, tmp_path):
        path = tmp_path / "a.tsv"
        path.write_text("# comment\ng1\tT:B\n")
        assert load_annotations(path, parse_obo(CHAIN_OBO)).positives("g1") == {"T:A", "T:B"}

    def test_malformed_row(self):
        with pytest.raises(DataFormatError, match="line 1"):
            load_annotations("g1 T:C\n", parse_obo(CHAIN_OBO))


class TestSplits:
    def test_roundtrip(self):
        splits = {"train": ["a", "b"], "valid": ["c"], "test": []}
        assert parse_splits(format_splits(splits)) == splits

    def test_overlap_rejected(self):
        with pytest.raises(DataFormatError):
            parse_splits("[train]\na\n[test]\na\n")

    def test_unknown_section(self):
        with pytest.raises(DataFormatError, match="line 1"):
            parse_splits("[holdout]\na\n")

    def test_sizes_and_determinism(self):
        ds, _, _ = synth_generate(SynthSpec(N=100, seed=4))
        a, b = split(ds, (0.8, 0.1, 0.1), 3), split(ds, (0.8, 0.1, 0.1), 3)
        assert a == b
        assert [len(a[k]) for k in ("train", "valid", "test")] == [80, 10, 10]
        assert sorted(sum(a.values(), [])) == list(ds.gene_ids)

    def test_bad_fractions(self):
        ds, _, _ = synth_generate(SynthSpec(N=20))
        with pytest.raises(ValueError):
            split(ds, (0.5, 0.5, 0.5))


class TestSynthetic:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            ds, _, _ = synth_generate(SynthSpec(N=60, seed=9))
            save_dataset(ds, tmp_path / name)
        for f in sorted(Path(tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_planted_model_separates_noise_free_data(self):
        spec = SynthSpec(N=300, noise=0.0, margin=0.5, seed=2)
        ds, _, planted = synth_generate(spec)
        S, _ = forward(planted.params, ds.features)
        np.testing.assert_array_equal(S >= spec.margin, ds.Y.astype(bool))

    def test_pairs_never_co_positive(self):
        ds, pairs, _ = synth_generate(SynthSpec(N=500, noise=0.3, seed=1))
        Y = ds.Y.astype(bool)
        for i, j in pairs.index_pairs(ds.phenotypes.term_ids):
            assert not np.any(Y[:, i] & Y[:, j])
        assert len(pairs) == 3

    def test_planted_structure(self):
        _, _, planted = synth_generate(SynthSpec(seed=5))
        W = planted.params["W"]
        np.testing.assert_allclose(np.linalg.norm(W, axis=1), 1.0)
        np.testing.assert_allclose(np.linalg.norm(planted.go_directions, axis=1), 1.0)
        assert len(planted.strongest) == 1
        c, k = planted.strongest[0]
        assert np.count_nonzero(planted.links[c]) == 1 and abs(planted.links[c, k]) == np.abs(planted.links).max()

    def test_go_mask(self):
        ds, _, _ = synth_generate(SynthSpec(N=100, go_fraction=0.5))
        assert ds.go_mask.sum() == 50
        assert not ds.G[~ds.go_mask].any()

    def test_infeasible_pair_count(self):
        with pytest.raises(ValueError):
            SynthSpec(C=4, pairs=3)

    def test_spec_from_strings(self):
        spec = SynthSpec.from_strings(["N=50", "noise=0", "split=0.6,0.2,0.2"])
        assert spec.N == 50 and spec.noise == 0.0 and spec.split == (0.6, 0.2, 0.2)
        with pytest.raises(ValueError):
            SynthSpec.from_strings(["bogus=1"])

    def test_aux_features_for_missing_go(self):
        ds, _, _ = synth_generate(SynthSpec(N=50, aux_dim=4, go_fraction=0.6))
        aux = ds.features[~ds.go_mask, -4:]
        np.testing.assert_allclose(np.linalg.norm(aux, axis=1), 1.0)


def test_fill_missing_go_features_keeps_present_rows():
    block = np.arange(6, dtype=float).reshape(3, 2)
    out = fill_missing_go_features(block, np.array([True, False, True]), seed=0)
    np.testing.assert_array_equal(out[[0, 2]], block[[0, 2]])
    assert np.linalg.norm(out[1]) == pytest.approx(1.0)


def test_dataset_directory_roundtrip(tmp_path):
    ds, _, _ = synth_generate(SynthSpec(N=40, seed=3))
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.gene_ids == ds.gene_ids and np.array_equal(back.features, ds.features)
    assert back.phenotypes == ds.phenotypes and back.go == ds.go
    assert np.array_equal(back.go_mask, ds.go_mask) and back.splits == ds.splits
    assert replace(back, splits={}).indices(None).size == 40
