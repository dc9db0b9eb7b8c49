import numpy as np
import pytest

from conftest import central_difference, relative_error
from ontopheno.errors import DataFormatError, ShapeError, UnsupportedOperation
from ontopheno.model import (
    BOTTLENECK,
    LINEAR,
    Dims,
    ModelParameters,
    backward,
    extract_interpretation,
    format_checkpoint,
    forward,
    heatmap_slice,
    init,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from ontopheno.objective import LossConfig, total_objective


class TestInit:
    def test_linear_shapes(self):
        p = init(LINEAR, Dims(d=3, C=2), seed=0)
        assert p["W"].shape == (2, 3) and p["b"].shape == (2,)
        assert np.all(np.abs(p["W"]) <= 1 / np.sqrt(3)) and not p["b"].any()

    def test_deterministic(self):
        a = init(BOTTLENECK, Dims(d=4, C=3, h=5, n=2), seed=7)
        b = init(BOTTLENECK, Dims(d=4, C=3, h=5, n=2), seed=7)
        assert all(np.array_equal(a[k], b[k]) for k in a.tensors)

    def test_zero_hidden_width(self):
        with pytest.raises(ValueError):
            init(BOTTLENECK, Dims(d=4, C=3, h=0, n=2), seed=0)

    def test_shape_checked(self):
        with pytest.raises(ShapeError):
            ModelParameters(LINEAR, {"W": np.zeros((2, 3)), "b": np.zeros(3)})


class TestForward:
    def test_identity_linear(self):
        p = ModelParameters(LINEAR, {"W": np.eye(2), "b": np.zeros(2)})
        s, g = forward(p, [1.0, -1.0])
        np.testing.assert_array_equal(s, [1.0, -1.0])
        assert g is None

    def test_zero_weights(self):
        p = init(BOTTLENECK, Dims(d=3, C=2, h=4, n=2), seed=0)
        p = p.with_flat(np.zeros_like(p.flat()))
        p.tensors["b_go"][:] = [0.5, -0.5]
        p.tensors["b_p"][:] = [1.0, 2.0]
        s, g = forward(p, np.ones((2, 3)))
        np.testing.assert_array_equal(g, [[0.5, -0.5]] * 2)
        np.testing.assert_array_equal(s, [[1.0, 2.0]] * 2)

    def test_relu_blocks_negative(self):
        p = ModelParameters(
            BOTTLENECK,
            {
                "W1": np.array([[1.0], [-1.0]]), "b1": np.zeros(2),
                "W_go": np.array([[1.0, 1.0]]), "b_go": np.zeros(1),
                "W_bp": np.array([[1.0]]), "b_p": np.zeros(1),
            },
        )
        assert forward(p, [2.0])[0][0] == 2.0
        assert forward(p, [-3.0])[0][0] == 3.0

    def test_wrong_width(self):
        with pytest.raises(ShapeError):
            forward(init(LINEAR, Dims(d=3, C=2), 0), np.ones(4))


class TestBackward:
    def test_linear_closed_form(self):
        p = init(LINEAR, Dims(d=3, C=2), 1)
        x, ds = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0])
        grads = backward(p, x, ds)
        np.testing.assert_array_equal(grads["W"], np.outer(ds, x))
        np.testing.assert_array_equal(grads["b"], ds)

    def test_full_model_finite_differences(self):
        rng = np.random.default_rng(4)
        p = init(BOTTLENECK, Dims(d=5, C=4, h=6, n=3), 2)
        X = rng.normal(size=(7, 5))
        Y, G = rng.random((7, 4)) < 0.5, rng.random((7, 3)) < 0.5
        mask = np.array([1, 1, 0, 1, 0, 1, 1], dtype=bool)
        cfg = LossConfig(tau=0.8, lambda1=0.5, lambda2=1.2)
        pairs = [(0, 3)]

        def value(flat):
            q = p.with_flat(flat)
            s, g = forward(q, X)
            return total_objective(s, Y, pairs, g, G, mask, cfg).value

        s, g = forward(p, X)
        res = total_objective(s, Y, pairs, g, G, mask, cfg)
        grads = backward(p, X, res.grad_logits, res.grad_go)
        analytic = np.concatenate([grads[k].ravel() for k in p.tensors])
        assert relative_error(analytic, central_difference(value, p.flat())) < 1e-4

    def test_zero_bottleneck_gradient_leaves_phenotype_path(self):
        p = init(BOTTLENECK, Dims(d=3, C=2, h=4, n=2), 3)
        X = np.random.default_rng(0).normal(size=(3, 3))
        ds = np.ones((3, 2))
        a = backward(p, X, ds)
        b = backward(p, X, ds, np.zeros((3, 2)))
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestCheckpoint:
    @pytest.mark.parametrize("kind, dims", [(LINEAR, Dims(d=3, C=2)), (BOTTLENECK, Dims(d=3, C=2, h=4, n=2))])
    def test_roundtrip_bit_exact(self, tmp_path, kind, dims):
        p = init(kind, dims, 9)
        p.tensors[next(iter(p.tensors))][0] *= np.pi
        save_checkpoint(p, tmp_path / "m.ckpt")
        q = load_checkpoint(tmp_path / "m.ckpt")
        assert q.kind == kind and all(np.array_equal(p[k], q[k]) for k in p.tensors)
        assert format_checkpoint(q) == format_checkpoint(p)

    def test_header(self):
        text = format_checkpoint(init(BOTTLENECK, Dims(d=3, C=2, h=4, n=5), 0))
        assert text.splitlines()[0] == "ontopheno-model v1 bottleneck_mlp d=3 h=4 n=5 C=2"

    @pytest.mark.parametrize(
        "text",
        ["garbage\n", "ontopheno-model v1 linear d=2 h=0 n=0 C=1\n1 2\n", "ontopheno-model v1 linear d=2 h=0 n=0 C=1\n1 x\n0\n"],
    )
    def test_malformed(self, text):
        with pytest.raises(DataFormatError):
            parse_checkpoint(text)


def _bottleneck_with(W_bp):
    W_bp = np.asarray(W_bp, dtype=np.float64)
    C, n = W_bp.shape
    p = init(BOTTLENECK, Dims(d=2, C=C, h=2, n=n), 0)
    p.tensors["W_bp"] = W_bp
    return p


class TestInterpretation:
    def test_single_entry(self):
        p = _bottleneck_with([[0.0, 0.0], [0.0, -2.5]])
        table = extract_interpretation(p, ["G1", "G2"], ["P1", "P2"], top_k=5)
        assert table.rows[0] == ("G2", "P2", -2.5)

    def test_top_k_larger_than_table(self):
        p = _bottleneck_with([[1.0, 2.0], [3.0, 4.0]])
        table = extract_interpretation(p, ["G1", "G2"], ["P1", "P2"], top_k=10)
        assert [r[2] for r in table.rows] == [4.0, 3.0, 2.0, 1.0]

    def test_ties_keep_row_major_order(self):
        p = _bottleneck_with([[1.0, -1.0], [1.0, 0.5]])
        rows = extract_interpretation(p, ["G1", "G2"], ["P1", "P2"], top_k=3).rows
        assert rows == (("G1", "P1", 1.0), ("G2", "P1", -1.0), ("G1", "P2", 1.0))

    def test_top_k_zero(self):
        p = _bottleneck_with([[1.0]])
        assert extract_interpretation(p, ["G"], ["P"], 0).to_tsv() == "go_term\tphenotype_term\tweight\n"

    def test_linear_unsupported(self):
        with pytest.raises(UnsupportedOperation):
            extract_interpretation(init(LINEAR, Dims(d=2, C=2), 0), ["G"], ["P1", "P2"], 1)

    def test_id_mismatch(self):
        with pytest.raises(ShapeError):
            extract_interpretation(_bottleneck_with([[1.0]]), ["G1", "G2"], ["P"], 1)

    def test_heatmap_slice(self):
        W = np.arange(16, dtype=float).reshape(4, 4)
        p = _bottleneck_with(W)
        go, ph = [f"G{k}" for k in range(4)], [f"P{k}" for k in range(4)]
        lines = heatmap_slice(p, go, ph, go, ph).splitlines()
        assert lines[0] == "go_term\tP0\tP1\tP2\tP3"
        values = [float(v) for line in lines[1:] for v in line.split("\t")[1:]]
        assert len(values) == 16
        assert values == list(W.T.ravel())
