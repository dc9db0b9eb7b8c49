"""Linear and bottleneck-MLP predictors with hand-written backward passes.

Bottleneck MLP::

    a     = relu(W1 x + b1)
    g_hat = W_go a + b_go        # bottleneck (coarse GO) logits
    s     = W_bp g_hat + b_p     # phenotype logits

``W_bp`` (phenotype x bottleneck) holds the interpretation weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError, ShapeError, UnsupportedOperation

LINEAR = "linear"
BOTTLENECK = "bottleneck_mlp"

FIELDS = {
    LINEAR: ("W", "b"),
    BOTTLENECK: ("W1", "b1", "W_go", "b_go", "W_bp", "b_p"),
}

CHECKPOINT_MAGIC = "ontopheno-model v1"


@dataclass(frozen=True)
class Dims:
    d: int
    C: int
    h: int = 0
    n: int = 0


@dataclass
class ModelParameters:
    kind: str
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        if self.kind not in FIELDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if tuple(self.tensors) != FIELDS[self.kind]:
            self.tensors = {k: self.tensors[k] for k in FIELDS[self.kind]}
        for name, arr in self.tensors.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} has non-finite entries")
        self._check_shapes()

    def _check_shapes(self):
        t = self.tensors
        d, C, h, n = self.dims.d, self.dims.C, self.dims.h, self.dims.n
        expected = (
            {"W": (C, d), "b": (C,)}
            if self.kind == LINEAR
            else {"W1": (h, d), "b1": (h,), "W_go": (n, h), "b_go": (n,), "W_bp": (C, n), "b_p": (C,)}
        )
        for name, shape in expected.items():
            if t[name].shape != shape:
                raise ShapeError(f"{name} has shape {t[name].shape}, expected {shape}")

    @property
    def dims(self) -> Dims:
        t = self.tensors
        if self.kind == LINEAR:
            C, d = t["W"].shape
            return Dims(d=d, C=C)
        h, d = t["W1"].shape
        return Dims(d=d, C=t["W_bp"].shape[0], h=h, n=t["W_go"].shape[0])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.kind, {k: v.copy() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def with_flat(self, vec: np.ndarray) -> "ModelParameters":
        out, pos = {}, 0
        for k, v in self.tensors.items():
            out[k] = np.asarray(vec[pos:pos + v.size], dtype=np.float64).reshape(v.shape)
            pos += v.size
        return ModelParameters(self.kind, out)


def init(kind: str, dims: Dims, seed: int) -> ModelParameters:
    """Weights i.i.d. uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, biases zero."""
    rng = np.random.default_rng(seed)

    def uniform(rows: int, fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(rows, fan_in))

    if dims.d < 1 or dims.C < 1:
        raise ValueError("feature and phenotype dimensions must be positive")
    if kind == LINEAR:
        return ModelParameters(kind, {"W": uniform(dims.C, dims.d), "b": np.zeros(dims.C)})
    if kind == BOTTLENECK:
        if dims.h < 1 or dims.n < 1:
            raise ValueError("hidden width and bottleneck width must be positive")
        return ModelParameters(
            kind,
            {
                "W1": uniform(dims.h, dims.d),
                "b1": np.zeros(dims.h),
                "W_go": uniform(dims.n, dims.h),
                "b_go": np.zeros(dims.n),
                "W_bp": uniform(dims.C, dims.n),
                "b_p": np.zeros(dims.C),
            },
        )
    raise ValueError(f"unknown model kind {kind!r}")


def _as_features(params: ModelParameters, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != params.dims.d:
        raise ShapeError(f"features have width {X.shape[-1]}, model expects {params.dims.d}")
    return X, single


def forward(params: ModelParameters, x) -> tuple[np.ndarray, np.ndarray | None]:
    """Phenotype logits and bottleneck logits (``None`` for the linear kind)."""
    X, single = _as_features(params, x)
    t = params.tensors
    if params.kind == LINEAR:
        s = X @ t["W"].T + t["b"]
        return (s[0], None) if single else (s, None)
    a = np.maximum(X @ t["W1"].T + t["b1"], 0.0)
    g = a @ t["W_go"].T + t["b_go"]
    s = g @ t["W_bp"].T + t["b_p"]
    return (s[0], g[0]) if single else (s, g)


def backward(params: ModelParameters, x, ds, dg=None) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients w.r.t. the phenotype and bottleneck logits.

    Gradients are summed over samples; pass already-averaged ``ds``/``dg`` for a mean loss.
    """
    X, _ = _as_features(params, x)
    dS = np.atleast_2d(np.asarray(ds, dtype=np.float64))
    if dS.shape != (X.shape[0], params.dims.C):
        raise ShapeError(f"ds has shape {dS.shape}, expected {(X.shape[0], params.dims.C)}")
    t = params.tensors
    if params.kind == LINEAR:
        if dg is not None and np.any(dg):
            raise ShapeError("linear model has no bottleneck gradient")
        return {"W": dS.T @ X, "b": dS.sum(axis=0)}

    z1 = X @ t["W1"].T + t["b1"]
    a = np.maximum(z1, 0.0)
    g = a @ t["W_go"].T + t["b_go"]
    dG = dS @ t["W_bp"]
    if dg is not None:
        dG_extra = np.atleast_2d(np.asarray(dg, dtype=np.float64))
        if dG_extra.shape != dG.shape:
            raise ShapeError(f"dg has shape {dG_extra.shape}, expected {dG.shape}")
        dG = dG + dG_extra
    dZ1 = (dG @ t["W_go"]) * (z1 > 0)
    return {
        "W1": dZ1.T @ X,
        "b1": dZ1.sum(axis=0),
        "W_go": dG.T @ a,
        "b_go": dG.sum(axis=0),
        "W_bp": dS.T @ g,
        "b_p": dS.sum(axis=0),
    }


def save_checkpoint(params: ModelParameters, path: str | Path) -> None:
    Path(path).write_text(format_checkpoint(params), encoding="utf-8")


def format_checkpoint(params: ModelParameters) -> str:
    d = params.dims
    lines = [f"{CHECKPOINT_MAGIC} {params.kind} d={d.d} h={d.h} n={d.n} C={d.C}"]
    for arr in params.tensors.values():
        lines.append(" ".join(format(float(v), ".17g") for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> ModelParameters:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC + " "):
        raise DataFormatError("not an ontopheno-model v1 checkpoint", 1)
    header = lines[0][len(CHECKPOINT_MAGIC) + 1:].split()
    try:
        kind = header[0]
        fields = dict(item.split("=", 1) for item in header[1:])
        dims = Dims(d=int(fields["d"]), C=int(fields["C"]), h=int(fields["h"]), n=int(fields["n"]))
    except (IndexError, KeyError, ValueError) as exc:
        raise DataFormatError(f"bad checkpoint header: {exc}", 1) from exc
    if kind not in FIELDS:
        raise DataFormatError(f"unknown model kind {kind!r}", 1)
    shapes = (
        {"W": (dims.C, dims.d), "b": (dims.C,)}
        if kind == LINEAR
        else {
            "W1": (dims.h, dims.d), "b1": (dims.h,), "W_go": (dims.n, dims.h),
            "b_go": (dims.n,), "W_bp": (dims.C, dims.n), "b_p": (dims.C,),
        }
    )
    if len(lines) - 1 != len(shapes):
        raise DataFormatError(f"expected {len(shapes)} tensor lines, found {len(lines) - 1}")
    tensors = {}
    for lineno, (name, shape) in enumerate(shapes.items(), start=2):
        try:
            values = np.array([float(v) for v in lines[lineno - 1].split()], dtype=np.float64)
        except ValueError as exc:
            raise DataFormatError(f"tensor {name}: {exc}", lineno) from exc
        if values.size != int(np.prod(shape)):
            raise DataFormatError(f"tensor {name} has {values.size} values, expected {int(np.prod(shape))}", lineno)
        tensors[name] = values.reshape(shape)
    return ModelParameters(kind, tensors)


def load_checkpoint(path: str | Path) -> ModelParameters:
    return parse_checkpoint(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class InterpretationTable:
    rows: tuple[tuple[str, str, float], ...]  # (go id, phenotype id, weight)

    def to_tsv(self) -> str:
        out = ["go_term\tphenotype_term\tweight"]
        out += [f"{g}\t{p}\t{format(w, '.17g')}" for g, p, w in self.rows]
        return "\n".join(out) + "\n"


def extract_interpretation(
    params: ModelParameters, go_ids: Sequence[str], pheno_ids: Sequence[str], top_k: int
) -> InterpretationTable:
    """Top ``top_k`` bottleneck-to-phenotype weights by magnitude."""
    W_bp = _interpretation_matrix(params, go_ids, pheno_ids)
    if top_k < 0:
        raise ValueError("top_k must be non-negative")
    C, n = W_bp.shape
    flat = W_bp.ravel()
    # stable sort keeps row-major order among equal magnitudes
    order = np.argsort(-np.abs(flat), kind="stable")[:top_k]
    rows = tuple((go_ids[k % n], pheno_ids[k // n], float(flat[k])) for k in order)
    return InterpretationTable(rows)


def heatmap_slice(
    params: ModelParameters,
    go_ids: Sequence[str],
    pheno_ids: Sequence[str],
    go_subset: Sequence[str],
    pheno_subset: Sequence[str],
) -> str:
    """Rectangular TSV with GO terms as rows and phenotypes as columns."""
    W_bp = _interpretation_matrix(params, go_ids, pheno_ids)
    g_idx = {g: i for i, g in enumerate(go_ids)}
    p_idx = {p: i for i, p in enumerate(pheno_ids)}
    unknown = [g for g in go_subset if g not in g_idx] + [p for p in pheno_subset if p not in p_idx]
    if unknown:
        raise ShapeError("unknown ids in heatmap request: " + ", ".join(unknown))
    lines = ["go_term\t" + "\t".join(pheno_subset)]
    for g in go_subset:
        vals = [format(float(W_bp[p_idx[p], g_idx[g]]), ".17g") for p in pheno_subset]
        lines.append(g + "\t" + "\t".join(vals))
    return "\n".join(lines) + "\n"


def _interpretation_matrix(params: ModelParameters, go_ids, pheno_ids) -> np.ndarray:
    if params.kind != BOTTLENECK:
        raise UnsupportedOperation("interpretation weights exist only for the bottleneck_mlp model")
    W_bp = params["W_bp"]
    if W_bp.shape != (len(pheno_ids), len(go_ids)):
        raise ShapeError(
            f"W_bp has shape {W_bp.shape}, got {len(pheno_ids)} phenotype and {len(go_ids)} GO ids"
        )
    return W_bp
