"""Command-line entry point: ``ontopheno <command> ...``.

Exit codes: 0 success, 1 usage error (bad flags, missing files, unsupported
requests), 2 data error (malformed or inconsistent inputs), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, evaluation, exclusivity, model, ontology, trainer
from .errors import DataFormatError, NumericalError, OntologyError, ShapeError, UnsupportedOperation

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

LOGGER = logging.getLogger("ontopheno")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def cmd_mine(args) -> list[Path]:
    graph = ontology.parse_obo(_read(args.obo))
    groups = exclusivity.sibling_groups(graph)
    pairs = exclusivity.mine_keyword_pairs(groups, graph.names)
    if args.ingest:
        pairs = pairs | exclusivity.ingest_pairs(_read(args.ingest), graph)
        if pairs.rejected_count:
            LOGGER.warning("rejected %d non-sibling pair(s)", pairs.rejected_count)
    written = [_write(Path(args.out), pairs.to_tsv())]
    if args.emit_requests:
        docs = exclusivity.emit_annotation_requests(groups, graph.names, args.batch_size)
        out_dir = Path(args.emit_requests)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, doc in enumerate(docs):
            safe = doc.parent_id.replace(":", "_")
            written.append(_write(out_dir / f"request_{k:05d}_{safe}.txt", doc.text))
    return written


def cmd_prepare(args) -> list[Path]:
    pheno_graph = ontology.parse_obo(_read(args.obo))
    go_graph = ontology.parse_obo(_read(args.go_obo))
    pheno_pairs = dataio.parse_annotation_pairs(_read(args.annotations))
    go_pairs = dataio.parse_annotation_pairs(_read(args.go_annotations))
    features = dataio.parse_features(_read(args.features)) if args.features else None

    genes = {g for g, _ in pheno_pairs}
    if features is not None:
        genes |= set(features.gene_ids)
    go_genes = sorted({g for g, _ in go_pairs} & genes) if features is not None else sorted({g for g, _ in go_pairs})
    genes |= set(go_genes)

    pheno = dataio.load_annotations("".join(f"{g}\t{t}\n" for g, t in pheno_pairs), pheno_graph, True, genes)
    go = dataio.load_annotations("".join(f"{g}\t{t}\n" for g, t in go_pairs if g in genes), go_graph, True, genes)

    roots = set(pheno_graph.roots)
    counts = dict(zip(pheno.term_ids, pheno.column_counts()))
    pheno_terms = [t for t in pheno.term_ids if counts[t] > 0 and t not in roots]

    splits = dataio.parse_splits(_read(args.splits)) if args.splits else None
    train_genes = splits["train"] if splits and splits["train"] else list(pheno.gene_ids)
    bottleneck = ontology.select_bottleneck_terms(go_graph, go.restrict(gene_ids=train_genes))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pheno = pheno.restrict(term_ids=pheno_terms)
    go = go.restrict(term_ids=bottleneck)
    written = [
        _write(out / "phenotype_terms.txt", "".join(t + "\n" for t in pheno.term_ids)),
        _write(out / "phenotypes.tsv", dataio.format_annotations(pheno)),
        _write(out / "bottleneck_terms.txt", "".join(t + "\n" for t in bottleneck)),
        _write(out / "go.tsv", dataio.format_annotations(go)),
        _write(out / "go_genes.txt", "".join(g + "\n" for g in go_genes)),
    ]
    if features is not None:
        missing = sorted(set(pheno.gene_ids) - set(features.gene_ids))
        if missing:
            raise DataFormatError("genes without feature rows: " + ", ".join(missing[:10]))
        table = dataio.FeatureTable(pheno.gene_ids, features.rows(pheno.gene_ids))
        written.append(_write(out / "features.csv", dataio.format_features(table)))
        if splits is None:
            ds = dataio.Dataset(pheno.gene_ids, table.values, pheno, go,
                                np.array([g in set(go_genes) for g in pheno.gene_ids]), {})
            splits = dataio.split(ds, (0.8, 0.1, 0.1), args.seed)
    if splits is not None:
        written.append(_write(out / "splits.txt", dataio.format_splits(splits)))
    return written


def _load_data_dir(path: str) -> dataio.Dataset:
    p = Path(path)
    if not p.is_dir() or not (p / "features.csv").is_file():
        raise FileNotFoundError(f"not a dataset directory: {path}")
    return dataio.load_dataset(p)


def cmd_train(args) -> list[Path]:
    run = trainer.parse_config(_read(args.config))
    ds = _load_data_dir(args.data)
    pairs = exclusivity.read_pair_ids(_read(args.pairs)) if args.pairs else exclusivity.ExclusivePairSet()
    params = model.init(run.kind, run.dims, run.train.seed)
    trained, report = trainer.train(params, ds, pairs, run.train)
    out = Path(args.out)
    written = [_write(out, model.format_checkpoint(trained)), _write(out.with_name(out.name + ".report.tsv"), report.to_tsv())]
    if run.train.loss.lambda1 > 0 and len(pairs):
        audit = trainer.exclusivity_audit(trained, ds, pairs, run.train.loss.lambda1, run.train.loss,
                                          "train" if ds.splits.get("train") else None)
        LOGGER.info("exclusivity audit: max conflict %.4f, bound %.4f",
                    max(audit.conflict_rate.values(), default=0.0), audit.bound)
        if not audit.satisfied:
            raise NumericalError("exclusivity audit failed")
    return written


def cmd_eval(args) -> list[Path]:
    params = model.parse_checkpoint(_read(args.model))
    ds = _load_data_dir(args.data)
    dims = params.dims
    if ds.features.shape[1] != dims.d or len(ds.phenotypes.term_ids) != dims.C:
        raise ShapeError("model dimensions do not match the dataset's features/phenotype terms")
    split = "test" if ds.splits.get("test") else None
    genes = ds.subset_ids(split)
    X, _, _, _ = ds.arrays(split)
    S, _ = model.forward(params, X)
    scores = trainer.sigmoid(S)
    if args.propagate_scores:
        if not args.obo:
            raise UsageError("--propagate-scores needs --obo")
        scores = ontology.propagate_scores(ontology.parse_obo(_read(args.obo)), scores, list(ds.phenotypes.term_ids))
    pred = evaluation.PredictionMatrix(tuple(genes), ds.phenotypes.term_ids, scores)
    truth = ds.phenotypes.restrict(gene_ids=genes)
    freqs = dict(zip(ds.phenotypes.term_ids, (int(c) for c in ds.phenotypes.column_counts())))
    report = evaluation.stratify(pred, truth, freqs, args.auc_mode)
    out = Path(args.out)
    return [_write(out, report.to_tsv()), _write(out.with_name(out.stem + ".curve.tsv"), report.curve_tsv())]


def _read_ids(path: str) -> list[str]:
    return [line.strip() for line in _read(path).splitlines() if line.strip()]


def cmd_interpret(args) -> list[Path]:
    params = model.parse_checkpoint(_read(args.model))
    go_ids, pheno_ids = _read_ids(args.go_terms), _read_ids(args.pheno_terms)
    table = model.extract_interpretation(params, go_ids, pheno_ids, args.top_k)
    written = [_write(Path(args.out), table.to_tsv())]
    if args.slice_go or args.slice_pheno:
        if not (args.slice_go and args.slice_pheno and args.slice_out):
            raise UsageError("--slice-go, --slice-pheno and --slice-out go together")
        text = model.heatmap_slice(params, go_ids, pheno_ids, args.slice_go.split(","), args.slice_pheno.split(","))
        written.append(_write(Path(args.slice_out), text))
    return written


def cmd_synth(args) -> list[Path]:
    try:
        spec = dataio.SynthSpec.from_strings(args.spec or [])
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    ds, pairs, planted = dataio.synth_generate(spec)
    out = Path(args.out)
    dataio.save_dataset(ds, out)
    links = ["go_term\tphenotype_term\tweight"]
    for c, p in enumerate(ds.phenotypes.term_ids):
        for k, g in enumerate(ds.go.term_ids):
            if planted.links[c, k] != 0:
                links.append(f"{g}\t{p}\t{format(float(planted.links[c, k]), '.17g')}")
    return [
        out,
        _write(out / "pairs.tsv", pairs.to_tsv()),
        _write(out / "planted_linear.ckpt", model.format_checkpoint(planted.params)),
        _write(out / "planted_links.tsv", "\n".join(links) + "\n"),
    ]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ontopheno", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mine", help="mine exclusive sibling pairs")
    p.add_argument("--obo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ingest")
    p.add_argument("--emit-requests", dest="emit_requests")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=50)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("prepare", help="propagate annotations and select bottleneck terms")
    p.add_argument("--obo", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--go-obo", dest="go_obo", required=True)
    p.add_argument("--go-annotations", dest="go_annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features")
    p.add_argument("--splits")
    p.add_argument("--seed", type=int, default=trainer.DEFAULT_SEED)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="stratified Fmax/AUC report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--auc-mode", dest="auc_mode", choices=("roc", "pr"), default="roc")
    p.add_argument("--out", required=True)
    p.add_argument("--propagate-scores", dest="propagate_scores", action="store_true")
    p.add_argument("--obo")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interpret", help="bottleneck-to-phenotype weight table")
    p.add_argument("--model", required=True)
    p.add_argument("--go-terms", dest="go_terms", required=True)
    p.add_argument("--pheno-terms", dest="pheno_terms", required=True)
    p.add_argument("--top-k", dest="top_k", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--slice-go", dest="slice_go")
    p.add_argument("--slice-pheno", dest="slice_pheno")
    p.add_argument("--slice-out", dest="slice_out")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--spec", nargs="*", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"ontopheno: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        for path in args.func(args):
            LOGGER.info("wrote %s", path)
    except (UsageError, FileNotFoundError, UnsupportedOperation) as exc:
        print(f"ontopheno: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, OntologyError, ShapeError) as exc:
        print(f"ontopheno: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"ontopheno: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
