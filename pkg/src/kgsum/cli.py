"""Batch command-line interface.

Subcommands: ``summarize`` (mine a rule model and write the model report),
``score`` (rank test edges by anomaly score), ``complete`` (report where
entities are missing), ``perturb`` (inject anomalies or PCA-remove nodes),
and ``evaluate`` (metrics for a ranking or a completeness run).

Machine-readable reports go to the ``--out`` path; progress, timings, and
human-readable summaries go to stderr.  Every command is deterministic given
its arguments (seed included).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .anomaly import AnomalyScorer, rank_edges
from .encoding import EncodingDomainError
from .evalharness import (
    ANOMALY_TYPES,
    GroundTruth,
    MetricsError,
    PerturbationError,
    PerturbationSpec,
    completeness_eval,
    coverage_select,
    evaluation_edges,
    freq_select,
    metrics,
    perturb,
    remove_nodes_pca,
)
from .graph import GraphParseError, KnowledgeGraph, load_graph, write_graph
from .miner import (
    ConfigError,
    Model,
    generate_candidates,
    model_from_dict,
    model_to_dict,
    qualify_all,
    summarize,
)
from .rules import DIRECTION_NAMES, RuleFormatError, matching_neighbors


def _log(msg: str) -> None:
    print(f"[kgsum] {msg}", file=sys.stderr)


def _timed(name: str):
    class _Timer:
        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, *exc):
            if exc[0] is None:
                _log(f"{name}: {time.perf_counter() - self.start:.2f}s")

    return _Timer()


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load_inputs(args) -> KnowledgeGraph:
    with _timed("load"):
        g = load_graph(args.graph, args.labels)
    _log(
        f"graph: {g.num_nodes} nodes, {g.num_edges} edges "
        f"({g.num_distinct_edges} distinct), {g.num_labels} labels, {g.num_preds} predicates"
    )
    return g


def _load_model(args, g: KnowledgeGraph) -> Model:
    with open(args.model, encoding="utf-8") as fh:
        doc = json.load(fh)
    with _timed("apply model"):
        model = model_from_dict(doc, g)
    return model


def _cmd_summarize(args) -> int:
    g = _load_inputs(args)
    if args.selector == "mdl":
        model = summarize(
            g,
            refine=args.refine,
            max_passes=args.max_passes,
            label_cap=args.label_cap,
            log=_log,
        )
    else:
        if args.top_k is None:
            raise ConfigError(f"--selector {args.selector} requires --top-k")
        with _timed("generate"):
            cands = generate_candidates(g, label_cap=args.label_cap)
        with _timed("qualify"):
            cands = qualify_all(cands, g)
        pick = freq_select if args.selector == "freq" else coverage_select
        with _timed(args.selector):
            model = pick(cands, g, args.top_k)
    doc = model_to_dict(model)
    _write_json(args.out, doc)
    _log(
        f"{len(model.entries)} rules, {doc['pct_bits_vs_empty']:.2f}% bits vs empty, "
        f"{doc['pct_edges_explained']:.2f}% edges explained"
    )
    return 0


def _read_test_edges(path: str, g: KnowledgeGraph) -> list[tuple[int, int, int]]:
    rows: list[tuple[int, int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphParseError(path, line_no, line)
            s, p, o = parts
            sid, pid, oid = g.node_id(s), g.pred_id(p), g.node_id(o)
            if sid is None or pid is None or oid is None:
                raise PerturbationError(f"{path}, line {line_no}: unknown identifier in {parts}")
            rows.append((sid, pid, oid))
    return rows


def _cmd_score(args) -> int:
    g = _load_inputs(args)
    model = _load_model(args, g)
    edges = _read_test_edges(args.test_edges, g)
    with _timed("score"):
        ranked = rank_edges(edges, model)
    with open(args.out, "w", encoding="utf-8") as fh:
        for s, p, o, score in ranked:
            fh.write(f"{g.node_names[s]}\t{g.pred_names[p]}\t{g.node_names[o]}\t{score!r}\n")
    _log(f"ranked {len(ranked)} edges")
    return 0


def _cmd_complete(args) -> int:
    g = _load_inputs(args)
    model = _load_model(args, g)
    scorer = AnomalyScorer(model)
    rows: dict[tuple, dict] = {}
    with _timed("complete"):
        for entry in model.entries:
            for v in entry.exception_starts:
                for child in entry.rule.children:
                    if matching_neighbors(g, v, child):
                        continue  # this child is satisfied; the failure is elsewhere
                    key = (
                        g.node_names[v],
                        g.pred_names[child.predicate],
                        DIRECTION_NAMES[child.direction],
                        tuple(sorted(g.label_names[l] for l in child.child.root_labels)),
                    )
                    rows.setdefault(
                        key,
                        {
                            "node": key[0],
                            "predicate": key[1],
                            "direction": key[2],
                            "expected_labels": list(key[3]),
                            "score_bits": scorer.node_score(v),
                        },
                    )
    ordered = sorted(
        rows.values(),
        key=lambda r: (-r["score_bits"], r["node"], r["predicate"], r["direction"]),
    )
    _write_json(args.out, {"missing": ordered})
    _log(f"{len(ordered)} missing-information reports")
    return 0


def _cmd_perturb(args) -> int:
    g = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.pca:
        with _timed("remove nodes (pca)"):
            new_g, truth = remove_nodes_pca(g, args.q, seed=args.seed)
    else:
        spec = PerturbationSpec(q=args.q, types=tuple(args.anomalies.split(",")), seed=args.seed)
        with _timed("perturb"):
            new_g, truth = perturb(g, spec)
    write_graph(new_g, str(out / "triples.tsv"), str(out / "labels.tsv"))
    _write_json(str(out / "truth.json"), truth.to_dict())
    if not args.pca:
        with open(out / "test_edges.tsv", "w", encoding="utf-8") as fh:
            for s, p, o in evaluation_edges(truth):
                fh.write(f"{s}\t{p}\t{o}\n")
        _log(f"{len(truth.positives)} perturbed edges, {len(truth.negatives)} clean samples")
    else:
        _log(f"removed {len(truth.removed)} nodes")
    return 0


def _read_ranking(path: str) -> list[tuple[str, str, str, float]]:
    rows: list[tuple[str, str, str, float]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise GraphParseError(path, line_no, line)
            rows.append((parts[0], parts[1], parts[2], float(parts[3])))
    return rows


def _cmd_evaluate(args) -> int:
    with open(args.truth, encoding="utf-8") as fh:
        truth = GroundTruth.from_dict(json.load(fh))
    if truth.kind == "perturbation":
        if not args.ranking:
            raise ConfigError("evaluate with perturbation truth requires --ranking")
        report = metrics(_read_ranking(args.ranking), truth)
        doc = {"kind": "perturbation", **report.to_dict()}
    elif truth.kind == "pca_removal":
        if not (args.model and args.graph and args.labels):
            raise ConfigError("evaluate with pca_removal truth requires --model, --graph, --labels")
        g = _load_inputs(args)
        model = _load_model(args, g)
        recall, recall_label = completeness_eval(model, truth)
        doc = {"kind": "pca_removal", "recall": recall, "recall_label": recall_label}
    else:
        raise ConfigError(f"unknown truth kind {truth.kind!r}")
    _write_json(args.out, doc)
    _log(f"evaluation written to {args.out}")
    return 0


def _add_graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="triple file (s<TAB>p<TAB>o per line)")
    p.add_argument("--labels", required=True, help="label file (node<TAB>label per line)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="upper bound on worker threads (the current implementation runs single-threaded)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgsum",
        description="MDL rule summaries for knowledge graphs: compress, rank anomalies, report gaps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="mine an MDL rule model and write the model report")
    _add_graph_args(p)
    p.add_argument("--out", required=True, help="output model file (JSON)")
    p.add_argument(
        "--refine",
        choices=["none", "merge", "nest"],
        default="nest",
        help="refinement level; nest implies merge (default: nest)",
    )
    p.add_argument("--max-passes", type=int, default=3, help="selection passes (default 3)")
    p.add_argument(
        "--label-cap",
        type=int,
        default=None,
        help="restrict candidate generation to the N most frequent labels",
    )
    p.add_argument(
        "--selector",
        choices=["mdl", "freq", "coverage"],
        default="mdl",
        help="rule selector; freq/coverage are the non-MDL top-k baselines",
    )
    p.add_argument(
        "--top-k",
        type=int,
        default=None,
        help="rule budget for the freq/coverage selectors",
    )
    _add_common(p)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("score", help="rank test edges by anomaly score")
    _add_graph_args(p)
    p.add_argument("--model", required=True, help="model file from summarize")
    p.add_argument("--test-edges", required=True, help="TSV of edges to score (s<TAB>p<TAB>o)")
    p.add_argument("--out", required=True, help="output ranking TSV (s, p, o, score)")
    _add_common(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("complete", help="report missing-entity locations from rule exceptions")
    _add_graph_args(p)
    p.add_argument("--model", required=True, help="model file from summarize")
    p.add_argument("--out", required=True, help="output report (JSON)")
    _add_common(p)
    p.set_defaults(func=_cmd_complete)

    p = sub.add_parser("perturb", help="inject anomalies or remove nodes under the PCA")
    _add_graph_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--q", type=float, required=True, help="fraction of nodes to sample per type")
    p.add_argument(
        "--anomalies",
        default=",".join(ANOMALY_TYPES),
        help="comma-separated anomaly types among a1,a2,a3,a4 (default: all)",
    )
    p.add_argument(
        "--pca",
        action="store_true",
        help="remove nodes and enforce the partial completeness assumption instead of injecting",
    )
    _add_common(p)
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("evaluate", help="compute metrics for a ranking or completeness run")
    p.add_argument("--truth", required=True, help="ground-truth file from perturb")
    p.add_argument("--ranking", help="ranking TSV from score (perturbation truth)")
    p.add_argument("--model", help="model file (pca_removal truth)")
    p.add_argument("--graph", help="triple file (pca_removal truth)")
    p.add_argument("--labels", help="label file (pca_removal truth)")
    p.add_argument("--out", required=True, help="output metrics report (JSON)")
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)
    return parser


_ERRORS = (
    ConfigError,
    EncodingDomainError,
    GraphParseError,
    MetricsError,
    PerturbationError,
    RuleFormatError,
    OSError,
    json.JSONDecodeError,
    ValueError,
)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
