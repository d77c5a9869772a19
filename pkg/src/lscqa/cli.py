"""Batch command line: ingest, split, sample, train, eval, verify, report.

Every successful command writes exactly one ``manifest.json`` into its
output directory recording the command, a config snapshot, input digests,
the seed, the produced artifacts, and wall-clock time, so any artifact can
be regenerated from its manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation, model, oracle, training, wlcheck
from .graphstore import (
    IngestConfig,
    SplitManifest,
    ingest,
    read_attribute_triples,
    read_session_log,
    split_edges,
    split_from_manifest,
    write_attribute_triples,
    write_session_log,
)
from .query import QUERY_TYPES

CONFIG_ENV = "LSCQA_CONFIG"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: list[Path], seed, artifacts: list[Path], t0: float):
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "artifacts": [str(p) for p in artifacts],
        "wall_clock_s": round(time.monotonic() - t0, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_graph(graph_dir: Path):
    sessions_path = graph_dir / "sessions.jsonl"
    triples_path = graph_dir / "triples.tsv"
    with open(sessions_path) as fh:
        records = list(read_session_log(fh))
    with open(triples_path) as fh:
        triples = list(read_attribute_triples(fh))
    return ingest(records, triples, IngestConfig()), [sessions_path, triples_path]


def _load_split(graph_dir: Path, split_path: Path):
    graph, inputs = _load_graph(graph_dir)
    manifest = SplitManifest.from_json(split_path.read_text())
    return split_from_manifest(graph, manifest), inputs + [split_path]


def _config_path(args) -> Path | None:
    if getattr(args, "config", None):
        return Path(args.config)
    env = os.environ.get(CONFIG_ENV)
    return Path(env) if env else None


def _load_configs(args) -> tuple[model.ModelConfig, training.TrainConfig, dict]:
    path = _config_path(args)
    payload = json.loads(path.read_text()) if path else {}
    mconf = model.ModelConfig(**payload.get("model", {}))
    tconf = training.TrainConfig(**payload.get("train", {}))
    return mconf, tconf, payload


def cmd_ingest(args) -> int:
    t0 = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sessions_path = Path(args.sessions)
    triples_path = Path(args.triples)
    with open(sessions_path) as fh:
        records = list(read_session_log(fh))
    with open(triples_path) as fh:
        triples = list(read_attribute_triples(fh))
    config = IngestConfig(
        max_session_len=args.max_session_len,
        relation_policy=args.relation_policy,
    )
    graph = ingest(records, triples, config)

    canonical_sessions = out / "sessions.jsonl"
    canonical_sessions.write_text(write_session_log(graph))
    canonical_triples = out / "triples.tsv"
    canonical_triples.write_text(write_attribute_triples(graph))
    stats_path = out / "stats.json"
    stats_path.write_text(json.dumps(asdict(graph.stats()), indent=2, sort_keys=True) + "\n")
    print(json.dumps(asdict(graph.stats())))

    _write_manifest(
        out, "ingest", asdict(config), [sessions_path, triples_path], None,
        [canonical_sessions, canonical_triples, stats_path], t0,
    )
    return 0


def cmd_split(args) -> int:
    t0 = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, inputs = _load_graph(Path(args.graph))
    fractions = tuple(float(f) for f in args.fractions.split(","))
    if len(fractions) != 3:
        print("--fractions needs three comma-separated numbers", file=sys.stderr)
        return 2
    sg = split_edges(graph, fractions, args.seed)
    split_path = out / "split.json"
    split_path.write_text(sg.manifest.to_json() + "\n")
    counts = {part: 0 for part in ("train", "valid", "test")}
    for _, _, _, part in sg.manifest.assignment:
        counts[part] += 1
    print(json.dumps(counts))
    _write_manifest(out, "split", {"fractions": fractions}, inputs, args.seed, [split_path], t0)
    return 0


def cmd_sample(args) -> int:
    t0 = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sg, inputs = _load_split(Path(args.graph), Path(args.splitfile))
    tags = QUERY_TYPES if args.type == ["all"] else args.type
    artifacts = []
    for tag in tags:
        if tag not in QUERY_TYPES:
            print(f"unknown query type {tag!r}", file=sys.stderr)
            return 2
        samples = oracle.sample(sg, tag, args.count, args.seed, split=args.split)
        path = out / f"queries_{args.split}_{tag}.jsonl"
        path.write_text(oracle.write_query_file(samples, sg.test, args.split, tag, args.seed))
        artifacts.append(path)
        print(f"{tag}\t{args.split}\t{len(samples)}")
    _write_manifest(
        out, "sample", {"types": list(tags), "count": args.count, "split": args.split},
        inputs, args.seed, artifacts, t0,
    )
    return 0


def _read_query_dir(queries_dir: Path, sg, split: str):
    out = []
    for path in sorted(queries_dir.glob(f"queries_{split}_*.jsonl")):
        _, samples = oracle.read_query_file(path.read_text(), sg.test)
        out.extend(samples)
    return out


def cmd_train(args) -> int:
    t0 = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sg, inputs = _load_split(Path(args.graph), Path(args.splitfile))
    mconf, tconf, payload = _load_configs(args)
    if args.seed is not None:
        tconf = training.TrainConfig(**{**json.loads(tconf.to_json()), "seed": args.seed})
    queries = _read_query_dir(Path(args.queries), sg, "train")
    if not queries:
        print(f"no queries_train_*.jsonl files under {args.queries}", file=sys.stderr)
        return 1
    g = sg.test
    params = model.init_params(
        mconf, len(g.item_names), len(g.attribute_names), len(g.relation_names), seed=tconf.seed
    )
    result = training.train(tconf, queries, params)
    ckpt_path = out / "checkpoint.npz"
    model.save_checkpoint(ckpt_path, params)
    curve_path = out / "loss_curve.tsv"
    curve_path.write_text(training.loss_curve_tsv(result.loss_curve))
    print(f"final_step\t{result.final_step}\tdiverged\t{result.diverged}")
    _write_manifest(
        out, "train", {"model": json.loads(mconf.to_json()), "train": json.loads(tconf.to_json())},
        inputs, tconf.seed, [ckpt_path, curve_path], t0,
    )
    return 1 if result.diverged else 0


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sg, inputs = _load_split(Path(args.graph), Path(args.splitfile))
    params = model.load_checkpoint(Path(args.checkpoint))
    queries = _read_query_dir(Path(args.queries), sg, args.split)
    if not queries:
        print(f"no queries_{args.split}_*.jsonl files under {args.queries}", file=sys.stderr)
        return 1
    report = evaluation.evaluate(
        params, queries, sg, split=args.split,
        identifier_seed=args.seed, filtered=not args.unfiltered,
    )
    artifacts = []
    for name, text in (("report.tsv", report.to_tsv()), ("report.json", report.to_json() + "\n")):
        path = out / name
        path.write_text(text)
        artifacts.append(path)
    if args.random_baseline:
        baseline = evaluation.random_baseline(queries, sg, seed=args.seed, split=args.split,
                                              filtered=not args.unfiltered)
        path = out / "report_random.json"
        path.write_text(baseline.to_json() + "\n")
        artifacts.append(path)
    print(report.to_tsv(), end="")
    _write_manifest(
        out, "eval", {"split": args.split, "filtered": not args.unfiltered},
        inputs + [Path(args.checkpoint)], args.seed, artifacts, t0,
    )
    return 0


def cmd_verify(args) -> int:
    t0 = time.monotonic()
    if not args.lemma3:
        print("nothing to verify: pass --lemma3", file=sys.stderr)
        return 2
    result = wlcheck.lemma3_check(args.trials, size_bound=args.size_bound, seed=args.seed)
    summary = "edge-to-vertex equivalence: " + result.summary()
    print(summary)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "verify_report.txt"
        path.write_text(summary + "\n")
        _write_manifest(
            out, "verify", {"trials": args.trials, "size_bound": args.size_bound},
            [], args.seed, [path], t0,
        )
    return 0 if result.passed else 1


def cmd_report(args) -> int:
    t0 = time.monotonic()
    named = []
    inputs = []
    for spec in args.inputs:
        if "=" not in spec:
            print(f"--inputs entries look like name=path, got {spec!r}", file=sys.stderr)
            return 2
        name, path = spec.split("=", 1)
        inputs.append(Path(path))
        named.append((name, evaluation.EvalReport.from_json(Path(path).read_text())))
    text = evaluation.merge_reports_tsv(named)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    merged = out / "merged.tsv"
    merged.write_text(text)
    print(text, end="")
    _write_manifest(out, "report", {"inputs": args.inputs}, inputs, None, [merged], t0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lscqa",
        description="Logical session query workbench: build a hypergraph, sample queries, train and evaluate the encoder, verify structural properties.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a graph from a session log and attribute triples")
    p.add_argument("--sessions", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-session-len", type=int, default=20)
    p.add_argument("--relation-policy", choices=["create", "reject"], default="create")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("split", help="partition relational edges into train/valid/test")
    p.add_argument("--graph", required=True, help="directory produced by ingest")
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("sample", help="sample query instances per type")
    p.add_argument("--graph", required=True)
    p.add_argument("--splitfile", required=True)
    p.add_argument("--type", nargs="+", default=["all"])
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--split", choices=["train", "valid", "test"], default="train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("train", help="train the encoder on sampled queries")
    p.add_argument("--graph", required=True)
    p.add_argument("--splitfile", required=True)
    p.add_argument("--queries", required=True, help="directory with queries_train_*.jsonl")
    p.add_argument("--config", help=f"JSON with model/train sections (default ${CONFIG_ENV})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="filtered mean-reciprocal-rank report")
    p.add_argument("--graph", required=True)
    p.add_argument("--splitfile", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["valid", "test"], default="test")
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--unfiltered", action="store_true")
    p.add_argument("--random-baseline", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run structural property checks")
    p.add_argument("--lemma3", action="store_true", help="edge-to-vertex isomorphism equivalence")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--size-bound", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("report", help="merge eval reports into one per-type table")
    p.add_argument("--inputs", nargs="+", required=True, help="name=path pairs of report.json files")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
