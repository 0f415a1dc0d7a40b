"""Command-line entry point: data construction, training, embedding,
indexing, search, evaluation, and attention export.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    FACET_NAMES,
    RunConfig,
    TrainConfig,
    config_metadata,
    load_config,
)
from .data_construction import (
    BuildOptions,
    HttpClient,
    ReplayClient,
    build_ftus,
    corpus_stats,
    quarantine_path,
    read_documents,
    read_ftus,
    read_triplets,
    write_build_result,
)
from .encoding import DOCUMENT, QUESTION, read_corpus, record_to_sequence, segment_input
from .errors import UnifarError
from .evaluation import DEFAULT_METRICS, read_qrels, read_queries, run_benchmark
from .model import UnifarModel, load_checkpoint
from .retrieval import FacetIndex, ScoringStrategy
from .training import train as run_training

API_KEY_ENV = "UNIFAR_LLM_API_KEY"
BASE_URL_ENV = "UNIFAR_LLM_BASE_URL"
MODEL_ENV = "UNIFAR_LLM_MODEL"


class UsageError(Exception):
    """Configuration or invocation problem; maps to exit code 2."""


# ----------------------------------------------------------------- helpers


def _load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_config(path)
    except (ValueError, OSError, json.JSONDecodeError) as err:
        raise UsageError(f"bad config file {path}: {err}") from err


def _metadata(run: RunConfig, seed: int, extra: dict | None = None) -> dict:
    meta = config_metadata(run, seed=seed)
    meta["version"] = __version__
    if extra:
        meta.update(extra)
    return meta


def _write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_strategy(text: str) -> ScoringStrategy:
    try:
        return ScoringStrategy.parse(text)
    except (ValueError, UnifarError) as err:
        raise UsageError(str(err)) from err


# ------------------------------------------------------------ subcommands


def cmd_build_data(args: argparse.Namespace) -> int:
    triplets = read_triplets(args.triplets)
    documents = read_documents(args.corpus)
    if args.mock_transcript:
        llm = ReplayClient(args.mock_transcript)
    elif os.environ.get(API_KEY_ENV):
        llm = HttpClient(
            api_key=os.environ[API_KEY_ENV],
            base_url=os.environ.get(BASE_URL_ENV, "https://api.openai.com/v1"),
            model=os.environ.get(MODEL_ENV, "gpt-4o-mini"),
        )
    else:
        raise UsageError(
            f"no LLM access: pass --mock-transcript or set {API_KEY_ENV}"
        )
    options = BuildOptions(max_pos_docs=args.max_pos_docs)
    result = build_ftus(triplets, documents, llm, options)
    write_build_result(args.out, result)
    stats = corpus_stats(args.out)
    run = _load_run_config(args.config)
    stats_payload = {
        "metadata": _metadata(run, args.seed, {"triplets": len(triplets)}),
        "stats": stats,
        "quarantined": len(result.quarantined),
        "unlabeled_documents": sorted(result.unlabeled_doc_ids),
        "partial_rate": result.partial_rate,
    }
    _write_json(str(args.out) + ".stats.json", stats_payload)
    print(
        f"wrote {stats['ftus']} FTUs to {args.out} "
        f"({len(result.quarantined)} quarantined, "
        f"partial rate {result.partial_rate:.3f})"
    )
    if result.partial_rate > args.max_partial_rate:
        print(
            f"partial rate {result.partial_rate:.3f} exceeds "
            f"--max-partial-rate {args.max_partial_rate:.3f} "
            f"(see {quarantine_path(args.out)})",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    run = _load_run_config(args.config)
    cfg = run.train
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "max_steps": args.max_steps,
        "lambda_start": args.lambda_start,
        "lambda_end": args.lambda_end,
        "seed": args.seed,
    }
    changed = {k: v for k, v in overrides.items() if v is not None}
    if changed:
        cfg = dataclasses.replace(cfg, **changed)
    ftus = read_ftus(args.ftus)
    if not ftus:
        raise UsageError(f"no FTUs in {args.ftus}")
    model = UnifarModel.build(run.encoder, run.aggregation, seed=cfg.seed)
    result = run_training(model, ftus, cfg, out_dir=args.out)
    run = dataclasses.replace(run, train=cfg)
    _write_json(
        Path(args.out) / "run_metadata.json",
        _metadata(
            run,
            cfg.seed,
            {
                "ftus": len(ftus),
                "optimizer_steps": result.total_steps,
                "final_total_loss": result.history[-1]["total"] if result.history else None,
            },
        ),
    )
    print(
        f"trained {result.total_steps} steps; checkpoint at {result.checkpoint_path}, "
        f"loss log at {result.loss_log_path}"
    )
    return 0


def _load_model(checkpoint: str) -> UnifarModel:
    return load_checkpoint(checkpoint)


def _embed_corpus(model: UnifarModel, corpus_path: str) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    rows: list[np.ndarray] = []
    splitter = model.encoder_config.sentence_splitter
    for seq in read_corpus(corpus_path, splitter=splitter):
        if seq.input_id is None:
            raise UnifarError("corpus records need ids for embedding")
        rep = next(model.represent_corpus([seq]))
        ids.append(seq.input_id)
        rows.append(rep.numpy_embeddings())
    if not rows:
        return [], np.zeros((0, model.aggregator.n_facet, model.aggregator.hidden_size), dtype=np.float32)
    return ids, np.stack(rows)


def cmd_embed(args: argparse.Namespace) -> int:
    model = _load_model(args.checkpoint)
    ids, embeddings = _embed_corpus(model, args.corpus)
    np.savez(args.out, ids=np.array(ids), embeddings=embeddings)
    _write_json(
        str(args.out) + ".meta.json",
        {
            "count": len(ids),
            "n_facet": int(embeddings.shape[1]) if embeddings.size else model.aggregator.n_facet,
            "hidden_size": int(embeddings.shape[2]) if embeddings.size else model.aggregator.hidden_size,
            "facet_names": list(model.aggregator.facet_names),
            "checkpoint": str(args.checkpoint),
        },
    )
    print(f"embedded {len(ids)} inputs to {args.out}")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    if args.embeddings:
        data = np.load(args.embeddings, allow_pickle=False)
        ids = [str(i) for i in data["ids"].tolist()]
        pairs = list(zip(ids, data["embeddings"]))
        facet_names = FACET_NAMES
        meta_path = str(args.embeddings) + ".meta.json"
        if Path(meta_path).exists():
            with open(meta_path, "r", encoding="utf-8") as fh:
                facet_names = tuple(json.load(fh)["facet_names"])
        index = FacetIndex.build(pairs, sim_kind=args.sim, facet_names=facet_names)
    elif args.corpus and args.checkpoint:
        model = _load_model(args.checkpoint)
        ids, embeddings = _embed_corpus(model, args.corpus)
        index = FacetIndex.build(
            list(zip(ids, embeddings)),
            sim_kind=args.sim,
            facet_names=model.aggregator.facet_names,
        )
    else:
        raise UsageError("pass --embeddings, or both --corpus and --checkpoint")
    index.save(args.out)
    print(f"indexed {index.count} candidates to {args.out}")
    return 0


def _query_representation(model: UnifarModel, args: argparse.Namespace):
    if args.query_text:
        seq = segment_input(
            args.query_text,
            kind=QUESTION,
            splitter=model.encoder_config.sentence_splitter,
            input_id="query",
        )
    elif args.query_json:
        with open(args.query_json, "r", encoding="utf-8") as fh:
            record = json.load(fh)
        record.setdefault("kind", DOCUMENT)
        seq = record_to_sequence(record, splitter=model.encoder_config.sentence_splitter)
    else:
        raise UsageError("pass --query-text or --query-json")
    return next(model.represent_corpus([seq]))


def cmd_search(args: argparse.Namespace) -> int:
    index = FacetIndex.load(args.index)
    model = _load_model(args.checkpoint)
    strategy = _parse_strategy(args.strategy)
    rep = _query_representation(model, args)
    results = index.search(rep, strategy, k=args.k)
    payload = {
        "metadata": {
            "strategy": strategy.label(index.facet_names),
            "k": args.k,
            "sim_kind": index.sim_kind,
            "candidates": index.count,
        },
        "results": [{"id": cid, "score": score} for cid, score in results],
    }
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    index = FacetIndex.load(args.index)
    model = _load_model(args.checkpoint)
    strategy = _parse_strategy(args.strategy)
    queries = read_queries(args.queries)
    qrels = read_qrels(args.qrels)
    metrics = (
        tuple(m.strip() for m in args.metrics.split(",") if m.strip())
        if args.metrics
        else DEFAULT_METRICS
    )
    report = run_benchmark(model, index, queries, qrels, strategy, metrics)
    report.metadata["checkpoint"] = str(args.checkpoint)
    report.metadata["k_flag"] = args.k
    if args.out:
        report.save(args.out)
    else:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def write_attention_csv(
    path: str | Path,
    facet_names,
    unit_labels,
    matrix: np.ndarray,
) -> None:
    """Rows = facet names, columns = attended units; repr-formatted floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["facet", *unit_labels])
        for name, row in zip(facet_names, matrix):
            writer.writerow([name, *[repr(float(v)) for v in row]])


def read_attention_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["facet"]:
        raise ValueError(f"{path} is not an attention CSV")
    unit_labels = rows[0][1:]
    facet_names = [row[0] for row in rows[1:]]
    matrix = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
    return facet_names, unit_labels, matrix


def cmd_attn_export(args: argparse.Namespace) -> int:
    model = _load_model(args.checkpoint)
    rep = _query_representation(model, args)
    attention = rep.attention.detach().cpu().numpy()
    if rep.branch == "sentence":
        count = attention.shape[1]
        tokenized = None
        if args.query_text:
            labels = [f"sent{i}" for i in range(count)]
        else:
            with open(args.query_json, "r", encoding="utf-8") as fh:
                record = json.load(fh)
            has_title = bool(record.get("title"))
            labels = (["title"] if has_title else []) + [
                f"sent{i}" for i in range(count - (1 if has_title else 0))
            ]
    else:
        labels = [f"tok{i}" for i in range(attention.shape[1])]
    write_attention_csv(args.out, model.aggregator.facet_names, labels, attention)
    _write_json(
        str(args.out) + ".meta.json",
        {
            "branch": rep.branch,
            "n_facet": int(attention.shape[0]),
            "units": int(attention.shape[1]),
            "checkpoint": str(args.checkpoint),
        },
    )
    if args.heatmap:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError as err:
            raise UsageError(
                "heatmap rendering needs matplotlib (install the 'plot' extra)"
            ) from err
        fig, ax = plt.subplots(figsize=(max(4, len(labels) * 0.5), 2.5))
        image = ax.imshow(attention, aspect="auto", cmap="viridis")
        ax.set_yticks(range(len(model.aggregator.facet_names)))
        ax.set_yticklabels(model.aggregator.facet_names)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right")
        fig.colorbar(image, ax=ax)
        fig.tight_layout()
        fig.savefig(args.heatmap, dpi=120)
        plt.close(fig)
    print(f"wrote attention map ({rep.branch} branch) to {args.out}")
    return 0


# -------------------------------------------------------------- the parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unifar",
        description="Facet-aware scientific document retrieval pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"unifar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=42, help="random seed")

    p = sub.add_parser("build-data", help="construct FTUs from triplets and a corpus")
    common(p)
    p.add_argument("triplets", help="facet triplets JSONL")
    p.add_argument("corpus", help="document corpus JSONL")
    p.add_argument("--out", required=True, help="output FTU JSONL path")
    p.add_argument("--mock-transcript", default=None, help="replay a recorded LLM transcript")
    p.add_argument(
        "--max-partial-rate",
        type=float,
        default=0.0,
        help="maximum tolerated fraction of quarantined units",
    )
    p.add_argument("--max-pos-docs", type=int, default=3)
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", help="train on an FTU file")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument(
        "--seed", type=int, default=None, help="random seed (overrides config)"
    )
    p.add_argument("ftus", help="FTU JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--lambda-start", type=float, default=None)
    p.add_argument("--lambda-end", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a corpus with a checkpoint")
    p.add_argument("corpus")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True, help="output .npz path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build a facet index")
    p.add_argument("--embeddings", default=None, help=".npz from the embed command")
    p.add_argument("--corpus", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--sim", default="cosine", choices=["cosine", "dot"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="rank index candidates for one query")
    p.add_argument("index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-text", default=None)
    p.add_argument("--query-json", default=None, help="JSON file with a document record")
    p.add_argument("--strategy", default="diag-mean", help="diag-mean or facet:<name>")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="run a benchmark over an index")
    p.add_argument("index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--qrels", required=True, help="whitespace qrels file")
    p.add_argument("--strategy", default="diag-mean")
    p.add_argument("--metrics", default=None, help="comma-separated metric names")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attn-export", help="export a facet attention map as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-text", default=None)
    p.add_argument("--query-json", default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--heatmap", default=None, help="optional heatmap image path")
    p.set_defaults(func=cmd_attn_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except UnifarError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
