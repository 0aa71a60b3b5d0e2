"""Single entry point exposing the pipeline as subcommands.

Artifacts land in the configured workdir; every subcommand is
deterministic for fixed seeds (wall-clock appears only in export
manifests). Errors exit nonzero with one machine-readable JSON object on
stderr. Logs are line-oriented JSON with per-record trace ids.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__
from .config import RunConfig, load_config
from .corpus import (
    compare_models,
    compute_stats,
    export_jsonl,
    format_comparison_table,
    load_corpus,
    save_corpus,
)
from .dialogue import load_scripts, save_scripts
from .errors import ConfigError, DasynthError
from .kb import export as kb_export, ingest
from .planner import plan_batch
from .policy import (
    evaluate_policy,
    load_policy,
    save_policy,
    train_self_play,
)
from .realizer import load_template, realize_batch
from .retrieval import build_index, load_index, save_index
from .stub_server import StubServer

logger = logging.getLogger("dasynth")


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname.lower(),
            "logger": record.name,
            "event": record.getMessage(),
        }
        trace = getattr(record, "trace_id", None)
        if trace:
            entry["trace_id"] = trace
        return json.dumps(entry, ensure_ascii=False)


def _setup_logging(cfg: RunConfig) -> None:
    root = logging.getLogger("dasynth")
    root.setLevel(getattr(logging, cfg.logging.level.upper(), logging.INFO))
    root.handlers.clear()
    handler = (
        logging.FileHandler(cfg.logging.path, encoding="utf-8")
        if cfg.logging.path
        else logging.StreamHandler(sys.stderr)
    )
    handler.setFormatter(_JsonFormatter())
    root.addHandler(handler)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # machine-readable usage errors
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def _load_kb(cfg: RunConfig, kb_arg: Optional[str] = None):
    path = kb_arg or cfg.kb_path
    normalized = cfg.workpath("kb.jsonl")
    if path is None:
        if normalized.exists():
            path = normalized
        else:
            raise ConfigError("no KB available: pass a path or run `ingest` first")
    return ingest(path)


def _load_or_build_index(cfg: RunConfig, kb):
    index_path = cfg.workpath("index.json")
    if index_path.exists():
        index = load_index(index_path)
        if index.symbol_names == list(kb.names()):
            return index
    return build_index(kb, include_names=cfg.retrieval.include_names)


def _require_policy(cfg: RunConfig, policy_arg: Optional[str]):
    path = Path(policy_arg) if policy_arg else cfg.workpath("policy.json")
    if not path.exists():
        raise ConfigError(f"no policy at {path}; run `train` first or pass --policy")
    return load_policy(path)


def cmd_ingest(cfg: RunConfig, args) -> int:
    kb = ingest(args.kb)
    cfg.workpath().mkdir(parents=True, exist_ok=True)
    kb_export(kb, cfg.workpath("kb.jsonl"))
    kinds = {}
    for sym in kb.symbols:
        kinds[sym.kind] = kinds.get(sym.kind, 0) + 1
    print(
        json.dumps(
            {
                "symbols": len(kb),
                "kinds": {k: kinds[k] for k in sorted(kinds)},
                "normalized": str(cfg.workpath("kb.jsonl")),
            }
        )
    )
    return 0


def cmd_index(cfg: RunConfig, args) -> int:
    kb = _load_kb(cfg, args.kb)
    index = build_index(kb, include_names=cfg.retrieval.include_names)
    cfg.workpath().mkdir(parents=True, exist_ok=True)
    save_index(index, cfg.workpath("index.json"))
    print(
        json.dumps(
            {
                "documents": index.doc_count,
                "vocabulary": len(index.vocabulary),
                "unretrievable": list(index.empty_doc_names),
                "path": str(cfg.workpath("index.json")),
            }
        )
    )
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    kb = _load_kb(cfg, args.kb)
    index = _load_or_build_index(cfg, kb)
    steps = args.steps or cfg.train.steps
    seed = cfg.train.seed if args.seed is None else args.seed
    policy, stats = train_self_play(
        kb,
        index,
        cfg.simulator,
        cfg.reward,
        cfg.policy,
        steps=steps,
        seed=seed,
        t_max=cfg.dialogue.t_max,
        k=cfg.retrieval.k,
    )
    cfg.workpath().mkdir(parents=True, exist_ok=True)
    save_policy(policy, cfg.workpath("policy.json"))
    cfg.workpath("train_stats.json").write_text(
        json.dumps(stats.to_dict(), indent=2), encoding="utf-8"
    )
    evaluation = evaluate_policy(
        policy,
        kb,
        index,
        cfg.simulator,
        episodes=cfg.train.eval_episodes,
        seed=cfg.train.eval_seed,
        t_max=cfg.dialogue.t_max,
        k=cfg.retrieval.k,
    )
    print(
        json.dumps(
            {
                "steps": stats.steps,
                "episodes": stats.episodes,
                "train_success_rate": stats.to_dict()["success_rate"],
                "eval": evaluation.to_dict(),
                "policy": str(cfg.workpath("policy.json")),
            }
        )
    )
    return 0


def cmd_plan(cfg: RunConfig, args) -> int:
    kb = _load_kb(cfg, args.kb)
    index = _load_or_build_index(cfg, kb)
    policy = _require_policy(cfg, args.policy)
    n = args.n or cfg.plan.n
    base_seed = cfg.plan.base_seed if args.seed is None else args.seed
    scripts, summary = plan_batch(
        n,
        base_seed,
        kb,
        index,
        policy,
        cfg.simulator,
        epsilon=cfg.plan.epsilon,
        t_max=cfg.dialogue.t_max,
        k=cfg.retrieval.k,
    )
    cfg.workpath().mkdir(parents=True, exist_ok=True)
    out = Path(args.out) if args.out else cfg.workpath("scripts.jsonl")
    save_scripts(scripts, out)
    cfg.workpath("plan_summary.json").write_text(
        json.dumps(summary, indent=2), encoding="utf-8"
    )
    print(json.dumps({**summary, "path": str(out)}))
    return 0


def cmd_realize(cfg: RunConfig, args) -> int:
    kb = _load_kb(cfg, args.kb)
    scripts_path = Path(args.scripts) if args.scripts else cfg.workpath("scripts.jsonl")
    scripts = load_scripts(scripts_path)
    template = load_template(cfg.template_path)
    endpoint = cfg.endpoint(args.endpoint)

    stub = None
    try:
        if endpoint.base_url == "stub":
            stub = StubServer().start()
            endpoint = dataclasses.replace(endpoint, base_url=stub.url)
        records = realize_batch(
            scripts,
            template,
            endpoint,
            kb,
            max_regen=cfg.realize.max_regen,
            pipeline_version=__version__,
            strict_parse=cfg.realize.strict_parse,
            concurrency=cfg.realize.concurrency,
        )
    finally:
        if stub is not None:
            stub.stop()

    for i, record in enumerate(records):
        logger.info(
            "realized script %d/%d (attempts=%d, flagged=%s)",
            i + 1,
            len(records),
            record.provenance.attempts,
            record.flagged,
            extra={"trace_id": f"seed-{record.script.seed:x}"},
        )
    cfg.workpath().mkdir(parents=True, exist_ok=True)
    out = Path(args.out) if args.out else cfg.workpath("corpus.jsonl")
    save_corpus(records, out)
    report = {
        "records": len(records),
        "flagged": sum(r.flagged for r in records),
        "attempts_total": sum(r.provenance.attempts for r in records),
        "endpoint": args.endpoint,
        "path": str(out),
    }
    cfg.workpath("realize_report.json").write_text(
        json.dumps(report, indent=2), encoding="utf-8"
    )
    print(json.dumps(report))
    return 0


def cmd_export(cfg: RunConfig, args) -> int:
    corpus_path = Path(args.corpus) if args.corpus else cfg.workpath("corpus.jsonl")
    records = load_corpus(corpus_path)
    suffix = "chat" if args.format == "chat" else "paired"
    out = Path(args.out) if args.out else cfg.workpath(f"export_{suffix}.jsonl")
    cfg.workpath().mkdir(parents=True, exist_ok=True)
    manifest = export_jsonl(
        records, out, fmt=args.format, include_flagged=args.include_flagged
    )
    print(json.dumps(manifest))
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    records = load_corpus(args.corpus)
    stats = compute_stats(records)
    print(json.dumps(stats.to_dict()))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    candidates = load_corpus(args.candidates)
    references = load_corpus(args.references)
    report = compare_models(
        candidates,
        references,
        candidate_label=args.candidate_label,
        reference_label=args.reference_label,
    )
    print(json.dumps(report))
    print(format_comparison_table(report), file=sys.stderr)
    return 0


def cmd_pipeline(cfg: RunConfig, args) -> int:
    """Phase 1: plan with the trained manager and realize with the teacher
    endpoint; Phase 2: same planner, student endpoint. Trains only when the
    workdir has no policy yet."""
    endpoint_name = args.endpoint or ("teacher" if args.phase == 1 else "student")
    n = args.n or (cfg.plan.n if args.phase == 1 else 50)
    cfg.workpath().mkdir(parents=True, exist_ok=True)

    kb = _load_kb(cfg, args.kb)
    kb_export(kb, cfg.workpath("kb.jsonl"))
    index = build_index(kb, include_names=cfg.retrieval.include_names)
    save_index(index, cfg.workpath("index.json"))

    policy_path = cfg.workpath("policy.json")
    if policy_path.exists():
        policy = load_policy(policy_path)
    else:
        policy, stats = train_self_play(
            kb,
            index,
            cfg.simulator,
            cfg.reward,
            cfg.policy,
            steps=cfg.train.steps,
            seed=cfg.train.seed,
            t_max=cfg.dialogue.t_max,
            k=cfg.retrieval.k,
        )
        save_policy(policy, policy_path)
        cfg.workpath("train_stats.json").write_text(
            json.dumps(stats.to_dict(), indent=2), encoding="utf-8"
        )

    base_seed = cfg.plan.base_seed if args.seed is None else args.seed
    scripts, summary = plan_batch(
        n,
        base_seed,
        kb,
        index,
        policy,
        cfg.simulator,
        epsilon=cfg.plan.epsilon,
        t_max=cfg.dialogue.t_max,
        k=cfg.retrieval.k,
    )
    save_scripts(scripts, cfg.workpath("scripts.jsonl"))
    cfg.workpath("plan_summary.json").write_text(
        json.dumps(summary, indent=2), encoding="utf-8"
    )

    template = load_template(cfg.template_path)
    endpoint = cfg.endpoint(endpoint_name)
    stub = None
    try:
        if endpoint.base_url == "stub":
            stub = StubServer().start()
            endpoint = dataclasses.replace(endpoint, base_url=stub.url)
        records = realize_batch(
            scripts,
            template,
            endpoint,
            kb,
            max_regen=cfg.realize.max_regen,
            pipeline_version=__version__,
            strict_parse=cfg.realize.strict_parse,
            concurrency=cfg.realize.concurrency,
        )
    finally:
        if stub is not None:
            stub.stop()

    save_corpus(records, cfg.workpath("corpus.jsonl"))
    chat_manifest = export_jsonl(records, cfg.workpath("export_chat.jsonl"), fmt="chat")
    stats = compute_stats(records)
    cfg.workpath("stats.json").write_text(
        json.dumps(stats.to_dict(), indent=2), encoding="utf-8"
    )
    print(
        json.dumps(
            {
                "phase": args.phase,
                "endpoint": endpoint_name,
                "scripts": len(scripts),
                "records": len(records),
                "flagged": sum(r.flagged for r in records),
                "chat_export": {
                    "path": chat_manifest["path"],
                    "records": chat_manifest["records"],
                },
                "stats": stats.to_dict(),
                "workdir": str(cfg.workpath()),
            }
        )
    )
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="dasynth", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dasynth {__version__}")
    parser.add_argument("--config", help="path to the run configuration JSON")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key, e.g. --set simulator.p_noise_keyword=0.1",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a KB file and normalize it into the workdir")
    p.add_argument("kb", help="JSON-lines KB file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="build and save the TF-IDF index")
    p.add_argument("--kb", help="KB file (default: workdir copy or config kb_path)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("train", help="train the dialogue manager by self-play")
    p.add_argument("--steps", type=int, help="TD update steps")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--kb", help="KB file override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="plan a batch of dialogue-act scripts")
    p.add_argument("--n", type=int, help="number of scripts")
    p.add_argument("--seed", type=int, help="batch base seed")
    p.add_argument("--policy", help="policy file (default: workdir policy.json)")
    p.add_argument("--kb", help="KB file override")
    p.add_argument("--out", help="output scripts.jsonl path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("realize", help="realize scripts through a chat endpoint")
    p.add_argument("--scripts", help="scripts.jsonl (default: workdir copy)")
    p.add_argument(
        "--endpoint", default="teacher", help="endpoint name from config.endpoints"
    )
    p.add_argument("--kb", help="KB file override")
    p.add_argument("--out", help="output corpus.jsonl path")
    p.set_defaults(func=cmd_realize)

    p = sub.add_parser("export", help="export the corpus for fine-tuning")
    p.add_argument("--format", choices=("chat", "script-paired"), default="chat")
    p.add_argument("--corpus", help="corpus.jsonl (default: workdir copy)")
    p.add_argument("--out", help="output path")
    p.add_argument(
        "--include-flagged",
        action="store_true",
        help="keep violation-flagged records in the chat export",
    )
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("stats", help="dataset statistics for a corpus file")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="compare a candidate corpus against references")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--candidate-label", default="candidate")
    p.add_argument("--reference-label", default="reference")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run a full phase end to end")
    p.add_argument("--phase", type=int, choices=(1, 2), required=True)
    p.add_argument("--n", type=int, help="scripts to plan (default 250 / 50)")
    p.add_argument("--endpoint", help="endpoint name (default teacher / student)")
    p.add_argument("--seed", type=int, help="plan base seed override")
    p.add_argument("--kb", help="KB file override")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        _setup_logging(cfg)
        return args.func(cfg, args)
    except DasynthError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
