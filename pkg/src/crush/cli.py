"""Command-line interface: one command per pipeline stage.

Commands write their artifacts plus a manifest.json that records the full
config, the seed, input fingerprints, and the predecessor checkpoint, so a
chain of runs is auditable end to end. Exit codes: 0 success, 2 config or
usage validation, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import evaluation, pipeline
from .config import TrainConfig, load_config, parse_set_override
from .errors import ConfigError, CrushError
from .model import load_checkpoint, model_from_checkpoint, save_checkpoint
from .pipeline import build_model, predict_texts
from .social_graph import (
    _parse_record,
    ingest_posts,
    load_graph,
    normalize_text,
    save_graph,
)

MANIFEST_VERSION = 1


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, config, inputs, outputs, predecessor=None, report=None):
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config.to_dict() if isinstance(config, TrainConfig) else config,
        "seed": config.seed if isinstance(config, TrainConfig) else None,
        "inputs": {name: {"path": str(p), "sha256": _file_sha256(p)} for name, p in inputs.items()},
        "outputs": {name: str(p) for name, p in outputs.items()},
        "predecessor_checkpoint": str(predecessor) if predecessor else None,
    }
    if report is not None:
        manifest["phase_report"] = report.to_dict()
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load_posts_jsonl(path, strip_emoji=False) -> list:
    posts = []
    preprocessor = lambda t: normalize_text(t, strip_emoji=strip_emoji)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                posts.append(_parse_record(json.loads(line), preprocessor))
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
    if not posts:
        raise ValueError(f"{path}: no records")
    return posts


def _resolve_config(args) -> TrainConfig:
    overrides = {}
    for item in args.set or []:
        key, value = parse_set_override(item)
        overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _init_model(config, init_checkpoint):
    model = build_model(config)
    if init_checkpoint:
        load_checkpoint(init_checkpoint, model)
    return model


def _finalize_stage(args, config, command, model, report, inputs):
    out_dir = Path(args.output_dir)
    final_path = out_dir / "model.pt"
    save_checkpoint(model, final_path, extra={"phase": report.phase, "completed": True})
    report.checkpoint_path = str(final_path)
    _write_manifest(
        out_dir,
        command,
        config,
        inputs,
        {"checkpoint": final_path},
        predecessor=getattr(args, "init_checkpoint", None),
        report=report,
    )
    print(f"{command}: done, checkpoint at {final_path}")
    return 0


def cmd_ingest(args, config) -> int:
    records = open(args.input, "r", encoding="utf-8")
    try:
        graph = ingest_posts(
            records,
            preprocessor=lambda t: normalize_text(t, strip_emoji=config.strip_emoji),
            max_user_posts=config.max_user_posts,
        )
    finally:
        records.close()
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    _write_manifest(
        out.parent,
        "ingest",
        config,
        {"posts": args.input},
        {"graph": out},
        report=None,
    )
    summary = graph.ingest_report.to_dict()
    summary.update({"users": graph.user_count, "threads": len(graph.thread_index)})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_pretrain_cp(args, config) -> int:
    graph = load_graph(args.graph)
    model = _init_model(config, args.init_checkpoint)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = pipeline.run_phase_cp(config, graph, model, out_dir=out_dir, resume=args.resume)
    return _finalize_stage(args, config, "pretrain-cp", model, report, {"graph": args.graph})


def cmd_pretrain_ua(args, config) -> int:
    graph = load_graph(args.graph)
    train_set = None
    inputs = {"graph": args.graph}
    if config.robust_ua:
        if not args.train:
            raise ConfigError(["robust_ua: --train with labeled posts is required"])
        train_set = _load_posts_jsonl(args.train, strip_emoji=config.strip_emoji)
        inputs["train"] = args.train
    model = _init_model(config, args.init_checkpoint)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = pipeline.run_phase_ua(
        config, graph, model, train_set=train_set, out_dir=out_dir, resume=args.resume
    )
    return _finalize_stage(args, config, "pretrain-ua", model, report, inputs)


def cmd_finetune(args, config) -> int:
    train_set = _load_posts_jsonl(args.train, strip_emoji=config.strip_emoji)
    inputs = {"train": args.train}
    model = _init_model(config, args.init_checkpoint)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.plain:
        report = pipeline.finetune_plain(
            config, train_set, model, out_dir=out_dir, resume=args.resume
        )
    else:
        if not args.graph:
            raise ConfigError(["finetune: --graph is required unless --plain is set"])
        graph = load_graph(args.graph)
        inputs["graph"] = args.graph
        report = pipeline.run_phase_cr(
            config, graph, train_set, model, out_dir=out_dir, resume=args.resume
        )
    return _finalize_stage(args, config, "finetune", model, report, inputs)


def cmd_evaluate(args, config) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    test_set = _load_posts_jsonl(args.test, strip_emoji=config.strip_emoji)
    preds = predict_texts(model, [p.text for p in test_set])
    if model.task == "classification":
        golds = [p.label.class_index for p in test_set]
        report = evaluation.classification_report(preds, golds, model.head.out_dim)
    else:
        golds = [p.label.score for p in test_set]
        report = evaluation.regression_report(preds, golds)
    if args.graph and model.task == "classification":
        graph = load_graph(args.graph)
        report.context_breakdown = evaluation.context_bucket_f1(
            preds, golds, graph, [p.id for p in test_set], model.head.out_dim
        )
    text = report.to_json()
    print(text)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text + "\n", encoding="utf-8")
        _write_manifest(
            Path(args.output).parent,
            "evaluate",
            config,
            {"test": args.test, "checkpoint": args.checkpoint},
            {"metrics": args.output},
            predecessor=args.checkpoint,
        )
    return 0


def cmd_fewshot(args, config) -> int:
    train_set = _load_posts_jsonl(args.train, strip_emoji=config.strip_emoji)
    test_set = _load_posts_jsonl(args.test, strip_emoji=config.strip_emoji)
    inputs = {"train": args.train, "test": args.test}
    graph = None
    if args.graph:
        graph = load_graph(args.graph)
        inputs["graph"] = args.graph
    if not args.plain and graph is None:
        raise ConfigError(["fewshot: --graph is required unless --plain is set"])
    fractions = [float(f) for f in args.fractions.split(",") if f]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None

    def trainer(run_config, subset, _eval_set):
        model = _init_model(run_config, args.init_checkpoint)
        if args.plain:
            pipeline.finetune_plain(run_config, subset, model)
        else:
            pipeline.run_phase_cr(run_config, graph, subset, model)
        return predict_texts(model, [p.text for p in test_set])

    if config.task == "classification":
        metric_fn = lambda preds, ev: evaluation.macro_f1(
            preds, [p.label.class_index for p in ev], config.num_classes
        )
    else:
        metric_fn = lambda preds, ev: evaluation.mae_metric(
            [max(-1.0, min(1.0, v)) for v in preds], [p.label.score for p in ev]
        )
    points = evaluation.fewshot_curve(
        config, fractions, trainer, train_set, test_set, metric_fn, seeds=seeds
    )
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_fewshot_csv(points, out)
    out.with_suffix(".json").write_text(
        json.dumps(points, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(
        out.parent,
        "fewshot",
        config,
        inputs,
        {"curve_csv": out, "curve_json": out.with_suffix(".json")},
        predecessor=args.init_checkpoint,
    )
    print(f"fewshot: wrote {len(points)} points to {out}")
    return 0


def cmd_infer(args, config) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    text = normalize_text(args.text, strip_emoji=config.strip_emoji)
    prediction = pipeline.infer(model, text)
    print(prediction)
    return 0


def _add_common(sub, seed=True):
    sub.add_argument("--config", default=None, help="flat key=value config file")
    sub.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one config key"
    )
    if seed:
        sub.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crush",
        description="Three-phase training pipeline for hate-speech detection on social graphs",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="build a graph snapshot from JSONL post records")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("pretrain-cp", help="continual masked-language-model pre-training")
    p.add_argument("--graph", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--init-checkpoint", default=None)
    p.add_argument("--resume", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_cp)

    p = subs.add_parser("pretrain-ua", help="user-anchored contrastive pre-training")
    p.add_argument("--graph", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--train", default=None, help="labeled posts, required with robust_ua")
    p.add_argument("--init-checkpoint", default=None)
    p.add_argument("--resume", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_ua)

    p = subs.add_parser("finetune", help="context-regularized (default) or plain fine-tuning")
    p.add_argument("--train", required=True)
    p.add_argument("--graph", default=None)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--init-checkpoint", default=None)
    p.add_argument("--plain", action="store_true", help="fine-tune without context")
    p.add_argument("--resume", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("evaluate", help="metrics for a checkpoint on a labeled test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--graph", default=None, help="enables the context-bucket breakdown")
    p.add_argument("--output", default=None, help="also write the metrics JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("fewshot", help="training-fraction sweep")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--graph", default=None)
    p.add_argument("--init-checkpoint", default=None)
    p.add_argument("--plain", action="store_true")
    p.add_argument("--fractions", default="0.02,0.05,0.1,0.2")
    p.add_argument("--seeds", default=None, help="comma-separated seeds, one run each")
    p.add_argument("--output", required=True, help="CSV path; a JSON twin is written too")
    _add_common(p)
    p.set_defaults(func=cmd_fewshot)

    p = subs.add_parser("infer", help="context-free prediction for one text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        return args.func(args, config)
    except ConfigError as exc:
        for message in exc.field_errors:
            print(f"config error: {message}", file=sys.stderr)
        return 2
    except (CrushError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
