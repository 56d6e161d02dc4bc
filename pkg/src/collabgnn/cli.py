"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
Log verbosity comes from the COLLABGNN_LOG environment variable
(DEBUG, INFO, WARNING; default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .data import SynthSpec, dumps_record, generate_synthetic, iter_records, load_dataset, record_to_sample, save_dataset
from .errors import CollabGNNError, DivergenceError, ValidationError
from .model import VARIANTS, ModelConfig, TwoBranchModel, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, run_comparison, split_dataset, train

logger = logging.getLogger("collabgnn")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

MODEL_KEYS = {f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
EXTRA_KEYS = {"split_seed"}


class UsageError(Exception):
    pass


def default_config() -> dict:
    model = ModelConfig().to_dict()
    return {**model, **asdict(TrainConfig()), "split_seed": 0}


def load_config(path) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise UsageError(f"config {path} must be a flat JSON object")
    unknown = set(user) - MODEL_KEYS - TRAIN_KEYS - EXTRA_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg.update(user)
    return cfg


def split_config(cfg: dict, variant: str | None = None) -> tuple[ModelConfig, TrainConfig, int]:
    model = {k: v for k, v in cfg.items() if k in MODEL_KEYS}
    if variant is not None:
        model["variant"] = variant
    tcfg = TrainConfig.from_dict({k: v for k, v in cfg.items() if k in TRAIN_KEYS})
    return ModelConfig.from_dict(model), tcfg, int(cfg.get("split_seed", 0))


def _load(path):
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return load_dataset(path)


def _check_dim(samples, model_cfg: ModelConfig) -> None:
    if samples:
        dim = samples[0].image_graph.feature_dim
        if dim != model_cfg.input_dim or samples[0].text_graph.feature_dim != model_cfg.input_dim:
            raise ValidationError(
                f"dimension error: data has {dim}-dim image / {samples[0].text_graph.feature_dim}-dim text "
                f"features but the model expects input_dim={model_cfg.input_dim}"
            )


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_samples=args.n, seed=args.seed, cross_modal_strength=args.strength, noise_sigma=args.noise, feature_dim=args.dim
    )
    samples = generate_synthetic(spec)
    try:
        save_dataset(args.out, samples)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_json(
        {
            "samples": len(samples),
            "positive": sum(s.label for s in samples),
            "image_nodes": sum(s.image_graph.node_count for s in samples),
            "text_nodes": sum(s.text_graph.node_count for s in samples),
            "image_edges": sum(len(s.image_graph.edges) for s in samples),
            "text_edges": sum(len(s.text_graph.edges) for s in samples),
        }
    )
    return EXIT_OK


def cmd_build_graphs(args) -> int:
    if not Path(args.inp).is_file():
        raise UsageError(f"input file not found: {args.inp}")
    lines, errors = [], []
    try:
        for lineno, rec in iter_records(args.inp):
            try:
                sample = record_to_sample({k: v for k, v in rec.items() if not k.endswith("_edges")})
            except ValidationError as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            rec["image_edges"] = sample.image_graph.edges.tolist()
            rec["text_edges"] = sample.text_graph.edges.tolist()
            lines.append(dumps_record(rec))
    except ValidationError as exc:
        errors.append(str(exc))
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    Path(args.out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(json.dumps({"records": len(lines)}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    model_cfg, train_cfg, split_seed = split_config(cfg, args.variant)
    samples = _load(args.data)
    _check_dim(samples, model_cfg)
    if args.val_data:
        train_set, val_set = samples, _load(args.val_data)
    else:
        train_set, val_set, _ = split_dataset(samples, split_seed)
    if not train_set or not val_set:
        raise UsageError("need at least one training and one validation sample")
    model = TwoBranchModel(model_cfg, seed=train_cfg.seed)
    model, history = train(model, train_set, val_set, train_cfg)

    out = Path(args.out)
    # write to a temporary name first so a failure never leaves a partial checkpoint
    with tempfile.NamedTemporaryFile("w", dir=out.parent or ".", delete=False, suffix=".tmp") as tmp:
        tmp_path = Path(tmp.name)
    try:
        save_checkpoint(model, tmp_path)
        tmp_path.replace(out)
    finally:
        tmp_path.unlink(missing_ok=True)
    history_path = Path(args.history) if args.history else out.with_suffix(".history.csv")

    from .report import plot_history, write_history_csv

    write_history_csv(history, history_path)
    if not args.no_figures:
        plot_history(history, history_path.with_suffix(".png"), title=model_cfg.variant)
    best = next(r for r in history if r["best"])
    _print_json(
        {
            "variant": model_cfg.variant,
            "best_epoch": best["epoch"],
            "epochs_run": history[-1]["epoch"],
            "val_logloss": best["val_logloss"],
            "val_accuracy": best["val_accuracy"],
            "checkpoint": str(out),
            "history": str(history_path),
        }
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.ckpt).is_file():
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    model = load_checkpoint(args.ckpt)
    samples = _load(args.data)
    if not samples:
        raise UsageError("dataset is empty")
    _check_dim(samples, model.config)
    report = evaluate(model, samples)
    _print_json({"variant": model.variant, "logloss": report.logloss, "accuracy": report.accuracy, "n": report.n})
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    model_cfg, train_cfg, split_seed = split_config(cfg)
    samples = _load(args.data)
    _check_dim(samples, model_cfg)
    train_set, val_set, test_set = split_dataset(samples, split_seed)
    if not (train_set and val_set and test_set):
        raise UsageError("dataset too small for an 80/10/10 split")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variants {bad}; valid: {', '.join(VARIANTS)}")
    result = run_comparison(train_set, val_set, test_set, variants, list(range(args.seeds)), train_cfg, model_cfg)

    from .report import format_summary, write_comparison

    if args.out:
        write_comparison(result, args.out)
    sys.stderr.write(format_summary(result["summary"]))
    _print_json(result)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import time

    from .gradcheck import TOLERANCE, run_suite, summarize

    start = time.perf_counter()
    results = run_suite(seed=args.seed, instances=args.instances)
    rows = summarize(results)
    failed = sum(r["failures"] for r in rows)
    _print_json(
        {
            "tolerance": TOLERANCE,
            "checks": rows,
            "failures": failed,
            "seconds": round(time.perf_counter() - start, 2),
        }
    )
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collabgnn", description=__doc__.splitlines()[0])
    p.add_argument("--print-config", action="store_true", help="print the default config (all keys) and exit")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="write a synthetic paired-graph dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--strength", type=float, default=0.8, help="cross-modal strength in [0, 1]")
    s.add_argument("--noise", type=float, default=SynthSpec.noise_sigma, help="per-node noise sigma")
    s.add_argument("--dim", type=int, default=256)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-graphs", help="add top-50%% cosine edges to feature-only records")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_graphs)

    s = sub.add_parser("train", help="train one variant and write a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--variant", choices=VARIANTS, default="collaborative")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--val-data", help="separate validation file (default: split --data 80/10/10)")
    s.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="train all variants over several seeds")
    s.add_argument("--data", required=True)
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--config")
    s.add_argument("--variants", help="comma-separated subset (default: all six)")
    s.add_argument("--out", help="directory for comparison.json/.txt/.png")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--instances", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("COLLABGNN_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        _print_json(default_config())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(1):
            return args.func(args)
    except (UsageError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, CollabGNNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
