"""Command-line entry point: ``affmixer <subcommand> [options]``.

Exit status: 0 success, 2 config/usage error, 3 data validation error,
4 runtime failure (including divergence).  Failures print one line to stderr
of the form ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from affmixer.config import RunConfig, load_config, save_config
from affmixer.errors import AffMixerError, ConfigError

log = logging.getLogger("affmixer")

EXIT_CODES = {"config-parse": 2, "data-validation": 3, "runtime": 4}
OUT_ENV = "AFFMIXER_OUT"


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / default_name


def _run_config(args, out: Path) -> RunConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    overrides.append(f"out_dir={out}")
    if getattr(args, "manifest", None):
        overrides.append(f"manifest={args.manifest}")
    cfg = load_config(args.config, overrides)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    return cfg


def _manifest(cfg_or_path):
    from affmixer.data import load_manifest

    path = cfg_or_path.manifest if isinstance(cfg_or_path, RunConfig) else cfg_or_path
    if not path:
        raise ConfigError("no manifest given (use --manifest or set 'manifest' in the config)")
    return load_manifest(path)


def cmd_gen_synth(args) -> None:
    from affmixer.data import SyntheticSpec, generate_synthetic

    data = {}
    if args.config:
        data = yaml.safe_load(Path(args.config).read_text()) or {}
    spec_fields = {f.name: f for f in dataclasses.fields(SyntheticSpec)}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep or key not in spec_fields:
            raise ConfigError(f"bad synthetic override {item!r}; keys: {sorted(spec_fields)}")
        data[key] = yaml.safe_load(raw)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = SyntheticSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args, "synth")
    manifest = generate_synthetic(spec, out)
    (out / "synthetic_spec.yaml").write_text(yaml.safe_dump(dataclasses.asdict(spec), sort_keys=False))
    print(f"manifest={out / 'manifest.jsonl'} samples={len(manifest)}")


def cmd_train(args) -> None:
    from affmixer.engine.train import train

    out = _out_dir(args, "train")
    cfg = _run_config(args, out)
    result = train(cfg, _manifest(cfg), out_dir=out, resume=args.resume)
    print(f"steps={len(result.history)} best_headline={result.best_metric:.6f} checkpoint={result.last_checkpoint}")


def _model_from_checkpoint(path):
    from affmixer.engine.checkpoint import load_checkpoint

    return load_checkpoint(path)[0]


def cmd_eval(args) -> None:
    from affmixer.engine.evaluate import evaluate_model, evaluate_predictions

    out = _out_dir(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args.manifest)
    if args.predictions:
        tasks = tuple(args.tasks.split(","))
        report = evaluate_predictions(args.predictions, manifest, args.split, tasks)
    elif args.checkpoint:
        model = _model_from_checkpoint(args.checkpoint)
        save_config(model.cfg, out / "config.yaml")
        report = evaluate_model(model, manifest, args.split, shards=args.shards, pred_dir=out / "predictions")
    else:
        raise ConfigError("eval needs --checkpoint or --predictions")
    report.write(out / "report")
    sys.stdout.write(report.to_text())


def cmd_predict(args) -> None:
    from affmixer.engine.evaluate import predict_sequences, write_predictions
    from affmixer.data import SequenceStore

    out = _out_dir(args, "predict")
    model = _model_from_checkpoint(args.checkpoint)
    manifest = _manifest(args.manifest)
    feature_dim = model.cfg.feature_dim if model.cfg.input_kind == "features" else None
    preds = predict_sequences(model, SequenceStore(manifest, args.split, feature_dim))
    write_predictions(out, preds, model.cfg.tasks)
    save_config(model.cfg, out / "config.yaml")
    print(f"predictions={out} samples={len(preds)}")


def cmd_gradcheck(args) -> None:
    from affmixer.engine.gradcheck import gradcheck, gradcheck_config

    out = _out_dir(args, "gradcheck")
    out.mkdir(parents=True, exist_ok=True)
    cfg = gradcheck_config()
    if args.config or args.set:
        base = cfg.to_dict()
        if args.config:
            base.update(yaml.safe_load(Path(args.config).read_text()) or {})
        cfg = RunConfig.from_dict(base).with_overrides(args.set or []).validate()
    save_config(cfg, out / "config.yaml")
    report = gradcheck(cfg, step=args.step)
    text = report.to_text()
    (out / "gradcheck.txt").write_text(text)
    sys.stdout.write(text)
    if not report.passed:
        raise AffMixerError(f"gradient check failed for {report.failing()}")


def cmd_bench(args) -> None:
    from affmixer.engine.bench import BENCH_COLUMNS, benchmark

    if args.runs < 30:
        raise ConfigError(f"--runs must be >= 30 for stable medians, got {args.runs}")
    try:
        t_values = [int(v) for v in args.t.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --t {args.t!r}") from exc
    out = _out_dir(args, "bench")
    cfg = _run_config(args, out)
    rows = benchmark(cfg, t_values, runs=args.runs, out_dir=out)
    print("\t".join(BENCH_COLUMNS))
    for r in rows:
        print("\t".join(f"{r[c]:.4g}" if isinstance(r[c], float) else str(r[c]) for c in BENCH_COLUMNS))


def cmd_ablation(args) -> None:
    from affmixer.engine.ablation import format_table, run_ablation

    out = _out_dir(args, "ablation")
    cfg = _run_config(args, out)
    try:
        variants = [tuple(int(c) for c in v.strip()) for v in args.variants.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --variants {args.variants!r}") from exc
    rows = run_ablation(cfg, _manifest(cfg), variants, out_dir=out)
    sys.stdout.write(format_table(rows))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affmixer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="run-config YAML file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/{name} or runs/{name})")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.set_defaults(func=fn)
        return p

    add("gen-synth", cmd_gen_synth, "generate a synthetic dataset with planted labels")
    p = add("train", cmd_train, "train a model")
    p.add_argument("--manifest")
    p.add_argument("--resume", help="checkpoint to continue from")
    p = add("eval", cmd_eval, "evaluate a checkpoint or a prediction directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="score existing prediction files instead of running a model")
    p.add_argument("--tasks", default="au,va,ah,emi", help="tasks to score with --predictions")
    p.add_argument("--shards", type=int, default=1)
    p = add("predict", cmd_predict, "write prediction files for a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", required=True)
    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient check on a tiny float64 model")
    p.add_argument("--step", type=float, default=1e-5)
    p = add("bench", cmd_bench, "latency / FLOP sweep over clip length")
    p.add_argument("--t", default="8,16,32", help="comma-separated clip lengths")
    p.add_argument("--runs", type=int, default=30)
    p = add("ablation", cmd_ablation, "train and compare mixer-level variants")
    p.add_argument("--manifest")
    p.add_argument("--variants", default="123,23,3", help="comma-separated level sets, e.g. 123,23,3")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except AffMixerError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except (OSError, yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"error[data-validation]: {exc}", file=sys.stderr)
        return EXIT_CODES["data-validation"]
    except Exception as exc:  # noqa: BLE001 - every failure gets an exit category
        print(f"error[runtime]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES["runtime"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
