"""``nsplan`` command line: run a scenario suite, inspect traces, train a checkpoint."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .conditioning import load_checkpoint, save_checkpoint, PlannerWeights
from .config import ConfigError, RunConfig, dump_config, load_config, load_suite
from .harness import (
    ABLATIONS, Ablation, FrameNotFound, Pipeline, diff_records, evaluate, load_trace, metrics_csv,
    render_frame, replay_frame, trace_line,
)
from .rules import make_generator
from .scenarios import build_suite
from .training import DivergenceError, TrainConfig, curve_csv, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("nsplan")


class CheckFailure(RuntimeError):
    pass


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _train_weights(cfg: RunConfig, use_smoothing: bool = True):
    specs = load_suite(cfg.train_suite, cfg.seed)
    suite = build_suite(specs, cfg.kbm)
    tc = TrainConfig(**{**cfg.training.__dict__, "use_smoothing": use_smoothing and cfg.training.use_smoothing})
    init = PlannerWeights.init(cfg.conditioning, cfg.kbm, seed=cfg.seed)
    return train(suite, cfg.conditioning, cfg.kbm, tc, cfg.arbitration, init=init)


def _weights_for(cfg: RunConfig, out: Path):
    if cfg.weights:
        if "no-smoothing" in cfg.ablate:
            raise ConfigError("--ablate no-smoothing retrains the planner; drop --weights")
        try:
            w, _ = load_checkpoint(cfg.weights, cfg.conditioning, cfg.kbm)
        except OSError as exc:
            raise ConfigError(f"cannot read weights {cfg.weights}: {exc}") from exc
        return w
    log.info("no weights given, training on suite %r", cfg.train_suite)
    w, curve = _train_weights(cfg, use_smoothing="no-smoothing" not in cfg.ablate)
    save_checkpoint(out / "weights.npz", w, cfg.to_dict())
    _write(out / "loss_curve.csv", curve_csv(curve))
    return w


def _config_from_args(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "suite": getattr(args, "suite", None),
        "out": args.out,
        "weights": getattr(args, "weights", None),
        "generator": getattr(args, "generator", None),
        "ablate": getattr(args, "ablate", None) or None,
    }
    return load_config(args.config, overrides)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    try:
        Ablation.from_flags(set(cfg.ablate) - {"no-smoothing"})
        generator = make_generator(cfg.generator, cfg.arbitration)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(cfg.out)
    specs = load_suite(cfg.suite, cfg.seed)
    suite = build_suite(specs, cfg.kbm)
    weights = _weights_for(cfg, out)
    pipe = Pipeline(weights, cfg.kbm, cfg.conditioning, cfg.arbitration, generator,
                    Ablation.from_flags(set(cfg.ablate) - {"no-smoothing"}))
    report, results = evaluate(suite, pipe)
    _write(out / "metrics.csv", metrics_csv(report, results))
    for r in results:
        _write(out / "traces" / f"{r.scenario}.jsonl", "".join(line + "\n" for line in r.traces))
    _write(out / "effective_config.yaml", dump_config(cfg))
    print(f"{report.frames} frames: L2 avg {report.l2_at['avg']:.3f} m, collision rate {report.collision_rate:.4f}, "
          f"TPC avg {report.tpc_at['avg']:.3f} m -> {out}")
    if args.check:
        _check(report, results, pipe)
        print("check passed")
    return EXIT_OK


def _check(report, results, pipe: Pipeline) -> None:
    """CI gate: every frame replays exactly and the metrics are well formed."""
    values = list(report.l2_at.values()) + list(report.tpc_at.values()) + [report.collision_rate]
    if any(not v >= 0 for v in values):
        raise CheckFailure("negative or NaN metric")
    for r in results:
        for line in r.traces:
            rec = json.loads(line)
            if trace_line(replay_frame(rec, pipe)) != line:
                raise CheckFailure(f"{r.scenario} frame {rec['frame']}: replay differs")


def cmd_trace(args) -> int:
    path = Path(args.path)
    files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
    if not files:
        raise FrameNotFound(f"no trace files under {path}")
    try:
        records = [rec for f in files for rec in load_trace(f)]
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from exc
    if args.frame is not None:
        records = [r for r in records if r["frame"] == args.frame]
        if not records:
            raise FrameNotFound(f"frame {args.frame} not in {path}")
    pipe = None
    if args.replay:
        cfg = load_config(args.config, {"weights": args.weights})
        if not cfg.weights:
            raise ConfigError("--replay needs --weights (or a config naming them)")
        w, _ = load_checkpoint(cfg.weights, cfg.conditioning, cfg.kbm)
        pipe = Pipeline(w, cfg.kbm, cfg.conditioning, cfg.arbitration)
    failed = False
    for rec in records:
        print(render_frame(rec))
        if pipe is not None:
            diff = diff_records(rec, replay_frame(rec, pipe))
            print("  replay: identical" if not diff else "  replay differs:\n    " + "\n    ".join(diff))
            failed |= bool(diff)
        print()
    return EXIT_CHECK if failed else EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if args.lr is not None or args.steps is not None:
        tc = cfg.training.__dict__.copy()
        if args.lr is not None:
            tc["lr"] = args.lr
        if args.steps is not None:
            tc["stage1_steps"], tc["stage2_steps"] = args.steps
        cfg.training = TrainConfig(**tc)
    if args.suite:
        cfg.train_suite = args.suite
    out = Path(cfg.out)
    w, curve = _train_weights(cfg)
    save_checkpoint(out / "weights.npz", w, cfg.to_dict())
    _write(out / "loss_curve.csv", curve_csv(curve))
    _write(out / "effective_config.yaml", dump_config(cfg))
    last = curve[-1][2] if curve else None
    print(f"trained {len(curve)} steps" + (f", final loss {last.total:.4f}" if last else "") + f" -> {out / 'weights.npz'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsplan", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, suite=True):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if suite:
            p.add_argument("--suite", help="built-in suite name or suite file")

    r = sub.add_parser("run", help="evaluate a scenario suite")
    common(r)
    r.add_argument("--weights", help="checkpoint (.npz); trains one when omitted")
    r.add_argument("--ablate", action="append", choices=ABLATIONS, default=[])
    r.add_argument("--generator", help="template | cache:<dir> | http:<url>")
    r.add_argument("--check", action="store_true", help="replay every frame and fail with exit 4 on mismatch")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("trace", help="render the reasoning chain of recorded frames")
    t.add_argument("path", help="trace file or directory of trace files")
    t.add_argument("--frame", type=int)
    t.add_argument("--replay", action="store_true", help="re-execute and diff against the record")
    t.add_argument("--weights")
    t.add_argument("--config")
    t.set_defaults(func=cmd_trace)

    tr = sub.add_parser("train", help="two-stage training on a suite")
    common(tr)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--steps", type=int, nargs=2, metavar=("STAGE1", "STAGE2"))
    tr.set_defaults(func=cmd_train)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (FrameNotFound, DivergenceError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
