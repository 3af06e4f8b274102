"""Command line front end.

Every run gets a directory holding the artifacts needed to reproduce it without
re-evaluating anything: ``resolved.cfg`` (every effective setting plus the
command that ran), ``ledger.jsonl`` (one line per oracle call), and the
command's reports. ``chanreduce replay RUNDIR`` re-renders those reports from
the ledger alone; reports carry no timestamps, so a replay is byte-identical.

Exit codes: 0 success, 1 runtime failure (reports may be partial), 2 bad
configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import shutil
import sys
from fractions import Fraction
from pathlib import Path

from .accounting import count_parameters
from .arch import channel_config, partition_macroblocks
from .config import ConfigError, RunConfig
from .lesion import (SWEEP_CONSTANT, SWEEP_MACROBLOCK, SWEEP_PROPORTIONAL, SweepPlan,
                     run_macroblock_rd_sweep, run_onehot_sweep, write_onehot_csv,
                     write_rd_points_csv)
from .oracle import (EvaluationLedger, MissingEvaluationError, RecordingOracle,
                     ReplayOracle, SurrogateOracle)
from .rdcurve import (build_alpha_curve, build_alpha_plus_backward_curve, export_curve,
                      export_gnuplot)
from .search import backward_reduction, forward_reduction
from .trainer import ExternalTrainerOracle

log = logging.getLogger(__name__)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingEvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chanreduce",
                                     description="Greedy per-macroblock channel reduction for CNNs.")
    sub = parser.add_subparsers(dest="cmd")

    def common(p, budget=True):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", default=None, help="run directory (default derived from config)")
        p.add_argument("--oracle", choices=("surrogate", "replay", "external"), default=None,
                       help="override the configured oracle kind")
        if budget:
            p.add_argument("--budget", choices=("search", "final"), default="search",
                           help="training budget used for evaluations")

    p = sub.add_parser("reduce", help="greedy per-macroblock width reduction")
    common(p)
    p.add_argument("--delta", type=float, default=None, help="accuracy drop tolerance")
    p.add_argument("--scope", type=int, default=None, help="number of macroblocks to search")
    p.add_argument("--direction", choices=("backward", "forward"), default="backward")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("lesion", help="channel lesion sweeps")
    common(p)
    p.add_argument("--kind", choices=(SWEEP_CONSTANT, SWEEP_PROPORTIONAL, SWEEP_MACROBLOCK),
                   required=True)
    p.add_argument("--values", nargs="+", required=True,
                   help="widths, or scale factors like 11/16 or 0.5")
    p.add_argument("--indices", nargs="+", type=int, default=None,
                   help="channel entries to lesion (default: all)")
    p.set_defaults(func=cmd_lesion)

    p = sub.add_parser("rd", help="size/accuracy trade-off curves")
    common(p)
    p.add_argument("--alphas", nargs="+", type=float, default=[1.0, 0.75, 0.5, 0.25])
    p.add_argument("--delta", type=float, default=None, help="accuracy drop tolerance")
    p.add_argument("--scope", type=int, default=None, help="number of macroblocks to search")
    p.add_argument("--gnuplot", action="store_true", help="also write .dat plot files")
    p.set_defaults(func=cmd_rd)

    p = sub.add_parser("size", help="parameter and size accounting")
    common(p, budget=False)
    p.set_defaults(func=cmd_size)

    p = sub.add_parser("replay", help="re-render a run's reports from its ledger")
    p.add_argument("run_dir", help="directory of a previous run")
    p.add_argument("--out", default=None, help="write re-rendered artifacts here instead")
    p.set_defaults(func=cmd_replay)
    return parser


# -- run setup ---------------------------------------------------------------


def _apply_overrides(cfg: RunConfig, args) -> None:
    if getattr(args, "delta", None) is not None:
        if not 0.0 <= args.delta <= 1.0:
            raise ConfigError(f"--delta must be within [0, 1], got {args.delta}")
        cfg.search.delta = args.delta
    if getattr(args, "scope", None) is not None:
        if args.scope < 1:
            raise ConfigError(f"--scope must be >= 1, got {args.scope}")
        cfg.search.scope = args.scope
    if args.oracle is not None:
        cfg.oracle.kind = args.oracle
        if cfg.oracle.kind == "external" and not cfg.oracle.trainer_cmd:
            raise ConfigError("--oracle external needs oracle.trainer_cmd in the config")
        if cfg.oracle.kind == "replay":
            if not cfg.oracle.ledger:
                raise ConfigError("--oracle replay needs oracle.ledger in the config")
            if not cfg._resolve(cfg.oracle.ledger).exists():
                raise ConfigError(f"replay ledger {cfg.oracle.ledger} does not exist")


def _make_oracle(cfg: RunConfig, spec, run_dir: Path, replay_dir: Path | None):
    """Build the evaluation oracle. Outside replay, every call is recorded into
    the run directory's ledger."""
    if replay_dir is not None:
        return ReplayOracle(EvaluationLedger(replay_dir / "ledger.jsonl"), spec), None

    o = cfg.oracle
    if o.kind == "surrogate":
        inner = SurrogateOracle(spec, cfg.surrogate_params())
    elif o.kind == "external":
        inner = ExternalTrainerOracle(o.trainer_cmd, spec, parallelism=o.parallelism,
                                      timeout=o.timeout_seconds, protocol=o.protocol,
                                      exchange_dir=cfg._resolve(o.exchange_dir)
                                      if o.exchange_dir else None)
    else:
        source = cfg._resolve(o.ledger)
        inner = ReplayOracle(EvaluationLedger(source), spec)
        if source.resolve() == (run_dir / "ledger.jsonl").resolve():
            return inner, None
    oracle = RecordingOracle(inner, EvaluationLedger(run_dir / "ledger.jsonl"))
    return oracle, oracle.close


def _prepare(args, command: str):
    replay_dir = getattr(args, "replay_dir", None)
    cfg = RunConfig.from_file(args.config)
    if replay_dir is None:
        _apply_overrides(cfg, args)
        cfg.command = command
    run_dir = cfg.resolve_run_dir(args.out, args.config)
    run_dir.mkdir(parents=True, exist_ok=True)
    if replay_dir is None:
        (run_dir / "resolved.cfg").write_text(cfg.resolved_text(), encoding="utf-8")
    elif run_dir.resolve() != replay_dir.resolve():
        shutil.copyfile(replay_dir / "resolved.cfg", run_dir / "resolved.cfg")
        shutil.copyfile(replay_dir / "ledger.jsonl", run_dir / "ledger.jsonl")
    spec = cfg.build_spec()
    oracle, closer = _make_oracle(cfg, spec, run_dir, replay_dir)
    # Even an evaluation-free run leaves a (possibly empty) ledger, so every
    # run directory is replayable.
    (run_dir / "ledger.jsonl").touch(exist_ok=True)
    return cfg, run_dir, spec, oracle, closer


def _pick_budget(cfg: RunConfig, which: str):
    return cfg.final_budget() if which == "final" else cfg.search_budget()


def _write_failure(run_dir: Path, command: str | None, exc: Exception) -> int:
    (run_dir / "summary.txt").write_text(
        f"command: {command}\nstatus: failed\nerror: {exc}\n", encoding="utf-8")
    print(f"error: {exc}", file=sys.stderr)
    return 1


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt_widths(widths) -> str:
    return "[" + " ".join(str(w) for w in widths) + "]"


def _fmt_cli_value(v) -> str:
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return repr(v) if isinstance(v, float) else str(v)


# -- reduce ------------------------------------------------------------------


def cmd_reduce(args) -> int:
    command = f"reduce --budget {args.budget} --direction {args.direction}"
    cfg, run_dir, spec, oracle, closer = _prepare(args, command)
    try:
        try:
            return _run_reduce(args, cfg, run_dir, spec, oracle)
        except MissingEvaluationError as exc:
            return _write_failure(run_dir, cfg.command, exc)
    finally:
        if closer:
            closer()


def _run_reduce(args, cfg, run_dir, spec, oracle) -> int:
    partition = partition_macroblocks(spec)
    budget = _pick_budget(cfg, args.budget)
    op = backward_reduction if args.direction == "backward" else forward_reduction
    result = op(spec, partition, cfg.search.delta, oracle, budget, cfg.search.scope,
                beta_mode=cfg.beta_mode(), metric=cfg.search.metric)

    final_record = None
    baseline = result.baseline_record
    if cfg.oracle.kind == "external" and baseline is not None and baseline.ok:
        final_record = oracle.evaluate(result.reduced_config, cfg.final_budget())

    payload = result.to_dict()
    payload["final_evaluation"] = None if final_record is None else final_record.to_dict()
    _write_json(run_dir / "reduction.json", payload)

    lines = [f"command: {cfg.command}",
             f"model: {spec.meta.name} dataset={spec.meta.dataset} "
             f"classes={spec.meta.num_classes}",
             f"oracle: {cfg.oracle.kind}",
             f"delta: {cfg.search.delta!r}  metric: {cfg.search.metric}",
             f"budget: epochs={budget.epochs} milestones={list(budget.lr_milestones)}",
             f"macroblocks: {partition.num_blocks}  "
             f"scope: {sorted(result.scope)}"]
    value = None if baseline is None else baseline.metric(cfg.search.metric)
    lines.append(f"baseline {cfg.search.metric}: "
                 f"{'unavailable' if value is None else repr(value)}")
    nominal = channel_config(spec)
    for b in sorted(result.scope):
        lines.append(f"block {b}: beta={result.betas[b]!r} "
                     f"{_fmt_widths(nominal.block_channels(b))} -> "
                     f"{_fmt_widths(result.reduced_config.block_channels(b))}")
    base, red = result.base_report, result.reduced_report
    lines.append(f"base: params={base.parameter_count} bytes={base.size_bytes} "
                 f"({base.size_mb:.4f} MB)")
    lines.append(f"reduced: params={red.parameter_count} bytes={red.size_bytes} "
                 f"({red.size_mb:.4f} MB)")
    lines.append(f"saving_percent: {result.saving!r}")
    lines.append(f"oracle_calls: {len(result.trace)}")
    for d in result.diagnostics:
        lines.append(f"diagnostic: {d}")
    if final_record is not None:
        final = (final_record.status if not final_record.ok
                 else repr(final_record.metric(cfg.search.metric)))
        lines.append(f"final {cfg.search.metric} (full budget): {final}")
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    ok = baseline is not None and baseline.ok
    print(f"{'reduction' if ok else 'reduction (baseline failed)'}: "
          f"betas {list(result.betas)} -> {run_dir}")
    return 0 if ok else 1


# -- lesion ------------------------------------------------------------------


def _parse_sweep_values(kind: str, raw: list[str]) -> tuple:
    values = []
    for text in raw:
        try:
            if "/" in text:
                values.append(Fraction(text))
            elif "." in text or "e" in text.lower():
                values.append(float(text))
            else:
                values.append(int(text))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"cannot parse sweep value {text!r}")
    if kind == SWEEP_CONSTANT:
        bad = [v for v in values if not isinstance(v, int)]
        if bad:
            raise ConfigError(f"constant sweeps take integer widths, got {bad}")
    return tuple(values)


def cmd_lesion(args) -> int:
    values = _parse_sweep_values(args.kind, args.values)
    command = f"lesion --kind {args.kind} --values " + \
        " ".join(_fmt_cli_value(v) for v in values)
    if args.indices is not None:
        command += " --indices " + " ".join(str(i) for i in args.indices)
    command += f" --budget {args.budget}"
    cfg, run_dir, spec, oracle, closer = _prepare(args, command)
    try:
        try:
            return _run_lesion(args, values, cfg, run_dir, spec, oracle)
        except MissingEvaluationError as exc:
            return _write_failure(run_dir, cfg.command, exc)
    finally:
        if closer:
            closer()


def _run_lesion(args, values, cfg, run_dir, spec, oracle) -> int:
    budget = _pick_budget(cfg, args.budget)
    lines = [f"command: {cfg.command}",
             f"model: {spec.meta.name}", f"oracle: {cfg.oracle.kind}"]
    if args.kind == SWEEP_MACROBLOCK:
        partition = partition_macroblocks(spec)
        points = run_macroblock_rd_sweep(spec, partition, values, oracle, budget)
        write_rd_points_csv(points, run_dir / "rd_points.csv")
        failed = sum(1 for p in points if not p.record.ok)
        lines += [f"points: {len(points)}", f"failed: {failed}", "csv: rd_points.csv"]
        all_failed = bool(points) and failed == len(points)
    else:
        plan = SweepPlan(kind=args.kind, values=values,
                         indices=None if args.indices is None else tuple(args.indices),
                         budget=budget)
        observations = run_onehot_sweep(spec, plan, oracle)
        write_onehot_csv(observations, run_dir / "onehot.csv")
        failed = sum(1 for o in observations if not o.record.ok)
        lines += [f"observations: {len(observations)}", f"failed: {failed}",
                  "csv: onehot.csv"]
        all_failed = bool(observations) and failed == len(observations)
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"lesion sweep written to {run_dir}")
    return 1 if all_failed else 0


# -- rd ----------------------------------------------------------------------


def cmd_rd(args) -> int:
    command = "rd --alphas " + " ".join(repr(a) for a in args.alphas) + \
        f" --budget {args.budget}"
    if args.gnuplot:
        command += " --gnuplot"
    cfg, run_dir, spec, oracle, closer = _prepare(args, command)
    try:
        try:
            return _run_rd(args, cfg, run_dir, spec, oracle)
        except MissingEvaluationError as exc:
            return _write_failure(run_dir, cfg.command, exc)
    finally:
        if closer:
            closer()


def _run_rd(args, cfg, run_dir, spec, oracle) -> int:
    budget = _pick_budget(cfg, args.budget)
    alpha_points = build_alpha_curve(spec, args.alphas, oracle, budget)
    composed_points = build_alpha_plus_backward_curve(
        spec, args.alphas, cfg.search.delta, oracle, budget, cfg.search.scope,
        beta_mode=cfg.beta_mode(), metric=cfg.search.metric)
    export_curve(alpha_points, run_dir / "alpha_curve.csv")
    export_curve(composed_points, run_dir / "rd_curve.csv")
    if args.gnuplot:
        export_gnuplot(alpha_points, run_dir / "alpha_curve.dat")
        export_gnuplot(composed_points, run_dir / "rd_curve.dat")

    lines = [f"command: {cfg.command}", f"model: {spec.meta.name}",
             f"oracle: {cfg.oracle.kind}",
             f"delta: {cfg.search.delta!r}  metric: {cfg.search.metric}"]
    for title, points in (("alpha", alpha_points), ("alpha+backward", composed_points)):
        lines.append(f"curve {title}: {len(points)} points")
        for pt in points:
            lines.append(f"  {pt.label}: size_bytes={pt.size_bytes} top1={pt.top1!r}")
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"trade-off curves written to {run_dir}")
    return 1 if not alpha_points and not composed_points else 0


# -- size --------------------------------------------------------------------


def cmd_size(args) -> int:
    cfg, run_dir, spec, oracle, closer = _prepare(args, "size")
    try:
        report = count_parameters(spec)
        lines = [f"command: {cfg.command}",
                 f"model: {spec.meta.name} dataset={spec.meta.dataset} "
                 f"classes={spec.meta.num_classes}",
                 f"parameters: {report.parameter_count}",
                 f"buffers: {report.buffer_count}",
                 f"size_bytes: {report.size_bytes}",
                 f"size_mb: {report.size_mb:.4f}"]
        for b in report.per_block_breakdown:
            lines.append(f"block {b.block_id}: params={b.params} bytes={b.bytes}")
        text = "\n".join(lines) + "\n"
        (run_dir / "summary.txt").write_text(text, encoding="utf-8")
        _write_json(run_dir / "size.json", report.to_dict())
        print(text, end="")
        return 0
    finally:
        if closer:
            closer()


# -- replay ------------------------------------------------------------------


def cmd_replay(args) -> int:
    run_dir = Path(args.run_dir)
    resolved = run_dir / "resolved.cfg"
    if not resolved.exists():
        raise ConfigError(f"{run_dir} has no resolved.cfg; not a run directory")
    if not (run_dir / "ledger.jsonl").exists():
        raise ConfigError(f"{run_dir} has no ledger.jsonl; nothing to replay from")
    cfg = RunConfig.from_file(resolved)
    if not cfg.command:
        raise ConfigError(f"{resolved} does not record the command that produced it")

    out = Path(args.out) if args.out else run_dir
    argv = shlex.split(cfg.command) + ["--config", str(resolved), "--out", str(out)]
    sub = _build_parser().parse_args(argv)
    sub.replay_dir = run_dir
    return sub.func(sub)


if __name__ == "__main__":
    sys.exit(main())
