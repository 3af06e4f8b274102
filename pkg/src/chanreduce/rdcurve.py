"""Rate-distortion curves: model size against accuracy.

Two curve families: uniform width scaling alone (one point per multiplier alpha),
and the same scaling composed with greedy backward block reduction, which dominates
the plain curve point-for-point in size at a bounded accuracy cost.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from .accounting import count_parameters
from .arch import ModelSpec, apply_alpha_scaling, channel_config, partition_macroblocks, with_config
from .oracle import TrainingBudget, config_digest
from .search import BetaMode, backward_reduction

log = logging.getLogger(__name__)

CURVE_HEADER = ["label", "size_bytes", "params", "top1", "config_digest"]


@dataclass(frozen=True)
class RDPoint:
    label: str
    size_bytes: int
    params: int
    top1: float
    config_digest: str

    def __post_init__(self):
        if not 0.0 <= self.top1 <= 1.0:
            raise ValueError(f"top1 {self.top1} outside [0, 1]")
        if self.size_bytes < 0 or self.params < 0:
            raise ValueError("sizes must be non-negative")


def _check_alphas(alphas) -> list:
    out = list(alphas)
    if not out:
        raise ValueError("need a non-empty multiplier grid")
    for a in out:
        if not 0 < float(a) <= 1:
            raise ValueError(f"width multiplier {a!r} outside (0, 1]")
    return out


def build_alpha_curve(spec: ModelSpec, alphas, oracle, budget: TrainingBudget, *,
                      ledger=None) -> list[RDPoint]:
    """One point per multiplier, sorted by size ascending. Failed evaluations are
    logged (and ledgered when asked) but produce no point."""
    points = []
    for alpha in _check_alphas(alphas):
        config = apply_alpha_scaling(channel_config(spec), alpha)
        report = count_parameters(with_config(spec, config))
        record = oracle.evaluate(config, budget)
        if ledger is not None:
            ledger.append(record)
        if not record.ok:
            log.warning("alpha=%g evaluation status %s; point skipped", alpha, record.status)
            continue
        points.append(RDPoint(f"alpha={float(alpha):g}", report.size_bytes,
                              report.parameter_count, record.top1,
                              config_digest(config, spec)))
    return sorted(points, key=lambda p: p.size_bytes)


def build_alpha_plus_backward_curve(spec: ModelSpec, alphas, delta: float, oracle,
                                    budget: TrainingBudget, scope: int | None = None, *,
                                    beta_mode: BetaMode = BetaMode.FEASIBLE_BOUND,
                                    metric: str = "top1", ledger=None) -> list[RDPoint]:
    """Compose uniform scaling with backward reduction: for each alpha, scale the
    model, then greedily reduce its macroblocks within the accuracy budget delta
    (measured against the scaled model's own accuracy)."""
    points = []
    for alpha in _check_alphas(alphas):
        scaled = with_config(spec, apply_alpha_scaling(channel_config(spec), alpha))
        partition = partition_macroblocks(scaled)
        result = backward_reduction(scaled, partition, delta, oracle, budget, scope,
                                    beta_mode=beta_mode, metric=metric)
        if ledger is not None:
            for probe in result.trace:
                ledger.append(probe.record)
        digest = config_digest(result.reduced_config, spec)
        record = next((p.record for p in result.trace
                       if p.record.config_digest == digest and p.record.ok), None)
        if record is None:
            record = oracle.evaluate(result.reduced_config, budget)
            if ledger is not None:
                ledger.append(record)
        if not record.ok:
            log.warning("alpha=%g composed point status %s; point skipped",
                        alpha, record.status)
            continue
        points.append(RDPoint(f"alpha={float(alpha):g}+backward",
                              result.reduced_report.size_bytes,
                              result.reduced_report.parameter_count,
                              record.top1, digest))
    return sorted(points, key=lambda p: p.size_bytes)


def export_curve(points: list[RDPoint], path) -> None:
    """Write the canonical curve CSV. Re-exporting unchanged points is
    byte-identical."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for p in points:
            writer.writerow([p.label, p.size_bytes, p.params, repr(p.top1), p.config_digest])


def import_curve(path) -> list[RDPoint]:
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CURVE_HEADER:
            raise ValueError(f"unexpected curve header {header!r}")
        return [RDPoint(label, int(size), int(params), float(top1), digest)
                for label, size, params, top1, digest in reader]


def export_gnuplot(points: list[RDPoint], path) -> None:
    """Two-column plot data: size in KB, accuracy in percent."""
    lines = ["# size_kb top1_percent"]
    lines += [f"{p.size_bytes / 1024:.10g} {p.top1 * 100:.10g}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
