"""Size/accuracy trade-off curves from width scaling, alone and composed with
the per-block search."""

from __future__ import annotations

import pytest

import chanreduce as cr
from chanreduce.rdcurve import (CURVE_HEADER, RDPoint, build_alpha_curve,
                                build_alpha_plus_backward_curve, export_curve,
                                export_gnuplot, import_curve)

ALPHAS = (0.5, 0.6, 0.7, 0.8, 0.9)


def test_alpha_curve_sizes_strictly_increase(d15_spec):
    points = build_alpha_curve(d15_spec, ALPHAS, cr.SurrogateOracle(d15_spec),
                               cr.SEARCH_BUDGET)
    assert len(points) == len(ALPHAS)
    assert [p.label for p in points] == [f"alpha={a:g}" for a in ALPHAS]
    sizes = [p.size_bytes for p in points]
    assert sizes == sorted(sizes)
    assert all(a < b for a, b in zip(sizes, sizes[1:]))
    # Each point's accounting must match a direct recount.
    scaled = cr.with_config(d15_spec,
                            cr.apply_alpha_scaling(cr.channel_config(d15_spec), 0.7))
    report = cr.count_parameters(scaled)
    mid = next(p for p in points if p.label == "alpha=0.7")
    assert (mid.size_bytes, mid.params) == (report.size_bytes, report.parameter_count)


def test_composed_curve_never_larger_than_alpha_only(d15_spec):
    alpha_only = build_alpha_curve(d15_spec, ALPHAS, cr.SurrogateOracle(d15_spec),
                                   cr.SEARCH_BUDGET)
    composed = build_alpha_plus_backward_curve(d15_spec, ALPHAS, 0.01,
                                               cr.SurrogateOracle(d15_spec),
                                               cr.SEARCH_BUDGET)
    plain = {p.label.split("+")[0]: p for p in alpha_only}
    assert len(composed) == len(ALPHAS)
    for p in composed:
        base, _, suffix = p.label.partition("+")
        assert suffix == "backward"
        assert p.size_bytes <= plain[base].size_bytes


def test_curve_round_trip_and_bytes(d15_spec, tmp_path):
    points = build_alpha_curve(d15_spec, (0.5, 1.0), cr.SurrogateOracle(d15_spec),
                               cr.SEARCH_BUDGET)
    path = tmp_path / "curve.csv"
    export_curve(points, path)
    again = import_curve(path)
    assert again == points
    twice = tmp_path / "curve2.csv"
    export_curve(again, twice)
    assert twice.read_bytes() == path.read_bytes()

    first_line = path.read_text().splitlines()[0]
    assert first_line == ",".join(CURVE_HEADER)


def test_import_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,size\nx,1\n")
    with pytest.raises(ValueError):
        import_curve(path)


def test_gnuplot_format(tmp_path):
    points = [RDPoint("alpha=1", 879592, 218778, 0.91, "a" * 64),
              RDPoint("alpha=0.5", 225180, 55126, 0.0, "b" * 64)]
    path = tmp_path / "curve.dat"
    export_gnuplot(points, path)
    assert path.read_text() == ("# size_kb top1_percent\n"
                                "858.9765625 91\n"
                                "219.9023438 0\n")


def test_rdpoint_validation():
    with pytest.raises(ValueError):
        RDPoint("x", -1, 10, 0.5, "a" * 64)
    with pytest.raises(ValueError):
        RDPoint("x", 10, 10, 1.5, "a" * 64)


class _FailsSmallConfigs:
    """Fails any config whose total width dips under a threshold."""

    parallel_slots = 1

    def __init__(self, spec, threshold):
        self._inner = cr.SurrogateOracle(spec)
        self.spec = spec
        self.threshold = threshold

    def evaluate(self, config, budget):
        if sum(config.channels) < self.threshold:
            return cr.EvaluationRecord(
                config_digest=cr.config_digest(config, self.spec), budget=budget,
                top1=None, top5=None, wall_seconds=0.0, status="failed")
        return self._inner.evaluate(config, budget)


def test_failed_points_are_skipped(d15_spec, caplog):
    nominal_total = sum(cr.channel_config(d15_spec).channels)
    oracle = _FailsSmallConfigs(d15_spec, nominal_total)   # everything but alpha=1 fails
    with caplog.at_level("WARNING", logger="chanreduce.rdcurve"):
        points = build_alpha_curve(d15_spec, (0.5, 1.0), oracle, cr.SEARCH_BUDGET)
    assert [p.label for p in points] == ["alpha=1"]
    assert any("alpha=0.5" in r.message for r in caplog.records)


def test_curve_ledger_appends(d15_spec, tmp_path):
    ledger = cr.EvaluationLedger(tmp_path / "l.jsonl")
    build_alpha_curve(d15_spec, (0.5, 1.0), cr.SurrogateOracle(d15_spec),
                      cr.SEARCH_BUDGET, ledger=ledger)
    assert len(ledger) == 2


def test_alpha_validation(d15_spec):
    with pytest.raises(ValueError):
        build_alpha_curve(d15_spec, (), cr.SurrogateOracle(d15_spec), cr.SEARCH_BUDGET)
    with pytest.raises(ValueError):
        build_alpha_curve(d15_spec, (1.2,), cr.SurrogateOracle(d15_spec),
                          cr.SEARCH_BUDGET)
