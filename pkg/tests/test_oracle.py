"""Budgets, records, digests, the surrogate, and the evaluation ledger."""

from __future__ import annotations

import json
import threading

import pytest

import chanreduce as cr
from chanreduce import EvaluationLedger, EvaluationRecord, TrainingBudget


# -- budgets -----------------------------------------------------------------


def test_default_budgets():
    assert cr.SEARCH_BUDGET.epochs == 20
    assert cr.SEARCH_BUDGET.lr_milestones == (8, 16)
    assert cr.FINAL_BUDGET.epochs == 90
    assert cr.FINAL_BUDGET.lr_milestones == (30, 60)
    for budget in (cr.SEARCH_BUDGET, cr.FINAL_BUDGET):
        assert budget.lr_initial == 0.1
        assert budget.lr_divisor == 10.0
        assert budget.momentum == 0.9
        assert budget.weight_decay == 1e-4
        assert budget.batch_size == 128


def test_standard_budget_milestones():
    assert TrainingBudget.standard(20).lr_milestones == (10, 15)
    assert TrainingBudget.standard(90).lr_milestones == (45, 67)


def test_budget_validation():
    with pytest.raises(ValueError):
        TrainingBudget(epochs=0)
    with pytest.raises(ValueError):
        TrainingBudget(epochs=10, lr_milestones=(12,))
    with pytest.raises(ValueError):
        TrainingBudget(epochs=10, lr_milestones=(6, 4))
    with pytest.raises(ValueError):
        TrainingBudget(epochs=10, batch_size=0)


def test_budget_round_trip():
    budget = TrainingBudget(epochs=42, lr_initial=0.05, lr_milestones=(10, 30),
                            lr_divisor=5.0, momentum=0.8, weight_decay=5e-4,
                            batch_size=64, seed=7)
    assert TrainingBudget.from_dict(budget.to_dict()) == budget


# -- records -----------------------------------------------------------------


def _record(digest="d" * 64, top1=0.9, status="ok", **kw):
    return EvaluationRecord(config_digest=digest, budget=cr.SEARCH_BUDGET,
                            top1=top1, top5=kw.pop("top5", None),
                            wall_seconds=kw.pop("wall_seconds", 1.0),
                            status=status, **kw)


def test_record_validation():
    with pytest.raises(ValueError):
        _record(status="exploded")
    with pytest.raises(ValueError):
        _record(top1=None)                 # ok without top1
    with pytest.raises(ValueError):
        _record(top1=1.5)
    with pytest.raises(ValueError):
        _record(top1=0.9, top5=0.5)        # top1 cannot exceed top5
    failed = _record(top1=None, status="failed")
    assert not failed.ok and failed.metric("top1") is None


def test_record_metric_and_round_trip():
    rec = _record(top1=0.91, top5=0.99)
    assert rec.ok
    assert rec.metric() == 0.91
    assert rec.metric("top5") == 0.99
    with pytest.raises(ValueError):
        rec.metric("top3")
    assert EvaluationRecord.from_dict(rec.to_dict()) == rec


# -- digest and distortion ---------------------------------------------------


def test_digest_ignores_labels(d15_spec):
    cfg = cr.channel_config(d15_spec)
    relabeled = cr.ModelSpec(d15_spec.layers,
                             cr.ModelMeta("other-name", "svhn", 10, 3, 17))
    assert cr.config_digest(cfg, d15_spec) == cr.config_digest(cfg, relabeled)


def test_digest_tracks_structure_and_widths(d15_spec):
    cfg = cr.channel_config(d15_spec)
    base = cr.config_digest(cfg, d15_spec)
    assert cr.config_digest(cfg.replace_entries({3: 15}), d15_spec) != base
    hundred = cr.build_sequential_cnn(15, [16, 32, 64], num_classes=100)
    assert cr.config_digest(cfg, hundred) != base
    assert len(base) == 64 and set(base) <= set("0123456789abcdef")


def test_distortion():
    assert cr.distortion(0.9124, 0.9031) == pytest.approx(0.0093)
    assert cr.distortion(0.9124, 0.9046) == pytest.approx(0.0078)
    assert cr.distortion(0.5, 0.7) == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        cr.distortion(1.2, 0.5)


# -- surrogate ---------------------------------------------------------------


def test_surrogate_nominal_and_single_block_drop(d15_spec, d15_partition):
    cfg = cr.channel_config(d15_spec)
    assert cr.surrogate_accuracy(cfg, d15_partition) == pytest.approx(0.91)
    # Halving the deepest block: gap 0.05 below its 0.55 frontier, weight 4.
    halved = cfg.replace_entries({i: 32 for i in range(11, 16)})
    assert cr.surrogate_accuracy(halved, d15_partition) == pytest.approx(0.90)


def test_surrogate_reduced_config_value(d15_spec, d15_partition):
    cfg = cr.channel_config(d15_spec)
    reduced = cfg.replace_entries({**{i: 15 for i in range(1, 6)},
                                   **{i: 27 for i in range(6, 11)},
                                   **{i: 33 for i in range(11, 16)}})
    assert cr.surrogate_accuracy(reduced, d15_partition) == pytest.approx(0.9044921875)


def test_surrogate_clamps(d15_spec, d15_partition):
    cfg = cr.channel_config(d15_spec)
    params = cr.SurrogateParams(weights=(4000.0, 4000.0, 4000.0))
    floor = cr.apply_alpha_scaling(cfg, 0.5)
    assert cr.surrogate_accuracy(floor, d15_partition, params) == 0.0
    # Ratios above 1 earn no bonus.
    widened = cfg.replace_entries({11: 128})
    assert cr.surrogate_accuracy(widened, d15_partition) == pytest.approx(0.91)


def test_surrogate_monotone_in_width(d15_spec, d15_partition):
    cfg = cr.channel_config(d15_spec)
    last = None
    for w in range(8, 17):
        acc = cr.surrogate_accuracy(cfg.replace_entries({i: w for i in range(1, 6)}),
                                    d15_partition)
        if last is not None:
            assert acc >= last
        last = acc


def test_surrogate_params_resolved_profiles():
    p = cr.SurrogateParams()
    assert p.resolved(3) == ((0.95, 0.85, 0.55), (4.0, 4.0, 4.0))
    assert p.resolved(1) == ((0.55,), (4.0,))
    fronts, weights = p.resolved(5)
    assert fronts == pytest.approx((0.95, 0.90, 0.85, 0.70, 0.55))
    assert weights == pytest.approx((4.0,) * 5)


def test_surrogate_params_validation():
    with pytest.raises(ValueError):
        cr.SurrogateParams(a_max=0.0)
    with pytest.raises(ValueError):
        cr.SurrogateParams(frontiers=(0.9,), weights=(1.0, 2.0))
    with pytest.raises(ValueError):
        cr.SurrogateParams(frontiers=(1.2,), weights=(1.0,))
    with pytest.raises(ValueError):
        cr.SurrogateParams(weights=(-1.0, 4.0, 4.0))


def test_surrogate_oracle_is_deterministic(d15_spec):
    oracle = cr.SurrogateOracle(d15_spec)
    cfg = cr.channel_config(d15_spec)
    a = oracle.evaluate(cfg, cr.SEARCH_BUDGET)
    b = oracle.evaluate(cfg, cr.SEARCH_BUDGET)
    assert a == b
    assert a.status == "ok" and a.wall_seconds == 0.0
    assert a.config_digest == cr.config_digest(cfg, d15_spec)


# -- ledger ------------------------------------------------------------------


def test_ledger_round_trip(tmp_path):
    path = tmp_path / "ledger.jsonl"
    ledger = EvaluationLedger(path)
    first = _record(digest="a" * 64, top1=0.8)
    second = _record(digest="b" * 64, top1=0.9)
    ledger.append(first)
    ledger.append(second)

    reloaded = EvaluationLedger(path)
    assert len(reloaded) == 2
    assert reloaded.records() == [first, second]
    assert reloaded.lookup("a" * 64) == first
    assert reloaded.lookup("missing") is None


def test_ledger_newest_wins(tmp_path):
    ledger = EvaluationLedger(tmp_path / "l.jsonl")
    ledger.append(_record(digest="a" * 64, top1=0.5))
    ledger.append(_record(digest="a" * 64, top1=0.7))
    assert ledger.lookup("a" * 64).top1 == 0.7
    assert EvaluationLedger(tmp_path / "l.jsonl").lookup("a" * 64).top1 == 0.7


def test_ledger_skips_corrupt_lines(tmp_path, caplog):
    path = tmp_path / "l.jsonl"
    good = _record(digest="a" * 64, top1=0.6)
    lines = [json.dumps(good.to_dict()), "{broken", '{"status": "nope"}',
             "", json.dumps(_record(digest="b" * 64, top1=0.7).to_dict())]
    path.write_text("\n".join(lines) + "\n")
    with caplog.at_level("WARNING", logger="chanreduce.oracle"):
        ledger = EvaluationLedger(path)
    assert len(ledger) == 2
    assert ledger.lookup("a" * 64) == good
    assert sum("corrupt ledger line" in r.message for r in caplog.records) == 2


def test_ledger_threaded_appends(tmp_path):
    ledger = EvaluationLedger(tmp_path / "l.jsonl")

    def worker(tag):
        for i in range(25):
            ledger.append(_record(digest=f"{tag}{i:02d}".ljust(64, "0"), top1=0.5))

    threads = [threading.Thread(target=worker, args=(t,)) for t in "abcd"]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(EvaluationLedger(tmp_path / "l.jsonl")) == 100


# -- replay and recording ----------------------------------------------------


def test_replay_returns_records_verbatim(tmp_path, d15_spec):
    cfg = cr.channel_config(d15_spec)
    stored = EvaluationRecord(config_digest=cr.config_digest(cfg, d15_spec),
                              budget=cr.FINAL_BUDGET, top1=0.77, top5=0.93,
                              wall_seconds=123.0, status="ok")
    ledger = EvaluationLedger(tmp_path / "l.jsonl")
    ledger.append(stored)
    replay = cr.ReplayOracle(ledger, d15_spec)
    # The stored record comes back untouched.
    assert replay.evaluate(cfg, cr.FINAL_BUDGET) == stored
    # A different config, or the same config under a different budget, was
    # never trained; replay must say so rather than improvise.
    with pytest.raises(cr.MissingEvaluationError):
        replay.evaluate(cfg.replace_entries({1: 4}), cr.FINAL_BUDGET)
    with pytest.raises(cr.MissingEvaluationError):
        replay.evaluate(cfg, cr.SEARCH_BUDGET)


def test_recording_oracle_appends_every_call(tmp_path, d15_spec):
    ledger = EvaluationLedger(tmp_path / "l.jsonl")
    inner = cr.SurrogateOracle(d15_spec)
    oracle = cr.RecordingOracle(inner, ledger)
    cfg = cr.channel_config(d15_spec)
    oracle.evaluate(cfg, cr.SEARCH_BUDGET)
    oracle.evaluate(cfg, cr.SEARCH_BUDGET)
    assert len(ledger) == 2
    assert oracle.parallel_slots == 1
    oracle.close()
