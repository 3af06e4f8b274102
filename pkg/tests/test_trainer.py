"""External trainer protocol: request shape, reply handling, failure modes."""

from __future__ import annotations

import json
import sys
import textwrap

import pytest

import chanreduce as cr
from chanreduce.trainer import ExternalTrainerOracle, build_request

REQUEST_KEYS = {"run_id", "channels", "macroblock_starts", "dataset", "num_classes",
                "epochs", "lr_initial", "lr_milestones", "lr_divisor", "momentum",
                "weight_decay", "batch_size", "seed"}


def _script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return path


def _echo_trainer(tmp_path, capture=None):
    """Pipe-mode stub: replies ok with a width-derived top1; optionally logs
    every request line to ``capture``."""
    capture_line = ("    open(" + repr(str(capture)) + ", 'a').write(line)\n"
                    if capture is not None else "")
    body = ("import json, sys\n"
            "for line in sys.stdin:\n"
            + capture_line +
            "    req = json.loads(line)\n"
            "    top1 = (sum(req['channels']) % 997) / 1000\n"
            "    print(json.dumps({'run_id': req['run_id'], 'status': 'ok',\n"
            "                      'top1': top1, 'top5': min(1.0, top1 + 0.05),\n"
            "                      'wall_seconds': 12.5}), flush=True)\n")
    return _script(tmp_path, "echo_trainer.py", body)


@pytest.fixture
def d15_config(d15_spec):
    return cr.channel_config(d15_spec)


def test_build_request_fields(d15_spec, d15_config):
    req = build_request("abc-0001", d15_config, d15_spec, cr.SEARCH_BUDGET)
    assert set(req) == REQUEST_KEYS
    assert req["run_id"] == "abc-0001"
    assert req["channels"] == [3, 16, 16, 16, 16, 16, 32, 32, 32, 32, 32,
                               64, 64, 64, 64, 64]
    assert req["macroblock_starts"] == [1, 6, 11]
    assert req["dataset"] == "cifar10"
    assert req["num_classes"] == 10
    assert req["epochs"] == 20
    assert req["lr_milestones"] == [8, 16]
    assert (req["lr_initial"], req["lr_divisor"]) == (0.1, 10.0)
    assert (req["momentum"], req["weight_decay"]) == (0.9, 1e-4)
    assert req["batch_size"] == 128
    assert req["seed"] == 0


def test_pipe_round_trip(tmp_path, d15_spec, d15_config):
    capture = tmp_path / "requests.log"
    script = _echo_trainer(tmp_path, capture)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   timeout=30.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
        rec2 = oracle.evaluate(d15_config, cr.FINAL_BUDGET)
    finally:
        oracle.close()

    expected = (sum(d15_config.channels) % 997) / 1000
    assert rec.ok and rec.top1 == expected
    assert rec.top5 == pytest.approx(expected + 0.05)
    assert rec.wall_seconds == 12.5
    assert rec.config_digest == cr.config_digest(d15_config, d15_spec)

    sent = [json.loads(l) for l in capture.read_text().splitlines()]
    assert len(sent) == 2
    assert sent[0]["run_id"].endswith("-0001") and sent[1]["run_id"].endswith("-0002")
    assert sent[0]["run_id"][:12] == rec.config_digest[:12]
    assert sent[0]["epochs"] == 20 and sent[1]["epochs"] == 90
    assert set(sent[0]) == REQUEST_KEYS
    assert rec2.ok


def test_pipe_skips_stale_reply(tmp_path, d15_spec, d15_config):
    script = _script(tmp_path, "stale.py", """\
        import json, sys
        for line in sys.stdin:
            req = json.loads(line)
            print(json.dumps({"run_id": "stale-0000", "status": "ok",
                              "top1": 0.1, "top5": 0.2, "wall_seconds": 1.0}), flush=True)
            print(json.dumps({"run_id": req["run_id"], "status": "ok",
                              "top1": 0.8, "top5": 0.9, "wall_seconds": 1.0}), flush=True)
        """)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   timeout=30.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.ok and rec.top1 == 0.8


def test_pipe_garbage_reply_fails(tmp_path, d15_spec, d15_config):
    script = _script(tmp_path, "garbage.py", """\
        import sys
        for line in sys.stdin:
            print("}{ not json", flush=True)
        """)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   timeout=30.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.status == cr.STATUS_FAILED
    assert not rec.ok and rec.top1 is None
    assert "unparseable trainer reply" in rec.note


@pytest.mark.parametrize("reply,expect", [
    ({"status": "weird", "top1": 0.5}, "unknown trainer status"),
    ({"status": "ok", "top1": 0.9, "top5": 0.5}, "bad accuracy fields"),
    ({"status": "ok"}, "bad accuracy fields"),
])
def test_pipe_bad_replies_fail(tmp_path, d15_spec, d15_config, reply, expect):
    script = _script(tmp_path, "bad.py", f"""\
        import json, sys
        for line in sys.stdin:
            req = json.loads(line)
            out = dict({reply!r})
            out["run_id"] = req["run_id"]
            out.setdefault("wall_seconds", 1.0)
            print(json.dumps(out), flush=True)
        """)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   timeout=30.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.status == cr.STATUS_FAILED
    assert expect in rec.note


def test_pipe_timeout(tmp_path, d15_spec, d15_config):
    script = _script(tmp_path, "sleeper.py", """\
        import sys, time
        sys.stdin.readline()
        time.sleep(30)
        """)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   timeout=0.5)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.status == cr.STATUS_TIMEOUT
    assert "no trainer reply within" in rec.note


def test_pipe_worker_eof(tmp_path, d15_spec, d15_config):
    script = _script(tmp_path, "exiter.py", """\
        import sys
        sys.exit(0)
        """)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   timeout=2.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.status == cr.STATUS_TIMEOUT


def test_unreachable_command(d15_spec, d15_config):
    oracle = ExternalTrainerOracle("/nonexistent/trainer-binary", d15_spec,
                                   timeout=2.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.status == cr.STATUS_TIMEOUT
    assert "trainer unreachable" in rec.note


def test_pipe_recovers_after_kill(tmp_path, d15_spec, d15_config):
    # A garbage reply kills the worker; the next call gets a fresh one.
    flag = tmp_path / "first_call_done"
    script = _script(tmp_path, "flaky.py", f"""\
        import json, os, sys
        flag = {str(flag)!r}
        for line in sys.stdin:
            req = json.loads(line)
            if not os.path.exists(flag):
                open(flag, "w").close()
                print("garbage", flush=True)
            else:
                print(json.dumps({{"run_id": req["run_id"], "status": "ok",
                                   "top1": 0.6, "top5": 0.7,
                                   "wall_seconds": 2.0}}), flush=True)
        """)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   timeout=30.0)
    try:
        first = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
        second = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert first.status == cr.STATUS_FAILED
    assert second.ok and second.top1 == 0.6


def test_parallel_pipe_workers(tmp_path, d15_spec, d15_config):
    script = _echo_trainer(tmp_path)
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   parallelism=2, timeout=30.0)
    assert oracle.parallel_slots == 2
    try:
        records = [oracle.evaluate(d15_config, cr.SEARCH_BUDGET) for _ in range(4)]
    finally:
        oracle.close()
    assert all(r.ok for r in records)


def test_files_round_trip(tmp_path, d15_spec, d15_config):
    script = _script(tmp_path, "file_trainer.py", """\
        import json, sys
        req = json.load(open(sys.argv[1]))
        json.dump({"run_id": req["run_id"], "status": "ok", "top1": 0.71,
                   "top5": 0.88, "wall_seconds": 3.0}, open(sys.argv[2], "w"))
        """)
    exchange = tmp_path / "exchange"
    exchange.mkdir()
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   protocol="files", exchange_dir=exchange,
                                   timeout=30.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.ok and rec.top1 == 0.71
    assert list(exchange.glob("*.request.json"))      # request left on disk


def test_files_missing_response(tmp_path, d15_spec, d15_config):
    script = _script(tmp_path, "silent.py", "import sys\n")
    exchange = tmp_path / "exchange"
    exchange.mkdir()
    oracle = ExternalTrainerOracle([sys.executable, str(script)], d15_spec,
                                   protocol="files", exchange_dir=exchange,
                                   timeout=30.0)
    try:
        rec = oracle.evaluate(d15_config, cr.SEARCH_BUDGET)
    finally:
        oracle.close()
    assert rec.status == cr.STATUS_FAILED
    assert "trainer wrote no response file" in rec.note


def test_constructor_validation(d15_spec):
    with pytest.raises(ValueError):
        ExternalTrainerOracle("x", d15_spec, parallelism=0)
    with pytest.raises(ValueError):
        ExternalTrainerOracle("x", d15_spec, protocol="smoke-signals")
    with pytest.raises(ValueError):
        ExternalTrainerOracle("x", d15_spec, protocol="files")   # no exchange_dir
