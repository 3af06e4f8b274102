"""Bridge to an external training worker over a line-delimited JSON protocol.

One request per line on the worker's stdin, one reply per line on its stdout
(``pipe`` mode), or a request file handed to a fresh worker invocation together
with the response path to write (``files`` mode).

Request fields:
    run_id, channels, macroblock_starts, dataset, num_classes, epochs, lr_initial,
    lr_milestones, lr_divisor, momentum, weight_decay, batch_size, seed
Response fields:
    run_id, status, top1, top5, wall_seconds

Unknown fields in a reply are ignored; the run_id must echo the request. A reply
that never arrives (dead or unreachable worker, deadline passed) yields a record
with status ``timeout``; a reply that arrives but cannot be parsed yields status
``failed``. Neither aborts a caller: failures surface as infeasible probes.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import select
import shlex
import subprocess
import threading
import time
from pathlib import Path

from .arch import ChannelConfig, ModelSpec
from .oracle import (STATUS_FAILED, STATUS_OK, STATUS_TIMEOUT, EvaluationRecord,
                     TrainingBudget, config_digest)

log = logging.getLogger(__name__)

PROTOCOL_PIPE = "pipe"
PROTOCOL_FILES = "files"


def build_request(run_id: str, config: ChannelConfig, spec: ModelSpec,
                  budget: TrainingBudget) -> dict:
    """Assemble one protocol request. Field names are part of the wire format."""
    return {
        "run_id": run_id,
        "channels": list(config.channels),
        "macroblock_starts": list(config.macroblock_starts),
        "dataset": spec.meta.dataset,
        "num_classes": spec.meta.num_classes,
        "epochs": budget.epochs,
        "lr_initial": budget.lr_initial,
        "lr_milestones": list(budget.lr_milestones),
        "lr_divisor": budget.lr_divisor,
        "momentum": budget.momentum,
        "weight_decay": budget.weight_decay,
        "batch_size": budget.batch_size,
        "seed": budget.seed,
    }


class _ReplyError(Exception):
    def __init__(self, status: str, note: str):
        self.status = status
        self.note = note


def _parse_reply(line: str, run_id: str) -> dict | None:
    """Parsed reply for our run_id, None for a stale (different run_id) line."""
    try:
        reply = json.loads(line)
    except json.JSONDecodeError as exc:
        raise _ReplyError(STATUS_FAILED, f"unparseable trainer reply: {exc}")
    if not isinstance(reply, dict):
        raise _ReplyError(STATUS_FAILED, "trainer reply is not an object")
    if reply.get("run_id") != run_id:
        return None
    return reply


def _record_from_reply(reply: dict, digest: str, budget: TrainingBudget,
                       elapsed: float) -> EvaluationRecord:
    status = reply.get("status")
    if status not in (STATUS_OK, STATUS_FAILED, STATUS_TIMEOUT):
        return EvaluationRecord(digest, budget, None, None, elapsed, STATUS_FAILED,
                                note=f"unknown trainer status {status!r}")
    top1, top5 = reply.get("top1"), reply.get("top5")
    wall = reply.get("wall_seconds")
    wall = float(wall) if isinstance(wall, (int, float)) else elapsed
    if status == STATUS_OK:
        try:
            return EvaluationRecord(digest, budget, float(top1),
                                    None if top5 is None else float(top5),
                                    wall, STATUS_OK)
        except (TypeError, ValueError) as exc:
            return EvaluationRecord(digest, budget, None, None, wall, STATUS_FAILED,
                                    note=f"bad accuracy fields in trainer reply: {exc}")
    return EvaluationRecord(digest, budget, None, None, wall, status,
                            note=reply.get("note") or f"trainer reported {status}")


class _PipeWorker:
    """One persistent child process speaking the line protocol."""

    def __init__(self, argv: list[str]):
        self.argv = argv
        self.proc: subprocess.Popen | None = None
        self._buffer = b""

    def ensure_running(self) -> None:
        if self.proc is None or self.proc.poll() is not None:
            self._buffer = b""
            self.proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE,
                                         stdout=subprocess.PIPE)

    def kill(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()
        self.proc = None
        self._buffer = b""

    def send(self, request: dict) -> None:
        line = json.dumps(request, sort_keys=True) + "\n"
        assert self.proc is not None and self.proc.stdin is not None
        self.proc.stdin.write(line.encode("utf-8"))
        self.proc.stdin.flush()

    def read_line(self, deadline: float) -> str | None:
        """Next stdout line, or None once the deadline passes or the pipe closes."""
        assert self.proc is not None and self.proc.stdout is not None
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            ready, _, _ = select.select([fd], [], [], min(remaining, 0.5))
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                return None  # EOF: worker died
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8", errors="replace")


class ExternalTrainerOracle:
    """Dispatch evaluations to external training workers.

    ``parallelism`` pipe workers are kept alive and handed out one request at a
    time; sweeps may call :meth:`evaluate` from that many threads concurrently.
    """

    def __init__(self, command: str | list[str], spec: ModelSpec, *,
                 parallelism: int = 1, timeout: float = 3600.0,
                 protocol: str = PROTOCOL_PIPE, exchange_dir=None):
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        if protocol not in (PROTOCOL_PIPE, PROTOCOL_FILES):
            raise ValueError(f"unknown trainer protocol {protocol!r}")
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.spec = spec
        self.timeout = timeout
        self.protocol = protocol
        self.parallel_slots = parallelism
        self.exchange_dir = Path(exchange_dir) if exchange_dir else None
        if protocol == PROTOCOL_FILES and self.exchange_dir is None:
            raise ValueError("files protocol needs an exchange directory")
        self._counter = 0
        self._counter_lock = threading.Lock()
        self._workers: queue.Queue[_PipeWorker] = queue.Queue()
        if protocol == PROTOCOL_PIPE:
            for _ in range(parallelism):
                self._workers.put(_PipeWorker(self.argv))

    def _next_run_id(self, digest: str) -> str:
        with self._counter_lock:
            self._counter += 1
            return f"{digest[:12]}-{self._counter:04d}"

    def evaluate(self, config: ChannelConfig, budget: TrainingBudget) -> EvaluationRecord:
        digest = config_digest(config, self.spec)
        run_id = self._next_run_id(digest)
        request = build_request(run_id, config, self.spec, budget)
        start = time.monotonic()
        try:
            if self.protocol == PROTOCOL_PIPE:
                record = self._evaluate_pipe(request, digest, budget)
            else:
                record = self._evaluate_files(request, digest, budget)
        except _ReplyError as exc:
            log.warning("trainer evaluation %s: %s", run_id, exc.note)
            record = EvaluationRecord(digest, budget, None, None,
                                      time.monotonic() - start, exc.status, note=exc.note)
        return record

    def _evaluate_pipe(self, request: dict, digest: str, budget: TrainingBudget) -> EvaluationRecord:
        worker = self._workers.get()
        start = time.monotonic()
        deadline = start + self.timeout
        try:
            try:
                worker.ensure_running()
                worker.send(request)
            except (OSError, ValueError) as exc:
                worker.kill()
                raise _ReplyError(STATUS_TIMEOUT, f"trainer unreachable: {exc}")
            while True:
                line = worker.read_line(deadline)
                if line is None:
                    worker.kill()
                    raise _ReplyError(STATUS_TIMEOUT,
                                      f"no trainer reply within {self.timeout:g}s")
                try:
                    reply = _parse_reply(line, request["run_id"])
                except _ReplyError:
                    worker.kill()  # stream state unknown after garbage
                    raise
                if reply is None:
                    log.warning("ignoring stale trainer reply line %r", line[:80])
                    continue
                return _record_from_reply(reply, digest, budget, time.monotonic() - start)
        finally:
            self._workers.put(worker)

    def _evaluate_files(self, request: dict, digest: str, budget: TrainingBudget) -> EvaluationRecord:
        self.exchange_dir.mkdir(parents=True, exist_ok=True)
        run_id = request["run_id"]
        req_path = self.exchange_dir / f"{run_id}.request.json"
        resp_path = self.exchange_dir / f"{run_id}.response.json"
        tmp = req_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(request, sort_keys=True) + "\n", encoding="utf-8")
        tmp.rename(req_path)
        start = time.monotonic()
        try:
            proc = subprocess.run(self.argv + [str(req_path), str(resp_path)],
                                  timeout=self.timeout, capture_output=True)
        except subprocess.TimeoutExpired:
            raise _ReplyError(STATUS_TIMEOUT, f"trainer run exceeded {self.timeout:g}s")
        except OSError as exc:
            raise _ReplyError(STATUS_TIMEOUT, f"trainer unreachable: {exc}")
        elapsed = time.monotonic() - start
        if not resp_path.exists():
            raise _ReplyError(STATUS_FAILED,
                              f"trainer wrote no response file (exit code {proc.returncode})")
        for line in resp_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            reply = _parse_reply(line, run_id)
            if reply is not None:
                return _record_from_reply(reply, digest, budget, elapsed)
        raise _ReplyError(STATUS_FAILED, "no response line with matching run_id")

    def close(self) -> None:
        if self.protocol != PROTOCOL_PIPE:
            return
        while True:
            try:
                self._workers.get_nowait().kill()
            except queue.Empty:
                return
