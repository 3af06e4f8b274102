"""Accuracy oracles, training budgets, evaluation records, and the append-only ledger.

An oracle maps (channel config, training budget) to an :class:`EvaluationRecord`.
Three implementations are provided: a deterministic analytic surrogate for desk-scale
work, a replay oracle that answers from a previously written ledger, and (in
:mod:`chanreduce.trainer`) a bridge to an external training worker. Records are keyed
by a digest over the channel vector and the architecture skeleton, so identical
configurations always collide and metadata relabeling never does.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .arch import ChannelConfig, MacroblockPartition, ModelSpec, channel_config, partition_macroblocks, structural_key

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_TIMEOUT = "timeout"
_STATUSES = (STATUS_OK, STATUS_FAILED, STATUS_TIMEOUT)


@dataclass(frozen=True)
class TrainingBudget:
    """A fixed training recipe. The learning rate starts at ``lr_initial`` and is
    divided by ``lr_divisor`` at each milestone epoch."""

    epochs: int
    lr_initial: float = 0.1
    lr_milestones: tuple[int, ...] = ()
    lr_divisor: float = 10.0
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        last = 0
        for m in self.lr_milestones:
            if not 0 < m < self.epochs:
                raise ValueError(f"milestone {m} outside 1..{self.epochs - 1}")
            if m <= last:
                raise ValueError("milestones must be strictly increasing")
            last = m

    @classmethod
    def standard(cls, epochs: int, **kw) -> "TrainingBudget":
        """Milestones at 50% and 75% of the run, as in common CIFAR recipes."""
        return cls(epochs=epochs, lr_milestones=(epochs // 2, (3 * epochs) // 4), **kw)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "lr_initial": self.lr_initial,
                "lr_milestones": list(self.lr_milestones), "lr_divisor": self.lr_divisor,
                "optimizer": self.optimizer, "momentum": self.momentum,
                "weight_decay": self.weight_decay, "batch_size": self.batch_size,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingBudget":
        return cls(epochs=d["epochs"], lr_initial=d.get("lr_initial", 0.1),
                   lr_milestones=tuple(d.get("lr_milestones", ())),
                   lr_divisor=d.get("lr_divisor", 10.0),
                   optimizer=d.get("optimizer", "sgd"), momentum=d.get("momentum", 0.9),
                   weight_decay=d.get("weight_decay", 1e-4),
                   batch_size=d.get("batch_size", 128), seed=d.get("seed", 0))


# Default budgets: a short schedule for search probes, a long one for final runs.
SEARCH_BUDGET = TrainingBudget(epochs=20, lr_milestones=(8, 16))
FINAL_BUDGET = TrainingBudget(epochs=90, lr_milestones=(30, 60))


@dataclass(frozen=True)
class EvaluationRecord:
    """Outcome of one oracle call."""

    config_digest: str
    budget: TrainingBudget
    top1: float | None
    top5: float | None
    wall_seconds: float
    status: str
    note: str | None = None

    def __post_init__(self):
        if self.status not in _STATUSES:
            raise ValueError(f"status must be one of {_STATUSES}, got {self.status!r}")
        if self.status == STATUS_OK:
            if self.top1 is None:
                raise ValueError("ok records must carry a top1 accuracy")
        for v in (self.top1, self.top5):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy {v} outside [0, 1]")
        if self.top1 is not None and self.top5 is not None and self.top1 > self.top5:
            raise ValueError("top1 accuracy cannot exceed top5")

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def metric(self, name: str = "top1") -> float | None:
        if name == "top1":
            return self.top1
        if name == "top5":
            return self.top5
        raise ValueError(f"unknown metric {name!r}")

    def to_dict(self) -> dict:
        return {"config_digest": self.config_digest, "budget": self.budget.to_dict(),
                "top1": self.top1, "top5": self.top5, "wall_seconds": self.wall_seconds,
                "status": self.status, "note": self.note}

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationRecord":
        return cls(config_digest=d["config_digest"],
                   budget=TrainingBudget.from_dict(d["budget"]),
                   top1=d.get("top1"), top5=d.get("top5"),
                   wall_seconds=d.get("wall_seconds", 0.0),
                   status=d["status"], note=d.get("note"))


def config_digest(config: ChannelConfig, spec: ModelSpec) -> str:
    """Stable identity of a (channel vector, architecture skeleton) pair."""
    payload = {"arch": structural_key(spec),
               "channels": list(config.channels),
               "macroblock_starts": list(config.macroblock_starts)}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def distortion(baseline: float, candidate: float) -> float:
    """Accuracy drop of a candidate against the baseline; negative means a gain."""
    for v in (baseline, candidate):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracy {v} outside [0, 1]")
    return baseline - candidate


class MissingEvaluationError(LookupError):
    """Raised by the replay oracle when the ledger has no record for a digest."""


class Oracle(Protocol):
    def evaluate(self, config: ChannelConfig, budget: TrainingBudget) -> EvaluationRecord: ...


class EvaluationLedger:
    """Append-only JSON-lines store of evaluation records.

    Appends are atomic per record and serialized by a lock; lookups return the
    newest record for a digest. Corrupt lines are skipped with a warning so a
    damaged file never blocks replay.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._by_digest: dict[str, EvaluationRecord] = {}
        self._by_key: dict[tuple[str, str], EvaluationRecord] = {}
        self._records: list[EvaluationRecord] = []
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = EvaluationRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    log.warning("skipping corrupt ledger line %s:%d (%s)", self.path, lineno, exc)
                    continue
                self._index(record)

    @staticmethod
    def _budget_key(budget: TrainingBudget) -> str:
        return json.dumps(budget.to_dict(), sort_keys=True, separators=(",", ":"))

    def _index(self, record: EvaluationRecord) -> None:
        self._records.append(record)
        self._by_digest[record.config_digest] = record  # newest wins
        self._by_key[(record.config_digest, self._budget_key(record.budget))] = record

    def append(self, record: EvaluationRecord) -> None:
        line = json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":"))
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
            self._index(record)

    def lookup(self, digest: str, budget: TrainingBudget | None = None) -> EvaluationRecord | None:
        """Newest record for a digest; with ``budget`` the match is exact, since
        the same config evaluated under two budgets is two distinct experiments."""
        with self._lock:
            if budget is None:
                return self._by_digest.get(digest)
            return self._by_key.get((digest, self._budget_key(budget)))

    def records(self) -> list[EvaluationRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


@dataclass(frozen=True)
class SurrogateParams:
    """Parameters of the analytic accuracy surrogate.

    Accuracy is ``a_max`` minus one penalty term per macroblock:
    ``weight_b * max(0, frontier_b - ratio_b) ** exponent`` where ``ratio_b`` is the
    block's mean retained-width fraction. Frontiers decrease with depth: blocks
    close to the input tolerate little width reduction, late blocks tolerate a lot.
    """

    a_max: float = 0.91
    exponent: float = 2.0
    frontiers: tuple[float, ...] = (0.95, 0.85, 0.55)
    weights: tuple[float, ...] = (4.0, 4.0, 4.0)

    def __post_init__(self):
        if not 0 < self.a_max <= 1:
            raise ValueError(f"a_max must be in (0, 1], got {self.a_max}")
        if not self.frontiers or len(self.frontiers) != len(self.weights):
            raise ValueError("frontiers and weights must be non-empty and equally long")
        for f in self.frontiers:
            if not 0 < f <= 1:
                raise ValueError(f"frontier {f} outside (0, 1]")
        for w in self.weights:
            if w < 0:
                raise ValueError(f"weight {w} must be >= 0")

    def resolved(self, num_blocks: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Resize the profiles to ``num_blocks`` by piecewise-linear interpolation
        over normalized block position; a single block takes the deepest value."""
        if num_blocks < 1:
            raise ValueError("need at least one block")
        if num_blocks == len(self.frontiers):
            return self.frontiers, self.weights
        positions = ([1.0] if num_blocks == 1 else
                     [i / (num_blocks - 1) for i in range(num_blocks)])
        return (tuple(_interp(x, self.frontiers) for x in positions),
                tuple(_interp(x, self.weights) for x in positions))


def _interp(x: float, profile: tuple[float, ...]) -> float:
    if len(profile) == 1:
        return profile[0]
    span = len(profile) - 1
    pos = x * span
    lo = min(int(pos), span - 1)
    t = pos - lo
    return profile[lo] * (1 - t) + profile[lo + 1] * t


def surrogate_accuracy(config: ChannelConfig, partition: MacroblockPartition,
                       params: SurrogateParams = SurrogateParams()) -> float:
    """Evaluate the analytic surrogate for ``config`` against nominal block widths."""
    frontiers, weights = params.resolved(partition.num_blocks)
    penalty = 0.0
    for block, frontier, weight in zip(partition.blocks, frontiers, weights):
        start, stop = block.entry_range
        ratios = [min(1.0, config.channels[i] / nominal)
                  for i, nominal in zip(range(start, stop), block.widths)]
        ratio = sum(ratios) / len(ratios)
        penalty += weight * max(0.0, frontier - ratio) ** params.exponent
    return min(1.0, max(0.0, params.a_max - penalty))


class SurrogateOracle:
    """Deterministic analytic oracle; the budget only tags the record."""

    parallel_slots = 1

    def __init__(self, spec: ModelSpec, params: SurrogateParams = SurrogateParams()):
        self.spec = spec
        self.params = params
        self.partition = partition_macroblocks(spec)
        self.nominal = channel_config(spec)

    def evaluate(self, config: ChannelConfig, budget: TrainingBudget) -> EvaluationRecord:
        top1 = surrogate_accuracy(config, self.partition, self.params)
        return EvaluationRecord(config_digest=config_digest(config, self.spec),
                                budget=budget, top1=top1, top5=None,
                                wall_seconds=0.0, status=STATUS_OK)


class ReplayOracle:
    """Answers every evaluation from a ledger; issues no training work at all."""

    parallel_slots = 1

    def __init__(self, ledger: EvaluationLedger, spec: ModelSpec):
        self.ledger = ledger
        self.spec = spec

    def evaluate(self, config: ChannelConfig, budget: TrainingBudget) -> EvaluationRecord:
        digest = config_digest(config, self.spec)
        record = self.ledger.lookup(digest, budget)
        if record is None:
            raise MissingEvaluationError(
                f"missing evaluation for digest {digest} under the requested budget")
        return record  # stored record verbatim


class RecordingOracle:
    """Wrap any oracle so every evaluation is appended to a ledger."""

    def __init__(self, inner, ledger: EvaluationLedger):
        self.inner = inner
        self.ledger = ledger

    @property
    def parallel_slots(self) -> int:
        return getattr(self.inner, "parallel_slots", 1)

    def evaluate(self, config: ChannelConfig, budget: TrainingBudget) -> EvaluationRecord:
        record = self.inner.evaluate(config, budget)
        self.ledger.append(record)
        return record

    def close(self) -> None:
        close = getattr(self.inner, "close", None)
        if close:
            close()
