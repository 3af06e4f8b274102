"""Run configuration: a flat, sectioned text file driving every CLI command.

Sections: [model], [oracle], [search], [budget], [output]. Unknown keys warn but do
not fail; genuinely invalid values raise :class:`ConfigError`. The resolved
configuration (every effective value made explicit) is written into the run
directory so a run can be replayed from its own artifacts.
"""

from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .arch import ModelSpec, build_sequential_cnn
from .oracle import SurrogateParams, TrainingBudget
from .presets import PRESETS, load_descriptor
from .search import BetaMode

log = logging.getLogger(__name__)

RUN_ROOT_ENV = "CHANREDUCE_RUN_ROOT"

_KNOWN_KEYS = {
    "model": {"family", "depth", "block_widths", "input_channels", "num_classes",
              "dataset", "resolution", "width_mult", "descriptor", "name"},
    "oracle": {"kind", "a_max", "exponent", "frontiers", "weights", "ledger",
               "trainer_cmd", "parallelism", "timeout_seconds", "protocol",
               "exchange_dir"},
    "search": {"delta", "scope", "beta_return_mode", "seed", "metric"},
    "budget": {"search_epochs", "search_milestones", "final_epochs", "final_milestones",
               "lr_initial", "lr_divisor", "momentum", "weight_decay", "batch_size"},
    "output": {"run_dir"},
    "run": {"command"},
}


class ConfigError(Exception):
    """A configuration problem the user must fix (CLI exit code 2)."""


@dataclass
class ModelConfig:
    family: str = "sequential"
    depth: int = 15
    block_widths: tuple[int, ...] = (16, 32, 64)
    input_channels: int = 3
    num_classes: int | None = None   # family default when unset
    dataset: str = "cifar10"
    resolution: int = 32
    width_mult: float = 1.0
    descriptor: str | None = None
    name: str | None = None


@dataclass
class OracleConfig:
    kind: str = "surrogate"
    a_max: float = 0.91
    exponent: float = 2.0
    frontiers: tuple[float, ...] = (0.95, 0.85, 0.55)
    weights: tuple[float, ...] = (4.0, 4.0, 4.0)
    ledger: str | None = None
    trainer_cmd: str | None = None
    parallelism: int = 1
    timeout_seconds: float = 3600.0
    protocol: str = "pipe"
    exchange_dir: str | None = None


@dataclass
class SearchConfig:
    delta: float = 0.01
    scope: int | None = None        # None: all macroblocks
    beta_return_mode: str = "feasible_bound"
    seed: int = 0
    metric: str = "top1"


@dataclass
class BudgetConfig:
    search_epochs: int = 20
    search_milestones: tuple[int, ...] = (8, 16)
    final_epochs: int = 90
    final_milestones: tuple[int, ...] = (30, 60)
    lr_initial: float = 0.1
    lr_divisor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    run_dir: str | None = None
    command: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    # -- parsing ------------------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls._from_parser(parser, base_dir=path.resolve().parent)

    @classmethod
    def _from_parser(cls, parser: configparser.ConfigParser, base_dir: Path) -> "RunConfig":
        for section in parser.sections():
            if section not in _KNOWN_KEYS:
                log.warning("ignoring unknown config section [%s]", section)
                continue
            for key in parser[section]:
                if key not in _KNOWN_KEYS[section]:
                    log.warning("ignoring unknown config key %s.%s", section, key)

        cfg = cls(base_dir=base_dir)
        get = _Getter(parser)
        m = cfg.model
        m.family = get.str("model", "family", m.family).lower()
        m.depth = get.int("model", "depth", m.depth)
        m.block_widths = get.int_list("model", "block_widths", m.block_widths)
        m.input_channels = get.int("model", "input_channels", m.input_channels)
        m.num_classes = get.int("model", "num_classes", m.num_classes)
        m.dataset = get.str("model", "dataset", m.dataset)
        m.resolution = get.int("model", "resolution", m.resolution)
        m.width_mult = get.float("model", "width_mult", m.width_mult)
        m.descriptor = get.str("model", "descriptor", m.descriptor)
        m.name = get.str("model", "name", m.name)

        o = cfg.oracle
        o.kind = get.str("oracle", "kind", o.kind).lower()
        if o.kind not in ("surrogate", "replay", "external"):
            raise ConfigError(f"oracle kind must be surrogate|replay|external, got {o.kind!r}")
        o.a_max = get.float("oracle", "a_max", o.a_max)
        o.exponent = get.float("oracle", "exponent", o.exponent)
        o.frontiers = get.float_list("oracle", "frontiers", o.frontiers)
        o.weights = get.float_list("oracle", "weights", o.weights)
        o.ledger = get.str("oracle", "ledger", o.ledger)
        o.trainer_cmd = get.str("oracle", "trainer_cmd", o.trainer_cmd)
        o.parallelism = get.int("oracle", "parallelism", o.parallelism)
        o.timeout_seconds = get.float("oracle", "timeout_seconds", o.timeout_seconds)
        o.protocol = get.str("oracle", "protocol", o.protocol).lower()
        o.exchange_dir = get.str("oracle", "exchange_dir", o.exchange_dir)

        s = cfg.search
        s.delta = get.float("search", "delta", s.delta)
        if not 0.0 <= s.delta <= 1.0:
            raise ConfigError(f"search.delta must be within [0, 1], got {s.delta}")
        scope = get.str("search", "scope", None)
        if scope is not None:
            try:
                s.scope = int(scope)
            except ValueError:
                raise ConfigError(f"search.scope must be an integer, got {scope!r}")
            if s.scope < 1:
                raise ConfigError(f"search.scope must be >= 1, got {s.scope}")
        s.beta_return_mode = get.str("search", "beta_return_mode", s.beta_return_mode).lower()
        if s.beta_return_mode not in ("feasible_bound", "last_midpoint"):
            raise ConfigError("search.beta_return_mode must be feasible_bound|last_midpoint, "
                              f"got {s.beta_return_mode!r}")
        s.seed = get.int("search", "seed", s.seed)
        s.metric = get.str("search", "metric", s.metric).lower()
        if s.metric not in ("top1", "top5"):
            raise ConfigError(f"search.metric must be top1|top5, got {s.metric!r}")

        b = cfg.budget
        b.search_epochs = get.int("budget", "search_epochs", b.search_epochs)
        b.search_milestones = get.int_list("budget", "search_milestones", b.search_milestones)
        b.final_epochs = get.int("budget", "final_epochs", b.final_epochs)
        b.final_milestones = get.int_list("budget", "final_milestones", b.final_milestones)
        b.lr_initial = get.float("budget", "lr_initial", b.lr_initial)
        b.lr_divisor = get.float("budget", "lr_divisor", b.lr_divisor)
        b.momentum = get.float("budget", "momentum", b.momentum)
        b.weight_decay = get.float("budget", "weight_decay", b.weight_decay)
        b.batch_size = get.int("budget", "batch_size", b.batch_size)

        cfg.run_dir = get.str("output", "run_dir", cfg.run_dir)
        cfg.command = get.str("run", "command", cfg.command)
        cfg._validate(base_dir)
        return cfg

    def _validate(self, base_dir: Path) -> None:
        if self.model.family not in ("sequential", "descriptor", *PRESETS):
            raise ConfigError(f"unknown model family {self.model.family!r}")
        if self.model.family == "descriptor":
            if not self.model.descriptor:
                raise ConfigError("model.family=descriptor needs model.descriptor=<path>")
            if not self._resolve(self.model.descriptor).exists():
                raise ConfigError(f"model descriptor {self.model.descriptor} does not exist")
        if self.oracle.kind == "external" and not self.oracle.trainer_cmd:
            raise ConfigError("oracle.kind=external needs oracle.trainer_cmd")
        if self.oracle.kind == "replay":
            if not self.oracle.ledger:
                raise ConfigError("oracle.kind=replay needs oracle.ledger=<path>")
            if not self._resolve(self.oracle.ledger).exists():
                raise ConfigError(f"replay ledger {self.oracle.ledger} does not exist")

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    # -- derived objects ----------------------------------------------------

    def build_spec(self) -> ModelSpec:
        m = self.model
        try:
            if m.family == "sequential":
                return build_sequential_cnn(m.depth, list(m.block_widths), m.input_channels,
                                            self.effective_classes(), dataset=m.dataset,
                                            resolution=m.resolution, name=m.name)
            if m.family == "descriptor":
                return load_descriptor(self._resolve(m.descriptor))
            if m.family == "mobilenet":
                return PRESETS[m.family](m.width_mult, self.effective_classes())
            return PRESETS[m.family](self.effective_classes())
        except ValueError as exc:
            raise ConfigError(f"cannot build model: {exc}") from exc

    def effective_classes(self) -> int:
        """Class count actually used: explicit setting, else 10 for the small
        sequential models and 1000 for the presets."""
        if self.model.num_classes is not None:
            return self.model.num_classes
        return 10 if self.model.family == "sequential" else 1000

    def surrogate_params(self) -> SurrogateParams:
        o = self.oracle
        try:
            return SurrogateParams(a_max=o.a_max, exponent=o.exponent,
                                   frontiers=o.frontiers, weights=o.weights)
        except ValueError as exc:
            raise ConfigError(f"bad surrogate parameters: {exc}") from exc

    def _budget(self, epochs: int, milestones: tuple[int, ...]) -> TrainingBudget:
        b = self.budget
        try:
            return TrainingBudget(epochs=epochs, lr_initial=b.lr_initial,
                                  lr_milestones=milestones, lr_divisor=b.lr_divisor,
                                  momentum=b.momentum, weight_decay=b.weight_decay,
                                  batch_size=b.batch_size, seed=self.search.seed)
        except ValueError as exc:
            raise ConfigError(f"bad training budget: {exc}") from exc

    def search_budget(self) -> TrainingBudget:
        return self._budget(self.budget.search_epochs, self.budget.search_milestones)

    def final_budget(self) -> TrainingBudget:
        return self._budget(self.budget.final_epochs, self.budget.final_milestones)

    def beta_mode(self) -> BetaMode:
        return BetaMode(self.search.beta_return_mode)

    def resolve_run_dir(self, override=None, config_path=None) -> Path:
        if override:
            return Path(override)
        if self.run_dir:
            return self._resolve(self.run_dir)
        root = os.environ.get(RUN_ROOT_ENV, "runs")
        stem = Path(config_path).stem if config_path else "run"
        return Path(root) / stem

    # -- resolved dump ------------------------------------------------------

    def resolved_text(self) -> str:
        """Every effective value, written back in config syntax."""
        parser = configparser.ConfigParser()
        m, o, s, b = self.model, self.oracle, self.search, self.budget
        parser["model"] = {"family": m.family, "depth": str(m.depth),
                           "block_widths": _fmt_list(m.block_widths),
                           "input_channels": str(m.input_channels),
                           "dataset": m.dataset,
                           "resolution": str(m.resolution),
                           "width_mult": repr(m.width_mult)}
        if m.family != "descriptor":
            parser["model"]["num_classes"] = str(self.effective_classes())
        if m.descriptor:
            parser["model"]["descriptor"] = str(self._resolve(m.descriptor))
        if m.name:
            parser["model"]["name"] = m.name
        parser["oracle"] = {"kind": o.kind, "a_max": repr(o.a_max),
                            "exponent": repr(o.exponent),
                            "frontiers": _fmt_list(o.frontiers),
                            "weights": _fmt_list(o.weights),
                            "parallelism": str(o.parallelism),
                            "timeout_seconds": repr(o.timeout_seconds),
                            "protocol": o.protocol}
        if o.ledger:
            parser["oracle"]["ledger"] = str(self._resolve(o.ledger))
        if o.trainer_cmd:
            parser["oracle"]["trainer_cmd"] = o.trainer_cmd
        if o.exchange_dir:
            parser["oracle"]["exchange_dir"] = str(self._resolve(o.exchange_dir))
        parser["search"] = {"delta": repr(s.delta),
                            "beta_return_mode": s.beta_return_mode,
                            "seed": str(s.seed), "metric": s.metric}
        if s.scope is not None:
            parser["search"]["scope"] = str(s.scope)
        parser["budget"] = {"search_epochs": str(b.search_epochs),
                            "search_milestones": _fmt_list(b.search_milestones),
                            "final_epochs": str(b.final_epochs),
                            "final_milestones": _fmt_list(b.final_milestones),
                            "lr_initial": repr(b.lr_initial),
                            "lr_divisor": repr(b.lr_divisor),
                            "momentum": repr(b.momentum),
                            "weight_decay": repr(b.weight_decay),
                            "batch_size": str(b.batch_size)}
        if self.run_dir:
            parser["output"] = {"run_dir": self.run_dir}
        if self.command:
            parser["run"] = {"command": self.command}
        import io
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _fmt_list(values) -> str:
    return " ".join(repr(v) if isinstance(v, float) else str(v) for v in values)


class _Getter:
    """Typed configparser access with ConfigError reporting."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser

    def str(self, section, key, default):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        return default

    def int(self, section, key, default):
        raw = self.str(section, key, None)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}")

    def float(self, section, key, default):
        raw = self.str(section, key, None)
        if raw is None:
            return default
        try:
            return float(Fraction(raw)) if "/" in raw else float(raw)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}")

    def _split(self, raw: str) -> list[str]:
        return raw.replace(",", " ").split()

    def int_list(self, section, key, default):
        raw = self.str(section, key, None)
        if raw is None:
            return tuple(default)
        try:
            return tuple(int(x) for x in self._split(raw))
        except ValueError:
            raise ConfigError(f"{section}.{key} must be a list of integers, got {raw!r}")

    def float_list(self, section, key, default):
        raw = self.str(section, key, None)
        if raw is None:
            return tuple(default)
        try:
            return tuple(float(x) for x in self._split(raw))
        except ValueError:
            raise ConfigError(f"{section}.{key} must be a list of numbers, got {raw!r}")
