"""Architecture descriptors, channel vectors, macroblock partitioning, and width transforms.

A model is described layer by layer with explicit channel counts; no graph is ever
executed. Every convolution that produces a new feature stream owns one entry of the
channel vector ``[n0, n1, ..., nN]`` (entry 0 is the immutable input channel count).
Depthwise convolutions preserve their stream and therefore share the producing entry.
All width transforms are pure functions on :class:`ChannelConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import ClassVar, Sequence, Union

Rational = Union[int, float, Fraction]

# Float scale factors are snapped to a nearby exact rational before the ceiling is
# taken, so 0.7 * 100 rounds to 70 rather than ceil(70.00000000000001) = 71.
_FLOAT_SNAP_DENOMINATOR = 10 ** 6


def _as_fraction(k: Rational) -> Fraction:
    if isinstance(k, Fraction):
        return k
    if isinstance(k, int):
        return Fraction(k)
    if isinstance(k, float):
        if not math.isfinite(k):
            raise ValueError(f"scale factor must be finite, got {k!r}")
        return Fraction(k).limit_denominator(_FLOAT_SNAP_DENOMINATOR)
    raise TypeError(f"scale factor must be int, float, or Fraction, got {type(k).__name__}")


def scale_width(width: int, k: Rational) -> int:
    """Ceiling-scale a channel width: ceil(k * width), computed exactly."""
    frac = _as_fraction(k)
    if not 0 < frac <= 1:
        raise ValueError(f"scale factor must be in (0, 1], got {k!r}")
    num, den = frac.numerator, frac.denominator
    return -((-num * width) // den)


@dataclass(frozen=True)
class Conv:
    """2-D convolution. ``scale`` is the output feature map's downsampling factor
    relative to the network input; it determines macroblock membership. ``in_ref``
    and ``out_ref`` index the channel vector; a depthwise conv has out_ref == in_ref
    and in_channels == out_channels."""

    kind: ClassVar[str] = "conv"
    kernel: tuple[int, int]
    in_channels: int
    out_channels: int
    in_ref: int
    out_ref: int
    stride: int = 1
    scale: int = 1
    depthwise: bool = False
    has_bias: bool = False


@dataclass(frozen=True)
class BatchNorm:
    kind: ClassVar[str] = "batchnorm"
    channels: int
    ref: int


@dataclass(frozen=True)
class Pool:
    """Parameter-free spatial pooling."""

    kind: ClassVar[str] = "pool"
    pool: str = "max"
    window: int = 2
    stride: int = 2


@dataclass(frozen=True)
class GlobalAvgPool:
    kind: ClassVar[str] = "global_avg_pool"


@dataclass(frozen=True)
class FullyConnected:
    kind: ClassVar[str] = "fully_connected"
    in_features: int
    out_features: int
    in_ref: int
    has_bias: bool = True


Layer = Union[Conv, BatchNorm, Pool, GlobalAvgPool, FullyConnected]


@dataclass(frozen=True)
class ModelMeta:
    """Labels and bookkeeping that do not affect parameter counts or digests
    (except num_classes/input_channels, which are structural)."""

    name: str
    dataset: str
    num_classes: int
    input_channels: int
    resolution: int


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    meta: ModelMeta

    def convs(self) -> list[tuple[int, Conv]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, Conv)]


@dataclass(frozen=True)
class ChannelConfig:
    """Channel vector plus its macroblock boundaries.

    ``channels[0]`` is the input channel count and is never transformed.
    ``macroblock_starts`` lists the first channel index of each block; blocks are
    contiguous, cover 1..N, and the first start is always 1.
    """

    channels: tuple[int, ...]
    macroblock_starts: tuple[int, ...]

    def __post_init__(self):
        if len(self.channels) < 2:
            raise ValueError("channel vector needs the input entry plus at least one conv entry")
        for i, c in enumerate(self.channels):
            if not isinstance(c, int) or c < 1:
                raise ValueError(f"channel entry {i} must be a positive integer, got {c!r}")
        starts = self.macroblock_starts
        if not starts:
            raise ValueError("macroblock_starts must not be empty")
        if starts[0] != 1:
            raise ValueError(f"first macroblock must start at channel 1, got {starts[0]}")
        n = self.num_entries
        for a, b in zip(starts, starts[1:]):
            if b <= a:
                raise ValueError("macroblock_starts must be strictly increasing")
        if starts[-1] > n:
            raise ValueError(f"macroblock start {starts[-1]} beyond last channel index {n}")

    @property
    def num_entries(self) -> int:
        return len(self.channels) - 1

    @property
    def num_blocks(self) -> int:
        return len(self.macroblock_starts)

    def block_ranges(self) -> list[tuple[int, int]]:
        """Half-open [start, stop) channel-index ranges, one per macroblock."""
        bounds = list(self.macroblock_starts) + [self.num_entries + 1]
        return [(bounds[i], bounds[i + 1]) for i in range(len(self.macroblock_starts))]

    def block_channels(self, block: int) -> tuple[int, ...]:
        start, stop = self.block_ranges()[block]
        return self.channels[start:stop]

    def replace_entries(self, updates: dict[int, int]) -> "ChannelConfig":
        for i in updates:
            if not 1 <= i <= self.num_entries:
                raise ValueError(f"channel index {i} out of range 1..{self.num_entries}")
        chans = tuple(updates.get(i, c) for i, c in enumerate(self.channels))
        return ChannelConfig(chans, self.macroblock_starts)

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "macroblock_starts": list(self.macroblock_starts)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        return cls(tuple(d["channels"]), tuple(d["macroblock_starts"]))


@dataclass(frozen=True)
class Macroblock:
    index: int
    layer_range: tuple[int, int]   # half-open over spec.layers
    entry_range: tuple[int, int]   # half-open over channel indices
    widths: tuple[int, ...]        # nominal width per owned entry

    @property
    def uniform_width(self) -> int | None:
        return self.widths[0] if len(set(self.widths)) == 1 else None

    @property
    def search_width(self) -> int:
        # Finest lattice for the bisection loop guard on non-uniform blocks.
        return max(self.widths)


@dataclass(frozen=True)
class MacroblockPartition:
    blocks: tuple[Macroblock, ...]

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def widths(self) -> tuple:
        """Per-block nominal width; non-uniform blocks report the per-entry tuple."""
        return tuple(b.uniform_width if b.uniform_width is not None else b.widths for b in self.blocks)

    @property
    def macroblock_starts(self) -> tuple[int, ...]:
        return tuple(b.entry_range[0] for b in self.blocks)


def build_sequential_cnn(depth: int, block_widths: Sequence[int], input_channels: int = 3,
                         num_classes: int = 10, *, dataset: str = "cifar10",
                         resolution: int = 32, name: str | None = None) -> ModelSpec:
    """Plain CNN: ``depth`` 3x3 conv+batchnorm layers split evenly over
    ``len(block_widths)`` macroblocks, a parameter-free 2x2 pool between blocks,
    then global average pooling and a single fully connected classifier."""
    blocks = len(block_widths)
    if blocks < 1:
        raise ValueError("need at least one macroblock width")
    if depth < blocks:
        raise ValueError(f"depth {depth} smaller than number of blocks {blocks}")
    if depth % blocks != 0:
        raise ValueError(f"depth {depth} not divisible by number of blocks {blocks}")
    for w in block_widths:
        if not isinstance(w, int) or w < 1:
            raise ValueError(f"block widths must be positive integers, got {w!r}")
    if input_channels < 1 or num_classes < 1:
        raise ValueError("input_channels and num_classes must be >= 1")

    per_block = depth // blocks
    layers: list[Layer] = []
    entry = 0
    prev_width = input_channels
    for b, width in enumerate(block_widths):
        for _ in range(per_block):
            in_ref, entry = entry, entry + 1
            layers.append(Conv(kernel=(3, 3), in_channels=prev_width, out_channels=width,
                               in_ref=in_ref, out_ref=entry, scale=2 ** b))
            layers.append(BatchNorm(channels=width, ref=entry))
            prev_width = width
        if b < blocks - 1:
            layers.append(Pool(pool="max", window=2, stride=2))
    layers.append(GlobalAvgPool())
    layers.append(FullyConnected(in_features=block_widths[-1], out_features=num_classes,
                                 in_ref=entry))

    meta = ModelMeta(
        name=name or "sequential-d{}-{}".format(depth, "-".join(str(w) for w in block_widths)),
        dataset=dataset, num_classes=num_classes,
        input_channels=input_channels, resolution=resolution)
    spec = ModelSpec(tuple(layers), meta)
    validate_spec(spec)
    return spec


def validate_spec(spec: ModelSpec) -> None:
    """Check ref wiring and literal channel consistency; raises ValueError."""
    entries: list[int] = []  # nominal width per entry, index 1-based via offset
    n0 = spec.meta.input_channels

    def resolve(ref: int) -> int:
        if ref == 0:
            return n0
        if not 1 <= ref <= len(entries):
            raise ValueError(f"channel ref {ref} not yet defined")
        return entries[ref - 1]

    fc_seen = 0
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            if layer.depthwise:
                if layer.out_ref != layer.in_ref:
                    raise ValueError(f"layer {idx}: depthwise conv must share its input entry")
                if layer.in_channels != layer.out_channels:
                    raise ValueError(f"layer {idx}: depthwise conv must preserve channel count")
                if layer.in_channels != resolve(layer.in_ref):
                    raise ValueError(f"layer {idx}: conv in_channels {layer.in_channels} does not "
                                     f"match ref {layer.in_ref}")
            else:
                if layer.in_channels != resolve(layer.in_ref):
                    raise ValueError(f"layer {idx}: conv in_channels {layer.in_channels} does not "
                                     f"match ref {layer.in_ref}")
                if layer.out_ref != len(entries) + 1:
                    raise ValueError(f"layer {idx}: conv out_ref {layer.out_ref} breaks entry order "
                                     f"(expected {len(entries) + 1})")
                entries.append(layer.out_channels)
            if layer.out_channels < 1 or layer.in_channels < 1:
                raise ValueError(f"layer {idx}: channel counts must be >= 1")
            if layer.stride < 1 or layer.scale < 1:
                raise ValueError(f"layer {idx}: stride and scale must be >= 1")
        elif isinstance(layer, BatchNorm):
            if layer.channels != resolve(layer.ref):
                raise ValueError(f"layer {idx}: batchnorm channels {layer.channels} does not match "
                                 f"ref {layer.ref}")
        elif isinstance(layer, FullyConnected):
            fc_seen += 1
            if layer.in_features != resolve(layer.in_ref):
                raise ValueError(f"layer {idx}: fully connected in_features {layer.in_features} "
                                 f"does not match ref {layer.in_ref}")
            if layer.out_features < 1:
                raise ValueError(f"layer {idx}: out_features must be >= 1")
    if fc_seen > 1:
        raise ValueError("at most one fully connected classification head is supported")


def partition_macroblocks(spec: ModelSpec) -> MacroblockPartition:
    """Group consecutive conv layers whose outputs share a spatial scale.

    Every conv (depthwise included) belongs to the macroblock of its output scale;
    batchnorm/pool layers attach to the block of the preceding conv. Raises
    ValueError when the model has no conv layers.
    """
    validate_spec(spec)
    conv_positions = spec.convs()
    if not conv_positions:
        raise ValueError("model has no convolution layers to partition")

    head_start = len(spec.layers)
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, (GlobalAvgPool, FullyConnected)):
            head_start = idx
            break

    # Consecutive runs of equal conv scale. Entry ownership comes from
    # non-depthwise convs only.
    runs: list[dict] = []
    for idx, conv in conv_positions:
        if runs and conv.scale == runs[-1]["scale"]:
            runs[-1]["last_layer"] = idx
            if not conv.depthwise:
                runs[-1]["entries"].append((conv.out_ref, conv.out_channels))
        else:
            runs.append({"scale": conv.scale, "first_layer": idx, "last_layer": idx,
                         "entries": [] if conv.depthwise else [(conv.out_ref, conv.out_channels)]})

    blocks: list[Macroblock] = []
    for i, run in enumerate(runs):
        if not run["entries"]:
            raise ValueError("macroblock with only depthwise convs has no channel entries")
        layer_stop = runs[i + 1]["first_layer"] if i + 1 < len(runs) else head_start
        entry_indexes = [e for e, _ in run["entries"]]
        blocks.append(Macroblock(
            index=i,
            layer_range=(run["first_layer"], layer_stop),
            entry_range=(entry_indexes[0], entry_indexes[-1] + 1),
            widths=tuple(w for _, w in run["entries"])))
    return MacroblockPartition(tuple(blocks))


def channel_config(spec: ModelSpec) -> ChannelConfig:
    """Extract the nominal channel vector with macroblock boundaries."""
    partition = partition_macroblocks(spec)
    entries = [l.out_channels for _, l in spec.convs() if not l.depthwise]
    return ChannelConfig((spec.meta.input_channels, *entries), partition.macroblock_starts)


def with_config(spec: ModelSpec, config: ChannelConfig) -> ModelSpec:
    """Rebuild the descriptor with literal channel counts taken from ``config``."""
    nominal_entries = sum(1 for _, l in spec.convs() if not l.depthwise)
    if config.num_entries != nominal_entries:
        raise ValueError(f"config has {config.num_entries} entries, model needs {nominal_entries}")
    if config.channels[0] != spec.meta.input_channels:
        raise ValueError(f"input channel entry is immutable "
                         f"({config.channels[0]} != {spec.meta.input_channels})")
    chans = config.channels
    layers: list[Layer] = []
    for layer in spec.layers:
        if isinstance(layer, Conv):
            layers.append(replace(layer, in_channels=chans[layer.in_ref],
                                  out_channels=chans[layer.out_ref]))
        elif isinstance(layer, BatchNorm):
            layers.append(replace(layer, channels=chans[layer.ref]))
        elif isinstance(layer, FullyConnected):
            layers.append(replace(layer, in_features=chans[layer.in_ref]))
        else:
            layers.append(layer)
    rebuilt = ModelSpec(tuple(layers), spec.meta)
    validate_spec(rebuilt)
    return rebuilt


def structural_key(spec: ModelSpec) -> list:
    """Canonical architecture skeleton, independent of channel widths and labels.

    Feeds the evaluation digest: permuting metadata labels leaves it unchanged,
    while any structural edit (layer kinds, kernels, wiring, head size) moves it.
    """
    key: list = [["input", spec.meta.input_channels]]
    for layer in spec.layers:
        if isinstance(layer, Conv):
            key.append(["conv", layer.kernel[0], layer.kernel[1], layer.stride, layer.scale,
                        int(layer.depthwise), int(layer.has_bias), layer.in_ref, layer.out_ref])
        elif isinstance(layer, BatchNorm):
            key.append(["batchnorm", layer.ref])
        elif isinstance(layer, Pool):
            key.append(["pool", layer.pool, layer.window, layer.stride])
        elif isinstance(layer, GlobalAvgPool):
            key.append(["global_avg_pool"])
        elif isinstance(layer, FullyConnected):
            key.append(["fully_connected", layer.out_features, int(layer.has_bias), layer.in_ref])
    return key


# ---------------------------------------------------------------------------
# Width transforms. All pure: they return a new ChannelConfig.

def apply_constant_lesion(config: ChannelConfig, index: int, value: int) -> ChannelConfig:
    """Set channel entry ``index`` to the constant ``value`` (one-hot lesion)."""
    if not isinstance(value, int) or value < 1:
        raise ValueError(f"lesion value must be a positive integer, got {value!r}")
    return config.replace_entries({index: value})


def apply_proportional_lesion(config: ChannelConfig, index: int, k: Rational) -> ChannelConfig:
    """Scale channel entry ``index`` to ceil(k * n_index), 0 < k <= 1."""
    if not 1 <= index <= config.num_entries:
        raise ValueError(f"channel index {index} out of range 1..{config.num_entries}")
    return config.replace_entries({index: scale_width(config.channels[index], k)})


def apply_macroblock_scale(config: ChannelConfig, partition: MacroblockPartition,
                           block: int, k: Rational) -> ChannelConfig:
    """Ceiling-scale every entry of one macroblock by k."""
    if not 0 <= block < partition.num_blocks:
        raise ValueError(f"block index {block} out of range 0..{partition.num_blocks - 1}")
    start, stop = partition.blocks[block].entry_range
    if stop > config.num_entries + 1:
        raise ValueError("partition does not match this channel vector")
    updates = {i: scale_width(config.channels[i], k) for i in range(start, stop)}
    return config.replace_entries(updates)


def apply_alpha_scaling(config: ChannelConfig, alpha: Rational) -> ChannelConfig:
    """Uniformly ceiling-scale every output channel entry by the width multiplier."""
    updates = {i: scale_width(config.channels[i], alpha)
               for i in range(1, config.num_entries + 1)}
    return config.replace_entries(updates)
