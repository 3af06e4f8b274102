"""Exact parameter and storage-size accounting for model descriptors.

Counting rules:
  conv           kh * kw * in_ch * out_ch weights (+ out_ch bias terms if present);
                 depthwise convs hold one kh * kw filter per channel.
  batchnorm      2 * channels learnable scale/shift, plus 2 * channels running
                 statistics kept as non-learnable buffers.
  fully conn.    in_features * out_features (+ out_features bias terms).
  pooling        parameter-free.

Sizes are stored-scalar counts (learnable + buffers) times bytes per scalar, plus a
flat serialization overhead. 1 MB = 2**20 bytes, 1 KB = 1024 bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arch import (BatchNorm, Conv, FullyConnected, ModelSpec, partition_macroblocks)

BYTES_PER_SCALAR = 4
KB = 1024
MB = 1024 * 1024


@dataclass(frozen=True)
class BlockUsage:
    block_id: int
    params: int
    bytes: int


@dataclass(frozen=True)
class SizeReport:
    parameter_count: int
    buffer_count: int
    size_bytes: int
    per_block_breakdown: tuple[BlockUsage, ...] = ()

    @property
    def stored_scalars(self) -> int:
        return self.parameter_count + self.buffer_count

    @property
    def size_mb(self) -> float:
        return self.size_bytes / MB

    def to_dict(self) -> dict:
        return {"parameter_count": self.parameter_count,
                "buffer_count": self.buffer_count,
                "size_bytes": self.size_bytes,
                "per_block_breakdown": [[b.block_id, b.params, b.bytes]
                                        for b in self.per_block_breakdown]}

    def to_csv_row(self) -> str:
        breakdown = ";".join(f"{b.block_id}:{b.params}:{b.bytes}"
                             for b in self.per_block_breakdown)
        return f"{self.parameter_count},{self.buffer_count},{self.size_bytes},{breakdown}"


def _layer_params(layer) -> tuple[int, int]:
    """(learnable, buffers) for one layer."""
    if isinstance(layer, Conv):
        kh, kw = layer.kernel
        if layer.depthwise:
            weights = kh * kw * layer.out_channels
        else:
            weights = kh * kw * layer.in_channels * layer.out_channels
        return weights + (layer.out_channels if layer.has_bias else 0), 0
    if isinstance(layer, BatchNorm):
        return 2 * layer.channels, 2 * layer.channels
    if isinstance(layer, FullyConnected):
        return (layer.in_features * layer.out_features
                + (layer.out_features if layer.has_bias else 0)), 0
    return 0, 0


def count_parameters(spec: ModelSpec, *, bytes_per_scalar: int = BYTES_PER_SCALAR,
                     overhead: int = 0) -> SizeReport:
    """Count every layer exactly; breakdown rows cover the conv macroblocks, with
    head layers (classifier) accounted in the totals only."""
    per_layer = [_layer_params(layer) for layer in spec.layers]
    total_params = sum(p for p, _ in per_layer)
    total_buffers = sum(b for _, b in per_layer)

    breakdown: list[BlockUsage] = []
    try:
        partition = partition_macroblocks(spec)
    except ValueError:
        partition = None
    if partition is not None:
        for block in partition.blocks:
            start, stop = block.layer_range
            params = sum(p for p, _ in per_layer[start:stop])
            buffers = sum(b for _, b in per_layer[start:stop])
            breakdown.append(BlockUsage(block.index, params,
                                        (params + buffers) * bytes_per_scalar))

    size = (total_params + total_buffers) * bytes_per_scalar + overhead
    return SizeReport(total_params, total_buffers, size, tuple(breakdown))


def model_size_bytes(spec: ModelSpec, bytes_per_scalar: int = BYTES_PER_SCALAR,
                     overhead: int = 0) -> int:
    if bytes_per_scalar < 1 or overhead < 0:
        raise ValueError("bytes_per_scalar must be >= 1 and overhead >= 0")
    return count_parameters(spec, bytes_per_scalar=bytes_per_scalar, overhead=overhead).size_bytes


def saving_percent(base: SizeReport, reduced: SizeReport) -> float:
    """100 * (1 - reduced/base) measured on stored bytes."""
    if base.size_bytes == 0:
        raise ValueError("baseline size is zero; saving undefined")
    return 100.0 * (1.0 - reduced.size_bytes / base.size_bytes)
