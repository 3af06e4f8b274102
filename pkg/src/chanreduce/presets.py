"""Hand-written descriptors for reference architectures, plus JSON descriptor files.

These exist purely for channel bookkeeping and parameter accounting; residual
shortcuts are recorded as data (a projection conv where the reference network has
one) and are never executed.
"""

from __future__ import annotations

import json
from pathlib import Path

from .arch import (BatchNorm, Conv, FullyConnected, GlobalAvgPool, Layer, ModelMeta,
                   ModelSpec, Pool, scale_width, validate_spec)


def _basic_stage(layers, entry, in_entry, width, blocks, scale, downsample):
    """One residual stage of two-conv basic blocks; returns the stream entry."""
    for b in range(blocks):
        stride = 2 if downsample and b == 0 else 1
        in_ref = in_entry
        entry += 1
        layers.append(Conv((3, 3), layers_width(layers, in_ref), width,
                           in_ref=in_ref, out_ref=entry, stride=stride, scale=scale))
        layers.append(BatchNorm(width, ref=entry))
        entry += 1
        layers.append(Conv((3, 3), width, width, in_ref=entry - 1, out_ref=entry, scale=scale))
        layers.append(BatchNorm(width, ref=entry))
        stream = entry
        if downsample and b == 0:
            # Projection shortcut: 1x1 conv matching the new width and scale.
            entry += 1
            layers.append(Conv((1, 1), layers_width(layers, in_ref), width,
                               in_ref=in_ref, out_ref=entry, stride=2, scale=scale))
            layers.append(BatchNorm(width, ref=entry))
        in_entry = stream
    return layers, entry, in_entry


def layers_width(layers, ref: int):
    if ref == 0:
        return 3
    for layer in layers:
        if isinstance(layer, Conv) and not layer.depthwise and layer.out_ref == ref:
            return layer.out_channels
    raise ValueError(f"unresolved channel ref {ref}")


def _resnet(stage_blocks: list[int], name: str, num_classes: int = 1000) -> ModelSpec:
    widths = [64, 128, 256, 512]
    layers: list[Layer] = [
        Conv((7, 7), 3, 64, in_ref=0, out_ref=1, stride=2, scale=2),
        BatchNorm(64, ref=1),
        Pool(pool="max", window=3, stride=2),
    ]
    entry, in_entry = 1, 1
    for s, (width, blocks) in enumerate(zip(widths, stage_blocks)):
        scale = 4 * 2 ** s
        layers, entry, in_entry = _basic_stage(layers, entry, in_entry, width, blocks,
                                               scale, downsample=(s > 0))
    layers.append(GlobalAvgPool())
    layers.append(FullyConnected(widths[-1], num_classes, in_ref=in_entry))
    meta = ModelMeta(name=name, dataset="imagenet", num_classes=num_classes,
                     input_channels=3, resolution=224)
    spec = ModelSpec(tuple(layers), meta)
    validate_spec(spec)
    return spec


def resnet18(num_classes: int = 1000) -> ModelSpec:
    return _resnet([2, 2, 2, 2], "resnet18", num_classes)


def resnet34(num_classes: int = 1000) -> ModelSpec:
    return _resnet([3, 4, 6, 3], "resnet34", num_classes)


# (out_channels, stride) for the 13 depthwise-separable blocks.
_MOBILENET_BLOCKS = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
                     (512, 1), (512, 1), (512, 1), (512, 1), (512, 1),
                     (1024, 2), (1024, 1)]


def mobilenet(width_mult: float = 1.0, num_classes: int = 1000) -> ModelSpec:
    """Depthwise-separable CNN with an optional uniform width multiplier."""
    if not 0 < width_mult <= 1:
        raise ValueError(f"width multiplier must be in (0, 1], got {width_mult!r}")

    def w(nominal: int) -> int:
        return scale_width(nominal, width_mult)

    stem = w(32)
    layers: list[Layer] = [
        Conv((3, 3), 3, stem, in_ref=0, out_ref=1, stride=2, scale=2),
        BatchNorm(stem, ref=1),
    ]
    entry, stream, width, scale = 1, 1, stem, 2
    for out, stride in _MOBILENET_BLOCKS:
        scale *= stride
        layers.append(Conv((3, 3), width, width, in_ref=stream, out_ref=stream,
                           stride=stride, scale=scale, depthwise=True))
        layers.append(BatchNorm(width, ref=stream))
        entry += 1
        layers.append(Conv((1, 1), width, w(out), in_ref=stream, out_ref=entry, scale=scale))
        layers.append(BatchNorm(w(out), ref=entry))
        stream, width = entry, w(out)
    layers.append(GlobalAvgPool())
    layers.append(FullyConnected(width, num_classes, in_ref=stream))
    meta = ModelMeta(name=f"mobilenet-{width_mult:g}", dataset="imagenet",
                     num_classes=num_classes, input_channels=3, resolution=224)
    spec = ModelSpec(tuple(layers), meta)
    validate_spec(spec)
    return spec


PRESETS = {
    "resnet18": resnet18,
    "resnet34": resnet34,
    "mobilenet": mobilenet,
}


# ---------------------------------------------------------------------------
# Declarative descriptor files (JSON).

def _layer_to_dict(layer: Layer) -> dict:
    if isinstance(layer, Conv):
        return {"kind": "conv", "kernel": list(layer.kernel), "in": layer.in_channels,
                "out": layer.out_channels, "in_ref": layer.in_ref, "out_ref": layer.out_ref,
                "stride": layer.stride, "scale": layer.scale,
                "depthwise": layer.depthwise, "bias": layer.has_bias}
    if isinstance(layer, BatchNorm):
        return {"kind": "batchnorm", "channels": layer.channels, "ref": layer.ref}
    if isinstance(layer, Pool):
        return {"kind": "pool", "pool": layer.pool, "window": layer.window, "stride": layer.stride}
    if isinstance(layer, GlobalAvgPool):
        return {"kind": "global_avg_pool"}
    if isinstance(layer, FullyConnected):
        return {"kind": "fully_connected", "in": layer.in_features, "out": layer.out_features,
                "in_ref": layer.in_ref, "bias": layer.has_bias}
    raise TypeError(f"unknown layer type {type(layer).__name__}")


def _layer_from_dict(d: dict) -> Layer:
    kind = d.get("kind")
    if kind == "conv":
        return Conv(kernel=tuple(d["kernel"]), in_channels=d["in"], out_channels=d["out"],
                    in_ref=d["in_ref"], out_ref=d["out_ref"], stride=d.get("stride", 1),
                    scale=d.get("scale", 1), depthwise=d.get("depthwise", False),
                    has_bias=d.get("bias", False))
    if kind == "batchnorm":
        return BatchNorm(channels=d["channels"], ref=d["ref"])
    if kind == "pool":
        return Pool(pool=d.get("pool", "max"), window=d.get("window", 2),
                    stride=d.get("stride", d.get("window", 2)))
    if kind == "global_avg_pool":
        return GlobalAvgPool()
    if kind == "fully_connected":
        return FullyConnected(in_features=d["in"], out_features=d["out"],
                              in_ref=d["in_ref"], has_bias=d.get("bias", True))
    raise ValueError(f"unknown layer kind {kind!r}")


def spec_to_dict(spec: ModelSpec) -> dict:
    return {"name": spec.meta.name, "dataset": spec.meta.dataset,
            "num_classes": spec.meta.num_classes, "input_channels": spec.meta.input_channels,
            "resolution": spec.meta.resolution,
            "layers": [_layer_to_dict(l) for l in spec.layers]}


def spec_from_dict(d: dict) -> ModelSpec:
    meta = ModelMeta(name=d.get("name", "descriptor"), dataset=d.get("dataset", "unknown"),
                     num_classes=d["num_classes"], input_channels=d.get("input_channels", 3),
                     resolution=d.get("resolution", 224))
    spec = ModelSpec(tuple(_layer_from_dict(l) for l in d["layers"]), meta)
    validate_spec(spec)
    return spec


def save_descriptor(spec: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n")


def load_descriptor(path) -> ModelSpec:
    try:
        return spec_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed model descriptor {path}: {exc}") from exc
