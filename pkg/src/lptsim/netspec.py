"""Network descriptions, quantized tensors and the CIM core geometry.

A network is an ordered list of :class:`LayerSpec`. Every layer consumes the
output of the previous layer unless ``src`` says otherwise; index ``-1`` is
the network input. Residual adds take their second operand from
``NetworkSpec.residual_edges``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LAYER_KINDS = ("conv", "pool_max", "pool_avg", "residual_add", "fc", "input")
WEIGHTED_KINDS = ("conv", "fc")
CONV_KERNELS = (1, 3, 7)


class ShapeError(ValueError):
    """A layer's input does not match what its producer emits."""


class UnknownNetworkError(KeyError):
    pass


# ---------------------------------------------------------------------------
# tensors


@dataclass(frozen=True, eq=False)
class QTensor:
    """Integer activation map stored row-major as (H, W, C).

    Unsigned tensors hold ``[0, 2**bit_width - 1]`` (post-ReLU activations);
    signed tensors hold the two's-complement range of ``bit_width``.
    """

    values: np.ndarray
    bit_width: int = 8
    signed: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError(f"QTensor needs (H, W, C) values, got shape {v.shape}")
        if min(v.shape) < 1:
            raise ValueError(f"QTensor dims must be >= 1, got {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            raise TypeError("QTensor values must be integers")
        lo, hi = value_range(self.bit_width, self.signed)
        if v.size and (v.min() < lo or v.max() > hi):
            raise ValueError(
                f"values outside [{lo}, {hi}] for {self.bit_width}-bit "
                f"{'signed' if self.signed else 'unsigned'} tensor"
            )
        object.__setattr__(self, "values", v.astype(np.int64, copy=False))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def nbytes(self) -> int:
        return self.values.size * self.bit_width // 8

    def with_values(self, values: np.ndarray) -> "QTensor":
        return QTensor(values, self.bit_width, self.signed)

    def __eq__(self, other):
        if not isinstance(other, QTensor):
            return NotImplemented
        return (
            self.bit_width == other.bit_width
            and self.signed == other.signed
            and self.shape == other.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None


def value_range(bit_width: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (bit_width - 1)), (1 << (bit_width - 1)) - 1
    return 0, (1 << bit_width) - 1


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class Quant:
    """Output requantization: ``(acc * multiplier) >> shift`` with round-half-up.

    ``multiplier`` is a scalar or one entry per output channel.
    """

    multiplier: int | tuple[int, ...] = 1
    shift: int = 0
    relu: bool = True

    def __post_init__(self):
        if self.shift < 0:
            raise ValueError("shift must be >= 0")
        if isinstance(self.multiplier, list):
            object.__setattr__(self, "multiplier", tuple(self.multiplier))

    def multipliers(self, channels: int) -> np.ndarray:
        m = np.asarray(self.multiplier, dtype=np.int64)
        if m.ndim == 0:
            return np.full(channels, int(m), dtype=np.int64)
        if m.shape != (channels,):
            raise ShapeError(f"{m.size} per-channel multipliers for {channels} channels")
        return m


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 1
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    padding_mode: str = "block"
    quant: Quant = field(default_factory=Quant)
    src: int | None = None
    global_pool: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.padding_mode not in ("block", "standard"):
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.kind == "conv":
            if self.kernel not in CONV_KERNELS:
                raise ValueError(f"conv kernel must be one of {CONV_KERNELS}")
            if self.stride not in (1, 2):
                raise ValueError("conv stride must be 1 or 2")
        if self.kind == "fc" and (self.kernel != 1 or self.stride != 1):
            raise ValueError("fc layers are 1x1 stride-1")

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED_KINDS

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def spatial(self) -> bool:
        """True when the layer's output pixel reads more than one input pixel."""
        return self.kind in ("conv", "pool_max", "pool_avg") and (self.kernel > 1 or self.global_pool)

    @property
    def n_weights(self) -> int:
        if not self.weighted:
            return 0
        return self.kernel * self.kernel * self.in_channels * self.out_channels

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.kernel, self.kernel, self.in_channels, self.out_channels)

    def out_extent(self, extent: int) -> int:
        if self.global_pool:
            return 1
        if self.kind in ("residual_add", "fc", "input"):
            return extent
        return (extent + 2 * self.pad - self.kernel) // self.stride + 1


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    residual_edges: tuple[tuple[int, int], ...] = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(
            self, "residual_edges", tuple(tuple(e) for e in self.residual_edges)
        )

    def __len__(self):
        return len(self.layers)

    def source(self, idx: int) -> int:
        """Index of the layer feeding ``idx`` (``-1`` is the network input)."""
        layer = self.layers[idx]
        return idx - 1 if layer.src is None else layer.src

    def skip_source(self, idx: int) -> int:
        for src, dst in self.residual_edges:
            if dst == idx:
                return src
        raise ShapeError(f"residual_add at layer {idx} has no residual edge")

    def operands(self, idx: int) -> tuple[int, ...]:
        if self.layers[idx].kind == "residual_add":
            return (self.source(idx), self.skip_source(idx))
        return (self.source(idx),)

    def consumers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {i: [] for i in range(-1, len(self.layers))}
        for i in range(len(self.layers)):
            for op in self.operands(i):
                out[op].append(i)
        return out

    def last_use(self) -> dict[int, int]:
        """Last consuming layer of every tensor; the final output is used at ``len``."""
        last = {i: i for i in range(-1, len(self.layers))}
        for i in range(len(self.layers)):
            for op in self.operands(i):
                last[op] = max(last[op], i)
        if self.layers:
            last[len(self.layers) - 1] = len(self.layers)
        return last

    @property
    def n_conv(self) -> int:
        return sum(1 for l in self.layers if l.kind == "conv")

    @property
    def n_weights(self) -> int:
        return sum(l.n_weights for l in self.layers)

    def weighted_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.weighted]


def infer_shapes(net: NetworkSpec) -> list[tuple[int, int, int]]:
    """Output (H, W, C) of every layer; raises :class:`ShapeError` on mismatch."""
    h, w, c = net.input_shape
    if min(h, w, c) < 1:
        raise ShapeError(f"input shape {net.input_shape} has a zero dimension")
    shapes: list[tuple[int, int, int]] = []

    def shape_of(i: int) -> tuple[int, int, int]:
        return tuple(net.input_shape) if i < 0 else shapes[i]

    for src, dst in net.residual_edges:
        if not (-1 <= src < dst < len(net.layers)):
            raise ShapeError(f"residual edge ({src}, {dst}) must skip forward")
        if net.layers[dst].kind != "residual_add":
            raise ShapeError(f"residual edge ({src}, {dst}) targets a {net.layers[dst].kind} layer")

    for i, layer in enumerate(net.layers):
        src = net.source(i)
        if not (-1 <= src < i):
            raise ShapeError(f"layer {i}: source {src} is not an earlier layer")
        ih, iw, ic = shape_of(src)
        tag = layer.name or f"layer {i}"
        if layer.kind == "input":
            raise ShapeError(f"{tag}: 'input' may not appear inside the layer list")
        if layer.kind in WEIGHTED_KINDS:
            if layer.in_channels != ic:
                raise ShapeError(f"{tag}: expects {layer.in_channels} input channels, gets {ic}")
            if layer.out_channels < 1:
                raise ShapeError(f"{tag}: out_channels must be >= 1")
            if layer.kind == "fc" and (ih, iw) != (1, 1):
                raise ShapeError(f"{tag}: fc layer needs a 1x1 map, gets {ih}x{iw}")
            oc = layer.out_channels
        elif layer.kind == "residual_add":
            skip = net.skip_source(i)
            if shape_of(skip) != (ih, iw, ic):
                raise ShapeError(
                    f"{tag}: residual operand {shape_of(skip)} does not match main path {(ih, iw, ic)}"
                )
            oc = ic
        else:
            if layer.out_channels not in (0, ic) or layer.in_channels not in (0, ic):
                raise ShapeError(f"{tag}: pooling cannot change channel count")
            oc = ic
        oh, ow = layer.out_extent(ih), layer.out_extent(iw)
        if oh < 1 or ow < 1:
            raise ShapeError(f"{tag}: output collapses to {oh}x{ow}")
        shapes.append((oh, ow, oc))
    return shapes


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class CoreGeometry:
    """One CIM core: ``tile_width`` columns x ``tile_height`` bit-serial rows x
    ``channel_depth`` clusters x ``precision`` macros."""

    tile_width: int = 8
    tile_height: int = 16
    channel_depth: int = 128
    precision: int = 8
    core_count: int = 3
    tmem_capacity: int = 24 * 1024

    @property
    def core_capacity(self) -> int:
        """Bits per core."""
        return self.tile_width * self.tile_height * self.channel_depth * self.precision

    @property
    def core_bytes(self) -> int:
        return self.core_capacity // 8

    @property
    def total_activation_bytes(self) -> int:
        return self.core_count * self.core_bytes + self.tmem_capacity

    def pixels_per_slot(self, channels: int) -> int:
        # shallow maps pack several pixels into one macro row
        return max(1, self.channel_depth // max(channels, 1))

    def rows_used(self, h: int, w: int, channels: int) -> int:
        """Physical SRAM rows a (h, w, channels) tile occupies in one core."""
        if min(h, w, channels) <= 0:
            return 0
        slices = math.ceil(channels / self.channel_depth)
        per_row = self.tile_width * self.pixels_per_slot(channels)
        return math.ceil(h * w / per_row) * slices

    def fits(self, h: int, w: int, channels: int) -> bool:
        bits = h * w * channels * self.precision
        return bits <= self.core_capacity and self.rows_used(h, w, channels) <= self.tile_height


# ---------------------------------------------------------------------------
# builtin descriptors


def default_quant(fan_in: int, relu: bool = True, weight_bits: int = 4) -> Quant:
    """Power-of-two rescale that keeps random-weight activations in range."""
    # gain of a half-kept uniform layer is about sqrt(fan_in) * 2**(bits-4)
    spread = math.sqrt(max(fan_in, 1)) * 2.0 ** (weight_bits - 4)
    return Quant(1, max(0, int(round(math.log2(spread)))), relu)


def _conv(cin, cout, k=3, s=1, relu=True, src=None, name="", padding="block"):
    return LayerSpec(
        "conv", k, s, cin, cout, padding, default_quant(k * k * cin, relu), src, name=name
    )


def _resnet(
    blocks: Sequence[int], bottleneck: bool, side: int, name: str, n_classes: int = 1000, base_width: int = 64
):
    layers: list[LayerSpec] = []
    edges: list[tuple[int, int]] = []
    layers.append(_conv(3, base_width, 7, 2, name="conv1"))
    layers.append(LayerSpec("pool_max", 3, 2, base_width, base_width, name="maxpool"))
    cin = base_width
    widths = tuple(base_width * m for m in (1, 2, 4, 8))
    for stage, (n, width) in enumerate(zip(blocks, widths)):
        cout = width * 4 if bottleneck else width
        for b in range(n):
            stride = 2 if (stage > 0 and b == 0) else 1
            x = len(layers) - 1
            tag = f"s{stage + 2}b{b + 1}"
            skip = x
            if stride != 1 or cin != cout:
                layers.append(_conv(cin, cout, 1, stride, relu=False, src=x, name=f"{tag}_ds"))
                skip = len(layers) - 1
            if bottleneck:
                layers.append(_conv(cin, width, 1, 1, src=x, name=f"{tag}_a"))
                layers.append(_conv(width, width, 3, stride, name=f"{tag}_b"))
                layers.append(_conv(width, cout, 1, 1, relu=False, name=f"{tag}_c"))
            else:
                layers.append(_conv(cin, width, 3, stride, src=x, name=f"{tag}_a"))
                layers.append(_conv(width, cout, 3, 1, relu=False, name=f"{tag}_b"))
            layers.append(LayerSpec("residual_add", quant=Quant(relu=True), name=f"{tag}_add"))
            edges.append((skip, len(layers) - 1))
            cin = cout
    layers.append(LayerSpec("pool_avg", 1, 1, cin, cin, global_pool=True, name="avgpool"))
    layers.append(
        LayerSpec("fc", 1, 1, cin, n_classes, quant=default_quant(cin, relu=False), name="fc")
    )
    return NetworkSpec(tuple(layers), (side, side, 3), tuple(edges), name=name)


def _toy_vgg(side: int, depth: int = 12, in_ch: int = 8, width: int = 32):
    layers = [_conv(in_ch, width, 3, 1, name="conv1")]
    layers += [_conv(width, width, 3, 1, name=f"conv{i + 2}") for i in range(depth - 1)]
    return NetworkSpec(tuple(layers), (side, side, in_ch), (), name="toy_vgg")


BUILTIN_NETWORKS = ("resnet18", "resnet50", "toy_vgg")


def builtin_network(name: str, input_side: int = 256, **kwargs) -> NetworkSpec:
    """Canonical descriptors; ``resnet50`` at 256 is the evaluation target."""
    if name == "resnet50":
        return _resnet((3, 4, 6, 3), True, input_side, name, **kwargs)
    if name == "resnet18":
        return _resnet((2, 2, 2, 2), False, input_side, name, **kwargs)
    if name == "toy_vgg":
        return _toy_vgg(input_side, **kwargs)
    raise UnknownNetworkError(f"unknown network {name!r}; choose from {BUILTIN_NETWORKS}")


# ---------------------------------------------------------------------------
# JSON descriptors


def layer_to_dict(layer: LayerSpec) -> dict:
    d = {"kind": layer.kind}
    if layer.kind in ("conv", "pool_max", "pool_avg"):
        d["k"] = layer.kernel
        d["stride"] = layer.stride
    if layer.weighted:
        d["out_ch"] = layer.out_channels
    if layer.kind == "conv":
        d["padding"] = layer.padding_mode
    if layer.global_pool:
        d["global"] = True
    if layer.src is not None:
        d["input"] = layer.src
    q = layer.quant
    d["relu"] = q.relu
    d["mult"] = list(q.multiplier) if isinstance(q.multiplier, tuple) else q.multiplier
    d["shift"] = q.shift
    if layer.name:
        d["name"] = layer.name
    return d


def network_to_dict(net: NetworkSpec) -> dict:
    return {
        "name": net.name,
        "input": list(net.input_shape),
        "layers": [layer_to_dict(l) for l in net.layers],
        "residual_edges": [list(e) for e in net.residual_edges],
    }


def network_from_dict(doc: dict) -> NetworkSpec:
    """Build a network from the JSON descriptor, inferring channel counts."""
    try:
        input_shape = tuple(int(x) for x in doc["input"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"descriptor missing field: {exc}") from None
    if len(input_shape) != 3:
        raise ValueError("'input' must be [H, W, C]")
    edges = tuple(tuple(int(v) for v in e) for e in doc.get("residual_edges", []))
    skip_of = {dst: src for src, dst in edges}

    layers: list[LayerSpec] = []
    chans: list[int] = []

    def ch(i):
        return input_shape[2] if i < 0 else chans[i]

    for i, d in enumerate(raw_layers):
        kind = d.get("kind")
        if kind == "input":
            raise ValueError("layer list may not contain 'input'; use the top-level 'input' field")
        src = d.get("input")
        cin = ch(i - 1 if src is None else int(src))
        mult = d.get("mult", 1)
        quant = Quant(tuple(mult) if isinstance(mult, list) else int(mult), int(d.get("shift", 0)), bool(d.get("relu", True)))
        k = int(d.get("k", 1))
        if kind in WEIGHTED_KINDS:
            cout = int(d["out_ch"])
            if "shift" not in d and "mult" not in d:
                quant = default_quant(k * k * cin, quant.relu)
        else:
            cout = cin
        if kind == "residual_add" and i not in skip_of:
            raise ValueError(f"residual_add at layer {i} has no residual edge")
        layers.append(
            LayerSpec(
                kind,
                k,
                int(d.get("stride", 1)),
                0 if kind == "residual_add" else cin,
                0 if kind == "residual_add" else cout,
                d.get("padding", "block"),
                quant,
                None if src is None else int(src),
                bool(d.get("global", False)),
                d.get("name", ""),
            )
        )
        chans.append(cout)
    net = NetworkSpec(tuple(layers), input_shape, edges, name=doc.get("name", "custom"))
    infer_shapes(net)
    return net


def load_network(path: str | Path) -> NetworkSpec:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(net: NetworkSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2, sort_keys=True) + "\n")


def chain(input_shape: Iterable[int], layers: Iterable[LayerSpec], edges=(), name="custom") -> NetworkSpec:
    """Convenience constructor used by tests and the estimator."""
    return NetworkSpec(tuple(layers), tuple(input_shape), tuple(edges), name=name)
