"""Golden functional model: integer convolution, block convolution, tile
concatenation and whole-network execution in tiled (penetrative) order.

All arithmetic is exact. Convolutions accumulate with float64 matrix products,
which are exact here because every partial sum stays far below 2**53.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .netspec import LayerSpec, NetworkSpec, QTensor, Quant, ShapeError, infer_shapes, value_range

ACT_BITS = 8


class PlanMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# quantization


def requantize(acc: np.ndarray, quant: Quant, bit_width: int = ACT_BITS) -> tuple[np.ndarray, bool]:
    """Scale, round half-up, optionally ReLU, and saturate an int64 accumulator.

    Returns the values and whether the result is signed (non-ReLU outputs are).
    """
    m = quant.multipliers(acc.shape[-1])
    v = acc.astype(np.int64) * m
    if quant.shift > 0:
        v = (v + (1 << (quant.shift - 1))) >> quant.shift
    signed = not quant.relu
    lo, hi = value_range(bit_width, signed)
    return np.clip(v, lo, hi), signed


# ---------------------------------------------------------------------------
# single-tensor operators (a "tensor" may be a whole map or one tile)


def _check_weights(x: QTensor, weights: np.ndarray, layer: LayerSpec) -> np.ndarray:
    w = np.asarray(weights)
    want = (layer.kernel, layer.kernel, x.channels, layer.out_channels)
    if w.shape != want:
        raise ShapeError(f"weights {w.shape} do not match layer/input {want}")
    return w


def conv_accumulate(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Exact integer correlation of (H, W, Cin) with (K, K, Cin, Cout), zero padded."""
    k = w.shape[0]
    h, wd, _ = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"{h}x{wd} input collapses under kernel {k} stride {stride}")
    xp = np.pad(x.astype(np.float64), ((pad, pad), (pad, pad), (0, 0)))
    wf = w.astype(np.float64)
    acc = np.zeros((oh, ow, w.shape[3]), dtype=np.float64)
    for kh in range(k):
        for kw in range(k):
            win = xp[kh : kh + stride * (oh - 1) + 1 : stride, kw : kw + stride * (ow - 1) + 1 : stride]
            acc += win @ wf[kh, kw]
    return np.rint(acc).astype(np.int64)


def conv_standard(x: QTensor, weights, layer: LayerSpec) -> QTensor:
    """Zero-padded integer convolution, then requantization."""
    w = _check_weights(x, weights, layer)
    acc = conv_accumulate(x.values, w, layer.stride, layer.pad)
    v, signed = requantize(acc, layer.quant)
    return QTensor(v, ACT_BITS, signed)


def pool(x: QTensor, layer: LayerSpec) -> QTensor:
    """Max or average pooling; the output keeps the input's signedness.

    Max pooling pads with -inf; average pooling pads with zeros, counts them
    in the divisor and truncates toward zero.
    """
    v = x.values
    if layer.global_pool:
        s = v.sum(axis=(0, 1), keepdims=True)
        if layer.kind == "pool_max":
            return x.with_values(v.max(axis=(0, 1), keepdims=True))
        n = v.shape[0] * v.shape[1]
        return x.with_values(np.sign(s) * (np.abs(s) // n))
    k, s, p = layer.kernel, layer.stride, layer.pad
    h, w, _ = v.shape
    oh, ow = layer.out_extent(h), layer.out_extent(w)
    if oh < 1 or ow < 1:
        raise ShapeError(f"{h}x{w} input collapses under pool {k} stride {s}")
    if layer.kind == "pool_max":
        fill = np.iinfo(np.int64).min
        vp = np.pad(v, ((p, p), (p, p), (0, 0)), constant_values=fill)
        out = np.full((oh, ow, v.shape[2]), fill, dtype=np.int64)
        for kh in range(k):
            for kw in range(k):
                out = np.maximum(out, vp[kh : kh + s * (oh - 1) + 1 : s, kw : kw + s * (ow - 1) + 1 : s])
        return x.with_values(out)
    vp = np.pad(v, ((p, p), (p, p), (0, 0)))
    acc = np.zeros((oh, ow, v.shape[2]), dtype=np.int64)
    for kh in range(k):
        for kw in range(k):
            acc += vp[kh : kh + s * (oh - 1) + 1 : s, kw : kw + s * (ow - 1) + 1 : s]
    return x.with_values(np.sign(acc) * (np.abs(acc) // (k * k)))


def residual_add(a: QTensor, b: QTensor, quant: Quant) -> QTensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual operands {a.shape} and {b.shape} differ")
    v, signed = requantize(a.values + b.values, quant)
    return QTensor(v, ACT_BITS, signed)


def apply_layer(layer: LayerSpec, operands: list[QTensor], weights=None) -> QTensor:
    """Run one layer on whole tensors (a tile is just a small tensor)."""
    if layer.kind in ("conv", "fc"):
        if weights is None:
            raise ValueError(f"{layer.kind} layer needs weights")
        return conv_standard(operands[0], weights, layer)
    if layer.kind in ("pool_max", "pool_avg"):
        return pool(operands[0], layer)
    if layer.kind == "residual_add":
        return residual_add(operands[0], operands[1], layer.quant)
    return operands[0]


# ---------------------------------------------------------------------------
# tiles


@dataclass(frozen=True)
class TileGrid:
    """Uniform grid of tiles; ``tiles[r][c]`` covers rows ``r*tile_h`` on."""

    tiles: tuple[tuple[QTensor, ...], ...]
    tile_h: int
    tile_w: int

    @property
    def grid(self) -> tuple[int, int]:
        return len(self.tiles), len(self.tiles[0])

    @classmethod
    def split(cls, x: QTensor, grid: tuple[int, int]) -> "TileGrid":
        gh, gw = grid
        if gh < 1 or gw < 1 or x.height % gh or x.width % gw:
            raise ShapeError(f"grid {grid} does not divide map {x.shape[:2]}")
        th, tw = x.height // gh, x.width // gw
        tiles = tuple(
            tuple(x.with_values(x.values[r * th : (r + 1) * th, c * tw : (c + 1) * tw]) for c in range(gw))
            for r in range(gh)
        )
        return cls(tiles, th, tw)

    def assemble(self) -> QTensor:
        first = self.tiles[0][0]
        v = np.concatenate([np.concatenate([t.values for t in row], axis=1) for row in self.tiles], axis=0)
        return first.with_values(v)

    def map(self, fn) -> "TileGrid":
        tiles = tuple(tuple(fn(t, (r, c)) for c, t in enumerate(row)) for r, row in enumerate(self.tiles))
        t0 = tiles[0][0]
        return TileGrid(tiles, t0.height, t0.width)


def conv_blocked(grid: TileGrid, weights, layer: LayerSpec) -> TileGrid:
    """Every tile convolved in isolation, zero padded at its own border."""
    if layer.padding_mode != "block":
        raise ValueError("conv_blocked needs a block-padded layer")
    return grid.map(lambda t, _: conv_standard(t, weights, layer))


def tile_concat(stored: QTensor, current: QTensor, axis: str) -> QTensor:
    """Join two halves; ``stored`` (the earlier tile) takes the lower indices."""
    ax = {"height": 0, "width": 1}.get(axis)
    if ax is None:
        raise ValueError(f"axis must be 'height' or 'width', got {axis!r}")
    other = 1 - ax
    if stored.shape[other] != current.shape[other] or stored.channels != current.channels:
        raise ShapeError(f"cannot concatenate {stored.shape} and {current.shape} along {axis}")
    if (stored.bit_width, stored.signed) != (current.bit_width, current.signed):
        raise ShapeError("halves differ in number format")
    return stored.with_values(np.concatenate([stored.values, current.values], axis=ax))


def tile_split(x: QTensor, axis: str) -> tuple[QTensor, QTensor]:
    ax = {"height": 0, "width": 1}[axis]
    n = x.shape[ax]
    if n % 2:
        raise ShapeError(f"odd extent {n} cannot be split")
    a, b = np.split(x.values, 2, axis=ax)
    return x.with_values(a), x.with_values(b)


# ---------------------------------------------------------------------------
# whole network


def _layer_weights(weights, l):
    if weights is None:
        return None
    try:
        return weights[l]
    except KeyError:
        return None


def run_layer_by_layer(net: NetworkSpec, weights, x: QTensor, grids: list[tuple[int, int]] | None = None) -> QTensor:
    """Full-map execution; layer ``l`` is blocked over ``grids[l]`` (whole map if None)."""
    maps: dict[int, QTensor] = {-1: x}
    last_use = net.last_use()
    for l, layer in enumerate(net.layers):
        ops = [maps[o] for o in net.operands(l)]
        w = _layer_weights(weights, l)
        g = (1, 1) if grids is None else tuple(grids[l])
        if g == (1, 1):
            maps[l] = apply_layer(layer, ops, w)
        else:
            tiled = [TileGrid.split(o, g) for o in ops]
            gh, gw = g
            rows = tuple(
                tuple(apply_layer(layer, [t.tiles[r][c] for t in tiled], w) for c in range(gw)) for r in range(gh)
            )
            maps[l] = TileGrid(rows, rows[0][0].height, rows[0][0].width).assemble()
        for t in list(maps):
            if t != l and last_use[t] <= l:
                del maps[t]
    return maps[len(net.layers) - 1] if net.layers else x


@dataclass(frozen=True)
class ReferenceResult:
    output: QTensor
    layer_by_layer: QTensor

    @property
    def consistent(self) -> bool:
        return self.output == self.layer_by_layer


def run_tiled(net: NetworkSpec, weights, x: QTensor, plan) -> QTensor:
    """Execute ``plan`` in penetrative order, tile by tile."""
    from .lpt import traverse

    if len(plan.layer_tiles) != len(net.layers):
        raise PlanMismatchError(f"plan covers {len(plan.layer_tiles)} layers, network has {len(net.layers)}")
    if tuple(x.shape) != tuple(net.input_shape):
        raise PlanMismatchError(f"input {x.shape} does not match network input {net.input_shape}")
    shapes = infer_shapes(net)
    last_use = net.last_use()
    n_tiled = plan.n_tiled
    top = len(plan.tc_events)
    top_grid = plan.segment_grids()[top]
    final = n_tiled - 1
    inp = TileGrid.split(x, plan.input_grid)
    out_tiles: dict[tuple[int, int], QTensor] = {}
    cur: dict[int, QTensor] = {}
    stack: list[dict[int, QTensor]] = []
    maps: dict[int, QTensor] = {}

    for step in traverse(plan):
        if step.op == "load":
            r, c = step.tile
            cur = {-1: inp.tiles[r][c]}
        elif step.op == "layer":
            l = step.layer
            ops = [cur[o] for o in net.operands(l)]
            cur[l] = apply_layer(net.layers[l], ops, _layer_weights(weights, l))
            cur = {t: v for t, v in cur.items() if last_use[t] > l}
        elif step.op == "store":
            stack.append(cur)
            cur = {}
        elif step.op == "concat":
            stored = stack.pop()
            axis = plan.tc_events[step.event].axis
            if set(stored) != set(cur):
                raise PlanMismatchError(f"TC {step.event}: halves carry different tensors")
            cur = {t: tile_concat(stored[t], cur[t], axis) for t in cur}
        elif step.op == "emit":
            out_tiles[step.tile] = cur[final]
        elif step.op == "head":
            l = step.layer
            if not maps:
                gh, gw = top_grid
                rows = tuple(tuple(out_tiles[(r, c)] for c in range(gw)) for r in range(gh))
                maps[final] = TileGrid(rows, rows[0][0].height, rows[0][0].width).assemble()
            ops = [maps[o] for o in net.operands(l)]
            maps[l] = apply_layer(net.layers[l], ops, _layer_weights(weights, l))
    if n_tiled < len(net.layers):
        return maps[len(net.layers) - 1]
    gh, gw = top_grid
    rows = tuple(tuple(out_tiles[(r, c)] for c in range(gw)) for r in range(gh))
    out = TileGrid(rows, rows[0][0].height, rows[0][0].width).assemble()
    if net.layers and out.shape != tuple(shapes[-1]):
        raise PlanMismatchError(f"assembled output {out.shape}, expected {shapes[-1]}")
    return out


def run_reference(net: NetworkSpec, weights, x: QTensor, plan) -> ReferenceResult:
    """Tiled execution plus the full-map layer-by-layer blocked result for cross-checking."""
    tiled = run_tiled(net, weights, x, plan)
    grids = [t.grid for t in plan.layer_tiles]
    return ReferenceResult(tiled, run_layer_by_layer(net, weights, x, grids))


# ---------------------------------------------------------------------------
# tensor files: raw little-endian values plus a JSON sidecar


def _dtype_for(bit_width: int, signed: bool) -> np.dtype:
    for bits in (8, 16, 32, 64):
        if bit_width <= bits:
            return np.dtype(f"<{'i' if signed else 'u'}{bits // 8}")
    raise ValueError(f"bit width {bit_width} too large")


def save_qtensor(t: QTensor, path: str | Path) -> Path:
    path = Path(path)
    dt = _dtype_for(t.bit_width, t.signed)
    path.write_bytes(t.values.astype(dt).tobytes())
    meta = {"shape": list(t.shape), "bit_width": t.bit_width, "signed": t.signed, "dtype": dt.str, "layout": "HWC"}
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return sidecar


def load_qtensor(path: str | Path) -> QTensor:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    dt = np.dtype(meta["dtype"])
    shape = tuple(meta["shape"])
    data = np.frombuffer(path.read_bytes(), dtype=dt)
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: {data.size} values for shape {shape}")
    return QTensor(data.reshape(shape).astype(np.int64), meta["bit_width"], meta["signed"])
