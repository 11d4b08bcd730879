"""Architectural simulator: three role-swapping CIM cores, the near-memory
pipeline (NMP), TMEM and the WGEN -> WBUF <- MMEM weight path.

The simulator replays a plan's traversal. Each core holds at most one live
tensor tile. A layer reads its input from the iCIM, one weight pixel at a time;
the NMP shifts and accumulates the partial products column by column, then
scales, rectifies and quantizes into the oCIM. The oCIM of one layer is the
iCIM of the next, so activations never move between cores.

Counting conventions (one count per element unless noted):

* ``icim_read``: SRAM row activations of in-situ MACs (K^2 x rows x channel groups)
* ``ocim_write``: results written into a core, including loaded input tiles
* ``ocim_read``: operands read out of a core by the NMP (residual skips, pooling)
* ``tmem_write`` / ``tmem_read``: TC halves parked in and restored from TMEM
* ``wbuf_access`` / ``mmem_read``: masked weights staged per tile-layer
* ``offchip_read`` / ``offchip_write``: network input and final output
* ``cycles``: one per activated row per weight pixel per channel group
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .hnn import Supermask, WeightGenConfig, weight_block
from .lpt import LayerTile, SchedulePlan, Step, traverse
from .netspec import CoreGeometry, LayerSpec, NetworkSpec, QTensor, Quant, infer_shapes, value_range

ACT_BITS = 8
ROLES = ("iCIM", "oCIM", "residual_hold", "idle")


class SimulationError(RuntimeError):
    """A plan broke at run time; after validation this means a simulator bug."""


@dataclass
class AccessCounters:
    icim_read: int = 0
    icim_write: int = 0
    ocim_write: int = 0
    ocim_read: int = 0
    tmem_read: int = 0
    tmem_write: int = 0
    mmem_read: int = 0
    wbuf_access: int = 0
    offchip_read: int = 0
    offchip_write: int = 0
    cycles: int = 0

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def __add__(self, other: "AccessCounters") -> "AccessCounters":
        return AccessCounters(**{n: getattr(self, n) + getattr(other, n) for n in self.names()})

    def __iadd__(self, other: "AccessCounters") -> "AccessCounters":
        for n in self.names():
            setattr(self, n, getattr(self, n) + getattr(other, n))
        return self

    def scaled(self, k: int) -> "AccessCounters":
        return AccessCounters(**{n: getattr(self, n) * k for n in self.names()})

    def to_dict(self) -> dict[str, int]:
        return {n: getattr(self, n) for n in self.names()}

    @property
    def activation_accesses(self) -> int:
        """Activation element moves: core writes/reads outside in-situ MACs plus TMEM."""
        return self.ocim_write + self.ocim_read + self.icim_write + self.tmem_read + self.tmem_write

    def nonnegative(self) -> bool:
        return all(v >= 0 for v in self.to_dict().values())


def sum_counters(parts: Iterable[AccessCounters]) -> AccessCounters:
    total = AccessCounters()
    for p in parts:
        total += p
    return total


def counters_csv(per_layer: dict[int, AccessCounters]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("layer",) + AccessCounters.names())
    for l in sorted(per_layer):
        w.writerow((l,) + tuple(per_layer[l].to_dict().values()))
    return buf.getvalue()


# ---------------------------------------------------------------------------
# closed-form counts


def _elems(shape) -> int:
    return int(math.prod(shape))


def count_layer_accesses(
    layer: LayerSpec,
    tile_cfg: LayerTile | tuple,
    geom: CoreGeometry | None = None,
    *,
    fused_add: bool = False,
    oc_parallel: int = 1,
) -> AccessCounters:
    """Counts for one tile through one layer.

    ``tile_cfg`` is a :class:`LayerTile` or an ``(in_tile, out_tile)`` pair.
    ``fused_add`` adds the skip read of a residual add folded into this conv.
    A residual add that was folded into its conv counts nothing by itself.
    """
    geom = geom or CoreGeometry()
    if isinstance(tile_cfg, LayerTile):
        tin, tout = tile_cfg.in_tile, tile_cfg.out_tile
    else:
        tin, tout = tile_cfg
    c = AccessCounters()
    if min(tin) <= 0 or min(tout) <= 0:
        return c
    n_out = _elems(tout)
    if layer.kind in ("conv", "fc"):
        k2 = layer.kernel * layer.kernel
        rows = k2 * geom.rows_used(*tin) * math.ceil(tout[2] / oc_parallel)
        c.icim_read = rows
        c.cycles = rows
        c.ocim_write = n_out
        c.wbuf_access = c.mmem_read = k2 * tin[2] * tout[2]
        if fused_add:
            c.ocim_read = n_out
    elif layer.kind in ("pool_max", "pool_avg"):
        k2 = 1 if layer.global_pool else layer.kernel * layer.kernel
        c.ocim_read = _elems(tin)
        c.ocim_write = n_out
        c.cycles = k2 * geom.rows_used(*tin)
    elif layer.kind == "residual_add":
        if not fused_add:
            c.ocim_read = 2 * n_out
            c.ocim_write = n_out
            c.cycles = geom.rows_used(*tout)
    return c


def count_plan_accesses(
    net: NetworkSpec, plan: SchedulePlan, geom: CoreGeometry | None = None, *, oc_parallel: int = 1
) -> tuple[AccessCounters, dict[int, AccessCounters]]:
    """Analytic counts for a whole plan, summed the way :func:`simulate` measures them."""
    geom = geom or CoreGeometry()
    per: dict[int, AccessCounters] = {l: AccessCounters() for l in range(-1, len(net.layers))}
    fused = set(plan.fused_adds)
    n_tiled = plan.n_tiled
    in_tile = _tile_shape(net.input_shape, plan.input_grid)
    tiles = {t.layer: t for t in plan.layer_tiles}
    for step in traverse(plan):
        if step.op == "load":
            per[-1].offchip_read += _elems(in_tile)
            per[-1].ocim_write += _elems(in_tile)
        elif step.op == "layer":
            l = step.layer
            if l in fused:
                continue
            per[l] += count_layer_accesses(
                net.layers[l], tiles[l], geom, fused_add=(l + 1) in fused, oc_parallel=oc_parallel
            )
        elif step.op in ("store", "concat"):
            ev = plan.tc_events[step.event]
            n = _stored_elems(net, plan, step.event)
            if step.op == "store":
                per[ev.after_layer].tmem_write += n
            else:
                per[ev.after_layer].tmem_read += n
        elif step.op == "emit" and n_tiled == len(net.layers):
            last = n_tiled - 1
            out = tiles[last].out_tile if n_tiled else in_tile
            per[last].offchip_write += _elems(out)
    for l in range(n_tiled, len(net.layers)):
        per[l] += count_layer_accesses(net.layers[l], tiles[l], geom, oc_parallel=oc_parallel)
    if n_tiled < len(net.layers):
        per[len(net.layers) - 1].offchip_write += _elems(tiles[len(net.layers) - 1].out_tile)
    per = {l: c for l, c in per.items() if any(c.to_dict().values())}
    return sum_counters(per.values()), per


def _tile_shape(shape, grid):
    return (shape[0] // grid[0], shape[1] // grid[1], shape[2])


def _stored_elems(net: NetworkSpec, plan: SchedulePlan, j: int) -> int:
    ev = plan.tc_events[j]
    shapes = infer_shapes(net)
    grid = plan.segment_grids()[j]
    total = 0
    for t in ev.tensors:
        shp = tuple(net.input_shape) if t < 0 else shapes[t]
        total += _elems(_tile_shape(shp, grid))
    return total


# ---------------------------------------------------------------------------
# datapath pieces


@dataclass
class NmpState:
    """Accumulator lanes, one per CIM column, plus the post-processing setup."""

    lanes: int = 8
    acc: np.ndarray | None = None
    quant: Quant = field(default_factory=Quant)

    def reset(self, out_shape: tuple[int, int, int], quant: Quant):
        self.acc = np.zeros(out_shape, dtype=np.float64)
        self.quant = quant

    def post_process(self) -> tuple[np.ndarray, bool]:
        """Per-channel scale, round half-up shift, optional ReLU, saturate."""
        acc = np.rint(self.acc).astype(np.int64)
        m = self.quant.multipliers(acc.shape[-1])
        s = self.quant.shift
        v = acc * m
        if s:
            v = (v + (1 << (s - 1))) >> s
        signed = not self.quant.relu
        lo, hi = value_range(ACT_BITS, signed)
        return np.clip(v, lo, hi), signed


def _taps(n_in: int, n_out: int, stride: int, offset: int):
    """Output/input index pairs for one kernel offset; boundary taps read zero."""
    o = np.arange(n_out)
    i = o * stride + offset
    ok = (i >= 0) & (i < n_in)
    return o[ok], i[ok]


def exec_conv_pass(
    tile: np.ndarray, weight_pixel: tuple[int, int], w_pix: np.ndarray, nmp: NmpState, kernel: int, stride: int
) -> None:
    """One weight pixel through the iCIM: every input pixel meets the
    (C_in, C_out) weight slice, and the NMP adds each partial product into
    the output position shifted by the pixel's offset. Taps falling outside
    the tile contribute nothing (block-convolution inner padding)."""
    kh, kw = weight_pixel
    pad = (kernel - 1) // 2
    pp = tile.astype(np.float64) @ w_pix.astype(np.float64)
    oh, ow = nmp.acc.shape[:2]
    oy, iy = _taps(tile.shape[0], oh, stride, kh - pad)
    ox, ix = _taps(tile.shape[1], ow, stride, kw - pad)
    if oy.size and ox.size:
        nmp.acc[np.ix_(oy, ox)] += pp[np.ix_(iy, ix)]


def _nmp_pool(tile: np.ndarray, layer: LayerSpec) -> np.ndarray:
    if layer.global_pool:
        if layer.kind == "pool_max":
            return tile.max(axis=(0, 1), keepdims=True)
        s = tile.sum(axis=(0, 1), keepdims=True)
        n = tile.shape[0] * tile.shape[1]
        return np.where(s < 0, -((-s) // n), s // n)
    k, st = layer.kernel, layer.stride
    pad = (k - 1) // 2
    oh, ow = layer.out_extent(tile.shape[0]), layer.out_extent(tile.shape[1])
    if layer.kind == "pool_max":
        out = np.full((oh, ow, tile.shape[2]), np.iinfo(np.int64).min, dtype=np.int64)
    else:
        out = np.zeros((oh, ow, tile.shape[2]), dtype=np.int64)
    for kh in range(k):
        oy, iy = _taps(tile.shape[0], oh, st, kh - pad)
        for kw in range(k):
            ox, ix = _taps(tile.shape[1], ow, st, kw - pad)
            if not (oy.size and ox.size):
                continue
            sel = tile[np.ix_(iy, ix)]
            if layer.kind == "pool_max":
                out[np.ix_(oy, ox)] = np.maximum(out[np.ix_(oy, ox)], sel)
            else:
                out[np.ix_(oy, ox)] += sel
    if layer.kind == "pool_avg":
        d = k * k
        out = np.where(out < 0, -((-out) // d), out // d)
    return out


class WeightPath:
    """WGEN regenerates each weight pixel on demand; MMEM masks it into WBUF."""

    def __init__(self, cfg: WeightGenConfig, mask: Supermask, net: NetworkSpec, raw=None):
        self.cfg, self.mask, self.net, self.raw = cfg, mask, net, raw
        self._cache: dict[tuple[int, int, int], np.ndarray] = {}

    def pixel(self, layer: int, kh: int, kw: int) -> np.ndarray:
        key = (layer, kh, kw)
        if key not in self._cache:
            shape = self.net.layers[layer].weight_shape()
            if self.raw is not None:
                w = np.asarray(self.raw[layer])[kh, kw]
            else:
                w = weight_block(self.cfg, layer, shape, kh, kw)
            bits = self.mask.layer_mask(layer, shape)[kh, kw]
            self._cache[key] = w * bits
        return self._cache[key]


@dataclass
class CoreState:
    core: int
    role: str = "idle"
    tensor: int | None = None
    tile: QTensor | None = None

    @property
    def occupancy_bits(self) -> int:
        return 0 if self.tile is None else self.tile.values.size * ACT_BITS


def swap_roles(cores: list[CoreState], roles) -> list[CoreState]:
    """Relabel cores for the next layer; the data never moves."""
    seen = set()
    for cs in cores:
        cs.role = "idle"
    for cid, role in ((roles.icim, "iCIM"), (roles.ocim, "oCIM")):
        if cid in seen:
            raise SimulationError(f"layer {roles.layer}: core {cid} assigned two roles")
        seen.add(cid)
        cores[cid].role = role
    for cid in roles.hold:
        if cid not in seen:
            cores[cid].role = "residual_hold"
    return cores


def exec_tc(stored: dict[int, QTensor], current: dict[int, QTensor], axis: str) -> dict[int, QTensor]:
    """Restore the parked half from TMEM and join it to the current one."""
    if set(stored) != set(current):
        raise SimulationError("TC halves carry different tensors")
    ax = 0 if axis == "height" else 1
    return {t: current[t].with_values(np.concatenate([stored[t].values, current[t].values], axis=ax)) for t in current}


# ---------------------------------------------------------------------------
# the machine


@dataclass
class SimResult:
    output: QTensor
    counters: AccessCounters
    per_layer: dict[int, AccessCounters]
    trace: list[dict] | None = None
    role_log: list[tuple[int, int, int]] = field(default_factory=list)

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(ev, sort_keys=True) + "\n" for ev in self.trace or [])


class Simulator:
    def __init__(
        self,
        net: NetworkSpec,
        plan: SchedulePlan,
        weights_cfg: WeightGenConfig,
        mask: Supermask,
        geom: CoreGeometry | None = None,
        *,
        raw_weights=None,
        oc_parallel: int = 1,
        record_trace: bool = False,
    ):
        self.net, self.plan = net, plan
        self.geom = geom or CoreGeometry()
        self.weights = WeightPath(weights_cfg, mask, net, raw_weights)
        self.oc_parallel = oc_parallel
        self.record_trace = record_trace
        if len(plan.layer_tiles) != len(net.layers):
            raise SimulationError("plan does not describe this network")
        self.fused = set(plan.fused_adds)
        self.last_use = net.last_use()
        self.roles = {r.layer: r for r in plan.core_roles}

    # -- helpers ----------------------------------------------------------

    def _bump(self, layer: int, **kw):
        c = self.per_layer.setdefault(layer, AccessCounters())
        for k, v in kw.items():
            setattr(c, k, getattr(c, k) + int(v))
        if self.trace is not None:
            self._delta.update({k: self._delta.get(k, 0) + int(v) for k, v in kw.items()})

    def _emit_trace(self, step_no: int, step, extra=None):
        if self.trace is None:
            return
        ev = {
            "step": step_no,
            "op": step.op,
            "layer": step.layer,
            "tile": list(step.tile) if step.tile else None,
            "roles": {str(cs.core): cs.role for cs in self.cores},
            "delta": dict(sorted(self._delta.items())),
        }
        if extra:
            ev.update(extra)
        self.trace.append(ev)
        self._delta = {}

    def _core_of(self, tensor: int) -> CoreState:
        for cs in self.cores:
            if cs.tensor == tensor:
                return cs
        raise SimulationError(f"tensor {tensor} is not resident in any core")

    def _place(self, core: int, tensor: int, tile: QTensor, layer: int):
        cs = self.cores[core]
        if cs.tensor is not None and self.last_use[cs.tensor] > layer and cs.tensor != tensor:
            raise SimulationError(f"layer {layer}: core {core} still holds live tensor {cs.tensor}")
        if not self.geom.fits(*tile.shape):
            raise SimulationError(f"layer {layer}: tile {tile.shape} exceeds core capacity")
        cs.tensor, cs.tile = tensor, tile
        self._bump(layer, ocim_write=tile.values.size)

    def _release(self, layer: int):
        for cs in self.cores:
            if cs.tensor is not None and self.last_use[cs.tensor] <= layer:
                cs.tensor, cs.tile = None, None

    # -- layer execution --------------------------------------------------

    def _conv(self, l: int, x: QTensor) -> NmpState:
        layer = self.net.layers[l]
        k = layer.kernel
        oh, ow = layer.out_extent(x.height), layer.out_extent(x.width)
        nmp = NmpState(self.geom.tile_width)
        nmp.reset((oh, ow, layer.out_channels), layer.quant)
        rows = self.geom.rows_used(*x.shape)
        groups = math.ceil(layer.out_channels / self.oc_parallel)
        for kh in range(k):
            for kw in range(k):
                w_pix = self.weights.pixel(l, kh, kw)
                self._bump(l, wbuf_access=w_pix.size, mmem_read=w_pix.size)
                exec_conv_pass(x.values, (kh, kw), w_pix, nmp, k, layer.stride)
                self._bump(l, icim_read=rows * groups, cycles=rows * groups)
        return nmp

    def _run_layer(self, l: int):
        layer = self.net.layers[l]
        if l in self.fused:
            return
        roles = self.roles[l]
        swap_roles(self.cores, roles)
        self.role_log.append((l, roles.icim, roles.ocim))
        src = self._core_of(self.net.source(l))
        if src.core != roles.icim:
            raise SimulationError(f"layer {l}: input sits in core {src.core}, plan says iCIM {roles.icim}")
        x = src.tile
        out_id = l
        if layer.kind in ("conv", "fc"):
            nmp = self._conv(l, x)
            if (l + 1) in self.fused:
                add = self.net.layers[l + 1]
                v, _ = nmp.post_process()
                skip = self._core_of(self.net.skip_source(l + 1)).tile
                self._bump(l, ocim_read=skip.values.size)
                nmp.acc = (v + skip.values).astype(np.float64)
                nmp.quant = add.quant
                out_id = l + 1
            v, signed = nmp.post_process()
            out = QTensor(v, ACT_BITS, signed)
        elif layer.kind in ("pool_max", "pool_avg"):
            self._bump(l, ocim_read=x.values.size)
            k2 = 1 if layer.global_pool else layer.kernel ** 2
            self._bump(l, cycles=k2 * self.geom.rows_used(*x.shape))
            out = x.with_values(_nmp_pool(x.values, layer))
        elif layer.kind == "residual_add":
            skip = self._core_of(self.net.skip_source(l)).tile
            self._bump(l, ocim_read=x.values.size + skip.values.size, cycles=self.geom.rows_used(*x.shape))
            nmp = NmpState(self.geom.tile_width)
            nmp.reset(x.shape, layer.quant)
            nmp.acc = (x.values + skip.values).astype(np.float64)
            v, signed = nmp.post_process()
            out = QTensor(v, ACT_BITS, signed)
        else:
            out = x
        self._place(roles.ocim, out_id, out, l)
        self._release(out_id)

    # -- public -----------------------------------------------------------

    def run(self, x: QTensor) -> SimResult:
        net, plan = self.net, self.plan
        if tuple(x.shape) != tuple(net.input_shape):
            raise SimulationError(f"input {x.shape} does not match network input {net.input_shape}")
        self.cores = [CoreState(i) for i in range(self.geom.core_count)]
        self.per_layer: dict[int, AccessCounters] = {}
        self.trace = [] if self.record_trace else None
        self._delta: dict[str, int] = {}
        self.role_log: list[tuple[int, int, int]] = []
        n_tiled = plan.n_tiled
        final = n_tiled - 1
        gh0, gw0 = plan.input_grid
        th, tw = x.height // gh0, x.width // gw0
        tmem: list[dict[int, QTensor]] = []
        tmem_bytes = 0
        emitted: dict[tuple[int, int], QTensor] = {}

        for i, step in enumerate(traverse(plan)):
            extra = None
            if step.op == "load":
                r, c = step.tile
                tile = x.with_values(x.values[r * th : (r + 1) * th, c * tw : (c + 1) * tw])
                for cs in self.cores:
                    cs.tensor = cs.tile = None
                self._bump(-1, offchip_read=tile.values.size)
                self._place(0, -1, tile, -1)
            elif step.op == "layer":
                self._run_layer(step.layer)
            elif step.op == "store":
                ev = plan.tc_events[step.event]
                live = {cs.tensor: cs.tile for cs in self.cores if cs.tensor is not None}
                if set(live) != set(ev.tensors):
                    raise SimulationError(f"TC {step.event}: cores hold {sorted(live)}, plan stores {ev.tensors}")
                n = sum(t.values.size for t in live.values())
                tmem_bytes += n * ACT_BITS // 8
                if tmem_bytes > self.geom.tmem_capacity:
                    raise SimulationError(f"TMEM overflow: {tmem_bytes} B > {self.geom.tmem_capacity} B")
                tmem.append({"tiles": live, "cores": {cs.tensor: cs.core for cs in self.cores if cs.tensor is not None}})
                self._bump(ev.after_layer, tmem_write=n)
                for cs in self.cores:
                    cs.tensor = cs.tile = None
            elif step.op == "concat":
                ev = plan.tc_events[step.event]
                if not tmem:
                    raise SimulationError("TMEM underflow")
                parked = tmem.pop()
                n = sum(t.values.size for t in parked["tiles"].values())
                tmem_bytes -= n * ACT_BITS // 8
                self._bump(ev.after_layer, tmem_read=n)
                current = {cs.tensor: cs.tile for cs in self.cores if cs.tensor is not None}
                joined = exec_tc(parked["tiles"], current, ev.axis)
                for t, tile in joined.items():
                    cs = self._core_of(t)
                    if parked["cores"][t] != cs.core:
                        raise SimulationError(f"TC {step.event}: halves of tensor {t} sit in different cores")
                    if not self.geom.fits(*tile.shape):
                        raise SimulationError(f"TC {step.event}: doubled tile {tile.shape} exceeds a core")
                    cs.tile = tile
                extra = {"tmem_bytes": tmem_bytes}
            elif step.op == "emit":
                out = self._core_of(final if n_tiled else -1).tile
                emitted[step.tile] = out
                if n_tiled == len(net.layers):
                    self._bump(max(final, -1) if n_tiled else -1, offchip_write=out.values.size)
            elif step.op == "head":
                if step.layer == n_tiled:
                    self._assemble_head_input(emitted, final)
                self._run_head(step.layer)
            self._emit_trace(i, step, extra)

        if tmem:
            raise SimulationError("TMEM not empty at end of run")
        if n_tiled < len(net.layers):
            output = self.head_maps[len(net.layers) - 1]
            self._bump(len(net.layers) - 1, offchip_write=output.values.size)
            # the head output leaves the chip after the last step
            self._emit_trace(i + 1, Step("writeback", len(net.layers) - 1))
        else:
            output = self._assemble(emitted)
        total = sum_counters(self.per_layer.values())
        return SimResult(output, total, dict(sorted(self.per_layer.items())), self.trace, self.role_log)

    def _assemble(self, emitted) -> QTensor:
        gh, gw = self.plan.segment_grids()[-1]
        rows = [np.concatenate([emitted[(r, c)].values for c in range(gw)], axis=1) for r in range(gh)]
        t0 = emitted[(0, 0)]
        return t0.with_values(np.concatenate(rows, axis=0))

    def _assemble_head_input(self, emitted, final):
        self.head_maps = {final: self._assemble(emitted)}

    def _run_head(self, l: int):
        """Head layers work on whole maps; a global pool streams the emitted tiles."""
        layer = self.net.layers[l]
        x = self.head_maps[self.net.source(l)]
        if layer.kind in ("conv", "fc"):
            nmp = self._conv(l, x)
            v, signed = nmp.post_process()
            out = QTensor(v, ACT_BITS, signed)
        elif layer.kind in ("pool_max", "pool_avg"):
            k2 = 1 if layer.global_pool else layer.kernel ** 2
            self._bump(l, ocim_read=x.values.size, cycles=k2 * self.geom.rows_used(*x.shape))
            out = x.with_values(_nmp_pool(x.values, layer))
        elif layer.kind == "residual_add":
            skip = self.head_maps[self.net.skip_source(l)]
            self._bump(l, ocim_read=2 * x.values.size, cycles=self.geom.rows_used(*x.shape))
            nmp = NmpState(self.geom.tile_width)
            nmp.reset(x.shape, layer.quant)
            nmp.acc = (x.values + skip.values).astype(np.float64)
            v, signed = nmp.post_process()
            out = QTensor(v, ACT_BITS, signed)
        else:
            out = x
        if not self.geom.fits(*out.shape):
            raise SimulationError(f"head layer {l}: output {out.shape} exceeds a core")
        self._bump(l, ocim_write=out.values.size)
        self.head_maps[l] = out


def simulate(
    net: NetworkSpec,
    plan: SchedulePlan,
    weights_cfg: WeightGenConfig,
    mask: Supermask,
    x: QTensor,
    *,
    geom: CoreGeometry | None = None,
    raw_weights=None,
    oc_parallel: int = 1,
    trace: bool = False,
) -> SimResult:
    sim = Simulator(
        net, plan, weights_cfg, mask, geom, raw_weights=raw_weights, oc_parallel=oc_parallel, record_trace=trace
    )
    return sim.run(x)
