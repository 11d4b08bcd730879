"""Layer-penetrative tiling: schedule planning, validation and footprint analysis.

A plan partitions every tiled layer's feature map into a uniform grid of tiles.
Each input tile is carried through all tiled layers before the next one starts.
Block convolution keeps the grid fixed through a layer; strided layers shrink
the tile, and tile concatenation (TC) halves the grid count along one axis,
doubling the tile. Layers from ``head_start`` on (global pooling and fc) run on
whole maps after all tiles have finished.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

from .netspec import CoreGeometry, NetworkSpec, infer_shapes

AXES = ("height", "width")


class InfeasiblePlanError(ValueError):
    """No tile configuration fits the cores; ``layer`` names the culprit."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


@dataclass(frozen=True)
class LayerTile:
    layer: int
    in_tile: tuple[int, int, int]
    out_tile: tuple[int, int, int]
    grid: tuple[int, int]
    segment: int


@dataclass(frozen=True)
class TCEvent:
    after_layer: int
    axis: str
    tensors: tuple[int, ...]
    stored_bytes: int


@dataclass(frozen=True)
class CoreRoles:
    layer: int
    icim: int
    ocim: int
    hold: tuple[int, ...] = ()
    fused: bool = False


@dataclass(frozen=True)
class ResidualBuffer:
    add_layer: int
    source: int
    where: str
    core: int


@dataclass
class SchedulePlan:
    network: str
    input_grid: tuple[int, int]
    layer_tiles: list[LayerTile]
    tc_events: list[TCEvent]
    core_roles: list[CoreRoles]
    residual_buffering: list[ResidualBuffer]
    tmem_bytes_required: int
    recompute_segments: list[tuple[int, int]]
    head_start: int | None
    fused_adds: tuple[int, ...] = ()
    tc_placement: str = "after_residual"
    warnings: list[str] = field(default_factory=list)

    @property
    def n_tiled(self) -> int:
        return len(self.layer_tiles) if self.head_start is None else self.head_start

    @property
    def penetration_depth(self) -> int:
        return self.n_tiled

    def segment_grids(self) -> list[tuple[int, int]]:
        grids = [tuple(self.input_grid)]
        for ev in self.tc_events:
            gh, gw = grids[-1]
            grids.append((gh // 2, gw) if ev.axis == "height" else (gh, gw // 2))
        return grids

    def segment_of(self, layer: int) -> int:
        return sum(1 for ev in self.tc_events if ev.after_layer < layer)

    def tile_count(self, layer: int) -> int:
        gh, gw = self.layer_tiles[layer].grid
        return gh * gw

    def to_dict(self) -> dict:
        d = asdict(self)
        d["penetration_depth"] = self.penetration_depth
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SchedulePlan":
        return cls(
            network=d["network"],
            input_grid=tuple(d["input_grid"]),
            layer_tiles=[
                LayerTile(t["layer"], tuple(t["in_tile"]), tuple(t["out_tile"]), tuple(t["grid"]), t["segment"])
                for t in d["layer_tiles"]
            ],
            tc_events=[
                TCEvent(e["after_layer"], e["axis"], tuple(e["tensors"]), e["stored_bytes"])
                for e in d["tc_events"]
            ],
            core_roles=[
                CoreRoles(r["layer"], r["icim"], r["ocim"], tuple(r["hold"]), r["fused"])
                for r in d["core_roles"]
            ],
            residual_buffering=[ResidualBuffer(**r) for r in d["residual_buffering"]],
            tmem_bytes_required=d["tmem_bytes_required"],
            recompute_segments=[tuple(s) for s in d["recompute_segments"]],
            head_start=d["head_start"],
            fused_adds=tuple(d.get("fused_adds", ())),
            tc_placement=d.get("tc_placement", "after_residual"),
            warnings=list(d.get("warnings", [])),
        )


# ---------------------------------------------------------------------------
# network structure helpers


def head_start(net: NetworkSpec) -> int | None:
    for i, layer in enumerate(net.layers):
        if layer.global_pool or layer.kind == "fc":
            return i
    return None


def fused_adds(net: NetworkSpec) -> tuple[int, ...]:
    """Residual adds folded into the NMP post-processing of the conv before them."""
    consumers = net.consumers()
    out = []
    for i, layer in enumerate(net.layers):
        if layer.kind != "residual_add" or i == 0:
            continue
        prev = net.layers[i - 1]
        if prev.weighted and net.source(i) == i - 1 and consumers[i - 1] == [i] and net.skip_source(i) != i - 1:
            out.append(i)
    return tuple(out)


def _map_shape(net: NetworkSpec, shapes, t: int):
    return tuple(net.input_shape) if t < 0 else shapes[t]


def _live_after(net: NetworkSpec, last_use: dict, l: int) -> tuple[int, ...]:
    return tuple(t for t in range(-1, l + 1) if last_use[t] > l)


# ---------------------------------------------------------------------------
# trajectory


@dataclass
class _Trajectory:
    tiles: list[LayerTile]
    events: list[TCEvent]
    problems: list[tuple[int, str]]
    warnings: list[str]


def _tile_of(shape, grid):
    h, w, c = shape
    gh, gw = grid
    if h % gh or w % gw:
        return None
    return (h // gh, w // gw, c)


def _layer_problem(net, shapes, geom, l, grid):
    """Check one tiled layer under ``grid``; returns (LayerTile dims, problem)."""
    layer = net.layers[l]
    tin = _tile_of(_map_shape(net, shapes, net.source(l)), grid)
    tout = _tile_of(shapes[l], grid)
    if tin is None or tout is None:
        return None, None, f"grid {grid} does not divide the maps of layer {l}"
    if layer.spatial or layer.stride > 1:
        if layer.out_extent(tin[0]) != tout[0] or layer.out_extent(tin[1]) != tout[1]:
            return tin, tout, f"layer {l}: tile {tin[:2]} cannot be strided to {tout[:2]}"
        if layer.padding_mode == "standard" and layer.spatial and grid != (1, 1):
            return tin, tout, f"layer {l}: standard padding needs the whole map in one tile"
    for tag, t in (("input", tin), ("output", tout)):
        if not geom.fits(*t):
            return tin, tout, f"layer {l}: {tag} tile {t} exceeds one core"
    return tin, tout, None


def _remaining_ok(net, shapes, geom, start, stop, grid) -> bool:
    for l in range(start, stop):
        _, _, prob = _layer_problem(net, shapes, geom, l, grid)
        if prob:
            return False
    return True


def _trajectory(net, shapes, geom, n_tiled, grid0, placement, tmem_cap, fixed_events=None) -> _Trajectory:
    last_use = net.last_use()
    tiles: list[LayerTile] = []
    events: list[TCEvent] = []
    problems: list[tuple[int, str]] = []
    grid = tuple(grid0)
    in_tile = _tile_of(tuple(net.input_shape), grid)
    if in_tile is None:
        return _Trajectory([], [], [(0, f"grid {grid} does not divide the input")], [])
    cap = [in_tile[0], in_tile[1]]
    pending = False
    shrink_dims = None
    tmem_sum = 0
    last_axis = "width"
    fixed = list(fixed_events or [])

    def next_structure(l):
        """(next residual add, next shrinking layer) after ``l`` within the tiled part."""
        nxt_add = nxt_shrink = None
        for j in range(l + 1, n_tiled):
            lj = net.layers[j]
            if nxt_add is None and lj.kind == "residual_add":
                nxt_add = j
            if nxt_shrink is None and lj.stride > 1:
                nxt_shrink = j
        return nxt_add, nxt_shrink

    for l in range(n_tiled):
        layer = net.layers[l]
        tin, tout, prob = _layer_problem(net, shapes, geom, l, grid)
        if tin is None:
            problems.append((l, prob))
            break
        if prob:
            problems.append((l, prob))
        tiles.append(LayerTile(l, tin, tout, grid, len(events)))
        cap = [max(cap[0], tin[0], tout[0]), max(cap[1], tin[1], tout[1])]
        if tout[0] < tin[0] or tout[1] < tin[1]:
            pending = True
            shrink_dims = shapes[l][:2]

        candidates: list[str] = []
        if fixed:
            candidates = [ax for (k, ax) in fixed if k == l]
        elif pending and placement != "none" and l < n_tiled - 1:
            live = _live_after(net, last_use, l)
            shrunk = all(_map_shape(net, shapes, t)[:2] == shrink_dims for t in live)
            if shrunk:
                nxt_add, nxt_shrink = next_structure(l)
                if placement == "after_stride":
                    go = True
                else:
                    go = layer.kind == "residual_add" or nxt_add is None or (
                        nxt_shrink is not None and nxt_add > nxt_shrink
                    )
                if go:
                    candidates = ["auto"]
                    pending = False
        if not candidates:
            continue

        live = _live_after(net, last_use, l)
        auto = candidates == ["auto"]
        queue = list(candidates)
        while queue:
            want = queue.pop(0)
            cur = tiles[-1].out_tile
            if auto:
                options = []
                for ax in AXES:
                    i = AXES.index(ax)
                    g = grid[i]
                    if g % 2 == 0 and cur[i] * 2 <= cap[i]:
                        options.append(ax)
                if not options:
                    break
                # keep tiles near-square; ties alternate axes
                options.sort(key=lambda ax: (cur[AXES.index(ax)], ax == last_axis))
            else:
                options = [want]
            placed = False
            for ax in options:
                i = AXES.index(ax)
                if grid[i] % 2:
                    if not auto:
                        problems.append((l, f"TC after layer {l}: grid {grid} is odd along {ax}"))
                    continue
                new_grid = (grid[0] // 2, grid[1]) if i == 0 else (grid[0], grid[1] // 2)
                stored = sum(
                    math.prod(_tile_of(_map_shape(net, shapes, t), grid)) for t in live
                )
                doubled_ok = all(geom.fits(*_tile_of(_map_shape(net, shapes, t), new_grid)) for t in live)
                if auto:
                    if not doubled_ok or not _remaining_ok(net, shapes, geom, l + 1, n_tiled, new_grid):
                        continue
                    if tmem_cap is not None and tmem_sum + stored > tmem_cap:
                        continue
                events.append(TCEvent(l, ax, live, stored))
                tmem_sum += stored
                grid = new_grid
                last_axis = ax
                placed = True
                break
            if auto and placed:
                queue = ["auto"]
    return _Trajectory(tiles, events, problems, [])


# ---------------------------------------------------------------------------
# core role allocation


def _assign_cores(net: NetworkSpec, fused: tuple[int, ...], core_count: int):
    last_use = net.last_use()
    fused_set = set(fused)
    cores: dict[int, int | None] = {c: None for c in range(core_count)}
    cores[0] = -1
    roles: list[CoreRoles] = []
    buffers: list[ResidualBuffer] = []
    problems: list[tuple[int, str]] = []

    def where(t):
        for c, held in cores.items():
            if held == t:
                return c
        return None

    for l, layer in enumerate(net.layers):
        if l in fused_set:
            prev = roles[-1]
            roles.append(CoreRoles(l, prev.icim, prev.ocim, prev.hold, True))
            continue
        out_tensor = l
        operands = list(net.operands(l))
        if l + 1 in fused_set:
            out_tensor = l + 1
            operands.append(net.skip_source(l + 1))
        src_core = where(net.source(l))
        if src_core is None:
            problems.append((l, f"layer {l}: input tensor {net.source(l)} is not resident in any core"))
            break
        busy = set()
        for c, held in cores.items():
            if held is None:
                continue
            if held in operands or last_use[held] >= l:
                busy.add(c)
        free = [c for c in sorted(cores) if c not in busy]
        if not free:
            problems.append((l, f"layer {l}: more than {core_count} live tiles"))
            break
        ocim = free[0]
        hold = tuple(
            c for c in sorted(busy) if c != src_core
        )
        if layer.kind == "residual_add" or l + 1 in fused_set:
            add = l if layer.kind == "residual_add" else l + 1
            skip_core = where(net.skip_source(add))
            if skip_core is None:
                problems.append((add, f"layer {add}: residual source is not resident"))
                break
            buffers.append(ResidualBuffer(add, net.skip_source(add), "core", skip_core))
        roles.append(CoreRoles(l, src_core, ocim, hold, False))
        cores[ocim] = out_tensor
        for c, held in cores.items():
            if held is not None and c != ocim and last_use[held] <= l and held != out_tensor:
                cores[c] = None
    return roles, buffers, problems


# ---------------------------------------------------------------------------
# planning


def _grid_candidates(h: int, w: int):
    ths = [d for d in range(h, 0, -1) if h % d == 0]
    tws = [d for d in range(w, 0, -1) if w % d == 0]
    cands = [(th, tw) for th in ths for tw in tws]
    cands.sort(key=lambda t: (-t[0] * t[1], abs(math.log2(t[0] / t[1])), -t[0]))
    return [(h // th, w // tw) for th, tw in cands]


def plan_lpt(
    net: NetworkSpec,
    geom: CoreGeometry | None = None,
    *,
    tc_placement: str = "after_residual",
    tile: tuple[int, int] | None = None,
    tc_events: list[tuple[int, str]] | None = None,
    tmem_capacity: int | None | str = "geometry",
    min_extent: int = 4,
) -> SchedulePlan:
    """Greedy LPT plan: the largest input tile whose trajectory fits the cores.

    After a strided layer shrinks the tile, TC doubles it again (up to the
    pre-shrink extent) wherever the doubled tiles still fit a core and TMEM.
    ``tc_placement`` puts that TC after the next residual add
    (``"after_residual"``) or as soon as every live tensor is strided
    (``"after_stride"``). ``tile`` forces the input tile size and ``tc_events``
    forces explicit ``(after_layer, axis)`` TC events.
    """
    geom = geom or CoreGeometry()
    if tc_placement not in ("after_residual", "after_stride", "none"):
        raise ValueError(f"unknown tc_placement {tc_placement!r}")
    shapes = infer_shapes(net)
    hs = head_start(net)
    n_tiled = len(net.layers) if hs is None else hs
    tmem_cap = geom.tmem_capacity if tmem_capacity == "geometry" else tmem_capacity
    H, W, _ = net.input_shape

    if tile is not None:
        if H % tile[0] or W % tile[1]:
            raise InfeasiblePlanError(f"tile {tile} does not divide input {H}x{W}", 0)
        grids = [(H // tile[0], W // tile[1])]
    else:
        grids = _grid_candidates(H, W)

    fused = fused_adds(net)
    roles, buffers, role_problems = _assign_cores(net, fused, geom.core_count)
    if role_problems:
        l, msg = role_problems[0]
        raise InfeasiblePlanError(msg, l)

    chosen = None
    last = None
    for g in grids:
        traj = _trajectory(net, shapes, geom, n_tiled, g, tc_placement, tmem_cap, tc_events)
        if last is None or len(traj.tiles) > len(last.tiles):
            last = traj
        if not traj.problems and len(traj.tiles) == n_tiled:
            chosen, grid0 = traj, g
            break
    if chosen is None:
        l, msg = last.problems[0] if last and last.problems else (0, "no tile configuration fits")
        raise InfeasiblePlanError(f"infeasible: {msg}", l)

    tiles = list(chosen.tiles)
    for l in range(n_tiled, len(net.layers)):
        tin = _map_shape(net, shapes, net.source(l))
        tiles.append(LayerTile(l, tuple(tin), tuple(shapes[l]), (1, 1), -1))
        # a global pool accumulates tile by tile in the NMP, so only its output must fit
        streamed = net.layers[l].global_pool
        if not ((streamed or geom.fits(*tin)) and geom.fits(*shapes[l])):
            raise InfeasiblePlanError(f"infeasible: head layer {l} map exceeds one core", l)

    warnings = []
    for t in tiles[:n_tiled]:
        layer = net.layers[t.layer]
        if layer.kind == "conv" and layer.kernel > 1 and t.grid != (1, 1):
            if min(t.in_tile[0], t.in_tile[1]) < min_extent:
                warnings.append(
                    f"layer {t.layer}: conv{layer.kernel}x{layer.kernel} on a {t.in_tile[0]}x{t.in_tile[1]} tile"
                )

    events = chosen.events
    return SchedulePlan(
        network=net.name,
        input_grid=tuple(grid0),
        layer_tiles=tiles,
        tc_events=events,
        core_roles=roles,
        residual_buffering=buffers,
        tmem_bytes_required=tmem_requirement(events),
        recompute_segments=[(0, ev.after_layer) for ev in events],
        head_start=hs,
        fused_adds=fused,
        tc_placement=tc_placement if tc_events is None else "explicit",
        warnings=warnings,
    )


def tmem_requirement(events) -> int:
    # every TC nests all earlier ones, so the worst case holds one stored half per event
    return sum(ev.stored_bytes for ev in events)


# ---------------------------------------------------------------------------
# traversal


@dataclass(frozen=True)
class Step:
    op: str  # load | layer | store | concat | emit | head
    layer: int | None = None
    tile: tuple[int, int] | None = None
    event: int | None = None


def segment_layers(plan: SchedulePlan) -> list[range]:
    bounds = [-1] + [ev.after_layer for ev in plan.tc_events] + [plan.n_tiled - 1]
    return [range(bounds[j] + 1, bounds[j + 1] + 1) for j in range(len(bounds) - 1)]


def traverse(plan: SchedulePlan) -> Iterator[Step]:
    """Execution order of a plan: per output tile, penetrate, concatenating on the way."""
    grids = plan.segment_grids()
    segs = segment_layers(plan)

    def walk(j, tile):
        if j == 0:
            yield Step("load", tile=tile)
        else:
            ev = plan.tc_events[j - 1]
            r, c = tile
            a, b = ((2 * r, c), (2 * r + 1, c)) if ev.axis == "height" else ((r, 2 * c), (r, 2 * c + 1))
            yield from walk(j - 1, a)
            yield Step("store", event=j - 1, tile=a)
            yield from walk(j - 1, b)
            yield Step("concat", event=j - 1, tile=tile)
        for l in segs[j]:
            yield Step("layer", layer=l, tile=tile)

    top = len(segs) - 1
    gh, gw = grids[top]
    for r in range(gh):
        for c in range(gw):
            yield from walk(top, (r, c))
            yield Step("emit", tile=(r, c))
    for l in range(plan.n_tiled, len(plan.layer_tiles)):
        yield Step("head", layer=l)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    step: int
    kind: str
    message: str


def validate_plan(plan: SchedulePlan, net: NetworkSpec, geom: CoreGeometry | None = None) -> list[Violation]:
    """Replay the plan's liveness and report every broken invariant (empty = ok)."""
    geom = geom or CoreGeometry()
    out: list[Violation] = []
    try:
        shapes = infer_shapes(net)
    except ValueError as exc:
        return [Violation(0, "shape", str(exc))]
    if len(plan.layer_tiles) != len(net.layers):
        return [Violation(0, "structure", f"plan covers {len(plan.layer_tiles)} layers, network has {len(net.layers)}")]
    n_tiled = plan.n_tiled
    if plan.head_start != head_start(net):
        out.append(Violation(0, "structure", "head_start disagrees with the network"))
    last_use = net.last_use()

    grid = tuple(plan.input_grid)
    events_after = {}
    for j, ev in enumerate(plan.tc_events):
        events_after.setdefault(ev.after_layer, []).append((j, ev))
    for l, t in enumerate(plan.layer_tiles):
        layer = net.layers[l]
        if t.layer != l:
            out.append(Violation(l, "structure", f"entry {l} describes layer {t.layer}"))
        if l < n_tiled:
            if tuple(t.grid) != grid:
                out.append(Violation(l, "grid", f"layer {l}: grid {t.grid}, expected {grid}"))
            src_shape = _map_shape(net, shapes, net.source(l))
            g = tuple(t.grid)
            for tag, tile, shape in (("input", t.in_tile, src_shape), ("output", t.out_tile, shapes[l])):
                if (tile[0] * g[0], tile[1] * g[1], tile[2]) != tuple(shape):
                    out.append(Violation(l, "grid", f"layer {l}: {tag} tile {tile} x grid {g} != map {shape}"))
            if layer.stride > 1 or layer.spatial:
                if (layer.out_extent(t.in_tile[0]), layer.out_extent(t.in_tile[1])) != tuple(t.out_tile[:2]):
                    out.append(Violation(l, "stride", f"layer {l}: tile {t.in_tile[:2]} does not stride to {t.out_tile[:2]}"))
                if layer.padding_mode == "standard" and layer.spatial and g != (1, 1):
                    out.append(Violation(l, "padding", f"layer {l}: standard padding on a tiled map"))
        for tag, tile in (("input", t.in_tile), ("output", t.out_tile)):
            if tag == "input" and layer.global_pool:
                continue
            bits = math.prod(tile) * geom.precision
            if bits > geom.core_capacity or geom.rows_used(*tile) > geom.tile_height:
                out.append(
                    Violation(l, "capacity", f"layer {l}: {tag} tile {tile} needs {bits} bits > {geom.core_capacity}")
                )
        for j, ev in events_after.get(l, []):
            i = AXES.index(ev.axis) if ev.axis in AXES else None
            if i is None or grid[i] % 2:
                out.append(Violation(l, "tc", f"TC {j}: cannot halve grid {grid} along {ev.axis}"))
                continue
            live = _live_after(net, last_use, l)
            if tuple(ev.tensors) != live:
                out.append(Violation(l, "tc", f"TC {j}: concatenates {ev.tensors}, live tensors are {live}"))
            stored = sum(math.prod(_tile_of(_map_shape(net, shapes, x), grid) or (0,)) for x in live)
            if stored != ev.stored_bytes:
                out.append(Violation(l, "tmem", f"TC {j}: stores {stored} B, plan says {ev.stored_bytes}"))
            grid = (grid[0] // 2, grid[1]) if i == 0 else (grid[0], grid[1] // 2)
            for x in live:
                dt = _tile_of(_map_shape(net, shapes, x), grid)
                if dt is None or not geom.fits(*dt):
                    out.append(Violation(l, "capacity", f"TC {j}: doubled tile of tensor {x} exceeds one core"))
        if l >= n_tiled and tuple(t.grid) != (1, 1):
            out.append(Violation(l, "grid", f"head layer {l} must run on the whole map"))
    for ev in plan.tc_events:
        if ev.after_layer >= n_tiled - 1 or ev.after_layer < 0:
            out.append(Violation(ev.after_layer, "tc", f"TC after layer {ev.after_layer} is outside the tiled layers"))

    # TMEM liveness replay over the actual traversal
    need = 0
    occ = 0
    over_at = None
    stack = []
    for k, step in enumerate(traverse(plan)):
        if step.op == "store":
            occ += plan.tc_events[step.event].stored_bytes
            stack.append(step.event)
            need = max(need, occ)
            if over_at is None and occ > plan.tmem_bytes_required:
                over_at = k
        elif step.op == "concat":
            if not stack or stack[-1] != step.event:
                out.append(Violation(k, "tmem", f"step {k}: concat of TC {step.event} without a stored half"))
                break
            stack.pop()
            occ -= plan.tc_events[step.event].stored_bytes
        if k > 200_000:
            break
    if need > plan.tmem_bytes_required:
        out.append(Violation(over_at, "tmem", f"TC needs {need} B of TMEM, plan reserves {plan.tmem_bytes_required}"))
    if plan.tmem_bytes_required > geom.tmem_capacity:
        out.append(
            Violation(0, "tmem", f"plan reserves {plan.tmem_bytes_required} B, TMEM holds {geom.tmem_capacity}")
        )

    # core roles
    fused = set(plan.fused_adds)
    if tuple(plan.fused_adds) != fused_adds(net):
        out.append(Violation(0, "roles", "fused residual adds disagree with the network"))
    if len(plan.core_roles) != len(net.layers):
        out.append(Violation(0, "roles", "core role sequence length mismatch"))
        return out
    cores: dict[int, int | None] = {c: None for c in range(geom.core_count)}
    cores[0] = -1
    for l, r in enumerate(plan.core_roles):
        if l in fused:
            prev = plan.core_roles[l - 1]
            if (r.icim, r.ocim) != (prev.icim, prev.ocim):
                out.append(Violation(l, "roles", f"fused add {l} must share its conv's cores"))
            continue
        if not (0 <= r.icim < geom.core_count and 0 <= r.ocim < geom.core_count) or r.icim == r.ocim:
            out.append(Violation(l, "roles", f"layer {l}: bad iCIM/oCIM pair ({r.icim}, {r.ocim})"))
            continue
        src = net.source(l)
        if cores.get(r.icim) != src:
            out.append(Violation(l, "roles", f"layer {l}: iCIM {r.icim} holds {cores.get(r.icim)}, input is {src}"))
        operands = set(net.operands(l))
        out_tensor = l
        if l + 1 in fused:
            operands.add(net.skip_source(l + 1))
            out_tensor = l + 1
        for op in operands:
            if op not in cores.values():
                out.append(Violation(l, "roles", f"layer {l}: operand {op} is not resident"))
        held = cores.get(r.ocim)
        if held is not None and (held in operands or last_use[held] >= l):
            out.append(Violation(l, "roles", f"layer {l}: oCIM {r.ocim} still holds live tensor {held}"))
        if l > 0 and src == l - 1 and (l - 1) not in fused and plan.core_roles[l - 1].ocim != r.icim:
            out.append(Violation(l, "roles", f"layer {l}: input was produced in core {plan.core_roles[l - 1].ocim}, not iCIM {r.icim}"))
        cores[r.ocim] = out_tensor
        for c, h in cores.items():
            if h is not None and c != r.ocim and last_use[h] <= l:
                cores[c] = None
        live = sum(1 for h in cores.values() if h is not None)
        if live > geom.core_count:
            out.append(Violation(l, "roles", f"layer {l}: {live} live tiles"))
    return out


# ---------------------------------------------------------------------------
# footprint


@dataclass
class FootprintReport:
    mode: str
    max_live_activation_bytes: int
    curve: list[int]
    definition: str = ""

    def __post_init__(self):
        if self.curve and self.max_live_activation_bytes != max(self.curve):
            raise ValueError("max must equal the curve maximum")


def _bytes(shape) -> int:
    return math.prod(shape)


def max_activation(
    net: NetworkSpec,
    mode: str,
    geom: CoreGeometry | None = None,
    plan: SchedulePlan | None = None,
    cl_depth: int = 3,
) -> FootprintReport:
    """Peak activation storage under one of three processing flows.

    * ``layer_by_layer``: the largest single output feature map.
    * ``cross_layer``: depth-first fusion of ``cl_depth`` consecutive layers;
      each group's output map is materialized, internal maps keep only the
      kernel-height row band the next layer reads, and residual sources that
      cross a group boundary stay materialized.
    * ``lpt``: the largest tile resident in any core at that layer, plus the
      TMEM held by every pending TC on the deepest path through the plan.
    """
    shapes = infer_shapes(net)
    n = len(net.layers)
    if mode == "layer_by_layer":
        curve = [_bytes(s) for s in shapes]
        return FootprintReport(mode, max(curve, default=0), curve, "largest full output map")
    if mode == "cross_layer":
        last_use = net.last_use()
        curve = []
        for l in range(n):
            g0 = (l // cl_depth) * cl_depth
            g1 = min(g0 + cl_depth, n) - 1
            total = _bytes(shapes[g1])
            for i in range(g0, g1):
                nxt = net.layers[i + 1]
                rows = max(nxt.kernel, 1) if not nxt.global_pool else shapes[i][0]
                h, w, c = shapes[i]
                total += min(rows, h) * w * c
            for t in range(0, g0):
                crosses = last_use[t] > g1 if t == g0 - 1 else last_use[t] >= g0
                if crosses:
                    total += _bytes(shapes[t])
            curve.append(total)
        return FootprintReport(mode, max(curve, default=0), curve, f"{cl_depth}-layer depth-first fusion")
    if mode == "lpt":
        geom = geom or CoreGeometry()
        plan = plan or plan_lpt(net, geom)
        curve = []
        for l in range(n):
            t = plan.layer_tiles[l]
            resident = [_bytes(t.out_tile)]
            if not net.layers[l].global_pool:
                resident.append(_bytes(t.in_tile))
            if net.layers[l].kind == "residual_add":
                resident.append(_bytes(t.in_tile))
            seg = plan.segment_of(l) if l < plan.n_tiled else len(plan.tc_events)
            pending = sum(ev.stored_bytes for ev in plan.tc_events[seg:])
            curve.append(max(resident) + pending)
        return FootprintReport(mode, max(curve, default=0), curve, "largest resident tile + pending TMEM")
    raise ValueError(f"unknown footprint mode {mode!r}")


# ---------------------------------------------------------------------------
# fused-layer access counting


@dataclass(frozen=True)
class AccessCountReport:
    fused_depth: int
    tile: int
    with_block_conv: bool
    reads: int
    writes: int

    @property
    def total(self) -> int:
        return self.reads + self.writes


def count_fused_accesses(n_layers: int, tile: int, block_conv: bool, channels: int = 1) -> AccessCountReport:
    """Activation reads/writes to produce one ``tile`` x ``tile`` output through
    ``n_layers`` fused 3x3 convolutions.

    Without block convolution layer ``i`` (1-based) reads the halo-grown
    ``tile + 2 (N - i + 1)`` square and writes ``tile + 2 (N - i)``; with it
    every layer reads and writes exactly ``tile**2`` per channel.
    """
    if n_layers < 1 or tile < 1:
        raise ValueError("fused depth and tile must be >= 1")
    if block_conv:
        per = tile * tile * channels
        return AccessCountReport(n_layers, tile, True, per * n_layers, per * n_layers)
    reads = sum((tile + 2 * (n_layers - i + 1)) ** 2 for i in range(1, n_layers + 1)) * channels
    writes = sum((tile + 2 * (n_layers - i)) ** 2 for i in range(1, n_layers + 1)) * channels
    return AccessCountReport(n_layers, tile, False, reads, writes)


def with_tmem(plan: SchedulePlan, tmem_bytes: int) -> SchedulePlan:
    return replace(plan, tmem_bytes_required=tmem_bytes)
