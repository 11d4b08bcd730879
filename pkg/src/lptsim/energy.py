"""SRAM access-energy model and dataflow comparisons.

Energy per access depends only on the capacity of the array being accessed.
A table of (capacity, relative energy) knots is interpolated piecewise
linearly in log-log space, i.e. as a power law between neighbouring knots.

Dataflows compared (activation element moves only; in-situ MAC row reads are
not activation traffic):

* ``AL``: the simulator's counts, outputs stay in the core that computes the
  next layer, 16 KB cores plus a 24 KB TMEM.
* ``AS``: same tiles and cores, but every layer output consumed later takes a
  round trip (read out, written back as the next input).
* ``WS``: one 1 MB global activation memory; each layer re-reads its input
  once per kernel row and writes its output; residual adds run as separate
  passes.
* ``baseline``: one 1 MB memory with slice-based layer fusion; each output
  slice reads the input rows its window covers (with the default one-row
  slices, every input row once per kernel row), writes its output, and folds
  residual adds into the producing layer.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alsim import AccessCounters, count_plan_accesses
from .lpt import SchedulePlan, traverse
from .netspec import CoreGeometry, NetworkSpec, infer_shapes

KB = 1024
MB = 1024 * KB
REF_CAPACITY = 16 * KB
DEFAULT_KNOTS = tuple(16 * KB * 2**i for i in range(7))  # 16 KB .. 1 MB


class EnergyTableError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyTable:
    """Capacity (bytes) -> energy per access, normalized so 16 KB costs 1.0."""

    capacities: tuple[float, ...]
    energies: tuple[float, ...]
    weight_energy: float = 0.0

    def __post_init__(self):
        caps = np.asarray(self.capacities, dtype=float)
        en = np.asarray(self.energies, dtype=float)
        if caps.size == 0 or caps.size != en.size:
            raise EnergyTableError("table needs matching, non-empty capacity and energy lists")
        if np.any(caps <= 0) or np.any(en <= 0):
            raise EnergyTableError("capacities and energies must be positive")
        if np.any(np.diff(caps) <= 0):
            raise EnergyTableError("capacities must be strictly increasing")
        if np.any(np.diff(en) < 0):
            raise EnergyTableError("energy must not decrease with capacity")
        ref = _interp(caps, en, REF_CAPACITY)
        object.__setattr__(self, "capacities", tuple(float(c) for c in caps))
        object.__setattr__(self, "energies", tuple(float(e) / ref for e in en))

    def __call__(self, capacity: float) -> float:
        return access_energy(self, capacity)

    def scaled(self, k: float) -> "EnergyTable":
        # normalization undoes a uniform scale; kept for explicit invariance checks
        return EnergyTable(self.capacities, tuple(e * k for e in self.energies), self.weight_energy * k)

    def to_dict(self) -> dict:
        return {"entries": [[c, e] for c, e in zip(self.capacities, self.energies)], "weight_energy": self.weight_energy}


def _interp(caps: np.ndarray, en: np.ndarray, capacity: float) -> float:
    if capacity <= caps[0] or caps.size == 1:
        return float(en[0]) if capacity <= caps[0] else float(en[-1])
    lc, le = np.log(caps), np.log(en)
    x = math.log(capacity)
    if capacity >= caps[-1]:
        slope = (le[-1] - le[-2]) / (lc[-1] - lc[-2])
        return float(math.exp(le[-1] + slope * (x - lc[-1])))
    return float(math.exp(np.interp(x, lc, le)))


def access_energy(table: EnergyTable, capacity: float) -> float:
    """Energy per access; exact at knots, flat below the smallest, power-law beyond the largest."""
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    return _interp(np.asarray(table.capacities), np.asarray(table.energies), capacity)


def default_table(exponent: float = 0.5, knots=DEFAULT_KNOTS) -> EnergyTable:
    return EnergyTable(tuple(knots), tuple((c / REF_CAPACITY) ** exponent for c in knots))


def load_energy_table(path: str | Path) -> EnergyTable:
    """JSON (``{"entries": [[bytes, energy], ...]}`` or a bare list) or two-column CSV."""
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".csv":
            rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
            if rows and not _numeric(rows[0][0]):
                rows = rows[1:]
            pairs = [(float(r[0]), float(r[1])) for r in rows]
            weight = 0.0
        else:
            doc = json.loads(text)
            entries = doc["entries"] if isinstance(doc, dict) else doc
            pairs = [(float(c), float(e)) for c, e in entries]
            weight = float(doc.get("weight_energy", 0.0)) if isinstance(doc, dict) else 0.0
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise EnergyTableError(f"{path}: {exc}") from exc
    pairs.sort()
    return EnergyTable(tuple(c for c, _ in pairs), tuple(e for _, e in pairs), weight)


def _numeric(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# reports


@dataclass
class DataflowReport:
    dataflow: str
    capacities: dict[str, int]
    counts: dict[str, int]
    accesses: int
    energy: float
    ratio_vs_ws: float | None = None
    ratio_vs_baseline: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataflow": self.dataflow,
            "capacities": dict(self.capacities),
            "counts": dict(self.counts),
            "accesses": self.accesses,
            "energy": self.energy,
            "ratio_vs_ws": self.ratio_vs_ws,
            "ratio_vs_baseline": self.ratio_vs_baseline,
        }


def _core_counts(c: AccessCounters) -> dict[str, int]:
    return {
        "core": c.ocim_write + c.ocim_read + c.icim_write,
        "tmem": c.tmem_read + c.tmem_write,
        "weights": c.wbuf_access + c.mmem_read,
        "offchip": c.offchip_read + c.offchip_write,
    }


def _tiled_report(name: str, c: AccessCounters, table: EnergyTable, geom: CoreGeometry) -> DataflowReport:
    counts = _core_counts(c)
    caps = {"core": geom.core_bytes, "tmem": geom.tmem_capacity}
    e = counts["core"] * table(caps["core"]) + counts["weights"] * table.weight_energy
    if counts["tmem"]:
        e += counts["tmem"] * table(caps["tmem"])
    return DataflowReport(name, caps, counts, counts["core"] + counts["tmem"], e)


def al_counts(net: NetworkSpec, plan: SchedulePlan, geom: CoreGeometry | None = None) -> AccessCounters:
    return count_plan_accesses(net, plan, geom)[0]


def as_counts(net: NetworkSpec, plan: SchedulePlan, geom: CoreGeometry | None = None) -> AccessCounters:
    """AL plus a read-out/write-back round trip of every output a later layer consumes."""
    c = count_plan_accesses(net, plan, geom)[0]
    shapes = infer_shapes(net)
    last = len(net.layers) - 1
    fused = set(plan.fused_adds)
    extra = 0
    tiles = {t.layer: t for t in plan.layer_tiles}
    for step in traverse(plan):
        if step.op == "layer" and step.layer not in fused:
            out = step.layer + 1 if step.layer + 1 in fused else step.layer
            if out != last:
                extra += math.prod(tiles[out].out_tile)
    for l in range(plan.n_tiled, len(net.layers)):
        if l != last:
            extra += math.prod(shapes[l])
    c.ocim_read += extra
    c.icim_write += extra
    return c


def ws_counts(net: NetworkSpec, *, fused_residual: bool = False) -> AccessCounters:
    """Layer-by-layer over one global memory with kernel-row reuse."""
    shapes = infer_shapes(net)
    c = AccessCounters()
    inp = math.prod(net.input_shape)
    c.offchip_read += inp
    c.ocim_write += inp
    for l, layer in enumerate(net.layers):
        src = tuple(net.input_shape) if net.source(l) < 0 else shapes[net.source(l)]
        oh, ow, oc = shapes[l]
        o = oh * ow * oc
        if layer.kind == "residual_add":
            if fused_residual:
                c.ocim_read += o
            else:
                c.ocim_read += 2 * o
                c.ocim_write += o
            continue
        if layer.global_pool or layer.kind == "fc":
            c.ocim_read += math.prod(src)
        else:
            c.ocim_read += oh * layer.kernel * src[1] * src[2]
        c.ocim_write += o
        if layer.weighted:
            c.wbuf_access += layer.n_weights
    if net.layers:
        c.offchip_write += math.prod(shapes[-1])
    else:
        c.offchip_write += inp
    return c


def baseline_counts(net: NetworkSpec, *, slice_rows: int = 1) -> AccessCounters:
    """Slice-fused layer execution over one memory: each slice of ``slice_rows``
    output rows reads its input rows including the kernel halo."""
    if slice_rows < 1:
        raise ValueError("slice_rows must be >= 1")
    shapes = infer_shapes(net)
    c = AccessCounters()
    inp = math.prod(net.input_shape)
    c.offchip_read += inp
    c.ocim_write += inp
    for l, layer in enumerate(net.layers):
        src = tuple(net.input_shape) if net.source(l) < 0 else shapes[net.source(l)]
        oh, ow, oc = shapes[l]
        o = oh * ow * oc
        if layer.kind == "residual_add":
            prev = net.layers[l - 1] if l else None
            if prev is not None and prev.weighted and net.source(l) == l - 1:
                c.ocim_read += o  # skip operand read as the producer finishes
            else:
                c.ocim_read += 2 * o
                c.ocim_write += o
            continue
        if layer.global_pool or layer.kind == "fc" or layer.kernel == 1:
            c.ocim_read += _strided_rows(src, layer) * src[1] * src[2]
        else:
            rows = 0
            for s0 in range(0, oh, slice_rows):
                n = min(slice_rows, oh - s0)
                lo = max(0, s0 * layer.stride - layer.pad)
                hi = min(src[0], (s0 + n - 1) * layer.stride - layer.pad + layer.kernel)
                rows += hi - lo
            c.ocim_read += rows * src[1] * src[2]
        c.ocim_write += o
        if layer.weighted:
            c.wbuf_access += layer.n_weights
    c.offchip_write += math.prod(shapes[-1]) if net.layers else inp
    return c


def _strided_rows(src, layer) -> int:
    # a strided 1x1 layer only touches the rows it samples
    if layer.kind == "conv" and layer.kernel == 1 and layer.stride > 1:
        return len(range(0, src[0], layer.stride))
    return src[0]


def _global_report(name: str, c: AccessCounters, table: EnergyTable, capacity: int) -> DataflowReport:
    counts = _core_counts(c)
    counts["memory"] = counts.pop("core")
    counts.pop("tmem")
    e = counts["memory"] * table(capacity) + counts["weights"] * table.weight_energy
    return DataflowReport(name, {"memory": capacity}, counts, counts["memory"], e)


def compare_dataflows(
    net: NetworkSpec,
    plan: SchedulePlan,
    table: EnergyTable | None = None,
    geom: CoreGeometry | None = None,
    *,
    ws_capacity: int = MB,
    ws_fused_residual: bool = False,
) -> dict[str, DataflowReport]:
    """WS, AS and AL reports with energy ratios relative to WS."""
    table = table or default_table()
    geom = geom or CoreGeometry()
    reports = {
        "WS": _global_report("WS", ws_counts(net, fused_residual=ws_fused_residual), table, ws_capacity),
        "AS": _tiled_report("AS", as_counts(net, plan, geom), table, geom),
        "AL": _tiled_report("AL", al_counts(net, plan, geom), table, geom),
    }
    ws = reports["WS"].energy
    for r in reports.values():
        r.ratio_vs_ws = ws / r.energy if r.energy else math.inf
    return reports


def compare_baseline(
    net: NetworkSpec,
    plan: SchedulePlan,
    table: EnergyTable | None = None,
    geom: CoreGeometry | None = None,
    *,
    capacity: int = MB,
    slice_rows: int = 1,
) -> dict[str, DataflowReport]:
    """Single-memory slice-fused baseline against the AL counts."""
    table = table or default_table()
    geom = geom or CoreGeometry()
    reports = {
        "baseline": _global_report("baseline", baseline_counts(net, slice_rows=slice_rows), table, capacity),
        "AL": _tiled_report("AL", al_counts(net, plan, geom), table, geom),
    }
    base = reports["baseline"]
    for r in reports.values():
        r.ratio_vs_baseline = base.energy / r.energy if r.energy else math.inf
    return reports


def access_ratio(a: DataflowReport, b: DataflowReport) -> float:
    return a.accesses / b.accesses if b.accesses else math.inf


def tc_overhead(net: NetworkSpec, plan: SchedulePlan, geom: CoreGeometry | None = None) -> float:
    """Activation accesses with TC over the same schedule with free TC.

    Tiles partition each map exactly, so TC recomputes nothing; its only cost
    is the TMEM round trip of each stored half.
    """
    c = al_counts(net, plan, geom)
    total = c.activation_accesses
    free = total - c.tmem_read - c.tmem_write
    return total / free if free else 1.0


def reports_csv(reports: dict[str, DataflowReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("dataflow", "accesses", "energy", "ratio_vs_ws", "ratio_vs_baseline"))
    for name in sorted(reports):
        r = reports[name]
        w.writerow((name, r.accesses, f"{r.energy:.6f}", _fmt(r.ratio_vs_ws), _fmt(r.ratio_vs_baseline)))
    return buf.getvalue()


def _fmt(x):
    return "" if x is None else f"{x:.6f}"
