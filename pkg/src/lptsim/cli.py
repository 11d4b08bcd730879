"""Command line: ``lptsim {schedule,simulate,analyze,compare}``.

Exit codes: 0 success, 1 verification failure, 2 input error. Errors go to
stderr as one JSON object. Output files are written atomically with sorted
keys and no timestamps, so identical configurations give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .alsim import counters_csv, simulate
from .energy import (
    EnergyTableError,
    access_ratio,
    compare_baseline,
    compare_dataflows,
    default_table,
    load_energy_table,
    reports_csv,
    tc_overhead,
)
from .hnn import MaskFormatError, MaskSizeError, WeightGenConfig, load_supermask, materialize, random_supermask
from .lpt import InfeasiblePlanError, count_fused_accesses, max_activation, plan_lpt, validate_plan
from .netspec import BUILTIN_NETWORKS, CoreGeometry, QTensor, ShapeError, builtin_network, load_network
from .refconv import load_qtensor, run_reference, save_qtensor

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
OUTPUT_ENV = "LPTSIM_OUTPUT_DIR"
FOOTPRINT_MODES = ("layer_by_layer", "cross_layer", "lpt")

DEFAULTS = {
    "network": "resnet50",
    "input_side": 256,
    "seed": 0,
    "sparsity": 0.5,
    "weight_bits": 4,
    "mask_file": None,
    "input_file": None,
    "energy_table": None,
    "energy_exponent": 0.5,
    "slice_rows": 1,
    "output_dir": "lptsim_out",
    "tile_width": 8,
    "tile_height": 16,
    "channel_depth": 128,
    "precision": 8,
    "cores": 3,
    "tmem_bytes": 24 * 1024,
    "fused_depth": "1..12",
    "tile": 4,
    "channels": 1,
    "trace": False,
}


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# config


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys mirror the flags")
    common.add_argument("--network", help=f"builtin name ({', '.join(BUILTIN_NETWORKS)}) or descriptor JSON path")
    common.add_argument("--input-side", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--sparsity", type=float, help="fraction of weights kept by the supermask")
    common.add_argument("--weight-bits", type=int)
    common.add_argument("--mask-file")
    common.add_argument("--energy-table", help="JSON or CSV of (capacity bytes, energy) pairs")
    common.add_argument("--energy-exponent", type=float)
    common.add_argument("--output-dir", help=f"defaults to ${OUTPUT_ENV} or ./lptsim_out")
    for name in ("tile-width", "tile-height", "channel-depth", "precision", "cores", "tmem-bytes"):
        common.add_argument(f"--{name}", type=int)

    p = argparse.ArgumentParser(prog="lptsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("schedule", parents=[common], help="plan tiling and report footprints")
    s = sub.add_parser("simulate", parents=[common], help="run the simulator and check it against the golden model")
    s.add_argument("--input-file", help="raw tensor with a .json sidecar; random from --seed otherwise")
    s.add_argument("--trace", action="store_true", default=None, help="also write a JSON-lines step trace")
    a = sub.add_parser("analyze", parents=[common], help="fused-layer access counts and footprint curves")
    a.add_argument("--fused-depth", help="N or A..B")
    a.add_argument("--tile", type=int)
    a.add_argument("--channels", type=int)
    c = sub.add_parser("compare", parents=[common], help="dataflow and baseline energy comparisons")
    c.add_argument("--slice-rows", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < environment (output dir only) < flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path}: {exc}") from exc
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    if os.environ.get(OUTPUT_ENV):
        cfg["output_dir"] = os.environ[OUTPUT_ENV]
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    for key in ("mask_file", "energy_table", "input_file"):
        if cfg.get(key) and not Path(cfg[key]).is_file():
            raise InputError(f"{key.replace('_', '-')} not found: {cfg[key]}")
    net = cfg["network"]
    if net not in BUILTIN_NETWORKS and not Path(net).is_file():
        raise InputError(f"network {net!r} is neither a builtin nor an existing descriptor file")
    if not 0.0 <= float(cfg["sparsity"]) <= 1.0:
        raise InputError("sparsity must lie in [0, 1]")
    if cfg["input_side"] < 1:
        raise InputError("input-side must be positive")
    return cfg


def _geometry(cfg) -> CoreGeometry:
    vals = [cfg[k] for k in ("tile_width", "tile_height", "channel_depth", "precision", "cores")]
    if min(vals) < 1 or cfg["tmem_bytes"] < 0:
        raise InputError("geometry values must be positive")
    return CoreGeometry(*vals[:4], core_count=vals[4], tmem_capacity=cfg["tmem_bytes"])


def _network(cfg):
    name = cfg["network"]
    if name in BUILTIN_NETWORKS:
        return builtin_network(name, cfg["input_side"])
    try:
        return load_network(name)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad network descriptor {name}: {exc}") from exc


def _table(cfg):
    if cfg["energy_table"]:
        return load_energy_table(cfg["energy_table"])
    return default_table(cfg["energy_exponent"])


def parse_depths(spec: str) -> list[int]:
    spec = str(spec).strip()
    try:
        if ".." in spec:
            a, b = spec.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(spec)
    except ValueError as exc:
        raise InputError(f"fused depth {spec!r} is not N or A..B") from exc
    if lo < 1 or hi < lo:
        raise InputError(f"fused depth range {spec!r} is empty or below 1")
    return list(range(lo, hi + 1))


# ---------------------------------------------------------------------------
# output


class Writer:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.written: list[str] = []

    def _atomic(self, name: str, data: bytes):
        self.root.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.root / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(name)

    def json(self, name: str, obj):
        self._atomic(name, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())

    def text(self, name: str, text: str):
        self._atomic(name, text.encode())

    def tensor(self, name: str, t: QTensor):
        # write to a scratch dir, then move both files into place
        self.root.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(dir=self.root) as d:
            sidecar = save_qtensor(t, Path(d) / name)
            self._atomic(name, (Path(d) / name).read_bytes())
            self._atomic(name + ".json", sidecar.read_bytes())


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def cmd_schedule(cfg) -> tuple[int, dict]:
    net, geom = _network(cfg), _geometry(cfg)
    plan = plan_lpt(net, geom)
    violations = validate_plan(plan, net, geom)
    reps = {m: max_activation(net, m, geom, plan) for m in FOOTPRINT_MODES}
    out = Writer(cfg["output_dir"])
    out.json("plan.json", plan.to_dict())
    rows = [(l, net.layers[l].name or net.layers[l].kind) + tuple(reps[m].curve[l] for m in FOOTPRINT_MODES) for l in range(len(net.layers))]
    out.text("footprint.csv", _csv(("layer", "name") + FOOTPRINT_MODES, rows))
    lbl = reps["layer_by_layer"].max_live_activation_bytes
    summary = {
        "network": net.name,
        "input_grid": list(plan.input_grid),
        "tc_events": len(plan.tc_events),
        "tmem_bytes_required": plan.tmem_bytes_required,
        "onchip_activation_bytes": geom.total_activation_bytes,
        "footprint_max_bytes": {m: r.max_live_activation_bytes for m, r in reps.items()},
        "reduction_vs_layer_by_layer": {
            "onchip_total": lbl / geom.total_activation_bytes,
            "lpt_live": lbl / max(reps["lpt"].max_live_activation_bytes, 1),
        },
        "violations": [v.message for v in violations],
        "warnings": plan.warnings,
    }
    out.json("schedule_summary.json", summary)
    return (EXIT_VERIFY if violations else EXIT_OK), summary


def _mask_for(cfg, net):
    if cfg["mask_file"]:
        return load_supermask(cfg["mask_file"], net)
    return random_supermask(cfg["seed"], net, cfg["sparsity"])


def _input_for(cfg, net) -> QTensor:
    if cfg["input_file"]:
        x = load_qtensor(cfg["input_file"])
        if x.shape != tuple(net.input_shape):
            raise InputError(f"input tensor {x.shape} does not match network input {net.input_shape}")
        return x
    rng = np.random.Generator(np.random.Philox(key=[cfg["seed"], 1 << 62]))
    return QTensor(rng.integers(0, 256, size=net.input_shape, dtype=np.int64))


def cmd_simulate(cfg) -> tuple[int, dict]:
    net, geom = _network(cfg), _geometry(cfg)
    plan = plan_lpt(net, geom)
    violations = validate_plan(plan, net, geom)
    if violations:
        raise InputError(f"plan invalid: {violations[0].message}")
    wcfg = WeightGenConfig(cfg["seed"], cfg["weight_bits"])
    mask = _mask_for(cfg, net)
    x = _input_for(cfg, net)
    res = simulate(net, plan, wcfg, mask, x, geom=geom, trace=bool(cfg["trace"]))
    ref = run_reference(net, materialize(wcfg, mask, net), x, plan)
    equal = res.output == ref.output and ref.consistent
    verdict = "bitwise-equal" if equal else "mismatch"
    out = Writer(cfg["output_dir"])
    out.tensor("output.bin", res.output)
    out.json("counters.json", {"total": res.counters.to_dict(), "per_layer": {str(k): v.to_dict() for k, v in res.per_layer.items()}})
    out.text("counters.csv", counters_csv(res.per_layer))
    if res.trace is not None:
        out.text("trace.jsonl", res.trace_jsonl())
    diff = 0 if res.output.shape != ref.output.shape else int(np.count_nonzero(res.output.values != ref.output.values))
    summary = {
        "verdict": verdict,
        "mismatched_elements": diff if res.output.shape == ref.output.shape else None,
        "tiled_equals_layer_by_layer": ref.consistent,
        "output_shape": list(res.output.shape),
        "mask_ones_fraction": mask.sparsity,
        "counters": res.counters.to_dict(),
    }
    out.json("verdict.json", summary)
    return (EXIT_OK if equal else EXIT_VERIFY), summary


def cmd_analyze(cfg) -> tuple[int, dict]:
    depths = parse_depths(cfg["fused_depth"])
    if cfg["tile"] < 1:
        raise InputError("tile must be >= 1")
    if cfg["channels"] < 1:
        raise InputError("channels must be >= 1")
    rows, ratios = [], {}
    for n in depths:
        no = count_fused_accesses(n, cfg["tile"], False, cfg["channels"])
        bc = count_fused_accesses(n, cfg["tile"], True, cfg["channels"])
        rows.append((n, "false", no.reads, no.writes, no.total))
        rows.append((n, "true", bc.reads, bc.writes, bc.total))
        ratios[str(n)] = no.total / bc.total
    out = Writer(cfg["output_dir"])
    out.text("fused_accesses.csv", _csv(("fused_depth", "block_conv", "reads", "writes", "total"), rows))
    summary = {"tile": cfg["tile"], "channels": cfg["channels"], "ratio_without_over_with": ratios}
    if cfg["network"]:
        net, geom = _network(cfg), _geometry(cfg)
        plan = plan_lpt(net, geom)
        reps = {m: max_activation(net, m, geom, plan) for m in FOOTPRINT_MODES}
        frows = [(l,) + tuple(reps[m].curve[l] for m in FOOTPRINT_MODES) for l in range(len(net.layers))]
        out.text("footprint_curves.csv", _csv(("layer",) + FOOTPRINT_MODES, frows))
        summary["footprint_max_bytes"] = {m: r.max_live_activation_bytes for m, r in reps.items()}
    out.json("analyze_summary.json", summary)
    return EXIT_OK, summary


def cmd_compare(cfg) -> tuple[int, dict]:
    net, geom = _network(cfg), _geometry(cfg)
    plan = plan_lpt(net, geom)
    table = _table(cfg)
    flows = compare_dataflows(net, plan, table, geom)
    base = compare_baseline(net, plan, table, geom, slice_rows=cfg["slice_rows"])
    out = Writer(cfg["output_dir"])
    out.json("dataflows.json", {k: r.to_dict() for k, r in flows.items()})
    out.text("dataflows.csv", reports_csv(flows))
    out.json("baseline.json", {k: r.to_dict() for k, r in base.items()})
    out.text("baseline.csv", reports_csv(base))
    e = {k: r.energy for k, r in flows.items()}
    summary = {
        "energy_as_over_al": e["AS"] / e["AL"],
        "energy_ws_over_as": e["WS"] / e["AS"],
        "energy_ws_over_al": e["WS"] / e["AL"],
        "baseline_access_ratio": access_ratio(base["baseline"], base["AL"]),
        "baseline_energy_ratio": base["AL"].ratio_vs_baseline,
        "ordering_holds": e["AL"] <= e["AS"] <= e["WS"],
        "tc_overhead": tc_overhead(net, plan, geom),
        "energy_table": table.to_dict(),
    }
    out.json("compare_summary.json", summary)
    return EXIT_OK, summary


COMMANDS = {"schedule": cmd_schedule, "simulate": cmd_simulate, "analyze": cmd_analyze, "compare": cmd_compare}


def _fail(code: int, kind: str, message: str, **extra) -> int:
    err = {"error": kind, "message": message, "exit_code": code}
    err.update(extra)
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        cfg = resolve_config(args)
        code, summary = COMMANDS[args.command](cfg)
    except InfeasiblePlanError as exc:
        return _fail(EXIT_INPUT, "infeasible_plan", str(exc), layer=exc.layer)
    except (InputError, MaskFormatError, MaskSizeError, EnergyTableError, ShapeError, FileNotFoundError) as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))
    print(json.dumps(summary, sort_keys=True, indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
