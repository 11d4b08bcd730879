import json
import math

import pytest
from conftest import SMALL_GEOM, random_nets
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lptsim.energy import (
    KB,
    MB,
    EnergyTable,
    EnergyTableError,
    access_ratio,
    al_counts,
    as_counts,
    baseline_counts,
    compare_baseline,
    compare_dataflows,
    default_table,
    load_energy_table,
    reports_csv,
    tc_overhead,
    ws_counts,
)
from lptsim.lpt import plan_lpt
from lptsim.netspec import CoreGeometry, LayerSpec, builtin_network, chain


def test_default_knots():
    t = default_table()
    for i in range(7):
        assert t(16 * KB * 2**i) == pytest.approx(2 ** (i / 2))
    assert t(MB) == pytest.approx(8.0)
    assert t(4 * KB) == 1.0
    assert t(2 * MB) == pytest.approx(8 * math.sqrt(2))
    # between knots the law is a power law
    assert t(24 * KB) == pytest.approx(math.sqrt(1.5))


def test_normalization_and_scale_invariance():
    t = EnergyTable((8 * KB, 32 * KB), (5.0, 20.0))
    assert t(16 * KB) == pytest.approx(1.0)
    assert t.scaled(7.0)(64 * KB) == pytest.approx(t(64 * KB))


def test_flat_table_allowed_decreasing_rejected():
    flat = EnergyTable((16 * KB, MB), (1.0, 1.0))
    assert flat(MB) == flat(16 * KB) == flat(4 * MB) == 1.0
    with pytest.raises(EnergyTableError):
        EnergyTable((16 * KB, MB), (2.0, 1.0))
    with pytest.raises(EnergyTableError):
        EnergyTable((MB, 16 * KB), (1.0, 2.0))
    with pytest.raises(EnergyTableError):
        EnergyTable((), ())
    with pytest.raises(ValueError):
        flat(0)


def test_load_tables(tmp_path):
    j = tmp_path / "t.json"
    j.write_text(json.dumps({"entries": [[MB, 8.0], [16 * KB, 1.0]], "weight_energy": 0.5}))
    t = load_energy_table(j)
    assert t(MB) == pytest.approx(8.0) and t.weight_energy == 0.5
    bare = tmp_path / "b.json"
    bare.write_text(json.dumps([[16 * KB, 2.0], [64 * KB, 4.0]]))
    assert load_energy_table(bare)(64 * KB) == pytest.approx(2.0)
    c = tmp_path / "t.csv"
    c.write_text("capacity,energy\n16384,1\n1048576,8\n")
    assert load_energy_table(c)(MB) == pytest.approx(8.0)
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    with pytest.raises(EnergyTableError):
        load_energy_table(bad)


def test_ws_closed_form():
    net = chain((8, 8, 4), [LayerSpec("conv", 3, 1, 4, 6), LayerSpec("conv", 1, 1, 6, 2)])
    c = ws_counts(net)
    # input load, then 8 output rows x 3 kernel rows x 8 x 4 and 8 x 8 x 6 full reads
    assert c.ocim_read == 8 * 3 * 8 * 4 + 8 * 1 * 8 * 6
    assert c.ocim_write == 256 + 384 + 128
    assert (c.offchip_read, c.offchip_write) == (256, 128)


def test_baseline_closed_form():
    net = chain((8, 8, 4), [LayerSpec("conv", 3, 1, 4, 6)])
    c = baseline_counts(net)
    # one-row slices: rows 0 and 7 lose one halo row each
    assert c.ocim_read == (3 * 8 - 2) * 8 * 4
    wide = baseline_counts(net, slice_rows=8)
    assert wide.ocim_read == 8 * 8 * 4
    with pytest.raises(ValueError):
        baseline_counts(net, slice_rows=0)


def test_single_layer_as_equals_al():
    net = chain((16, 16, 8), [LayerSpec("conv", 3, 1, 8, 8)])
    plan = plan_lpt(net)
    r = compare_dataflows(net, plan)
    assert r["AS"].energy == r["AL"].energy
    assert as_counts(net, plan) == al_counts(net, plan)


def test_identical_fixture_ratio_one():
    net = builtin_network("toy_vgg", 16)
    plan = plan_lpt(net)
    a = compare_dataflows(net, plan)
    b = compare_dataflows(net, plan)
    assert access_ratio(a["AL"], b["AL"]) == 1.0
    assert a["WS"].ratio_vs_ws == 1.0
    assert tc_overhead(net, plan) == 1.0


def test_flat_table_collapses_to_access_ratio():
    net = builtin_network("resnet50", 256)
    plan = plan_lpt(net)
    flat = EnergyTable((16 * KB,), (1.0,))
    r = compare_dataflows(net, plan, flat)
    assert r["WS"].ratio_vs_ws == 1.0
    assert r["AL"].ratio_vs_ws == pytest.approx(access_ratio(r["WS"], r["AL"]))
    b = compare_baseline(net, plan, flat)
    assert b["AL"].ratio_vs_baseline == pytest.approx(access_ratio(b["baseline"], b["AL"]))


def test_reports_csv():
    net = builtin_network("toy_vgg", 16)
    text = reports_csv(compare_dataflows(net, plan_lpt(net)))
    lines = text.splitlines()
    assert lines[0].startswith("dataflow,") and len(lines) == 4


@settings(max_examples=60, derandomize=True, deadline=None, suppress_health_check=list(HealthCheck))
@given(random_nets(max_layers=14), st.floats(0.0, 1.0))
def test_al_never_costs_more_than_as(net, exponent):
    plan = plan_lpt(net, SMALL_GEOM)
    table = default_table(exponent)
    r = compare_dataflows(net, plan, table, SMALL_GEOM)
    assert r["AL"].accesses <= r["AS"].accesses
    assert r["AL"].energy <= r["AS"].energy
    # global memories cost at least as much per access as a core
    assert table(MB) >= table(SMALL_GEOM.core_bytes)
    for rep in r.values():
        assert all(v >= 0 for v in rep.counts.values())


def test_larger_cores_cost_more_per_access():
    net = builtin_network("toy_vgg", 16)
    plan = plan_lpt(net)
    big = CoreGeometry(8, 16, 256, 8, 3, 48 * KB)
    r_small = compare_dataflows(net, plan, geom=CoreGeometry())
    r_big = compare_dataflows(net, plan_lpt(net, big), geom=big)
    assert r_big["AL"].energy / r_big["AL"].accesses > r_small["AL"].energy / r_small["AL"].accesses
