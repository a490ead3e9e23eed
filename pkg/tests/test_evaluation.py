import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from densgeo import mmc
from densgeo.boundary import BoundaryConditions, bc_regions, sample_bc, spec_for
from densgeo.errors import BCConnectionError, SolverError
from densgeo.evaluation import (EvalReport, aggregate, connect_to_bc, evaluate, rasterize, reports_csv,
                                summary_csv)
from densgeo.mmc import Component, ComponentSet, ProjectionParams
from densgeo.raster import DensityGrid, GridSpec, binarize
from densgeo.skeleton import skeletonize

P = ProjectionParams()
# left support on the lower 60%, load at mid-height of the right edge pointing down
BC = BoundaryConditions(1.0, 1.0, "left", 0.0, 0.6, 0.5, -math.pi / 2)
SPEC = GridSpec(64, 64)


def touching_set(spec=SPEC):
    # a bridge from the support to the load plus a brace
    return ComponentSet((Component(-0.02, 0.3, 1.02, 0.5, 0.06), Component(0.0, 0.1, 0.6, 0.45, 0.04)), spec)


def overlaps(geom, bc, spec):
    ras = rasterize(geom, spec, P).values > 0.5
    return {k: bool((ras & r).any()) for k, r in bc_regions(spec, bc).items()}


def report(d=1.0, dv=0.0, dc=0.0):
    return EvalReport(d, dv, dc, 1.0, {"support": True, "load": True})


# ---------------------------------------------------------------- rasterize

def test_rasterize_kinds():
    s = touching_set()
    g = rasterize(s, SPEC)
    assert g == binarize(mmc.render_set(s, P, SPEC))
    assert rasterize(g, SPEC) == g
    sk = skeletonize(g)
    assert rasterize(sk, SPEC).is_binary()
    assert not rasterize(ComponentSet((), SPEC), SPEC).values.any()
    with pytest.raises(TypeError):
        rasterize("bar", SPEC)
    with pytest.raises(ValueError):
        rasterize(DensityGrid.zeros(GridSpec(3, 3)), SPEC)


# ---------------------------------------------------------------- connection

def test_connect_already_touching():
    s = touching_set()
    assert overlaps(s, BC, SPEC) == {"support": True, "load": True}
    conn = connect_to_bc(s, BC, SPEC, P)
    assert conn.geometry is s
    assert conn.connected == {"support": True, "load": True}
    assert conn.moved == {}


def test_connect_one_pixel_short_of_load():
    spec = SPEC
    load_px = np.argwhere(bc_regions(spec, BC)["load"])[0]
    # bar along the load row, ending one pixel short of the load pixel
    j, i = load_px
    x_end, y = spec.pixel_center(i - 1, j)
    s = ComponentSet((Component(-0.02, float(y), float(x_end) - 0.5 * spec.dx, float(y), 0.03),
                      Component(0.0, 0.2, 0.0 + 1e-3, 0.4, 0.05)), spec)
    before = overlaps(s, BC, spec)
    assert before["load"] is False
    conn = connect_to_bc(s, BC, spec, P)
    assert conn.connected["load"] and conn.moved["load"] == 1  # endpoint B of component 0
    assert overlaps(conn.geometry, BC, spec)["load"]
    c0 = conn.geometry[0]
    assert (c0.ax, c0.ay) == (s[0].ax, s[0].ay)


def test_connect_empty_geometry():
    with pytest.raises(BCConnectionError):
        connect_to_bc(ComponentSet((), SPEC), BC, SPEC, P)
    with pytest.raises(BCConnectionError):
        connect_to_bc(skeletonize(DensityGrid.zeros(SPEC)), BC, SPEC, P)


def disconnected_fixture(k):
    rng = np.random.default_rng(1000 + k)
    bc = sample_bc(int(rng.integers(2**31)))
    spec = spec_for(bc, 40)
    comps = []
    for _ in range(int(rng.integers(1, 4))):
        cx = rng.uniform(0.35, 0.65) * bc.domain_w
        cy = rng.uniform(0.35, 0.65) * bc.domain_h
        ang = rng.uniform(0, math.pi)
        half = rng.uniform(0.05, 0.2)
        comps.append(Component(cx - half * math.cos(ang), cy - half * math.sin(ang),
                               cx + half * math.cos(ang), cy + half * math.sin(ang), rng.uniform(0.02, 0.06)))
    return bc, spec, ComponentSet(tuple(comps), spec)


@pytest.mark.parametrize("k", range(20))
def test_connect_disconnected_fixtures(k):
    bc, spec, s = disconnected_fixture(k)
    assert overlaps(s, bc, spec) == {"support": False, "load": False}
    conn = connect_to_bc(s, bc, spec, P)
    assert conn.connected == {"support": True, "load": True}
    assert overlaps(conn.geometry, bc, spec) == {"support": True, "load": True}
    # one node per region: at most two endpoints differ
    before = s.as_array()[:, :4].reshape(-1, 2)
    after = conn.geometry.as_array()[:, :4].reshape(-1, 2)
    changed = np.flatnonzero(np.any(before != after, axis=1))
    assert len(changed) <= 2
    assert set(changed) == set(conn.moved.values())


@pytest.mark.parametrize("k", range(5))
def test_connect_skeleton_fixture(k):
    bc, spec, s = disconnected_fixture(k)
    sk = skeletonize(rasterize(s, spec))
    conn = connect_to_bc(sk, bc, spec, P)
    assert conn.connected == {"support": True, "load": True}
    moved_nodes = [i for i, (a, b) in enumerate(zip(sk.nodes, conn.geometry.nodes)) if (a.i, a.j) != (b.i, b.j)]
    assert len(moved_nodes) <= 2
    # the input skeleton is not mutated
    assert [(n.i, n.j) for n in sk.nodes] == [(n.i, n.j) for n in skeletonize(rasterize(s, spec)).nodes]


def test_connect_nearest_node_tie_breaks_low():
    spec = GridSpec(32, 32)
    bc = BoundaryConditions(1.0, 1.0, "left", 0.0, 1.0, 0.5, -math.pi / 2)
    reg = bc_regions(spec, bc)["support"]
    j, i = np.argwhere(reg)[0]
    assert (j, i) == (0, 0)
    # two components whose A endpoints sit at the same distance from pixel (0, 0)
    a = spec.pixel_center(3, 4)
    b = spec.pixel_center(4, 3)
    s = ComponentSet((Component(float(a[0]), float(a[1]), 0.6, 0.6, 0.02),
                      Component(float(b[0]), float(b[1]), 0.6, 0.4, 0.02)), spec)
    conn = connect_to_bc(s, bc, spec, P)
    assert conn.moved["support"] == 0


# ---------------------------------------------------------------- evaluate

def test_evaluate_self():
    s = touching_set(GridSpec(128, 128))
    orig = rasterize(s, s.domain)
    r = evaluate(orig, s, BC, P)
    assert r.dice >= 0.99
    assert abs(r.volume_delta_pct) <= 1.0
    assert abs(r.compliance_delta_pct) <= 2.0
    assert r.connected == {"support": True, "load": True}
    assert r.compliance_volume_product > 0


@pytest.mark.parametrize("seed", range(3))
def test_evaluate_self_random_assemblies(seed):
    from densgeo.datagen import random_assembly
    s, target = random_assembly(seed, spec=GridSpec(128, 128))
    r = evaluate(target, s, None, P)
    assert r.dice >= 0.99
    assert math.isnan(r.compliance_delta_pct) and r.connected == {}


def test_evaluate_dilated():
    s = touching_set()
    orig = rasterize(s, SPEC)
    dil = DensityGrid(SPEC, ndimage.binary_dilation(orig.values > 0.5).astype(float))
    r = evaluate(orig, dil, BC, P)
    assert r.volume_delta_pct > 0
    assert r.compliance_delta_pct <= 0


def test_evaluate_names_failing_structure(monkeypatch):
    import densgeo.evaluation as ev
    s = touching_set()
    orig = rasterize(s, SPEC)
    calls = []

    def flaky(model, grid):
        calls.append(grid)
        if len(calls) == fail_at:
            raise SolverError("residual too large")
        return 1.0

    monkeypatch.setattr(ev, "compliance", flaky)
    fail_at = 1
    with pytest.raises(SolverError, match="^original structure: residual"):
        evaluate(orig, s, BC, P)
    calls.clear()
    fail_at = 2
    with pytest.raises(SolverError, match="^reconstructed structure: residual"):
        evaluate(orig, s, BC, P)


def test_evaluate_rejects_non_binary():
    with pytest.raises(ValueError):
        evaluate(DensityGrid(SPEC, np.full(64 * 64, 0.5)), touching_set(), BC, P)


# ---------------------------------------------------------------- aggregate

def test_aggregate_single():
    r = EvalReport(0.93, 2.5, -1.5, 3.0, {})
    s = aggregate([r])
    assert (s.count, s.mean_dice, s.mean_volume_delta_pct, s.median_compliance_delta_pct) == (1, 0.93, 2.5, -1.5)


def test_aggregate_median_outlier():
    s = aggregate([report(dc=1), report(dc=2), report(dc=1000)])
    assert s.median_compliance_delta_pct == 2


def test_aggregate_mean_dice():
    assert aggregate([report(d=0.9), report(d=1.0)]).mean_dice == pytest.approx(0.95)


def test_aggregate_mean_volume_and_nan():
    s = aggregate([report(dv=1.0, dc=float("nan")), report(dv=3.0, dc=5.0)])
    assert s.mean_volume_delta_pct == 2.0
    assert s.median_compliance_delta_pct == 5.0
    assert math.isnan(aggregate([report(dc=float("nan"))]).median_compliance_delta_pct)


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([])


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.floats(1.0, 1e12))
def test_aggregate_median_ignores_outlier(vals, bump):
    reps = [report(dc=v) for v in vals]
    base = aggregate(reps).median_compliance_delta_pct
    k = int(np.argmax(vals))
    reps[k] = report(dc=max(vals) + bump)
    assert aggregate(reps).median_compliance_delta_pct == base


def test_report_csv_columns():
    r = EvalReport(0.9, 1.0, -2.0, 3.0, {"support": True, "load": False})
    rows = list(csv.DictReader(io.StringIO(reports_csv([r.row("a", "fit")]).decode())))
    assert list(rows[0]) == ["id", "method", "dice", "vol_delta_pct", "comp_delta_pct", "comp_vol_product",
                             "connected_support", "connected_load"]
    assert rows[0]["connected_load"] == "0" and float(rows[0]["dice"]) == 0.9
    text = summary_csv([aggregate([r]).row("fit")]).decode()
    assert text.splitlines()[0] == "method,count,mean_dice,mean_vol_delta_pct,median_comp_delta_pct"
