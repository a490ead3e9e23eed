"""Structural comparison of reconstructions against their targets."""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import mmc
from .boundary import BoundaryConditions, bc_regions, model_from_bc
from .errors import BCConnectionError, SolverError
from .fea import compliance
from .mmc import Component, ComponentSet, ProjectionParams
from .raster import DensityGrid, GridSpec, atomic_write, binarize, dice, volume_fraction
from .skeleton import Skeleton, render_skeleton_reconstruction

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("id", "method", "dice", "vol_delta_pct", "comp_delta_pct", "comp_vol_product",
                  "connected_support", "connected_load")
SUMMARY_COLUMNS = ("method", "count", "mean_dice", "mean_vol_delta_pct", "median_comp_delta_pct")


def rasterize(geometry, spec: GridSpec, p: ProjectionParams | None = None) -> DensityGrid:
    """Binary raster of a component set, skeleton or density grid on ``spec``."""
    p = ProjectionParams() if p is None else p
    if isinstance(geometry, ComponentSet):
        if len(geometry) == 0:
            return DensityGrid.zeros(spec)
        return binarize(mmc.render_set(geometry, p, spec), 0.5)
    if isinstance(geometry, Skeleton):
        return render_skeleton_reconstruction(geometry, spec)
    if isinstance(geometry, DensityGrid):
        if geometry.shape != spec.shape:
            raise ValueError(f"grid shape {geometry.shape} does not match {spec.shape}")
        return binarize(geometry, 0.5)
    raise TypeError(f"cannot rasterize {type(geometry).__name__}")


@dataclass
class Connection:
    geometry: object
    connected: dict
    moved: dict = field(default_factory=dict)


def _nodes(geometry, spec: GridSpec) -> np.ndarray:
    """Node positions in pixel coordinates ``(i, j)``; index order defines tie-breaks."""
    if isinstance(geometry, ComponentSet):
        pts = []
        for c in geometry:
            pts.append(spec.pixel_of(c.ax, c.ay))
            pts.append(spec.pixel_of(c.bx, c.by))
        return np.asarray(pts, dtype=float).reshape(-1, 2)
    return np.array([(n.i, n.j) for n in geometry.nodes], dtype=float).reshape(-1, 2)


def _move_node(geometry, spec: GridSpec, k: int, target: tuple[int, int]):
    if isinstance(geometry, ComponentSet):
        c = geometry[k // 2]
        a = np.array([c.ax, c.ay]) if k % 2 == 0 else np.array([c.bx, c.by])
        other = np.array([c.bx, c.by]) if k % 2 == 0 else np.array([c.ax, c.ay])
        x, y = spec.pixel_center(*target)
        new = np.array([float(x), float(y)])
        # overshoot by one pixel along the axis so the capped end covers the pixel centre
        axis = new - other
        norm = math.hypot(*axis)
        if norm > 0:
            new = new + axis / norm * spec.pitch
        if k % 2 == 0:
            c2 = replace(c, ax=float(new[0]), ay=float(new[1]))
        else:
            c2 = replace(c, bx=float(new[0]), by=float(new[1]))
        return geometry.replace(k // 2, c2)
    sk = copy.deepcopy(geometry)
    node = sk.nodes[k]
    node.i, node.j = int(target[0]), int(target[1])
    for br in sk.branches:
        if br.start == k:
            br.points = np.vstack([[target], br.points]).astype(float)
        if br.end == k:
            br.points = np.vstack([br.points, [target]]).astype(float)
    return sk


def connect_to_bc(geometry, bc: BoundaryConditions, spec: GridSpec,
                  p: ProjectionParams | None = None) -> Connection:
    """Make every boundary-condition region touch material.

    Regions are treated independently.  For a region without material the
    geometry node nearest (Euclidean, in pixels; ties to the lower index) to
    its first pixel in raster order is moved onto that pixel.  Internal
    disconnections are left alone.
    """
    p = ProjectionParams() if p is None else p
    if isinstance(geometry, ComponentSet) and len(geometry) == 0 or \
            isinstance(geometry, Skeleton) and not geometry.nodes:
        raise BCConnectionError("cannot connect empty geometry to the boundary conditions")
    if not isinstance(geometry, (ComponentSet, Skeleton)):
        raise TypeError(f"cannot connect {type(geometry).__name__}")
    regions = bc_regions(spec, bc)
    moved = {}
    for name, region in regions.items():
        if (rasterize(geometry, spec, p).values > 0.5)[region].any():
            continue
        j, i = np.argwhere(region)[0]
        nodes = _nodes(geometry, spec)
        d = np.hypot(nodes[:, 0] - i, nodes[:, 1] - j)
        k = int(np.flatnonzero(d <= d.min() + 1e-9)[0])
        geometry = _move_node(geometry, spec, k, (int(i), int(j)))
        moved[name] = k
        log.debug("moved node %d onto %s pixel (%d, %d)", k, name, i, j)
    final = rasterize(geometry, spec, p).values > 0.5
    connected = {name: bool((final & r).any()) for name, r in regions.items()}
    return Connection(geometry, connected, moved)


@dataclass(frozen=True)
class EvalReport:
    dice: float
    volume_delta_pct: float
    compliance_delta_pct: float
    compliance_volume_product: float
    connected: dict

    def row(self, sample_id: str = "", method: str = "") -> dict:
        return {
            "id": sample_id, "method": method, "dice": repr(self.dice),
            "vol_delta_pct": repr(self.volume_delta_pct),
            "comp_delta_pct": repr(self.compliance_delta_pct),
            "comp_vol_product": repr(self.compliance_volume_product),
            "connected_support": int(self.connected.get("support", True)),
            "connected_load": int(self.connected.get("load", True)),
        }


def evaluate(original: DensityGrid, recon_geometry, bc: BoundaryConditions | None = None,
             p: ProjectionParams | None = None) -> EvalReport:
    """Dice, signed volume and compliance differences of a reconstruction.

    The reconstruction is connected to the boundary conditions, rasterized on
    the original's grid and solved under the same FEA model.  Without
    boundary conditions the compliance fields are NaN.
    """
    p = ProjectionParams() if p is None else p
    if not original.is_binary():
        raise ValueError("original must be binary; binarize it first")
    spec = original.spec
    connected = {}
    geom = recon_geometry
    if bc is not None and isinstance(geom, (ComponentSet, Skeleton)):
        conn = connect_to_bc(geom, bc, spec, p)
        geom, connected = conn.geometry, conn.connected
    recon = rasterize(geom, spec, p)
    v_o, v_r = volume_fraction(original), volume_fraction(recon)
    dv = 100.0 * (v_r - v_o) / v_o if v_o > 0 else math.nan
    dc, cv = math.nan, math.nan
    if bc is not None:
        if not connected:
            regions = bc_regions(spec, bc)
            connected = {k: bool((recon.values > 0.5)[r].any()) for k, r in regions.items()}
        model = model_from_bc(spec, bc)
        try:
            c_o = compliance(model, original)
        except SolverError as exc:
            raise SolverError(f"original structure: {exc}") from None
        try:
            c_r = compliance(model, recon)
        except SolverError as exc:
            raise SolverError(f"reconstructed structure: {exc}") from None
        dc = 100.0 * (c_r - c_o) / c_o
        cv = c_r * v_r
    return EvalReport(dice(original, recon), dv, dc, cv, connected)


@dataclass(frozen=True)
class Summary:
    count: int
    mean_dice: float
    mean_volume_delta_pct: float
    median_compliance_delta_pct: float

    def row(self, method: str = "") -> dict:
        return {"method": method, "count": self.count, "mean_dice": repr(self.mean_dice),
                "mean_vol_delta_pct": repr(self.mean_volume_delta_pct),
                "median_comp_delta_pct": repr(self.median_compliance_delta_pct)}


def aggregate(reports) -> Summary:
    """Mean dice, mean volume delta and median compliance delta.

    The median keeps a few disconnected reconstructions with exploding
    compliance from dominating the summary.  NaN compliance entries (no
    boundary conditions) are ignored.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")
    comp = np.array([r.compliance_delta_pct for r in reports], dtype=float)
    comp = comp[~np.isnan(comp)]
    return Summary(
        len(reports),
        float(np.mean([r.dice for r in reports])),
        float(np.mean([r.volume_delta_pct for r in reports])),
        float(np.median(comp)) if comp.size else math.nan,
    )


def reports_csv(rows) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(REPORT_COLUMNS), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue().encode()


def summary_csv(rows) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(SUMMARY_COLUMNS), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue().encode()


def write_reports(path, rows) -> None:
    atomic_write(path, reports_csv(rows))
