"""Boundary conditions of the generated structural problems.

A problem is a rectangular ``w`` x ``h`` domain supported on a segment of one
edge and loaded by a point force on the opposite edge.  Positions along an
edge are fractions in ``[0, 1]`` measured from the bottom for the left and
right edges and from the left for the top and bottom edges.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .fea import FeaModel, node_id
from .raster import GridSpec

EDGES = ("left", "right", "top", "bottom")
OPPOSITE = {"left": "right", "right": "left", "top": "bottom", "bottom": "top"}
INWARD_NORMAL = {"left": (1.0, 0.0), "right": (-1.0, 0.0), "top": (0.0, -1.0), "bottom": (0.0, 1.0)}

DOMAIN_RANGE = (1.0, 2.0)
SUPPORT_LENGTH_RANGE = (0.5, 0.75)
MIN_NORMAL_ANGLE = math.pi / 4


def normal_angle(edge: str, theta: float) -> float:
    """Angle in ``[0, pi]`` between the load direction and the edge's inward normal."""
    nx, ny = INWARD_NORMAL[edge]
    c = math.cos(theta) * nx + math.sin(theta) * ny
    return math.acos(max(-1.0, min(1.0, c)))


@dataclass(frozen=True)
class BoundaryConditions:
    domain_h: float
    domain_w: float
    support_edge: str
    support_start: float
    support_length_frac: float
    load_point: float
    load_angle: float

    def __post_init__(self):
        if self.support_edge not in EDGES:
            raise ValueError(f"support_edge must be one of {EDGES}, got {self.support_edge!r}")
        for name in ("domain_h", "domain_w", "support_start", "support_length_frac",
                     "load_point", "load_angle"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.domain_h <= 0 or self.domain_w <= 0:
            raise ValueError("domain extents must be positive")
        if not 0.0 <= self.support_start <= 1.0 or not 0.0 <= self.load_point <= 1.0:
            raise ValueError("edge positions must lie in [0, 1]")
        if not 0.0 < self.support_length_frac <= 1.0:
            raise ValueError("support_length_frac must lie in (0, 1]")

    @property
    def load_edge(self) -> str:
        return OPPOSITE[self.support_edge]

    @property
    def support_interval(self) -> tuple[float, float]:
        """Support segment as edge fractions, clipped to the edge."""
        return self.support_start, min(self.support_start + self.support_length_frac, 1.0)

    @property
    def load_direction(self) -> tuple[float, float]:
        return math.cos(self.load_angle), math.sin(self.load_angle)

    def normal_angle(self) -> float:
        return normal_angle(self.support_edge, self.load_angle)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryConditions":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown boundary-condition keys: {sorted(extra)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def sample_bc(rng_seed: int) -> BoundaryConditions:
    """Draw one boundary-condition set; identical seeds give identical output."""
    rng = np.random.default_rng(rng_seed)
    h = float(rng.uniform(*DOMAIN_RANGE))
    w = float(rng.uniform(*DOMAIN_RANGE))
    edge = EDGES[int(rng.integers(len(EDGES)))]
    ls = float(rng.uniform(*SUPPORT_LENGTH_RANGE))
    start = float(rng.uniform(0.0, ls))
    pl = float(rng.uniform(0.0, 1.0))
    while True:
        theta = float(rng.uniform(0.0, 2 * math.pi))
        if normal_angle(edge, theta) >= MIN_NORMAL_ANGLE:
            break
    return BoundaryConditions(h, w, edge, start, ls, pl, theta)


def spec_for(bc: BoundaryConditions, resolution: float) -> GridSpec:
    """Element grid of ``round(resolution * w)`` x ``round(resolution * h)``."""
    nx = max(1, int(round(resolution * bc.domain_w)))
    ny = max(1, int(round(resolution * bc.domain_h)))
    return GridSpec(nx, ny, bc.domain_w, bc.domain_h)


# --------------------------------------------------------------------------
# edge geometry on a grid
# --------------------------------------------------------------------------

def edge_nodes(spec: GridSpec, edge: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Node columns, node rows and edge fractions of every node on ``edge``."""
    nx, ny = spec.nx, spec.ny
    if edge in ("left", "right"):
        j = np.arange(ny + 1)
        i = np.full_like(j, 0 if edge == "left" else nx)
        s = 1.0 - j / ny
    else:
        i = np.arange(nx + 1)
        j = np.full_like(i, 0 if edge == "top" else ny)
        s = i / nx
    return i, j, s


def edge_pixels(spec: GridSpec, edge: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel columns, rows and edge fractions of the pixel strip along ``edge``."""
    nx, ny = spec.nx, spec.ny
    if edge in ("left", "right"):
        j = np.arange(ny)
        i = np.full_like(j, 0 if edge == "left" else nx - 1)
        s = 1.0 - (j + 0.5) / ny
    else:
        i = np.arange(nx)
        j = np.full_like(i, 0 if edge == "top" else ny - 1)
        s = (i + 0.5) / nx
    return i, j, s


def _nearest(s: np.ndarray, target: float, key: np.ndarray) -> int:
    d = np.abs(s - target)
    cand = np.flatnonzero(d <= d.min() + 1e-12)
    return int(cand[np.argmin(key[cand])])


def support_node_ids(spec: GridSpec, bc: BoundaryConditions) -> np.ndarray:
    """Nodes on the support segment; never empty."""
    i, j, s = edge_nodes(spec, bc.support_edge)
    a, b = bc.support_interval
    tol = 1e-9
    sel = (s >= a - tol) & (s <= b + tol)
    ids = node_id(spec, i, j)
    if not sel.any():
        sel[_nearest(s, 0.5 * (a + b), ids)] = True
    return np.sort(ids[sel])


def load_node_id(spec: GridSpec, bc: BoundaryConditions) -> int:
    """Node on the load edge nearest to the load point; ties go to the lower id."""
    i, j, s = edge_nodes(spec, bc.load_edge)
    ids = node_id(spec, i, j)
    return int(ids[_nearest(s, bc.load_point, ids)])


def bc_regions(spec: GridSpec, bc: BoundaryConditions) -> dict[str, np.ndarray]:
    """Boolean ``(ny, nx)`` masks of the pixels in contact with the support and the load."""
    out = {}
    i, j, s = edge_pixels(spec, bc.support_edge)
    a, b = bc.support_interval
    sel = (s >= a) & (s <= b)
    raster = j * spec.nx + i
    if not sel.any():
        sel[_nearest(s, 0.5 * (a + b), raster)] = True
    m = np.zeros(spec.shape, dtype=bool)
    m[j[sel], i[sel]] = True
    out["support"] = m
    i, j, s = edge_pixels(spec, bc.load_edge)
    k = _nearest(s, bc.load_point, j * spec.nx + i)
    m = np.zeros(spec.shape, dtype=bool)
    m[j[k], i[k]] = True
    out["load"] = m
    return out


def model_from_bc(spec: GridSpec, bc: BoundaryConditions, **material) -> FeaModel:
    """Support nodes fixed in both directions, unit point force at the load node."""
    fixed = support_node_ids(spec, bc)
    ndof = 2 * (spec.nx + 1) * (spec.ny + 1)
    f = np.zeros(ndof)
    k = load_node_id(spec, bc)
    fx, fy = bc.load_direction
    f[2 * k] = fx
    f[2 * k + 1] = fy
    label = (f"[support {bc.support_edge} {bc.support_interval[0]:.3f}-{bc.support_interval[1]:.3f}, "
             f"load {bc.load_edge} {bc.load_point:.3f} at {math.degrees(bc.load_angle):.1f} deg]")
    return FeaModel(spec, np.r_[2 * fixed, 2 * fixed + 1], f, label=label, **material)
