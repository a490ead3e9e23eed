"""Explicit Moving Morphable Component decoder.

A component is a straight bar described by its two endpoints ``A``, ``B`` and
a half-thickness ``t``.  Its density at a point is the sigmoid projection of a
sixth-power hyperelliptic level set expressed in the bar's local frame::

    x0, y0 = (A + B) / 2,   L = |B - A|,   theta = atan2(B - A)
    x1 =  cos(theta) (X - x0) + sin(theta) (Y - y0)
    y1 = -sin(theta) (X - x0) + cos(theta) (Y - y0)
    phi = 1 - ((x1 / l + eps)^6 + (y1 / t + eps)^6 + eps)^(1/6)
    rho = sigmoid((phi - alpha) / beta)

where ``l = L / 2`` by default so that both endpoints sit on the zero level
set (``ProjectionParams.half_length=False`` uses ``l = L`` instead).

Several components are merged with the smooth union ``1 - prod(1 - rho_i)``.
Gradients of any weighted pixel sum with respect to ``(ax, ay, bx, by, t)``
are obtained in closed form by :func:`grad_params`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DegenerateGeometryError
from .raster import DensityGrid, GridSpec, PathLike, atomic_write

T_MIN = 0.001
T_MAX = 0.2
MIN_LENGTH = 1e-6


@dataclass(frozen=True)
class Component:
    """Endpoint bar: ``A = (ax, ay)``, ``B = (bx, by)``, half-thickness ``t``."""

    ax: float
    ay: float
    bx: float
    by: float
    t: float

    def __post_init__(self):
        for name in ("ax", "ay", "bx", "by", "t"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"component field {name} is not finite: {v}")
            object.__setattr__(self, name, v)
        if not T_MIN <= self.t <= T_MAX:
            raise ValueError(f"half-thickness t={self.t} outside [{T_MIN}, {T_MAX}]")

    @property
    def length(self) -> float:
        return math.hypot(self.bx - self.ax, self.by - self.ay)

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.bx, self.by, self.t])

    @classmethod
    def from_array(cls, a) -> "Component":
        return cls(*(float(v) for v in a))

    def swapped(self) -> "Component":
        return Component(self.bx, self.by, self.ax, self.ay, self.t)

    def translated(self, dx: float, dy: float) -> "Component":
        return Component(self.ax + dx, self.ay + dy, self.bx + dx, self.by + dy, self.t)

    def to_dict(self) -> dict:
        return {"ax": self.ax, "ay": self.ay, "bx": self.bx, "by": self.by, "t": self.t}


@dataclass(frozen=True)
class Pose:
    x0: float
    y0: float
    L: float
    theta: float


@dataclass(frozen=True)
class ProjectionParams:
    """Level-set regulariser ``epsilon`` and sigmoid level/sharpness ``alpha``/``beta``."""

    epsilon: float = 1e-3
    alpha: float = 0.0
    beta: float = 0.01
    half_length: bool = True

    def __post_init__(self):
        # epsilon = 0 is accepted for point evaluation; gradients need epsilon > 0
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")

    def with_beta(self, beta: float) -> "ProjectionParams":
        return ProjectionParams(self.epsilon, self.alpha, beta, self.half_length)

    def to_dict(self) -> dict:
        d = {"epsilon": self.epsilon, "alpha": self.alpha, "beta": self.beta}
        if not self.half_length:
            d["half_length"] = False
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionParams":
        return cls(float(d.get("epsilon", 1e-3)), float(d.get("alpha", 0.0)),
                   float(d.get("beta", 0.01)), bool(d.get("half_length", True)))


@dataclass(frozen=True)
class ComponentSet:
    components: tuple = ()
    domain: GridSpec = field(default_factory=lambda: GridSpec(1, 1))

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        for c in self.components:
            if not isinstance(c, Component):
                raise TypeError(f"expected Component, got {type(c).__name__}")

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, k):
        return self.components[k]

    def as_array(self) -> np.ndarray:
        if not self.components:
            return np.zeros((0, 5))
        return np.stack([c.as_array() for c in self.components])

    @classmethod
    def from_array(cls, arr, domain: GridSpec) -> "ComponentSet":
        return cls(tuple(Component.from_array(row) for row in np.asarray(arr, dtype=float).reshape(-1, 5)), domain)

    def subset(self, keep: Iterable[int]) -> "ComponentSet":
        return ComponentSet(tuple(self.components[k] for k in keep), self.domain)

    def replace(self, k: int, c: Component) -> "ComponentSet":
        comps = list(self.components)
        comps[k] = c
        return ComponentSet(tuple(comps), self.domain)

    def with_domain(self, domain: GridSpec) -> "ComponentSet":
        return ComponentSet(self.components, domain)


# --------------------------------------------------------------------------
# pose and point evaluation
# --------------------------------------------------------------------------

def derive_pose(c: Component) -> Pose:
    """Centroid, length and orientation of a component."""
    L = c.length
    if L < MIN_LENGTH:
        raise DegenerateGeometryError(f"component endpoints coincide (L={L:.3g})")
    return Pose(0.5 * (c.ax + c.bx), 0.5 * (c.ay + c.by), L, math.atan2(c.by - c.ay, c.bx - c.ax))


def level_set(c: Component, p: ProjectionParams, X, Y):
    """Hyperelliptic level set value ``phi`` at physical points ``(X, Y)``."""
    pose = derive_pose(c)
    ct, st = math.cos(pose.theta), math.sin(pose.theta)
    rx = np.asarray(X, dtype=float) - pose.x0
    ry = np.asarray(Y, dtype=float) - pose.y0
    x1 = ct * rx + st * ry
    y1 = -st * rx + ct * ry
    ell = 0.5 * pose.L if p.half_length else pose.L
    eps = p.epsilon
    s = (x1 / ell + eps) ** 6 + (y1 / c.t + eps) ** 6 + eps
    return 1.0 - s ** (1.0 / 6.0)


def component_density_at(c: Component, p: ProjectionParams, X, Y):
    """Projected density of one component at ``(X, Y)`` (scalars or arrays)."""
    z = (level_set(c, p, X, Y) - p.alpha) / p.beta
    out = expit(z)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# vectorised decoding with closed-form vector-Jacobian products
# --------------------------------------------------------------------------

class _Decoded:
    """Per-component density fields plus the intermediates needed for gradients."""

    __slots__ = ("rho", "q", "cache")

    def __init__(self, rho, q, cache):
        self.rho = rho  # (n, npix) component densities
        self.q = q      # (n, npix) 1 - rho computed without cancellation
        self.cache = cache


def _check_lengths(P: np.ndarray) -> np.ndarray:
    L = np.hypot(P[:, 2] - P[:, 0], P[:, 3] - P[:, 1])
    bad = np.flatnonzero(L < MIN_LENGTH)
    if bad.size:
        raise DegenerateGeometryError(f"component {int(bad[0])} has coincident endpoints (L={L[bad[0]]:.3g})")
    return L


def decode(P: np.ndarray, X: np.ndarray, Y: np.ndarray, p: ProjectionParams,
           keep_cache: bool = False) -> _Decoded:
    """Evaluate component densities of parameter rows ``P`` (n, 5) at points ``X``, ``Y``."""
    P = np.asarray(P, dtype=float).reshape(-1, 5)
    L = _check_lengths(P)
    ax, ay, bx, by, t = (P[:, k:k + 1] for k in range(5))
    Lc = L[:, None]
    c = (bx - ax) / Lc
    s = (by - ay) / Lc
    rx = X[None, :] - 0.5 * (ax + bx)
    ry = Y[None, :] - 0.5 * (ay + by)
    x1 = c * rx + s * ry
    y1 = -s * rx + c * ry
    ell = 0.5 * Lc if p.half_length else Lc
    eps = p.epsilon
    u = x1 / ell + eps
    v = y1 / t + eps
    u2 = u * u
    v2 = v * v
    S = u2 * u2 * u2 + v2 * v2 * v2 + eps
    root = S ** (1.0 / 6.0)
    z = (1.0 - root - p.alpha) / p.beta
    rho = expit(z)
    q = expit(-z)
    cache = None
    if keep_cache:
        cache = dict(c=c, s=s, rx=rx, ry=ry, x1=x1, y1=y1, ell=ell, t=t, L=Lc, u=u, v=v, S=S, root=root)
    return _Decoded(rho, q, cache)


def vjp(dec: _Decoded, W: np.ndarray, p: ProjectionParams) -> np.ndarray:
    """Gradient of ``sum(W * rho_i)`` with respect to each parameter row (n, 5)."""
    k = dec.cache
    gz = W * dec.rho * dec.q / p.beta
    # d(phi)/dS = -(1/6) S^(-5/6) = -(1/6) root / S
    gS = -gz * k["root"] / (6.0 * k["S"])
    u, v = k["u"], k["v"]
    u2, v2 = u * u, v * v
    gu = gS * 6.0 * u2 * u2 * u
    gv = gS * 6.0 * v2 * v2 * v
    ell, t = k["ell"], k["t"]
    g_x1 = gu / ell
    g_y1 = gv / t
    g_ell = -(gu * k["x1"]).sum(axis=1, keepdims=True) / (ell * ell)
    g_t = -(gv * k["y1"]).sum(axis=1, keepdims=True) / (t * t)
    c, s, rx, ry = k["c"], k["s"], k["rx"], k["ry"]
    g_x0 = -(c * g_x1 - s * g_y1).sum(axis=1, keepdims=True)
    g_y0 = -(s * g_x1 + c * g_y1).sum(axis=1, keepdims=True)
    g_c = (g_x1 * rx + g_y1 * ry).sum(axis=1, keepdims=True)
    g_s = (g_x1 * ry - g_y1 * rx).sum(axis=1, keepdims=True)
    L = k["L"]
    g_L = g_ell * (0.5 if p.half_length else 1.0)
    # direction (c, s) = d / L: project out the radial part
    along = c * g_c + s * g_s
    g_dx = (g_c - c * along) / L + c * g_L
    g_dy = (g_s - s * along) / L + s * g_L
    out = np.hstack([0.5 * g_x0 - g_dx, 0.5 * g_y0 - g_dy, 0.5 * g_x0 + g_dx, 0.5 * g_y0 + g_dy, g_t])
    return out


def union_fields(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smooth union of stacked complements ``q_i = 1 - rho_i``.

    Returns the union density and ``d(union)/d(rho_i) = prod_{j != i} q_j``.
    """
    n = q.shape[0]
    if n == 0:
        return np.zeros(q.shape[1:]), np.zeros(q.shape)
    prefix = np.ones_like(q)
    suffix = np.ones_like(q)
    if n > 1:
        prefix[1:] = np.cumprod(q[:-1], axis=0)
        suffix[:-1] = np.cumprod(q[:0:-1], axis=0)[::-1]
    total = prefix[-1] * q[-1]
    return 1.0 - total, prefix * suffix


def _pixel_coords(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    X, Y = spec.centers()
    return np.ascontiguousarray(X).ravel(), np.ascontiguousarray(Y).ravel()


# --------------------------------------------------------------------------
# public rendering API
# --------------------------------------------------------------------------

def render_component(c: Component, p: ProjectionParams, spec: GridSpec) -> DensityGrid:
    """Density of one component sampled at every pixel centre."""
    X, Y = _pixel_coords(spec)
    dec = decode(c.as_array()[None, :], X, Y, p)
    return DensityGrid(spec, dec.rho[0], check=False)


def combine_union(fields: Sequence[DensityGrid], spec: GridSpec | None = None) -> DensityGrid:
    """Pointwise ``1 - prod(1 - rho_i)``; an empty list gives zeros on ``spec``."""
    fields = list(fields)
    if not fields:
        if spec is None:
            raise ValueError("combine_union of an empty list needs a grid spec")
        return DensityGrid.zeros(spec)
    shape = fields[0].shape
    for f in fields[1:]:
        if f.shape != shape:
            raise ValueError(f"grid shapes differ: {shape} vs {f.shape}")
    # u + f - u f equals 1 - (1 - u)(1 - f) but keeps zeros and single fields exact
    u = np.zeros(shape)
    for f in fields:
        u = u + f.values - u * f.values
    return DensityGrid(fields[0].spec, np.clip(u, 0.0, 1.0), check=False)


def component_fields(s: ComponentSet, p: ProjectionParams, spec: GridSpec) -> np.ndarray:
    """Stacked per-component densities, shape ``(n, ny, nx)``."""
    if len(s) == 0:
        return np.zeros((0,) + spec.shape)
    X, Y = _pixel_coords(spec)
    return decode(s.as_array(), X, Y, p).rho.reshape((len(s),) + spec.shape)


def render_set(s: ComponentSet, p: ProjectionParams, spec: GridSpec | None = None) -> DensityGrid:
    """Union density of all components of ``s`` (zeros for an empty set)."""
    spec = s.domain if spec is None else spec
    if len(s) == 0:
        return DensityGrid.zeros(spec)
    X, Y = _pixel_coords(spec)
    dec = decode(s.as_array(), X, Y, p)
    rho, _ = union_fields(dec.q)
    return DensityGrid(spec, rho, check=False)


def render_and_grad(P: np.ndarray, p: ProjectionParams, spec: GridSpec, cotangent_fn):
    """Render parameter rows ``P`` and pull back a pixel cotangent.

    ``cotangent_fn(rho_union)`` receives the flattened union density and must
    return ``(value, cotangent)``; the function returns ``(value, grads, rho)``.
    """
    X, Y = _pixel_coords(spec)
    dec = decode(P, X, Y, p, keep_cache=True)
    rho, partial = union_fields(dec.q)
    value, cot = cotangent_fn(rho)
    grads = vjp(dec, partial * cot[None, :], p)
    return value, grads, rho


def grad_params(s: ComponentSet, p: ProjectionParams, spec: GridSpec, cotangent: DensityGrid) -> np.ndarray:
    """Gradient of ``sum(cotangent * union_density)`` w.r.t. ``(ax, ay, bx, by, t)`` per component."""
    if cotangent.shape != spec.shape:
        raise ValueError(f"cotangent shape {cotangent.shape} does not match grid {spec.shape}")
    if len(s) == 0:
        return np.zeros((0, 5))
    cot = np.asarray(cotangent.values, dtype=float).ravel()
    _, grads, _ = render_and_grad(s.as_array(), p, spec, lambda rho: (None, cot))
    return grads


def grad_params_array(s: ComponentSet, p: ProjectionParams, spec: GridSpec, cotangent: np.ndarray) -> np.ndarray:
    """As :func:`grad_params` but with a raw ``(ny, nx)`` cotangent array (any sign)."""
    cot = np.asarray(cotangent, dtype=float).ravel()
    _, grads, _ = render_and_grad(s.as_array(), p, spec, lambda rho: (None, cot))
    return grads


# --------------------------------------------------------------------------
# JSON exchange format
# --------------------------------------------------------------------------

def components_to_dict(s: ComponentSet, p: ProjectionParams) -> dict:
    return {
        "domain": s.domain.to_dict(),
        "projection": p.to_dict(),
        "components": [c.to_dict() for c in s.components],
    }


def components_from_dict(d: dict) -> tuple[ComponentSet, ProjectionParams]:
    try:
        domain = GridSpec.from_dict(d["domain"])
        proj = ProjectionParams.from_dict(d.get("projection", {}))
        comps = tuple(Component(float(c["ax"]), float(c["ay"]), float(c["bx"]), float(c["by"]), float(c["t"]))
                      for c in d["components"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed component-set document: missing or bad field {exc}") from None
    return ComponentSet(comps, domain), proj


def save_components(path: PathLike, s: ComponentSet, p: ProjectionParams, extra: dict | None = None) -> None:
    doc = components_to_dict(s, p)
    if extra:
        doc.update(extra)
    atomic_write(Path(path), (json.dumps(doc, indent=2) + "\n").encode())


def load_components(path: PathLike) -> tuple[ComponentSet, ProjectionParams]:
    with open(path) as fh:
        return components_from_dict(json.load(fh))
