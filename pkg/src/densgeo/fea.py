"""2D linear-elastic plane-stress finite elements on density grids.

One bilinear quadrilateral per pixel.  Nodes are numbered column by column
from the top, ``node(i, j) = i * (ny + 1) + j`` for node column ``i`` and node
row ``j`` (row 0 at the top edge); node ``k`` owns DOFs ``2k`` (x) and
``2k + 1`` (y, positive up).  Element stiffness is scaled by the modified SIMP
law ``Emin + rho^penal (E0 - Emin)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, diags
from scipy.sparse.linalg import splu

from .errors import SolverError
from .raster import DensityGrid, GridSpec

RESIDUAL_TOL = 1e-8


def element_stiffness(a: float = 1.0, b: float = 1.0, nu: float = 0.3, E: float = 1.0) -> np.ndarray:
    """8x8 stiffness of an ``a`` x ``b`` bilinear plane-stress element, unit thickness.

    Node order: bottom-left, bottom-right, top-right, top-left; DOFs
    interleaved ``(u, v)`` per node.  Integrated with 2x2 Gauss points.
    """
    D = E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    xi_n = np.array([-1, 1, 1, -1])
    eta_n = np.array([-1, -1, 1, 1])
    K = np.zeros((8, 8))
    g = 1 / np.sqrt(3)
    for xi in (-g, g):
        for eta in (-g, g):
            dN_dxi = 0.25 * xi_n * (1 + eta * eta_n)
            dN_deta = 0.25 * eta_n * (1 + xi * xi_n)
            dN_dx = dN_dxi * 2 / a
            dN_dy = dN_deta * 2 / b
            B = np.zeros((3, 8))
            B[0, 0::2] = dN_dx
            B[1, 1::2] = dN_dy
            B[2, 0::2] = dN_dy
            B[2, 1::2] = dN_dx
            K += B.T @ D @ B * (a * b / 4)
    return K


def node_id(spec: GridSpec, i, j):
    return np.asarray(i) * (spec.ny + 1) + np.asarray(j)


def element_dofs(spec: GridSpec) -> np.ndarray:
    """``(ny * nx, 8)`` DOF table; row ``j * nx + i`` is pixel row ``j``, column ``i``."""
    jj, ii = np.mgrid[0:spec.ny, 0:spec.nx]
    n1 = node_id(spec, ii, jj).ravel()          # top-left
    n2 = node_id(spec, ii + 1, jj).ravel()      # top-right
    return np.column_stack([2 * n1 + 2, 2 * n1 + 3, 2 * n2 + 2, 2 * n2 + 3,
                            2 * n2, 2 * n2 + 1, 2 * n1, 2 * n1 + 1])


@dataclass(frozen=True, eq=False)
class FeaModel:
    """Mesh, material and boundary conditions of one structural problem."""

    spec: GridSpec
    fixed_dofs: np.ndarray
    load_vector: np.ndarray
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    penal: float = 3.0
    label: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ndof = self.ndof
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        f = np.asarray(self.load_vector, dtype=float).ravel()
        if fixed.size == 0:
            raise ValueError("at least one DOF must be fixed")
        if fixed.min() < 0 or fixed.max() >= ndof:
            raise ValueError("fixed DOF index out of range")
        if f.size != ndof:
            raise ValueError(f"load vector has {f.size} entries, mesh has {ndof} DOFs")
        if not self.Emin > 0:
            raise ValueError("Emin must be positive")
        object.__setattr__(self, "fixed_dofs", fixed)
        object.__setattr__(self, "load_vector", f)
        free = np.setdiff1d(np.arange(ndof), fixed)
        edof = element_dofs(self.spec)
        self._cache.update(
            free=free,
            edof=edof,
            iK=np.repeat(edof, 8, axis=1).ravel(),
            jK=np.tile(edof, (1, 8)).ravel(),
            KE=element_stiffness(self.spec.dx, self.spec.dy, self.nu),
        )

    @property
    def ndof(self) -> int:
        return 2 * (self.spec.nx + 1) * (self.spec.ny + 1)

    @property
    def free_dofs(self) -> np.ndarray:
        return self._cache["free"]

    @property
    def edof(self) -> np.ndarray:
        return self._cache["edof"]

    @property
    def KE(self) -> np.ndarray:
        return self._cache["KE"]

    def stiffness_scale(self, rho: np.ndarray, penal: float | None = None) -> np.ndarray:
        penal = self.penal if penal is None else penal
        return self.Emin + np.asarray(rho, dtype=float).ravel() ** penal * (self.E0 - self.Emin)

    def assemble(self, rho: np.ndarray, penal: float | None = None):
        sK = (self.KE.ravel()[None, :] * self.stiffness_scale(rho, penal)[:, None]).ravel()
        n = self.ndof
        return coo_matrix((sK, (self._cache["iK"], self._cache["jK"])), shape=(n, n)).tocsc()


def _densities(model: FeaModel, densities) -> np.ndarray:
    values = densities.values if isinstance(densities, DensityGrid) else np.asarray(densities, dtype=float)
    if values.size != model.spec.nx * model.spec.ny:
        raise ValueError(f"density grid of {values.size} values does not match the {model.spec.nx}x{model.spec.ny} mesh")
    return values.reshape(model.spec.shape)


def _refine(inv, K, f, x, steps: int):
    """Iterative refinement; residuals are formed in the dtype of ``x``."""
    fn = np.linalg.norm(f)
    res = np.inf
    for _ in range(steps + 1):
        r = f - K @ x
        res = float(np.linalg.norm(r) / fn)
        if res <= RESIDUAL_TOL:
            break
        x = x + inv(r.astype(float))
    return x, res


def solve(model: FeaModel, rho: np.ndarray, load: np.ndarray | None = None,
          *, penal: float | None = None, return_residual: bool = False):
    """Displacements for element densities ``rho`` (shape ``(ny, nx)``).

    The free-DOF system is symmetrically scaled to unit diagonal before the
    sparse LU, which removes most of the conditioning caused by the solid/void
    stiffness contrast.  When material floats on void the displacement there
    is of order ``1/Emin`` and double-precision residuals cannot resolve
    ``1e-8``; refinement then switches to extended-precision residuals, and
    the displacements are returned in extended precision when rounding them
    to double would break the bound.
    """
    f = model.load_vector if load is None else np.asarray(load, dtype=float)
    u = np.zeros(model.ndof)
    if not f.any():
        return (u, 0.0) if return_residual else u
    K = model.assemble(rho, penal)
    free = model.free_dofs
    Kff = K[free][:, free].tocsc()
    ff = f[free]
    d = 1.0 / np.sqrt(Kff.diagonal())
    S = diags(d) @ Kff @ diags(d)
    try:
        lu = splu(S.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"singular stiffness matrix {model.label}: {exc}") from None
    piv = np.abs(lu.U.diagonal())
    if piv.min() < piv.size * np.finfo(float).eps * piv.max():
        # zero-energy modes left after removing the fixed DOFs
        raise SolverError(f"structurally singular stiffness matrix {model.label}")
    inv = lambda r: d * lu.solve(d * r)
    x, res = _refine(inv, Kff, ff, inv(ff), 3)
    if not res <= RESIDUAL_TOL and np.isfinite(res):
        Kl, fl = Kff.astype(np.longdouble), ff.astype(np.longdouble)
        x, res = _refine(inv, Kl, fl, x.astype(np.longdouble), 10)
        if res <= RESIDUAL_TOL:
            # keep extended precision only if rounding to double breaks the bound
            xd = x.astype(float)
            rd = float(np.linalg.norm(fl - Kl @ xd) / np.linalg.norm(fl))
            if rd <= RESIDUAL_TOL:
                x, res = xd, rd
            else:
                u = u.astype(np.longdouble)
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SolverError(f"linear solve residual {res:.3g} exceeds {RESIDUAL_TOL:g} {model.label}")
    u[free] = x
    return (u, res) if return_residual else u


def assemble_solve(model: FeaModel, densities) -> np.ndarray:
    """Nodal displacement vector of ``K(densities) u = f``."""
    return solve(model, _densities(model, densities))


def compliance(model: FeaModel, densities) -> float:
    """External work ``f . u``."""
    u = assemble_solve(model, densities)
    return float(model.load_vector.astype(u.dtype) @ u)


def probe_displacement(model: FeaModel, densities, probe: int) -> float:
    """Signed displacement of a single free DOF."""
    if not 0 <= probe < model.ndof:
        raise ValueError(f"probe DOF {probe} out of range")
    if probe in set(model.fixed_dofs.tolist()):
        raise ValueError(f"probe DOF {probe} is fixed")
    return float(assemble_solve(model, densities)[probe])
