"""Target generation: SIMP topologies under random boundary conditions and
random component assemblies with known ground truth."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from . import mmc
from .boundary import BoundaryConditions, model_from_bc, sample_bc, spec_for
from .errors import GenerationError
from .fea import FeaModel, solve
from .mmc import MIN_LENGTH, Component, ComponentSet, ProjectionParams
from .raster import DensityGrid, GridSpec, atomic_write, binarize, save_grid

log = logging.getLogger(__name__)

KINDS = ("simp", "simp5", "random")
MANIFEST_COLUMNS = ("id", "kind", "seed", "target_path", "truth_path", "bc_path")
LOWVOL_FRACTION = 0.05
LOWVOL_THRESHOLD = 0.1
THICKNESS_RANGE = (0.02, 0.12)
MIN_COMPONENT_PIXELS = 10


@dataclass(frozen=True)
class SimpOptions:
    volfrac: float = 0.5
    penal: float = 3.0
    rmin: float = 2.4
    max_iters: int = 100
    change_tol: float = 0.01
    move: float = 0.2
    resolution: float = 30.0

    def __post_init__(self):
        if not 0.0 < self.volfrac < 1.0:
            raise ValueError("volfrac must lie in (0, 1)")
        if not self.penal >= 1.0:
            raise ValueError("penal must be >= 1")
        if not self.rmin >= 1.0:
            raise ValueError("rmin must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.change_tol > 0 or not 0 < self.move <= 1:
            raise ValueError("change_tol must be positive and move in (0, 1]")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")


@dataclass
class SimpResult:
    density: DensityGrid
    compliance: float
    iterations: int
    history: list = field(default_factory=list)


def _filter_kernel(rmin: float) -> np.ndarray:
    r = math.ceil(rmin) - 1
    d = np.arange(-r, r + 1)
    return np.maximum(0.0, rmin - np.hypot(d[:, None], d[None, :]))


def simp_run(model: FeaModel, opts: SimpOptions | None = None) -> SimpResult:
    """Density-filtered SIMP with optimality-criteria updates on ``model``'s mesh."""
    opts = SimpOptions() if opts is None else opts
    spec = model.spec
    n = spec.nx * spec.ny
    kern = _filter_kernel(opts.rmin)
    filt = lambda a: correlate(a, kern, mode="constant", cval=0.0)
    Hs = filt(np.ones(spec.shape))
    edof = model.edof
    KE = model.KE
    dE = model.E0 - model.Emin

    x = np.full(spec.shape, opts.volfrac)
    xphys = x.copy()
    history = []
    change, it = 1.0, 0
    while change > opts.change_tol and it < opts.max_iters:
        it += 1
        u = solve(model, xphys, penal=opts.penal)
        ue = u[edof]
        ce = np.einsum("ij,jk,ik->i", ue, KE, ue).reshape(spec.shape)
        c = float(((model.Emin + xphys ** opts.penal * dE) * ce).sum())
        history.append(c)
        dc = -opts.penal * xphys ** (opts.penal - 1) * dE * ce
        dc = filt(dc / Hs)
        dv = filt(np.ones(spec.shape) / Hs)
        lo, hi = np.maximum(0.0, x - opts.move), np.minimum(1.0, x + opts.move)
        ratio = np.sqrt(np.maximum(-dc / dv, 0.0))
        l1, l2 = 0.0, 1e9
        target = opts.volfrac * n
        while (l2 - l1) / (l1 + l2) > 1e-12:
            lmid = 0.5 * (l1 + l2)
            xnew = np.clip(x * ratio / math.sqrt(lmid), lo, hi)
            xphys = filt(xnew) / Hs
            if xphys.sum() > target:
                l1 = lmid
            else:
                l2 = lmid
        change = float(np.abs(xnew - x).max())
        x = xnew
        log.debug("simp it %d  c %.4f  vol %.4f  change %.3f", it, c, xphys.mean(), change)
    xphys = np.clip(xphys, 0.0, 1.0)
    u = solve(model, xphys, penal=opts.penal)
    return SimpResult(DensityGrid(spec, xphys, check=False), float(model.load_vector @ u), it, history)


def simp_optimize(bc: BoundaryConditions, opts: SimpOptions | None = None) -> DensityGrid:
    """Continuous SIMP densities on a ``round(res*w)`` x ``round(res*h)`` grid."""
    opts = SimpOptions() if opts is None else opts
    model = model_from_bc(spec_for(bc, opts.resolution), bc, penal=opts.penal)
    return simp_run(model, opts).density


def make_lowvol_target(bc: BoundaryConditions, opts: SimpOptions | None = None) -> DensityGrid:
    """Low-volume SIMP result thresholded at 0.1 (values <= 0.1 become void)."""
    opts = SimpOptions() if opts is None else opts
    opts = replace(opts, volfrac=LOWVOL_FRACTION)
    return binarize(simp_optimize(bc, opts), LOWVOL_THRESHOLD)


def random_assembly(rng_seed: int, n_components: tuple[int, int] = (4, 8),
                    spec: GridSpec | None = None, p: ProjectionParams | None = None
                    ) -> tuple[ComponentSet, DensityGrid]:
    """Uniformly sampled components and the binarized render they produce.

    The count is uniform over the inclusive range; components covering fewer
    than 10 pixels after binarization are redrawn.
    """
    spec = GridSpec(128, 128) if spec is None else spec
    p = ProjectionParams() if p is None else p
    lo, hi = n_components
    if not 2 <= lo <= hi <= 16:
        raise ValueError("component count range must lie within [2, 16]")
    rng = np.random.default_rng(rng_seed)
    n = int(rng.integers(lo, hi + 1))
    comps: list[Component] = []
    attempts = 0
    while len(comps) < n:
        if attempts >= 100 * n:
            raise GenerationError(f"seed {rng_seed}: {attempts} rejected draws for {n} components")
        attempts += 1
        ax, bx = rng.uniform(0.0, spec.w, 2)
        ay, by = rng.uniform(0.0, spec.h, 2)
        t = rng.uniform(*THICKNESS_RANGE)
        if math.hypot(bx - ax, by - ay) < MIN_LENGTH:
            continue
        c = Component(float(ax), float(ay), float(bx), float(by), float(t))
        if (mmc.render_component(c, p, spec).values > 0.5).sum() < MIN_COMPONENT_PIXELS:
            continue
        comps.append(c)
    s = ComponentSet(tuple(comps), spec)
    return s, binarize(mmc.render_set(s, p), 0.5)


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

def sub_seed(seed: int, index: int) -> int:
    """Per-sample seed: first word of ``SeedSequence([seed, index])``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class Manifest:
    path: Path
    rows: list
    failures: list


def _make_sample(kind: str, index: int, seed: int, out_dir: Path,
                 simp_opts: SimpOptions, spec: GridSpec, p: ProjectionParams) -> dict:
    sid = f"{kind}_{index:05d}"
    row = {"id": sid, "kind": kind, "seed": seed, "target_path": f"targets/{sid}.pgm",
           "truth_path": "-", "bc_path": "-"}
    if kind == "random":
        truth, target = random_assembly(seed, spec=spec, p=p)
        row["truth_path"] = f"truth/{sid}.json"
        mmc.save_components(out_dir / row["truth_path"], truth, p, {"id": sid, "seed": seed})
    else:
        bc = sample_bc(seed)
        target = simp_optimize(bc, simp_opts) if kind == "simp" else make_lowvol_target(bc, simp_opts)
        row["bc_path"] = f"bc/{sid}.json"
        atomic_write(out_dir / row["bc_path"], bc.to_json().encode())
    save_grid(target, out_dir / row["target_path"], "pgm")
    return row


def _sample_job(args):
    kind, index, seed = args[:3]
    try:
        return _make_sample(*args), None
    except Exception as exc:  # reported per sample, generation continues
        return None, {"id": f"{kind}_{index:05d}", "seed": seed,
                      "error": f"{type(exc).__name__}: {exc}"}


def _csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue().encode()


def generate_dataset(kind: str, count: int, seed: int, out_dir, jobs: int = 1,
                     simp_opts: SimpOptions | None = None, spec: GridSpec | None = None,
                     p: ProjectionParams | None = None) -> Manifest:
    """Write ``count`` targets plus truth/BC JSON and ``manifest.csv`` under ``out_dir``.

    Sample ``i`` uses ``sub_seed(seed, i)``, so output depends only on
    ``(kind, count, seed)`` and the options, never on ``jobs``.  Failed
    samples are left out of the manifest and listed in ``failures.csv``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if count < 0:
        raise ValueError("count must be non-negative")
    simp_opts = SimpOptions() if simp_opts is None else simp_opts
    spec = GridSpec(128, 128) if spec is None else spec
    p = ProjectionParams() if p is None else p
    out = Path(out_dir)
    for sub in ("targets", "truth", "bc"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    tasks = [(kind, i, sub_seed(seed, i), out, simp_opts, spec, p) for i in range(count)]
    if jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sample_job, tasks))
    else:
        results = [_sample_job(t) for t in tasks]
    rows = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    for f in failures:
        log.warning("sample %s failed: %s", f["id"], f["error"])
    path = out / "manifest.csv"
    atomic_write(path, _csv_bytes(MANIFEST_COLUMNS, rows))
    atomic_write(out / "failures.csv", _csv_bytes(("id", "seed", "error"), failures))
    return Manifest(path, rows, failures)


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(MANIFEST_COLUMNS):
        raise ValueError(f"{path}: manifest columns {sorted(rows[0])} do not match {MANIFEST_COLUMNS}")
    return rows
