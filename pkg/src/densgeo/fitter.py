"""Reverse-engineering engine.

Components are fitted to a binary target by first-order descent on the dice
reconstruction loss ``1 - dice(render_set(s), target)``.  The descent starts
from a skeleton-derived seed, works on a smoothed projection that is sharpened
over the iterations, and always returns the best iterate measured under the
caller's projection.  Duplicate detections are removed by pairwise mask-dice
non-maximum suppression; components that do not help the reconstruction are
pruned greedily.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import mmc
from .errors import DegenerateGeometryError, EmptyBBoxError, FitError
from .mmc import MIN_LENGTH, T_MAX, T_MIN, Component, ComponentSet, ProjectionParams
from .raster import DensityGrid, GridSpec, dice_values

log = logging.getLogger(__name__)

BBOX_PAD = 2


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel rectangle (columns ``xmin..xmax``, rows ``ymin..ymax``)."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError(f"inverted bounding box {self}")

    @property
    def width(self) -> int:
        return self.xmax - self.xmin + 1

    @property
    def height(self) -> int:
        return self.ymax - self.ymin + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def slices(self) -> tuple[slice, slice]:
        return slice(self.ymin, self.ymax + 1), slice(self.xmin, self.xmax + 1)

    def iou(self, other: "BBox") -> float:
        w = min(self.xmax, other.xmax) - max(self.xmin, other.xmin) + 1
        h = min(self.ymax, other.ymax) - max(self.ymin, other.ymin) + 1
        if w <= 0 or h <= 0:
            return 0.0
        inter = w * h
        return inter / (self.area + other.area - inter)


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``beta_start`` is the sigmoid sharpness the descent starts from; it is
    geometrically reduced to the target projection's ``beta`` over the first
    ``anneal_fraction`` of ``max_iters``.  Early stopping is only armed once the
    target sharpness is reached.
    """

    max_iters: int = 400
    learning_rate: float = 0.02
    t_bounds: tuple = (T_MIN, T_MAX)
    early_stop_patience: int = 50
    nms_dice_threshold: float = 0.9
    prune_tolerance: float = 1e-3
    beta_start: float = 0.2
    anneal_fraction: float = 0.6
    final_lr_fraction: float = 0.1

    def __post_init__(self):
        lo, hi = self.t_bounds
        if not T_MIN <= lo <= hi <= T_MAX:
            raise ValueError(f"t_bounds {self.t_bounds} must lie within [{T_MIN}, {T_MAX}]")
        if not 0.0 < self.nms_dice_threshold <= 1.0:
            raise ValueError("nms_dice_threshold must lie in (0, 1]")
        if self.max_iters < 0 or self.early_stop_patience < 1:
            raise ValueError("max_iters must be >= 0 and early_stop_patience >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.prune_tolerance < 0:
            raise ValueError("prune_tolerance must be >= 0")


@dataclass
class FitResult:
    components: ComponentSet
    final_dice: float
    initial_dice: float
    iterations_used: int
    per_component_score: list = field(default_factory=list)

    def to_dict(self, p: ProjectionParams) -> dict:
        doc = mmc.components_to_dict(self.components, p)
        doc.update({"initial_dice": self.initial_dice, "final_dice": self.final_dice,
                    "iterations": self.iterations_used, "scores": list(self.per_component_score)})
        return doc


def _require_binary(target: DensityGrid) -> np.ndarray:
    if not target.is_binary():
        raise ValueError("target must be binary; binarize it first")
    return target.values


# --------------------------------------------------------------------------
# per-component scoring
# --------------------------------------------------------------------------

def component_bbox(c: Component, spec: GridSpec, coverage: float = 0.5,
                   p: ProjectionParams | None = None, pad: int = BBOX_PAD) -> BBox:
    """Pixels where the component density reaches ``coverage``, padded and clipped."""
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must lie in (0, 1)")
    p = ProjectionParams() if p is None else p
    rho = mmc.render_component(c, p, spec).values
    rows, cols = np.nonzero(rho >= coverage)
    if rows.size == 0:
        raise EmptyBBoxError(f"no pixel of {c} reaches density {coverage}")
    return BBox(max(int(cols.min()) - pad, 0), max(int(rows.min()) - pad, 0),
                min(int(cols.max()) + pad, spec.nx - 1), min(int(rows.max()) + pad, spec.ny - 1))


def bounded_component_dice(c: Component, target: DensityGrid, p: ProjectionParams,
                           coverage: float = 0.5, with_status: bool = False):
    """Dice between the component's density and the target, both cropped to its box.

    A component with an empty box scores 0; ``with_status=True`` additionally
    returns whether the box was non-empty.
    """
    mask = _require_binary(target)
    try:
        box = component_bbox(c, target.spec, coverage, p)
    except EmptyBBoxError:
        log.debug("empty bounding box for %s; scoring 0", c)
        return (0.0, False) if with_status else 0.0
    sl = box.slices()
    X, Y = target.spec.centers()
    rho = mmc.decode(c.as_array()[None, :], X[sl].ravel(), Y[sl].ravel(), p).rho[0]
    d = dice_values(rho, mask[sl].ravel())
    return (d, True) if with_status else d


def component_scores(s: ComponentSet, target: DensityGrid, p: ProjectionParams) -> list[float]:
    return [bounded_component_dice(c, target, p) for c in s]


def bounded_loss(s: ComponentSet, target: DensityGrid, p: ProjectionParams) -> float:
    """Mean over components of ``1 - bounded_component_dice``."""
    if len(s) == 0:
        raise ValueError("empty component set")
    return float(np.mean([1.0 - d for d in component_scores(s, target, p)]))


# --------------------------------------------------------------------------
# assembly objective
# --------------------------------------------------------------------------

def _dice_loss_and_cotangent(mask: np.ndarray, msum: float):
    def fn(rho):
        inter = float(rho @ mask)
        S = float(rho.sum()) + msum
        if S == 0.0:
            return 0.0, np.zeros_like(rho)
        d = 2.0 * inter / S
        # d(dice)/d(rho) = 2 (mask S - I) / S^2; the loss is 1 - dice
        cot = -2.0 * (mask * S - inter) / (S * S)
        return 1.0 - d, cot
    return fn


def assembly_objective(s: ComponentSet, target: DensityGrid, p: ProjectionParams):
    """Loss ``1 - dice(render_set(s), target)`` and its ``(n, 5)`` parameter gradient."""
    if len(s) == 0:
        raise ValueError("assembly objective needs at least one component")
    mask = _require_binary(target).ravel()
    loss, grads, _ = mmc.render_and_grad(s.as_array(), p, target.spec,
                                         _dice_loss_and_cotangent(mask, float(mask.sum())))
    return loss, grads


def assembly_dice(s: ComponentSet, target: DensityGrid, p: ProjectionParams) -> float:
    if len(s) == 0:
        return dice_values(np.zeros(1), target.values.ravel() if target.values.any() else np.zeros(1))
    return dice_values(mmc.render_set(s, p, target.spec).values, target.values)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

def _lengths(P: np.ndarray) -> np.ndarray:
    return np.hypot(P[:, 2] - P[:, 0], P[:, 3] - P[:, 1])


def fit(target: DensityGrid, init: ComponentSet, p: ProjectionParams | None = None,
        opts: FitOptions | None = None) -> FitResult:
    """Adam descent of all component parameters on the assembly dice loss.

    Endpoints are clamped to the domain grown by 10% per side and ``t`` to
    ``opts.t_bounds`` after every step.  The best iterate under ``p`` is
    returned, so ``final_dice >= initial_dice`` always holds.
    """
    p = ProjectionParams() if p is None else p
    opts = FitOptions() if opts is None else opts
    mask = _require_binary(target).ravel()
    if len(init) == 0:
        raise ValueError("fit needs a non-empty initial component set")
    spec = target.spec
    P = init.as_array()
    lo = np.array([-0.1 * spec.w, -0.1 * spec.h, -0.1 * spec.w, -0.1 * spec.h, opts.t_bounds[0]])
    hi = np.array([1.1 * spec.w, 1.1 * spec.h, 1.1 * spec.w, 1.1 * spec.h, opts.t_bounds[1]])
    P = np.clip(P, lo, hi)
    ok = _lengths(P) >= MIN_LENGTH
    if not ok.any():
        raise FitError(f"all {len(init)} initial components are degenerate after clamping to the domain")
    if not ok.all():
        log.info("dropping %d degenerate initial components", int((~ok).sum()))
        P = P[ok]

    scale = max(spec.w, spec.h)
    objective = _dice_loss_and_cotangent(mask, float(mask.sum()))
    X, Y = mmc._pixel_coords(spec)

    def target_dice(P):
        rho, _ = mmc.union_fields(mmc.decode(P, X, Y, p).q)
        return dice_values(rho, mask)

    initial = target_dice(P)
    best_dice, best_P = initial, P.copy()

    beta_lo = p.beta
    beta_hi = max(opts.beta_start, beta_lo)
    n_anneal = int(round(opts.anneal_fraction * opts.max_iters)) if beta_hi > beta_lo else 0

    def beta_at(it):
        if it >= n_anneal:
            return beta_lo
        return beta_hi * (beta_lo / beta_hi) ** (it / n_anneal)

    m = np.zeros_like(P)
    v = np.zeros_like(P)
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    stale = 0
    it_used = 0
    for it in range(opts.max_iters):
        it_used = it + 1
        beta = beta_at(it)
        proj = p if beta == beta_lo else p.with_beta(beta)
        loss, g, _ = mmc.render_and_grad(P, proj, spec, objective)
        if beta == beta_lo:
            cur = 1.0 - loss
            if cur > best_dice:
                best_dice, best_P = cur, P.copy()
                stale = 0
            else:
                stale += 1
                if stale >= opts.early_stop_patience:
                    break
        elif it % 10 == 0:
            cur = target_dice(P)
            if cur > best_dice:
                best_dice, best_P = cur, P.copy()
        g = g * scale
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** (it + 1))
        vh = v / (1 - b2 ** (it + 1))
        frac = it / max(opts.max_iters - 1, 1)
        lr = opts.learning_rate * (opts.final_lr_fraction + (1 - opts.final_lr_fraction)
                                   * 0.5 * (1 + math.cos(math.pi * frac)))
        P_new = np.clip(P - lr * scale * mh / (np.sqrt(vh) + eps_adam), lo, hi)
        bad = _lengths(P_new) < MIN_LENGTH
        if bad.any():
            # keep collapsing components at their previous position
            P_new[bad] = P[bad]
            m[bad] = 0.0
            v[bad] = 0.0
        P = P_new
    else:
        cur = target_dice(P)
        if cur > best_dice:
            best_dice, best_P = cur, P.copy()

    comps = ComponentSet.from_array(best_P, spec)
    scores = component_scores(comps, target, p)
    return FitResult(comps, float(best_dice), float(initial), it_used, scores)


# --------------------------------------------------------------------------
# suppression and pruning
# --------------------------------------------------------------------------

def _binary_masks(s: ComponentSet, p: ProjectionParams, spec: GridSpec) -> np.ndarray:
    return mmc.component_fields(s, p, spec) > 0.5


def _mask_boxes(masks: np.ndarray) -> list:
    boxes = []
    for mk in masks:
        rows = np.flatnonzero(mk.any(axis=1))
        cols = np.flatnonzero(mk.any(axis=0))
        boxes.append(None if rows.size == 0 else (rows[0], rows[-1], cols[0], cols[-1]))
    return boxes


def _greedy_suppress(n: int, scores, duplicate) -> list[int]:
    order = sorted(range(n), key=lambda k: (-scores[k], k))
    kept: list[int] = []
    for k in order:
        if not any(duplicate(k, j) for j in kept):
            kept.append(k)
    return sorted(kept)


def mask_nms(s: ComponentSet, scores, p: ProjectionParams, spec: GridSpec | None = None,
             dice_threshold: float = 0.9) -> ComponentSet:
    """Drop components whose binarized mask has dice above the threshold with a better one.

    Higher score wins; equal scores keep the lower index.  The surviving
    components keep their original order.
    """
    spec = s.domain if spec is None else spec
    scores = list(scores)
    if len(scores) != len(s):
        raise ValueError(f"{len(scores)} scores for {len(s)} components")
    if not 0.0 < dice_threshold <= 1.0:
        raise ValueError("dice_threshold must lie in (0, 1]")
    if len(s) == 0:
        return s
    masks = _binary_masks(s, p, spec)
    boxes = _mask_boxes(masks)

    def duplicate(a, b):
        ba, bb = boxes[a], boxes[b]
        if ba is None or bb is None:
            # two empty masks are identical; an empty and a non-empty one are disjoint
            return ba is None and bb is None
        if ba[0] > bb[1] or bb[0] > ba[1] or ba[2] > bb[3] or bb[2] > ba[3]:
            return False
        return dice_values(masks[a].astype(float), masks[b].astype(float)) > dice_threshold

    return s.subset(_greedy_suppress(len(s), scores, duplicate))


def bbox_nms(s: ComponentSet, scores, p: ProjectionParams, spec: GridSpec | None = None,
             iou_threshold: float = 0.45) -> ComponentSet:
    """Conventional suppression on axis-aligned component boxes (for comparison)."""
    spec = s.domain if spec is None else spec
    scores = list(scores)
    if len(scores) != len(s):
        raise ValueError(f"{len(scores)} scores for {len(s)} components")
    boxes = []
    for c in s:
        try:
            boxes.append(component_bbox(c, spec, 0.5, p, pad=0))
        except EmptyBBoxError:
            boxes.append(None)

    def duplicate(a, b):
        if boxes[a] is None or boxes[b] is None:
            return False
        return boxes[a].iou(boxes[b]) > iou_threshold

    return s.subset(_greedy_suppress(len(s), scores, duplicate))


def prune(s: ComponentSet, target: DensityGrid, p: ProjectionParams, tol: float = 1e-3) -> ComponentSet:
    """Greedily drop components whose removal lowers the assembly dice by at most ``tol``.

    Candidates are visited in ascending order of their bounded dice score.
    """
    mask = _require_binary(target).ravel()
    if len(s) == 0:
        return s
    X, Y = mmc._pixel_coords(target.spec)
    q = mmc.decode(s.as_array(), X, Y, p).q
    scores = component_scores(s, target, p)
    alive = np.ones(len(s), dtype=bool)

    def dice_of(sel):
        rho = 1.0 - np.prod(q[sel], axis=0) if sel.any() else np.zeros_like(mask)
        return dice_values(rho, mask)

    current = dice_of(alive)
    for k in sorted(range(len(s)), key=lambda k: (scores[k], k)):
        trial = alive.copy()
        trial[k] = False
        d = dice_of(trial)
        if current - d <= tol:
            alive = trial
            current = d
    return s.subset(np.flatnonzero(alive))
