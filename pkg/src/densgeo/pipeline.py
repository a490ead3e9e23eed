"""Density grid to component set: skeleton seeding, pruning, fitting, suppression."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import mmc
from .errors import FitError
from .fitter import FitOptions, FitResult, component_scores, fit, mask_nms, prune
from .mmc import ComponentSet, ProjectionParams
from .raster import DensityGrid, binarize, dice
from .skeleton import Skeleton, skeleton_to_components, skeletonize

log = logging.getLogger(__name__)

METHODS = ("skeleton", "fit")


@dataclass
class Reconstruction:
    method: str
    components: ComponentSet
    skeleton: Skeleton
    dice: float
    fit: FitResult | None = None


def render_binary(s: ComponentSet, p: ProjectionParams, spec=None) -> DensityGrid:
    spec = s.domain if spec is None else spec
    if len(s) == 0:
        return DensityGrid.zeros(spec)
    return binarize(mmc.render_set(s, p, spec), 0.5)


def reverse_engineer(target: DensityGrid, method: str = "fit", p: ProjectionParams | None = None,
                     opts: FitOptions | None = None) -> Reconstruction:
    """Recover components from a binary target.

    ``skeleton`` stops after converting skeleton branches to components;
    ``fit`` additionally prunes them, fits them to the target and removes
    duplicates.  ``dice`` is measured on the binarized render.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    p = ProjectionParams() if p is None else p
    opts = FitOptions() if opts is None else opts
    if not target.is_binary():
        raise ValueError("target must be binary; binarize it first")
    if not target.values.any():
        raise FitError("target has no material")
    sk = skeletonize(target)
    seed = skeleton_to_components(sk)
    seed_dice = dice(render_binary(seed, p, target.spec), target)
    if method == "skeleton" or len(seed) == 0:
        return Reconstruction("skeleton", seed, sk, seed_dice)
    init = prune(seed, target, p, opts.prune_tolerance)
    res = fit(target, init, p, opts)
    out = mask_nms(res.components, res.per_component_score, p, target.spec, opts.nms_dice_threshold)
    out_dice = dice(render_binary(out, p, target.spec), target)
    log.info("reverse: %d skeleton components (dice %.4f) -> %d fitted (dice %.4f)",
             len(seed), seed_dice, len(out), out_dice)
    return Reconstruction("fit", out, sk, out_dice, res)
