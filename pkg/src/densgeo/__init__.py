"""Reverse engineering of density-based topologies into parametric bar components."""

from .boundary import BoundaryConditions, model_from_bc, sample_bc
from .datagen import SimpOptions, generate_dataset, make_lowvol_target, random_assembly, simp_optimize
from .errors import (BCConnectionError, DegenerateGeometryError, DensGeoError, EmptyBBoxError,
                     FitError, GenerationError, GridParseError, GridRangeError, SolverError)
from .evaluation import EvalReport, aggregate, connect_to_bc, evaluate
from .fea import FeaModel, assemble_solve, compliance, probe_displacement
from .fitter import FitOptions, FitResult, bbox_nms, fit, mask_nms, prune
from .mmc import Component, ComponentSet, ProjectionParams, grad_params, render_set
from .pipeline import reverse_engineer
from .raster import DensityGrid, GridSpec, binarize, dice, load_grid, save_grid, volume_fraction
from .skeleton import Skeleton, distance_transform, estimate_branch_thickness, extract_graph, skeletonize, thin

__version__ = "0.1.0"
