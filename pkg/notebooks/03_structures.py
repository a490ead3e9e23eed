# %% [markdown]
# # Optimized structures and their mechanics
#
# Boundary conditions are sampled at random, a compliance-minimizing density
# is computed with SIMP, and the reconstruction is judged by how much volume
# and stiffness it keeps after snapping it onto the supports and the load.

# %%
from densgeo.boundary import sample_bc
from densgeo.datagen import SimpOptions, simp_optimize
from densgeo.evaluation import aggregate, evaluate
from densgeo.mmc import ProjectionParams
from densgeo.pipeline import reverse_engineer
from densgeo.raster import binarize, volume_fraction

p = ProjectionParams()
opts = SimpOptions(resolution=24, max_iters=60)
reports = {"skeleton": [], "fit": []}

for seed in range(3):
    bc = sample_bc(seed)
    target = binarize(simp_optimize(bc, opts), 0.1)
    print(f"seed {seed}: {bc.support_edge} support, {target.shape} grid, volume {volume_fraction(target):.3f}")
    for method in reports:
        rec = reverse_engineer(target, method, p)
        r = evaluate(target, rec.components, bc, p)
        reports[method].append(r)
        print(f"  {method:8s} dice {r.dice:.3f}  dV {r.volume_delta_pct:+6.1f}%  dC {r.compliance_delta_pct:+8.1f}%")

# %% [markdown]
# Compliance changes are heavy tailed: a reconstruction that misses one member
# can become orders of magnitude softer.  The summary therefore takes the
# median of the compliance change and the mean of the rest.

# %%
for method, reps in reports.items():
    s = aggregate(reps)
    print(f"{method:8s} mean dice {s.mean_dice:.3f}  mean dV {s.mean_volume_delta_pct:+.1f}%  "
          f"median dC {s.median_compliance_delta_pct:+.1f}%")
