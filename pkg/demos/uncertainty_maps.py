"""Total, aleatoric, and epistemic entropy maps plus the query cost.

Evaluates the conditional-policy entropy over a grid in each mode, builds
the information-density cost, and fits the variational GMM whose components
cover the uncertain regions. Writes CSV grids under out/demo_maps/ and, with
--plot, a four-panel PNG. Run:  python demos/uncertainty_maps.py [--plot]
"""

import sys

import numpy as np

from activelfd.campaign import (
    ExperimentConfig,
    build_session,
    dump_uncertainty_grid,
)
from activelfd.bgmm import epistemic_entropy_values
from activelfd.active import info_density_logcost_batch

config = ExperimentConfig(out="out/demo_maps", seeds=(0,))
world = config.load_world()
session = build_session(config, world, seed=0)
print(f"fitted on {session.dataset.n} points; beta = {session.config.beta:.3f}")

for mode in ("total", "aleatoric", "epistemic", "cost"):
    path = dump_uncertainty_grid(config, mode, resolution=80, session=session)
    print(f"wrote {path}")

res = 80
xs = np.linspace(world.bounds.lo[0], world.bounds.hi[0], res)
ys = np.linspace(world.bounds.lo[1], world.bounds.hi[1], res)
xx, yy = np.meshgrid(xs, ys, indexing="ij")
pts = np.column_stack([xx.ravel(), yy.ravel()])

summary = {}
for mode in ("total", "aleatoric", "epistemic"):
    values = epistemic_entropy_values(session.posterior, pts, mode=mode)
    summary[mode] = values
    print(f"{mode:9s}: min {values.min():+.2f}  max {values.max():+.2f}")
cost = info_density_logcost_batch(session.cost, pts)
print(f"{'cost':9s}: min {cost.min():+.2f}  max {cost.max():+.2f} "
      f"(argmax at {np.round(pts[np.argmax(cost)], 2)})")

g = session.q.gmm()
order = np.argsort(g.weights)[::-1]
print("\nvariational q components (weight, mean):")
for k in order[:5]:
    print(f"  {g.weights[k]:.3f}  {np.round(g.components[k].mean, 2)}")

if "--plot" in sys.argv:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 4, figsize=(20, 5))
    panels = [("total", summary["total"]), ("aleatoric", summary["aleatoric"]),
              ("epistemic", summary["epistemic"]), ("cost", cost)]
    for ax, (name, values) in zip(axes, panels):
        ax.imshow(values.reshape(res, res).T, origin="lower", cmap="viridis",
                  extent=[xs[0], xs[-1], ys[0], ys[-1]])
        for obs in world.obstacles:
            ax.add_patch(plt.Rectangle(obs.lo, *(obs.hi - obs.lo), fill=False,
                                       linestyle="--", edgecolor="w"))
        ax.plot(*world.goal, "w*", markersize=12)
        if name == "cost":
            for w_k, comp in zip(g.weights, g.components):
                vals, vecs = np.linalg.eigh(comp.covariance)
                angle = np.degrees(np.arctan2(vecs[1, 0], vecs[0, 0]))
                from matplotlib.patches import Ellipse

                ax.add_patch(Ellipse(comp.mean, 2 * np.sqrt(vals[0]),
                                     2 * np.sqrt(vals[1]), angle=angle,
                                     fill=False, color="r",
                                     alpha=max(0.15, float(w_k / g.weights.max()))))
        ax.set_title(name)
    fig.tight_layout()
    fig.savefig("out/demo_maps/maps.png", dpi=110)
    print("wrote out/demo_maps/maps.png")
