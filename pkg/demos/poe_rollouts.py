"""Raw mixture policy vs product-of-experts fusion, before and after learning.

Before active learning the raw policy's sampled rollouts run away from the
demonstrated region (diverge) where the fused policy stays stable; after the
active-learning rounds both reach the goal from held-out starts. Run:
python demos/poe_rollouts.py [iterations]
"""

import sys

import numpy as np

from activelfd.campaign import (
    ExperimentConfig,
    bgmm_policy_batch,
    build_session,
    goal_expert,
    make_teacher,
    poe_policy_batch,
)
from activelfd.active import al_step
from activelfd.control import rollout_batch, single_integrator
from activelfd.world import evaluate_rollout, scripted_demo

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 6

config = ExperimentConfig(out="out/demo_rollouts", seeds=(0,))
world = config.load_world()
sys_ = single_integrator(dim=2, dt=config.dt)
bound = 3.0 * world.diagonal
starts = np.asarray(config.test_starts)


def roll(posterior, label, mode="sample", n=6):
    expert = goal_expert(config, world, posterior)
    stats = {}
    for name, policy in (("bgmm", bgmm_policy_batch(posterior)),
                         ("poe", poe_policy_batch(posterior, expert))):
        x0s = np.repeat(starts, n, axis=0)
        rollouts = rollout_batch(policy, sys_, x0s, config.horizon, mode=mode,
                                 goal=world.goal, eps=world.goal_eps,
                                 rng_seed=0, divergence_bound=bound)
        evals = [evaluate_rollout(world, r) for r in rollouts]
        stats[name] = (
            sum(r.termination == "diverged" for r in rollouts),
            sum(e.collided for e in evals),
            sum(e.success for e in evals),
            len(rollouts),
        )
    print(f"{label}:")
    for name, (div, col, suc, total) in stats.items():
        print(f"  {name:4s}: {div:2d}/{total} diverged, {col:2d} collided, "
              f"{suc:2d} reached the goal collision-free")


session = build_session(config, world, seed=0)
roll(session.posterior, "before active learning (sampled rollouts)")

teacher = make_teacher(config, world, partial=True)
for i in range(1, iterations + 1):
    def teach(query, _i=i):
        return scripted_demo(teacher, query, rng_seed=1000 + _i)

    session = al_step(session, teach)
    entry = session.history[-1]
    print(f"  iteration {entry.iteration}: query {np.round(entry.query, 2)}, "
          f"H2(q) = {entry.entropy:.3f}")

roll(session.posterior, f"after {iterations} active iterations (sampled rollouts)")
roll(session.posterior, f"after {iterations} active iterations (mean rollouts)",
     mode="mean", n=1)
