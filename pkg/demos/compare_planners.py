"""Joint prefix-suffix search against the fewest-hop baseline on hard tasks.

    python3 demos/compare_planners.py [n_tasks]
"""

import sys

import numpy as np

from ltlstitch import pipeline as pl
from ltlstitch import world
from ltlstitch.taskgen import gen_tasks


def main(n=20):
    m = world.make_maze("medium", seed=0)
    art = pl.build_artifact(world.gen_dataset(m, "stitch", seed=0), pl.Settings())
    tasks = gen_tasks(m, "hard", n, seed=0)
    lengths = {}
    for variant in pl.VARIANTS:
        st = pl.Settings(episodes=1, variant=variant)
        recs = pl.evaluate(art, m, tasks, st)
        s = pl.summarize(recs)
        lengths[variant] = [r.length for r in recs]
        print(f"{variant:9s} SR {100 * s['sr']:5.1f}%  length {s['length'][0]:6.1f}  "
              f"plan time {s['plan_time'][0]:.3f}s")
    both = [(a, b) for a, b in zip(lengths["joint"], lengths["decoupled"]) if a and b]
    if both:
        a, b = np.mean(both, axis=0)
        print(f"joint is {100 * (1 - a / b):.1f}% shorter on {len(both)} tasks both solved")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
