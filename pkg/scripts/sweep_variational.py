"""Held-out awareness MSE of a few variational weight sets at two noise levels.

Prints one line per weight set. Small by default (2 scenes); pass --scenes 5
for the benchmark scale.
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from gaze_aware import bench
from gaze_aware.awareness import eval_awareness, fg_estimate
from gaze_aware.config import Config

SETS = {
    "default": {},
    "with S_A": {"alpha_S_A": 1e-3},
    "with DEC": {"alpha_DEC": 0.1},
    "hinge c1": {"c1": 0.1},
    "w_OF 0.5": {"w_OF": 0.5},
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenes", type=int, default=2)
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.01, 0.15])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    cfg = Config()
    cfg = replace(cfg, bench=replace(cfg.bench, scenes=args.scenes))
    gts = bench.scenes(cfg, args.seed)
    sal = [bench.saliency_stack(gt) for gt in gts]
    cases = {
        s: [bench._awareness_case(gt, sal[i], s, cfg, bench.sub_seed(args.seed, 2, si, i), bench.sub_seed(args.seed, 9, i)) for i, gt in enumerate(gts)]
        for si, s in enumerate(args.sigmas)
    }
    for s, cs in cases.items():
        fg = np.mean([eval_awareness(fg_estimate(n, gt.flows, cfg.estimator, shape=gt.shape), held) for (n, _, held), gt in zip(cs, gts)])
        print(f"{'FG':>10}  sigma {s}: {fg:.4f}")
    for name, over in SETS.items():
        weights = replace(cfg.variational, **over)
        t0 = time.perf_counter()
        cells = []
        for s, cs in cases.items():
            mse = [eval_awareness(bench.variational_estimate(b, cfg, s, weights, sal[i]).awareness, held) for i, (_, b, held) in enumerate(cs)]
            cells.append(f"sigma {s}: {np.mean(mse):.4f}")
        print(f"{name:>10}  " + "  ".join(cells) + f"  ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
