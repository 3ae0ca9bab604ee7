"""Denoising MAE table for several benchmark seeds, to check the ordering is not a one-seed accident."""

import argparse

from gaze_aware import bench
from gaze_aware.config import Config


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    args = p.parse_args()
    cfg = Config()
    print("seed sigma_n raw sal cond ordered")
    for seed in args.seeds:
        rows = bench.denoise_benchmark(bench.scenes(cfg, seed), cfg.bench.sigma_denoise, cfg, seed)
        for r in rows:
            # saliency must beat raw from 0.10 up, conditioned fusion must beat saliency from 0.15 up
            ok = r.sigma_n < 0.1 or (r.sal_mae < r.raw_mae and (r.sigma_n < 0.15 or r.cond_mae <= r.sal_mae))
            print(f"{seed} {r.sigma_n:.2f} {r.raw_mae:.1f} {r.sal_mae:.1f} {r.cond_mae:.1f} {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
