"""Observed-reconstruction RMSE per iteration for GAIN and GAN at each max-attempt truncation.

    python3 scripts/gain_training_curves.py --out runs/curves.csv
"""
import argparse
import csv

from sparsegain import gain, gan
from sparsegain.ingest import SynthConfig, synth_generate
from sparsegain.tensor import sparsity_level, truncate_attempts


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="curves.csv")
    p.add_argument("--learners", type=int, default=200)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    t = synth_generate(SynthConfig(args.learners, 12, 5, ability_spread=1.5, base_dropout=0.3, seed=args.seed)).observed
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "max_attempts", "sparsity", "iteration", "rmse"])
        for m in range(1, t.shape[2] + 1):
            tm = truncate_attempts(t, m)
            s = sparsity_level(tm)
            curves = {
                "gain": gain.train(tm, gain.GainConfig(max_iterations=args.max_iters, seed=args.seed)).training_curve,
                "gan": gan.gan_train(tm, gan.GanConfig(max_iterations=args.max_iters, seed=args.seed)).training_curve,
            }
            for name, curve in curves.items():
                for it, r in curve:
                    w.writerow([name, m, repr(s), it, repr(r)])
                print(f"m={m} sparsity {s:.3f} {name}: {len(curve)} iterations, final rmse {curve[-1][1]:.4f}", flush=True)


if __name__ == "__main__":
    main()
