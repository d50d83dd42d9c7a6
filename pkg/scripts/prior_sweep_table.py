"""Binary drift table: likelihood, marginal and posterior distances across a prior sweep.

Class 1 moves by --shift standard deviations in the target; the likelihood
rows stay fixed while the marginal and posterior rows follow the prior.
"""
import argparse

from transferdist.analysis import StudyConfig, transfer_distance_report
from transferdist.probmodel import Prior
from transferdist.synthetic import binary_drift


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shift", type=float, default=2.0)
    ap.add_argument("--metric", choices=["hellinger", "kl"], default="hellinger")
    ap.add_argument("--mc-samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    src, tgt = binary_drift(args.shift, n_per_class=(789, 1480), seed=args.seed)
    sweep = (0.40, 0.90, 0.99, 0.999)
    cfg = StudyConfig(metric=args.metric, mc_samples=args.mc_samples, seed=args.seed)
    reports = transfer_distance_report(src, tgt, [Prior.from_first(p) for p in sweep], cfg)

    header = f"{'':>14}" + "".join(f"{'P(Y)=' + format(p, 'g'):>14}" for p in sweep)
    print(header)
    for row in reports[0].values():
        print(f"{row:>14}" + "".join(f"{r.values()[row]:>14.4f}" for r in reports))


if __name__ == "__main__":
    main()
