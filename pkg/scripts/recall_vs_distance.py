"""Per-class recall of the source classifier against each class's likelihood distance.

One of five ring classes drifts toward the centre in the target; it should
show the largest distance and the lowest recall.
"""
import argparse

from transferdist.analysis import StudyConfig, fit_pair, recall_vs_distance
from transferdist.probmodel import Prior
from transferdist.synthetic import ring_classes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shift", type=float, default=2.0)
    ap.add_argument("--metric", choices=["hellinger", "kl"], default="kl")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    src, tgt = ring_classes(5, 300, shifted=4, shift=args.shift, seed=args.seed)
    cfg = StudyConfig(metric=args.metric, mc_samples=20_000, seed=args.seed)
    src_model, tgt_model = fit_pair(src, tgt, Prior.empirical(src), cfg)
    table = recall_vs_distance(src_model, tgt, tgt_model, cfg)
    print(f"{'class':>6} {'recall':>8} {args.metric:>10}")
    for row in table.rows:
        print(f"{row['class']:>6} {row['recall']:>8.3f} {row['distance']:>10.4f}")
    print(f"spearman rho = {table.rank_correlation}")


if __name__ == "__main__":
    main()
