"""How many target rows before the estimates settle?

Runs the KS convergence study per feature, then the subsample-stability
study that compares models fitted on target subsamples with the full fit.
Both report the first size where the relative change drops below 5%.
"""
import argparse

from transferdist.analysis import StudyConfig, ks_convergence_study, subsample_stability_study
from transferdist.synthetic import binary_drift


def _show(title, curves):
    print(title)
    for name, c in curves.items():
        vals = " ".join(f"{v:.3f}" for v in c.values)
        print(f"  {name:>14}  settled_at={c.settled_at}  [{vals}]")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shift", type=float, default=1.0)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--mc-samples", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    src, tgt = binary_drift(args.shift, n_per_class=(800, 800), seed=args.seed)
    ks_sizes = list(range(50, tgt.n + 1, 50))
    _show("KS(source, target prefix)", ks_convergence_study(tgt, ks_sizes, src, seed=args.seed))

    cfg = StudyConfig(mc_samples=args.mc_samples, seed=args.seed)
    sizes = [100, 200, 300, 350, 400, 600, 800, 1200]
    _show("Hellinger(subsample fit, full fit)",
          subsample_stability_study(tgt, sizes, cfg, repeats=args.repeats))


if __name__ == "__main__":
    main()
