"""Command-line front end.

    transferdist report     --source s.csv --target t.csv --label-col y --prior 0.4,0.6
    transferdist ks-study   --source s.csv --target t.csv --label-col y --sizes 50,100,200
    transferdist stability  --target t.csv --label-col y --sizes 100,200,400
    transferdist recall     --source s.csv --target t.csv --label-col y
    transferdist batch      --source s.csv --target t.csv --batch-size 100

Exit status: 0 on success, 2 for invalid flags, 1 when loading or
computation fails. Artifacts contain no timestamps; those go to a
``<output>.meta.json`` sidecar.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    StudyConfig,
    batched_distance,
    fit_pair,
    ks_convergence_study,
    recall_vs_distance,
    subsample_stability_study,
    transfer_distance_report,
)
from .dataset import DataError, LabeledDataset, load_csv, reindex_labels
from .divergence import DEFAULT_MC_SAMPLES, METRICS, REFERENCES, EstimationError
from .gmm import GmmConfig
from .preprocess import PcaProjection, WindowConfig, fit_pca, project_datasets, window_dataset
from .probmodel import Prior

log = logging.getLogger("transferdist")

COMMANDS = ("report", "ks-study", "stability", "recall", "batch")
THREADS_ENV = "TRANSFERDIST_THREADS"


class _Parser(argparse.ArgumentParser):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transferdist", description="Empirical transfer distance between source and target data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, source_required=True, labels_required=True):
        g = p.add_argument_group("data")
        g.add_argument("--source", required=source_required, help="source CSV")
        g.add_argument("--target", required=True, help="target CSV")
        g.add_argument("--label-col", required=labels_required, default=None, help="label column name")
        g.add_argument("--feature-cols", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                       default=None, help="comma-separated feature columns (default: all but the label)")
        g = p.add_argument_group("preprocessing")
        g.add_argument("--window", type=_nonneg_int, default=0,
                       help="window length in rows; 0 disables windowing (default 0)")
        g.add_argument("--hop", type=_positive(int), default=None, help="window stride (default: window length)")
        g.add_argument("--summaries", default="mean,std", help="window summaries, subset of mean,std")
        g = p.add_argument_group("output")
        g.add_argument("--seed", type=_nonneg_int, default=0)
        g.add_argument("--output", "-o", default=None, help="artifact path (default stdout)")
        g.add_argument("--format", choices=("json", "csv"), default="json")
        g.add_argument("-v", "--verbose", action="store_true")

    def pca(p):
        g = p.add_argument_group("projection")
        g.add_argument("--pca-dims", type=_nonneg_int, default=2, help="principal components kept; 0 disables (default 2)")
        g.add_argument("--standardize", action="store_true", help="scale columns to unit variance before PCA")
        g.add_argument("--save-pca", default=None, help="write the fitted projection as JSON")
        g.add_argument("--load-pca", default=None, help="reuse a projection JSON instead of fitting one")

    def model(p, metric_default="hellinger"):
        g = p.add_argument_group("model")
        g.add_argument("--metric", choices=METRICS, default=metric_default)
        g.add_argument("--k", type=_positive(int), default=2, help="GMM components per class (default 2)")
        g.add_argument("--mc-samples", type=_positive(int), default=DEFAULT_MC_SAMPLES)
        g.add_argument("--reference", choices=REFERENCES, default="mixture",
                       help="distribution of x for posterior distances (default mixture)")
        g.add_argument("--restarts", type=_positive(int), default=5)
        g.add_argument("--max-iter", type=_positive(int), default=200)
        g.add_argument("--tol", type=float, default=1e-6)
        g.add_argument("--reg-floor", type=_positive(float), default=None,
                       help="absolute covariance eigenvalue floor (default 1e-6 x mean variance)")
        g.add_argument("--threads", type=_positive(int), default=int(os.environ.get(THREADS_ENV, "1") or 1),
                       help=f"EM restarts run in parallel (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("report", help="likelihood, marginal and posterior distances per prior")
    common(p); pca(p); model(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--prior", default="empirical", help="'empirical' or a comma-separated probability vector")
    g.add_argument("--prior-sweep", type=_floats, default=None, help="comma-separated P(Y=0) values")
    p.add_argument("--save-models", default=None, help="directory for source/target model JSON bundles")

    p = sub.add_parser("ks-study", help="per-feature KS statistic vs target sample size")
    common(p)
    p.add_argument("--sizes", type=_ints, required=True)
    p.add_argument("--threshold", type=float, default=0.05)

    p = sub.add_parser("stability", help="distance of target subsample fits to the full target fit")
    common(p, source_required=False); pca(p); model(p)
    p.add_argument("--sizes", type=_ints, required=True)
    p.add_argument("--repeats", type=_positive(int), default=10)
    p.add_argument("--threshold", type=float, default=0.05)

    p = sub.add_parser("recall", help="per-class recall of the source classifier vs likelihood distance")
    common(p); pca(p); model(p, "kl")
    p.add_argument("--prior", default="empirical")

    p = sub.add_parser("batch", help="within-source vs cross-environment distances between batches")
    common(p, labels_required=False); pca(p); model(p, "kl")
    p.add_argument("--batch-size", type=_positive(int), default=100)
    return parser


def _validate(parser, args) -> None:
    if args.hop is not None and not args.window:
        parser.error("--hop requires --window")
    summaries = tuple(s.strip() for s in args.summaries.split(",") if s.strip())
    if args.window:
        try:
            args.window_cfg = WindowConfig(args.window, args.hop or args.window, summaries)
        except ValueError as e:
            parser.error(f"--window/--summaries: {e}")
    else:
        args.window_cfg = None
    if getattr(args, "tol", 0) < 0:
        parser.error("--tol must be non-negative")
    if getattr(args, "threshold", 0) < 0:
        parser.error("--threshold must be non-negative")
    if hasattr(args, "sizes"):
        if len(args.sizes) < 2 or any(b <= a for a, b in zip(args.sizes, args.sizes[1:])) or args.sizes[0] < 1:
            parser.error("--sizes must list at least 2 strictly ascending positive counts")
    if getattr(args, "prior_sweep", None) is not None:
        if not args.prior_sweep or any(not 0 <= p <= 1 for p in args.prior_sweep):
            parser.error("--prior-sweep values must lie in [0, 1]")
    if isinstance(getattr(args, "prior", None), str) and args.prior != "empirical":
        try:
            args.prior_vec = Prior(_floats(args.prior))
        except (ValueError, argparse.ArgumentTypeError) as e:
            parser.error(f"--prior: {e}")
    if args.load_pca if hasattr(args, "load_pca") else False:
        if args.save_pca:
            parser.error("--load-pca and --save-pca are mutually exclusive")


def _study_config(args) -> StudyConfig:
    gmm = GmmConfig(args.max_iter, args.tol, args.restarts, 0, args.reg_floor, args.threads)
    return StudyConfig(args.metric, args.k, args.mc_samples, args.seed, args.reference, gmm)


def _load(args, need_source=True) -> tuple[Optional[LabeledDataset], LabeledDataset, dict]:
    src = None
    tgt = load_csv(args.target, args.label_col, args.feature_cols, "target")
    if args.source:
        src = load_csv(args.source, args.label_col, args.feature_cols, "source")
        src, tgt = reindex_labels(src, tgt)
    else:
        (tgt,) = reindex_labels(tgt)
    if src is not None and src.d != tgt.d:
        raise DataError(f"source has {src.d} features, target has {tgt.d}")
    meta = {"label_mapping": tgt.label_mapping and {str(k): v for k, v in tgt.label_mapping.items()}}
    if args.window_cfg is not None:
        tgt = window_dataset(tgt, args.window_cfg)
        if src is not None:
            src = window_dataset(src, args.window_cfg)
        meta["window"] = {"length": args.window_cfg.window_length, "hop": args.window_cfg.hop,
                          "summaries": list(args.window_cfg.summaries)}
    if getattr(args, "pca_dims", 0):
        basis = src if src is not None else tgt
        if args.load_pca:
            proj = PcaProjection.load(args.load_pca)
        else:
            proj = fit_pca(basis.features, min(args.pca_dims, basis.d), args.standardize)
        if args.save_pca:
            proj.save(args.save_pca)
        if src is not None:
            src, tgt = project_datasets(proj, src, tgt)
        else:
            (tgt,) = project_datasets(proj, tgt)
        meta["pca"] = {"k": proj.k, "standardize": proj.scale is not None,
                       "fitted_on": "source" if src is not None else "target",
                       "explained_variance_ratio": proj.explained_variance_ratio.tolist()}
    return src, tgt, meta


def _resolved_config(args) -> dict:
    skip = {"window_cfg", "prior_vec", "verbose", "output", "format", "threads", "save_pca", "save_models"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _table_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _fmt_prior(p: Prior) -> str:
    return "P(Y)=" + "/".join(f"{v:.6g}" for v in p.probabilities)


def _report_csv(reports) -> str:
    n_classes = reports[0].prior.n_classes
    if n_classes <= 2:
        # rows = distance kind, columns = prior
        header = ["distance"] + [_fmt_prior(r.prior) for r in reports]
        names = list(reports[0].values())
        return _table_csv(header, [[n] + [r.values()[n] for r in reports] for n in names])
    # rows = class, columns = likelihood then posterior per prior
    header = ["class", "likelihood_delta_X|Y"] + [f"posterior_delta_Y|X[{_fmt_prior(r.prior)}]" for r in reports]
    rows = []
    for y in range(n_classes):
        lik = reports[0].likelihood.get(y)
        rows.append([y, lik.value if lik else ""] + [r.posterior[y].value for r in reports])
    return _table_csv(header, rows)


def _curves_csv(curves: dict) -> str:
    rows = []
    for name, c in curves.items():
        spreads = c.spreads or [""] * len(c.values)
        rows += [[name, s, v, sp] for s, v, sp in zip(c.sample_sizes, c.values, spreads)]
    return _table_csv(["series", "size", "value", "spread"], rows)


def _run(args) -> tuple[dict, str]:
    """Returns (json document, csv text)."""
    if args.command == "ks-study":
        src, tgt, meta = _load(args)
        curves = ks_convergence_study(tgt, args.sizes, src, args.threshold, args.seed)
        doc = {"ks_study": {k: c.to_dict() for k, c in curves.items()}}
        return dict(doc, preprocessing=meta), _curves_csv(curves)

    cfg = _study_config(args)
    src, tgt, meta = _load(args)
    if args.command == "report":
        if args.prior_sweep is not None:
            rest = np.bincount(src.labels, minlength=src.n_classes)[1:].astype(float)
            priors = [Prior.from_first(p, rest) for p in args.prior_sweep]
        elif args.prior == "empirical":
            priors = [Prior.empirical(src)]
        else:
            priors = [args.prior_vec]
        if any(p.n_classes != src.n_classes for p in priors):
            raise DataError(f"prior length does not match the {src.n_classes}-class label alphabet")
        reports = transfer_distance_report(src, tgt, priors, cfg)
        if args.save_models:
            os.makedirs(args.save_models, exist_ok=True)
            s, t = fit_pair(src, tgt, priors[0], cfg)
            s.save(os.path.join(args.save_models, "source_model.json"))
            t.save(os.path.join(args.save_models, "target_model.json"))
        doc = {"reports": [r.to_dict() for r in reports]}
        return dict(doc, preprocessing=meta), _report_csv(reports)
    if args.command == "stability":
        curves = subsample_stability_study(tgt, args.sizes, cfg, args.repeats, threshold=args.threshold)
        doc = {"stability": {k: c.to_dict() for k, c in curves.items()}}
        return dict(doc, preprocessing=meta), _curves_csv(curves)
    if args.command == "recall":
        prior = Prior.empirical(src) if args.prior == "empirical" else args.prior_vec
        s, t = fit_pair(src, tgt, prior, cfg)
        table = recall_vs_distance(s, tgt, t, cfg)
        doc = {"recall": table.to_dict()}
        body = _table_csv(["class", "n", "recall", "distance", "std_error"],
                          [[r["class"], r["n"], r["recall"], r["distance"], r["std_error"]] for r in table.rows])
        return dict(doc, preprocessing=meta), body
    if args.command == "batch":
        res = batched_distance(src, tgt, args.batch_size, cfg)
        doc = {"batch": res.to_dict()}
        body = _table_csv(["comparison", "mean", "std", "pairs"], [
            ["within_source", res.within_source_mean, res.within_source_std, len(res.within_source)],
            ["cross", res.cross_mean, res.cross_std, len(res.cross)],
        ])
        return dict(doc, preprocessing=meta), body
    raise AssertionError(args.command)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        doc, table = _run(args)
    except (DataError, EstimationError, ValueError, OSError) as e:
        print(f"transferdist: error: {e}", file=sys.stderr)
        return 1
    doc = {"command": args.command, "config": _resolved_config(args), "version": __version__, **doc}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n" if args.format == "json" else table
    if args.output is None:
        sys.stdout.write(text)
    else:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        with open(args.output + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump({"started": started, "finished": time.time(), "argv": list(argv or sys.argv[1:])}, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main())
