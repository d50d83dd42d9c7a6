"""The transfer-distance studies built on the lower modules.

* ``transfer_distance_report``: likelihood, marginal and posterior
  distances between source and target for a sweep of priors.
* ``ks_convergence_study``: per-feature KS statistic against growing
  target samples, with the 5% settling rule.
* ``subsample_stability_study``: distance of subsample fits to the
  full-sample fit as the subsample grows.
* ``recall_vs_distance``: per-class recall of the source model on target
  rows next to the per-class likelihood distance.
* ``batched_distance``: within-source vs cross-environment distances
  between GMMs fitted on fixed-size batches.

Each cell draws its random numbers from a stream keyed on the top-level
seed and the cell's coordinates.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import spearmanr

from ._rng import seed_key
from .dataset import DataError, LabeledDataset, subsample
from .divergence import (
    DEFAULT_MC_SAMPLES,
    METRICS,
    REFERENCES,
    DistanceEstimate,
    distance,
    ks_statistic,
    posterior_distance,
)
from .gmm import GmmConfig, fit_em
from .probmodel import ClassConditionalModel, Prior, fit

log = logging.getLogger(__name__)

SETTLE_EPS = 1e-9

# stream coordinates
_LIK, _MARG, _POST, _SUB, _BATCH = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class StudyConfig:
    metric: str = "hellinger"
    n_components: int = 2
    mc_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    reference: str = "mixture"
    gmm: GmmConfig = field(default_factory=GmmConfig)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def gmm_config(self, *coords: int) -> GmmConfig:
        return GmmConfig(
            max_iter=self.gmm.max_iter,
            tol=self.gmm.tol,
            restarts=self.gmm.restarts,
            seed=seed_key(self.seed, *coords),
            reg_floor=self.gmm.reg_floor,
            n_jobs=self.gmm.n_jobs,
        )

    def snapshot(self) -> dict:
        gmm = self.gmm.to_dict()
        gmm.pop("seed")
        return {
            "metric": self.metric,
            "n_components": self.n_components,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "reference": self.reference,
            "gmm": gmm,
        }


# transfer distance report


@dataclass
class TransferDistanceReport:
    likelihood: dict[int, DistanceEstimate]
    marginal: DistanceEstimate
    posterior: dict[int, DistanceEstimate]
    prior: Prior
    config: dict

    def to_dict(self) -> dict:
        return {
            "prior": self.prior.to_dict(),
            "delta_X_given_Y": {str(y): e.to_dict() for y, e in self.likelihood.items()},
            "delta_X": self.marginal.to_dict(),
            "delta_Y_given_X": {str(y): e.to_dict() for y, e in self.posterior.items()},
            "config": self.config,
        }

    def values(self) -> dict[str, float]:
        """Flat ``{row name: value}`` view matching the table layout."""
        out = {f"delta_X|Y={y}": e.value for y, e in self.likelihood.items()}
        out["delta_X"] = self.marginal.value
        out.update({f"delta_Y={y}|X": e.value for y, e in self.posterior.items()})
        return out


def fit_pair(
    src_ds: LabeledDataset, tgt_ds: LabeledDataset, prior: Prior, cfg: StudyConfig
) -> tuple[ClassConditionalModel, ClassConditionalModel]:
    """Fit source and target models with the same prior and the same per-class seeds."""
    if src_ds.d != tgt_ds.d:
        raise DataError(f"feature dimension differs: source {src_ds.d}, target {tgt_ds.d}")
    if src_ds.n_classes != tgt_ds.n_classes:
        raise DataError(
            f"label alphabets differ: source {src_ds.n_classes}, target {tgt_ds.n_classes} classes"
        )
    gcfg = cfg.gmm_config()
    return (
        fit(src_ds, prior, cfg.n_components, gcfg),
        fit(tgt_ds, prior, cfg.n_components, gcfg),
    )


def likelihood_distances(src: ClassConditionalModel, tgt: ClassConditionalModel, cfg: StudyConfig):
    out = {}
    for y in sorted(set(src.likelihoods) & set(tgt.likelihoods)):
        out[y] = distance(
            src.likelihoods[y], tgt.likelihoods[y], cfg.metric, cfg.mc_samples,
            seed_key(cfg.seed, _LIK, y),
        )
    return out


def transfer_distance_report(
    src_ds: LabeledDataset,
    tgt_ds: LabeledDataset,
    priors: Sequence[Union[Prior, str]] = ("empirical",),
    cfg: StudyConfig = StudyConfig(),
) -> list[TransferDistanceReport]:
    """Run the full likelihood / marginal / posterior computation per prior.

    Likelihood distances do not involve the prior, so they are computed
    once and shared by every report. ``"empirical"`` in ``priors`` means
    the source class frequencies.
    """
    priors = [Prior.empirical(src_ds) if isinstance(p, str) and p == "empirical" else p for p in priors]
    if not priors:
        raise ValueError("need at least one prior")
    # fit every class that has enough rows; positivity is checked per prior below
    counts = np.minimum(src_ds.class_counts(), tgt_ds.class_counts())
    for p in priors:
        short = [y for y in range(p.n_classes) if p.probabilities[y] > 0 and counts[y] < cfg.n_components]
        if short:
            raise DataError(f"classes {short} have positive prior but fewer than K={cfg.n_components} rows")
    usable = Prior(np.where(counts >= cfg.n_components, counts, 0) / counts[counts >= cfg.n_components].sum())
    src, tgt = fit_pair(src_ds, tgt_ds, usable, cfg)
    lik = likelihood_distances(src, tgt, cfg)

    reports = []
    for prior in priors:
        s, t = src.with_prior(prior), tgt.with_prior(prior)
        marg = distance(s, t, cfg.metric, cfg.mc_samples, seed_key(cfg.seed, _MARG))
        post = {
            y: posterior_distance(s, t, y, cfg.metric, cfg.mc_samples, seed_key(cfg.seed, _POST, y), cfg.reference)
            for y in range(prior.n_classes)
            if prior.n_classes > 2 or y == 0
        }
        config = dict(cfg.snapshot(), n_classes=prior.n_classes)
        reports.append(TransferDistanceReport(lik, marg, post, prior, config))
    return reports


# convergence curves


@dataclass
class ConvergenceCurve:
    sample_sizes: list[int]
    values: list[float]
    spreads: Optional[list[float]] = None
    settled_at: Optional[int] = None
    criterion: str = "relative_change_below_5pct"
    threshold: float = 0.05

    def to_dict(self) -> dict:
        return asdict(self)


def settling_point(sizes: Sequence[int], values: Sequence[float], threshold: float = 0.05) -> Optional[int]:
    """First size whose relative change from the previous value is within ``threshold``.

    The denominator is ``max(previous, 1e-9)``. With ``threshold=0`` only
    an exact repeat settles.
    """
    for i in range(1, len(values)):
        prev = values[i - 1]
        rel = abs(values[i] - prev) / max(abs(prev), SETTLE_EPS)
        if rel <= threshold and (threshold > 0 or rel == 0):
            return int(sizes[i])
    return None


def _check_sizes(sizes: Sequence[int], available: int) -> list[int]:
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("need at least 2 sample sizes")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"sample sizes must be strictly ascending, got {sizes}")
    if sizes[0] < 1 or sizes[-1] > available:
        raise ValueError(f"sample sizes must lie in [1, {available}], got {sizes}")
    return sizes


def _columns(data) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(data, LabeledDataset):
        return data.features, data.feature_names
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, tuple(f"x{i}" for i in range(X.shape[1]))


def ks_convergence_study(
    stream,
    sizes: Sequence[int],
    reference,
    threshold: float = 0.05,
    seed: int = 0,
) -> dict[str, ConvergenceCurve]:
    """KS(reference feature, first ``size`` rows of the shuffled stream), per feature.

    The stream is permuted once with ``seed`` and then read as a growing
    prefix, so successive sizes are nested samples.
    """
    X, names = _columns(stream)
    R, rnames = _columns(reference)
    if X.shape[1] != R.shape[1]:
        raise DataError(f"stream has {X.shape[1]} features, reference has {R.shape[1]}")
    sizes = _check_sizes(sizes, X.shape[0])
    order = np.random.default_rng(list(seed_key(seed, _SUB))).permutation(X.shape[0])
    X = X[order]
    out = {}
    for j, name in enumerate(names):
        vals = [ks_statistic(R[:, j], X[:s, j]) for s in sizes]
        out[name] = ConvergenceCurve(sizes, vals, None, settling_point(sizes, vals, threshold), threshold=threshold)
    return out


def subsample_stability_study(
    tgt_ds: LabeledDataset,
    sizes: Sequence[int],
    cfg: StudyConfig = StudyConfig(),
    repeats: int = 10,
    prior: Optional[Prior] = None,
    threshold: float = 0.05,
) -> dict[str, ConvergenceCurve]:
    """Distance between models fitted on target subsamples and on the full target.

    Each (size, repeat) cell draws a stratified subsample with its own
    stream, fits the class-conditional model, and measures every
    distance against the full-sample model. Values are repeat means and
    spreads are repeat standard deviations (ddof=0).
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    sizes = _check_sizes(sizes, tgt_ds.n)
    prior = prior or Prior.empirical(tgt_ds)
    gcfg = cfg.gmm_config()
    full = fit(tgt_ds, prior, cfg.n_components, gcfg)
    cells: dict[str, list[list[float]]] = {}
    for i, size in enumerate(sizes):
        for r in range(repeats):
            sub = subsample(tgt_ds, size, seed_key(cfg.seed, _SUB, i, r), stratified=True)
            counts = sub.class_counts()
            thin = [y for y in range(prior.n_classes) if prior.probabilities[y] > 0 and counts[y] < cfg.n_components]
            if thin:
                raise DataError(
                    f"classes {thin} have fewer than K={cfg.n_components} rows in a stratified subsample of {size}"
                )
            model = fit(sub.with_environment("target"), prior, cfg.n_components, gcfg)
            cell = {}
            for y, e in likelihood_distances(model, full, cfg).items():
                cell[f"delta_X|Y={y}"] = e.value
            cell["delta_X"] = distance(model, full, cfg.metric, cfg.mc_samples, seed_key(cfg.seed, _MARG)).value
            for y in range(prior.n_classes):
                if prior.n_classes > 2 or y == 0:
                    cell[f"delta_Y={y}|X"] = posterior_distance(
                        model, full, y, cfg.metric, cfg.mc_samples, seed_key(cfg.seed, _POST, y), cfg.reference
                    ).value
            for k, v in cell.items():
                cells.setdefault(k, [[] for _ in sizes])[i].append(v)
    out = {}
    for k, per_size in cells.items():
        means = [float(np.mean(v)) for v in per_size]
        spreads = [float(np.std(v)) for v in per_size]
        out[k] = ConvergenceCurve(sizes, means, spreads, settling_point(sizes, means, threshold), threshold=threshold)
    return out


# recall vs distance


@dataclass
class RecallTable:
    rows: list[dict]
    rank_correlation: Optional[float]
    metric: str

    def to_dict(self) -> dict:
        return asdict(self)


def recall_vs_distance(
    src_model: ClassConditionalModel,
    tgt_ds: LabeledDataset,
    tgt_model: ClassConditionalModel,
    cfg: StudyConfig = StudyConfig(),
) -> RecallTable:
    """Per-class recall of the source posterior-argmax classifier on target rows.

    Each row pairs recall with the class's likelihood distance. The
    Spearman correlation across classes is None when it is undefined.
    """
    if src_model.dim != tgt_ds.d or tgt_model.dim != tgt_ds.d:
        raise DataError("models and target data must share feature dimension")
    if src_model.n_classes != tgt_model.n_classes:
        raise DataError("source and target models have different label alphabets")
    counts = tgt_ds.class_counts()
    classes = sorted(src_model.likelihoods)
    absent = [y for y in classes if y >= counts.size or counts[y] == 0]
    if absent:
        raise DataError(f"classes {absent} are absent from the target data")
    pred = src_model.classify(tgt_ds.features)
    dist = likelihood_distances(src_model, tgt_model, cfg)
    rows = []
    for y in classes:
        mask = tgt_ds.labels == y
        rows.append({
            "class": y,
            "n": int(mask.sum()),
            "recall": float(np.mean(pred[mask] == y)),
            "distance": dist[y].value,
            "std_error": dist[y].std_error,
        })
    rho = None
    if len(rows) >= 2:
        r = [row["recall"] for row in rows]
        d = [row["distance"] for row in rows]
        if np.ptp(r) > 0 and np.ptp(d) > 0:
            rho = float(spearmanr(r, d).statistic)
    return RecallTable(rows, rho, cfg.metric)


# batched comparison


@dataclass
class BatchedComparison:
    within_source_mean: float
    within_source_std: float
    cross_mean: float
    cross_std: float
    within_source: list[float]
    cross: list[float]
    batch_size: int
    n_source_batches: int
    n_target_batches: int
    metric: str

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(X: np.ndarray, size: int, seed) -> list[np.ndarray]:
    order = np.random.default_rng(list(seed)).permutation(X.shape[0])
    nb = X.shape[0] // size
    return [X[order[i * size:(i + 1) * size]] for i in range(nb)]


def batched_distance(
    src,
    tgt,
    batch_size: int = 100,
    cfg: StudyConfig = StudyConfig(metric="kl"),
) -> BatchedComparison:
    """Marginal distances between GMMs fitted on disjoint fixed-size batches.

    Within-source pairs are every (i, j) with i < j; cross pairs are every
    (source batch, target batch). Leftover rows that do not fill a batch
    are dropped.
    """
    S, _ = _columns(src)
    T, _ = _columns(tgt)
    if S.shape[1] != T.shape[1]:
        raise DataError("source and target have different feature dimension")
    if batch_size < max(cfg.n_components, 2):
        raise ValueError(f"batch_size must be at least max(K, 2), got {batch_size}")
    for name, X in (("source", S), ("target", T)):
        if X.shape[0] < 2 * batch_size:
            raise DataError(f"{name} has {X.shape[0]} rows; need at least {2 * batch_size}")
    sb = _batches(S, batch_size, seed_key(cfg.seed, _BATCH, 0))
    tb = _batches(T, batch_size, seed_key(cfg.seed, _BATCH, 1))
    # same fit stream per batch index: identical batches give identical models
    sm = [fit_em(b, cfg.n_components, cfg.gmm_config(_BATCH, i)) for i, b in enumerate(sb)]
    tm = [fit_em(b, cfg.n_components, cfg.gmm_config(_BATCH, i)) for i, b in enumerate(tb)]
    within = [
        distance(sm[i], sm[j], cfg.metric, cfg.mc_samples, seed_key(cfg.seed, _BATCH, 2, i, j)).value
        for i, j in itertools.combinations(range(len(sm)), 2)
    ]
    cross = [
        distance(sm[i], tm[j], cfg.metric, cfg.mc_samples, seed_key(cfg.seed, _BATCH, 3, i, j)).value
        for i, j in itertools.product(range(len(sm)), range(len(tm)))
    ]
    return BatchedComparison(
        float(np.mean(within)), float(np.std(within)), float(np.mean(cross)), float(np.std(cross)),
        within, cross, batch_size, len(sb), len(tb), cfg.metric,
    )


def mean_and_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se
