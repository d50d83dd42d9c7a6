"""Class-conditional GMM likelihoods combined with a prior via Bayes' rule.

All arithmetic is in log space; the marginal is a log-sum-exp over
classes and the posterior is normalized once at the end.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ._rng import make_rng, seed_key
from .dataset import LabeledDataset
from .gmm import GmmConfig, GmmModel, fit_em

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# below this every class density underflows to zero in linear space
LOG_DENSITY_FLOOR = float(np.log(np.finfo(float).tiny))


@dataclass(frozen=True, eq=False)
class Prior:
    probabilities: np.ndarray
    source_kind: str = "user-specified"

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.probabilities, dtype=float))
        if p.ndim != 1 or p.size < 1:
            raise ValueError("prior must be a non-empty vector")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("prior entries must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"prior must sum to 1 (got {p.sum():.15g})")
        if self.source_kind not in ("empirical", "user-specified"):
            raise ValueError("source_kind must be 'empirical' or 'user-specified'")
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def empirical(cls, ds: LabeledDataset) -> "Prior":
        counts = ds.class_counts().astype(float)
        return cls(counts / counts.sum(), "empirical")

    @classmethod
    def from_first(cls, p0: float, rest: Optional[Sequence[float]] = None) -> "Prior":
        """Prior with P(Y=0)=p0; remaining mass split proportionally to ``rest``.

        ``rest`` defaults to a single other class (binary problem).
        """
        rest = np.ones(1) if rest is None else np.asarray(rest, dtype=float)
        if rest.sum() <= 0:
            rest = np.ones_like(rest)
        tail = (1.0 - p0) * rest / rest.sum()
        p = np.concatenate([[p0], tail])
        return cls(p)

    @property
    def n_classes(self) -> int:
        return self.probabilities.size

    def to_dict(self) -> dict:
        return {"probabilities": self.probabilities.tolist(), "source_kind": self.source_kind}

    def __repr__(self):
        return f"Prior({np.array2string(self.probabilities, precision=4)}, {self.source_kind})"


class ClassConditionalModel:
    """Per-class likelihoods P(X|Y=y), a prior P(Y), and derived P(X), P(Y|X)."""

    def __init__(self, likelihoods: dict[int, GmmModel], prior: Prior, environment: str = "source"):
        if not likelihoods:
            raise ValueError("need at least one class likelihood")
        dims = {m.dim for m in likelihoods.values()}
        if len(dims) != 1:
            raise ValueError(f"likelihood dimensions differ: {sorted(dims)}")
        missing = [y for y, p in enumerate(prior.probabilities) if p > 0 and y not in likelihoods]
        if missing:
            raise ValueError(f"classes {missing} have positive prior but no likelihood model")
        if max(likelihoods) >= prior.n_classes:
            raise ValueError("likelihood label outside the prior's alphabet")
        self.likelihoods = dict(sorted(likelihoods.items()))
        self.prior = prior
        self.environment = environment
        self.dim = dims.pop()
        self.underflow_count = 0

    @property
    def n_classes(self) -> int:
        return self.prior.n_classes

    def with_prior(self, prior: Prior) -> "ClassConditionalModel":
        return ClassConditionalModel(self.likelihoods, prior, self.environment)

    def _rows(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=float)
        if X.ndim == 0:
            return X.reshape(1, 1), True
        if X.ndim == 1:
            if self.dim == 1:
                return X[:, None], False
            X = X[None, :]
            single = True
        else:
            single = False
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got {X.shape[1]}, model has {self.dim}")
        return X, single

    def class_log_densities(self, X) -> np.ndarray:
        """(n, |Y|) matrix of log p(x|y); -inf for classes without a model."""
        X, _ = self._rows(X)
        out = np.full((X.shape[0], self.n_classes), -np.inf)
        for y, g in self.likelihoods.items():
            out[:, y] = g.log_density(X)
        return out

    def _log_joint(self, cls_ld: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            log_prior = np.log(self.prior.probabilities)
        return cls_ld + log_prior

    def marginal_log_density(self, X):
        X, single = self._rows(X)
        lp = logsumexp(self._log_joint(self.class_log_densities(X)), axis=1)
        return float(lp[0]) if single else lp

    # density-with-sampler protocol, used by the divergence estimators
    log_density = marginal_log_density

    def posterior_from_log_densities(self, cls_ld: np.ndarray) -> tuple[np.ndarray, int]:
        """Posterior rows from class log densities, plus the underflow-fallback count.

        Where every class log density is below the representable floor the
        posterior falls back to the prior.
        """
        joint = self._log_joint(cls_ld)
        post = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        under = ~(np.max(cls_ld, axis=1) > LOG_DENSITY_FLOOR)
        n_under = int(under.sum())
        if n_under:
            post[under] = self.prior.probabilities
        post /= post.sum(axis=1, keepdims=True)
        return post, n_under

    def posterior(self, X) -> np.ndarray:
        X, single = self._rows(X)
        post, n_under = self.posterior_from_log_densities(self.class_log_densities(X))
        if n_under:
            self.underflow_count += n_under
            log.warning("%d points underflowed every class density; posterior set to prior", n_under)
        return post[0] if single else post

    def classify(self, X):
        """Posterior argmax; exact ties go to the smallest label."""
        X, single = self._rows(X)
        lab = np.argmax(self.posterior(X), axis=1)
        return int(lab[0]) if single else lab

    def draw(self, u_class: np.ndarray, u_comp: np.ndarray, z: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.prior.probabilities)
        ys = np.minimum(np.searchsorted(cdf, u_class, side="right"), self.n_classes - 1)
        # guard against rounding landing on a zero-prior class
        valid = np.array([y in self.likelihoods and self.prior.probabilities[y] > 0 for y in range(self.n_classes)])
        if not np.all(valid[ys]):
            fallback = int(np.flatnonzero(valid)[-1])
            ys = np.where(valid[ys], ys, fallback)
        out = np.empty((u_class.size, self.dim))
        for y in np.unique(ys):
            sel = ys == y
            out[sel] = self.likelihoods[int(y)].draw(u_comp[sel], z[sel])
        return out

    def sample(self, m: int, rng) -> np.ndarray:
        """Draw from the marginal P(X).

        The random inputs have a fixed shape whatever the prior, so two
        models differing only in prior see common random numbers.
        """
        if not isinstance(rng, np.random.Generator):
            rng = make_rng(rng)
        u_class = rng.random(m)
        u_comp = rng.random(m)
        z = rng.standard_normal((m, self.dim))
        return self.draw(u_class, u_comp, z)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "environment": self.environment,
            "prior": self.prior.to_dict(),
            "likelihoods": {str(y): g.to_dict() for y, g in self.likelihoods.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassConditionalModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {doc.get('schema_version')}")
        prior = Prior(doc["prior"]["probabilities"], doc["prior"]["source_kind"])
        liks = {int(y): GmmModel.from_dict(g) for y, g in doc["likelihoods"].items()}
        return cls(liks, prior, doc.get("environment", "source"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "ClassConditionalModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit(
    ds: LabeledDataset,
    prior: Prior,
    n_components: int = 2,
    cfg: GmmConfig = GmmConfig(),
) -> ClassConditionalModel:
    """Fit one GMM per class on that class's rows only.

    Class ``y`` is fitted with seed ``(cfg.seed, y)`` regardless of the
    environment, so identical rows yield identical models. Classes with
    zero prior are still fitted when they have enough rows, which lets
    ``with_prior`` sweep priors without refitting.
    """
    if prior.n_classes != ds.n_classes:
        raise ValueError(f"prior has {prior.n_classes} entries, dataset alphabet has {ds.n_classes}")
    counts = ds.class_counts()
    short = [y for y in range(ds.n_classes) if prior.probabilities[y] > 0 and counts[y] < n_components]
    if short:
        raise ValueError(
            f"classes {short} have positive prior but fewer than K={n_components} rows "
            f"(counts {[int(counts[y]) for y in short]})"
        )
    liks = {}
    for y in range(ds.n_classes):
        if counts[y] >= n_components:
            class_cfg = replace(cfg, seed=seed_key(cfg.seed, y))
            liks[y] = fit_em(ds.features[ds.labels == y], n_components, class_cfg)
    return ClassConditionalModel(liks, prior, ds.environment)
