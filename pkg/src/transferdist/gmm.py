"""Full-covariance Gaussian mixture models fitted by EM."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from ._rng import Seed, make_rng, seed_key

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmConfig:
    max_iter: int = 200
    tol: float = 1e-6
    restarts: int = 5
    seed: Seed = 0
    # absolute eigenvalue floor; None means 1e-6 * mean column variance
    reg_floor: Optional[float] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.max_iter < 1 or self.restarts < 1:
            raise ValueError("max_iter and restarts must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.reg_floor is not None and self.reg_floor <= 0:
            raise ValueError("reg_floor must be positive")

    def to_dict(self) -> dict:
        return {
            "max_iter": self.max_iter,
            "tol": self.tol,
            "restarts": self.restarts,
            "seed": list(seed_key(self.seed)),
            "reg_floor": self.reg_floor,
        }


@dataclass(frozen=True)
class FitInfo:
    seed: tuple = ()
    restarts: int = 0
    best_restart: int = 0
    iterations: int = 0
    log_likelihood: float = float("nan")
    converged: bool = False
    reg_floor: float = 0.0
    history: tuple = ()
    reseeds: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": list(self.seed),
            "restarts": self.restarts,
            "best_restart": self.best_restart,
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "reg_floor": self.reg_floor,
            "reseeds": self.reseeds,
        }


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class GmmModel:
    """Weighted sum of K multivariate normals sharing dimension d."""

    def __init__(self, weights, means, covariances, info: Optional[FitInfo] = None):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        mu = np.asarray(means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None] if w.size > 1 else mu[None, :]
        cov = np.asarray(covariances, dtype=float)
        K, d = mu.shape
        if cov.ndim == 1 and d == 1:
            cov = cov[:, None, None]
        elif cov.ndim == 2:
            cov = cov[None] if K == 1 and cov.shape == (d, d) else cov[:, :, None]
        if w.shape != (K,) or cov.shape != (K, d, d):
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covs {cov.shape}")
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie in (0, 1] and sum to 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), atol=1e-10, rtol=0):
            raise ValueError("covariances must be symmetric")
        w = w / w.sum()
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariances must be positive definite") from None
        self.weights = _readonly(w)
        self.means = _readonly(mu)
        self.covariances = _readonly(cov)
        self._chol = _readonly(chol)
        self._log_weights = np.log(w)
        self._half_logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        self.info = info or FitInfo()

    @classmethod
    def gaussian(cls, mean, cov) -> "GmmModel":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls([1.0], mean[None, :], cov[None])

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _as_rows(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=float)
        single = False
        if X.ndim == 0:
            X, single = X.reshape(1, 1), True
        elif X.ndim == 1:
            # a 1-D array is n points when d == 1, else one d-vector
            if self.dim == 1:
                X = X[:, None]
            else:
                X, single = X[None, :], True
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got shape {X.shape}, model has d={self.dim}")
        return X, single

    def component_log_densities(self, X) -> np.ndarray:
        """(n, K) matrix of log N(x | mu_k, cov_k)."""
        X, _ = self._as_rows(X)
        out = np.empty((X.shape[0], self.n_components))
        for k in range(self.n_components):
            y = solve_triangular(self._chol[k], (X - self.means[k]).T, lower=True, check_finite=False)
            out[:, k] = -0.5 * (self.dim * _LOG_2PI + np.einsum("ij,ij->j", y, y)) - self._half_logdet[k]
        return out

    def log_density(self, X):
        """log p(x), log-sum-exp over components. Scalar for a single point."""
        X, single = self._as_rows(X)
        lp = logsumexp(self.component_log_densities(X) + self._log_weights, axis=1)
        return float(lp[0]) if single else lp

    def draw(self, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Transform uniforms ``u`` (m,) and standard normals ``z`` (m, d) into samples."""
        cdf = np.cumsum(self.weights)
        comp = np.minimum(np.searchsorted(cdf, u, side="right"), self.n_components - 1)
        return self.means[comp] + np.einsum("mij,mj->mi", self._chol[comp], z)

    def sample(self, m: int, rng) -> np.ndarray:
        """Draw ``m`` rows. ``rng`` is a Generator or a seed."""
        if not isinstance(rng, np.random.Generator):
            rng = make_rng(rng)
        u = rng.random(m)
        z = rng.standard_normal((m, self.dim))
        return self.draw(u, z)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "metadata": self.info.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmModel":
        meta = doc.get("metadata") or {}
        info = FitInfo(
            seed=tuple(meta.get("seed", ())),
            restarts=meta.get("restarts", 0),
            best_restart=meta.get("best_restart", 0),
            iterations=meta.get("iterations", 0),
            log_likelihood=meta.get("log_likelihood", float("nan")),
            converged=meta.get("converged", False),
            reg_floor=meta.get("reg_floor", 0.0),
            reseeds=meta.get("reseeds", 0),
        )
        return cls(doc["weights"], doc["means"], doc["covariances"], info)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.weights, self.means, self.covariances):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def __repr__(self):
        return f"GmmModel(K={self.n_components}, d={self.dim})"


def default_reg_floor(X: np.ndarray) -> float:
    v = float(np.mean(X.var(axis=0))) if X.shape[0] > 1 else 0.0
    return 1e-6 * v if v > 0 else 1e-6


def _floor_cov(S: np.ndarray, floor: float) -> np.ndarray:
    # eigenvalue clipping is the constrained MLE, so EM stays monotone
    S = 0.5 * (S + S.T)
    evals, evecs = np.linalg.eigh(S)
    if evals[0] >= floor:
        return S
    C = (evecs * np.maximum(evals, floor)) @ evecs.T
    return 0.5 * (C + C.T)


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


@dataclass
class _Run:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    reseeds: int = 0


def _e_step(X, weights, means, covs):
    model = GmmModel(weights, means, covs)
    logp = model.component_log_densities(X) + np.log(weights)
    ll = logsumexp(logp, axis=1)
    return np.exp(logp - ll[:, None]), ll


def _em_run(X: np.ndarray, K: int, cfg: GmmConfig, floor: float, restart: int) -> _Run:
    n, d = X.shape
    rng = make_rng(cfg.seed, restart)
    means = _kmeanspp(X, K, rng)
    pooled = _floor_cov(np.atleast_2d(np.cov(X.T, bias=True)) if n > 1 else np.zeros((d, d)), floor)
    covs = np.repeat(pooled[None], K, axis=0)
    weights = np.full(K, 1.0 / K)
    history = []
    converged = False
    reseeds = 0
    it = 0
    while True:
        resp, ll = _e_step(X, weights, means, covs)
        L = float(ll.sum())
        if history and abs(L - history[-1]) <= cfg.tol * abs(history[-1]):
            history.append(L)
            converged = True
            break
        history.append(L)
        if it == cfg.max_iter:
            break
        Nk = resp.sum(axis=0)
        empty = Nk < 1e-8 * n
        if np.any(empty):
            # reseed on the worst-explained points; restarts the monotone segment
            worst = np.argsort(ll)
            for j, k in enumerate(np.flatnonzero(empty)):
                resp[:, k] = 0.0
                resp[worst[j], :] = 0.0
                resp[worst[j], k] = 1.0
            Nk = resp.sum(axis=0)
            reseeds += 1
            history.append(float("nan"))  # marks a break in the monotone sequence
        weights = Nk / Nk.sum()
        means = (resp.T @ X) / Nk[:, None]
        for k in range(K):
            D = X - means[k]
            covs[k] = _floor_cov((resp[:, k, None] * D).T @ D / Nk[k], floor)
        it += 1
    return _Run(weights, means, covs, L, it, converged, history, reseeds)


def fit_em(data, K: int = 2, cfg: GmmConfig = GmmConfig()) -> GmmModel:
    """Fit a K-component GMM by EM, keeping the best of ``cfg.restarts`` runs.

    Restart ``r`` draws its k-means++ seeding from the stream
    ``(cfg.seed, r)``, so results do not depend on ``cfg.n_jobs``.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if d < 1:
        raise ValueError("data must have at least one column")
    if n < K:
        raise ValueError(f"need at least K={K} rows, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    floor = cfg.reg_floor if cfg.reg_floor is not None else default_reg_floor(X)
    key = seed_key(cfg.seed)

    if K > 1 and np.all(X == X[0]):
        warnings.warn("all rows identical; fitting a single component", RuntimeWarning, stacklevel=2)
        cov = floor * np.eye(d)[None]
        ll = float(GmmModel([1.0], X[:1], cov).log_density(X).sum())
        return GmmModel([1.0], X[:1], cov, FitInfo(key, cfg.restarts, 0, 0, ll, True, floor))

    restarts = range(cfg.restarts)
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as pool:
            runs = list(pool.map(lambda r: _em_run(X, K, cfg, floor, r), restarts))
    else:
        runs = [_em_run(X, K, cfg, floor, r) for r in restarts]
    best = max(range(len(runs)), key=lambda r: (runs[r].loglik, -r))
    run = runs[best]
    info = FitInfo(
        seed=key,
        restarts=cfg.restarts,
        best_restart=best,
        iterations=run.iterations,
        log_likelihood=run.loglik,
        converged=run.converged,
        reg_floor=floor,
        history=tuple(run.history),
        reseeds=run.reseeds,
    )
    if not run.converged:
        log.info("EM did not converge in %d iterations", cfg.max_iter)
    return GmmModel(run.weights, run.means, run.covs, info)


def bic_value(loglik: float, n_samples: int, n_components: int, dim: int) -> float:
    p = n_components - 1 + n_components * dim + n_components * dim * (dim + 1) // 2
    return p * np.log(n_samples) - 2.0 * loglik


def bic(model: GmmModel, data) -> float:
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    ll = float(np.sum(model.log_density(X)))
    return bic_value(ll, X.shape[0], model.n_components, model.dim)


def select_k(data, ks=(1, 2, 3, 4, 5), cfg: GmmConfig = GmmConfig()) -> tuple[int, dict[int, float]]:
    """Fit each K in ``ks`` and return the BIC-minimizing one with all scores."""
    scores = {k: bic(fit_em(data, k, cfg), data) for k in ks}
    return min(scores, key=lambda k: (scores[k], k)), scores


def dumps(model: GmmModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)
