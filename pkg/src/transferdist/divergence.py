"""Hellinger and KL transfer distances between fitted densities.

Continuous densities are compared by Monte Carlo over samples of the
first argument. Posteriors are compared pointwise as Bernoulli pairs and
averaged over a reference distribution on X. Closed-form Gaussian values
serve as oracles for the Monte Carlo paths.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from ._rng import Seed, make_rng, seed_key

log = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 100_000
KL_FLOOR = 1e-12
METRICS = ("hellinger", "kl")
REFERENCES = ("source", "target", "mixture")


class EstimationError(RuntimeError):
    pass


class Density(Protocol):
    dim: int

    def log_density(self, X) -> np.ndarray: ...

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class DistanceEstimate:
    """A divergence value plus how it was obtained.

    ``raw_value`` is the pre-clamp quantity on its natural scale: the
    squared distance ``1 - B`` for Hellinger, the KL estimate itself for KL.
    ``raw_std_error`` is its standard error.
    """

    value: float
    method: str
    mc_samples: Optional[int] = None
    seed: Optional[tuple] = None
    std_error: Optional[float] = None
    raw_value: Optional[float] = None
    raw_std_error: Optional[float] = None
    clamped: bool = False
    n_floored: int = 0
    n_nonfinite: int = 0
    n_underflow: int = 0
    direction: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["seed"] is not None:
            d["seed"] = list(d["seed"])
        return d

    def violation(self) -> float:
        """How far the raw estimate fell outside the valid range (0 if inside)."""
        if self.raw_value is None:
            return 0.0
        return max(0.0, -self.raw_value)


# discrete formulas


def hellinger_discrete(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    return float(np.sqrt(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)))


def kl_discrete(p, q, floor: float = 0.0) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], floor))))


def bernoulli_hellinger(a, b) -> np.ndarray:
    """Pointwise Hellinger between (a, 1-a) and (b, 1-b)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    s = (np.sqrt(a) - np.sqrt(b)) ** 2 + (np.sqrt(1 - a) - np.sqrt(1 - b)) ** 2
    return np.sqrt(np.clip(0.5 * s, 0.0, 1.0))


def bernoulli_kl(a, b, floor: float = KL_FLOOR) -> tuple[np.ndarray, int]:
    """Pointwise KL((a, 1-a) || (b, 1-b)) with ``b`` floored; returns (values, floored count)."""
    a = np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
    b = np.clip(np.asarray(b, dtype=float), 0.0, 1.0)
    b1, b0 = b, 1.0 - b
    floored = int(np.sum(((a > 0) & (b1 < floor)) | ((a < 1) & (b0 < floor))))
    b1, b0 = np.maximum(b1, floor), np.maximum(b0, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(a > 0, a * np.log(a / b1), 0.0)
        t0 = np.where(a < 1, (1 - a) * np.log((1 - a) / b0), 0.0)
    return np.maximum(t1 + t0, 0.0), floored


# closed-form Gaussian oracles


def _gauss_params(mu, cov):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mu.size, mu.size):
        raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mu.size}")
    if not np.allclose(cov, cov.T, atol=1e-10, rtol=0):
        raise ValueError("covariance must be symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None
    return mu, cov, 2.0 * np.sum(np.log(np.diag(L)))


def hellinger_gauss_closed(mu1, cov1, mu2, cov2) -> float:
    """Exact Hellinger distance between two multivariate normals.

    Scalars are read as a 1-D mean and variance.
    """
    mu1, cov1, ld1 = _gauss_params(mu1, cov1)
    mu2, cov2, ld2 = _gauss_params(mu2, cov2)
    avg = 0.5 * (cov1 + cov2)
    _, _, ld_avg = _gauss_params(mu1, avg)
    diff = mu1 - mu2
    maha = float(diff @ np.linalg.solve(avg, diff))
    log_bc = 0.25 * ld1 + 0.25 * ld2 - 0.5 * ld_avg - 0.125 * maha
    return math.sqrt(max(0.0, -math.expm1(log_bc)))


def kl_gauss_closed(mu1, cov1, mu2, cov2) -> float:
    """Exact KL(N(mu1, cov1) || N(mu2, cov2))."""
    mu1, cov1, ld1 = _gauss_params(mu1, cov1)
    mu2, cov2, ld2 = _gauss_params(mu2, cov2)
    d = mu1.size
    diff = mu2 - mu1
    tr = float(np.trace(np.linalg.solve(cov2, cov1)))
    maha = float(diff @ np.linalg.solve(cov2, diff))
    return max(0.0, 0.5 * (tr + maha - d + ld2 - ld1))


# Monte Carlo estimators


def _is_pair(seed) -> bool:
    return isinstance(seed, (tuple, list)) and len(seed) == 2 and all(isinstance(s, (tuple, list)) for s in seed)


def _stream_pair(seed):
    """Two generators, one for sampling each argument.

    An int seed ``s`` gives streams ``(s, 0)`` and ``(s, 1)``. A pair of
    tuples ``(a, b)`` uses ``a`` and ``b`` directly, so swapping the
    arguments and mirroring the pair reproduces the same draws.
    """
    if _is_pair(seed):
        return make_rng(seed[0]), make_rng(seed[1])
    return make_rng(seed, 0), make_rng(seed, 1)


def _seed_record(seed) -> tuple:
    if _is_pair(seed):
        return (seed_key(seed[0]), seed_key(seed[1]))
    return seed_key(seed)


def _flat_seed(seed) -> tuple:
    if _is_pair(seed):
        return seed_key(seed[0]) + seed_key(seed[1])
    return seed_key(seed)


def _check_m(m: int):
    if m < 2:
        raise EstimationError(f"need at least 2 Monte Carlo samples, got {m}")


def _log_ratio(p: Density, q: Density, x: np.ndarray, what: str) -> np.ndarray:
    """log q(x) - log p(x) with non-finite terms removed (at most 1% allowed)."""
    lp = np.asarray(p.log_density(x), dtype=float)
    lq = np.asarray(q.log_density(x), dtype=float)
    with np.errstate(invalid="ignore"):
        r = lq - lp
    bad = ~np.isfinite(r)
    n_bad = int(bad.sum())
    if n_bad > 0.01 * r.size:
        raise EstimationError(
            f"{what}: {n_bad} of {r.size} density ratios are non-finite "
            f"(p: {int(np.sum(~np.isfinite(lp)))} non-finite log densities, "
            f"q: {int(np.sum(~np.isfinite(lq)))})"
        )
    return r[~bad]


def _bc_terms(p: Density, q: Density, m: int, rng) -> tuple[float, float, int]:
    """Mean and variance of sqrt(q/p) over x ~ p; plus dropped-sample count."""
    x = p.sample(m, rng)
    r = _log_ratio(p, q, x, "hellinger")
    t = np.exp(0.5 * r)
    return float(t.mean()), float(t.var(ddof=1)) / t.size, m - t.size


def _hellinger_from_bc(b_raw: float, var_b: float):
    se_b = math.sqrt(max(var_b, 0.0))
    b = min(max(b_raw, 0.0), 1.0)
    h = math.sqrt(1.0 - b)
    # delta method away from 0; sqrt is 1/2-Hoelder so sqrt(se_b) bounds the error near 0
    se_h = se_b / (2.0 * h) if h * h > se_b else math.sqrt(se_b)
    return h, se_h, 1.0 - b_raw, se_b, b != b_raw


def hellinger_mc(
    p: Density,
    q: Density,
    m: int = DEFAULT_MC_SAMPLES,
    seed: Seed = 0,
    symmetric: bool = True,
) -> DistanceEstimate:
    """Monte Carlo Hellinger distance H = sqrt(1 - B).

    B is the Bhattacharyya coefficient, estimated as the mean of
    sqrt(q(x)/p(x)) over x ~ p. The symmetric estimator averages this with
    the mirrored estimate over y ~ q.
    """
    _check_m(m)
    rng_p, rng_q = _stream_pair(seed)
    b1, v1, drop1 = _bc_terms(p, q, m, rng_p)
    if symmetric:
        b2, v2, drop2 = _bc_terms(q, p, m, rng_q)
        b_raw, var_b, dropped = 0.5 * (b1 + b2), 0.25 * (v1 + v2), drop1 + drop2
    else:
        b_raw, var_b, dropped = b1, v1, drop1
    h, se, raw, raw_se, clamped = _hellinger_from_bc(b_raw, var_b)
    if clamped:
        log.debug("hellinger: Bhattacharyya estimate %.6g clamped to [0, 1]", b_raw)
    return DistanceEstimate(
        value=h,
        method="hellinger_mc",
        mc_samples=m,
        seed=_seed_record(seed),
        std_error=se,
        raw_value=raw,
        raw_std_error=raw_se,
        clamped=clamped,
        n_nonfinite=dropped,
        direction="symmetric" if symmetric else "p->q",
    )


def kl_mc(p: Density, q: Density, m: int = DEFAULT_MC_SAMPLES, seed: Seed = 0) -> DistanceEstimate:
    """Monte Carlo KL(p || q) = E_p[log p - log q]; negative estimates clamp to 0."""
    _check_m(m)
    rng_p, _ = _stream_pair(seed)
    x = p.sample(m, rng_p)
    t = -_log_ratio(p, q, x, "kl")
    raw = float(t.mean())
    se = float(t.std(ddof=1) / math.sqrt(t.size))
    value = max(raw, 0.0)
    if raw < -3.0 * se:
        log.warning("kl: estimate %.4g is more than 3 standard errors below 0", raw)
    return DistanceEstimate(
        value=value,
        method="kl_mc",
        mc_samples=m,
        seed=_seed_record(seed),
        std_error=se,
        raw_value=raw,
        raw_std_error=se,
        clamped=raw < 0,
        n_nonfinite=m - t.size,
        direction="p->q",
    )


def distance(p: Density, q: Density, metric: str = "hellinger", m: int = DEFAULT_MC_SAMPLES, seed: Seed = 0):
    if metric == "hellinger":
        return hellinger_mc(p, q, m, seed)
    if metric == "kl":
        return kl_mc(p, q, m, seed)
    raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def posterior_distance(
    src,
    tgt,
    y: int,
    metric: str = "hellinger",
    m: int = DEFAULT_MC_SAMPLES,
    seed: Seed = 0,
    reference: str = "mixture",
) -> DistanceEstimate:
    """Average pointwise distance between P_S(Y=y|x) and P_T(Y=y|x).

    At each x the pair (P(y|x), 1 - P(y|x)) is compared with the discrete
    Hellinger or KL formula (KL direction source -> target). The x are
    drawn from ``reference``: the source marginal, the target marginal,
    or their equal mixture.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    if reference not in REFERENCES:
        raise ValueError(f"reference must be one of {REFERENCES}, got {reference!r}")
    if src.dim != tgt.dim or src.n_classes != tgt.n_classes:
        raise ValueError("source and target models must share dimension and label alphabet")
    if not 0 <= y < src.n_classes:
        raise ValueError(f"label {y} outside alphabet of size {src.n_classes}")
    _check_m(m)
    rng_s, rng_t = _stream_pair(seed)
    if reference == "source":
        x = src.sample(m, rng_s)
    elif reference == "target":
        x = tgt.sample(m, rng_t)
    else:
        xs = src.sample(m, rng_s)
        xt = tgt.sample(m, rng_t)
        pick = make_rng(seed_key(_flat_seed(seed), 2)).random(m) < 0.5
        x = np.where(pick[:, None], xs, xt)
    ps, under_s = src.posterior_from_log_densities(src.class_log_densities(x))
    pt, under_t = tgt.posterior_from_log_densities(tgt.class_log_densities(x))
    a, b = ps[:, y], pt[:, y]
    floored = 0
    if metric == "hellinger":
        vals = bernoulli_hellinger(a, b)
    else:
        vals, floored = bernoulli_kl(a, b)
    raw = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(m))
    return DistanceEstimate(
        value=raw,
        method="posterior_expected",
        mc_samples=m,
        seed=_seed_record(seed),
        std_error=se,
        raw_value=raw,
        raw_std_error=se,
        n_floored=floored,
        n_underflow=under_s + under_t,
        direction=f"{metric}:{reference}",
    )


# Kolmogorov-Smirnov


class EmpiricalCdf:
    """Right-continuous step CDF of a univariate sample."""

    def __init__(self, values: Sequence[float]):
        v = np.sort(np.asarray(values, dtype=float).ravel())
        if v.size == 0:
            raise ValueError("empirical CDF needs a non-empty sample")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample contains non-finite values")
        v.setflags(write=False)
        self.values = v

    @property
    def n(self) -> int:
        return self.values.size

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.n


def ks_statistic(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)|, evaluated exactly at every breakpoint."""
    a = a if isinstance(a, EmpiricalCdf) else EmpiricalCdf(a)
    b = b if isinstance(b, EmpiricalCdf) else EmpiricalCdf(b)
    grid = np.concatenate([a.values, b.values])
    return float(np.max(np.abs(a(grid) - b(grid))))
