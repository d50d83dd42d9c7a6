"""Synthetic source/target scenarios with known drift.

Each class is a Gaussian
blob in a low-dimensional feature space, and the target moves or
stretches chosen classes.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ._rng import Seed, make_rng
from .dataset import LabeledDataset


def gaussian_classes(
    means: Sequence,
    covs: Sequence,
    counts: Sequence[int],
    seed: Seed = 0,
    environment: str = "source",
) -> LabeledDataset:
    """Rows drawn class by class from N(means[y], covs[y]), then shuffled."""
    rng = make_rng(seed)
    X, y = [], []
    for lab, (mu, cov, n) in enumerate(zip(means, covs, counts)):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        X.append(rng.multivariate_normal(mu, cov, size=int(n)))
        y.append(np.full(int(n), lab))
    X, y = np.vstack(X), np.concatenate(y)
    order = rng.permutation(y.size)
    names = [f"pc{i + 1}" for i in range(X.shape[1])]
    return LabeledDataset(X[order], y[order], names, environment, len(counts))


def binary_drift(
    shift: float,
    n_per_class: Sequence[int] = (400, 400),
    seed: Seed = 0,
    separation: float = 3.0,
    spread: float = 1.0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Healthy class 0 at the origin, damaged class 1 at ``(separation, 0)``.

    In the target, class 1's mean moves by ``shift`` standard deviations
    along the second axis; class 0 is unchanged.
    """
    cov = np.eye(2)
    means_s = [(0.0, 0.0), (separation, 0.0)]
    means_t = [(0.0, 0.0), (separation, shift)]
    covs_t = [cov, spread**2 * cov]
    src = gaussian_classes(means_s, [cov, cov], n_per_class, (*_key(seed), 0), "source")
    tgt = gaussian_classes(means_t, covs_t, n_per_class, (*_key(seed), 1), "target")
    return src, tgt


def ring_classes(
    n_classes: int = 5,
    n_per_class: int = 300,
    radius: float = 3.0,
    shifted: Optional[int] = None,
    shift: float = 0.0,
    seed: Seed = 0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Classes evenly spaced on a circle; the target moves one class toward the center."""
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    means = np.c_[radius * np.cos(angles), radius * np.sin(angles)]
    covs = [np.eye(2)] * n_classes
    counts = [n_per_class] * n_classes
    tmeans = means.copy()
    if shifted is not None:
        tmeans[shifted] -= shift * means[shifted] / radius
    src = gaussian_classes(means, covs, counts, (*_key(seed), 0), "source")
    tgt = gaussian_classes(tmeans, covs, counts, (*_key(seed), 1), "target")
    return src, tgt


def _key(seed: Seed) -> tuple:
    return (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
