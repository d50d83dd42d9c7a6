"""Window-and-summarize raw sensor series, then project onto source PCs."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import DataError, LabeledDataset

SUMMARIES = ("mean", "std")


@dataclass(frozen=True)
class WindowConfig:
    window_length: int = 10
    hop: int = 10
    summaries: tuple[str, ...] = SUMMARIES

    def __post_init__(self):
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        bad = [s for s in self.summaries if s not in SUMMARIES]
        if bad or not self.summaries:
            raise ValueError(f"summaries must be a non-empty subset of {SUMMARIES}, got {self.summaries}")
        if len(set(self.summaries)) != len(self.summaries):
            raise ValueError("duplicate summaries")
        min_len = 2 if "std" in self.summaries else 1
        if self.window_length < min_len:
            raise ValueError(f"window_length must be >= {min_len} for summaries {self.summaries}")


def window_summarize(raw, cfg: WindowConfig) -> np.ndarray:
    """Summarize each sliding window of ``raw`` rows.

    Output has ``floor((n - window_length) / hop) + 1`` rows and columns
    ordered feature-major, summary-minor. Standard deviations use ddof=1.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    n, d = raw.shape
    L = cfg.window_length
    if n < L:
        raise DataError(f"series of {n} rows shorter than window_length {L}")
    starts = np.arange(0, n - L + 1, cfg.hop)
    windows = np.lib.stride_tricks.sliding_window_view(raw, L, axis=0)[starts]  # (n', d, L)
    cols = []
    for s in cfg.summaries:
        if s == "mean":
            cols.append(windows.mean(axis=2))
        else:
            cols.append(windows.std(axis=2, ddof=1))
    return np.stack(cols, axis=2).reshape(len(starts), d * len(cfg.summaries))


def summary_names(names: Sequence[str], cfg: WindowConfig) -> list[str]:
    return [f"{name}_{s}" for name in names for s in cfg.summaries]


def window_dataset(ds: LabeledDataset, cfg: WindowConfig) -> LabeledDataset:
    """Window a labeled series; windows never straddle a label change.

    Each maximal run of identical consecutive labels is windowed on its
    own and runs shorter than the window are dropped.
    """
    breaks = np.flatnonzero(np.diff(ds.labels)) + 1
    bounds = np.concatenate([[0], breaks, [ds.n]])
    feats, labs = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < cfg.window_length:
            continue
        w = window_summarize(ds.features[a:b], cfg)
        feats.append(w)
        labs.append(np.full(w.shape[0], ds.labels[a]))
    if not feats:
        raise DataError(f"no label run is at least window_length={cfg.window_length} rows long")
    return LabeledDataset(
        np.vstack(feats), np.concatenate(labs), summary_names(ds.feature_names, cfg),
        ds.environment, ds.n_classes, ds.label_mapping,
    )


@dataclass(frozen=True, eq=False)
class PcaProjection:
    center: np.ndarray
    scale: Optional[np.ndarray]
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance_ratio: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PcaProjection":
        return cls(
            np.asarray(doc["center"], dtype=float),
            None if doc.get("scale") is None else np.asarray(doc["scale"], dtype=float),
            np.atleast_2d(np.asarray(doc["components"], dtype=float)),
            np.asarray(doc["explained_variance_ratio"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "PcaProjection":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_pca(source_features, k: int = 2, standardize: bool = False) -> PcaProjection:
    """Fit principal components on source rows only.

    Eigen-decomposes the sample covariance. Each component is sign-flipped
    so that its largest-magnitude entry is positive. Columns with zero
    variance get scale 1 when standardizing.
    """
    X = np.asarray(source_features, dtype=float)
    if X.ndim != 2:
        raise DataError("features must be a 2-D matrix")
    n, d = X.shape
    if n < 2:
        raise DataError("PCA needs at least 2 rows")
    if not 1 <= k <= min(n, d):
        raise DataError(f"k={k} must be in [1, min(n, d)={min(n, d)}]")
    center = X.mean(axis=0)
    Z = X - center
    scale = None
    if standardize:
        scale = Z.std(axis=0, ddof=1)
        scale[scale == 0] = 1.0
        Z = Z / scale
    cov = Z.T @ Z / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    rank = int(np.sum(evals > 1e-10 * max(total, np.finfo(float).tiny)))
    if k > rank:
        raise DataError(f"k={k} exceeds the numerical rank of the data; at most {rank} components achievable")
    comps = evecs[:, :k].T.copy()
    flip = comps[np.arange(k), np.argmax(np.abs(comps), axis=1)] < 0
    comps[flip] *= -1
    ratio = evals[:k] / total
    return PcaProjection(center, scale, comps, ratio)


def apply_pca(proj: PcaProjection, features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != proj.d:
        raise DataError(f"feature dimension {X.shape[1]} does not match projection dimension {proj.d}")
    Z = X - proj.center
    if proj.scale is not None:
        Z = Z / proj.scale
    return Z @ proj.components.T


def reconstruct(proj: PcaProjection, scores) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(scores, dtype=float)) @ proj.components
    if proj.scale is not None:
        Z = Z * proj.scale
    return Z + proj.center


def project_datasets(proj: PcaProjection, *datasets: LabeledDataset) -> tuple[LabeledDataset, ...]:
    names = [f"pc{i + 1}" for i in range(proj.k)]
    return tuple(ds.with_features(apply_pca(proj, ds.features), names) for ds in datasets)
