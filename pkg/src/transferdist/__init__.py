"""Empirical transfer distance between source and target learning problems."""

__version__ = "0.1.0"

from .dataset import LabeledDataset, load_csv, split_by_class, subsample  # noqa: E402
from .divergence import (  # noqa: E402
    DistanceEstimate,
    EmpiricalCdf,
    hellinger_gauss_closed,
    hellinger_mc,
    kl_gauss_closed,
    kl_mc,
    ks_statistic,
    posterior_distance,
)
from .gmm import GmmConfig, GmmModel, bic, fit_em  # noqa: E402
from .probmodel import ClassConditionalModel, Prior, fit  # noqa: E402
from .analysis import (  # noqa: E402
    StudyConfig,
    batched_distance,
    ks_convergence_study,
    recall_vs_distance,
    subsample_stability_study,
    transfer_distance_report,
)
