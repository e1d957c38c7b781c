"""Histogram gradient-boosted regression trees."""

from ._kernels import BACKEND
from .binning import BinMapper
from .booster import BoostedModel, fit, fit_ensemble, predict, predict_ensemble
from .params import LGBM, LGBM_PINBALL, LGBM_SHOCKS, PRESETS, BoostParams
from .sampling import sample_rows
from .split import best_split, build_histograms, leaf_weight, soft_threshold
from .tree import RegressionTree

__all__ = [
    "BACKEND", "BinMapper", "BoostParams", "BoostedModel", "LGBM", "LGBM_PINBALL",
    "LGBM_SHOCKS", "PRESETS", "RegressionTree", "best_split", "build_histograms",
    "fit", "fit_ensemble", "leaf_weight", "predict", "predict_ensemble",
    "sample_rows", "soft_threshold",
]
