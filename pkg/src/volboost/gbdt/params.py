"""Booster hyperparameters and the tuned presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class BoostParams:
    """Hyperparameters of the histogram booster.

    ``reg_gamma`` is the per-split complexity penalty (minimum loss reduction).
    ``bagging_freq == 0`` disables bagging. ``num_leaves=None`` leaves the
    tree size bounded by ``max_depth`` only.
    """

    n_estimators: int = 100
    max_depth: int = 2
    min_data_in_leaf: int = 20
    learning_rate: float = 0.1
    reg_alpha: float = 0.0
    reg_lambda: float = 0.0
    reg_gamma: float = 0.0
    feature_fraction: float = 1.0
    bagging_fraction: float = 1.0
    bagging_freq: int = 0
    max_bin: int = 255
    sampler: str = "gbdt"
    goss_top_rate: float = 0.2
    goss_other_rate: float = 0.1
    num_leaves: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_data_in_leaf < 1:
            raise ValueError("min_data_in_leaf must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("reg_alpha", "reg_lambda", "reg_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("feature_fraction", "bagging_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.bagging_freq < 0:
            raise ValueError("bagging_freq must be >= 0")
        if not 2 <= self.max_bin <= 256:
            raise ValueError("max_bin must lie in [2, 256]")
        if self.sampler not in ("gbdt", "goss"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        a, b = self.goss_top_rate, self.goss_other_rate
        if not (0 < a < 1 and 0 < b <= 1 and a + b <= 1):
            raise ValueError("goss rates need 0 < a, 0 < b and a + b <= 1")
        if self.num_leaves is not None and self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")

    def with_(self, **changes) -> "BoostParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoostParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown booster parameters: {sorted(unknown)}")
        return cls(**d)


# Tuned settings for the three model variants (point, point with shock
# indicators, pinball), GBDT sampler, no complexity penalty.
LGBM = BoostParams(
    n_estimators=500, max_depth=2, min_data_in_leaf=3, learning_rate=0.0234,
    reg_alpha=0.132, reg_lambda=0.002, feature_fraction=0.6,
    bagging_fraction=1.0, bagging_freq=3, max_bin=128,
)
LGBM_SHOCKS = BoostParams(
    n_estimators=500, max_depth=2, min_data_in_leaf=2, learning_rate=0.0203,
    reg_alpha=1.51e-5, reg_lambda=0.197, feature_fraction=0.8,
    bagging_fraction=0.7, bagging_freq=3, max_bin=224,
)
LGBM_PINBALL = BoostParams(
    n_estimators=600, max_depth=2, min_data_in_leaf=4, learning_rate=0.0399,
    reg_alpha=8.5e-4, reg_lambda=1.13e-4, feature_fraction=0.6,
    bagging_fraction=0.5, bagging_freq=2, max_bin=32,
)
SHOCK_THRESHOLD = 2.5
PRESETS = {"lgbm": LGBM, "lgbm_shocks": LGBM_SHOCKS, "lgbm_pinball": LGBM_PINBALL}
