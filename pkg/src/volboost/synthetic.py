"""Synthetic realized-variance series for demonstrations and tests."""

from __future__ import annotations

import numpy as np
import pandas as pd


def heteroskedastic_series(n_rows: int = 600, n_predictors: int = 4, phi: float = 0.7,
                           seed: int = 0, start: str = "2019-01-01") -> pd.DataFrame:
    """Log-RV AR(1) driven by lagged predictors with predictor-dependent noise.

    Column ``RV`` holds realized variance on the original scale. Predictors
    ``x1..xk`` are AR(1) processes; ``x1`` shifts the next day's level and
    ``x2`` scales its noise. Other predictors are irrelevant.
    """
    rng = np.random.default_rng(seed)
    burn = 50
    n = n_rows + burn
    X = np.zeros((n, n_predictors))
    for t in range(1, n):
        X[t] = 0.5 * X[t - 1] + rng.standard_normal(n_predictors)
    mu = -7.0
    ly = np.full(n, mu)
    for t in range(1, n):
        sigma = 0.35 * np.exp(0.4 * X[t - 1, 1]) if n_predictors > 1 else 0.35
        ly[t] = mu + phi * (ly[t - 1] - mu) + 0.3 * X[t - 1, 0] + sigma * rng.standard_normal()
    dates = pd.bdate_range(start, periods=n_rows)
    df = pd.DataFrame(X[burn:], columns=[f"x{j + 1}" for j in range(n_predictors)])
    df.insert(0, "RV", np.exp(ly[burn:]))
    df.insert(0, "date", dates.strftime("%Y-%m-%d"))
    return df


def ar1(n: int, phi: float, seed: int = 0, sigma: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = np.zeros(n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + sigma * rng.standard_normal()
    return x
