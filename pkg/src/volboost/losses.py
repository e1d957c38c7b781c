"""Loss functions supplying value, gradient and Hessian to the booster.

Three kinds are supported: ``fair`` (robust, quadratic near zero and linear
in the tails), ``pinball`` (quantile loss at level ``q``) and ``squared``.
All functions are vectorised over numpy arrays and use the residual
convention ``r = y - y_hat``; gradients are taken with respect to ``y_hat``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

KINDS = ("fair", "pinball", "squared")


@dataclass(frozen=True)
class LossSpec:
    """Loss selection and its parameters.

    Parameters
    ----------
    kind : {"fair", "pinball", "squared"}
    c : float
        Fair-loss scale. Must be positive.
    q : float
        Pinball level in (0, 1).
    renew_leaves : bool
        Pinball only. Replace each new leaf value by the empirical q-quantile
        of the residuals falling in the leaf.
    init : {"auto", "mean", "quantile"}
        Initial prediction. ``auto`` is the q-quantile of the target for
        pinball and the mean otherwise.
    """

    kind: str = "fair"
    c: float = 1.0
    q: float = 0.5
    renew_leaves: bool = True
    init: str = "auto"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if not self.c > 0:
            raise ValueError("fair loss scale c must be positive")
        if not 0.0 < self.q < 1.0:
            raise ValueError("pinball level q must lie in (0, 1)")
        if self.init not in ("auto", "mean", "quantile"):
            raise ValueError(f"unknown init {self.init!r}")

    @classmethod
    def parse(cls, text: str, **kwargs) -> "LossSpec":
        """Build a spec from a config string such as ``"fair"`` or ``"pinball:0.9"``."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if arg:
            key = "q" if kind == "pinball" else "c"
            kwargs[key] = float(arg)
        return cls(kind=kind, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def _fair_value(a, c):
    # c^2 (x - log1p(x)) with x = |r|/c; series for small x avoids cancellation
    x = a / c
    out = np.empty_like(x)
    small = x < 1e-3
    xs = x[small]
    out[small] = xs * xs * (0.5 - xs * (1.0 / 3.0 - xs * (0.25 - xs * 0.2)))
    xl = x[~small]
    out[~small] = xl - np.log1p(xl)
    return c * c * out


def loss_value(spec: LossSpec, y, y_hat):
    """Per-sample loss L(y, y_hat); scalars in give a float back."""
    y_arr = np.asarray(y, dtype=float)
    r = np.atleast_1d(y_arr - np.asarray(y_hat, dtype=float))
    if spec.kind == "fair":
        out = _fair_value(np.abs(r), spec.c)
    elif spec.kind == "pinball":
        out = np.where(r >= 0, spec.q * r, (spec.q - 1.0) * r)
    else:
        out = r * r
    if np.ndim(y) == 0 and np.ndim(y_hat) == 0:
        return float(out[0])
    return out


def loss_gradient_hessian(spec: LossSpec, y, y_hat):
    """First and second derivative of the loss with respect to ``y_hat``.

    The pinball Hessian is fixed at one; at ``r == 0`` the pinball gradient
    takes the ``r < 0`` branch value ``1 - q``.
    """
    scalar = np.ndim(y) == 0 and np.ndim(y_hat) == 0
    r = np.atleast_1d(np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float))
    if spec.kind == "fair":
        denom = 1.0 + np.abs(r) / spec.c
        g = -r / denom
        h = 1.0 / (denom * denom)
    elif spec.kind == "pinball":
        g = np.where(r > 0, -spec.q, 1.0 - spec.q)
        h = np.ones_like(r)
    else:
        g = -2.0 * r
        h = np.full_like(r, 2.0)
    if scalar:
        return float(g[0]), float(h[0])
    return g, h


def initial_prediction(spec: LossSpec, y) -> float:
    """Constant start value F_0 of the boosting sequence."""
    y = np.asarray(y, dtype=float)
    use_quantile = spec.kind == "pinball" and spec.init != "mean"
    if spec.init == "quantile" and spec.kind != "pinball":
        raise ValueError("quantile init only applies to pinball loss")
    if use_quantile:
        return float(np.quantile(y, spec.q, method="inverted_cdf"))
    return float(np.mean(y))
