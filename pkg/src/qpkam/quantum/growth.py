"""Growth-law prediction from the reduced form and model selection on traces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

T_TRANSIENT = 5.0
MIN_SAMPLES = 20
R2_TREND = 0.9


@dataclass(frozen=True)
class GrowthLaw:
    kind: str                  # Bounded | Exponential | Polynomial
    rate: float = 0.0
    degree: float = 0.0

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate, "degree": self.degree}


def predict_growth(form, s) -> GrowthLaw:
    if form.kind in ("Elliptic", "Zero"):
        return GrowthLaw("Bounded")
    if form.kind == "Hyperbolic":
        return GrowthLaw("Exponential", rate=s * form.value)
    if form.kind == "Parabolic":
        return GrowthLaw("Polynomial", degree=float(s))
    raise ValueError(f"unknown form {form.kind!r}")


@dataclass(frozen=True)
class GrowthFit:
    kind: str
    value: float               # rate, degree, or mean level
    r2: float
    confidence: float          # R^2 margin over the runner-up trend model
    n_samples: int
    sse: dict

    def to_dict(self):
        return {"kind": self.kind, "value": self.value, "r2": self.r2,
                "confidence": self.confidence, "n_samples": self.n_samples,
                "sse": dict(self.sse)}


class InsufficientSamplesError(ValueError):
    pass


def _linfit(x, y):
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, float(np.sum((y - A @ coef) ** 2))


def fit_growth(t, y=None, t_min=T_TRANSIENT):
    """Pick among constant, log-linear and log-log fits of log y.

    Accepts a SobolevTrace (first s, trusted samples) or arrays (t, y).
    """
    if y is None:
        tr = t
        t, y = tr.series(tr.s[0])
    t, y = np.asarray(t, float), np.asarray(y, float)
    m = (t >= t_min) & (y > 0)
    t, y = t[m], y[m]
    if len(t) < MIN_SAMPLES:
        raise InsufficientSamplesError(f"{len(t)} trusted samples after t={t_min}, need {MIN_SAMPLES}")
    ly = np.log(y)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    (_, rate), sse_exp = _linfit(t, ly)
    (_, deg), sse_pow = _linfit(np.log(t), ly)
    sse = {"constant": sst, "exponential": sse_exp, "polynomial": sse_pow}
    if sst <= 0:
        return GrowthFit("Bounded", float(y.mean()), 1.0, 1.0, len(t), sse)
    r2_exp, r2_pow = 1 - sse_exp / sst, 1 - sse_pow / sst
    best = max(r2_exp, r2_pow)
    if best < R2_TREND:
        return GrowthFit("Bounded", float(y.mean()), best, R2_TREND - best, len(t), sse)
    if r2_exp >= r2_pow:
        return GrowthFit("Exponential", float(rate), r2_exp, r2_exp - r2_pow, len(t), sse)
    return GrowthFit("Polynomial", float(deg), r2_pow, r2_pow - r2_exp, len(t), sse)
