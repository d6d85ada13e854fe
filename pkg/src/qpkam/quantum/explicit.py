"""Closed-form solutions for the hyperbolic and parabolic normal forms."""
from __future__ import annotations

import math

import numpy as np

from .gaussian import gaussian_sobolev
from .hermite import HermiteState


def _profile(v0):
    """Callable x -> v0(x) from a HermiteState, a Gaussian width or a callable."""
    if isinstance(v0, HermiteState):
        return v0.evaluate
    if isinstance(v0, (complex, float, int)):
        b = complex(v0)
        amp = (b.imag / math.pi) ** 0.25
        return lambda x: amp * np.exp(0.5j * b * np.asarray(x) ** 2)
    return v0


def _deriv(f, x, s):
    k = 2 * np.pi * np.fft.fftfreq(len(x), x[1] - x[0])
    return np.fft.ifft((1j * k) ** s * np.fft.fft(f))


def quadrature_sobolev(f, x, s):
    """||H0^{s/2} f|| on a uniform periodic grid, H0 = x^2 - d^2/dx^2, s in {0, 1, 2}."""
    dx = x[1] - x[0]
    if s == 0:
        return math.sqrt(np.sum(np.abs(f) ** 2) * dx)
    if s == 1:
        return math.sqrt(np.sum(np.abs(x * f) ** 2 + np.abs(_deriv(f, x, 1)) ** 2) * dx)
    if s == 2:
        return math.sqrt(np.sum(np.abs(x ** 2 * f - _deriv(f, x, 2)) ** 2) * dx)
    raise ValueError("s must be 0, 1 or 2")


def _grid(width, n=1 << 14):
    L = 14.0 * width
    return np.linspace(-L, L, n, endpoint=False)


def explicit_hyperbolic(v0, lam, t, s, n=1 << 14):
    """v(t, x) = exp(-lam t/2) v0(exp(-lam t) x), moments by quadrature on a fixed grid."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    f0 = _profile(v0)
    x = _grid(max(1.0, math.exp(lam * t)), n)
    dx = x[1] - x[0]
    vt = math.exp(-lam * t / 2) * f0(math.exp(-lam * t) * x)
    v0x = f0(x)
    mom = lambda f: float(np.sum(x ** (2 * s) * np.abs(f) ** 2) * dx)
    dmom = lambda f: float(np.sum(np.abs(_deriv(f, x, s)) ** 2) * dx)
    out = {"t": t, "s": s, "lam": lam,
           "x_moment_0": mom(v0x), "x_moment_t": mom(vt),
           "d_moment_0": dmom(v0x), "d_moment_t": dmom(vt),
           "l2_t": quadrature_sobolev(vt, x, 0)}
    out["x_ratio"] = out["x_moment_t"] / out["x_moment_0"]
    out["d_ratio"] = out["d_moment_t"] / out["d_moment_0"] if out["d_moment_0"] else float("nan")
    out["x_ratio_expected"] = math.exp(2 * lam * s * t)
    out["d_ratio_expected"] = math.exp(-2 * lam * s * t)
    if s in (0, 1, 2):
        out["norm"] = quadrature_sobolev(vt, x, s)
    return out


def explicit_parabolic(v0, kappa, t, s):
    """v(t, x) = exp(i kappa x^2 t / 2) v0(x); ||v(t)||_s."""
    if kappa == 0:
        raise ValueError("kappa must be nonzero")
    t = np.atleast_1d(np.asarray(t, float))
    if isinstance(v0, (complex, float, int)):
        return gaussian_sobolev(complex(v0) + kappa * t, s)
    f0 = _profile(v0)
    x = _grid(1.0 + 0.0 * abs(kappa))
    base = f0(x)
    return np.array([quadrature_sobolev(np.exp(0.5j * kappa * x ** 2 * tt) * base, x, s)
                     for tt in t])
