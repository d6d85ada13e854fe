"""Closed-form helpers for 2x2 traceless / unimodular matrices.

All functions broadcast over leading axes: an array of shape ``(..., 2, 2)``
is treated as a stack of matrices.
"""
import numpy as np

J = np.array([[0.0, -1.0], [1.0, 0.0]])


def det2(m):
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def mul2(a, b):
    """Batched 2x2 product, faster than ``matmul`` for tiny matrices."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape),
                   dtype=np.result_type(a, b))
    out[..., 0, 0] = a[..., 0, 0] * b[..., 0, 0] + a[..., 0, 1] * b[..., 1, 0]
    out[..., 0, 1] = a[..., 0, 0] * b[..., 0, 1] + a[..., 0, 1] * b[..., 1, 1]
    out[..., 1, 0] = a[..., 1, 0] * b[..., 0, 0] + a[..., 1, 1] * b[..., 1, 0]
    out[..., 1, 1] = a[..., 1, 0] * b[..., 0, 1] + a[..., 1, 1] * b[..., 1, 1]
    return out


def inv_unimodular(m):
    """Inverse of a determinant-one matrix (the adjugate)."""
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out


def _cosh_sqrt(x):
    # cosh(sqrt(x)) continued analytically to x < 0, x complex
    x = np.asarray(x)
    small = np.abs(x) < 1e-6
    r = np.sqrt(x.astype(complex))
    big = np.cosh(r)
    ser = 1 + x / 2 + x * x / 24 + x ** 3 / 720
    return np.where(small, ser, big)


def _sinhc_sqrt(x):
    # sinh(sqrt(x)) / sqrt(x), entire in x
    x = np.asarray(x)
    small = np.abs(x) < 1e-6
    r = np.sqrt(x.astype(complex))
    with np.errstate(invalid="ignore", divide="ignore"):
        big = np.sinh(r) / np.where(small, 1.0, r)
    ser = 1 + x / 6 + x * x / 120 + x ** 3 / 5040
    return np.where(small, ser, big)


def expm_sl2(m):
    """exp of a traceless 2x2 matrix via M^2 = -det(M) I.

    Works for real or complex input; real input gives real output.
    """
    m = np.asarray(m)
    d = -det2(m)
    c = _cosh_sqrt(d)
    s = _sinhc_sqrt(d)
    out = s[..., None, None] * m
    out[..., 0, 0] += c
    out[..., 1, 1] += c
    if not np.iscomplexobj(m):
        return out.real.copy()
    return out


def traceless(m):
    t = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    out = m.copy()
    out[..., 0, 0] -= t
    out[..., 1, 1] -= t
    return out


def maxabs(m):
    """Matrix size used throughout: largest entry magnitude."""
    return np.max(np.abs(m), axis=(-2, -1))


def rotation(angle):
    """exp(angle * J): counterclockwise rotation."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def dexp_left(X, W):
    """exp(-X) d/dt exp(X) for traceless X with derivative W (pointwise).

    Uses ad_X^2 = 4*delta on the complement of X (delta = -det X):
    exp(-X) d exp(X) = a W - b [X, W] + c tr(XW) X.
    """
    X = np.asarray(X)
    W = np.asarray(W)
    y = (-4.0 * det2(X)).astype(complex)
    small = np.abs(y) < 1e-4
    r = np.sqrt(y)
    safe_r = np.where(small, 1.0, r)
    safe_y = np.where(small, 1.0, y)
    with np.errstate(invalid="ignore", over="ignore"):
        a_big = np.sinh(r) / safe_r
        b_big = (np.cosh(r) - 1.0) / safe_y
    a = np.where(small, 1 + y / 6 + y * y / 120 + y ** 3 / 5040, a_big)
    b = np.where(small, 0.5 + y / 24 + y * y / 720 + y ** 3 / 40320, b_big)
    # c = 2 (1 - a) / y
    c = np.where(small, -(1 / 3 + y / 60 + y * y / 2520 + y ** 3 / 181440),
                 2.0 * (1.0 - a_big) / safe_y)
    comm = mul2(X, W) - mul2(W, X)
    tr = np.einsum("...ij,...ji->...", X, W)
    out = (a[..., None, None] * W - b[..., None, None] * comm
           + (c * tr)[..., None, None] * X)
    if not (np.iscomplexobj(X) or np.iscomplexobj(W)):
        return out.real.copy()
    return out
