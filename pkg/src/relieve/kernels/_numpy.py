"""Pure-numpy implementations of the hot inner loops.

Reference semantics for the numba twins in ``_numba.py``; selected at
import time via the RELIEVE_BACKEND environment flag (see __init__).
"""

from __future__ import annotations

import numpy as np


def bilinear_gather(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample a (H, W) map at continuous pixel positions (x=col, y=row)."""
    h, w = values.shape
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2)
    tx = xs - x0
    ty = ys - y0
    v00 = values[y0, x0]
    v01 = values[y0, x0 + 1]
    v10 = values[y0 + 1, x0]
    v11 = values[y0 + 1, x0 + 1]
    return (
        v00 * (1.0 - tx) * (1.0 - ty)
        + v01 * tx * (1.0 - ty)
        + v10 * (1.0 - tx) * ty
        + v11 * tx * ty
    )


def bilinear_scatter(out: np.ndarray, xs: np.ndarray, ys: np.ndarray, g: np.ndarray) -> None:
    """Adjoint of bilinear_gather: add ``g`` into the 4 corner pixels."""
    h, w = out.shape
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2)
    tx = xs - x0
    ty = ys - y0
    flat = out.reshape(-1)
    n = flat.size
    base = y0 * w + x0
    flat += np.bincount(base, weights=g * (1.0 - tx) * (1.0 - ty), minlength=n)
    flat += np.bincount(base + 1, weights=g * tx * (1.0 - ty), minlength=n)
    flat += np.bincount(base + w, weights=g * (1.0 - tx) * ty, minlength=n)
    flat += np.bincount(base + w + 1, weights=g * tx * ty, minlength=n)


def upsample_apply(grid_flat, i00, i01, i10, i11, w00, w01, w10, w11) -> np.ndarray:
    """Bilinear upsampling of a coarse grid using precomputed corner tables."""
    return (
        grid_flat[i00] * w00
        + grid_flat[i01] * w01
        + grid_flat[i10] * w10
        + grid_flat[i11] * w11
    )


def upsample_adjoint(g, i00, i01, i10, i11, w00, w01, w10, w11, out) -> None:
    """Scatter per-pixel gradients back onto the coarse grid (in place)."""
    n = out.size
    out += np.bincount(i00, weights=g * w00, minlength=n)
    out += np.bincount(i01, weights=g * w01, minlength=n)
    out += np.bincount(i10, weights=g * w10, minlength=n)
    out += np.bincount(i11, weights=g * w11, minlength=n)


def reg_terms(ra, rb, da, db, Ra, ta, Rb, tb, eps):
    """Angle terms and gradients for one ordered view pair (a = anchor).

    ``ra``/``rb`` are (K, 3) camera-frame rays with z = 1, ``da``/``db``
    the depths read at the matched pixels. For each match the angle at the
    anchor center between the two world rays is

        theta = atan2(||u x v||, u . v),
        u = Ra (da * ra),  v = Rb (db * rb) + tb - ta.

    Returns (thetas, g_da, g_db, G_Ra, G_Rb, g_ta, g_tb) where G_R* are
    d(sum theta)/dR accumulated as 3x3 matrices.
    """
    xa = da[:, None] * ra
    xb = db[:, None] * rb
    u = xa @ Ra.T
    v = xb @ Rb.T + (tb - ta)

    c = np.cross(u, v)
    n = np.sqrt(np.sum(c * c, axis=1))
    d = np.sum(u * v, axis=1)
    thetas = np.arctan2(n, d)

    s2 = n * n + d * d
    chat = c / np.maximum(n, eps)[:, None]
    gu = (d[:, None] * np.cross(v, chat) - n[:, None] * v) / s2[:, None]
    gv = (d[:, None] * np.cross(chat, u) - n[:, None] * u) / s2[:, None]

    G_Ra = gu.T @ xa
    G_Rb = gv.T @ xb
    g_ta = -np.sum(gv, axis=0)
    g_tb = np.sum(gv, axis=0)
    g_da = np.sum((gu @ Ra) * ra, axis=1)
    g_db = np.sum((gv @ Rb) * rb, axis=1)
    return thetas, g_da, g_db, G_Ra, G_Rb, g_ta, g_tb


def depth_loss_terms(pred, pseudo, conf, m1, s1, m2, s2, alpha, eps):
    """Per-pixel depth shape loss with frozen normalization statistics.

    Returns (loss_sum, g_pred, g_conf) over the flattened maps; the caller
    divides by the pixel count. ``conf`` is the derived confidence W, and
    gradients w.r.t. pred flow through the normalized numerator only.
    """
    r = (pred - m1) / s1 - (pseudo - m2) / s2
    root = np.sqrt(r * r + eps * eps)
    e = root - eps
    loss_sum = float(np.sum(conf * e - alpha * np.log(conf)))
    g_pred = conf * (r / root) / s1
    g_conf = e - alpha / conf
    return loss_sum, g_pred, g_conf
