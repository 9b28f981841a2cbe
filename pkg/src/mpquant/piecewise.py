"""Integration over one conditioned Gaussian noise with kink-aware panels.

When the Euler increment is driven by two noises, the probability that the
next state lands in a product cell, given the second noise ``zeta``, is

    G(zeta) = max(min_l Phi(hi_l(zeta)) - max_l Phi(lo_l(zeta)), 0)

where lo_l and hi_l are affine in zeta (or a cell indicator when component
l does not load on the first noise). G is smooth except where two of those
lines cross or an indicator switches, so a fixed Gauss-Hermite rule converges
slowly. Here every (source, cell) pair gets its own panel partition of
[-cutoff, cutoff] that includes those kinks, with Gauss-Legendre nodes on
each panel, which makes the integral accurate to near rounding. Steep lines
(loading on zeta much larger than on the integrated noise) get extra
breakpoints across their ramps.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .gaussian import normal_cdf, normal_pdf

_CHUNK_ELEMENTS = 3_000_000
_THREADS = 1
# a line steeper than this turns Phi into a narrow ramp in zeta; extra
# breakpoints at these offsets (in ramp widths) around its centre resolve it
STEEP_SLOPE = 2.5
_RAMP_OFFSETS = (0.0, -1.0, 1.0, -2.5, 2.5, -5.0, 5.0)


def set_threads(n: int) -> int:
    """Worker threads for :func:`cell_integrals`; 0 means one per CPU.

    Chunks write disjoint rows of the output, so results do not depend on
    the thread count.
    """
    global _THREADS
    _THREADS = max(1, int(n) if n else (os.cpu_count() or 1))
    return _THREADS


@dataclass(frozen=True)
class PiecewiseRule:
    """Panel layout: ``panels`` equal base panels on [-cutoff, cutoff], ``order`` nodes each."""

    panels: int = 6
    order: int = 12
    cutoff: float = 8.5
    label: str = "piecewise"

    def __post_init__(self):
        if self.panels < 1 or self.order < 1 or not self.cutoff > 0:
            raise ValueError("panels and order must be >= 1 and cutoff positive")


def _breakpoints(lo_int, hi_int, slope, live, ind_lo, ind_hi, cutoff):
    """All kink locations of G for one chunk, shape (M, J, B), clipped to the cutoff.

    For live components line = intercept - slope * zeta; for the others the
    indicator switches at ``ind_lo`` and ``ind_hi``.
    """
    d = len(lo_int)
    pts = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for l in range(d):
            for m in range(l + 1, d):
                ds = (slope[l] - slope[m])[:, None]
                for a in (lo_int[l], hi_int[l]):
                    for b in (lo_int[m], hi_int[m]):
                        z = (a - b) / ds
                        pts.append(np.where(live[l][:, None] & live[m][:, None], z, np.nan))
            pts.append(np.where(live[l][:, None], np.nan, ind_lo[l]))
            pts.append(np.where(live[l][:, None], np.nan, ind_hi[l]))
    if any(np.any(live[l] & (np.abs(slope[l]) > STEEP_SLOPE)) for l in range(d)):
        for l in range(d):
            steep = (live[l] & (np.abs(slope[l]) > STEEP_SLOPE))[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                width = 1.0 / np.abs(slope[l])[:, None]
                for icpt in (lo_int[l], hi_int[l]):
                    centre = icpt / slope[l][:, None]
                    for off in _RAMP_OFFSETS:
                        pts.append(np.where(steep, centre + off * width, np.nan))
    out = np.stack(pts, axis=-1)
    out = np.where(np.isfinite(out), out, cutoff)
    return np.clip(out, -cutoff, cutoff)


def cell_integrals(target, means, zeta_load, lead, zero, rule: PiecewiseRule | None = None,
                   moment: bool = False) -> np.ndarray:
    """Integrals of G(zeta) (and zeta * G(zeta)) against N(0, 1) for every cell.

    ``means``, ``zeta_load`` and ``lead`` have shape (M, d): Euler mean, scaled
    loading on the conditioned noise zeta and on the integrated noise Y.
    ``zero`` marks components with no Y loading. Returns (M, |target|, 1 or 2).
    """
    rule = rule or PiecewiseRule()
    means = np.asarray(means, dtype=float)
    m_count, d = means.shape
    shape = target.shape
    multi = np.unravel_index(np.arange(target.size), shape)
    lower_b = [target.marginals[l].boundaries[multi[l]] for l in range(d)]
    upper_b = [target.marginals[l].boundaries[multi[l] + 1] for l in range(d)]
    xg, wg = leggauss(rule.order)
    base = np.linspace(-rule.cutoff, rule.cutoff, rule.panels + 1)
    n_out = 2 if moment else 1
    out = np.empty((m_count, target.size, n_out))
    n_breaks = 2 * d * (d - 1) + 2 * d
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(zero, 0.0, np.abs(np.asarray(zeta_load) / np.asarray(lead)))
    if np.any(ratio > STEEP_SLOPE):
        n_breaks += 2 * len(_RAMP_OFFSETS) * d
    per_row = target.size * (rule.panels + n_breaks) * rule.order

    step = max(1, _CHUNK_ELEMENTS // max(per_row, 1))

    def run(start):
        sl = slice(start, min(m_count, start + step))
        mc = sl.stop - sl.start
        lo_int, hi_int, slope, live, ind_lo, ind_hi = [], [], [], [], [], []
        for l in range(d):
            a = lead[sl, l]
            c = zeta_load[sl, l]
            mu = means[sl, l]
            lv = ~zero[sl, l]
            safe_a = np.where(lv, a, 1.0)
            tl = (lower_b[l][None, :] - mu[:, None]) / safe_a[:, None]
            tu = (upper_b[l][None, :] - mu[:, None]) / safe_a[:, None]
            neg = (safe_a < 0)[:, None]
            lo_int.append(np.where(neg, tu, tl))
            hi_int.append(np.where(neg, tl, tu))
            slope.append(np.where(lv, c / safe_a, 0.0))
            live.append(lv)
            with np.errstate(divide="ignore", invalid="ignore"):
                safe_c = np.where(c != 0.0, c, np.nan)[:, None]
                ind_lo.append((lower_b[l][None, :] - mu[:, None]) / safe_c)
                ind_hi.append((upper_b[l][None, :] - mu[:, None]) / safe_c)
        brk = _breakpoints(lo_int, hi_int, slope, live, ind_lo, ind_hi, rule.cutoff)
        edges = np.concatenate([np.broadcast_to(base, (mc, target.size, base.size)), brk], axis=-1)
        edges.sort(axis=-1)
        left, right = edges[..., :-1], edges[..., 1:]
        half = 0.5 * (right - left)
        mid = 0.5 * (right + left)
        zeta = (mid[..., None] + half[..., None] * xg).reshape(mc, target.size, -1)
        wts = ((half[..., None] * wg).reshape(mc, target.size, -1)) * normal_pdf(zeta)

        upper = None
        lower = None
        for l in range(d):
            lv = live[l][:, None, None]
            s = slope[l][:, None, None]
            with np.errstate(invalid="ignore"):
                f_lo = normal_cdf(lo_int[l][:, :, None] - s * zeta)
                f_hi = normal_cdf(hi_int[l][:, :, None] - s * zeta)
            if not np.all(live[l]):
                pos = means[sl, l][:, None, None] + zeta_load[sl, l][:, None, None] * zeta
                inside = (lower_b[l][None, :, None] < pos) & (pos <= upper_b[l][None, :, None])
                f_lo = np.where(lv, f_lo, np.where(inside, 0.0, 1.0))
                f_hi = np.where(lv, f_hi, np.where(inside, 1.0, 0.0))
            lower = f_lo if lower is None else np.maximum(lower, f_lo)
            upper = f_hi if upper is None else np.minimum(upper, f_hi)
        g = np.maximum(upper - lower, 0.0) * wts
        out[sl, :, 0] = g.sum(axis=-1)
        if moment:
            out[sl, :, 1] = (g * zeta).sum(axis=-1)

    starts = range(0, m_count, step)
    if _THREADS > 1 and len(starts) > 1:
        with ThreadPoolExecutor(_THREADS) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)
    return out
