"""Real roots of cubics on a closed interval.

The cubic is rescaled to ``u = s / dt`` on ``[0, 1]`` and normalised by its
largest coefficient. The critical points (roots of the derivative quadratic)
split ``[0, 1]`` into monotone pieces; each piece with a sign change holds one
root, refined by a fixed number of safeguarded Newton steps.
"""
from __future__ import annotations

import numpy as np

ROOT_TOL = 1e-10
DEGENERACY_TOL = 1e-12
NEWTON_ITERS = 32


class _AlwaysCoplanar:
    def __repr__(self):
        return "ALWAYS_COPLANAR"


ALWAYS_COPLANAR = _AlwaysCoplanar()


def horner(coeffs, s):
    """Evaluate ``c3 s^3 + c2 s^2 + c1 s + c0``; ``coeffs`` rows are (c3, c2, c1, c0)."""
    c = np.asarray(coeffs)
    return ((c[..., 0] * s + c[..., 1]) * s + c[..., 2]) * s + c[..., 3]


def horner_deriv(coeffs, s):
    c = np.asarray(coeffs)
    return (3.0 * c[..., 0] * s + 2.0 * c[..., 1]) * s + c[..., 2]


def _critical_points(c: np.ndarray, degeneracy_tol: float) -> np.ndarray:
    """Roots of ``3 c3 u^2 + 2 c2 u + c1`` as an (n, 2) array, NaN where absent."""
    n = len(c)
    out = np.full((n, 2), np.nan)
    A = 3.0 * c[:, 0]
    B = 2.0 * c[:, 1]
    C = c[:, 2]
    quad = np.abs(c[:, 0]) >= degeneracy_tol
    lin = ~quad & (np.abs(c[:, 1]) >= degeneracy_tol)

    disc = B * B - 4.0 * A * C
    ok = quad & (disc >= 0.0)
    if ok.any():
        sq = np.sqrt(disc[ok])
        Bq = B[ok]
        # stable form avoids cancellation in -B + sqrt(disc)
        q = -0.5 * (Bq + np.where(Bq >= 0.0, sq, -sq))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = q / A[ok]
            r2 = np.where(q != 0.0, C[ok] / q, r1)
        out[ok, 0] = r1
        out[ok, 1] = r2
    if lin.any():
        out[lin, 0] = -C[lin] / B[lin]
    return out


def _refine(c, a, b, fa, iters):
    """Safeguarded Newton on brackets ``[a, b]`` with a sign change, fixed iteration count."""
    x = 0.5 * (a + b)
    lo = a.copy()
    hi = b.copy()
    sign_lo = np.sign(fa)
    for _ in range(iters):
        f = horner(c, x)
        df = horner_deriv(c, x)
        move_lo = np.sign(f) == sign_lo
        lo = np.where(move_lo, x, lo)
        hi = np.where(move_lo, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - f / df
        # closed bounds: a step that no longer moves x means convergence, not a reason to bisect
        inside = np.isfinite(xn) & (xn >= lo) & (xn <= hi)
        x = np.where(f == 0.0, x, np.where(inside, xn, 0.5 * (lo + hi)))
    return x


def batch_cubic_roots(coeffs, dt: float, root_tol: float = ROOT_TOL,
                      degeneracy_tol: float = DEGENERACY_TOL, scale_ref=None,
                      newton_iters: int = NEWTON_ITERS):
    """Roots in ``[0, dt]`` of many cubics at once.

    Parameters
    ----------
    coeffs : (n, 4) array of (c3, c2, c1, c0) in the time variable ``s``.
    scale_ref : optional (n,) magnitudes; a cubic whose rescaled coefficients
        are all below ``degeneracy_tol * scale_ref`` is flagged as always
        coplanar. Without it only the exactly-zero polynomial is.

    Returns
    -------
    idx : (m,) cubic index of each root
    roots : (m,) root times in ``[0, dt]``, sorted within each cubic
    always : (n,) bool mask of identically-zero cubics
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1, 4)
    n = len(c)
    powers = np.array([dt**3, dt**2, dt, 1.0])
    cs = c * powers
    mag = np.abs(cs).max(axis=1) if n else np.zeros(0)
    if scale_ref is None:
        always = mag == 0.0
    else:
        always = mag <= degeneracy_tol * np.asarray(scale_ref, dtype=np.float64)
    live = np.flatnonzero(~always)
    if len(live) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0), always

    cn = cs[live] / mag[live, None]
    crit = _critical_points(cn, degeneracy_tol)
    crit = np.where((crit > 0.0) & (crit < 1.0), crit, np.nan)
    bp = np.concatenate([np.zeros((len(live), 1)), crit, np.ones((len(live), 1))], axis=1)
    # NaN sorts last; replace with 1.0 to form zero-length pieces
    bp = np.sort(bp, axis=1)
    bp = np.where(np.isnan(bp), 1.0, bp)
    fb = horner(cn[:, None, :], bp)
    zero = np.abs(fb) <= root_tol

    # breakpoints that are roots
    zi, zj = np.nonzero(zero)
    r_idx = [zi]
    r_val = [bp[zi, zj]]

    a = bp[:, :-1]
    b = bp[:, 1:]
    fa = fb[:, :-1]
    fbb = fb[:, 1:]
    brk = (~zero[:, :-1]) & (~zero[:, 1:]) & (np.sign(fa) * np.sign(fbb) < 0) & (b > a)
    bi, bj = np.nonzero(brk)
    if len(bi):
        x = _refine(cn[bi], a[bi, bj], b[bi, bj], fa[bi, bj], newton_iters)
        r_idx.append(bi)
        r_val.append(x)

    ri = np.concatenate(r_idx)
    rv = np.concatenate(r_val)
    order = np.lexsort((rv, ri))
    ri, rv = ri[order], rv[order]
    # duplicated breakpoints produce repeated roots
    keep = np.ones(len(ri), dtype=bool)
    if len(ri) > 1:
        keep[1:] = ~((ri[1:] == ri[:-1]) & (np.abs(rv[1:] - rv[:-1]) <= 1e-14))
    ri, rv = ri[keep], rv[keep]
    return live[ri], np.clip(rv, 0.0, 1.0) * dt, always


def cubic_roots_in_interval(coeffs, dt: float, root_tol: float = ROOT_TOL,
                            degeneracy_tol: float = DEGENERACY_TOL, scale_ref=None,
                            newton_iters: int = NEWTON_ITERS):
    """Sorted real roots of one cubic in ``[0, dt]``.

    Returns :data:`ALWAYS_COPLANAR` for the identically-zero polynomial.

    >>> cubic_roots_in_interval((1.0, 0.0, -1.0, 0.0), 1.0)
    [0.0, 1.0]
    """
    idx, roots, always = batch_cubic_roots(
        np.asarray(coeffs, dtype=np.float64).reshape(1, 4), dt, root_tol, degeneracy_tol,
        None if scale_ref is None else np.atleast_1d(scale_ref), newton_iters,
    )
    if always[0]:
        return ALWAYS_COPLANAR
    return [float(r) for r in roots]


def residual_scale(coeffs, dt: float) -> np.ndarray:
    """``max|c_i| * max(1, dt)^3``, the magnitude root residuals are measured against."""
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1, 4)
    return np.abs(c).max(axis=1) * max(1.0, dt) ** 3
