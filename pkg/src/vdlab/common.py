"""Shared solver plumbing: errors, conjugate gradients, probe generators."""

from __future__ import annotations

import numpy as np


class SolverError(RuntimeError):
    """Raised when an iterative solve fails to reach its tolerance.

    Carries the best residual (and optional bracket) so callers can
    report partial certificates.
    """

    def __init__(self, message, residual=None, bracket=None):
        super().__init__(message)
        self.residual = residual
        self.bracket = bracket


def cg(apply_A, b, tol=1e-10, atol=0.0, max_iter=None, x0=None, name="cg",
       accept=1e-7):
    """Conjugate gradients on a symmetric positive (semi)definite operator.

    Matrix-free; ``apply_A`` maps flat arrays to flat arrays.  Stops
    when ||r|| <= max(tol * ||b||, atol); callers working with
    normal equations pass ``atol`` scaled by the input so that inputs
    already in the kernel (b at roundoff level) count as solved.

    Consistent semidefinite systems are supported: a search direction
    that falls into the numerical kernel (pAp tiny against the operator
    scale) ends the iteration at the best iterate seen, since the
    leftover residual is the roundoff-level kernel component of b.
    Raises SolverError only if the best residual misses both the target
    and the looser ``accept`` fraction of ||b||.
    """
    b = np.asarray(b, dtype=float).ravel()
    bnorm = float(np.linalg.norm(b))
    target = max(tol * bnorm, atol)
    if bnorm <= target:
        return np.zeros_like(b), 0, bnorm
    if max_iter is None:
        max_iter = max(500, 40 * int(np.sqrt(b.size)))
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    r = b - apply_A(x) if x.any() else b.copy()
    p = r.copy()
    rs = float(r @ r)
    res = np.sqrt(rs)
    best_x, best_res = x.copy(), res
    opscale = 0.0
    it = 0
    while res > target and it < max_iter:
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        pp = float(p @ p)
        if pAp > 0 and pp > 0:
            opscale = max(opscale, pAp / pp)
        if pAp <= 1e-13 * opscale * pp:
            break  # direction numerically in the kernel
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p *= rs_new / rs
        p += r
        rs = rs_new
        res = np.sqrt(rs)
        it += 1
        if res < best_res:
            best_res = res
            best_x = x.copy()
    if best_res > max(target, accept * bnorm):
        raise SolverError(
            f"{name}: CG stalled at residual {best_res:.3e} "
            f"after {it} iterations (target {target:.3e})",
            residual=best_res / bnorm,
        )
    return best_x, it, best_res / bnorm


def random_like(rng, template):
    return rng.standard_normal(np.asarray(template).size)
