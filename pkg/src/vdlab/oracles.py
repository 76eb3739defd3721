"""Brute-force reference implementations for small instances.

These deliberately take a different route from the production solvers:
dense matrices probed column by column, scipy's HiGHS simplex for the
anisotropic dual norm, L-BFGS-B on the box-constrained concave dual for
quadratic-plus-anisotropic-TV energies, and a plain projected
subgradient descent.  They are only meant for grids small enough that
dense algebra is trivially affordable.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize, sparse


def dense_operator(apply_fn, n_in, n_out=None):
    """Materialize a linear operator by probing unit vectors."""
    e = np.zeros(n_in)
    cols = []
    for j in range(n_in):
        e[:] = 0.0
        e[j] = 1.0
        cols.append(np.asarray(apply_fn(e)).ravel())
    A = np.column_stack(cols)
    if n_out is not None and A.shape[0] != n_out:
        raise ValueError("operator output size mismatch")
    return A


def lp_dual_norm(source, pairing):
    """Anisotropic dual norm by linear programming (HiGHS).

    Solves min t subject to K^T lambda = g on masked edges and
    |lambda_{c,a}| <= t * kappa_c on live cells, the exact LP form of
    the minimax definition used by dual_norm_support in anisotropic
    mode.
    """
    g = pairing.emask * np.asarray(source, dtype=float).ravel()
    nlam = 3 * int(np.prod(pairing.grid.resolution))
    M = dense_operator(
        lambda lam: pairing.curl_t(lam.reshape((3,) + tuple(pairing.grid.resolution))),
        nlam,
    )
    rows = np.abs(M).sum(axis=1) > 0
    rows |= g != 0.0
    A_eq = M[rows]
    b_eq = g[rows]
    kappa = np.repeat(pairing.kappa.ravel()[None, :], 3, axis=0).ravel()
    live = kappa > 0
    n = nlam + 1
    c = np.zeros(n)
    c[-1] = 1.0
    # |lam_j| <= t * kappa_j  ->  lam_j - kappa_j t <= 0, -lam_j - kappa_j t <= 0
    idx = np.nonzero(live)[0]
    data, ri, ci = [], [], []
    for k, j in enumerate(idx):
        ri += [2 * k, 2 * k, 2 * k + 1, 2 * k + 1]
        ci += [j, nlam, j, nlam]
        data += [1.0, -kappa[j], -1.0, -kappa[j]]
    A_ub = sparse.csc_matrix((data, (ri, ci)), shape=(2 * idx.size, n))
    b_ub = np.zeros(2 * idx.size)
    bounds = [(0.0, 0.0)] * nlam + [(0.0, None)]
    for j in idx:
        bounds[j] = (None, None)
    A_eq_full = sparse.hstack([sparse.csc_matrix(A_eq), sparse.csc_matrix((A_eq.shape[0], 1))])
    res = optimize.linprog(
        c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq_full, b_eq=b_eq, bounds=bounds,
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    return float(res.fun)


def boxdual_quadratic_tv(Q, b, c0, K, radii, maxiter=4000, tol=1e-12):
    """Optimal value of min_x 1/2 x^T Q x - b^T x + c0 + sum_j r_j |(Kx)_j|.

    Works through the concave dual D(p) = c0 - 1/2 ||b - K^T p||^2 in
    the Q pseudo-metric, maximized over the box |p_j| <= r_j with
    L-BFGS-B.  Q may be singular as long as b - K^T p stays in its
    range (true for the gauge-degenerate problems here).  Returns
    (value, p_star).
    """
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    radii = np.asarray(radii, dtype=float).ravel()

    def negD_and_grad(p):
        r = b - K.T @ p
        x, *_ = np.linalg.lstsq(Q, r, rcond=None)
        val = 0.5 * float(r @ x) - c0
        grad = -K @ x
        return val, grad

    p0 = np.zeros(K.shape[0])
    res = optimize.minimize(
        negD_and_grad, p0, jac=True, method="L-BFGS-B",
        bounds=[(-r, r) for r in radii],
        options={"maxiter": maxiter, "ftol": tol, "gtol": 1e-12},
    )
    return -float(res.fun), res.x


def projected_subgradient_tv(Q, b, c0, K, radii, n_iter=200000, step0=None,
                             seed=0):
    """Plain subgradient descent on the same energy; best value tracked.

    Slow (1/sqrt(k)); used as an order-of-magnitude sanity check next
    to the sharper box-dual oracle.
    """
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    radii = np.asarray(radii, dtype=float).ravel()

    def energy(x):
        y = K @ x
        return 0.5 * float(x @ (Q @ x)) - float(b @ x) + c0 + float(radii @ np.abs(y))

    x = np.zeros(Q.shape[0])
    best = energy(x)
    if step0 is None:
        step0 = 1.0 / max(1.0, np.linalg.norm(Q, 2))
    for k in range(1, n_iter + 1):
        y = K @ x
        sub = Q @ x - b + K.T @ (radii * np.sign(y))
        ns = np.linalg.norm(sub)
        if ns == 0:
            break
        x = x - (step0 / np.sqrt(k)) * sub / ns
        e = energy(x)
        if e < best:
            best = e
    return best
