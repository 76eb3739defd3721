"""Trapped-condensate drivers: Thomas-Fermi profile, weighted vortex
energy minimization, dual obstacle certification, critical rotation.

The primal solve minimizes, over 1-forms v on the trap region,

    E(v) = 1/2 ||v - Phi||_rho^2 + 1/2 * TV_rho(dv),

which matches the physical energy rho(|v|^2/2 - v.Phi + |dv|/2) up to
the constant rho|Phi|^2/2 (reported separately).  Certificates check,
at solver tolerance: the duality gap, the multiplicative stationarity
identity (scaling v by e^t), the saturation identity pairing the
vorticity against the recovered dual potential, and the dual-ball
feasibility/activity of the total-variation certificate.

The critical-rotation predicate evaluates the nonlocal dual norm of the
forcing potential through its vorticity source; by linearity of the
decomposition in Phi the threshold of a linear family c * Phi is
1 / (2 * norm at c = 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from vdlab.common import SolverError, cg
from vdlab.grids import (
    FormField,
    cell_curl_values,
    GridSpec,
    MaskedDomain,
    cell_curl,
    cell_curl_transpose,
    cell_group_magnitude,
    exterior_derivative,
    grouped_tv,
    inner_product,
)
from vdlab.hodge import rho_on_edges, weighted_decompose
from vdlab.tvopt import (
    DualBlock,
    SaddleProblem,
    VorticityPairing,
    dual_norm_support,
    pdhg_solve,
    project_grouped_linf,
)

CLAMP_RATIO = 1e-8


# ---------------------------------------------------------------------------
# Thomas-Fermi profile
# ---------------------------------------------------------------------------


@dataclass
class TrapProfile:
    """Ground-state density of a trapped condensate.

    rho = (lam - a)^+ with the chemical potential lam fixed by the
    total mass; w = (lam - a)^- is the complementary outside barrier.
    """

    grid: GridSpec
    a: np.ndarray
    m: float
    lam: float
    rho: np.ndarray
    w: np.ndarray
    omega_mask: MaskedDomain | None
    coercive: bool = True

    def mass_error(self):
        return abs(float(self.rho.sum()) * self.grid.cell_volume - self.m)


def thomas_fermi(a, m, grid, mass_map=None, tol=1e-10, allow_noncoercive=False,
                 gradient_floor=1e-6):
    """Chemical potential and density by monotone bisection on the mass.

    ``a`` holds trap samples at cell centers.  By default the mass map
    is the cell sum of (lam - a)^+; passing ``mass_map`` (an analytic
    lam -> mass callable, e.g. exact radial quadrature) makes the
    returned lam quadrature-free while rho stays cell-sampled.
    Requires the trap to exceed lam on the box skin unless the
    noncoercive flat-trap mode is explicitly allowed.
    """
    a = np.asarray(a, dtype=float)
    if m <= 0:
        raise ValueError("mass must be positive")
    vol = grid.cell_volume
    if mass_map is None:
        def mass_map(lam):
            return float(np.maximum(lam - a, 0.0).sum()) * vol

    skin = np.ones(a.shape, dtype=bool)
    skin[1:-1, 1:-1, 1:-1] = False
    a_skin_min = float(a[skin].min())

    lo = float(a.min())
    hi = lo + max(1.0, abs(lo))
    while mass_map(hi) < m:
        hi = lo + 2.0 * (hi - lo)
        if hi > 1e12:
            raise SolverError("mass bisection bracket blew up")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass_map(mid) < m:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(abs(hi), 1.0):
            break
        if abs(mass_map(0.5 * (lo + hi)) - m) <= tol * m:
            break
    lam = 0.5 * (lo + hi)

    coercive = lam < a_skin_min
    if not coercive and not allow_noncoercive:
        raise SolverError(
            f"box too small: chemical potential {lam:.6g} reaches the "
            f"box skin (min trap value there {a_skin_min:.6g})"
        )
    rho = np.maximum(lam - a, 0.0)
    w = np.maximum(a - lam, 0.0)
    omega = MaskedDomain(grid, rho > 0) if coercive else None
    if coercive:
        # regularity proxy: the trap should climb through the boundary
        edge = omega.boundary_faces
        grad2 = _gradient_sq(a, grid)
        ring = _boundary_ring(omega)
        floor = float(np.min(grad2[ring] + rho[ring])) if ring.any() else np.inf
        if floor < gradient_floor:
            warnings.warn(
                f"trap level may not be a regular value: min(|grad a|^2 + rho) "
                f"= {floor:.3e} on the boundary ring",
                stacklevel=2,
            )
    return TrapProfile(grid=grid, a=a, m=float(m), lam=float(lam), rho=rho,
                       w=w, omega_mask=omega, coercive=coercive)


def _gradient_sq(a, grid):
    g2 = np.zeros_like(a)
    for ax in range(3):
        d = np.diff(a, axis=ax) / grid.spacing[ax]
        pad_lo = [slice(None)] * 3
        pad_hi = [slice(None)] * 3
        pad_lo[ax] = slice(0, -1)
        pad_hi[ax] = slice(1, None)
        comp = np.zeros_like(a)
        comp[tuple(pad_lo)] += 0.5 * d
        comp[tuple(pad_hi)] += 0.5 * d
        g2 += comp**2
    return g2


def _boundary_ring(domain):
    cm = domain.cell_mask
    inner = np.zeros_like(cm)
    inner[1:-1, 1:-1, 1:-1] = (
        cm[1:-1, 1:-1, 1:-1]
        & cm[:-2, 1:-1, 1:-1] & cm[2:, 1:-1, 1:-1]
        & cm[1:-1, :-2, 1:-1] & cm[1:-1, 2:, 1:-1]
        & cm[1:-1, 1:-1, :-2] & cm[1:-1, 1:-1, 2:]
    )
    return cm & ~inner


def radial_mass_map(a_radial, box_radius=None):
    """Exact mass map for a radial trap a(r): quadrature of the shell integral."""
    from scipy import integrate

    def mass(lam):
        def integrand(r):
            return 4.0 * np.pi * r * r * max(lam - a_radial(r), 0.0)

        upper = box_radius
        if upper is None:
            # find the support radius by bisection on a(r) = lam
            r_hi = 1.0
            while a_radial(r_hi) < lam and r_hi < 1e6:
                r_hi *= 2.0
            lo, hi = 0.0, r_hi
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if a_radial(mid) < lam:
                    lo = mid
                else:
                    hi = mid
            upper = 0.5 * (lo + hi)
        val, _ = integrate.quad(integrand, 0.0, upper, limit=400)
        return float(val)

    return mass


# ---------------------------------------------------------------------------
# the vorticity-source decomposition used by norms and initializations
# ---------------------------------------------------------------------------


@dataclass
class SourceSplit:
    """Averaged-curl decomposition of an edge field against (ker curl).

    closed_values is the part invisible to the grouped TV; source is
    the plain-pairing functional of the complement (g with <g, w> equal
    to the rho-weighted pairing of the complement against w), and mu is
    the cell potential generating it.
    """

    closed_values: np.ndarray
    source: np.ndarray
    mu: np.ndarray
    w_rho: np.ndarray


def decompose_source(phi_values, domain, rho=None, tol=1e-10):
    """Split an edge field along the averaged-curl kernel, rho-weighted."""
    grid = domain.grid
    emask = np.concatenate([m.ravel() for m in domain.edge_mask_any]).astype(float)
    vol = grid.cell_volume
    if rho is None:
        w = vol * emask
    else:
        w = vol * rho_on_edges(domain, rho, clamp=CLAMP_RATIO * float(np.max(rho)))
    phim = emask * np.asarray(phi_values, dtype=float)

    cmask = domain.cell_mask

    def kt(mu):
        mu = np.where(cmask, mu, 0.0)
        return emask * cell_curl_transpose(mu, grid).values

    def k(u):
        y = cell_curl_values(emask * u, grid)
        y[:, ~cmask] = 0.0
        return y

    def apply_A(mu_flat):
        mu = mu_flat.reshape((3,) + tuple(grid.resolution))
        u = kt(mu)
        return k(np.divide(u, w, out=np.zeros_like(u), where=w > 0)).ravel()

    b = k(phim).ravel()
    atol = tol * (4.0 / min(grid.spacing)) * float(np.linalg.norm(phim))
    mu_flat, _, _ = cg(apply_A, b, tol=tol, atol=atol, name="decompose_source")
    mu = np.where(cmask, mu_flat.reshape((3,) + tuple(grid.resolution)), 0.0)
    g = kt(mu)
    perp = np.divide(g, w, out=np.zeros_like(g), where=w > 0)
    return SourceSplit(closed_values=phim - perp, source=g, mu=mu, w_rho=w)


# ---------------------------------------------------------------------------
# the primal solve
# ---------------------------------------------------------------------------


@dataclass
class GPCertificate:
    energy: float  # physical energy (includes the -rho|Phi|^2/2 shift)
    solver_energy: float  # shifted nonnegative objective used by the gap
    gap: float
    gap_tol: float
    vorticity_mass: float
    stationarity_residual: float  # e^t-scaling identity
    saturation_residual: float  # potential-vorticity pairing identity
    closed_match_residual: float  # || P_rho v0 - P_rho Phi ||_rho
    ball_feasibility: float  # max_c 2|p_c| / rho_hat_c (<= 1)
    ball_activity: float  # min over vortex cells of the same ratio
    repair_distance: float
    iterations: int
    converged: bool
    scale: float
    extras: dict = field(default_factory=dict)


@dataclass
class GPSolution:
    v0: FormField
    j0: FormField  # rho * v0, the physical current
    p_cert: np.ndarray  # cell dual certificate of the TV term
    beta0: FormField
    beta_phi: FormField
    p_rho_phi: FormField
    certificate: GPCertificate
    trap: TrapProfile
    phi: FormField


def _gp_saddle(trap, phi, tv_mode="isotropic", tv_scale=1.0):
    dom = trap.omega_mask
    grid = trap.grid
    vol = grid.cell_volume
    emask = np.concatenate([m.ravel() for m in dom.edge_mask_any]).astype(float)
    w_rho = vol * rho_on_edges(dom, trap.rho)  # raw weights in the energy
    radii = 0.5 * vol * tv_scale * trap.rho * dom.cell_mask
    phim = emask * phi.values
    res = tuple(grid.resolution)

    def op(v):
        return cell_curl_values(emask * v, grid).ravel()

    def op_t(y):
        return emask * cell_curl_transpose(y.reshape((3,) + res), grid).values

    def prox_conj(p, sigma):
        return project_grouped_linf(p.reshape((3,) + res), radii, mode=tv_mode).ravel()

    def f_eval(y):
        return float(np.sum(cell_group_magnitude(y.reshape((3,) + res), tv_mode) * radii))

    def prox_g(v, tau):
        return (v + tau * w_rho * phim) / (1.0 + tau * w_rho)

    def primal_energy(v):
        return 0.5 * float(np.sum(w_rho * (v - phim) ** 2)) + f_eval(op(v))

    def dual_energy(ys):
        p = project_grouped_linf(ys[0].reshape((3,) + res), radii, mode=tv_mode)
        dist = float(np.linalg.norm(p.ravel() - ys[0]))
        s = op_t(p.ravel())
        quad = 0.5 * float(
            np.sum(np.divide(s * s, w_rho, out=np.zeros_like(s), where=w_rho > 0))
        )
        lin = -float(np.dot(s, phim))
        return lin + quad, dist

    block = DualBlock(
        op=op, op_t=op_t, prox_conj=prox_conj, f_eval=f_eval,
        y_size=3 * int(np.prod(res)), name="tv",
    )
    problem = SaddleProblem(
        x_size=phim.size, blocks=[block], prox_g=prox_g,
        primal_energy=primal_energy, dual_energy=dual_energy,
        meta={"w_rho": w_rho, "phim": phim, "radii": radii, "emask": emask},
    )
    return problem


def solve_G(trap, phi, tol=1e-5, max_iter=60000, tv_mode="isotropic",
            check_every=250, verbose=False, warm_start=True, step_scale=200.0,
            x0=None, y0=None):
    """Minimize the weighted vortex energy and certify the minimizer."""
    if trap.omega_mask is None:
        raise ValueError("trap profile has no bounded support region")
    dom = trap.omega_mask
    grid = trap.grid
    vol = grid.cell_volume
    problem = _gp_saddle(trap, phi, tv_mode=tv_mode)
    w_rho = problem.meta["w_rho"]
    phim = problem.meta["phim"]
    radii = problem.meta["radii"]
    emask = problem.meta["emask"]
    res = tuple(grid.resolution)

    if warm_start and x0 is None:
        split = decompose_source(phi.values, dom, rho=trap.rho)
        x0 = split.closed_values
        p0 = project_grouped_linf(split.mu, radii, mode=tv_mode)
        y0 = [p0.ravel()]
    sol = pdhg_solve(problem, tol=tol, max_iter=max_iter, x0=x0, y0=y0,
                     check_every=check_every, verbose=verbose,
                     step_scale=step_scale)

    v0 = FormField(1, grid, sol.primal)
    p = project_grouped_linf(sol.dual[0].reshape((3,) + res), radii, mode=tv_mode)

    dv = exterior_derivative(v0)
    tv_rho = grouped_tv(dv, dom, weight=trap.rho, mode=tv_mode)
    vort = grouped_tv(dv, dom, mode=tv_mode)
    stat = 0.5 * tv_rho + float(np.sum(w_rho * sol.primal * (sol.primal - phim)))

    ws_phi = weighted_decompose(phi, trap.rho, dom)
    ws_v = weighted_decompose(v0, trap.rho, dom)
    beta_phi, beta0 = ws_phi.beta, ws_v.beta
    closed_mismatch = np.sqrt(
        max(
            inner_product(
                ws_v.closed_part - ws_phi.closed_part,
                ws_v.closed_part - ws_phi.closed_part,
                dom,
                trap.rho,
            ),
            0.0,
        )
    )
    beta_diff = beta_phi - beta0
    pairing = inner_product(beta_diff, dv, dom)
    saturation = pairing - 0.5 * tv_rho

    ratio = np.zeros(res)
    mag = cell_group_magnitude(p, tv_mode)
    np.divide(mag, radii, out=ratio, where=radii > 0)
    feas = float(ratio.max()) if ratio.size else 0.0
    dvc = cell_group_magnitude(cell_curl(v0), tv_mode) * dom.cell_mask
    vortex_cells = dvc > 1e-3 * max(dvc.max(), 1e-30)
    activity = float(ratio[vortex_cells].min()) if vortex_cells.any() else float("nan")

    scale = 1.0 + abs(sol.primal_energy) + tv_rho
    half_phi2 = 0.5 * float(np.sum(w_rho * phim * phim))
    cert = GPCertificate(
        energy=sol.primal_energy - half_phi2,
        solver_energy=sol.primal_energy,
        gap=sol.gap,
        gap_tol=tol * (1.0 + abs(sol.primal_energy)),
        vorticity_mass=vort,
        stationarity_residual=abs(stat),
        saturation_residual=abs(saturation),
        closed_match_residual=float(closed_mismatch),
        ball_feasibility=feas,
        ball_activity=activity,
        repair_distance=sol.repair_distance,
        iterations=sol.iterations,
        converged=sol.converged,
        scale=scale,
        extras={"half_phi_sq": half_phi2, "tv_rho": tv_rho},
    )
    j0 = FormField(1, grid, rho_on_edges(dom, trap.rho) * sol.primal)
    return GPSolution(
        v0=v0, j0=j0, p_cert=p, beta0=beta0, beta_phi=beta_phi,
        p_rho_phi=ws_phi.closed_part, certificate=cert, trap=trap, phi=phi,
    )


def decompose_forcing(trap, phi, tol=1e-10):
    """Weighted splitting of the forcing: closed part plus d*beta / rho."""
    if trap.omega_mask is None:
        raise ValueError("trap profile has no bounded support region")
    finite = inner_product(phi, phi, trap.omega_mask, trap.rho)
    if not np.isfinite(finite):
        raise ValueError("forcing has infinite weighted energy")
    ws = weighted_decompose(phi, trap.rho, trap.omega_mask, tol=tol)
    return ws.closed_part, ws.beta


def forcing_growth_check(trap, phi, factor=10.0):
    """Warn if |Phi|^2 visibly outruns the trap outside the support."""
    grid = trap.grid
    outside = trap.rho <= 0
    if not outside.any():
        return True
    phi2 = np.zeros(grid.resolution)
    for a, comp in enumerate(phi.components()):
        # each cell averages its four incident edges of this axis
        b, c = (a + 1) % 3, (a + 2) % 3
        acc = np.zeros(grid.resolution)
        for db in (0, 1):
            for dc in (0, 1):
                sl = [slice(None)] * 3
                sl[b] = slice(db, grid.resolution[b] + db)
                sl[c] = slice(dc, grid.resolution[c] + dc)
                acc += comp[tuple(sl)]
        phi2 += (0.25 * acc) ** 2
    bound = factor * (trap.a + 1.0)
    ok = bool(np.all(phi2[outside] <= bound[outside]))
    if not ok:
        warnings.warn(
            "forcing growth check failed: |Phi|^2 exceeds the trap scale "
            "outside the condensate", stacklevel=2,
        )
    return ok


def critical_rotation(trap, phi_unit, tol=1e-3, max_iter=40000):
    """Dual norm of the unit-forcing potential, threshold, and verdict.

    Returns (norm, c_star, subcritical_at_c1).  c_star is None when the
    forcing is closed (no vorticity source at any strength).
    """
    dom = trap.omega_mask
    split = decompose_source(phi_unit.values, dom, rho=trap.rho)
    pairing = VorticityPairing(dom, rho_cells=trap.rho, mode="isotropic")
    result = dual_norm_support(
        split.source, pairing, tol=tol, max_iter=max_iter, lam0=split.mu,
    )
    nval = result.value
    c_star = (0.5 / nval) if nval > 0 else None
    return nval, c_star, (nval <= 0.5), result


def solve_G_tilde(trap, phi, check_tol=1e-6, run_pdhg_check=False):
    """High-forcing regime: the minimizer is the forcing itself.

    Returns the restricted forcing plus a uniformity report for the
    cell-averaged vorticity; optionally cross-checks with a direct
    quadratic solve through the PDHG machinery (zero TV weight).
    """
    dom = trap.omega_mask
    grid = trap.grid
    emask = np.concatenate([m.ravel() for m in dom.edge_mask_any]).astype(float)
    v0 = FormField(1, grid, emask * phi.values)
    y = cell_curl(v0)
    cm = dom.cell_mask
    mean_vec = np.array([y[a][cm].mean() for a in range(3)])
    dev = max(
        float(np.abs(y[a][cm] - mean_vec[a]).max()) for a in range(3)
    )
    report = {
        "mean_vorticity": mean_vec,
        "max_deviation": dev,
    }
    if run_pdhg_check:
        problem = _gp_saddle(trap, phi, tv_scale=0.0)
        sol = pdhg_solve(problem, tol=1e-14, max_iter=60000, check_every=200,
                         step_scale=2000.0)
        w = problem.meta["w_rho"]
        diff2 = float(np.sum(w * (sol.primal - v0.values) ** 2))
        scale2 = max(float(np.sum(w * v0.values**2)), 1e-300)
        report["pdhg_match"] = float(np.sqrt(diff2 / scale2))
    return v0, report
