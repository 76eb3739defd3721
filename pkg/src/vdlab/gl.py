"""Superconductor drivers: joint vortex/field energy minimization, the
two quadratic dual problems, critical applied-field predicates, and the
splitting identity.

Primal problem (PDHG, jointly convex): over a velocity 1-form v on the
sample and the field offset zeta = A - A_ex on the box,

    F(v, zeta) = 1/2 TV(dv) + 1/2 ||v - zeta - A_ex||_Omega^2
                 + 1/2 ||d zeta||_box^2.

The duality-gap certificate pairs the TV dual ball with a genuine
member of the constraint set: the face dual q is repaired through one
box Poisson solve so that its codifferential matches the TV
certificate exactly on every edge (the discrete version of the support
constraint on d*B), and the gap is evaluated at that feasible point.

The two quadratic routes to the critical field are solved as reduced
systems for a cell potential lambda: the screened-field energy E1 over
box fields, and the dual energy E0 over the constraint-set
parameterization B = d psi with -Lap psi supported in the sample.
Both give the vorticity source whose nonlocal dual norm against the
grouped TV decides the dichotomy; the direct solve's vorticity mass is
the independent second route.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vdlab.common import cg
from vdlab.grids import (
    FormField,
    MaskedDomain,
    cell_curl,
    cell_curl_transpose,
    cell_curl_values,
    cell_group_magnitude,
    exterior_derivative,
    grouped_tv,
)
from vdlab.hodge import (
    project_kerd_perp,
    reconstruct_alpha1,
    solve_box_poisson_1form,
)
from vdlab.tvopt import (
    DualBlock,
    SaddleProblem,
    VorticityPairing,
    dual_norm_support,
    pdhg_solve,
    project_grouped_linf,
)


def uniform_field_potential(grid, c=1.0):
    """Model applied field: A_ex = c/2 (x1 dx2 - x2 dx1), H_ex = c dx1^dx2."""
    return FormField.sample(
        grid,
        1,
        [lambda x, y, z: -0.5 * c * y, lambda x, y, z: 0.5 * c * x,
         lambda x, y, z: 0.0 * x],
    )


@dataclass
class GLProblem:
    domain: MaskedDomain
    a_ex: FormField
    gap_tol: float = 1e-5
    cg_tol: float = 1e-10
    max_iter: int = 120000
    tv_mode: str = "isotropic"

    def __post_init__(self):
        if not np.all(np.isfinite(self.a_ex.values)):
            raise ValueError("applied potential must be finite")
        self.grid = self.domain.grid

    def h_ex(self):
        return exterior_derivative(self.a_ex)

    def scaled(self, c):
        return GLProblem(
            domain=self.domain, a_ex=FormField(1, self.grid, c * self.a_ex.values),
            gap_tol=self.gap_tol, cg_tol=self.cg_tol, max_iter=self.max_iter,
            tv_mode=self.tv_mode,
        )


def _masks(domain):
    emask = np.concatenate([m.ravel() for m in domain.edge_mask_any]).astype(float)
    return emask


# ---------------------------------------------------------------------------
# quadratic solvers: E1 (screened field) and E0 over the constraint set
# ---------------------------------------------------------------------------


@dataclass
class QuadraticFieldSolution:
    """Common output of the two quadratic solvers.

    lam is the cell potential: the vorticity source of the solution is
    K^T lam restricted to sample edges (scaled by the cell volume in
    physical pairings), and by construction it equals the projected
    field / the codifferential of the dual field exactly.
    """

    lam: np.ndarray
    zeta: np.ndarray  # box 1-form values (coclosed representative)
    energy: float
    el_residual: float
    iterations: int


def _schur_solver(problem, rhs_sign, tol=None, inner_tol=1e-12,
                  name="field schur"):
    """Solve the shared reduced system S lam = rhs_sign * K(A_ex|Omega).

    S lam = K(1_e K^T lam) + K(1_e L^{-1} K^T lam) with L the strictly
    positive box Hodge Laplacian; the second term applies the inverse
    through an inner CG.
    """
    dom, grid = problem.domain, problem.grid
    emask = _masks(dom)
    res = tuple(grid.resolution)
    cmask = dom.cell_mask
    tol = tol or max(problem.cg_tol, 1e-9)

    def kt(lam):
        lam = np.where(cmask, lam, 0.0)
        return emask * cell_curl_transpose(lam, grid).values

    def k(u):
        y = cell_curl_values(emask * u, grid)
        y[:, ~cmask] = 0.0
        return y

    def apply_S(lam_flat):
        lam = lam_flat.reshape((3,) + res)
        g = kt(lam)
        psi, _, _ = solve_box_poisson_1form(g, grid, tol=inner_tol)
        return (k(g) + k(psi)).ravel()

    b = rhs_sign * k(problem.a_ex.values).ravel()
    atol = tol * (4.0 / min(grid.spacing)) * float(
        np.linalg.norm(emask * problem.a_ex.values)
    )
    lam_flat, iters, _ = cg(apply_S, b, tol=tol, atol=atol, name=name,
                            accept=1e-6)
    lam = np.where(cmask, lam_flat.reshape((3,) + res), 0.0)
    g = kt(lam)
    psi, _, _ = solve_box_poisson_1form(g, grid, tol=inner_tol)
    return lam, g, psi, iters


def solve_E1(problem, tol=None):
    """Minimize the screened-field energy over box potentials.

    E1(A) = 1/2 ||P (A|Omega)||^2 + 1/2 ||dA - H_ex||^2 with P the
    projection onto the complement of the discretely closed fields.
    Returns the quadratic solution (A1 = A_ex + zeta) together with the
    face 2-form potential alpha1 reconstructed from the projected
    field.  A1 is linear in A_ex.
    """
    dom, grid = problem.domain, problem.grid
    emask = _masks(dom)
    vol = grid.cell_volume
    lam, g, psi, iters = _schur_solver(problem, +1.0, tol=tol, name="E1 schur")
    zeta = -psi
    a1_values = problem.a_ex.values + zeta
    pa1 = g  # = projection of A1 onto the coexact complement, by the KKT system

    # optimality residual of the weak Euler-Lagrange identity on probes
    rng = np.random.default_rng(2024)
    scale = vol * max(float(np.linalg.norm(pa1)), 1e-30)
    el = 0.0
    dz = exterior_derivative(FormField(1, grid, zeta)).values
    for _ in range(5):
        b_probe = rng.standard_normal(emask.size)
        term = vol * (
            float(np.dot(pa1, emask * b_probe))
            + float(np.dot(dz, exterior_derivative(FormField(1, grid, b_probe)).values))
        )
        el = max(el, abs(term) / (scale * max(np.linalg.norm(b_probe), 1.0)))
    energy = 0.5 * vol * float(np.dot(pa1, pa1)) + 0.5 * vol * float(np.dot(dz, dz))
    return QuadraticFieldSolution(
        lam=lam, zeta=zeta, energy=energy, el_residual=el, iterations=iters
    )


def screened_field_potentials(problem, e1=None, tol=None):
    """The screened-field pair (A1, alpha1) of the spec contract.

    A1 = A_ex + zeta from the quadratic solve; alpha1 is the face
    2-form potential of the projected field, reconstructed so that
    d* alpha1 = P A1 at solver tolerance, d alpha1 = 0 to machine
    precision, and the normal part vanishes weakly.
    """
    if e1 is None:
        e1 = solve_E1(problem, tol=tol)
    grid = problem.grid
    a1 = FormField(1, grid, problem.a_ex.values + e1.zeta)
    pa1 = project_kerd_perp(a1, problem.domain)
    alpha1 = reconstruct_alpha1(pa1, problem.domain)
    return a1, alpha1


def solve_E0_Cprime(problem, tol=None):
    """Minimize E0(B) = 1/2 ||B||^2 + 1/2 ||d*B + A_ex||_Omega^2 over the
    constraint-set parameterization B = d psi, -Lap psi = source in the
    sample.

    Returns (B_star, solution record).  The Euler-Lagrange residual is
    checked against random members of the same constraint set.
    """
    dom, grid = problem.domain, problem.grid
    emask = _masks(dom)
    vol = grid.cell_volume
    res = tuple(grid.resolution)
    cmask = dom.cell_mask
    lam, g, psi, iters = _schur_solver(problem, -1.0, tol=tol, name="E0 schur")
    bstar = exterior_derivative(FormField(1, grid, psi))

    # EL residual against random constraint-set probes
    rng = np.random.default_rng(515)
    aex_m = emask * problem.a_ex.values
    el = 0.0
    for _ in range(5):
        lam_r = np.where(cmask, rng.standard_normal((3,) + res), 0.0)
        g_r = emask * cell_curl_transpose(lam_r, grid).values
        psi_r, _, _ = solve_box_poisson_1form(g_r, grid, tol=1e-12)
        b_r = exterior_derivative(FormField(1, grid, psi_r))
        term = vol * (
            float(np.dot(bstar.values, b_r.values))
            + float(np.dot(g + aex_m, g_r))
        )
        scale = vol * max(
            np.linalg.norm(bstar.values) * np.linalg.norm(b_r.values), 1e-30
        )
        el = max(el, abs(term) / scale)
    energy = 0.5 * vol * float(np.dot(bstar.values, bstar.values)) + 0.5 * vol * float(
        np.dot(g + aex_m, g + aex_m)
    )
    record = QuadraticFieldSolution(
        lam=lam, zeta=psi, energy=energy, el_residual=el, iterations=iters
    )
    return bstar, record


# ---------------------------------------------------------------------------
# the joint primal solve
# ---------------------------------------------------------------------------


@dataclass
class GLCertificate:
    energy: float
    gap: float
    gap_tol: float
    vorticity_mass: float
    field_eqn_residual: float  # d*B0 + 1_Omega (A0 - v0)
    stationarity_residual: float  # e^t-scaling identity
    saturation_residual: float  # box pairing of B0 against the vorticity
    ball_feasibility: float
    ball_activity: float
    repair_distance: float
    iterations: int
    converged: bool
    scale: float
    extras: dict = field(default_factory=dict)


@dataclass
class GLSolution:
    v0: FormField
    a0: FormField
    b0: FormField
    p_cert: np.ndarray
    certificate: GLCertificate
    problem: GLProblem


def _gl_saddle(problem):
    dom, grid = problem.domain, problem.grid
    vol = grid.cell_volume
    emask = _masks(dom)
    ne = emask.size
    res = tuple(grid.resolution)
    cmask = dom.cell_mask
    radii = 0.5 * vol * cmask.astype(float)
    aex = problem.a_ex.values
    nf = FormField(2, grid).values.size
    tv_mode = problem.tv_mode

    def op_tv(x):
        return cell_curl_values(emask * x[:ne], grid).ravel()

    def op_tv_t(y):
        out = np.zeros(2 * ne)
        out[:ne] = emask * cell_curl_transpose(y.reshape((3,) + res), grid).values
        return out

    def op_curl(x):
        return exterior_derivative(FormField(1, grid, x[ne:], validate=False)).values

    def op_curl_t(q):
        out = np.zeros(2 * ne)
        from vdlab.grids import d_transpose

        out[ne:] = d_transpose(FormField(2, grid, q)).values
        return out

    def prox_tv_conj(p, sigma):
        return project_grouped_linf(p.reshape((3,) + res), radii, mode=tv_mode).ravel()

    def prox_curl_conj(q, sigma):
        return q * (vol / (vol + sigma))

    def f_tv(y):
        return float(np.sum(cell_group_magnitude(y.reshape((3,) + res), tv_mode) * radii))

    def f_curl(q):
        return 0.5 * vol * float(np.dot(q, q))

    def prox_g(x, tau):
        v, zeta = x[:ne], x[ne:]
        r = emask * (v - zeta - aex) / (1.0 + 2.0 * tau * vol)
        out = np.empty_like(x)
        out[:ne] = v - tau * vol * r
        out[ne:] = zeta + tau * vol * r
        return out

    def primal_energy(x):
        v, zeta = emask * x[:ne], x[ne:]
        quad = 0.5 * vol * float(np.sum((emask * (v - zeta - aex)) ** 2))
        return quad + f_tv(op_tv(x)) + f_curl(op_curl(x))

    def dual_energy(ys):
        p = project_grouped_linf(ys[0].reshape((3,) + res), radii, mode=tv_mode)
        dist = float(np.linalg.norm(p.ravel() - ys[0]))
        s_v = emask * cell_curl_transpose(p, grid).values
        q = ys[1]
        # repair q so that its codifferential matches -s_v on every edge
        from vdlab.grids import d_transpose

        r = -s_v - d_transpose(FormField(2, grid, q)).values
        rnorm = np.linalg.norm(r)
        if rnorm > 1e-13 * max(np.linalg.norm(s_v), 1.0):
            psi, _, _ = solve_box_poisson_1form(r, grid, tol=1e-11)
            dq = exterior_derivative(FormField(1, grid, psi)).values
            q = q + dq
            dist += float(np.linalg.norm(dq))
        val = float(np.sum(emask * (-s_v * aex + (s_v * s_v) / (2.0 * vol))))
        val += 0.5 * float(np.dot(q, q)) / vol
        return val, dist

    blocks = [
        DualBlock(op=op_tv, op_t=op_tv_t, prox_conj=prox_tv_conj, f_eval=f_tv,
                  y_size=3 * int(np.prod(res)), name="tv"),
        DualBlock(op=op_curl, op_t=op_curl_t, prox_conj=prox_curl_conj,
                  f_eval=f_curl, y_size=nf, name="field"),
    ]
    return SaddleProblem(
        x_size=2 * ne, blocks=blocks, prox_g=prox_g,
        primal_energy=primal_energy, dual_energy=dual_energy,
        meta={"emask": emask, "radii": radii, "ne": ne},
    )


def scale_quadratic_solution(e1, factor):
    """Rescale a quadratic field solution along its linear family."""
    return QuadraticFieldSolution(
        lam=factor * e1.lam, zeta=factor * e1.zeta,
        energy=factor**2 * e1.energy, el_residual=e1.el_residual,
        iterations=e1.iterations,
    )


def solve_F(problem, tol=None, max_iter=None, step_scale=40.0,
            check_every=500, verbose=False, warm_start=True, x0=None, y0=None,
            e1=None):
    """Joint minimization of the vortex/field energy with certificates.

    ``e1`` may carry a precomputed screened-field solution for this
    problem's forcing (they are linear in it, so a base solve can be
    rescaled); otherwise the warm start solves it here.
    """
    dom, grid = problem.domain, problem.grid
    vol = grid.cell_volume
    tol = tol if tol is not None else problem.gap_tol
    max_iter = max_iter if max_iter is not None else problem.max_iter
    saddle = _gl_saddle(problem)
    emask = saddle.meta["emask"]
    radii = saddle.meta["radii"]
    ne = saddle.meta["ne"]
    res = tuple(grid.resolution)

    if warm_start and x0 is None:
        if e1 is None:
            e1 = solve_E1(problem)
        x0 = np.zeros(2 * ne)
        x0[:ne] = emask * (problem.a_ex.values + e1.zeta) - emask * cell_curl_transpose(
            e1.lam, grid
        ).values
        x0[ne:] = e1.zeta
        p0 = project_grouped_linf(vol * e1.lam, radii, mode=problem.tv_mode)
        q0 = vol * exterior_derivative(FormField(1, grid, e1.zeta)).values
        y0 = [p0.ravel(), q0]
    sol = pdhg_solve(saddle, tol=tol, max_iter=max_iter, x0=x0, y0=y0,
                     check_every=check_every, verbose=verbose,
                     step_scale=step_scale)

    v0 = FormField(1, grid, emask * sol.primal[:ne])
    zeta0 = sol.primal[ne:]
    a0 = FormField(1, grid, problem.a_ex.values + zeta0)
    b0 = exterior_derivative(FormField(1, grid, zeta0))
    p = project_grouped_linf(sol.dual[0].reshape((3,) + res), radii,
                             mode=problem.tv_mode)

    from vdlab.grids import d_transpose

    tv = grouped_tv(exterior_derivative(v0), dom, mode=problem.tv_mode)
    vort = tv
    # (1.10): d*B0 + 1_Omega (A0 - v0) = 0, with the uniform-weight codifferential
    r_field = d_transpose(FormField(2, grid, b0.values)).values + emask * (
        a0.values - v0.values
    )
    field_resid = np.sqrt(vol) * float(np.linalg.norm(r_field))
    # (3.18): stationarity under v -> e^t v
    stat = 0.5 * tv + vol * float(
        np.dot(emask * (v0.values - a0.values), v0.values)
    )
    # (1.11): box pairing of B0 with the zero-extended vorticity
    dvbar = exterior_derivative(v0)
    sat = vol * float(np.dot(b0.values, dvbar.values)) + 0.5 * tv

    ratio = np.zeros(res)
    mag = cell_group_magnitude(p, problem.tv_mode)
    np.divide(mag, radii, out=ratio, where=radii > 0)
    feas = float(ratio.max()) if ratio.size else 0.0
    dvc = cell_group_magnitude(cell_curl(v0), problem.tv_mode) * dom.cell_mask
    vortex_cells = dvc > 1e-3 * max(dvc.max(), 1e-30)
    activity = float(ratio[vortex_cells].min()) if vortex_cells.any() else float("nan")

    aex_scale = np.sqrt(vol) * float(np.linalg.norm(emask * problem.a_ex.values))
    scale = 1.0 + abs(sol.primal_energy) + tv + aex_scale
    cert = GLCertificate(
        energy=sol.primal_energy,
        gap=sol.gap,
        gap_tol=tol * (1.0 + abs(sol.primal_energy)),
        vorticity_mass=vort,
        field_eqn_residual=field_resid,
        stationarity_residual=abs(stat),
        saturation_residual=abs(sat),
        ball_feasibility=feas,
        ball_activity=activity,
        repair_distance=sol.repair_distance,
        iterations=sol.iterations,
        converged=sol.converged,
        scale=scale,
        extras={"warm_e1": e1.energy if e1 is not None else None},
    )
    return GLSolution(v0=v0, a0=a0, b0=b0, p_cert=p, certificate=cert,
                      problem=problem)


def gl_energy(problem, v_values, zeta_values):
    """Evaluate the primal energy at an arbitrary point (gauge tests)."""
    saddle = _gl_saddle(problem)
    ne = saddle.meta["ne"]
    x = np.concatenate([v_values, zeta_values])
    return saddle.primal_energy(x)


# ---------------------------------------------------------------------------
# criticality
# ---------------------------------------------------------------------------


@dataclass
class GLCriticalReport:
    norm_bstar: float
    norm_alpha1: float
    verdict_bstar: bool
    verdict_alpha1: bool
    vorticity_mass: float | None
    delta_vort: float | None
    threshold_c: float | None
    brackets: dict


def critical_predicates(problem, norm_tol=1e-3, with_direct=False,
                        direct_kwargs=None):
    """Both nonlocal-norm criticality predicates, plus the direct route.

    The two norms are evaluated from the sources of the two quadratic
    solves (the projected screened field and the codifferential of the
    dual minimizer); the threshold of the linear family c * A_ex is
    1 / (2 norm) by linearity.  With ``with_direct`` the vorticity mass
    of a full primal solve at this forcing is reported against the
    grid-scaled threshold.
    """
    grid = problem.grid
    dom = problem.domain
    vol = grid.cell_volume
    if not dom.simply_connected:
        import warnings

        warnings.warn(
            "domain is not simply connected: the constraint-set "
            "parameterization may not exhaust the admissible fields "
            "(harmonic subspace present)", stacklevel=2,
        )
    e1 = solve_E1(problem)
    bstar, e0 = solve_E0_Cprime(problem)
    emask = _masks(dom)
    pairing = VorticityPairing(dom, rho_cells=None, mode=problem.tv_mode)

    g1 = vol * emask * cell_curl_transpose(e1.lam, grid).values
    r1 = dual_norm_support(g1, pairing, tol=norm_tol, lam0=vol * e1.lam)
    g0 = vol * emask * cell_curl_transpose(e0.lam, grid).values
    r0 = dual_norm_support(g0, pairing, tol=norm_tol, lam0=vol * e0.lam)

    threshold = None
    if r1.value > 0:
        threshold = 0.5 / r1.value

    vort = None
    delta = None
    if with_direct:
        kw = direct_kwargs or {}
        sol = solve_F(problem, **kw)
        vort = sol.certificate.vorticity_mass
        delta = 1e-3 * grouped_tv(problem.h_ex(), dom, mode=problem.tv_mode)
    return GLCriticalReport(
        norm_bstar=r0.value,
        norm_alpha1=r1.value,
        verdict_bstar=r0.value <= 0.5,
        verdict_alpha1=r1.value <= 0.5,
        vorticity_mass=vort,
        delta_vort=delta,
        threshold_c=threshold,
        brackets={"bstar": (r0.lower, r0.upper), "alpha1": (r1.lower, r1.upper)},
    )


def apply_proj_kerd_perp_cc(domain, u_values, tol=1e-10):
    """Projection onto the complement of the averaged-curl kernel."""
    grid = domain.grid
    emask = _masks(domain)
    cmask = domain.cell_mask
    res = tuple(grid.resolution)

    def kt(lam):
        return emask * cell_curl_transpose(np.where(cmask, lam, 0.0), grid).values

    def k(u):
        y = cell_curl_values(emask * u, grid)
        y[:, ~cmask] = 0.0
        return y

    def apply_A(lam_flat):
        return k(kt(lam_flat.reshape((3,) + res))).ravel()

    um = emask * u_values
    b = k(um).ravel()
    atol = tol * (4.0 / min(grid.spacing)) * float(np.linalg.norm(um))
    lam_flat, _, _ = cg(apply_A, b, tol=tol, atol=atol, name="cc projection")
    return kt(lam_flat.reshape((3,) + res))


def splitting_check(problem, v_values, zeta_values, e1=None):
    """Relative mismatch of the energy-splitting identity at (v, A).

    Both sides are assembled independently: the left side is the
    closed-shift-reduced energy at (v, A); the right side isolates the
    screened-field minimum, the quadratic in B = A - A1, and the
    vorticity pairing against the potential certificate.
    """
    dom, grid = problem.domain, problem.grid
    vol = grid.cell_volume
    emask = _masks(dom)
    if e1 is None:
        e1 = solve_E1(problem)
    a_values = problem.a_ex.values + zeta_values
    v0 = FormField(1, grid, emask * v_values)
    tv = 0.5 * grouped_tv(exterior_derivative(v0), dom, mode=problem.tv_mode)

    pv_a = apply_proj_kerd_perp_cc(dom, v_values - a_values)
    dz = exterior_derivative(FormField(1, grid, zeta_values)).values
    lhs = tv + 0.5 * vol * float(np.dot(pv_a, pv_a)) + 0.5 * vol * float(
        np.dot(dz, dz)
    )

    b_values = zeta_values - e1.zeta
    db = exterior_derivative(FormField(1, grid, b_values)).values
    pv_b = apply_proj_kerd_perp_cc(dom, v_values - b_values)
    g1 = vol * emask * cell_curl_transpose(e1.lam, grid).values
    rhs = (
        e1.energy
        + 0.5 * vol * float(np.dot(db, db))
        + 0.5 * vol * float(np.dot(pv_b, pv_b))
        + tv
        - float(np.dot(g1, emask * v_values))
    )
    scale = max(abs(lhs), abs(rhs), 1.0)
    return abs(lhs - rhs) / scale
