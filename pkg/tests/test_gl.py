"""Superconductor drivers: primal certificates, dual routes, predicates."""

import numpy as np
import pytest

from vdlab.grids import (
    FormField,
    GridSpec,
    MaskedDomain,
    exterior_derivative,
    grouped_tv,
)
from vdlab.gl import (
    GLProblem,
    critical_predicates,
    gl_energy,
    solve_E0_Cprime,
    solve_E1,
    solve_F,
    splitting_check,
    uniform_field_potential,
)


@pytest.fixture(scope="module")
def problem():
    grid = GridSpec((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0), (16, 16, 16))
    dom = MaskedDomain.ball(grid, radius=1.0)
    return GLProblem(domain=dom, a_ex=uniform_field_potential(grid, 1.0))


@pytest.fixture(scope="module")
def report(problem):
    return critical_predicates(problem, norm_tol=1e-4)


def test_hex_is_constant_for_model_field(problem):
    hx, hy, hz = problem.h_ex().components()
    assert np.allclose(hz, 1.0, atol=1e-12)
    assert np.abs(hx).max() <= 1e-13 and np.abs(hy).max() <= 1e-13


def test_zero_field(problem):
    sol = solve_F(problem.scaled(0.0), tol=1e-10, max_iter=2000, warm_start=False)
    cert = sol.certificate
    assert np.abs(sol.v0.values).max() <= 1e-10
    assert np.abs(sol.b0.values).max() <= 1e-10
    assert cert.vorticity_mass <= 1e-12
    assert cert.field_eqn_residual <= 1e-10
    e1 = solve_E1(problem.scaled(0.0))
    assert np.abs(e1.zeta).max() <= 1e-12 and np.abs(e1.lam).max() <= 1e-12
    bstar, _ = solve_E0_Cprime(problem.scaled(0.0))
    assert np.abs(bstar.values).max() <= 1e-12


def test_E1_linearity_and_optimality(problem):
    e1 = solve_E1(problem)
    e2 = solve_E1(problem.scaled(2.0))
    assert np.allclose(e2.zeta, 2.0 * e1.zeta,
                       atol=1e-8 * max(np.abs(e1.zeta).max(), 1e-30))
    assert np.allclose(e2.lam, 2.0 * e1.lam,
                       atol=1e-8 * max(np.abs(e1.lam).max(), 1e-30))
    assert e1.el_residual <= 1e-8


def test_E0_optimality_and_source_match(problem):
    bstar, e0 = solve_E0_Cprime(problem)
    e1 = solve_E1(problem)
    assert e0.el_residual <= 1e-6
    # the two quadratic routes share the reduced system: sources agree
    assert np.allclose(e0.lam, -e1.lam, atol=1e-8 * np.abs(e1.lam).max())


def test_predicates_agree_and_threshold(problem, report):
    assert report.norm_bstar == pytest.approx(report.norm_alpha1, rel=1e-3)
    assert report.verdict_bstar == report.verdict_alpha1
    assert report.threshold_c is not None and report.threshold_c > 0
    lo, hi = report.brackets["alpha1"]
    assert lo <= report.norm_alpha1 <= hi * (1 + 1e-12)


def test_subcritical_solve(problem, report):
    c = 0.5 * report.threshold_c
    sol = solve_F(problem.scaled(c), tol=1e-8)
    cert = sol.certificate
    delta = 1e-3 * grouped_tv(problem.scaled(c).h_ex(), problem.domain)
    assert cert.vorticity_mass <= delta
    assert cert.gap <= 1e-8 * (1 + abs(cert.energy))
    assert cert.field_eqn_residual <= 1e-4 * cert.scale
    assert cert.stationarity_residual <= 1e-4 * cert.scale
    assert cert.saturation_residual <= 1e-4 * cert.scale
    # subcritical: the direct solve field matches both quadratic routes
    e1 = solve_E1(problem.scaled(c))
    b1 = exterior_derivative(FormField(1, problem.grid, e1.zeta))
    rel = np.linalg.norm(sol.b0.values - b1.values) / np.linalg.norm(b1.values)
    assert rel <= 2e-2
    bstar, _ = solve_E0_Cprime(problem.scaled(c))
    rel2 = np.linalg.norm(sol.b0.values - bstar.values) / np.linalg.norm(
        bstar.values
    )
    assert rel2 <= 2e-2
    assert sol.certificate.extras["warm_e1"] == pytest.approx(cert.energy,
                                                              rel=1e-6)


def test_supercritical_solve(problem, report):
    c = 2.0 * report.threshold_c
    sol = solve_F(problem.scaled(c), tol=1e-8)
    cert = sol.certificate
    delta = 1e-3 * grouped_tv(problem.scaled(c).h_ex(), problem.domain)
    assert cert.vorticity_mass > delta
    assert cert.ball_feasibility <= 1.0 + 1e-9
    assert cert.ball_activity >= 1.0 - 1e-3
    assert cert.field_eqn_residual <= 1e-4 * cert.scale
    assert cert.stationarity_residual <= 1e-4 * cert.scale
    assert cert.saturation_residual <= 1e-4 * cert.scale


def test_gauge_invariance(problem, report):
    """Energy is exactly invariant along the gauge orbit.

    Both the velocity and the potential shift by the same gradient (the
    supercurrent v - A and the curl of A are what the energy sees), and
    the grouped TV is blind to gradients by d(d(.)) = 0.
    """
    rng = np.random.default_rng(8)
    grid = problem.grid
    c = 1.25 * report.threshold_c
    prob = problem.scaled(c)
    ne = FormField(1, grid).values.size
    v = rng.standard_normal(ne)
    zeta = rng.standard_normal(ne)
    base = gl_energy(prob, v, zeta)
    for _ in range(5):
        gamma = FormField(0, grid, rng.standard_normal(FormField(0, grid).values.size))
        dg = exterior_derivative(gamma).values
        shifted = gl_energy(prob, v + dg, zeta + dg)
        assert shifted == pytest.approx(base, rel=1e-8)


def test_splitting_identity(problem):
    rng = np.random.default_rng(17)
    grid = problem.grid
    ne = FormField(1, grid).values.size
    e1 = solve_E1(problem)
    for _ in range(3):
        v = rng.standard_normal(ne)
        zeta = rng.standard_normal(ne)
        assert splitting_check(problem, v, zeta, e1=e1) <= 1e-6
    assert splitting_check(problem, np.zeros(ne), e1.zeta, e1=e1) <= 1e-8


def test_splitting_sign_detects_criticality(problem, report):
    """At the minimizer the vorticity pairing term is <= 0 iff supercritical."""
    from vdlab.grids import cell_curl_transpose

    grid = problem.grid
    vol = grid.cell_volume
    emask = np.concatenate(
        [m.ravel() for m in problem.domain.edge_mask_any]
    ).astype(float)
    for factor, expect_neg in ((0.5, False), (2.0, True)):
        prob = problem.scaled(factor * report.threshold_c)
        sol = solve_F(prob, tol=1e-8)
        e1 = solve_E1(prob)
        g1 = vol * emask * cell_curl_transpose(e1.lam, grid).values
        tvterm = 0.5 * grouped_tv(
            exterior_derivative(sol.v0), problem.domain
        ) - float(np.dot(g1, sol.v0.values))
        if expect_neg:
            assert tvterm < 0
        else:
            assert tvterm >= -1e-8 * (1 + abs(tvterm))


def test_critical_predicates_with_direct(problem, report):
    rep = critical_predicates(
        problem.scaled(0.25 * report.threshold_c), norm_tol=1e-3,
        with_direct=True, direct_kwargs={"tol": 1e-7},
    )
    assert rep.vorticity_mass <= rep.delta_vort
    assert rep.verdict_alpha1  # subcritical forcing scaled in
    # threshold of the scaled problem maps back consistently
    assert rep.threshold_c == pytest.approx(
        report.threshold_c / (0.25 * report.threshold_c), rel=2e-3
    )


def test_torus_warns(problem):
    grid = problem.grid
    torus = MaskedDomain.torus(grid, major=1.2, minor=0.4)
    prob = GLProblem(domain=torus, a_ex=uniform_field_potential(grid, 0.5))
    with pytest.warns(UserWarning, match="simply connected"):
        critical_predicates(prob, norm_tol=5e-3)


def test_screened_field_potentials(problem):
    """The (A1, alpha1) pair: alpha1 reconstructs the projected field."""
    from vdlab.hodge import codifferential_residuals, project_kerd_perp
    from vdlab.gl import screened_field_potentials

    a1, alpha1 = screened_field_potentials(problem)
    pa1 = project_kerd_perp(a1, problem.domain)
    scale = max(np.linalg.norm(pa1.values), 1e-30)
    r_codiff, r_closed = codifferential_residuals(alpha1, pa1, problem.domain)
    assert r_codiff <= 1e-6 * scale
    assert r_closed <= 1e-6 * scale
