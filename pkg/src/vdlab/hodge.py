"""Discrete Hodge decompositions, projections, and potential solves.

All operations in this module use the exact face-based complex: d is
the staggered exterior derivative, codifferentials are its masked
adjoints, and "closed" means the discrete curl vanishes on every face
of an interior cell.  Potentials are parameterized so the defining
relations hold at CG tolerance rather than discretization accuracy:

* P v is produced together with a face potential beta, v-projection =
  d* beta, so idempotence and the Morrey infimum are structural;
* reconstruct_alpha1 returns alpha1 = d(eta) for an edge potential eta,
  so d(alpha1) = 0 to machine precision and d*(alpha1) = PA1 at CG
  tolerance;
* the inverse Laplacian solves the strictly positive box Hodge
  Laplacian (curl-curl plus grad-div, natural far-field boundary), so
  d*(d psi) equals the masked source exactly on every box edge.

Normal-part-zero boundary conditions on 2-form potentials are imposed
weakly by restricting them to faces of interior cells and using the
masked adjoint, the standard staggered-grid treatment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vdlab.common import SolverError, cg
from vdlab.grids import (
    FormField,
    d_transpose,
    exterior_derivative,
)

DEFAULT_TOL = 1e-10


def _op_scale(grid):
    """Coarse bound on ||d|| used to convert input norms to rhs scales."""
    return 4.0 / min(grid.spacing)


def _edge_mask_flat(domain):
    return np.concatenate([m.ravel() for m in domain.edge_mask_any]).astype(float)


def _face_mask_flat(domain):
    return np.concatenate([m.ravel() for m in domain.face_mask_any]).astype(float)


def _node_mask_flat(domain):
    return np.concatenate([m.ravel() for m in domain.node_mask_any]).astype(float)


def _d1(values, grid):
    return exterior_derivative(FormField(1, grid, values)).values


def _d1t(values, grid):
    return d_transpose(FormField(2, grid, values)).values


def _d0(values, grid):
    return exterior_derivative(FormField(0, grid, values)).values


def _d0t(values, grid):
    return d_transpose(FormField(1, grid, values)).values


def _d2(values, grid):
    return exterior_derivative(FormField(2, grid, values)).values


def _d2t(values, grid):
    return d_transpose(FormField(3, grid, values)).values


def coexact_from_face_potential(beta_values, domain):
    """Masked codifferential of a face potential: edge values of d*beta."""
    grid = domain.grid
    fmask = _face_mask_flat(domain)
    emask = _edge_mask_flat(domain)
    return emask * _d1t(fmask * beta_values, grid)


def project_kerd_perp(v, domain, tol=DEFAULT_TOL, return_potential=False):
    """Orthogonal projection of an Omega 1-form onto the coexact subspace.

    Returns Pv with Pv = d*beta for a face potential beta (normal part
    zero, weakly).  P is idempotent and self-adjoint in the masked L2
    pairing, and ||Pv|| realizes the infimum of ||v + gamma|| over
    discretely closed gamma.
    """
    grid = domain.grid
    fmask = _face_mask_flat(domain)
    emask = _edge_mask_flat(domain)
    vm = emask * np.asarray(v.values if isinstance(v, FormField) else v, dtype=float)

    def apply_A(beta):
        return fmask * _d1(emask * _d1t(fmask * beta, grid), grid)

    b = fmask * _d1(vm, grid)
    atol = tol * _op_scale(grid) * float(np.linalg.norm(vm))
    try:
        beta, _, _ = cg(apply_A, b, tol=tol, atol=atol, name="project_kerd_perp")
    except SolverError as err:
        raise SolverError(
            f"projection solve did not converge: {err}", residual=err.residual
        ) from err
    pv = FormField(1, grid, emask * _d1t(fmask * beta, grid))
    if return_potential:
        return pv, FormField(2, grid, fmask * beta)
    return pv


@dataclass
class HodgeSplit:
    """Three-way orthogonal splitting of an Omega 1-form."""

    exact: FormField
    coexact: FormField
    harmonic: FormField
    alpha: FormField  # 0-form potential of the exact part
    beta: FormField  # 2-form potential of the coexact part

    def reconstruction(self):
        return self.exact + self.coexact + self.harmonic


def hodge_split(v, domain, tol=DEFAULT_TOL):
    """Split v = d(alpha) + d*(beta) + harmonic on the masked domain.

    Components are mutually orthogonal in the masked L2 pairing at CG
    tolerance and sum to the input exactly.  On simply connected,
    well-resolved domains the harmonic part of a smooth field is small;
    for rough data it carries the grid-scale remainder as well.
    """
    grid = domain.grid
    emask = _edge_mask_flat(domain)
    nmask = _node_mask_flat(domain)
    vm = emask * v.values

    def apply_grad(alpha_n):
        return nmask * _d0t(emask * _d0(nmask * alpha_n, grid), grid)

    b = nmask * _d0t(vm, grid)
    atol = tol * _op_scale(grid) * float(np.linalg.norm(vm))
    alpha_n, _, _ = cg(apply_grad, b, tol=tol, atol=atol, name="hodge_split grad part")
    exact = FormField(1, grid, emask * _d0(nmask * alpha_n, grid))
    coexact, beta = project_kerd_perp(
        FormField(1, grid, vm), domain, tol=tol, return_potential=True
    )
    harmonic = FormField(1, grid, vm - exact.values - coexact.values)
    if not domain.simply_connected:
        import warnings

        warnings.warn(
            "harmonic subspace present: domain is not simply connected",
            stacklevel=2,
        )
    return HodgeSplit(
        exact=exact,
        coexact=coexact,
        harmonic=harmonic,
        alpha=FormField(0, grid, nmask * alpha_n),
        beta=beta,
    )


# ---------------------------------------------------------------------------
# weighted decomposition (trapped-condensate machinery)
# ---------------------------------------------------------------------------


@dataclass
class WeightedSplit:
    """rho-weighted splitting Phi = closed_part + d*beta / rho."""

    closed_part: FormField
    beta: FormField
    coexact_over_rho: FormField
    rho_edge: np.ndarray  # clamped edge weights used in the solve


def rho_on_edges(domain, rho, clamp=None):
    """Cell weight averaged to masked edges, optionally clamped below."""
    from vdlab.grids import _interp_weight

    rho = np.asarray(rho, dtype=float)
    comps = [_interp_weight(rho, 1, a) for a in range(3)]
    flat = np.concatenate([c.ravel() for c in comps])
    emask = _edge_mask_flat(domain)
    if clamp is not None:
        flat = np.maximum(flat, clamp)
    return flat * emask


def weighted_decompose(phi, rho, domain, tol=DEFAULT_TOL, clamp_ratio=1e-8):
    """Split Phi into a discretely closed part and d*beta / rho.

    rho is a cell weight, nonnegative, positive on interior cells
    (linear degeneracy at the boundary is fine).  The clamp keeps the
    linear solve conditioned; energies elsewhere use the raw weight.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho[domain.cell_mask] <= 0.0):
        raise ValueError("weight must be positive on interior cells")
    grid = domain.grid
    emask = _edge_mask_flat(domain)
    fmask = _face_mask_flat(domain)
    clamp = clamp_ratio * float(rho.max())
    re = rho_on_edges(domain, rho, clamp=clamp)
    phim = emask * phi.values

    # normal equations of min over beta of || Phi - d*beta / rho ||_rho^2
    def apply_A(beta):
        u = emask * _d1t(fmask * beta, grid)
        return fmask * _d1(np.divide(u, re, out=np.zeros_like(u), where=re > 0), grid)

    b = fmask * _d1(phim, grid)
    atol = tol * _op_scale(grid) * float(np.linalg.norm(phim))
    beta, _, _ = cg(apply_A, b, tol=tol, atol=atol, name="weighted_decompose")
    u = emask * _d1t(fmask * beta, grid)
    w = np.divide(u, re, out=np.zeros_like(u), where=re > 0)
    closed = phim - w
    return WeightedSplit(
        closed_part=FormField(1, grid, closed),
        beta=FormField(2, grid, fmask * beta),
        coexact_over_rho=FormField(1, grid, w),
        rho_edge=re,
    )


# ---------------------------------------------------------------------------
# box Poisson / inverse Laplacian
# ---------------------------------------------------------------------------


def solve_box_poisson_1form(rhs_values, grid, tol=DEFAULT_TOL, max_iter=None):
    """Solve (curl-curl + grad-div) psi = rhs on the box, natural boundary.

    The operator is strictly positive definite on the box complex.  If
    the right-hand side is discretely divergence free the solution has
    d* psi = 0 and curl-curl psi = rhs exactly (at CG tolerance), which
    is what the constraint-set parameterization relies on.
    """

    def apply_L(psi):
        return _d1t(_d1(psi, grid), grid) + _d0(_d0t(psi, grid), grid)

    psi, iters, relres = cg(
        apply_L, rhs_values, tol=tol, max_iter=max_iter, name="box_poisson"
    )
    return psi, iters, relres


def solve_inverse_laplacian(phi, domain, tol=DEFAULT_TOL, compat_tol=1e-8):
    """Potential psi and field B = d(psi) with d*B = masked phi on the box.

    phi must be (to tolerance) in the coexact subspace; otherwise the
    divergence compatibility fails and the continuum identity
    d* psi = 0 has no discrete counterpart, so we refuse to proceed.
    """
    grid = domain.grid
    emask = _edge_mask_flat(domain)
    r = emask * phi.values
    scale = float(np.linalg.norm(r))
    if scale == 0.0:
        zero1 = FormField(1, grid)
        return zero1, FormField(2, grid)
    div = _d0t(r, grid)
    if np.linalg.norm(div) > compat_tol * scale / min(grid.spacing):
        raise SolverError(
            "source is not in the coexact subspace: masked divergence "
            f"residual {np.linalg.norm(div):.3e} exceeds tolerance",
            residual=float(np.linalg.norm(div)),
        )
    psi, _, _ = solve_box_poisson_1form(r, grid, tol=tol)
    B = exterior_derivative(FormField(1, grid, psi))
    return FormField(1, grid, psi), B


def reconstruct_alpha1(pa1, domain, tol=DEFAULT_TOL):
    """Face 2-form alpha1 with d*alpha1 = PA1, d(alpha1) = 0, normal part 0.

    alpha1 is built as d(eta) for an edge potential eta, so closedness
    is exact by d(d(.)) = 0 and the codifferential residual is the CG
    residual.  Raises if PA1 is not in the coexact subspace.
    """
    grid = domain.grid
    emask = _edge_mask_flat(domain)
    fmask = _face_mask_flat(domain)
    target = emask * pa1.values
    scale = float(np.linalg.norm(target))
    if scale == 0.0:
        return FormField(2, grid)

    def apply_A(eta):
        return emask * _d1t(fmask * _d1(emask * eta, grid), grid)

    try:
        eta, _, _ = cg(apply_A, target, tol=tol, name="reconstruct_alpha1")
    except SolverError as err:
        raise SolverError(
            "alpha1 reconstruction did not converge; input may not be in "
            f"the coexact subspace ({err})",
            residual=err.residual,
        ) from err
    alpha1 = FormField(2, grid, fmask * _d1(emask * eta, grid))
    return alpha1


def codifferential_residuals(alpha1, pa1, domain):
    """Report (||d*alpha1 - PA1||, ||d alpha1 on Omega||) for certificates."""
    grid = domain.grid
    emask = _edge_mask_flat(domain)
    dstar = emask * _d1t(_face_mask_flat(domain) * alpha1.values, grid)
    r1 = np.linalg.norm(dstar - emask * pa1.values)
    dal = exterior_derivative(alpha1).components()[0]
    r2 = np.linalg.norm(dal[domain.cell_mask])
    return float(r1), float(r2)
