"""Rotationally symmetric reduction: 2D weighted ROF solvers on the
(r, z) half-plane, classical obstacle certification, vortex curves.

For a velocity v = w(r,z) dtheta the condensate energy reduces to

    Gred(w) = 1/2 int rho~ ( |grad w| + (w - phi)^2 / r ) dr dz,

and the superconductor energy to the joint functional

    Fred(w,b) = 1/2 int_Omega~ |grad w| + (w-b)^2/r
                + 1/2 int_{r>0} |grad(b - phi)|^2 / r.

Scalars live at cell centers; gradients on interior edges.  Total
variation is the edge-based anisotropic one, so the discrete coarea
formula is exact: the level-set perimeter terms of the thresholded
fields integrate in t exactly to the TV of w, which is what the
contact-curve certificates rely on.  The isotropic variant is kept
behind a flag for comparison runs.

The axis r = 0 carries the 1/r quadratic weight; problems must keep a
collar (rho~ or the mask vanishing on the first cell column) unless
the grid starts at r > 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vdlab.tvopt import DualBlock, SaddleProblem, pdhg_solve

# ---------------------------------------------------------------------------
# 2D grid plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell grid on [r_lo, r_hi] x [z_lo, z_hi]."""

    r_lo: float
    r_hi: float
    z_lo: float
    z_hi: float
    nr: int
    nz: int

    @property
    def hr(self):
        return (self.r_hi - self.r_lo) / self.nr

    @property
    def hz(self):
        return (self.z_hi - self.z_lo) / self.nz

    @property
    def area(self):
        return self.hr * self.hz

    def cell_centers(self):
        r = self.r_lo + self.hr * (np.arange(self.nr) + 0.5)
        z = self.z_lo + self.hz * (np.arange(self.nz) + 0.5)
        return np.meshgrid(r, z, indexing="ij")

    def refine(self):
        return Grid2D(self.r_lo, self.r_hi, self.z_lo, self.z_hi,
                      2 * self.nr, 2 * self.nz)


def grad2d(w, grid):
    """Forward differences between adjacent cells: (r-edges, z-edges)."""
    return np.diff(w, axis=0) / grid.hr, np.diff(w, axis=1) / grid.hz


def grad2d_t(gr, gz, grid):
    """Plain transpose of grad2d."""
    out = np.zeros((grid.nr, grid.nz))
    out[:-1, :] -= gr / grid.hr
    out[1:, :] += gr / grid.hr
    out[:, :-1] -= gz / grid.hz
    out[:, 1:] += gz / grid.hz
    return out


def edge_average(c, axis):
    """Average a cell quantity onto the interior edges along one axis."""
    if axis == 0:
        return 0.5 * (c[:-1, :] + c[1:, :])
    return 0.5 * (c[:, :-1] + c[:, 1:])


@dataclass
class AxiProblem:
    """Reduced problem data on the (r, z) half-plane."""

    grid: Grid2D
    rho: np.ndarray  # cell samples of the reduced weight (>= 0)
    phi: np.ndarray  # cell samples of the dtheta forcing coefficient
    tv_weight_rho: bool = True  # Gred weights TV by rho; Fred does not
    tv_mode: str = "anisotropic"  # per-edge L1 (exact coarea) or cell-grouped

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.rho.shape != (self.grid.nr, self.grid.nz):
            raise ValueError("rho shape mismatch")
        if np.any(self.rho < 0):
            raise ValueError("rho must be nonnegative")
        r, _ = self.grid.cell_centers()
        if self.grid.r_lo <= 0.0 and np.any(self.rho[0, :] > 0):
            raise ValueError(
                "axis collar violated: rho must vanish on the first cell "
                "column when the grid touches r = 0"
            )
        self.r_cells = r
        self.mask = self.rho > 0

    def quad_weight(self):
        """Cell weight of the quadratic term: area * rho / r."""
        return self.grid.area * self.rho / self.r_cells

    def tv_edge_weights(self):
        """Per-edge TV weights on interior-interior edges.

        Weighted variant: area times the mean of rho over the two
        cells; unweighted: area.  Edges straddling the boundary are
        dropped (their weight is O(rho) there, vanishing linearly), so
        the dual certificate never leaks onto exterior cells.
        """
        m = self.mask
        live_r = (m[:-1, :] & m[1:, :]).astype(float)
        live_z = (m[:, :-1] & m[:, 1:]).astype(float)
        if self.tv_weight_rho:
            wr = edge_average(self.rho, 0) * live_r
            wz = edge_average(self.rho, 1) * live_z
        else:
            wr, wz = live_r, live_z
        return self.grid.area * wr, self.grid.area * wz

    def live_edges(self):
        m = self.mask
        return (m[:-1, :] & m[1:, :]), (m[:, :-1] & m[:, 1:])

    def tv_cell_weights(self):
        w = self.rho if self.tv_weight_rho else self.mask.astype(float)
        return self.grid.area * w


def cell_grad(w, problem):
    """Live-edge gradients half-summed to cell centers: (2, nr, nz).

    The mirror of the 3D face-averaged vorticity carrier: each live
    interior edge contributes half its difference quotient to its two
    cells, so the grouped magnitude never reads values outside the
    sample.
    """
    gr, gz = grad2d(w, problem.grid)
    lr, lz = problem.live_edges()
    out = np.zeros((2,) + w.shape)
    out[0][:-1, :] += 0.5 * gr * lr
    out[0][1:, :] += 0.5 * gr * lr
    out[1][:, :-1] += 0.5 * gz * lz
    out[1][:, 1:] += 0.5 * gz * lz
    return out


def cell_grad_t(y, problem):
    """Plain transpose of cell_grad."""
    lr, lz = problem.live_edges()
    gr = 0.5 * (y[0][:-1, :] + y[0][1:, :]) * lr
    gz = 0.5 * (y[1][:, :-1] + y[1][:, 1:]) * lz
    return grad2d_t(gr, gz, problem.grid)


def tv2d(w, problem, mode=None):
    """Weighted total variation of a cell scalar (mode of the problem)."""
    mode = mode or problem.tv_mode
    if mode == "anisotropic":
        gr, gz = grad2d(w, problem.grid)
        wr, wz = problem.tv_edge_weights()
        return float(np.sum(wr * np.abs(gr)) + np.sum(wz * np.abs(gz)))
    y = cell_grad(w, problem)
    return float(np.sum(problem.tv_cell_weights() * np.hypot(y[0], y[1])))


# ---------------------------------------------------------------------------
# reduced condensate solve
# ---------------------------------------------------------------------------


@dataclass
class AxiCertificate:
    energy: float
    gap: float
    gap_tol: float
    tv_mass: float
    stationarity_residual: float
    ball_feasibility: float
    iterations: int
    converged: bool
    scale: float
    extras: dict = field(default_factory=dict)


@dataclass
class AxiSolution:
    w0: np.ndarray
    b0: np.ndarray | None
    p_edges: tuple  # feasible TV dual certificate (r-edges, z-edges)
    certificate: AxiCertificate
    problem: AxiProblem


def _gred_saddle(problem):
    grid = problem.grid
    shape = (grid.nr, grid.nz)
    n = grid.nr * grid.nz
    wq = problem.quad_weight().ravel()
    phim = np.where(problem.mask, problem.phi, 0.0).ravel()

    if problem.tv_mode == "anisotropic":
        wr, wz = problem.tv_edge_weights()
        rr, rz = 0.5 * wr, 0.5 * wz
        nr_e = rr.size

        def op(x):
            gr, gz = grad2d(x.reshape(shape), grid)
            return np.concatenate([gr.ravel(), gz.ravel()])

        def op_t(y):
            gr = y[:nr_e].reshape(rr.shape)
            gz = y[nr_e:].reshape(rz.shape)
            return grad2d_t(gr, gz, grid).ravel()

        def prox_conj(p, sigma):
            out = np.empty_like(p)
            out[:nr_e] = np.clip(p[:nr_e], -rr.ravel(), rr.ravel())
            out[nr_e:] = np.clip(p[nr_e:], -rz.ravel(), rz.ravel())
            return out

        def f_eval(y):
            return float(
                np.dot(rr.ravel(), np.abs(y[:nr_e]))
                + np.dot(rz.ravel(), np.abs(y[nr_e:]))
            )

        y_size = rr.size + rz.size
        radii = (rr, rz)
    else:
        rc = 0.5 * problem.tv_cell_weights()

        def op(x):
            return cell_grad(x.reshape(shape), problem).ravel()

        def op_t(y):
            return cell_grad_t(y.reshape((2,) + shape), problem).ravel()

        def prox_conj(p, sigma):
            y = p.reshape((2,) + shape)
            mag = np.hypot(y[0], y[1])
            scale = np.ones_like(mag)
            np.divide(rc, mag, out=scale, where=mag > rc)
            np.minimum(scale, 1.0, out=scale)
            return (y * scale).ravel()

        def f_eval(y):
            yy = y.reshape((2,) + shape)
            return float(np.sum(rc * np.hypot(yy[0], yy[1])))

        y_size = 2 * n
        radii = (rc,)

    def prox_g(x, tau):
        return (x + tau * wq * phim) / (1.0 + tau * wq)

    def primal_energy(x):
        return 0.5 * float(np.sum(wq * (x - phim) ** 2)) + f_eval(op(x))

    def dual_energy(ys):
        p = prox_conj(ys[0], 0.0)
        dist = float(np.linalg.norm(p - ys[0]))
        s = op_t(p)
        quad = 0.5 * float(
            np.sum(np.divide(s * s, wq, out=np.zeros_like(s), where=wq > 0))
        )
        infeas = float(np.linalg.norm(s[wq == 0]))
        return -float(np.dot(s, phim)) + quad, dist + infeas

    block = DualBlock(op=op, op_t=op_t, prox_conj=prox_conj, f_eval=f_eval,
                      y_size=y_size, name="tv2d")
    return SaddleProblem(
        x_size=n, blocks=[block], prox_g=prox_g, primal_energy=primal_energy,
        dual_energy=dual_energy,
        meta={"wq": wq, "phim": phim, "radii": radii, "shape": shape,
              "prox_conj": prox_conj},
    )


def solve_G_red(problem, tol=1e-7, max_iter=200000, step_scale=20.0,
                check_every=500, verbose=False):
    """Minimize the reduced condensate energy; certify gap and scaling
    stationarity."""
    saddle = _gred_saddle(problem)
    shape = saddle.meta["shape"]
    wq = saddle.meta["wq"]
    phim = saddle.meta["phim"]
    x0 = phim.copy()
    sol = pdhg_solve(saddle, tol=tol, max_iter=max_iter, x0=x0,
                     check_every=check_every, verbose=verbose,
                     step_scale=step_scale)
    w0 = sol.primal.reshape(shape)
    p_flat = saddle.meta["prox_conj"](sol.dual[0], 0.0)
    if problem.tv_mode == "anisotropic":
        rr, rz = saddle.meta["radii"]
        nr_e = rr.size
        p = (p_flat[:nr_e].reshape(rr.shape), p_flat[nr_e:].reshape(rz.shape))
        with np.errstate(invalid="ignore"):
            feas = max(
                float(np.max(np.abs(p[0][rr > 0]) / rr[rr > 0])) if (rr > 0).any() else 0.0,
                float(np.max(np.abs(p[1][rz > 0]) / rz[rz > 0])) if (rz > 0).any() else 0.0,
            )
    else:
        (rc,) = saddle.meta["radii"]
        pc = p_flat.reshape((2,) + shape)
        p = (pc,)
        mag = np.hypot(pc[0], pc[1])
        feas = float(np.max(mag[rc > 0] / rc[rc > 0])) if (rc > 0).any() else 0.0
    tv = tv2d(w0, problem)
    stat = 0.5 * tv + float(np.sum(wq * sol.primal * (sol.primal - phim)))
    scale = 1.0 + abs(sol.primal_energy) + tv
    cert = AxiCertificate(
        energy=sol.primal_energy, gap=sol.gap,
        gap_tol=tol * (1 + abs(sol.primal_energy)), tv_mass=tv,
        stationarity_residual=abs(stat), ball_feasibility=feas,
        iterations=sol.iterations, converged=sol.converged, scale=scale,
    )
    return AxiSolution(w0=w0, b0=None, p_edges=p, certificate=cert,
                       problem=problem)


# ---------------------------------------------------------------------------
# reduced superconductor solve
# ---------------------------------------------------------------------------


def _fred_saddle(problem):
    """Joint (w, b) saddle for the reduced field energy.

    Unknowns are w on sample cells and zeta = b - phi on all cells with
    r > 0; the field quadratic carries the 1/r weight on edges.
    """
    grid = problem.grid
    shape = (grid.nr, grid.nz)
    n = grid.nr * grid.nz
    area = grid.area
    mask = problem.mask.astype(float).ravel()
    r_cells = problem.r_cells
    w_quad = area * mask / r_cells.ravel()  # coupling weight on sample cells
    phim = problem.phi.ravel()
    # TV of w: unweighted on interior sample edges
    mr = np.minimum(problem.mask[:-1, :], problem.mask[1:, :]).astype(float)
    mz = np.minimum(problem.mask[:, :-1], problem.mask[:, 1:]).astype(float)
    rr, rz = 0.5 * area * mr, 0.5 * area * mz
    nr_e, nz_e = rr.size, rz.size
    # field weights: area / r on edges
    re_r = edge_average(r_cells, 0)
    re_z = edge_average(r_cells, 1)
    fw_r, fw_z = area / re_r, area / re_z

    def op_tv(x):
        gr, gz = grad2d(x[:n].reshape(shape), grid)
        return np.concatenate([gr.ravel(), gz.ravel()])

    def op_tv_t(y):
        gr = y[:nr_e].reshape(rr.shape)
        gz = y[nr_e:].reshape(rz.shape)
        out = np.zeros(2 * n)
        out[:n] = grad2d_t(gr, gz, grid).ravel()
        return out

    def op_field(x):
        gr, gz = grad2d(x[n:].reshape(shape), grid)
        return np.concatenate([gr.ravel(), gz.ravel()])

    def op_field_t(y):
        gr = y[:nr_e].reshape(rr.shape)
        gz = y[nr_e:].reshape(rz.shape)
        out = np.zeros(2 * n)
        out[n:] = grad2d_t(gr, gz, grid).ravel()
        return out

    def prox_tv_conj(p, sigma):
        out = np.empty_like(p)
        out[:nr_e] = np.clip(p[:nr_e], -rr.ravel(), rr.ravel())
        out[nr_e:] = np.clip(p[nr_e:], -rz.ravel(), rz.ravel())
        return out

    fw = np.concatenate([fw_r.ravel(), fw_z.ravel()])

    def prox_field_conj(q, sigma):
        return q * fw / (fw + sigma)

    def f_tv(y):
        return float(
            np.dot(rr.ravel(), np.abs(y[:nr_e])) + np.dot(rz.ravel(), np.abs(y[nr_e:]))
        )

    def f_field(y):
        return 0.5 * float(np.sum(fw * y * y))

    def prox_g(x, tau):
        w, zeta = x[:n], x[n:]
        r = mask * (w - zeta - phim) / (1.0 + 2.0 * tau * w_quad)
        out = np.empty_like(x)
        out[:n] = w - tau * w_quad * r
        out[n:] = zeta + tau * w_quad * r
        return out

    def primal_energy(x):
        w, zeta = mask * x[:n], x[n:]
        quad = 0.5 * float(np.sum(w_quad * (mask * (w - zeta - phim)) ** 2))
        return quad + f_tv(op_tv(x)) + f_field(op_field(x))

    def dual_energy(ys):
        p = prox_tv_conj(ys[0], 0.0)
        dist = float(np.linalg.norm(p - ys[0]))
        q = ys[1]
        s_w = op_tv_t(p)[:n]
        s_z = op_field_t(q)[n:]
        # feasibility: s_z must equal -s_w on sample cells and vanish off
        r = -s_w - s_z
        # repair through the weighted 2D Poisson problem in zeta
        rnorm = np.linalg.norm(r)
        if rnorm > 1e-13 * max(np.linalg.norm(s_w), 1.0):
            from vdlab.common import cg

            def apply_L(zeta_flat):
                y = op_field(np.concatenate([np.zeros(n), zeta_flat]))
                return op_field_t(fw * y)[n:]

            psi, _, _ = cg(apply_L, r, tol=1e-11,
                           atol=1e-13 * max(rnorm, 1.0), name="fred repair",
                           accept=1e-4)
            dq = fw * op_field(np.concatenate([np.zeros(n), psi]))
            q = q + dq
            dist += float(np.linalg.norm(dq))
            s_z = op_field_t(q)[n:]
        s = -s_z  # = s_w after repair, on sample cells
        val = float(
            np.sum(
                mask * (-s * phim)
                + np.divide(s * s, 2.0 * w_quad, out=np.zeros_like(s), where=w_quad > 0)
            )
        )
        val += 0.5 * float(np.sum(np.divide(q * q, fw, out=np.zeros_like(q), where=fw > 0)))
        return val, dist

    blocks = [
        DualBlock(op=op_tv, op_t=op_tv_t, prox_conj=prox_tv_conj, f_eval=f_tv,
                  y_size=nr_e + nz_e, name="tv2d"),
        DualBlock(op=op_field, op_t=op_field_t, prox_conj=prox_field_conj,
                  f_eval=f_field, y_size=nr_e + nz_e, name="field2d"),
    ]
    return SaddleProblem(
        x_size=2 * n, blocks=blocks, prox_g=prox_g,
        primal_energy=primal_energy, dual_energy=dual_energy,
        meta={"shape": shape, "radii": (rr, rz), "n": n, "w_quad": w_quad,
              "mask": mask},
    )


def solve_F_red(problem, tol=1e-7, max_iter=200000, step_scale=20.0,
                check_every=500, verbose=False):
    """Joint reduced superconductor solve; returns (w0, b0) and certificate."""
    saddle = _fred_saddle(problem)
    shape = saddle.meta["shape"]
    n = saddle.meta["n"]
    rr, rz = saddle.meta["radii"]
    sol = pdhg_solve(saddle, tol=tol, max_iter=max_iter,
                     check_every=check_every, verbose=verbose,
                     step_scale=step_scale)
    w0 = (saddle.meta["mask"] * sol.primal[:n]).reshape(shape)
    b0 = (sol.primal[n:] + problem.phi.ravel()).reshape(shape)
    nr_e = rr.size
    p = (
        np.clip(sol.dual[0][:nr_e].reshape(rr.shape), -rr, rr),
        np.clip(sol.dual[0][nr_e:].reshape(rz.shape), -rz, rz),
    )
    gr, gz = grad2d(w0, problem.grid)
    tv = 2.0 * (float(np.sum(rr * np.abs(gr))) + float(np.sum(rz * np.abs(gz))))
    wq = saddle.meta["w_quad"]
    stat = 0.5 * tv + float(
        np.sum(wq * sol.primal[:n] * (sol.primal[:n] - sol.primal[n:] - problem.phi.ravel()))
    )
    scale = 1.0 + abs(sol.primal_energy) + tv
    cert = AxiCertificate(
        energy=sol.primal_energy, gap=sol.gap,
        gap_tol=tol * (1 + abs(sol.primal_energy)), tv_mass=tv,
        stationarity_residual=abs(stat), ball_feasibility=1.0,
        iterations=sol.iterations, converged=sol.converged, scale=scale,
    )
    return AxiSolution(w0=w0, b0=b0, p_edges=p, certificate=cert,
                       problem=problem)


# ---------------------------------------------------------------------------
# obstacle certification and contact curves
# ---------------------------------------------------------------------------


@dataclass
class ObstacleReport:
    margin: float  # 1/2 - max pointwise potential ratio (>= -tol)
    max_ratio: float  # max |eta_e| / (area rho_e), bound 1/2
    active_area: float
    active_covers_vorticity: float  # fraction of vortex edges inside the active set
    probe_violations: int


def check_obstacle_2d(solution, active_tol=1e-3, n_probes=100, seed=0):
    """Two-sided obstacle certificate of a reduced condensate solve.

    The dual potential ratio per edge is |eta_e| / (area rho_e) with
    eta the feasible TV certificate; the continuum bound on the
    potential difference over rho is 1/2.  The active set {ratio ~ 1/2}
    must carry the vorticity (the support of grad w0), and the
    pointwise bound implies every sampled test-function inequality.
    """
    problem = solution.problem
    if problem.tv_mode != "anisotropic":
        raise ValueError("obstacle certification uses the edge-based "
                         "(anisotropic) total variation")
    wr, wz = problem.tv_edge_weights()
    pr, pz = solution.p_edges
    # eta/(area rho) per edge: the bound from the ball |eta| <= w/2 is 1/2
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio_r = np.where(wr > 0, np.abs(pr) / wr, 0.0)
        ratio_z = np.where(wz > 0, np.abs(pz) / wz, 0.0)
    max_ratio = max(ratio_r.max(initial=0.0), ratio_z.max(initial=0.0))
    margin = 0.5 - max_ratio

    gr, gz = grad2d(solution.w0, problem.grid)
    live_r, live_z = wr > 0, wz > 0
    vort_r = live_r & (np.abs(gr) > 1e-6 * max(np.abs(gr).max(), 1e-30))
    vort_z = live_z & (np.abs(gz) > 1e-6 * max(np.abs(gz).max(), 1e-30))
    act_r = live_r & (ratio_r >= 0.5 * (1.0 - active_tol))
    act_z = live_z & (ratio_z >= 0.5 * (1.0 - active_tol))
    n_vort = int(vort_r.sum() + vort_z.sum())
    covered = int((vort_r & act_r).sum() + (vort_z & act_z).sum())
    coverage = covered / n_vort if n_vort else 1.0
    active_area = problem.grid.area * float(act_r.sum() + act_z.sum())

    # random test functions: pointwise bound implies the integral bound
    rng = np.random.default_rng(seed)
    s_cells = grad2d_t(pr, pz, problem.grid)  # the source the certificate carries
    violations = 0
    for _ in range(n_probes):
        zeta = rng.standard_normal(solution.w0.shape)
        lhs = float(np.sum(s_cells * zeta))
        gr_z, gz_z = grad2d(zeta, problem.grid)
        rhs = 0.5 * float(np.sum(wr * np.abs(gr_z)) + np.sum(wz * np.abs(gz_z)))
        if lhs > rhs * (1 + 1e-10) + 1e-12:
            violations += 1
    return ObstacleReport(
        margin=margin, max_ratio=max_ratio, active_area=active_area,
        active_covers_vorticity=coverage, probe_violations=violations,
    )


@dataclass
class LevelCurveSet:
    levels: list
    curves: list  # per level: list of polylines [(r, z), ...]
    residuals: list  # per level: normalized contact residual (nan if degenerate)

    def aggregate_residual(self, solution):
        """Exact t-integral of the unnormalized per-level residuals.

        Piecewise-constant in t between sorted cell values, so the sum
        over gaps is the exact integral; by the discrete coarea formula
        it reproduces the scaling-stationarity residual of the solve.
        """
        problem = solution.problem
        w = solution.w0
        vals = np.unique(np.concatenate([[0.0], w.ravel()]))
        mids = 0.5 * (vals[:-1] + vals[1:])
        gaps = np.diff(vals)
        total = 0.0
        for t, dt in zip(mids, gaps):
            total += _level_residual(problem, w, t, normalized=False)[0] * dt
        return total


def _level_residual(problem, w, t, normalized=True):
    if problem.tv_mode != "anisotropic":
        raise ValueError("contact residuals use the edge-based TV (exact coarea)")
    ind = (w > t).astype(float) - (0.0 > t)
    gr, gz = grad2d(ind, problem.grid)
    wr, wz = problem.tv_edge_weights()
    per = 0.5 * float(np.sum(wr * np.abs(gr)) + np.sum(wz * np.abs(gz)))
    wq = problem.quad_weight()
    data = float(np.sum(wq * (w - problem.phi) * ind))
    raw = per + data
    if not normalized:
        return raw, per
    if per <= 0:
        return float("nan"), per
    return raw / per, per


def default_levels(w, mask, n_levels=32):
    """Level sampling rule for the almost-every-t contact property.

    Levels are spaced uniformly in t across the value range on the mask
    (the coarea measure is dt), then snapped to the midpoint of the
    containing gap between adjacent distinct cell values.  Snapping
    keeps levels off value atoms: a plateau of the minimizer is a flat
    region of the total variation and its exact value is the discrete
    version of the measure-zero exceptional t-set.
    """
    live = np.unique(w[mask])
    if live.size < 2:
        return []
    targets = np.linspace(live[0], live[-1], n_levels + 2)[1:-1]
    out = []
    for t in targets:
        k = int(np.clip(np.searchsorted(live, t), 1, live.size - 1))
        out.append(0.5 * (live[k - 1] + live[k]))
    return sorted(set(out))


def extract_vortex_curves(solution, levels=None, n_levels=32):
    """Marching-squares isolines of w0 with per-level contact residuals.

    Degenerate levels (superlevel set empty or covering the whole mask)
    report nan residuals and empty curve lists.
    """
    problem = solution.problem
    w = solution.w0
    if levels is None:
        levels = default_levels(w, problem.mask, n_levels=n_levels)
    curves, residuals = [], []
    r, z = problem.grid.cell_centers()
    for t in levels:
        sup = (w > t) & problem.mask
        if not sup.any() or sup.sum() == problem.mask.sum():
            curves.append([])
            residuals.append(float("nan"))
            continue
        curves.append(marching_squares(w, r[:, 0], z[0, :], t))
        residuals.append(_level_residual(problem, w, t)[0])
    return LevelCurveSet(levels=list(levels), curves=curves, residuals=residuals)


def marching_squares(f, xs, ys, level):
    """Standard 16-case marching squares with linear interpolation.

    f is sampled on the tensor grid (xs, ys); returns a list of
    segments [(x0,y0),(x1,y1)] chained into polylines where endpoints
    coincide.
    """
    segs = []
    nx, ny = f.shape
    for i in range(nx - 1):
        for j in range(ny - 1):
            v = [f[i, j], f[i + 1, j], f[i + 1, j + 1], f[i, j + 1]]
            idx = sum(1 << k for k, val in enumerate(v) if val > level)
            if idx in (0, 15):
                continue
            corners = [
                (xs[i], ys[j]), (xs[i + 1], ys[j]),
                (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1]),
            ]
            edges = {
                0: (0, 1), 1: (1, 2), 2: (2, 3), 3: (3, 0),
            }

            def interp(e):
                a, b = edges[e]
                fa, fb = v[a], v[b]
                t = 0.5 if fb == fa else (level - fa) / (fb - fa)
                ax, ay = corners[a]
                bx, by = corners[b]
                return (ax + t * (bx - ax), ay + t * (by - ay))

            table = {
                1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)],
                5: [(3, 2), (1, 0)], 6: [(0, 2)], 7: [(3, 2)],
                8: [(2, 3)], 9: [(2, 0)], 10: [(2, 1), (0, 3)],
                11: [(2, 1)], 12: [(1, 3)], 13: [(1, 0)], 14: [(0, 3)],
            }
            eps = 1e-12 * (abs(xs[i + 1] - xs[i]) + abs(ys[j + 1] - ys[j]))
            for e1, e2 in table[idx]:
                a, b = interp(e1), interp(e2)
                if abs(a[0] - b[0]) + abs(a[1] - b[1]) > eps:
                    segs.append((a, b))
    if not segs:
        return []
    span = max(abs(xs[-1] - xs[0]), abs(ys[-1] - ys[0]), 1.0)
    return _chain_segments(segs, tol=1e-9 * span)


def _chain_segments(segs, tol=1e-12):
    """Greedy chaining of segments into polylines."""
    if not segs:
        return []
    remaining = [list(s) for s in segs]
    polys = []
    cur = remaining.pop()
    while True:
        extended = False
        for k, s in enumerate(remaining):
            if _close(cur[-1], s[0], tol):
                cur.append(s[1])
                remaining.pop(k)
                extended = True
                break
            if _close(cur[-1], s[1], tol):
                cur.append(s[0])
                remaining.pop(k)
                extended = True
                break
            if _close(cur[0], s[1], tol):
                cur.insert(0, s[0])
                remaining.pop(k)
                extended = True
                break
            if _close(cur[0], s[0], tol):
                cur.insert(0, s[1])
                remaining.pop(k)
                extended = True
                break
        if not extended:
            polys.append(cur)
            if not remaining:
                break
            cur = remaining.pop()
    return polys


def _close(a, b, tol):
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol


# ---------------------------------------------------------------------------
# 3D consistency
# ---------------------------------------------------------------------------


def reduced_from_trap(trap, c, grid2d=None, nr=96, nz=96, tv_mode="anisotropic"):
    """Axisymmetric reduction of a 3D rotation problem on a trap profile.

    Assumes the trap is radially symmetric in (x1, x2): rho~(r, z) is
    resampled from the trap's analytic form lam - a(r, z), and phi is
    the rotation coefficient c r^2 / 2.
    """
    grid3d = trap.grid
    if grid2d is None:
        r_hi = 0.5 * (grid3d.hi[0] - grid3d.lo[0])
        grid2d = Grid2D(0.0, r_hi, grid3d.lo[2], grid3d.hi[2], nr, nz)
    r, z = grid2d.cell_centers()
    rho = np.maximum(trap.lam - (r * r + z * z), 0.0)
    rho[0, :] = 0.0  # axis collar
    phi = 0.5 * c * r * r
    return AxiProblem(grid=grid2d, rho=rho, phi=phi, tv_weight_rho=True,
                      tv_mode=tv_mode)


def c_phi_constant(problem):
    """The forcing constant C(Phi) = 2 pi int (rho/r) phi^2 / 2 dr dz."""
    wq = problem.quad_weight()
    return 2.0 * np.pi * 0.5 * float(np.sum(wq * problem.phi**2))


def compare_3d_axisym(sol3d, sol2d):
    """Energy and field discrepancy between a 3D solve and its reduction.

    Energies compare G_3d against 2 pi E_2d - C(Phi) with the constant
    C(Phi) taken from the 3D quadrature on both sides (the identity
    then reduces to comparing the two shifted solver energies, so the
    O(h^2) quadrature error of the large constant does not pollute the
    small difference).  The 2D and analytic evaluations of C are
    reported alongside.  The velocity is compared through the dtheta
    coefficient sampled on the 3D edge midpoints.
    """
    cphi_2d = c_phi_constant(sol2d.problem)
    cphi_3d = sol3d.certificate.extras["half_phi_sq"]
    e3 = sol3d.certificate.energy
    e2 = 2.0 * np.pi * sol2d.certificate.energy - cphi_3d
    energy_rel = abs(e3 - e2) / max(abs(e3), 1e-30)

    # field discrepancy: w0 interpolated to the 3D edge midpoints
    trap = sol3d.trap
    grid = trap.grid
    dom = trap.omega_mask
    diff2 = 0.0
    norm2 = 0.0
    from vdlab.hodge import rho_on_edges

    re = rho_on_edges(dom, trap.rho)
    v_num = sol3d.v0.components()
    offset = 0
    for comp in range(3):
        x, y, z = grid.entity_coords(1, comp)
        r = np.hypot(x, y)
        w_interp = _bilinear(sol2d.w0, sol2d.problem.grid, r, z)
        # dtheta edge components: (-y/r^2, x/r^2, 0) * w
        with np.errstate(invalid="ignore", divide="ignore"):
            if comp == 0:
                target = np.where(r > 0, -y / r**2, 0.0) * w_interp
            elif comp == 1:
                target = np.where(r > 0, x / r**2, 0.0) * w_interp
            else:
                target = np.zeros_like(r)
        sl = slice(offset, offset + target.size)
        wts = re[sl].reshape(target.shape)
        diff2 += float(np.sum(wts * (v_num[comp] - target) ** 2))
        norm2 += float(np.sum(wts * target**2))
        offset += target.size
    field_rel = np.sqrt(diff2 / max(norm2, 1e-30))
    return {
        "energy_3d": e3,
        "energy_2d_lifted": e2,
        "energy_rel_diff": energy_rel,
        "field_rel_diff": field_rel,
        "c_phi_2d": cphi_2d,
        "c_phi_3d": cphi_3d,
    }


def _bilinear(w, grid2d, r, z):
    """Bilinear sampling of a cell field at arbitrary (r, z) points."""
    rc = (r - grid2d.r_lo) / grid2d.hr - 0.5
    zc = (z - grid2d.z_lo) / grid2d.hz - 0.5
    i0 = np.clip(np.floor(rc).astype(int), 0, grid2d.nr - 2)
    j0 = np.clip(np.floor(zc).astype(int), 0, grid2d.nz - 2)
    fr = np.clip(rc - i0, 0.0, 1.0)
    fz = np.clip(zc - j0, 0.0, 1.0)
    return (
        w[i0, j0] * (1 - fr) * (1 - fz)
        + w[i0 + 1, j0] * fr * (1 - fz)
        + w[i0, j0 + 1] * (1 - fr) * fz
        + w[i0 + 1, j0 + 1] * fr * fz
    )
