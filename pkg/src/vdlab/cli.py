"""Command-line entry points: solve, critical, check, compare-axi.

Every run writes its fields, a certificate JSON, and a manifest that
echoes the configuration, library versions, per-run certificate
summaries and timing, so results are reproducible from the manifest
alone.  Exit codes: 0 on success with all certificate tolerances met,
2 on configuration errors, 3 on solver errors (partial artifacts are
flagged in the manifest).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

import functools

import vdlab
from vdlab.common import SolverError
from vdlab.config import (
    ConfigError,
    build_domain,
    build_forcing,
    build_grid,
    build_trap,
    parse_config,
)
from vdlab.fieldio import export_slice_csv, load_field, save_field, write_gnuplot_script


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return str(obj)


def _cert_dict(cert):
    d = dataclasses.asdict(cert)
    d.pop("extras", None)
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
            for k, v in d.items()}


def write_manifest(out_dir, cfg, entries, timing, ok, note=""):
    manifest = {
        "tool": "vdlab",
        "version": vdlab.__version__,
        "numpy": np.__version__,
        "config": cfg.raw,
        "seed": cfg.seed,
        "certificates": entries,
        "timing_seconds": timing,
        "success": bool(ok),
        "note": note,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
    return path


def _gp_step_scale(cfg):
    return cfg.step_scale if cfg.step_scale > 0 else 50.0


def _solve_one_gp(cfg, trap, c):
    from vdlab.gp import solve_G

    phi = build_forcing(cfg, trap.grid, c=c)
    sol = solve_G(trap, phi, tol=cfg.gap_tol, max_iter=cfg.max_iter,
                  tv_mode=cfg.tv_mode, step_scale=_gp_step_scale(cfg))
    return sol


def _solve_one_gl(cfg, problem, c):
    from vdlab.gl import solve_F

    scaled = problem.scaled(c)
    sol = solve_F(scaled, step_scale=cfg.step_scale if cfg.step_scale > 0 else 40.0)
    return sol


def _certificate_ok(cert, gap_tol):
    checks = [cert.gap <= gap_tol * (1.0 + abs(getattr(cert, "energy", 0.0)))
              or cert.gap <= getattr(cert, "gap_tol", np.inf)]
    checks.append(getattr(cert, "converged", True))
    for name in ("stationarity_residual", "saturation_residual",
                 "field_eqn_residual"):
        if hasattr(cert, name):
            checks.append(getattr(cert, name) <= 1e-4 * cert.scale)
    return all(checks)


def _run_sweep(worker, cs, threads):
    """Run independent solves, optionally across processes.

    Results are keyed by the forcing strength, so the output is
    independent of pool size and scheduling order.
    """
    if threads <= 1 or len(cs) <= 1:
        return [worker(c) for c in cs]
    import multiprocessing as mp

    with mp.get_context("spawn").Pool(min(threads, len(cs))) as pool:
        return pool.map(worker, cs)


def cmd_solve(cfg, out_dir):
    t_start = time.time()
    entries = {}
    ok = True
    cs = list(cfg.sweep) if cfg.sweep else [cfg.c]
    threads = cfg.effective_threads()

    if cfg.kind in ("gp", "gp_high"):
        grid = build_grid(cfg)
        trap = build_trap(cfg, grid)
        if cfg.kind == "gp_high":
            from vdlab.gp import solve_G_tilde

            for c in cs:
                phi = build_forcing(cfg, grid, c=c)
                v0, report = solve_G_tilde(trap, phi, run_pdhg_check=False)
                save_field(os.path.join(out_dir, f"v0_{c:g}.vdf"), v0)
                entries[f"c={c:g}"] = {
                    "mean_vorticity": report["mean_vorticity"],
                    "max_deviation": report["max_deviation"],
                }
            write_manifest(out_dir, cfg, entries, time.time() - t_start, ok)
            return 0
        sols = _run_sweep(functools.partial(_solve_one_gp, cfg, trap), cs, threads)
        for c, sol in zip(cs, sols):
            tag = f"c={c:g}"
            save_field(os.path.join(out_dir, f"v0_{c:g}.vdf"), sol.v0)
            save_field(os.path.join(out_dir, f"j0_{c:g}.vdf"), sol.j0)
            save_field(os.path.join(out_dir, f"beta0_{c:g}.vdf"), sol.beta0)
            export_slice_csv(os.path.join(out_dir, f"v0_{c:g}_slice.csv"), sol.v0)
            write_gnuplot_script(
                os.path.join(out_dir, f"v0_{c:g}_slice.gp"),
                f"v0_{c:g}_slice.csv", title=f"v0 component, {tag}",
            )
            entries[tag] = _cert_dict(sol.certificate)
            ok &= _certificate_ok(sol.certificate, cfg.gap_tol)
    elif cfg.kind == "gl":
        from vdlab.gl import GLProblem

        grid = build_grid(cfg)
        domain = build_domain(cfg, grid)
        problem = GLProblem(domain=domain, a_ex=build_forcing(cfg, grid, c=1.0),
                            gap_tol=cfg.gap_tol, cg_tol=cfg.cg_tol,
                            max_iter=cfg.max_iter, tv_mode=cfg.tv_mode)
        sols = _run_sweep(functools.partial(_solve_one_gl, cfg, problem), cs,
                          threads)
        for c, sol in zip(cs, sols):
            tag = f"c={c:g}"
            save_field(os.path.join(out_dir, f"v0_{c:g}.vdf"), sol.v0)
            save_field(os.path.join(out_dir, f"a0_{c:g}.vdf"), sol.a0)
            save_field(os.path.join(out_dir, f"b0_{c:g}.vdf"), sol.b0)
            export_slice_csv(os.path.join(out_dir, f"b0_{c:g}_slice.csv"), sol.b0, comp=2)
            write_gnuplot_script(
                os.path.join(out_dir, f"b0_{c:g}_slice.gp"),
                f"b0_{c:g}_slice.csv", title=f"B0 axial component, {tag}",
            )
            entries[tag] = _cert_dict(sol.certificate)
            ok &= _certificate_ok(sol.certificate, cfg.gap_tol)
    elif cfg.kind in ("axi_g", "axi_f"):
        from vdlab.axisym import AxiProblem, Grid2D, solve_F_red, solve_G_red

        half = cfg.radius * cfg.box_factor
        n = cfg.resolution[0]
        grid2 = Grid2D(0.0, half, -half, half, n, n)
        r, z = grid2.cell_centers()
        if cfg.kind == "axi_g":
            rho = np.maximum(cfg.radius**2 - r * r - z * z, 0.0)
            rho[0, :] = 0.0
        else:
            rho = ((r * r + z * z) < cfg.radius**2).astype(float)
            rho[0, :] = 0.0
        for c in cs:
            tag = f"c={c:g}"
            prob2 = AxiProblem(grid=grid2, rho=rho, phi=0.5 * c * r * r,
                               tv_weight_rho=(cfg.kind == "axi_g"),
                               tv_mode="anisotropic")
            if cfg.kind == "axi_g":
                sol = solve_G_red(prob2, tol=cfg.gap_tol, max_iter=cfg.max_iter,
                                  step_scale=cfg.step_scale or 1000.0)
            else:
                sol = solve_F_red(prob2, tol=cfg.gap_tol, max_iter=cfg.max_iter,
                                  step_scale=cfg.step_scale or 100.0)
            np.save(os.path.join(out_dir, f"w0_{c:g}.npy"), sol.w0)
            entries[tag] = _cert_dict(sol.certificate)
            ok &= sol.certificate.converged
    else:
        raise ConfigError(f"solve does not support kind {cfg.kind!r}")

    write_manifest(out_dir, cfg, entries, time.time() - t_start, ok)
    return 0 if ok else 3


def cmd_critical(cfg, out_dir):
    t_start = time.time()
    report = {}
    ok = True
    if cfg.kind == "gp":
        from vdlab.gp import critical_rotation, solve_G
        from vdlab.grids import exterior_derivative, grouped_tv

        grid = build_grid(cfg)
        trap = build_trap(cfg, grid)
        phi1 = build_forcing(cfg, grid, c=1.0)
        norm, c_star, sub, res = critical_rotation(trap, phi1, tol=cfg.norm_tol)
        report["norm_at_c1"] = norm
        report["c_star"] = c_star
        report["subcritical_at_c1"] = bool(sub)
        report["bracket"] = [res.lower, res.upper]
        report["c_star_definition_check"] = (
            abs(c_star * 2 * norm - 1.0) if c_star else 0.0
        )
        if cfg.sweep:
            rows = []
            for c in cfg.sweep:
                sol = _solve_one_gp(cfg, trap, c)
                dphi = exterior_derivative(build_forcing(cfg, grid, c=c))
                delta = 1e-3 * grouped_tv(dphi, trap.omega_mask, weight=trap.rho)
                rows.append({
                    "c": c,
                    "predicted_subcritical": bool(c * norm <= 0.5),
                    "vorticity_mass": sol.certificate.vorticity_mass,
                    "delta_vort": delta,
                    "direct_subcritical": bool(
                        sol.certificate.vorticity_mass <= delta
                    ),
                })
                ok &= rows[-1]["predicted_subcritical"] == rows[-1]["direct_subcritical"]
            report["sweep"] = rows
    elif cfg.kind == "gl":
        from vdlab.gl import GLProblem, critical_predicates, solve_F
        from vdlab.grids import grouped_tv

        grid = build_grid(cfg)
        domain = build_domain(cfg, grid)
        problem = GLProblem(domain=domain, a_ex=build_forcing(cfg, grid, c=1.0),
                            gap_tol=cfg.gap_tol, cg_tol=cfg.cg_tol,
                            max_iter=cfg.max_iter, tv_mode=cfg.tv_mode)
        rep = critical_predicates(problem, norm_tol=cfg.norm_tol)
        report["norm_bstar"] = rep.norm_bstar
        report["norm_alpha1"] = rep.norm_alpha1
        report["verdicts_agree"] = rep.verdict_bstar == rep.verdict_alpha1
        report["c_star"] = rep.threshold_c
        report["brackets"] = rep.brackets
        if cfg.sweep:
            rows = []
            for c in cfg.sweep:
                sol = _solve_one_gl(cfg, problem, c)
                delta = 1e-3 * grouped_tv(
                    problem.scaled(c).h_ex(), domain, mode=cfg.tv_mode
                )
                rows.append({
                    "c": c,
                    "predicted_subcritical": bool(c * rep.norm_alpha1 <= 0.5),
                    "vorticity_mass": sol.certificate.vorticity_mass,
                    "delta_vort": delta,
                    "direct_subcritical": bool(
                        sol.certificate.vorticity_mass <= delta
                    ),
                })
                ok &= rows[-1]["predicted_subcritical"] == rows[-1]["direct_subcritical"]
            report["sweep"] = rows
    else:
        raise ConfigError(f"critical does not support kind {cfg.kind!r}")

    with open(os.path.join(out_dir, "critical.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
    write_manifest(out_dir, cfg, {"critical": report}, time.time() - t_start, ok)
    return 0 if ok else 3


def cmd_check(cfg, out_dir, artifacts_dir):
    """Re-verify saved solution fields against the configured tolerances."""
    t_start = time.time()
    results = {}
    ok = True
    cs = list(cfg.sweep) if cfg.sweep else [cfg.c]
    if cfg.kind == "gp":
        from vdlab.grids import exterior_derivative, grouped_tv
        from vdlab.hodge import rho_on_edges

        grid = build_grid(cfg)
        trap = build_trap(cfg, grid)
        dom = trap.omega_mask
        for c in cs:
            path = os.path.join(artifacts_dir, f"v0_{c:g}.vdf")
            v0 = load_field(path)
            if v0.grid.resolution != grid.resolution:
                raise ConfigError(f"{path}: resolution mismatch with config")
            phi = build_forcing(cfg, grid, c=c)
            re = rho_on_edges(dom, trap.rho)
            vol = grid.cell_volume
            wr = vol * re
            tv_rho = grouped_tv(exterior_derivative(v0), dom, weight=trap.rho,
                                mode=cfg.tv_mode)
            stat = 0.5 * tv_rho + float(
                np.sum(wr * v0.values * (v0.values - phi.values))
            )
            scale = 1.0 + tv_rho + abs(
                0.5 * float(np.sum(wr * (v0.values - phi.values) ** 2))
            )
            good = abs(stat) <= 1e-4 * scale
            results[f"c={c:g}"] = {"stationarity_residual": abs(stat),
                                   "scale": scale, "ok": bool(good)}
            ok &= good
    else:
        raise ConfigError(f"check supports gp solutions for now, not {cfg.kind!r}")
    with open(os.path.join(out_dir, "check.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True, default=_json_default)
    write_manifest(out_dir, cfg, results, time.time() - t_start, ok)
    return 0 if ok else 3


def cmd_compare_axi(cfg, out_dir):
    from vdlab.axisym import compare_3d_axisym, reduced_from_trap, solve_G_red

    t_start = time.time()
    grid = build_grid(cfg)
    trap = build_trap(cfg, grid)
    sol3 = _solve_one_gp(cfg, trap, cfg.c)
    prob2 = reduced_from_trap(trap, cfg.c, nr=4 * cfg.resolution[0],
                              nz=4 * cfg.resolution[0], tv_mode="isotropic")
    sol2 = solve_G_red(prob2, tol=min(cfg.gap_tol, 1e-8),
                       max_iter=cfg.max_iter, step_scale=1000.0)
    rep = compare_3d_axisym(sol3, sol2)
    with open(os.path.join(out_dir, "compare_axi.json"), "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True, default=_json_default)
    ok = rep["energy_rel_diff"] <= 0.05
    write_manifest(out_dir, cfg, {"compare_axi": rep}, time.time() - t_start, ok)
    return 0 if ok else 3


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="vdlab",
        description="Vortex-density variational solvers: superconductor "
        "fields and condensate rotation, with duality certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "critical", "check", "compare-axi"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=0)
        p.add_argument("--box-factor", type=float, default=None)
        p.add_argument("--sweep", default=None,
                       help="space-separated forcing strengths")
        if name == "check":
            p.add_argument("--artifacts", required=True,
                           help="directory holding saved fields")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.box_factor is not None:
            cfg.box_factor = args.box_factor
        if args.sweep is not None:
            cfg.sweep = tuple(float(v) for v in args.sweep.split())
            if list(cfg.sweep) != sorted(cfg.sweep):
                raise ConfigError("sweep must be sorted ascending")
        if args.threads:
            cfg.threads = args.threads
        out_dir = args.out or cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
    except ConfigError as err:
        print(f"vdlab: config error: {err}", file=sys.stderr)
        diag = {"error": "config", "message": str(err)}
        try:
            out = args.out or "."
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "error.json"), "w") as fh:
                json.dump(diag, fh, indent=2)
        except OSError:
            pass
        return 2

    np.random.seed(cfg.seed)  # module-level probes stay reproducible
    try:
        if args.command == "solve":
            return cmd_solve(cfg, out_dir)
        if args.command == "critical":
            return cmd_critical(cfg, out_dir)
        if args.command == "check":
            return cmd_check(cfg, out_dir, args.artifacts)
        if args.command == "compare-axi":
            return cmd_compare_axi(cfg, out_dir)
    except ConfigError as err:
        print(f"vdlab: config error: {err}", file=sys.stderr)
        with open(os.path.join(out_dir, "error.json"), "w") as fh:
            json.dump({"error": "config", "message": str(err)}, fh, indent=2)
        return 2
    except SolverError as err:
        print(f"vdlab: solver error: {err}", file=sys.stderr)
        with open(os.path.join(out_dir, "error.json"), "w") as fh:
            json.dump(
                {"error": "solver", "message": str(err),
                 "residual": getattr(err, "residual", None),
                 "bracket": getattr(err, "bracket", None)},
                fh, indent=2, default=_json_default,
            )
        return 3
    return 2


if __name__ == "__main__":
    sys.exit(main())
