"""Run configuration: flat key-value text with sections (INI grammar).

Sections and keys:

    [problem]  kind = gl | gp | gp_high | axi_g | axi_f
    [grid]     resolution = N [N N]; box_factor = 3.0 (box over domain size)
    [domain]   shape = ball | ellipsoid | torus; radius/semiaxes/major/minor;
               maskfile = path (cell mask as a degree-3 field file)
    [trap]     kind = quadratic | coeffs; mass = m; coeffs = cx cy cz
    [forcing]  kind = rotation | uniform_field; c = 1.0; sweep = c1 c2 ...
    [solver]   gap_tol, cg_tol, max_iter, tv_mode, step_scale, norm_tol
    [output]   dir = path
    [run]      seed = 1234; threads = 1

All numeric values are plain floats/ints; the sweep list must be
sorted.  Unknown keys are rejected so typos fail loudly instead of
silently running defaults.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from vdlab.grids import FormField, GridSpec, MaskedDomain

KNOWN_KEYS = {
    "problem": {"kind"},
    "grid": {"resolution", "box_factor", "box"},
    "domain": {"shape", "radius", "semiaxes", "major", "minor", "maskfile",
               "center"},
    "trap": {"kind", "mass", "coeffs"},
    "forcing": {"kind", "c", "sweep"},
    "solver": {"gap_tol", "cg_tol", "max_iter", "tv_mode", "step_scale",
               "norm_tol"},
    "output": {"dir"},
    "run": {"seed", "threads"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    kind: str = "gl"
    resolution: tuple = (16, 16, 16)
    box_factor: float = 3.0
    box: tuple | None = None
    shape: str = "ball"
    radius: float = 1.0
    semiaxes: tuple = (1.0, 1.0, 1.0)
    major: float = 1.0
    minor: float = 0.4
    center: tuple = (0.0, 0.0, 0.0)
    maskfile: str | None = None
    trap_kind: str = "quadratic"
    trap_coeffs: tuple = (1.0, 1.0, 1.0)
    mass: float = 1.0
    forcing_kind: str = ""
    c: float = 1.0
    sweep: tuple = ()
    gap_tol: float = 1e-7
    cg_tol: float = 1e-10
    max_iter: int = 200000
    tv_mode: str = "isotropic"
    step_scale: float = 0.0  # 0 = per-kind default
    norm_tol: float = 1e-3
    out_dir: str = "out"
    seed: int = 1234
    threads: int = 0  # 0 = env default
    raw: dict = field(default_factory=dict)

    def effective_threads(self):
        if self.threads > 0:
            return self.threads
        return int(os.environ.get("VDLAB_THREADS", "1"))


def parse_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as err:
        raise ConfigError(f"config parse error: {err}") from err

    for section in cp.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    cfg = ProblemConfig()
    cfg.raw = {s: dict(cp[s]) for s in cp.sections()}

    def get(section, key, cast, default):
        if section in cp and key in cp[section]:
            try:
                return cast(cp[section][key])
            except ValueError as err:
                raise ConfigError(
                    f"bad value for {section}.{key}: {cp[section][key]!r}"
                ) from err
        return default

    def get_tuple(section, key, default, n=None, cast=float):
        if section in cp and key in cp[section]:
            vals = tuple(cast(v) for v in cp[section][key].split())
            if n is not None and len(vals) not in (1, n):
                raise ConfigError(f"{section}.{key} needs 1 or {n} values")
            if n is not None and len(vals) == 1:
                vals = vals * n
            return vals
        return default

    cfg.kind = get("problem", "kind", str, cfg.kind)
    if cfg.kind not in ("gl", "gp", "gp_high", "axi_g", "axi_f"):
        raise ConfigError(f"unknown problem kind {cfg.kind!r}")
    cfg.resolution = get_tuple("grid", "resolution", cfg.resolution, 3, int)
    cfg.box_factor = get("grid", "box_factor", float, cfg.box_factor)
    if "grid" in cp and "box" in cp["grid"]:
        vals = tuple(float(v) for v in cp["grid"]["box"].split())
        if len(vals) not in (2, 6):
            raise ConfigError("grid.box needs 2 or 6 values")
        cfg.box = vals * 3 if len(vals) == 2 else vals
    cfg.shape = get("domain", "shape", str, cfg.shape)
    cfg.radius = get("domain", "radius", float, cfg.radius)
    cfg.semiaxes = get_tuple("domain", "semiaxes", cfg.semiaxes, 3)
    cfg.major = get("domain", "major", float, cfg.major)
    cfg.minor = get("domain", "minor", float, cfg.minor)
    cfg.center = get_tuple("domain", "center", cfg.center, 3)
    cfg.maskfile = get("domain", "maskfile", str, cfg.maskfile)
    if cfg.maskfile is not None and not os.path.exists(cfg.maskfile):
        raise ConfigError(f"domain.maskfile does not exist: {cfg.maskfile}")
    cfg.trap_kind = get("trap", "kind", str, cfg.trap_kind)
    cfg.trap_coeffs = get_tuple("trap", "coeffs", cfg.trap_coeffs, 3)
    cfg.mass = get("trap", "mass", float, cfg.mass)
    cfg.forcing_kind = get("forcing", "kind", str, cfg.forcing_kind)
    if not cfg.forcing_kind:
        cfg.forcing_kind = "uniform_field" if cfg.kind == "gl" else "rotation"
    cfg.c = get("forcing", "c", float, cfg.c)
    cfg.sweep = get_tuple("forcing", "sweep", cfg.sweep, None)
    if list(cfg.sweep) != sorted(cfg.sweep):
        raise ConfigError("forcing.sweep must be sorted ascending")
    cfg.gap_tol = get("solver", "gap_tol", float, cfg.gap_tol)
    cfg.cg_tol = get("solver", "cg_tol", float, cfg.cg_tol)
    cfg.max_iter = get("solver", "max_iter", int, cfg.max_iter)
    cfg.tv_mode = get("solver", "tv_mode", str, cfg.tv_mode)
    cfg.step_scale = get("solver", "step_scale", float, cfg.step_scale)
    cfg.norm_tol = get("solver", "norm_tol", float, cfg.norm_tol)
    cfg.out_dir = get("output", "dir", str, cfg.out_dir)
    cfg.seed = get("run", "seed", int, cfg.seed)
    cfg.threads = get("run", "threads", int, cfg.threads)
    for tol in ("gap_tol", "cg_tol", "norm_tol"):
        if getattr(cfg, tol) <= 0:
            raise ConfigError(f"solver.{tol} must be positive")
    return cfg


def build_grid(cfg):
    if cfg.box is not None:
        lo = cfg.box[0::2]
        hi = cfg.box[1::2]
        return GridSpec(lo, hi, cfg.resolution)
    if cfg.shape == "ball":
        half = cfg.radius * cfg.box_factor
    elif cfg.shape == "ellipsoid":
        half = max(cfg.semiaxes) * cfg.box_factor
    elif cfg.shape == "torus":
        half = (cfg.major + cfg.minor) * cfg.box_factor
    else:
        raise ConfigError(f"cannot size a box for shape {cfg.shape!r}")
    lo = tuple(c - half for c in cfg.center)
    hi = tuple(c + half for c in cfg.center)
    return GridSpec(lo, hi, cfg.resolution)


def build_domain(cfg, grid):
    if cfg.maskfile:
        from vdlab.fieldio import load_field

        mask_field = load_field(cfg.maskfile)
        if mask_field.degree != 3:
            raise ConfigError("maskfile must hold a degree-3 (cell) field")
        if mask_field.grid.resolution != grid.resolution:
            raise ConfigError("maskfile resolution does not match the grid")
        return MaskedDomain(grid, mask_field.components()[0] > 0.5)
    if cfg.shape == "ball":
        return MaskedDomain.ball(grid, radius=cfg.radius, center=cfg.center)
    if cfg.shape == "ellipsoid":
        return MaskedDomain.ellipsoid(grid, cfg.semiaxes, center=cfg.center)
    if cfg.shape == "torus":
        return MaskedDomain.torus(grid, major=cfg.major, minor=cfg.minor,
                                  center=cfg.center)
    raise ConfigError(f"unknown domain shape {cfg.shape!r}")


def build_trap(cfg, grid):
    from vdlab.gp import radial_mass_map, thomas_fermi

    x, y, z = grid.cell_centers()
    cx, cy, cz = cfg.trap_coeffs
    if cfg.trap_kind == "quadratic":
        a = cx * x * x + cy * y * y + cz * z * z
        mass_map = None
        if cx == cy == cz:
            mass_map = radial_mass_map(lambda r: cx * r * r)
        return thomas_fermi(a, cfg.mass, grid, mass_map=None)
    raise ConfigError(f"unknown trap kind {cfg.trap_kind!r}")


def build_forcing(cfg, grid, c=None):
    c = cfg.c if c is None else c
    if cfg.forcing_kind in ("rotation", "uniform_field"):
        return FormField.sample(
            grid,
            1,
            [lambda x, y, z: -0.5 * c * y, lambda x, y, z: 0.5 * c * x,
             lambda x, y, z: 0.0 * x],
        )
    raise ConfigError(f"unknown forcing kind {cfg.forcing_kind!r}")
