"""Staggered-grid discrete exterior calculus on a rectangular box.

Entity layout (Yee staggering): 0-forms live at nodes, 1-forms on edges
(one block per axis), 2-forms on faces (one block per normal axis),
3-forms at cell centers.  With this placement the exterior derivative is
a signed difference per entity and d(d(f)) = 0 holds to machine
precision for every degree.

Conventions, fixed once here and relied on everywhere else:

* ``values`` of a FormField is a flat float64 array; component blocks
  are exposed as 3-d views in C order.
* Inner products use the uniform entity weight h1*h2*h3 (midpoint
  quadrature).  Masked inner products multiply by a binary entity mask;
  optional cell weights are averaged onto entities (4 adjacent cells
  for an edge, 2 for a face, 8 for a node, zero-padded outside the box).
* A domain is a cell mask.  Edges/faces/nodes join the "any" mask when
  they touch at least one interior cell and the "all" mask when every
  adjacent cell is interior.  Primal fields (velocities) live on "any"
  entities; the two conventions bracket the continuum domain.
* The total-variation carrier is the cell-averaged vorticity: the three
  face components of a 2-form are averaged to cell centers and grouped
  into one vector per cell ("isotropic"), or summed componentwise
  ("anisotropic").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXES = (0, 1, 2)


def _cyclic(axis):
    return axis, (axis + 1) % 3, (axis + 2) % 3


def node_shape(res):
    n1, n2, n3 = res
    return (n1 + 1, n2 + 1, n3 + 1)


def edge_shapes(res):
    n1, n2, n3 = res
    return [
        (n1, n2 + 1, n3 + 1),
        (n1 + 1, n2, n3 + 1),
        (n1 + 1, n2 + 1, n3),
    ]


def face_shapes(res):
    n1, n2, n3 = res
    return [
        (n1 + 1, n2, n3),
        (n1, n2 + 1, n3),
        (n1, n2, n3 + 1),
    ]


def cell_shape(res):
    return tuple(res)


def entity_shapes(degree, res):
    if degree == 0:
        return [node_shape(res)]
    if degree == 1:
        return edge_shapes(res)
    if degree == 2:
        return face_shapes(res)
    if degree == 3:
        return [cell_shape(res)]
    raise ValueError(f"degree must be 0..3, got {degree}")


@dataclass(frozen=True)
class GridSpec:
    """Rectangular box with a uniform staggered grid.

    extents are the box corners (lo, hi) per axis in length units;
    resolution is the number of cells per axis.
    """

    lo: tuple
    hi: tuple
    resolution: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        res = tuple(int(n) for n in self.resolution)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "resolution", res)
        if len(lo) != 3 or len(hi) != 3 or len(res) != 3:
            raise ValueError("GridSpec needs 3 axes")
        if any(n < 2 for n in res):
            raise ValueError("resolution must be >= 2 per axis")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("box extents must have positive volume")

    @property
    def spacing(self):
        return tuple(
            (self.hi[a] - self.lo[a]) / self.resolution[a] for a in AXES
        )

    @property
    def cell_volume(self):
        h1, h2, h3 = self.spacing
        return h1 * h2 * h3

    def axis_coords(self, axis, staggered):
        """1-d coordinates along an axis: node positions or cell centers."""
        n = self.resolution[axis]
        h = self.spacing[axis]
        if staggered:
            return self.lo[axis] + h * (np.arange(n) + 0.5)
        return self.lo[axis] + h * np.arange(n + 1)

    def entity_coords(self, degree, comp):
        """Meshgrid (x, y, z) of entity sample points for one component.

        Nodes sample at nodes, edges at edge midpoints, faces at face
        centers, cells at cell centers.
        """
        if degree == 0:
            stag = (False, False, False)
        elif degree == 3:
            stag = (True, True, True)
        elif degree == 1:
            stag = tuple(a == comp for a in AXES)
        elif degree == 2:
            stag = tuple(a != comp for a in AXES)
        else:
            raise ValueError(f"degree must be 0..3, got {degree}")
        axes = [self.axis_coords(a, stag[a]) for a in AXES]
        return np.meshgrid(*axes, indexing="ij")

    def cell_centers(self):
        return self.entity_coords(3, 0)


class FormField:
    """A discrete k-form: flat value array over the entities of one degree."""

    __slots__ = ("degree", "grid", "values", "_shapes", "_offsets")

    def __init__(self, degree, grid, values=None, validate=True):
        if degree not in (0, 1, 2, 3):
            raise ValueError(f"degree must be 0..3, got {degree}")
        self.degree = degree
        self.grid = grid
        self._shapes = entity_shapes(degree, grid.resolution)
        sizes = [int(np.prod(s)) for s in self._shapes]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(self._offsets[-1])
        if values is None:
            self.values = np.zeros(total)
        else:
            values = np.asarray(values, dtype=float).ravel()
            if values.size != total:
                raise ValueError(
                    f"value array has {values.size} entries, "
                    f"degree-{degree} field on {grid.resolution} needs {total}"
                )
            if validate and not np.all(np.isfinite(values)):
                raise ValueError("field values must be finite")
            self.values = values

    @classmethod
    def zeros(cls, grid, degree):
        return cls(degree, grid)

    @classmethod
    def from_components(cls, grid, degree, comps):
        f = cls(degree, grid)
        views = f.components()
        if len(comps) != len(views):
            raise ValueError("wrong number of components")
        for v, c in zip(views, comps):
            v[...] = c
        return f

    @classmethod
    def sample(cls, grid, degree, fns):
        """Sample analytic component functions fn(x, y, z) on the entities."""
        if callable(fns):
            fns = [fns]
        f = cls(degree, grid)
        for comp, (view, fn) in enumerate(zip(f.components(), fns)):
            x, y, z = grid.entity_coords(degree, comp)
            view[...] = fn(x, y, z)
        return f

    def components(self):
        """List of 3-d views, one per component block."""
        out = []
        for i, shape in enumerate(self._shapes):
            lo, hi = self._offsets[i], self._offsets[i + 1]
            out.append(self.values[lo:hi].reshape(shape))
        return out

    def copy(self):
        return FormField(self.degree, self.grid, self.values.copy())

    def same_layout(self, other):
        return (
            self.degree == other.degree
            and self.grid.resolution == other.grid.resolution
        )

    def __add__(self, other):
        self._check(other)
        return FormField(self.degree, self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return FormField(self.degree, self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return FormField(self.degree, self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def _check(self, other):
        if not isinstance(other, FormField) or not self.same_layout(other):
            raise ValueError("degree/grid mismatch between fields")


# ---------------------------------------------------------------------------
# exterior derivative and its plain transpose
# ---------------------------------------------------------------------------


def exterior_derivative(f):
    """Signed finite-difference d: degree k -> k+1.  d(d(f)) = 0 exactly."""
    if f.degree == 3:
        raise ValueError("no degree-4 forms in 3D")
    grid = f.grid
    h = grid.spacing
    out = FormField(f.degree + 1, grid)
    if f.degree == 0:
        (phi,) = f.components()
        for a, view in enumerate(out.components()):
            view[...] = np.diff(phi, axis=a) / h[a]
    elif f.degree == 1:
        v = f.components()
        for a, view in enumerate(out.components()):
            _, b, c = _cyclic(a)
            view[...] = np.diff(v[c], axis=b) / h[b] - np.diff(v[b], axis=c) / h[c]
    else:
        B = f.components()
        (cell,) = out.components()
        cell[...] = 0.0
        for a in AXES:
            cell += np.diff(B[a], axis=a) / h[a]
    return out


def _diff_transpose(q, axis, h):
    """Adjoint (plain transpose) of ``np.diff(., axis)/h``."""
    shape = list(q.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    sl_lo = [slice(None)] * 3
    sl_hi = [slice(None)] * 3
    sl_lo[axis] = slice(0, -1)
    sl_hi[axis] = slice(1, None)
    out[tuple(sl_lo)] -= q / h
    out[tuple(sl_hi)] += q / h
    return out


def d_transpose(g):
    """Plain Euclidean transpose of exterior_derivative: degree k -> k-1.

    <d f, g>_plain = <f, d_transpose(g)>_plain with unweighted dot
    products on the flat value arrays.
    """
    if g.degree == 0:
        raise ValueError("no degree below 0")
    grid = g.grid
    h = grid.spacing
    out = FormField(g.degree - 1, grid)
    if g.degree == 1:
        (phi,) = out.components()
        for a, q in enumerate(g.components()):
            phi += _diff_transpose(q, a, h[a])
    elif g.degree == 2:
        v = out.components()
        for a, q in enumerate(g.components()):
            _, b, c = _cyclic(a)
            v[c] += _diff_transpose(q, b, h[b])
            v[b] -= _diff_transpose(q, c, h[c])
    else:
        (cell,) = g.components()
        for a, view in enumerate(out.components()):
            view[...] = _diff_transpose(cell, a, h[a])
    return out


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def _entity_masks(cell_mask, degree, mode):
    """Binary masks per component block ('any' touches, 'all' strict)."""
    res = cell_mask.shape
    pad = np.zeros(tuple(n + 2 for n in res), dtype=bool)
    pad[1:-1, 1:-1, 1:-1] = cell_mask
    ncomp = 3 if degree in (1, 2) else 1
    out = []
    for comp in range(ncomp):
        shape = entity_shapes(degree, res)[comp]
        acc = None
        for o in _entity_offsets(degree, comp):
            sl = tuple(slice(o[a], o[a] + shape[a]) for a in AXES)
            slab = pad[sl]
            if acc is None:
                acc = slab.copy()
            elif mode == "any":
                acc |= slab
            else:
                acc &= slab
        out.append(acc)
    return out


def _entity_offsets(degree, comp):
    """Padded-array offsets of the cells adjacent to one entity block."""
    if degree == 0:
        return [(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)]
    if degree == 1:
        _, b, c = _cyclic(comp)
        offs = []
        for db in (0, 1):
            for dc in (0, 1):
                o = [1, 1, 1]
                o[b] = db
                o[c] = dc
                offs.append(tuple(o))
        return offs
    if degree == 2:
        offs = []
        for da in (0, 1):
            o = [1, 1, 1]
            o[comp] = da
            offs.append(tuple(o))
        return offs
    return [(1, 1, 1)]


def _interp_weight(cell_weight, degree, comp):
    """Average a cell weight onto one entity block (zero outside the box)."""
    if degree == 3:
        return cell_weight.astype(float)
    res = cell_weight.shape
    pad = np.zeros(tuple(n + 2 for n in res))
    pad[1:-1, 1:-1, 1:-1] = cell_weight
    shape = entity_shapes(degree, res)[comp]
    offs = _entity_offsets(degree, comp)
    total = np.zeros(shape)
    for o in offs:
        sl = tuple(slice(o[a], o[a] + shape[a]) for a in AXES)
        total += pad[sl]
    return total / len(offs)


@dataclass
class MaskedDomain:
    """Sample region as cell membership plus derived entity masks.

    Both edge/face conventions are stored: 'any' (touches an interior
    cell, used for primal fields) and 'all' (every adjacent cell
    interior, used for strict/dual bracketing).
    """

    grid: GridSpec
    cell_mask: np.ndarray
    simply_connected: bool = True
    edge_mask_any: list = field(init=False)
    edge_mask_all: list = field(init=False)
    face_mask_any: list = field(init=False)
    face_mask_all: list = field(init=False)
    node_mask_any: list = field(init=False)
    boundary_faces: list = field(init=False)

    def __post_init__(self):
        cm = np.asarray(self.cell_mask, dtype=bool)
        if cm.shape != cell_shape(self.grid.resolution):
            raise ValueError("cell mask shape does not match the grid")
        if not cm.any():
            raise ValueError("domain is empty")
        skin = cm.copy()
        skin[1:-1, 1:-1, 1:-1] = False
        if skin.any():
            raise ValueError("domain must be strictly inside the box")
        self.cell_mask = cm
        self.edge_mask_any = _entity_masks(cm, 1, "any")
        self.edge_mask_all = _entity_masks(cm, 1, "all")
        self.face_mask_any = _entity_masks(cm, 2, "any")
        self.face_mask_all = _entity_masks(cm, 2, "all")
        self.node_mask_any = _entity_masks(cm, 0, "any")
        self.boundary_faces = [
            np.logical_and(fa, ~fl)
            for fa, fl in zip(self.face_mask_any, self.face_mask_all)
        ]

    def entity_masks(self, degree, convention="any"):
        if degree == 3:
            return [self.cell_mask]
        if degree == 0:
            return self.node_mask_any
        if degree == 1:
            return self.edge_mask_any if convention == "any" else self.edge_mask_all
        return self.face_mask_any if convention == "any" else self.face_mask_all

    @property
    def volume(self):
        return float(self.cell_mask.sum()) * self.grid.cell_volume

    @classmethod
    def from_level_set(cls, grid, fn, simply_connected=True):
        """Cells with fn(x,y,z) < 0 at the center are interior."""
        x, y, z = grid.cell_centers()
        return cls(grid, fn(x, y, z) < 0.0, simply_connected=simply_connected)

    @classmethod
    def ball(cls, grid, radius=1.0, center=(0.0, 0.0, 0.0)):
        cx, cy, cz = center
        return cls.from_level_set(
            grid,
            lambda x, y, z: (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
            - radius**2,
        )

    @classmethod
    def ellipsoid(cls, grid, semiaxes, center=(0.0, 0.0, 0.0)):
        a, b, c = semiaxes
        cx, cy, cz = center
        return cls.from_level_set(
            grid,
            lambda x, y, z: ((x - cx) / a) ** 2
            + ((y - cy) / b) ** 2
            + ((z - cz) / c) ** 2
            - 1.0,
        )

    @classmethod
    def torus(cls, grid, major=1.0, minor=0.4, center=(0.0, 0.0, 0.0)):
        cx, cy, cz = center

        def fn(x, y, z):
            r = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
            return (r - major) ** 2 + (z - cz) ** 2 - minor**2

        return cls.from_level_set(grid, fn, simply_connected=False)


# ---------------------------------------------------------------------------
# inner products, codifferential, masking
# ---------------------------------------------------------------------------


def entity_weights(grid, degree, domain=None, weight=None, convention="any"):
    """Per-component diagonal weights: vol * mask * averaged cell weight."""
    vol = grid.cell_volume
    ncomp = 3 if degree in (1, 2) else 1
    out = []
    for comp in range(ncomp):
        shape = entity_shapes(degree, grid.resolution)[comp]
        w = np.full(shape, vol)
        if domain is not None:
            w = w * domain.entity_masks(degree, convention)[comp]
        if weight is not None:
            w = w * _interp_weight(np.asarray(weight, dtype=float), degree, comp)
        out.append(w)
    return out


def inner_product(f, g, domain=None, weight=None, convention="any"):
    """Masked, optionally cell-weighted L2 pairing of two same-degree fields."""
    if not isinstance(f, FormField) or not isinstance(g, FormField):
        raise ValueError("inner_product needs FormFields")
    if not f.same_layout(g):
        raise ValueError("degree/grid mismatch between fields")
    ws = entity_weights(f.grid, f.degree, domain, weight, convention)
    total = 0.0
    for fv, gv, w in zip(f.components(), g.components(), ws):
        total += float(np.sum(fv * gv * w))
    return total


def norm(f, domain=None, weight=None, convention="any"):
    return float(np.sqrt(max(inner_product(f, f, domain, weight, convention), 0.0)))


def codifferential(f, domain=None, weight=None, convention="any"):
    """Adjoint of d under the (masked, weighted) diagonal inner products.

    Returns d*f of degree k-1 with <d a, f>_w = <a, d* f>_w for every a
    supported on the positive-weight entities of degree k-1.  Entities
    with zero target weight get value 0.
    """
    if f.degree == 0:
        raise ValueError("codifferential undefined on 0-forms")
    wk = entity_weights(f.grid, f.degree, domain, weight, convention)
    scaled = FormField(f.degree, f.grid)
    for view, fv, w in zip(scaled.components(), f.components(), wk):
        view[...] = fv * w
    raw = d_transpose(scaled)
    wk1 = entity_weights(f.grid, f.degree - 1, domain, weight, convention)
    out = FormField(f.degree - 1, f.grid)
    for view, rv, w in zip(out.components(), raw.components(), wk1):
        np.divide(rv, w, out=view, where=w > 0)
    return out


def mask_restrict(f, domain, convention="any"):
    """Zero all entities outside the mask."""
    out = f.copy()
    for view, m in zip(out.components(), domain.entity_masks(f.degree, convention)):
        view[...] = np.where(m, view, 0.0)
    return out


def mask_extend(f, domain, convention="any"):
    """Embed a masked field into the box (identical storage, masked zeroing).

    restrict(extend(f)) == restrict(f); extend pairs with restrict as
    <extend(f), g>_box = <f, restrict(g)>_mask for mask-supported f.
    """
    return mask_restrict(f, domain, convention)


# ---------------------------------------------------------------------------
# cell-averaged vorticity (the TV carrier)
# ---------------------------------------------------------------------------


def face_to_cell(B):
    """Average the three face blocks of a 2-form to cell centers: (3,n1,n2,n3)."""
    comps = B.components()
    res = B.grid.resolution
    out = np.empty((3,) + tuple(res))
    for a in AXES:
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[a] = slice(0, -1)
        sl_hi[a] = slice(1, None)
        out[a] = 0.5 * (comps[a][tuple(sl_lo)] + comps[a][tuple(sl_hi)])
    return out


def cell_to_face(y, grid):
    """Plain transpose of face_to_cell: spread half of each cell value."""
    out = FormField(2, grid)
    for a, view in enumerate(out.components()):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[a] = slice(0, -1)
        sl_hi[a] = slice(1, None)
        view[tuple(sl_lo)] += 0.5 * y[a]
        view[tuple(sl_hi)] += 0.5 * y[a]
    return out


def cell_curl(v):
    """Cell-averaged vorticity of a 1-form: face_to_cell(d v)."""
    return face_to_cell(exterior_derivative(v))


def cell_curl_values(values, grid):
    """cell_curl on a raw flat array (hot-loop path, no validation)."""
    return face_to_cell(exterior_derivative(FormField(1, grid, values, validate=False)))


def cell_curl_transpose_values(y, grid):
    return d_transpose(cell_to_face(y, grid)).values


def cell_curl_transpose(y, grid):
    """Plain transpose of cell_curl: cells (3,...) -> edge 1-form."""
    return d_transpose(cell_to_face(y, grid))


def grouped_tv(B, domain, weight=None, mode="isotropic"):
    """Weighted grouped total variation of a 2-form.

    Per interior cell: Euclidean magnitude of the three face-averaged
    components ("isotropic") or their absolute sum ("anisotropic"),
    times cell weight times cell volume, summed.  Nonnegative and
    absolutely 1-homogeneous; an empty mask gives 0.
    """
    y = face_to_cell(B)
    if mode == "isotropic":
        mag = np.sqrt(np.sum(y * y, axis=0))
    elif mode == "anisotropic":
        mag = np.sum(np.abs(y), axis=0)
    else:
        raise ValueError(f"unknown TV mode {mode!r}")
    w = B.grid.cell_volume * domain.cell_mask.astype(float)
    if weight is not None:
        w = w * np.asarray(weight, dtype=float)
    return float(np.sum(mag * w))


def cell_group_magnitude(y, mode="isotropic"):
    """Groupwise magnitude of a (3, n1, n2, n3) cell-vector field."""
    if mode == "isotropic":
        return np.sqrt(np.sum(y * y, axis=0))
    return np.sum(np.abs(y), axis=0)


# ---------------------------------------------------------------------------
# sparse assembly (test oracles)
# ---------------------------------------------------------------------------


def assemble_d_matrix(grid, degree):
    """Dense-free sparse matrix of the exterior derivative (oracle use)."""
    from scipy.sparse import lil_matrix

    nin = FormField(degree, grid).values.size
    nout = FormField(degree + 1, grid).values.size
    D = lil_matrix((nout, nin))
    f = FormField(degree, grid)
    for j in range(nin):
        f.values[:] = 0.0
        f.values[j] = 1.0
        col = exterior_derivative(f).values
        nz = np.nonzero(col)[0]
        for i in nz:
            D[i, j] = col[i]
    return D.tocsr()


# ---------------------------------------------------------------------------
# grid transfer (cascadic warm starts)
# ---------------------------------------------------------------------------


def trilinear_sample(arr, grid, degree, comp, x, y, z):
    """Trilinear sampling of one staggered component block at points."""
    if degree == 0:
        stag = (False, False, False)
    elif degree == 3:
        stag = (True, True, True)
    elif degree == 1:
        stag = tuple(a == comp for a in AXES)
    else:
        stag = tuple(a != comp for a in AXES)
    coords = []
    for a, (p, s) in enumerate(zip((x, y, z), stag)):
        h = grid.spacing[a]
        off = 0.5 * h if s else 0.0
        n = arr.shape[a]
        t = (p - grid.lo[a] - off) / h
        t = np.clip(t, 0.0, n - 1.0)
        coords.append(t)
    i = [np.clip(np.floor(t).astype(int), 0, arr.shape[a] - 2 if arr.shape[a] > 1 else 0)
         for a, t in enumerate(coords)]
    f = [np.clip(t - ii, 0.0, 1.0) for t, ii in zip(coords, i)]
    out = np.zeros(np.broadcast(x, y, z).shape)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wgt = (
                    (f[0] if dx else 1 - f[0])
                    * (f[1] if dy else 1 - f[1])
                    * (f[2] if dz else 1 - f[2])
                )
                out += wgt * arr[
                    np.minimum(i[0] + dx, arr.shape[0] - 1),
                    np.minimum(i[1] + dy, arr.shape[1] - 1),
                    np.minimum(i[2] + dz, arr.shape[2] - 1),
                ]
    return out


def prolong_field(field, fine_grid):
    """Resample a FormField onto a finer (or different) grid, componentwise."""
    out = FormField(field.degree, fine_grid)
    for comp, (src, dst) in enumerate(zip(field.components(), out.components())):
        x, y, z = fine_grid.entity_coords(field.degree, comp)
        dst[...] = trilinear_sample(src, field.grid, field.degree, comp, x, y, z)
    return out


def prolong_cell_vector(y, coarse_grid, fine_grid):
    """Resample a (3, n1, n2, n3) cell field onto a finer grid."""
    x, yy, z = fine_grid.cell_centers()
    out = np.zeros((3,) + tuple(fine_grid.resolution))
    for a in range(3):
        out[a] = trilinear_sample(y[a], coarse_grid, 3, 0, x, yy, z)
    return out
