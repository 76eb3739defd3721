"""Field persistence: text header + raw little-endian float64 payload.

The format is deliberately dumb so any implementation language can
parse it: a magic line, key/value header lines (degree, resolution,
extents, weight conventions), an ``end`` sentinel, then the flat value
array in entity order.  Round trips are bit exact.
"""

from __future__ import annotations

import numpy as np

from vdlab.grids import FormField, GridSpec

MAGIC = "VDLABFIELD"
VERSION = 1
CONVENTION = "staggered-yee any-mask uniform-volume-weights"


def save_field(path, field):
    header = [
        f"{MAGIC} {VERSION}",
        f"degree {field.degree}",
        "resolution " + " ".join(str(n) for n in field.grid.resolution),
        "extents " + " ".join(
            f"{v!r}" for pair in zip(field.grid.lo, field.grid.hi) for v in pair
        ),
        f"convention {CONVENTION}",
        "end",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(field.values.astype("<f8").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        lines = []
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            text = line.decode("ascii", errors="replace").strip()
            lines.append(text)
            if text == "end":
                break
            if len(lines) > 16:
                raise ValueError(f"{path}: header not recognized")
        payload = fh.read()
    head = dict()
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != MAGIC:
        raise ValueError(f"{path}: bad magic line {lines[0]!r}")
    if int(magic[1]) != VERSION:
        raise ValueError(f"{path}: unsupported version {magic[1]}")
    for text in lines[1:-1]:
        key, _, rest = text.partition(" ")
        head[key] = rest
    degree = int(head["degree"])
    res = tuple(int(v) for v in head["resolution"].split())
    ext = [float(v) for v in head["extents"].split()]
    lo = tuple(ext[0::2])
    hi = tuple(ext[1::2])
    grid = GridSpec(lo, hi, res)
    values = np.frombuffer(payload, dtype="<f8")
    expected = FormField(degree, grid).values.size
    if values.size != expected:
        raise ValueError(
            f"{path}: payload holds {values.size} values, a degree-{degree} "
            f"field on {res} needs {expected}"
        )
    return FormField(degree, grid, values.copy())


def export_slice_csv(path, field, comp=0, axis=2, index=None):
    """CSV slice of one component for plotting (gnuplot-friendly)."""
    view = field.components()[comp]
    if index is None:
        index = view.shape[axis] // 2
    sl = [slice(None)] * 3
    sl[axis] = index
    plane = view[tuple(sl)]
    with open(path, "w") as fh:
        fh.write("# i j value\n")
        for i in range(plane.shape[0]):
            for j in range(plane.shape[1]):
                fh.write(f"{i} {j} {plane[i, j]!r}\n")
            fh.write("\n")


def write_gnuplot_script(path, csv_name, title="field slice"):
    with open(path, "w") as fh:
        fh.write(
            "set pm3d map\n"
            f"set title '{title}'\n"
            f"splot '{csv_name}' using 1:2:3 with pm3d notitle\n"
            "pause -1\n"
        )
