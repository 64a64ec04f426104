"""The 62-channel extended 10-20 montage used by SEED-style recordings, with 2-D positions.

Positions come from idealized spherical geometry. Each coronal row runs from its
midline electrode to its outermost electrode on the circumference (polar angle
72 degrees), and the 1/3/5/7 (or 2/4/6/8) sites sit at quarter steps along that
great-circle arc. The sphere is flattened with an azimuthal equidistant
projection: nose up, left hemisphere at negative x, and the circumference at radius
0.8.
"""
from __future__ import annotations

import csv
from importlib import resources

import numpy as np

SEED62 = (
    "FP1 FPZ FP2 AF3 AF4 F7 F5 F3 F1 FZ F2 F4 F6 F8 FT7 FC5 FC3 FC1 FCZ FC2 FC4 FC6 FT8 "
    "T7 C5 C3 C1 CZ C2 C4 C6 T8 TP7 CP5 CP3 CP1 CPZ CP2 CP4 CP6 TP8 P7 P5 P3 P1 PZ P2 P4 P6 P8 "
    "PO7 PO5 PO3 POZ PO4 PO6 PO8 CB1 O1 OZ O2 CB2"
).split()

LAYOUT_FILE = "seed62_layout.csv"

# row prefix -> (signed polar angle of the midline site, azimuth of the outer site), degrees.
# Negative polar angles are posterior.
_ROWS = {
    "AF": (54.0, 36.0),
    "F": (36.0, 54.0),
    "FC": (18.0, 72.0),
    "C": (0.0, 90.0),
    "CP": (-18.0, 108.0),
    "P": (-36.0, 126.0),
    "PO": (-54.0, 144.0),
}
_OUTER = {"FT": "FC", "T": "C", "TP": "CP"}  # outermost sites carry their own prefix
_CIRCUMFERENCE = 72.0


class LayoutError(ValueError):
    pass


def _unit(polar_deg: float, azimuth_deg: float) -> np.ndarray:
    t, a = np.radians(polar_deg), np.radians(azimuth_deg)
    return np.array([np.sin(t) * np.sin(a), np.sin(t) * np.cos(a), np.cos(t)])


def _slerp(p: np.ndarray, q: np.ndarray, frac: float) -> np.ndarray:
    omega = np.arccos(np.clip(p @ q, -1.0, 1.0))
    if omega < 1e-12:
        return p
    return (np.sin((1 - frac) * omega) * p + np.sin(frac * omega) * q) / np.sin(omega)


def _project(v: np.ndarray) -> tuple[float, float]:
    polar = np.arccos(np.clip(v[2], -1.0, 1.0))
    az = np.arctan2(v[0], v[1])
    r = polar / (np.pi / 2)
    return float(r * np.sin(az)), float(r * np.cos(az))


def _split(name: str) -> tuple[str, str]:
    i = len(name.rstrip("0123456789Z"))
    return name[:i], name[i:]


def electrode_position(name: str) -> tuple[float, float]:
    """2-D position of one electrode of the montage."""
    fixed = {"FPZ": (_CIRCUMFERENCE, 0.0), "FP1": (_CIRCUMFERENCE, -18.0), "FP2": (_CIRCUMFERENCE, 18.0),
             "OZ": (_CIRCUMFERENCE, 180.0), "O1": (_CIRCUMFERENCE, -162.0), "O2": (_CIRCUMFERENCE, 162.0),
             "CB1": (90.0, -155.0), "CB2": (90.0, 155.0)}
    if name in fixed:
        return _project(_unit(*fixed[name]))
    prefix, suffix = _split(name)
    row = _OUTER.get(prefix, prefix)
    if row not in _ROWS or not suffix:
        raise LayoutError(f"no geometry for electrode {name!r}")
    mid_polar, outer_az = _ROWS[row]
    midline = _unit(abs(mid_polar), 0.0 if mid_polar >= 0 else 180.0)
    if suffix == "Z":
        return _project(midline)
    k = int(suffix)
    step = (k + 1) // 2  # 1,2 -> 1; 3,4 -> 2; 5,6 -> 3; 7,8 -> 4
    if prefix in _OUTER:
        step = 4
    side = -1.0 if k % 2 else 1.0
    outer = _unit(_CIRCUMFERENCE, side * outer_az)
    return _project(_slerp(midline, outer, step / 4))


def standard_layout(names=SEED62) -> list[tuple[str, float, float]]:
    return [(n, *electrode_position(n)) for n in names]


def load_layout() -> list[tuple[str, float, float]]:
    """The shipped montage file: rows of ``(name, x, y)`` in channel order."""
    text = resources.files("moodreader.layouts").joinpath(LAYOUT_FILE).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    return [(r["name"], float(r["x"]), float(r["y"])) for r in rows]


def write_layout(path, names=SEED62) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "x", "y"])
        for n, x, y in standard_layout(names):
            w.writerow([n, f"{x:.6f}", f"{y:.6f}"])
