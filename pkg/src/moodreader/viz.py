"""Per-channel attention maps: structured records and scalp topomap images."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .electrodes import LayoutError, load_layout


def attention_records(weights: np.ndarray, layout=None) -> list[dict]:
    """One ``{name, x, y, weight}`` record per channel; weights renormalized to sum 1."""
    layout = load_layout() if layout is None else layout
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(layout),):
        raise LayoutError(f"{weights.shape[0] if weights.ndim else 0} attention weights for a {len(layout)}-site layout")
    if np.any(weights < 0) or not np.isfinite(weights).all():
        raise ValueError("attention weights must be finite and non-negative")
    total = weights.sum()
    norm = weights / total if total > 0 else np.full_like(weights, 1.0 / len(weights))
    return [{"name": n, "x": round(x, 6), "y": round(y, 6), "weight": float(w)}
            for (n, x, y), w in zip(layout, norm)]


def write_attention_json(path, snapshots: Sequence[dict], layout=None) -> Path:
    """``snapshots`` hold ``tag``, ``step`` and ``weights``; written with sorted keys for byte stability."""
    doc = [{"tag": s["tag"], "step": int(s["step"]), "channels": attention_records(s["weights"], layout)}
           for s in snapshots]
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def topomap_grid(weights: np.ndarray, layout=None, resolution: int = 101) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interpolate channel values on a square grid over the head disc; NaN outside it."""
    from scipy.interpolate import griddata

    layout = load_layout() if layout is None else layout
    xy = np.array([(x, y) for _, x, y in layout])
    values = np.asarray(weights, dtype=np.float64)
    radius = max(1.0, float(np.max(np.hypot(xy[:, 0], xy[:, 1])))) * 1.02
    g = np.linspace(-radius, radius, resolution)
    gx, gy = np.meshgrid(g, g)
    inside = np.hypot(gx, gy) <= radius
    # the constant rim value keeps the disc filled beyond the outermost electrodes
    ring = np.linspace(0, 2 * np.pi, 48, endpoint=False)
    rim = np.c_[radius * np.sin(ring), radius * np.cos(ring)]
    nearest = np.argmin(((rim[:, None, :] - xy[None]) ** 2).sum(-1), axis=1)
    pts = np.vstack([xy, rim])
    vals = np.concatenate([values, values[nearest]])
    z = griddata(pts, vals, (gx, gy), method="cubic")
    if np.ptp(values) == 0:
        z = np.full_like(gx, values[0])
    z[~inside] = np.nan
    return gx, gy, z


def render_topomap(weights: np.ndarray, path, title: str = "", layout=None) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    layout = load_layout() if layout is None else layout
    gx, gy, z = topomap_grid(weights, layout)
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    cs = ax.contourf(gx, gy, z, levels=20, cmap="viridis")
    radius = gx.max()
    t = np.linspace(0, 2 * np.pi, 200)
    ax.plot(radius * np.sin(t), radius * np.cos(t), color="k", lw=1.2)
    ax.plot([-0.08 * radius, 0, 0.08 * radius], [radius, 1.08 * radius, radius], color="k", lw=1.2)
    xy = np.array([(x, y) for _, x, y in layout])
    ax.scatter(xy[:, 0], xy[:, 1], s=6, c="k")
    ax.set_aspect("equal")
    ax.axis("off")
    if title:
        ax.set_title(title)
    fig.colorbar(cs, ax=ax, shrink=0.7)
    path = Path(path)
    fig.savefig(path, dpi=90, bbox_inches="tight")
    plt.close(fig)
    return path
