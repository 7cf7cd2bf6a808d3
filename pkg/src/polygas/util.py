"""Small shared helpers: torus arithmetic, deterministic IO, parallel map.

Nothing here knows about the physics; these are the plumbing pieces the
rest of the package leans on.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

SCHEMA_VERSION = 1


def min_image(delta: np.ndarray, side) -> np.ndarray:
    """Map coordinate differences to the torus fundamental window.

    Componentwise representative in (-side/2, side/2]; `side` may be a
    scalar or a per-axis array.
    """
    delta = np.asarray(delta)
    side = np.asarray(side)
    half = side // 2
    # for odd side this is the symmetric window [-(side-1)/2, (side-1)/2]
    return (delta + half) % side - half


def torus_distance(a, b, side) -> float:
    """Euclidean distance between points on a torus of given side(s)."""
    d = min_image(np.asarray(a) - np.asarray(b), side)
    return float(np.sqrt(np.sum(np.asarray(d, dtype=float) ** 2)))


def lattice_exp_sum(rate: float, d: int, rmax_factor: float = 60.0) -> float:
    """Sum of exp(-rate * |k|) over nonzero integer vectors k in Z^d.

    Direct summation over the ball |k| <= rmax with a crude geometric
    tail estimate appended; `rate` must be positive.  Used for decay
    constants of exponentially localized kernels.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    rmax = max(3, int(math.ceil(rmax_factor / rate)))
    rng = np.arange(-rmax, rmax + 1)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    r = np.sqrt(sum(g.astype(float) ** 2 for g in grids))
    mask = r > 0
    total = float(np.sum(np.exp(-rate * r[mask])))
    # tail: number of lattice points at radius ~r grows like surface area
    # c_d r^{d-1}; bound the remainder by an integral with a safe constant.
    tail = (
        (2 * d * (2 * rmax + 1) ** (d - 1))
        * math.exp(-rate * rmax)
        / (1 - math.exp(-rate))
    )
    return total + tail if tail > 1e-15 * total else total


def write_json_atomic(path, obj) -> None:
    """Serialize obj deterministically and rename into place."""
    payload = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sanitize_for_json(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): sanitize_for_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize_for_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize_for_json(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def pmap(fn, items):
    """Map fn over items, in order, honoring the POLYGAS_THREADS env var.

    POLYGAS_THREADS unset or <=1 means a plain sequential map, which keeps
    runs bit-reproducible by default.
    """
    try:
        n = int(os.environ.get("POLYGAS_THREADS", "1"))
    except ValueError:
        n = 1
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def svg_polyline_plot(path, series, title="", width=640, height=400,
                      logx=False, logy=False):
    """Write a minimal standalone SVG line plot.

    series: list of (label, xs, ys) triples.  Hand-rolled on purpose so
    report generation has no plotting dependency.
    """
    margin = 50
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]

    def tx(v, lo, hi, a, b):
        if hi <= lo:
            return 0.5 * (a + b)
        return a + (v - lo) / (hi - lo) * (b - a)

    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            x = math.log10(x) if logx else float(x)
            y = math.log10(y) if logy else float(y)
            pts.append((x, y))
    if not pts:
        raise ValueError("no data to plot")
    xlo = min(p[0] for p in pts)
    xhi = max(p[0] for p in pts)
    ylo = min(p[1] for p in pts)
    yhi = max(p[1] for p in pts)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
    ]
    for i, (label, xs, ys) in enumerate(series):
        coords = []
        for x, y in zip(xs, ys):
            x = math.log10(x) if logx else float(x)
            y = math.log10(y) if logy else float(y)
            px = tx(x, xlo, xhi, margin, width - margin)
            py = tx(y, ylo, yhi, height - margin, margin)
            coords.append(f"{px:.2f},{py:.2f}")
        color = colors[i % len(colors)]
        parts.append(
            f'<polyline points="{" ".join(coords)}" fill="none" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin - 4}" y="{margin + 16 * (i + 1)}" '
            f'text-anchor="end" font-family="sans-serif" font-size="12" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
