"""Minimal deterministic SVG rendering of sets, trajectories and closed-loop logs.

Output depends only on the input numbers (fixed formatting, no timestamps),
so identical artifacts produce byte-identical files.
"""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from .errors import DimensionMismatch, EmptyPolytope
from .polytope import HPolytope, VPolytope, vertex_enumeration

__all__ = ["polygon_2d", "SvgCanvas", "plot_sets", "plot_time_series"]

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf"]


def _fmt(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def polygon_2d(points: np.ndarray) -> np.ndarray:
    """Convex hull of planar points in counter-clockwise order (monotone chain)."""
    pts = sorted({(round(float(x), 12), round(float(y), 12)) for x, y in np.asarray(points)})
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: List[Tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: List[Tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def projected_vertices(P, dims: Tuple[int, int]) -> np.ndarray:
    """Vertices of P projected onto coordinates ``dims`` (projection of the V-representation)."""
    if isinstance(P, HPolytope):
        try:
            V = vertex_enumeration(P).vertices
        except EmptyPolytope:
            return np.zeros((0, 2))
    elif isinstance(P, VPolytope):
        V = P.vertices
    else:
        V = np.atleast_2d(np.asarray(P, dtype=float))
    if max(dims) >= V.shape[1] or min(dims) < 0 or dims[0] == dims[1]:
        raise DimensionMismatch(f"cannot project {V.shape[1]}-dimensional data onto {dims}")
    return V[:, list(dims)]


class SvgCanvas:
    """A single plot panel with a data-to-pixel affine map."""

    def __init__(self, width: int = 480, height: int = 400, margin: int = 48):
        self.width, self.height, self.margin = width, height, margin
        self.items: List[str] = []
        self.lo = np.zeros(2)
        self.hi = np.ones(2)

    def fit(self, pts: np.ndarray, pad: float = 0.05):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        self.lo, self.hi = lo - pad * span, hi + pad * span

    def px(self, p) -> Tuple[float, float]:
        m = self.margin
        fx = (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0])
        fy = (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1])
        return m + fx * (self.width - 2 * m), self.height - m - fy * (self.height - 2 * m)

    def polygon(self, pts, color, opacity=0.15):
        if len(pts) == 0:
            return
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (self.px(p) for p in pts))
        self.items.append(f'<polygon points="{coords}" fill="{color}" fill-opacity="{opacity}" '
                          f'stroke="{color}" stroke-width="1.5"/>')

    def polyline(self, pts, color, width=1.5):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (self.px(p) for p in pts))
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"/>')

    def points(self, pts, color, r=2.5):
        for p in pts:
            x, y = self.px(p)
            self.items.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{r}" fill="{color}"/>')

    def text(self, x, y, s, size=12, anchor="middle"):
        self.items.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                          f'text-anchor="{anchor}" font-family="sans-serif">{escape(s)}</text>')

    def axes(self, xlabel: str, ylabel: str):
        m, w, h = self.margin, self.width, self.height
        self.items.append(f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" '
                          'fill="none" stroke="#333" stroke-width="1"/>')
        self.text(w / 2, h - 12, xlabel)
        self.items.append(f'<text x="14" y="{_fmt(h / 2)}" font-size="12" text-anchor="middle" '
                          f'font-family="sans-serif" transform="rotate(-90 14 {_fmt(h / 2)})">'
                          f'{escape(ylabel)}</text>')
        for k in range(2):
            lo, hi = self.lo[k], self.hi[k]
            for f in (0.0, 0.5, 1.0):
                v = lo + f * (hi - lo)
                if k == 0:
                    x, _ = self.px((v, self.lo[1]))
                    self.text(x, h - m + 16, f"{v:.3g}", size=10)
                else:
                    _, y = self.px((self.lo[0], v))
                    self.text(m - 4, y + 4, f"{v:.3g}", size=10, anchor="end")

    def body(self, dx: float = 0.0, dy: float = 0.0) -> str:
        return f'<g transform="translate({_fmt(dx)},{_fmt(dy)})">\n' + "\n".join(self.items) + "\n</g>"


def _document(width: int, height: int, parts: Sequence[str]) -> str:
    return ('<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            '<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(parts) + "\n</svg>\n")


def plot_sets(sets: Sequence, dims: Tuple[int, int] = (0, 1), trajectory: Optional[np.ndarray] = None,
              title: str = "", labels: Optional[Sequence[str]] = None) -> str:
    """Nested sets (H- or V-polytopes) and an optional trajectory in a 2D coordinate projection."""
    polys = [polygon_2d(projected_vertices(P, dims)) for P in sets]
    traj = None
    if trajectory is not None:
        traj = projected_vertices(np.atleast_2d(trajectory), dims)
    allpts = [p for p in polys if len(p)] + ([traj] if traj is not None else [])
    cv = SvgCanvas()
    if allpts:
        cv.fit(np.vstack(allpts))
    for k, poly in enumerate(polys):
        cv.polygon(poly, PALETTE[k % len(PALETTE)], opacity=0.08 if len(polys) > 3 else 0.15)
    if traj is not None:
        cv.polyline(traj, "#000")
        cv.points(traj, "#000")
    cv.axes(f"x{dims[0]}", f"x{dims[1]}")
    if title:
        cv.text(cv.width / 2, 24, title, size=14)
    dim = None
    for P in sets:
        dim = P.dim
        break
    if dim is None and trajectory is not None:
        dim = np.atleast_2d(trajectory).shape[1]
    parts = [cv.body()]
    if dim is not None and dim > 2:
        parts.append(f'<text x="{cv.width / 2:.1f}" y="{cv.height - 1:.1f}" font-size="10" '
                     'text-anchor="middle" font-family="sans-serif">projection of the vertex '
                     f'set onto coordinates {dims[0]}, {dims[1]}</text>')
    if labels:
        for k, lab in enumerate(labels):
            parts.append(f'<text x="{cv.width - 8}" y="{40 + 14 * k}" font-size="10" '
                         f'text-anchor="end" font-family="sans-serif" '
                         f'fill="{PALETTE[k % len(PALETTE)]}">{escape(lab)}</text>')
    return _document(cv.width, cv.height, parts)


def plot_time_series(t: np.ndarray, states: np.ndarray, inputs: Optional[np.ndarray] = None,
                     title: str = "") -> str:
    """Stacked panels: state components over time, then input components."""
    panels = [("state", np.atleast_2d(states.T).T)]
    if inputs is not None and inputs.size:
        panels.append(("input", np.atleast_2d(inputs.T).T))
    parts = []
    height = 300
    for k, (name, Y) in enumerate(panels):
        cv = SvgCanvas(640, height)
        tt = np.asarray(t[:Y.shape[0]], dtype=float)
        cv.fit(np.column_stack([np.repeat(tt, Y.shape[1]), Y.ravel()]))
        for j in range(Y.shape[1]):
            cv.polyline(np.column_stack([tt, Y[:, j]]), PALETTE[j % len(PALETTE)])
            cv.text(cv.width - cv.margin - 4, cv.margin + 14 * (j + 1), f"{name[0]}{j}", size=10,
                    anchor="end")
        cv.axes("step", name)
        if k == 0 and title:
            cv.text(cv.width / 2, 24, title, size=14)
        parts.append(cv.body(0, k * height))
    return _document(640, height * len(panels), parts)
