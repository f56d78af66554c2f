"""Post-processing of solved fields: components, free boundaries, rescaling, metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from .domain import DomainSpec
from .profiles import ProfileField, ScalingExponents


@dataclass(frozen=True)
class BoundaryPolyline:
    points: np.ndarray = field(repr=False)    # (k, 2) physical coordinates
    closed: bool
    component: int = -1

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ComponentReport:
    id: int
    cells: int
    mass: float
    centroid: Tuple[float, float]
    bbox: Tuple[Tuple[float, float], Tuple[float, float]]
    boundary: Tuple[BoundaryPolyline, ...] = field(repr=False, default=())
    mask: np.ndarray = field(repr=False, default=None, compare=False)

    def summary(self) -> dict:
        return {"id": self.id, "cells": self.cells, "mass": self.mass,
                "centroid": list(self.centroid), "bbox": [list(b) for b in self.bbox]}


# ---------------------------------------------------------------------------
# components


def _label_periodic(mask: np.ndarray, periodic: Tuple[bool, bool]):
    """4-connected labels, merged across periodic seams (union-find on labels)."""
    lab, n = ndimage.label(mask)
    if n == 0:
        return lab, 0
    parent = np.arange(n + 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    pairs = []
    if periodic[0]:
        pairs.append((lab[0, :], lab[-1, :]))
    if periodic[1]:
        pairs.append((lab[:, 0], lab[:, -1]))
    for a, b in pairs:
        both = (a > 0) & (b > 0)
        for x, y in zip(a[both], b[both]):
            rx, ry = find(x), find(y)
            if rx != ry:
                parent[max(rx, ry)] = min(rx, ry)
    roots = np.array([find(k) for k in range(n + 1)])
    # relabel 1..k in row-major order of first appearance
    flat = roots[lab].ravel()
    _, first = np.unique(flat, return_index=True)
    order = [flat[i] for i in sorted(first) if flat[i] > 0]
    remap = np.zeros(n + 1, dtype=int)
    for new, r in enumerate(order, start=1):
        remap[roots == r] = new
    return remap[lab], len(order)


def _unwrap_shift(mask: np.ndarray, periodic: Tuple[bool, bool]) -> Tuple[int, int]:
    """Roll offsets that move a periodic component away from the seams."""
    shifts = []
    for ax in (0, 1):
        if not periodic[ax]:
            shifts.append(0)
            continue
        occ = mask.any(axis=1 - ax)
        if not occ[0] or not occ[-1]:
            shifts.append(0)
            continue
        free = np.flatnonzero(~occ)
        if free.size == 0:
            shifts.append(0)      # wraps all the way around; leave as is
            continue
        shifts.append(-int(free[0]))
    return shifts[0], shifts[1]


def _component_boundary(mask: np.ndarray, domain: DomainSpec, cid: int) -> Tuple[BoundaryPolyline, ...]:
    s1, s2 = _unwrap_shift(mask, domain.periodic_axes)
    m = np.roll(mask, (s1, s2), axis=(0, 1))
    h1, h2 = domain.spacing
    pad = np.pad(m.astype(float), 1)
    out = []
    for c in find_contours(pad, 0.5):
        idx = c - 1.0                         # back to unpadded cell indices
        x1 = domain.lower[0] + (idx[:, 0] - s1 + 0.5) * h1
        x2 = domain.lower[1] + (idx[:, 1] - s2 + 0.5) * h2
        pts = np.column_stack([x1, x2])
        closed = bool(np.allclose(c[0], c[-1]))
        out.append(BoundaryPolyline(pts, closed, cid))
    return tuple(out)


def active_components(u: np.ndarray, domain: DomainSpec, boundaries: bool = True) -> List[ComponentReport]:
    """4-connected components of ``{u > 0}``, sorted by descending mass.

    Periodic seams are merged. Ties keep row-major order of first cell.
    """
    u = np.asarray(u, dtype=float)
    mask = u > 0.0
    lab, n = _label_periodic(mask, domain.periodic_axes)
    if n == 0:
        return []
    area = domain.cell_area
    idx = np.arange(1, n + 1)
    masses = ndimage.sum_labels(u * area, lab, idx)
    reports = []
    for k, mk in zip(idx, masses):
        cm = lab == k
        s1, s2 = _unwrap_shift(cm, domain.periodic_axes)
        # unwrap a seam-crossing component into contiguous coordinates
        rm = np.roll(cm, (s1, s2), axis=(0, 1))
        ru = np.roll(u * area, (s1, s2), axis=(0, 1))
        c1 = _unwrapped_axis(domain, 0, s1)
        c2 = _unwrapped_axis(domain, 1, s2)
        U1, U2 = np.meshgrid(c1, c2, indexing="ij")
        w = ru[rm]
        tot = float(w.sum())
        if tot > 0:
            cen = (float(np.sum(U1[rm] * w) / tot), float(np.sum(U2[rm] * w) / tot))
        else:
            cen = (float(U1[rm].mean()), float(U2[rm].mean()))
        bbox = ((float(U1[rm].min()), float(U1[rm].max())), (float(U2[rm].min()), float(U2[rm].max())))
        reports.append([float(mk), int(np.flatnonzero(cm.ravel())[0]), cm, cen, bbox])
    reports.sort(key=lambda r: (-r[0], r[1]))
    out = []
    for cid, (mk, _, cm, cen, bbox) in enumerate(reports):
        bnd = _component_boundary(cm, domain, cid) if boundaries else ()
        out.append(ComponentReport(cid, int(cm.sum()), mk, cen, bbox, bnd, cm))
    return out


def _unwrapped_axis(domain: DomainSpec, ax: int, shift: int) -> np.ndarray:
    """Cell-centre coordinates along ``ax`` after ``np.roll(..., shift)``, kept contiguous."""
    h = domain.spacing[ax]
    n = domain.shape[ax]
    return domain.lower[ax] + (np.arange(n) - shift + 0.5) * h


def extract_free_boundary(u: np.ndarray, domain: DomainSpec) -> List[BoundaryPolyline]:
    """Marching squares on the active indicator at level 1/2, per component."""
    mask = np.asarray(u) > 0.0
    lab, n = _label_periodic(mask, domain.periodic_axes)
    out: List[BoundaryPolyline] = []
    for k in range(1, n + 1):
        out.extend(_component_boundary(lab == k, domain, k - 1))
    return out


def hausdorff_distance(P, Q) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    P = np.atleast_2d(np.asarray(getattr(P, "points", P), dtype=float))
    Q = np.atleast_2d(np.asarray(getattr(Q, "points", Q), dtype=float))
    if P.size == 0 or Q.size == 0:
        raise ValueError("hausdorff distance needs nonempty point sets")
    dpq, _ = cKDTree(Q).query(P)
    dqp, _ = cKDTree(P).query(Q)
    return float(max(dpq.max(), dqp.max()))


def polyline_points(lines: Sequence[BoundaryPolyline]) -> np.ndarray:
    if not lines:
        return np.zeros((0, 2))
    return np.vstack([ln.points for ln in lines])


# ---------------------------------------------------------------------------
# blow-up rescaling


@dataclass(frozen=True)
class ReferenceGrid:
    """Fixed cell-centred grid in blow-up coordinates ``y``."""

    half_widths: Tuple[float, float]
    shape: Tuple[int, int]

    @property
    def axes(self):
        (w1, w2), (n1, n2) = self.half_widths, self.shape
        return (-w1 + (np.arange(n1) + 0.5) * 2 * w1 / n1,
                -w2 + (np.arange(n2) + 0.5) * 2 * w2 / n2)

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    @property
    def cell_area(self) -> float:
        return 4.0 * self.half_widths[0] * self.half_widths[1] / (self.shape[0] * self.shape[1])


def _interpolator(u: np.ndarray, domain: DomainSpec) -> RegularGridInterpolator:
    """Bilinear interpolant; periodic axes wrap, window edges see zero ghosts."""
    c1, c2 = domain.centers
    h1, h2 = domain.spacing
    p1, p2 = domain.periodic_axes
    if p1:
        u = np.concatenate([u[-1:, :], u, u[:1, :]], axis=0)
        c1 = np.concatenate([[c1[0] - h1], c1, [c1[-1] + h1]])
    elif domain.kind == "window":
        u = np.pad(u, ((1, 1), (0, 0)))
        c1 = np.concatenate([[c1[0] - h1], c1, [c1[-1] + h1]])
    if p2:
        u = np.concatenate([u[:, -1:], u, u[:, :1]], axis=1)
        c2 = np.concatenate([[c2[0] - h2], c2, [c2[-1] + h2]])
    elif domain.kind == "window":
        u = np.pad(u, ((0, 0), (1, 1)))
        c2 = np.concatenate([[c2[0] - h2], c2, [c2[-1] + h2]])
    return RegularGridInterpolator((c1, c2), u, method="linear", bounds_error=True)


def rescale_solution(u: np.ndarray, domain: DomainSpec, center, exponents: ScalingExponents,
                     m: float, grid: ReferenceGrid) -> np.ndarray:
    """``U(y) = m^(-amplitude) u(center + (m^sp1 y1, m^sp2 y2))`` on a fixed reference grid.

    Raises
    ------
    ValueError
        If the reference window, mapped to physical coordinates, leaves the
        domain (periodic axes wrap and never do).
    """
    if m <= 0.0:
        raise ValueError("m must be positive")
    (sp1, sp2), amp, _ = exponents.as_floats()
    Y1, Y2 = grid.mesh()
    x1 = center[0] + m ** sp1 * Y1
    x2 = center[1] + m ** sp2 * Y2
    p1, p2 = domain.periodic_axes
    L1, L2 = domain.extent
    if p1:
        x1 = domain.lower[0] + np.mod(x1 - domain.lower[0], L1)
    if p2:
        x2 = domain.lower[1] + np.mod(x2 - domain.lower[1], L2)
    interp = _interpolator(np.asarray(u, dtype=float), domain)
    (lo1, hi1), (lo2, hi2) = [(g[0], g[-1]) for g in interp.grid]
    if x1.min() < lo1 or x1.max() > hi1 or x2.min() < lo2 or x2.max() > hi2:
        raise ValueError("reference window exits the physical domain")
    vals = interp(np.column_stack([x1.ravel(), x2.ravel()])).reshape(Y1.shape)
    return m ** (-amp) * vals


def profile_error(U: np.ndarray, profile: ProfileField, grid: ReferenceGrid) -> dict:
    """Sup and L1 distance between a rescaled field and a limit profile."""
    Y1, Y2 = grid.mesh()
    P = profile(Y1, Y2)
    d = np.abs(np.asarray(U) - P)
    return {"linf": float(d.max()), "l1": float(d.sum() * grid.cell_area)}


def rescale_points(points: np.ndarray, center, exponents: ScalingExponents, m: float,
                   domain: Optional[DomainSpec] = None) -> np.ndarray:
    """Map physical points to blow-up coordinates ``y = (x - center) / m^sp``."""
    (sp1, sp2), _, _ = exponents.as_floats()
    d = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    if domain is not None:
        L = np.array(domain.extent)
        per = np.array(domain.periodic_axes)
        d = np.where(per, d - L * np.round(d / L), d)
    return d / np.array([m ** sp1, m ** sp2])


# ---------------------------------------------------------------------------
# ellipse fitting


@dataclass(frozen=True)
class EllipseFit:
    center: Tuple[float, float]
    a: float                  # major semiaxis
    b: float                  # minor semiaxis
    angle: float              # major-axis direction in (-pi/2, pi/2]
    rms: float                # rms of first-order geometric distance

    def sample(self, n: int = 720) -> np.ndarray:
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        c, s = math.cos(self.angle), math.sin(self.angle)
        x, y = self.a * np.cos(t), self.b * np.sin(t)
        return np.column_stack([self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])


def ellipse_fit(boundary) -> EllipseFit:
    """Direct least-squares ellipse (Halir-Flusser form) on normalized points.

    Raises
    ------
    ValueError
        Fewer than 6 points, or the best conic is not an ellipse (e.g.
        collinear input).
    """
    pts = np.asarray(getattr(boundary, "points", boundary), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 6:
        raise ValueError("ellipse fit needs at least 6 points")
    if getattr(boundary, "closed", False) and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    mean = pts.mean(axis=0)
    scale = math.sqrt(np.mean(np.sum((pts - mean) ** 2, axis=1)))
    if scale == 0.0:
        raise ValueError("degenerate point set")
    x, y = ((pts - mean) / scale).T
    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1, S2, S3 = D1.T @ D1, D1.T @ D2, D2.T @ D2
    try:
        T = -np.linalg.solve(S3, S2.T)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate conic: points are collinear") from exc
    Mm = S1 + S2 @ T
    Mm = np.array([Mm[2] / 2.0, -Mm[1], Mm[0] / 2.0])
    w, V = np.linalg.eig(Mm)
    V = np.real(V)
    cond = 4.0 * V[0] * V[2] - V[1] ** 2
    ok = np.flatnonzero(cond > 0)
    if ok.size == 0:
        raise ValueError("degenerate conic: no ellipse fits the points")
    a1 = V[:, ok[0]]
    A, B, C = a1
    Dc, Ec, F = T @ a1
    Q = np.array([[A, B / 2.0], [B / 2.0, C]])
    try:
        c0 = np.linalg.solve(2.0 * Q, [-Dc, -Ec])
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate conic") from exc
    F0 = F + 0.5 * (Dc * c0[0] + Ec * c0[1])
    Mq = Q / (-F0)
    lam, R = np.linalg.eigh(Mq)
    if np.any(lam <= 0.0):
        raise ValueError("degenerate conic: not an ellipse")
    semi = 1.0 / np.sqrt(lam)          # ascending lam -> descending semiaxes
    major = R[:, 0]
    ang = math.atan2(major[1], major[0])
    if ang <= -math.pi / 2:
        ang += math.pi
    elif ang > math.pi / 2:
        ang -= math.pi
    # first-order geometric residual in normalized units
    val = A * x * x + B * x * y + C * y * y + Dc * x + Ec * y + F
    gx = 2 * A * x + B * y + Dc
    gy = B * x + 2 * C * y + Ec
    rms = float(np.sqrt(np.mean((val / np.maximum(np.hypot(gx, gy), 1e-300)) ** 2))) * scale
    center = (float(mean[0] + scale * c0[0]), float(mean[1] + scale * c0[1]))
    return EllipseFit(center, float(scale * semi[0]), float(scale * semi[1]), ang, rms)


def ellipse_points(semiaxes: Tuple[float, float], angle: float = 0.0, center=(0.0, 0.0),
                   n: int = 720) -> np.ndarray:
    a, b = semiaxes
    return EllipseFit(tuple(center), a, b, angle, 0.0).sample(n)
