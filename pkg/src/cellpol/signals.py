"""Signal fields ``g: surface -> (0, 1)`` with known maxima and local models.

Gaussian bumps realize nondegenerate maxima with prescribed Hessians. The
degenerate cases use an exact polynomial local model blended into the
background level by a quintic smoothstep, so the model holds to machine
precision on the inner window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .domain import DomainSpec
from .profiles import periodic_interpolant

SEPARATION_FACTOR = 10.0


@dataclass(frozen=True)
class LocalModel:
    """Leading-order description of ``gmax - g`` near a maximum.

    kind is one of ``quadratic``, ``homogeneous``, ``anisotropic``,
    ``noncoercive``, ``curve``; ``params`` carries the coefficients.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def deficit(self, d1, d2):
        """``gmax - g`` as a function of the chart offset from the maximum."""
        p = self.params
        if self.kind == "quadratic":
            A = 0.5 * np.asarray(p["hessian"], dtype=float)
            return A[0, 0] * d1 * d1 + 2.0 * A[0, 1] * d1 * d2 + A[1, 1] * d2 * d2
        if self.kind == "homogeneous":
            r = np.hypot(d1, d2)
            th = np.arctan2(d2, d1)
            return r ** p["gamma"] * angular_profile(p["angular_coeffs"], th)
        if self.kind == "anisotropic":
            return p["a"] * d1 ** 4 + p["b"] * d2 ** 2
        if self.kind == "noncoercive":
            return p["a"] * d1 ** 4 + p["b"] * d1 ** 2 * d2 ** 2 + p["c"] * d2 ** 6
        raise ValueError(f"no planar deficit for kind {self.kind!r}")


@dataclass(frozen=True)
class Maximum:
    position: Tuple[float, float]
    model: LocalModel


@dataclass(frozen=True)
class SignalField:
    domain: DomainSpec
    values: np.ndarray = field(repr=False)
    gmax: float
    background: float
    maxima: Tuple[Maximum, ...]
    name: str = ""

    def __post_init__(self):
        v = self.values
        if v.shape != self.domain.shape:
            raise ValueError("signal samples do not match the grid")
        if not (np.all(v > 0.0) and np.all(v < 1.0)):
            raise ValueError("signal must take values in (0, 1)")


def angular_profile(coeffs: Sequence[float], theta):
    """Truncated Fourier series ``c0 + sum_k (a_k cos k th + b_k sin k th)``."""
    coeffs = list(coeffs)
    out = np.full(np.shape(theta), float(coeffs[0]))
    for k in range(1, len(coeffs) // 2 + 1):
        a = coeffs[2 * k - 1]
        b = coeffs[2 * k] if 2 * k < len(coeffs) else 0.0
        out = out + a * np.cos(k * theta) + b * np.sin(k * theta)
    return out


def smoothstep_cutoff(rho, inner: float = 1.0, outer: float = 2.0):
    """1 for ``rho <= inner``, 0 for ``rho >= outer``, C^2 quintic in between."""
    t = np.clip((np.asarray(rho, dtype=float) - inner) / (outer - inner), 0.0, 1.0)
    return 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _check_levels(gmax, background):
    if not 0.0 < background < gmax < 1.0:
        raise ValueError("need 0 < background < gmax < 1")


# ---------------------------------------------------------------------------
# nondegenerate maxima


def morse_signal(domain: DomainSpec, maxima, gmax: float = 0.9,
                 background: Optional[float] = None, name: str = "morse") -> SignalField:
    """Sum of Gaussian bumps with peak ``gmax`` and Hessians ``-D^2 g(p_i) = H_i``.

    ``maxima`` is a sequence of ``(position, H)`` pairs.
    """
    if background is None:
        background = 0.1 * gmax
    _check_levels(gmax, background)
    amp = gmax - background
    total = np.zeros(domain.shape)
    forms, radii = [], []
    for pos, H in maxima:
        H = np.asarray(H, dtype=float)
        ev = np.linalg.eigvalsh(H)
        if ev[0] <= 0.0 or not np.allclose(H, H.T):
            raise ValueError("each Hessian must be symmetric positive definite")
        B = H / amp
        forms.append(B)
        radii.append(1.0 / math.sqrt(ev[0] / amp))
    # pairwise separation in units of the widest bump
    L = np.array(domain.extent)
    per = np.array(domain.periodic_axes)
    for i, (pi, _) in enumerate(maxima):
        for j, (pj, _) in enumerate(maxima):
            if j <= i:
                continue
            d = np.asarray(pj, float) - np.asarray(pi, float)
            d = np.where(per, d - L * np.round(d / L), d)
            if np.linalg.norm(d) < SEPARATION_FACTOR * max(radii):
                raise ValueError("overlapping bumps: maxima closer than 10 bump radii")
    for (pos, _), B in zip(maxima, forms):
        d1, d2 = domain.displacement(pos)
        q = B[0, 0] * d1 * d1 + 2.0 * B[0, 1] * d1 * d2 + B[1, 1] * d2 * d2
        total += np.exp(-0.5 * q)
    # cross-talk at each peak must be negligible
    for i, (pos, _) in enumerate(maxima):
        other = 0.0
        for j, (pj, _) in enumerate(maxima):
            if j == i:
                continue
            d = np.asarray(pos, float) - np.asarray(pj, float)
            d = np.where(per, d - L * np.round(d / L), d)
            other += math.exp(-0.5 * float(d @ forms[j] @ d))
        if other > 1e-12:
            raise ValueError("overlapping bumps: cross-talk above 1e-12 at a peak")
    values = background + amp * total
    if np.any(values > gmax * (1.0 + 1e-12)):
        raise ValueError("overlapping bumps: signal exceeds gmax off-peak")
    maxs = tuple(Maximum(tuple(map(float, p)), LocalModel("quadratic", {"hessian": np.asarray(H, float)}))
                 for p, H in maxima)
    return SignalField(domain, values, gmax, background, maxs, name)


# ---------------------------------------------------------------------------
# polynomial local models with a smooth cutoff


def _window_radii(model: LocalModel, gap: float) -> Tuple[float, float]:
    """Axis radii of a cutoff ellipse on which the deficit stays below ``gap/2``.

    Each axis radius solves ``deficit = gap/2`` along that axis; both are then
    shrunk together until the bound holds on the whole ellipse.
    """
    half = 0.5 * gap
    r = []
    for e in ((1.0, 0.0), (0.0, 1.0)):
        fn = lambda t: float(model.deficit(t * e[0], t * e[1])) - half
        hi = 1.0
        while fn(hi) < 0.0:
            hi *= 2.0
        r.append(brentq(fn, 0.0, hi))
    r1, r2 = r
    th = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
    for _ in range(200):
        if float(np.max(model.deficit(r1 * np.cos(th), r2 * np.sin(th)))) <= half * (1 + 1e-12):
            return r1, r2
        r1 *= 0.98
        r2 *= 0.98
    raise ValueError("could not fit a cutoff window for the local model")


def local_model_signal(domain: DomainSpec, maxima: Sequence[Maximum], gmax: float,
                       background: float, windows: Sequence[Tuple[float, float]],
                       inner_fraction: float = 0.7, name: str = "") -> SignalField:
    """``g = gmax - sum_i [chi_i f_i + (1 - chi_i)(gmax - bg)]`` restricted per window.

    ``windows[i]`` are the outer axis radii of the cutoff ellipse around
    maximum ``i``; ``chi_i = 1`` inside ``inner_fraction`` of it. Windows must
    be disjoint.
    """
    _check_levels(gmax, background)
    gap = gmax - background
    deficit = np.full(domain.shape, gap)
    claimed = np.zeros(domain.shape, dtype=bool)
    for mx, (R1, R2) in zip(maxima, windows):
        d1, d2 = domain.displacement(mx.position)
        rho = np.sqrt((d1 / R1) ** 2 + (d2 / R2) ** 2)
        inside = rho < 1.0
        if np.any(inside & claimed):
            raise ValueError("cutoff windows overlap")
        claimed |= inside
        chi = smoothstep_cutoff(rho, inner_fraction, 1.0)
        f = np.where(inside, mx.model.deficit(d1, d2), 0.0)
        deficit = np.where(inside, chi * f + (1.0 - chi) * gap, deficit)
    values = gmax - deficit
    if not (np.all(values > 0.0) and np.all(values < 1.0)):
        raise ValueError("range violation: signal leaves (0, 1)")
    return SignalField(domain, values, gmax, background, tuple(maxima), name)


def homogeneous_signal(domain: DomainSpec, p, gamma: float, angular_coeffs=(1.0,),
                       gmax: float = 0.9, background: Optional[float] = None,
                       window: Optional[float] = None, inner_fraction: float = 0.7) -> SignalField:
    """Maximum with ``gmax - g = r^gamma A(theta)`` on the inner window."""
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    th = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)
    if np.min(angular_profile(angular_coeffs, th)) <= 0.0:
        raise ValueError("angular profile must be strictly positive")
    background = 0.1 * gmax if background is None else background
    model = LocalModel("homogeneous", {"gamma": float(gamma), "angular_coeffs": tuple(angular_coeffs)})
    if window is None:
        R = _window_radii(model, gmax - background)
    else:
        R = (window, window)
    return local_model_signal(domain, [Maximum(tuple(map(float, p)), model)], gmax, background,
                              [R], inner_fraction, name=f"hom({gamma:g})")


def anisotropic_signal(domain: DomainSpec, p, a: float = 1.0, b: float = 1.0, gmax: float = 0.9,
                       background: Optional[float] = None, window=None,
                       inner_fraction: float = 0.7) -> SignalField:
    """Degenerate maximum ``g = gmax - a x1^4 - b x2^2`` on the inner window."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    background = 0.1 * gmax if background is None else background
    model = LocalModel("anisotropic", {"a": float(a), "b": float(b)})
    R = _window_radii(model, gmax - background) if window is None else tuple(window)
    return local_model_signal(domain, [Maximum(tuple(map(float, p)), model)], gmax, background,
                              [R], inner_fraction, name="aniso")


def noncoercive_signal(domain: DomainSpec, p, a: float = 1.0, b: float = 1.0, c: float = 1.0,
                       gmax: float = 0.9, background: Optional[float] = None, window=None,
                       inner_fraction: float = 0.7) -> SignalField:
    """Maximum ``g = gmax - a x1^4 - b x1^2 x2^2 - c x2^6`` on the inner window."""
    if min(a, b, c) <= 0:
        raise ValueError("a, b, c must be positive")
    background = 0.1 * gmax if background is None else background
    model = LocalModel("noncoercive", {"a": float(a), "b": float(b), "c": float(c)})
    R = _window_radii(model, gmax - background) if window is None else tuple(window)
    return local_model_signal(domain, [Maximum(tuple(map(float, p)), model)], gmax, background,
                              [R], inner_fraction, name="noncoercive")


def curve_signal(domain: DomainSpec, phi0: float, a_samples, gmax: float = 0.9,
                 background: Optional[float] = None, width: float = 0.25,
                 inner_fraction: float = 0.7) -> SignalField:
    """Maximum on the circle ``phi = phi0``: ``g = gmax - a(theta) (phi - phi0)^2`` near it."""
    if domain.kind != "sphere":
        raise ValueError("curve signals live on the sphere")
    a_samples = np.asarray(a_samples, dtype=float)
    if np.any(a_samples <= 0.0):
        raise ValueError("a(t) must be positive")
    if not 0.0 < phi0 < 0.5 * math.pi:
        raise ValueError("phi0 must lie in (0, pi/2)")
    background = 0.1 * gmax if background is None else background
    _check_levels(gmax, background)
    gap = gmax - background
    a_fun = periodic_interpolant(a_samples)
    phi, theta = domain.mesh()
    at = a_fun(theta)
    w = min(width, math.sqrt(0.5 * gap / float(np.max(a_samples))) * 1.0)
    dphi = phi - phi0
    rho = np.abs(dphi) / w
    chi = smoothstep_cutoff(rho, inner_fraction, 1.0)
    deficit = np.where(rho < 1.0, chi * at * dphi ** 2 + (1.0 - chi) * gap, gap)
    values = gmax - deficit
    if not (np.all(values > 0.0) and np.all(values < 1.0)):
        raise ValueError("range violation: signal leaves (0, 1)")
    model = LocalModel("curve", {"phi0": phi0, "a_samples": tuple(a_samples), "width": w})
    return SignalField(domain, values, gmax, background, (Maximum((phi0, 0.0), model),), "curve")


def fd_hessian(values: np.ndarray, domain: DomainSpec, index) -> np.ndarray:
    """Central-difference ``-D^2 g`` at a grid index (periodic wrap where allowed)."""
    i, j = index
    h1, h2 = domain.spacing
    n1, n2 = domain.shape
    v = lambda a, b: values[a % n1, b % n2]
    g11 = (v(i + 1, j) - 2 * v(i, j) + v(i - 1, j)) / h1 ** 2
    g22 = (v(i, j + 1) - 2 * v(i, j) + v(i, j - 1)) / h2 ** 2
    g12 = (v(i + 1, j + 1) - v(i + 1, j - 1) - v(i - 1, j + 1) + v(i - 1, j - 1)) / (4 * h1 * h2)
    return -np.array([[g11, g12], [g12, g22]])


def nearest_index(domain: DomainSpec, point) -> Tuple[int, int]:
    c1, c2 = domain.centers
    return int(np.argmin(np.abs(c1 - point[0]))), int(np.argmin(np.abs(c2 - point[1])))
