"""Closed-form small-mass limit profiles and their parameter formulas.

All evaluators are vectorized over numpy arrays and clamp to exactly zero
outside their support, so support checks can be done bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import beta as beta_fn

# Mass of the normalized quadratic profile over {|y|^2 < 2}:
# 2*pi * int_0^sqrt2 (r - r^3 + r^5/4) dr = 2*pi/3.
KAPPA = 2.0 * math.pi / 3.0
# Alternative stated constant; disagrees with direct integration, kept for reference only.
KAPPA_STATED = 73.0 * math.pi / 96.0

# Power of tr(-D^2 g) in the stated mass-fraction formula. The profile mass
# actually scales like tr(A)^-2 (see general_quadratic_profile), so both are offered.
TRACE_POWER_STATED = 1.5
TRACE_POWER_SCALING = 2.0

# Curve-maximum profile on the sphere: mass of one transverse slice is
# CURVE_SLICE_COEFF * alpha^(5/2) * a^(-3/2).
CURVE_SLICE_COEFF = 4.0 * math.sqrt(3.0) / 5.0
CURVE_ALPHA_COEFF_STATED = 23.0 * math.sqrt(3.0) / 20.0

Bounds = Tuple[Tuple[float, float], Tuple[float, float]]


@dataclass(frozen=True)
class ProfileField:
    """Nonnegative planar profile with an explicit support descriptor.

    ``func`` is the polynomial (or otherwise analytic) expression valid on the
    support; ``support`` returns a boolean mask. Calling the field evaluates
    ``func`` on the support and writes exact zeros elsewhere.
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    support: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bbox: Bounds
    boundary: Optional[Callable[[int], np.ndarray]] = None
    meta: dict = field(default_factory=dict)

    def __call__(self, y1, y2):
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        y1, y2 = np.broadcast_arrays(y1, y2)
        inside = self.support(y1, y2)
        out = np.zeros(y1.shape)
        if np.any(inside):
            out[inside] = np.maximum(self.func(y1[inside], y2[inside]), 0.0)
        return out

    def mass(self, n: int = 2048) -> float:
        return midpoint_mass(self, n)


def midpoint_mass(profile: ProfileField, n: int = 2048) -> float:
    """Midpoint-rule integral of ``profile`` over its bounding box."""
    (a1, b1), (a2, b2) = profile.bbox
    h1 = (b1 - a1) / n
    h2 = (b2 - a2) / n
    y1 = a1 + (np.arange(n) + 0.5) * h1
    y2 = a2 + (np.arange(n) + 0.5) * h2
    total = 0.0
    # row blocks keep memory bounded for large n
    for start in range(0, n, 256):
        Y1, Y2 = np.meshgrid(y1[start:start + 256], y2, indexing="ij")
        total += float(profile(Y1, Y2).sum())
    return total * h1 * h2


def alpha0(gmax: float) -> float:
    """Limit of the multiplier as the mass vanishes, ``(1 - gmax) / gmax``."""
    if not 0.0 < gmax < 1.0:
        raise ValueError(f"gmax must lie in (0, 1), got {gmax!r}")
    return (1.0 - gmax) / gmax


# ---------------------------------------------------------------------------
# quadratic maxima


@dataclass(frozen=True)
class QuadProfileParams:
    s: float
    C0: float
    beta2: float
    beta4: float
    k1: float
    k2: float

    def residuals(self) -> Tuple[float, float, float]:
        """Residuals of the two square equations and the product equation."""
        s, C0, b2, b4 = self.s, self.C0, self.beta2, self.beta4
        r1 = (0.25 - b2) ** 2 - 4.0 * C0 * (s / 12.0 + b4)
        r2 = (0.25 + b2) ** 2 - 4.0 * C0 * ((1.0 - s) / 12.0 + b4)
        r3 = (0.25 - b2) * (0.25 + b2) + 12.0 * C0 * b4
        return r1, r2, r3

    @property
    def semiaxes(self) -> Tuple[float, float]:
        """Semiaxes of the support ellipse along y1 and y2."""
        return math.sqrt(2.0 * self.C0 / self.k1), math.sqrt(2.0 * self.C0 / self.k2)


def _check_s(s: float) -> None:
    if not 0.0 < s <= 0.5:
        raise ValueError(f"anisotropy ratio s must lie in (0, 1/2], got {s!r}")


def c0_closed_form(s: float) -> float:
    """Peak value written with the '-sqrt' root of the quadratic in C0.

    Loses all accuracy as s -> 1/2 (0/0); use :func:`quad_params` instead.
    """
    _check_s(s)
    q = (1.0 - 2.0 * s) / 3.0
    if q == 0.0:
        raise ZeroDivisionError("closed form is singular at s = 1/2")
    return (1.0 / q) ** 2 * (0.125 - 0.5 * math.sqrt(1.0 / 16.0 - 0.5 * q * q))


def quad_params(s: float) -> QuadProfileParams:
    """Parameters of the quadratic-maximum limit profile for ratio ``s``.

    ``C0`` solves ``1/8 - C0/4 + C0^2 q^2 = 0`` with ``q = (1-2s)/3`` on the
    branch that stays finite at ``s = 1/2``; it is evaluated in rationalized
    form ``1 / (4 (1/4 + sqrt(1/16 - q^2/2)))`` to avoid cancellation.
    """
    _check_s(s)
    q = (1.0 - 2.0 * s) / 3.0
    C0 = 1.0 / (4.0 * (0.25 + math.sqrt(1.0 / 16.0 - 0.5 * q * q)))
    beta2 = C0 * q
    beta4 = 1.0 / 48.0 - 1.0 / (64.0 * C0)
    return QuadProfileParams(s=s, C0=C0, beta2=beta2, beta4=beta4,
                             k1=0.25 - beta2, k2=0.25 + beta2)


def quad_profile_eval(params: QuadProfileParams, y1, y2):
    """Evaluate ``C0 - t + t^2/(4 C0)``, ``t = k1 y1^2 + k2 y2^2``, clamped at ``t >= 2 C0``."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    t = params.k1 * y1 * y1 + params.k2 * y2 * y2
    val = params.C0 - t + t * t / (4.0 * params.C0)
    return np.where(t < 2.0 * params.C0, np.maximum(val, 0.0), 0.0)


def quad_profile(params: QuadProfileParams) -> ProfileField:
    C0, k1, k2 = params.C0, params.k1, params.k2
    a1, a2 = params.semiaxes

    def func(y1, y2):
        t = k1 * y1 * y1 + k2 * y2 * y2
        return C0 - t + t * t / (4.0 * C0)

    def support(y1, y2):
        return k1 * y1 * y1 + k2 * y2 * y2 < 2.0 * C0

    def boundary(n):
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return np.column_stack([a1 * np.cos(th), a2 * np.sin(th)])

    return ProfileField(func, support, ((-a1, a1), (-a2, a2)), boundary,
                        meta={"params": params, "semiaxes": (a1, a2)})


def quad_mass(s: float, kappa: float = KAPPA) -> float:
    """Mass of the normalized quadratic profile, ``kappa C0^2 / sqrt(k1 k2)``."""
    p = quad_params(s)
    return kappa * p.C0 ** 2 / math.sqrt(p.k1 * p.k2)


def anisotropy_ratio(form) -> Tuple[float, float]:
    """Return ``(s, trace)`` of an SPD 2x2 form, ``s = min eig / trace``."""
    form = np.asarray(form, dtype=float)
    if form.shape != (2, 2):
        raise ValueError("expected a 2x2 form")
    if not np.allclose(form, form.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(form).max())):
        raise ValueError("form is not symmetric")
    ev = np.linalg.eigvalsh(form)
    if ev[0] <= 0.0:
        raise ValueError(f"form is not positive definite (eigenvalues {ev})")
    tr = float(ev[0] + ev[1])
    return min(float(ev[0] / tr), 0.5), tr


def lambda_fractions(hessians: Sequence, trace_power: float = TRACE_POWER_STATED,
                     kappa: float = KAPPA) -> np.ndarray:
    """Limiting mass fractions at nondegenerate maxima.

    Parameters
    ----------
    hessians : sequence of SPD 2x2 arrays, the forms ``-D^2 g(p_i)``.
    trace_power : exponent ``q`` in ``M(s_i) tr_i^-q``. The default is the
        stated value 3/2; :data:`TRACE_POWER_SCALING` (= 2) is what the
        profile mass scaling gives.
    kappa : cancels in the ratio; accepted for completeness.

    Returns
    -------
    numpy array of positive weights summing to one.
    """
    if len(hessians) == 0:
        raise ValueError("need at least one Hessian")
    w = []
    for H in hessians:
        s, tr = anisotropy_ratio(H)
        w.append(quad_mass(s, kappa) * tr ** (-trace_power))
    w = np.asarray(w)
    return w / w.sum()


def _rotation(A) -> Tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=float)
    anisotropy_ratio(A)  # validates
    ev, R = np.linalg.eigh(A)  # ascending; column 0 is the flat direction
    if np.linalg.det(R) < 0:
        R[:, 1] = -R[:, 1]
    return ev, R


def general_quadratic_profile(A, alpha: float, gmax: float = 1.0) -> ProfileField:
    """Limit profile for ``g = gmax - x^T A x`` with multiplier ``alpha``.

    Solves ``-lap v = (alpha gmax - x^T A x / gmax) 1_{v>0}``:
    ``v(x) = alpha^2 gmax^3 / tr A * Phi(sqrt(tr A / (gmax^2 alpha)) R^T x; s)``
    where ``R`` diagonalizes ``A``. Its mass is
    ``alpha^3 gmax^5 M(s) / tr(A)^2``.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    ev, R = _rotation(A)
    tr = float(ev.sum())
    s = min(float(ev[0] / tr), 0.5)
    params = quad_params(s)
    amp = alpha ** 2 * gmax ** 3 / tr
    c = math.sqrt(tr / (gmax ** 2 * alpha))
    base = quad_profile(params)
    b1, b2 = params.semiaxes
    semi = (b1 / c, b2 / c)

    def to_ref(y1, y2):
        z1 = R[0, 0] * y1 + R[1, 0] * y2
        z2 = R[0, 1] * y1 + R[1, 1] * y2
        return c * z1, c * z2

    def func(y1, y2):
        return amp * base.func(*to_ref(y1, y2))

    def support(y1, y2):
        return base.support(*to_ref(y1, y2))

    def boundary(n):
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        z = np.column_stack([semi[0] * np.cos(th), semi[1] * np.sin(th)])
        return z @ R.T

    # axis-aligned bounding box of the rotated ellipse
    e1 = math.hypot(semi[0] * R[0, 0], semi[1] * R[0, 1])
    e2 = math.hypot(semi[0] * R[1, 0], semi[1] * R[1, 1])
    angle = math.atan2(R[1, 0], R[0, 0])
    meta = {"params": params, "s": s, "trace": tr, "semiaxes": semi,
            "angle": angle, "amplitude": amp, "alpha": alpha, "gmax": gmax,
            "predicted_mass": alpha ** 3 * gmax ** 5 * quad_mass(s) / tr ** 2}
    return ProfileField(func, support, ((-e1, e1), (-e2, e2)), boundary, meta)


def quadratic_alpha_bar(A, gmax: float = 1.0, mass: float = 1.0) -> float:
    """Multiplier making :func:`general_quadratic_profile` carry ``mass``."""
    s, tr = anisotropy_ratio(A)
    return (mass * tr ** 2 / (gmax ** 5 * quad_mass(s))) ** (1.0 / 3.0)


def homogeneous_rescale(profile: ProfileField, alpha: float, gamma: float) -> ProfileField:
    """``v_alpha(y) = alpha^(1+2/gamma) v(y / alpha^(1/gamma))``; mass scales by ``alpha^(1+4/gamma)``."""
    if alpha <= 0.0 or gamma <= 0.0:
        raise ValueError("alpha and gamma must be positive")
    amp = alpha ** (1.0 + 2.0 / gamma)
    dil = alpha ** (1.0 / gamma)

    def func(y1, y2):
        return amp * profile.func(y1 / dil, y2 / dil)

    def support(y1, y2):
        return profile.support(y1 / dil, y2 / dil)

    boundary = None
    if profile.boundary is not None:
        def boundary(n):
            return dil * profile.boundary(n)

    (a1, b1), (a2, b2) = profile.bbox
    meta = dict(profile.meta, rescale=(alpha, gamma))
    return ProfileField(func, support, ((dil * a1, dil * b1), (dil * a2, dil * b2)),
                        boundary, meta)


# ---------------------------------------------------------------------------
# anisotropic maximum  g = gmax - a x1^4 - b x2^2


def _deg_phi(z1, z2):
    w = z2 * z2 / 3.0 + z1 ** 4
    return 0.75 - 1.5 * w + 0.75 * w * w


def deg_profile_eval(y1, y2, alpha: float = 1.0):
    """``alpha^2 Phi(y1 / alpha^(1/4), y2 / alpha^(1/2))`` with the quartic-quadratic profile.

    ``Phi = 3/4 - 3/2 w + 3/4 w^2`` on ``w = y2^2/3 + y1^4 <= 1`` and zero elsewhere.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    z1 = np.asarray(y1, dtype=float) / alpha ** 0.25
    z2 = np.asarray(y2, dtype=float) / alpha ** 0.5
    w = z2 * z2 / 3.0 + z1 ** 4
    val = 0.75 - 1.5 * w + 0.75 * w * w
    return np.where(w <= 1.0, alpha ** 2 * np.maximum(val, 0.0), 0.0)


def deg_unit_mass() -> float:
    """Integral of the unnormalized profile (alpha = 1): ``(2 sqrt3 / 5) B(1/4, 7/2)``."""
    return 2.0 * math.sqrt(3.0) / 5.0 * beta_fn(0.25, 3.5)


def anisotropic_limit_profile(a: float = 1.0, b: float = 1.0, gmax: float = 1.0,
                              alpha: Optional[float] = None) -> ProfileField:
    """Limit of the blow-ups at a maximum ``g = gmax - a x1^4 - b x2^2``.

    Solves ``-d22 U = (gmax alpha - (a y1^4 + b y2^2)/gmax) 1_{U>0}``. If
    ``alpha`` is omitted it is fixed by ``int U = 1``.
    """
    D = deg_unit_mass()
    if alpha is None:
        # mass = c^2 gmax / b * l1 * l2 * D with c = gmax*alpha, l2 = sqrt(c gmax / b),
        # l1 = (c gmax / a)^(1/4)  ->  solve for c
        k = gmax / b * (gmax / a) ** 0.25 * (gmax / b) ** 0.5 * D
        c = k ** (-4.0 / 11.0)
        alpha = c / gmax
    c = gmax * alpha
    l1 = (c * gmax / a) ** 0.25
    l2 = math.sqrt(c * gmax / b)
    amp = c * c * gmax / b

    def func(y1, y2):
        return amp * _deg_phi(y1 / l1, y2 / l2)

    def support(y1, y2):
        z1 = y1 / l1
        z2 = y2 / l2
        return z2 * z2 / 3.0 + z1 ** 4 <= 1.0

    def boundary(n):
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        # z2^2/3 + z1^4 = 1 parametrized by cos/sin
        z1 = np.sign(np.cos(th)) * np.sqrt(np.abs(np.cos(th)))
        z2 = math.sqrt(3.0) * np.sin(th)
        return np.column_stack([l1 * z1, l2 * z2])

    r2 = math.sqrt(3.0) * l2
    meta = {"alpha": alpha, "scales": (l1, l2), "amplitude": amp,
            "mass": amp * l1 * l2 * D, "support_level": c * gmax}
    return ProfileField(func, support, ((-l1, l1), (-r2, r2)), boundary, meta)


# ---------------------------------------------------------------------------
# maximum attained on a circle of the sphere


@dataclass(frozen=True)
class CurveProfile:
    """Transverse profile ``U(eta, t)`` around a circle of maxima.

    ``U = 3 alpha^2 / (4 a) - alpha eta^2 / 2 + a eta^4 / 12`` on
    ``a(t) eta^2 / 3 <= alpha``; this is the C^1 solution of
    ``-U'' = (alpha - a eta^2) 1_{U>0}``.
    """

    alpha: float
    a: Callable[[np.ndarray], np.ndarray]
    phi0: float

    def __call__(self, eta, t):
        eta = np.asarray(eta, dtype=float)
        at = self.a(np.mod(np.asarray(t, dtype=float), 2.0 * np.pi))
        al = self.alpha
        val = 0.75 * al * al / at - 0.5 * al * eta ** 2 + at * eta ** 4 / 12.0
        return np.where(at * eta ** 2 / 3.0 <= al, np.maximum(val, 0.0), 0.0)

    def half_width(self, t):
        return np.sqrt(3.0 * self.alpha / self.a(np.mod(np.asarray(t, dtype=float), 2.0 * np.pi)))


def periodic_interpolant(samples) -> Callable[[np.ndarray], np.ndarray]:
    """Periodic cubic spline through samples on a uniform grid of [0, 2 pi)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size < 1:
        raise ValueError("a_samples must be a nonempty 1D array")
    if samples.size == 1 or np.all(samples == samples[0]):
        const = float(samples[0])
        return lambda t: np.full(np.shape(t), const)
    t = np.linspace(0.0, 2.0 * np.pi, samples.size + 1)
    spl = CubicSpline(t, np.append(samples, samples[0]), bc_type="periodic")
    return lambda tt: spl(np.mod(tt, 2.0 * np.pi))


def curve_alpha_bar(a_samples, phi0: float, coeff: float = CURVE_SLICE_COEFF) -> float:
    """``(coeff sin(phi0) int_0^{2pi} a^{-3/2} dt)^(-2/5)`` by the periodic trapezoid rule."""
    a = np.asarray(a_samples, dtype=float)
    if np.any(a <= 0.0):
        raise ValueError("a(t) samples must be positive")
    if not 0.0 < phi0 < 0.5 * math.pi:
        raise ValueError("phi0 must lie in (0, pi/2)")
    integral = 2.0 * math.pi * float(np.mean(a ** -1.5))
    return (coeff * math.sin(phi0) * integral) ** (-0.4)


def curve_profile(a_samples, phi0: float) -> Tuple[CurveProfile, float]:
    """Profile around a circle of maxima at colatitude ``phi0`` with transverse curvature ``a``.

    The multiplier is fixed by ``int int U d eta dt = 1 / sin(phi0)``.
    """
    alpha = curve_alpha_bar(a_samples, phi0)
    return CurveProfile(alpha, periodic_interpolant(a_samples), phi0), alpha


# ---------------------------------------------------------------------------
# heuristic profile for g = gmax - x1^8 - x1^6 x2^2 - |x|^10


def heuristic_profile_eval(y1, t: float):
    """Bounded solution of ``-U'' = (1 - t^10 - t^2 y1^6) 1_{U>0}`` along y1."""
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    y1 = np.asarray(y1, dtype=float)
    q = 1.0 - t ** 10
    z = t ** (1.0 / 3.0) * y1 / q ** (1.0 / 6.0)
    amp = q ** (4.0 / 3.0) / t ** (2.0 / 3.0)
    val = amp * (3.0 * 7.0 ** (1.0 / 3.0) / 8.0 - 0.5 * z ** 2 + z ** 8 / 56.0)
    return np.where(z ** 6 <= 7.0, np.maximum(val, 0.0), 0.0)


def heuristic_support_endpoint(t: float) -> float:
    return 7.0 ** (1.0 / 6.0) * (1.0 - t ** 10) ** (1.0 / 6.0) / t ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# blow-up exponents


@dataclass(frozen=True)
class ScalingExponents:
    """``U_m(y) = m^-amplitude u(m^spatial[0] y1, m^spatial[1] y2)``, ``beta ~ m^alpha``."""

    spatial: Tuple[Fraction, Fraction]
    amplitude: Fraction
    alpha: Fraction

    def as_floats(self):
        return (float(self.spatial[0]), float(self.spatial[1])), float(self.amplitude), float(self.alpha)


def scaling_exponents(case: str, gamma: Optional[float] = None) -> ScalingExponents:
    """Blow-up exponents for ``"homogeneous"`` (needs ``gamma``), ``"anisotropic_4_2"`` or ``"noncoercive"``."""
    if case in ("homogeneous", "morse"):
        if case == "morse":
            gamma = 2
        if gamma is None or gamma <= 0:
            raise ValueError("homogeneous case needs gamma > 0")
        g = Fraction(gamma).limit_denominator(10 ** 6)
        sp = 1 / (g + 4)
        return ScalingExponents((sp, sp), (g + 2) / (g + 4), g / (g + 4))
    if case in ("anisotropic_4_2", "anisotropic", "aniso"):
        return ScalingExponents((Fraction(1, 11), Fraction(2, 11)), Fraction(8, 11), Fraction(4, 11))
    if case == "noncoercive":
        return ScalingExponents((Fraction(1, 8), Fraction(1, 8)), Fraction(3, 4), Fraction(1, 2))
    raise ValueError(f"unknown case {case!r}")


def separation_slope(gamma1: float, gamma2: float) -> float:
    """Exponent in ``m1 ~ m2^p`` for two maxima of homogeneity degrees gamma1, gamma2."""
    return gamma2 * (gamma1 + 4.0) / (gamma1 * (gamma2 + 4.0))
