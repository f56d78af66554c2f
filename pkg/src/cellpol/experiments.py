"""Small-mass sweeps, exponent fits and per-case verification reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import linregress

from . import analysis as an
from .domain import DomainSpec
from .profiles import (KAPPA, KAPPA_STATED, TRACE_POWER_STATED, TRACE_POWER_SCALING, ProfileField,
                       ScalingExponents, anisotropic_limit_profile, anisotropy_ratio,
                       general_quadratic_profile, lambda_fractions, quad_mass,
                       quadratic_alpha_bar, scaling_exponents, separation_slope)
from .signals import (LocalModel, Maximum, SignalField, anisotropic_signal, local_model_signal,
                      morse_signal, noncoercive_signal, _window_radii)
from .vi_solver import (SolverError, SolverOptions, assemble_operator, solve_for_mass,
                        solve_mass_constrained)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class BumpCase:
    """Per-maximum blow-up data: exponents, optional limit profile and reference grid."""

    exponents: ScalingExponents
    profile: Optional[ProfileField] = None
    grid: Optional[an.ReferenceGrid] = None
    rhos: Tuple[float, ...] = ()       # dyadic bands for x1-width measurements


@dataclass
class BumpRecord:
    id: int
    center: Tuple[float, float]
    m: float
    hausdorff: float = math.nan
    linf: float = math.nan
    l1: float = math.nan
    extent: Tuple[float, float] = (math.nan, math.nan)   # max |y1|, |y2| on the active set
    widths: dict = field(default_factory=dict)           # rho -> max |y1| over rho <= |y2| < 2 rho
    boundary: Optional[np.ndarray] = field(default=None, repr=False)   # rescaled free boundary


@dataclass
class SweepRecord:
    M: float
    alpha: float
    alpha0: float
    beta: float
    bumps: List[BumpRecord]
    runtime: float
    valid: bool
    clearance: float = math.nan
    comp_residual: float = math.nan
    nonlocal_residual: float = math.nan
    xi_violations: int = 0
    note: str = ""


@dataclass
class ScalingReport:
    slope: float
    intercept: float
    stderr: float
    residuals: List[float]
    predicted: Optional[float]
    tol: Optional[float]
    passed: Optional[bool]
    n: int
    x: List[float] = field(default_factory=list)
    y: List[float] = field(default_factory=list)

    @property
    def prefactor(self) -> float:
        """``exp(intercept)``: the fitted ``alpha_bar`` when fitting ``beta`` against mass."""
        return math.exp(self.intercept)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prefactor"] = self.prefactor
        return d


def fit_exponent(pairs: Sequence[Tuple[float, float]], predicted: Optional[float] = None,
                 tol: Optional[float] = None) -> ScalingReport:
    """Ordinary least squares of ``log y`` on ``log x``.

    Parameters
    ----------
    pairs : ``(x, y)`` with both positive, typically ``(M, beta)``.
    predicted, tol : if both given, ``passed = |slope - predicted| <= tol``.

    Returns
    -------
    ScalingReport with slope, intercept (``exp`` gives the prefactor),
    slope standard error and per-point residuals.
    """
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least 3 points to fit an exponent")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise ValueError("exponent fits need positive finite data")
    lx, ly = np.log(x), np.log(y)
    r = linregress(lx, ly)
    res = ly - (r.intercept + r.slope * lx)
    passed = None
    if predicted is not None and tol is not None:
        passed = bool(abs(r.slope - predicted) <= tol)
    return ScalingReport(float(r.slope), float(r.intercept), float(r.stderr), res.tolist(),
                         predicted, tol, passed, len(pairs), x.tolist(), y.tolist())


# ---------------------------------------------------------------------------
# sweeps


def _assign_components(comps, maxima, domain: DomainSpec):
    """Map each component to the nearest maximum (periodic distance)."""
    L = np.array(domain.extent)
    per = np.array(domain.periodic_axes)
    out = [[] for _ in maxima]
    for c in comps:
        d = []
        for mx in maxima:
            v = np.asarray(c.centroid) - np.asarray(mx.position)
            v = np.where(per, v - L * np.round(v / L), v)
            d.append(float(np.hypot(*v)))
        out[int(np.argmin(d))].append(c)
    return out


def _bump_metrics(sol_u, domain, mx: Maximum, comps, case: BumpCase, bid: int) -> BumpRecord:
    m = float(sum(c.mass for c in comps))
    rec = BumpRecord(bid, tuple(mx.position), m)
    if m <= 0.0:
        return rec
    mask = np.zeros(domain.shape, dtype=bool)
    for c in comps:
        mask |= c.mask
    (sp1, sp2), _, _ = case.exponents.as_floats()
    d1, d2 = domain.displacement(mx.position)
    y1 = d1[mask] / m ** sp1
    y2 = d2[mask] / m ** sp2
    rec.extent = (float(np.abs(y1).max()), float(np.abs(y2).max()))
    for rho in case.rhos:
        band = (np.abs(y2) >= rho) & (np.abs(y2) < 2 * rho)
        rec.widths[float(rho)] = float(np.abs(y1[band]).max()) if band.any() else 0.0
    if case.profile is not None and case.grid is not None:
        try:
            U = an.rescale_solution(np.where(mask, sol_u, 0.0), domain, mx.position,
                                    case.exponents, m, case.grid)
            err = an.profile_error(U, case.profile, case.grid)
            rec.linf, rec.l1 = err["linf"], err["l1"]
        except ValueError as exc:
            log.info("bump %d: rescaling skipped (%s)", bid, exc)
    pts = an.polyline_points([b for c in comps for b in c.boundary])
    if len(pts):
        rec.boundary = an.rescale_points(pts, mx.position, case.exponents, m, domain)
        if case.profile is not None and case.profile.boundary is not None:
            rec.hausdorff = an.hausdorff_distance(rec.boundary, case.profile.boundary(4096))
    return rec


def _run_chain(args) -> List[SweepRecord]:
    """Solve a decreasing run of masses sequentially, warm-starting the bracket."""
    domain, signal, M_list, cases, opts = args
    op = assemble_operator(domain)
    out = []
    prev = None
    for M in M_list:
        t0 = time.perf_counter()
        try:
            sol = solve_mass_constrained(domain, signal, M, opts, op=op, alpha_hi=prev)
        except SolverError as exc:
            out.append(SweepRecord(M, math.nan, math.nan, math.nan, [], time.perf_counter() - t0,
                                   False, note=f"solver error: {exc}"))
            prev = None
            continue
        prev = sol.alpha
        comps = an.active_components(sol.u, domain)
        groups = _assign_components(comps, signal.maxima, domain)
        bumps = [_bump_metrics(sol.u, domain, mx, grp, case, i)
                 for i, (mx, grp, case) in enumerate(zip(signal.maxima, groups, cases))]
        note = "" if sol.valid else "active set within min_clearance of the chart edge"
        out.append(SweepRecord(M, sol.alpha, sol.alpha0, sol.beta, bumps, time.perf_counter() - t0,
                               bool(sol.valid), sol.clearance, sol.comp_residual,
                               sol.nonlocal_residual, sol.xi_violations, note))
    return out


def sweep_mass(domain: DomainSpec, signal: SignalField, M_list: Sequence[float],
               cases: Sequence[BumpCase], opts: SolverOptions = SolverOptions(),
               workers: int = 1) -> List[SweepRecord]:
    """Mass-constrained solves for a decreasing list of masses.

    Parameters
    ----------
    cases : one :class:`BumpCase` per maximum of ``signal`` (exponents and
        optional limit profile used for rescaled metrics).
    workers : number of processes. Levels are split into contiguous chunks;
        each chunk runs sequentially so the multiplier bracket can be
        warm-started from the previous level.

    Returns
    -------
    One :class:`SweepRecord` per mass, in input order. Solver failures and
    runs touching the chart edge are flagged invalid rather than raised.
    """
    M_list = [float(M) for M in M_list]
    if len(M_list) < 5:
        raise ValueError("a sweep needs at least 5 mass levels")
    if any(M <= 0 for M in M_list) or any(b >= a for a, b in zip(M_list, M_list[1:])):
        raise ValueError("M_list must be positive and strictly decreasing")
    if len(cases) != len(signal.maxima):
        raise ValueError("need one BumpCase per maximum")
    cases = tuple(cases)
    workers = max(1, min(int(workers), len(M_list)))
    if workers == 1:
        return _run_chain((domain, signal, M_list, cases, opts))
    chunks = [[float(M) for M in c] for c in np.array_split(np.array(M_list), workers) if len(c)]
    # profiles hold closures, so hand the inputs to forked workers via a global
    global _CHAIN_INPUT
    _CHAIN_INPUT = (domain, signal, cases, opts)
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            parts = list(ex.map(_run_chunk, chunks))
    finally:
        _CHAIN_INPUT = None
    return [r for p in parts for r in p]


_CHAIN_INPUT = None


def _run_chunk(M_chunk):
    domain, signal, cases, opts = _CHAIN_INPUT
    return _run_chain((domain, signal, M_chunk, cases, opts))


def _fit_records(records: Sequence[SweepRecord], drop: int, predicted, tol,
                 key: Callable[[SweepRecord], Tuple[float, float]]):
    valid = [r for r in records if r.valid]
    excluded = [r.M for r in records if not r.valid]
    used = valid[drop:]
    fit = fit_exponent([key(r) for r in used], predicted, tol)
    return fit, excluded, [r.M for r in valid[:drop]]


def _finite(x):
    return x is not None and np.isfinite(x)


def _monotone_nonincreasing(vals, rtol=0.0) -> bool:
    vals = [v for v in vals]
    return all(b <= a * (1.0 + rtol) for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# nondegenerate maxima


def morse_cases(hessians: Sequence, gmax: float, grid_n: int = 160) -> List[BumpCase]:
    """Blow-up data for each nondegenerate maximum; unit-mass limits."""
    cases = []
    e = scaling_exponents("morse")
    for H in hessians:
        A = 0.5 * np.asarray(H, dtype=float)
        prof = general_quadratic_profile(A, quadratic_alpha_bar(A, gmax), gmax)
        (a1, b1), (a2, b2) = prof.bbox
        grid = an.ReferenceGrid((1.5 * max(b1, -a1), 1.5 * max(b2, -a2)), (grid_n, grid_n))
        cases.append(BumpCase(e, prof, grid))
    return cases


def predicted_alpha_bar(hessians: Sequence, gmax: float, trace_power: float = TRACE_POWER_SCALING,
                        kappa: float = KAPPA) -> float:
    """``(sum_i gmax^5 M(s_i) / tr(A_i)^q)^(-1/3)`` with ``A_i = H_i / 2``."""
    tot = 0.0
    for H in hessians:
        s, tr = anisotropy_ratio(0.5 * np.asarray(H, dtype=float))
        tot += gmax ** 5 * quad_mass(s, kappa) / tr ** trace_power
    return tot ** (-1.0 / 3.0)


def verify_morse_case(domain: DomainSpec, maxima, gmax: float, M_list: Sequence[float],
                      opts: SolverOptions = SolverOptions(), workers: int = 1,
                      background: Optional[float] = None, drop: int = 1,
                      tol_slope: float = 0.05, tol_fraction: float = 0.03,
                      tol_hausdorff: float = 0.1, trace_power: float = TRACE_POWER_STATED) -> dict:
    """Sweep Gaussian-bump signals and check exponent, mass split and ellipse limits.

    ``maxima`` is a list of ``(position, H)`` with ``H = -D^2 g``. Mass
    fractions are compared against :func:`lambda_fractions` with
    ``trace_power`` (both trace powers are reported).
    """
    hessians = [np.asarray(H, dtype=float) for _, H in maxima]
    signal = morse_signal(domain, maxima, gmax, background)
    cases = morse_cases(hessians, gmax)
    recs = sweep_mass(domain, signal, M_list, cases, opts, workers)
    fit, excluded, dropped = _fit_records(recs, drop, 1.0 / 3.0, tol_slope, lambda r: (r.M, r.beta))
    valid = [r for r in recs if r.valid]
    last = valid[-1]
    frac = np.array([b.m for b in last.bumps]) / sum(b.m for b in last.bumps)
    lam = lambda_fractions(hessians, trace_power)
    lam_other = lambda_fractions(hessians, TRACE_POWER_SCALING if trace_power != TRACE_POWER_SCALING
                                 else TRACE_POWER_STATED)
    haus = [b.hausdorff for b in last.bumps]
    linf_series = [[r.bumps[i].linf for r in valid] for i in range(len(maxima))]
    haus_series = [[r.bumps[i].hausdorff for r in valid] for i in range(len(maxima))]
    linf_ok = all(_monotone_nonincreasing(s[-4:]) for s in linf_series) if len(valid) >= 4 else False
    checks = {
        "slope": bool(fit.passed),
        "fractions": bool(np.max(np.abs(frac - lam)) <= tol_fraction),
        "hausdorff": bool(all(_finite(h) and h <= tol_hausdorff for h in haus)),
        "linf_monotone_last4": bool(linf_ok),
    }
    ab = {"fit_intercept": fit.prefactor,
          "formula_trace_power_2": predicted_alpha_bar(hessians, gmax, TRACE_POWER_SCALING),
          "formula_trace_power_1.5": predicted_alpha_bar(hessians, gmax, TRACE_POWER_STATED),
          "formula_kappa_73pi_96": predicted_alpha_bar(hessians, gmax, TRACE_POWER_SCALING, KAPPA_STATED)}
    return {
        "case": "morse", "records": recs, "fit": fit, "excluded": excluded, "dropped": dropped,
        "fractions": frac.tolist(), "lambda": lam.tolist(), "lambda_trace_power": trace_power,
        "lambda_alternative": lam_other.tolist(), "hausdorff": haus,
        "linf_series": linf_series, "hausdorff_series": haus_series, "alpha_bar": ab,
        "checks": checks, "pass": all(checks.values()),
    }


# ---------------------------------------------------------------------------
# degenerate maxima


def verify_anisotropic_case(domain: DomainSpec, a: float, b: float, M_list: Sequence[float],
                            gmax: float = 0.9, opts: SolverOptions = SolverOptions(),
                            workers: int = 1, background: Optional[float] = None,
                            center=(0.0, 0.0), drop: int = 1, tol_slope: float = 0.05,
                            tol_hausdorff: float = 0.15, grid_n: int = 160) -> dict:
    """Sweep ``g = gmax - a x1^4 - b x2^2`` and compare with the one-dimensional limit.

    The support check uses the limit set at the fitted prefactor
    ``alpha_bar = exp(intercept)``; the unit-mass limit is reported alongside.
    """
    signal = anisotropic_signal(domain, center, a, b, gmax, background)
    e = scaling_exponents("anisotropic_4_2")
    prof = anisotropic_limit_profile(a, b, gmax)
    (a1, b1), (a2, b2) = prof.bbox
    grid = an.ReferenceGrid((1.5 * b1, 1.5 * b2), (grid_n, grid_n))
    recs = sweep_mass(domain, signal, M_list, [BumpCase(e, prof, grid)], opts, workers)
    fit, excluded, dropped = _fit_records(recs, drop, 4.0 / 11.0, tol_slope, lambda r: (r.M, r.beta))
    valid = [r for r in recs if r.valid]
    last = valid[-1]
    prof_fit = anisotropic_limit_profile(a, b, gmax, alpha=fit.prefactor)
    h_fit = an.hausdorff_distance(last.bumps[0].boundary, prof_fit.boundary(4096))
    checks = {"slope": bool(fit.passed), "hausdorff": bool(_finite(h_fit) and h_fit <= tol_hausdorff)}
    return {
        "case": "anisotropic", "records": recs, "fit": fit, "excluded": excluded, "dropped": dropped,
        "alpha_bar": {"fit_intercept": fit.prefactor, "unit_mass": prof.meta["alpha"]},
        "hausdorff_fit_level": h_fit, "hausdorff_unit_mass": last.bumps[0].hausdorff,
        "hausdorff_series": [r.bumps[0].hausdorff for r in valid],
        "l1_series": [r.bumps[0].l1 for r in valid], "linf_series": [r.bumps[0].linf for r in valid],
        "checks": checks, "pass": all(checks.values()),
    }


def noncoercive_limit(a: float = 1.0, b: float = 1.0, gmax: float = 1.0,
                      deltas: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
                      grid: Optional[an.ReferenceGrid] = None, cells: Tuple[int, int] = (256, 384),
                      opts: SolverOptions = SolverOptions(),
                      rhos: Sequence[float] = (2.0, 4.0)) -> dict:
    """Unit-mass limit for ``g = gmax - a x1^4 - b x1^2 x2^2`` via quartic penalization.

    Solves ``-lap U = (gmax alpha - (a y1^4 + b y1^2 y2^2 + delta y2^4)/gmax) 1_{U>0}``
    with ``int U = 1`` for each ``delta`` on a box sized to the penalized
    support, then extrapolates ``alpha_delta`` and the fields on ``grid``
    to ``delta = 0`` assuming an error ``~ delta^p`` (``p`` from the last
    three values). ``widths[k][rho]`` is the largest ``|y1|`` of the support
    of the ``k``-th solve in the band ``rho <= |y2| < 2 rho``.
    """
    deltas = sorted(deltas, reverse=True)
    if len(deltas) < 3:
        raise ValueError("need at least three penalization levels")
    if grid is None:
        grid = an.ReferenceGrid((2.0, 4.0), (160, 240))
    Y1, Y2 = grid.mesh()
    alphas, fields, t1s, widths = [], [], [], []
    alpha_guess = 1.0
    for d in deltas:
        ext1 = 1.3 * (gmax ** 2 * 2.0 * alpha_guess / a) ** 0.25
        ext2 = 1.2 * (gmax ** 2 * 2.0 * alpha_guess / d) ** 0.25
        ext2 = max(ext2, 1.05 * grid.half_widths[1])
        ext1 = max(ext1, 1.05 * grid.half_widths[0])
        dom = DomainSpec.window((-ext1, -ext2), (ext1, ext2), cells)
        X1, X2 = dom.mesh()
        q = (a * X1 ** 4 + b * X1 ** 2 * X2 ** 2 + d * X2 ** 4) / gmax

        def rhs(alpha, q=q):
            return gmax * alpha - q

        u, alpha, _ = solve_for_mass(dom, rhs, 1.0, 0.0, opts)
        alpha_guess = alpha
        alphas.append(alpha)
        act = u > 0.0
        t1s.append(float(np.abs(X1[act]).max()))
        wk = {}
        for rho in rhos:
            band = act & (np.abs(X2) >= rho) & (np.abs(X2) < 2.0 * rho)
            wk[float(rho)] = float(np.abs(X1[band]).max()) if band.any() else 0.0
        widths.append(wk)
        interp = an._interpolator(u, dom)
        fields.append(interp(np.column_stack([Y1.ravel(), Y2.ravel()])).reshape(Y1.shape))
    a1, a2, a3 = alphas[-3:]
    r = deltas[-2] / deltas[-1]
    if (a1 - a2) * (a2 - a3) > 0 and abs(a2 - a3) > 0:
        p = math.log(abs(a1 - a2) / abs(a2 - a3)) / math.log(r)
    else:
        p = 1.0
    p = min(max(p, 0.1), 4.0)
    fac = 1.0 / (r ** p - 1.0)
    alpha0 = a3 + (a3 - a2) * fac
    U0 = fields[-1] + (fields[-1] - fields[-2]) * fac
    return {"deltas": deltas, "alphas": alphas, "order": p, "alpha": alpha0, "U": U0,
            "grid": grid, "t1": t1s, "widths": widths}


def grid_profile(U: np.ndarray, grid: an.ReferenceGrid) -> ProfileField:
    """Wrap samples on a reference grid as a (bilinear, zero outside) profile."""
    U = np.maximum(np.asarray(U, dtype=float), 0.0)
    interp = RegularGridInterpolator(grid.axes, U, method="linear", bounds_error=False, fill_value=0.0)

    def func(y1, y2):
        y1, y2 = np.broadcast_arrays(np.asarray(y1, float), np.asarray(y2, float))
        return interp(np.column_stack([y1.ravel(), y2.ravel()])).reshape(y1.shape)

    def support(y1, y2):
        return func(y1, y2) > 0.0

    (w1, w2) = grid.half_widths
    return ProfileField(func, support, ((-w1, w1), (-w2, w2)), None, {"source": "grid"})


def verify_noncoercive_case(domain: DomainSpec, a: float, b: float, c: float,
                            M_list: Sequence[float], gmax: float = 0.9,
                            opts: SolverOptions = SolverOptions(), workers: int = 1,
                            background: Optional[float] = None, center=(0.0, 0.0), drop: int = 1,
                            tol_slope: float = 0.07, rhos: Tuple[float, float] = (2.0, 4.0),
                            tol_support: float = 0.25, tol_width: float = 0.25,
                            deltas: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
                            sweep_rhos: Tuple[float, ...] = (0.5, 1.0)) -> dict:
    """Sweep ``g = gmax - a x1^4 - b x1^2 x2^2 - c x2^6``.

    Checks: exponent of ``beta`` vs 1/2; the rescaled x1-support stays below
    ``(1 + tol_support) t1`` along the sweep, with ``t1`` the x1-extent of
    the penalized limit; and the x1-width in the bands ``rho <= |y2| < 2 rho``
    decays like ``1/rho``, i.e. ``W`` decreases and ``rho W(rho)`` does not
    grow from ``rhos[0]`` to ``rhos[1]`` (up to ``tol_width``).

    The width law only holds beyond an unspecified ``rho_0``. At reachable
    masses the ``c m^(1/4) y2^6`` remainder keeps the rescaled support inside
    ``|y2| < 2``, so the width check runs on the finest penalized limit
    solve, whose support extends much further in ``y2``. Sweep widths at
    ``sweep_rhos`` are reported alongside.
    """
    signal = noncoercive_signal(domain, center, a, b, c, gmax, background)
    e = scaling_exponents("noncoercive")
    rhos = tuple(sorted(float(r) for r in rhos))
    if len(rhos) != 2:
        raise ValueError("width decay needs exactly two rho values")
    lim = noncoercive_limit(a, b, gmax, deltas, rhos=rhos)
    prof = grid_profile(lim["U"], lim["grid"])
    sweep_rhos = tuple(sorted(set(float(r) for r in sweep_rhos)))
    recs = sweep_mass(domain, signal, M_list, [BumpCase(e, prof, lim["grid"], sweep_rhos)], opts, workers)
    fit, excluded, dropped = _fit_records(recs, drop, 0.5, tol_slope, lambda r: (r.M, r.beta))
    valid = [r for r in recs if r.valid]
    t1 = max(lim["t1"])
    x1_ext = [r.bumps[0].extent[0] for r in valid]
    support_ok = bool(max(x1_ext) <= (1.0 + tol_support) * t1)
    W = lim["widths"][-1]
    rw = [rho * W[rho] for rho in rhos]
    width_ok = bool(all(w > 0 for w in rw) and rw[1] <= rw[0] * (1.0 + tol_width)
                    and W[rhos[1]] < W[rhos[0]])
    last = valid[-1].bumps[0]
    checks = {"slope": bool(fit.passed), "x1_support_uniform": support_ok, "width_decay": width_ok}
    return {
        "case": "noncoercive", "records": recs, "fit": fit, "excluded": excluded, "dropped": dropped,
        "alpha_bar": {"fit_intercept": fit.prefactor, "penalized_limit": lim["alpha"],
                      "penalized_alphas": lim["alphas"], "penalization_order": lim["order"]},
        "t1_limit": t1, "x1_extent_series": x1_ext,
        "limit_widths": {str(k): v for k, v in W.items()}, "rho_times_width": rw,
        "sweep_widths": {str(k): v for k, v in last.widths.items()},
        "sweep_rho_times_width": [rho * last.widths[rho] for rho in sweep_rhos],
        "l1_loc_series": [r.bumps[0].l1 for r in valid], "checks": checks, "pass": all(checks.values()),
    }


# ---------------------------------------------------------------------------
# two maxima of different homogeneity


def two_homogeneous_signal(domain: DomainSpec, gammas: Tuple[float, float], centers,
                           gmax: float = 0.9, background: Optional[float] = None,
                           inner_fraction: float = 0.7) -> SignalField:
    """Two maxima with ``gmax - g = |x - p_i|^gamma_i`` on disjoint windows."""
    background = 0.1 * gmax if background is None else background
    maxima, windows = [], []
    for gam, p in zip(gammas, centers):
        model = LocalModel("homogeneous", {"gamma": float(gam), "angular_coeffs": (1.0,)})
        maxima.append(Maximum(tuple(map(float, p)), model))
        windows.append(_window_radii(model, gmax - background))
    return local_model_signal(domain, maxima, gmax, background, windows, inner_fraction,
                              name=f"hom({gammas[0]:g})+hom({gammas[1]:g})")


def mass_ratio_separation(domain: DomainSpec, gamma1: float, gamma2: float,
                          M_list: Sequence[float], centers, gmax: float = 0.9,
                          opts: SolverOptions = SolverOptions(), workers: int = 1,
                          background: Optional[float] = None, drop: int = 1,
                          tol_slope: float = 0.1) -> dict:
    """Fit ``log m1`` against ``log m2`` for maxima of degrees ``gamma1 <= gamma2``."""
    if gamma2 < gamma1:
        raise ValueError("need gamma2 >= gamma1")
    signal = two_homogeneous_signal(domain, (gamma1, gamma2), centers, gmax, background)
    cases = [BumpCase(scaling_exponents("homogeneous", g)) for g in (gamma1, gamma2)]
    recs = sweep_mass(domain, signal, M_list, cases, opts, workers)
    pred = separation_slope(gamma1, gamma2)
    fit, excluded, dropped = _fit_records(recs, drop, pred, tol_slope,
                                          lambda r: (r.bumps[1].m, r.bumps[0].m))
    valid = [r for r in recs if r.valid]
    ratio = [r.bumps[0].m / r.bumps[1].m for r in valid]
    checks = {"slope": bool(fit.passed)}
    if gamma2 > gamma1:
        checks["ratio_decreasing"] = bool(all(b < a for a, b in zip(ratio, ratio[1:])))
    return {"case": "separation", "records": recs, "fit": fit, "excluded": excluded,
            "dropped": dropped, "predicted": pred, "ratio_series": ratio,
            "checks": checks, "pass": all(checks.values())}


# ---------------------------------------------------------------------------
# output


CSV_COLUMNS = ("M", "alpha", "beta", "bump_id", "m_i", "hausdorff", "linf", "l1", "valid")


def _g(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_sweep_csv(records: Sequence[SweepRecord], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(CSV_COLUMNS)
        for r in records:
            if not r.bumps:
                w.writerow([_g(r.M), _g(r.alpha), _g(r.beta), "", "", "", "", "", _g(r.valid)])
            for b in r.bumps:
                w.writerow([_g(r.M), _g(r.alpha), _g(r.beta), _g(b.id), _g(b.m), _g(b.hausdorff),
                            _g(b.linf), _g(b.l1), _g(r.valid)])
    return path


def read_sweep_csv(path) -> List[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (row[k] == "true" if k == "valid" else
                        (int(row[k]) if k == "bump_id" and row[k] else
                         (float(row[k]) if row[k] else math.nan)))
                    for k in CSV_COLUMNS})
    return out


def _jsonable(obj):
    if isinstance(obj, ScalingReport):
        return obj.to_dict()
    if isinstance(obj, (SweepRecord, BumpRecord)):
        d = asdict(obj)
        if "widths" in d:
            d["widths"] = {str(k): v for k, v in d["widths"].items()}
        d.pop("boundary", None)
        if "bumps" in d:
            for bd in d["bumps"]:
                bd.pop("boundary", None)
                bd["widths"] = {str(k): v for k, v in bd["widths"].items()}
        return _jsonable(d)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def report_to_json(report: dict) -> dict:
    """Strip heavy entries and convert numpy types; records stay as plain dicts."""
    return _jsonable(report)


def summary_lines(report: dict) -> List[str]:
    lines = [f"case: {report.get('case')}"]
    fit = report.get("fit")
    if fit is not None:
        lines.append(f"slope: {fit.slope:.17g} (predicted {fit.predicted:.17g}, tol {fit.tol:.17g}, "
                     f"stderr {fit.stderr:.17g}, n {fit.n})")
        lines.append(f"prefactor: {fit.prefactor:.17g}")
    for k, v in report.get("checks", {}).items():
        lines.append(f"check {k}: {'PASS' if v else 'FAIL'}")
    lines.append(f"overall: {'PASS' if report.get('pass') else 'FAIL'}")
    return lines


def write_report(report: dict, out_dir) -> dict:
    """Write ``sweep.csv``, ``report.json`` and ``summary.txt`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if report.get("records"):
        paths["sweep"] = str(write_sweep_csv(report["records"], out / "sweep.csv"))
    (out / "report.json").write_text(json.dumps(report_to_json(report), indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text("\n".join(summary_lines(report)) + "\n")
    paths["report"] = str(out / "report.json")
    paths["summary"] = str(out / "summary.txt")
    return paths
