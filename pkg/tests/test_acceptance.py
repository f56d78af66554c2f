"""Acceptance criteria 1-10, each at its declared tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary and
on stdout) and then asserts the criterion. Criteria 6, 7 and 9 contain
checks that fail on this implementation for reasons documented in the
decisions ledger; they are left failing rather than relaxed.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from cellpol import analysis as an
from cellpol import experiments as ex
from cellpol import profiles as pr
from cellpol import signals as sg
from cellpol import vi_solver as vs
from cellpol.domain import DomainSpec

from conftest import ACCEPTANCE

pytestmark = pytest.mark.slow


def record(k, checks, detail):
    ok = all(checks.values())
    failed = [name for name, v in checks.items() if not v]
    line = detail + (f"  failed: {', '.join(failed)}" if failed else "")
    ACCEPTANCE[k] = (ok, line)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {line}")
    assert ok, f"criterion {k} failed: {failed} ({detail})"


@pytest.fixture(scope="module")
def radial():
    d = DomainSpec.window((-3, -3), (3, 3), (512, 512))
    x, y = d.mesh()
    f = 1 - (x * x + y * y) / 2
    u, st = vs.solve_lcp(d, f)
    return d, f, u, st


# ---------------------------------------------------------------------------


def test_criterion_01_formula_suite():
    t0 = time.perf_counter()
    s_grid = np.linspace(0.005, 0.5, 100)
    res = max(max(abs(r) for r in pr.quad_params(float(s)).residuals()) for s in s_grid)
    c0_half = pr.quad_params(0.5).C0
    masses = [pr.quad_mass(float(s)) for s in s_grid]
    lam = pr.lambda_fractions([np.eye(2), 4 * np.eye(2)])
    lam_rand = pr.lambda_fractions([np.diag([1.0, 2.0]), np.diag([3.0, 0.5]), np.eye(2)])
    dt = time.perf_counter() - t0
    checks = {
        "residuals<=1e-12": res <= 1e-12,
        "C0(1/2)==0.5": c0_half == 0.5,
        "M(s) nonincreasing": all(b <= a for a, b in zip(masses, masses[1:])),
        "lambda sum": abs(lam.sum() - 1) <= 1e-12 and abs(lam_rand.sum() - 1) <= 1e-12,
        "8/9:1/9": abs(lam[0] - 8 / 9) <= 1e-12 and abs(lam[1] - 1 / 9) <= 1e-12,
        "runtime<1s": dt < 1.0,
    }
    record(1, checks, f"max residual {res:.2e}, runtime {dt:.2f}s")


def test_criterion_02_radial_oracle(radial):
    d, f, u, _ = radial
    x, y = d.mesh()
    r2 = x * x + y * y
    exact = np.where(r2 < 4, 0.5 - r2 / 4 + r2 * r2 / 32, 0.0)
    linf = float(np.max(np.abs(u - exact)))
    pts = an.polyline_points(an.extract_free_boundary(u, d))
    t = np.linspace(0, 2 * np.pi, 8000, endpoint=False)
    haus = an.hausdorff_distance(pts, np.column_stack([2 * np.cos(t), 2 * np.sin(t)]))
    mass = vs.mass_of(u, d)
    checks = {
        "linf<=5e-3": linf <= 5e-3,
        "hausdorff<=2 cells": haus <= 2 * d.spacing[0],
        "mass=2pi/3+-2e-3": abs(mass - 2 * math.pi / 3) <= 2e-3,
        "stated 73pi/96 rejected": abs(mass - pr.KAPPA_STATED) > 2e-3,
    }
    record(2, checks, f"linf {linf:.2e}, hausdorff {haus / d.spacing[0]:.2f} cells, mass {mass:.6f}")


def test_criterion_03_anisotropic_quadratic_oracle():
    s = 0.25
    d = DomainSpec.window((-3, -3), (3, 3), (512, 512))
    x, y = d.mesh()
    u, _ = vs.solve_lcp(d, 1 - (s * x * x + (1 - s) * y * y))
    p = pr.quad_params(s)
    linf = float(np.max(np.abs(u - pr.quad_profile_eval(p, x, y))))
    fit = an.ellipse_fit(an.polyline_points(an.extract_free_boundary(u, d)))
    a1, a2 = math.sqrt(2 * p.C0 / p.k1), math.sqrt(2 * p.C0 / p.k2)
    ea = abs(fit.a / max(a1, a2) - 1)
    eb = abs(fit.b / min(a1, a2) - 1)
    checks = {"linf<=5e-3": linf <= 5e-3, "semiaxes within 1%": max(ea, eb) <= 0.01}
    record(3, checks, f"linf {linf:.2e}, semiaxis rel. errors {ea:.2e}, {eb:.2e}")


def test_criterion_04_degenerate_closed_form():
    h = 1e-3
    y1 = np.linspace(-0.98, 0.98, 61)
    y2 = np.linspace(-1.7, 1.7, 61)
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    inside = Y2 ** 2 / 3 + Y1 ** 4 < 1 - 1e-2
    f = pr.deg_profile_eval
    d22 = (f(Y1, Y2 + h) - 2 * f(Y1, Y2) + f(Y1, Y2 - h)) / h ** 2
    err = float(np.max(np.abs(-d22 - (1 - Y2 ** 2 - Y1 ** 4))[inside]))
    outside = ~(Y2 ** 2 / 3 + Y1 ** 4 < 1)
    checks = {"fd<=1e-6": err <= 1e-6, "zero outside": bool(np.all(f(Y1, Y2)[outside] == 0.0)),
              "peak 3/4": f(0.0, 0.0) == 0.75}
    record(4, checks, f"max FD error {err:.2e} over {inside.sum()} interior points")


def test_criterion_05_morse_sweep():
    d = DomainSpec.periodic((-3, -3), (3, 3), (512, 512))
    Ms = [1e-2 * 2.0 ** -k for k in range(8)]
    t0 = time.perf_counter()
    rep = ex.verify_morse_case(d, [((0.0, 0.0), np.eye(2))], 0.9, Ms, drop=1,
                               tol_slope=0.05, tol_hausdorff=0.1)
    dt = time.perf_counter() - t0
    fit = rep["fit"]
    checks = {"slope": rep["checks"]["slope"], "linf last 4 nonincreasing": rep["checks"]["linf_monotone_last4"],
              "hausdorff<=0.1": rep["checks"]["hausdorff"]}
    last = [r for r in rep["records"] if r.valid][-1].bumps[0]
    record(5, checks, f"slope {fit.slope:.4f} +- {fit.stderr:.1e} (1/3, tol 0.05), "
                      f"hausdorff {last.hausdorff:.3f}, linf {last.linf:.2e}, {dt:.0f}s")


def test_criterion_06_two_bump_split():
    d = DomainSpec.periodic((-10, -5), (10, 5), (512, 256))
    maxima = [((-5.0, 0.0), np.eye(2)), ((5.0, 0.0), 4 * np.eye(2))]
    Ms = [1e-2 * 2.0 ** -k for k in range(6)]
    rep = ex.verify_morse_case(d, maxima, 0.9, Ms, drop=1, tol_fraction=0.03)
    last = [r for r in rep["records"] if r.valid][-1]
    frac = last.bumps[0].m / sum(b.m for b in last.bumps)
    checks = {"m1/M within 0.03 of 8/9": abs(frac - 8 / 9) <= 0.03}
    record(6, checks, f"m1/M = {frac:.4f} at M = {last.M:.3g} (predicted 8/9 = {8 / 9:.4f}; "
                      f"16/17 = {16 / 17:.4f})")


def test_criterion_07_anisotropic_sweep():
    d = DomainSpec.window((-0.6, -0.4), (0.6, 0.4), (128, 256))
    Ms = [2.5e-4 * 2.0 ** -k for k in range(10)]
    rep = ex.verify_anisotropic_case(d, 1.0, 1.0, Ms, gmax=0.9, drop=1, tol_slope=0.05,
                                     tol_hausdorff=0.15)
    fit = rep["fit"]
    checks = {"slope within 0.05 of 4/11": rep["checks"]["slope"],
              "hausdorff<=0.15 to alpha_fit level set": rep["checks"]["hausdorff"]}
    record(7, checks, f"slope {fit.slope:.4f} +- {fit.stderr:.1e} (4/11 = {4 / 11:.4f}), "
                      f"alpha_fit {fit.prefactor:.4f}, hausdorff {rep['hausdorff_fit_level']:.3f} "
                      f"(to unit-mass limit: {rep['hausdorff_unit_mass']:.3f})")


def test_criterion_08_noncoercive_sweep():
    d = DomainSpec.periodic((-0.8, -0.9), (0.8, 0.9), (256, 256))
    Ms = [1e-3 * 2.0 ** -k for k in range(10)]
    rep = ex.verify_noncoercive_case(d, 1.0, 1.0, 1.0, Ms, gmax=0.9, drop=1, tol_slope=0.07,
                                     rhos=(2.0, 4.0))
    fit = rep["fit"]
    checks = {"slope within 0.07 of 1/2": rep["checks"]["slope"],
              "x1 support uniform": rep["checks"]["x1_support_uniform"],
              "1/rho width decay": rep["checks"]["width_decay"]}
    rw = ", ".join(f"{v:.3f}" for v in rep["rho_times_width"])
    record(8, checks, f"slope {fit.slope:.4f} +- {fit.stderr:.1e}, max x1 extent "
                      f"{max(rep['x1_extent_series']):.3f} (t1 {rep['t1_limit']:.3f}), rho*W at rho=2,4: {rw}")


def test_criterion_09_property_suite(radial):
    d, f, u, st = radial
    op = vs.assemble_operator(d)
    opts = vs.SolverOptions()
    residuals = [vs.complementarity_residual(op, u, f)]
    # mass monotone along a 10-point alpha ladder
    dm = DomainSpec.periodic((-3, -3), (3, 3), (256, 256))
    g = sg.morse_signal(dm, [((0.0, 0.0), np.diag([2.0, 1.0]))], gmax=0.9)
    opm = vs.assemble_operator(dm)
    a0 = pr.alpha0(0.9)
    masses, xi_bad = [], 0
    for b in np.linspace(0.0, 0.25, 10):
        fa = (1 + a0 + b) * g.values - 1
        ua, _ = vs.solve_lcp(dm, fa, opts, op=opm)
        residuals.append(vs.complementarity_residual(opm, ua, fa))
        masses.append(vs.mass_of(ua, dm))
        xi_bad += vs.xi_violations(vs.recover_xi(ua, g.values, a0 + b))
    # initialization independence
    u_zero, _ = vs.solve_lcp(d, f, opts, u0=np.zeros(d.shape), op=op)
    u_big, _ = vs.solve_lcp(d, f, opts, u0=np.full(d.shape, 10.0), op=op)
    residuals += [vs.complementarity_residual(op, u_zero, f), vs.complementarity_residual(op, u_big, f)]
    init_gap = float(np.max(np.abs(u_zero - u_big)))
    # xi on mass-constrained benchmark solves
    sols = [vs.solve_mass_constrained(dm, g, M, opts, op=opm) for M in (1e-2, 1e-3)]
    residuals += [s.comp_residual for s in sols]
    xi_bad += sum(s.xi_violations for s in sols)
    # nonlocal identity on the radial benchmark: alpha = 1, g = (1 + f) / 2
    nl = vs.nonlocal_residual(u, (1 + f) / 2, 1.0, d)
    checks = {
        "LCP residual contract": max(residuals) <= opts.tol and bool(np.all(u >= 0)),
        "mass monotone in alpha": all(b >= a for a, b in zip(masses, masses[1:])),
        "init independence 10*tol": init_gap <= 10 * opts.tol,
        "nonlocal<=1e-4": nl <= 1e-4,
        "xi in [0,1]": xi_bad == 0,
    }
    record(9, checks, f"max residual {max(residuals):.1e}, init gap {init_gap:.1e}, nonlocal {nl:.2e}")


def test_criterion_10_separation_law():
    d = DomainSpec.periodic((-2, -1), (2, 1), (512, 256))
    Ms = [1e-3 * 2.0 ** -k for k in range(8)]
    rep = ex.mass_ratio_separation(d, 2.0, 4.0, Ms, [(-1.0, 0.0), (1.0, 0.0)], gmax=0.9, drop=1,
                                   tol_slope=0.1)
    fit = rep["fit"]
    checks = {"slope within 0.1 of 3/2": rep["checks"]["slope"],
              "m1/m2 decreasing": rep["checks"]["ratio_decreasing"]}
    record(10, checks, f"slope {fit.slope:.4f} +- {fit.stderr:.1e} (3/2)")
