from __future__ import annotations

import math

import numpy as np
import pytest

from cellpol.domain import DomainSpec
from cellpol import profiles as pr
from cellpol import signals as sg
from cellpol import vi_solver as vs


def radial_exact(x, y):
    r2 = x * x + y * y
    return np.where(r2 < 4.0, 0.5 - r2 / 4 + r2 * r2 / 32, 0.0)


# -- operator ----------------------------------------------------------------


def test_operator_periodic_constants_and_symmetry():
    d = DomainSpec.periodic((0, 0), (2, 3), (32, 48))
    op = vs.assemble_operator(d)
    assert np.max(np.abs(op.apply(np.full(d.shape, 3.0)))) <= 1e-10
    K = op.K
    assert abs(K - K.T).max() <= 1e-12
    assert np.max(np.abs(np.asarray(K.sum(axis=1)).ravel())) <= 1e-9
    rng = np.random.default_rng(0)
    v = rng.normal(size=K.shape[0])
    assert v @ (K @ v) >= -1e-9


def test_operator_eigenfunction_second_order():
    L = 2.0
    errs = []
    for n in (32, 64, 128):
        d = DomainSpec.periodic((0, 0), (L, L), (n, n))
        x, _ = d.mesh()
        u = np.sin(2 * np.pi * x / L)
        Au = vs.assemble_operator(d).apply(u)
        errs.append(np.max(np.abs(Au - (2 * np.pi / L) ** 2 * u)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_operator_sphere_first_harmonic():
    errs = []
    for n in (64, 128, 256):
        d = DomainSpec.sphere(n, 16, phi_min_deg=5.0)
        phi, _ = d.mesh()
        u = np.cos(phi)
        Au = vs.assemble_operator(d).apply(u)
        # zero-flux caps perturb the two boundary rows; compare the interior
        sl = slice(4, -4)
        errs.append(np.max(np.abs(Au - 2 * u)[sl]))
    assert errs[-1] < 1e-3
    assert errs[1] / errs[2] > 3.0


def test_operator_rejects_offdiagonal_metric():
    d = DomainSpec.periodic((0, 0), (1, 1), (8, 8))
    H = np.zeros((8, 8, 2, 2))
    H[..., 0, 0] = H[..., 1, 1] = 1.0
    H[..., 0, 1] = H[..., 1, 0] = 0.2
    d2 = DomainSpec("periodic", d.lower, d.upper, d.shape, H, np.ones((8, 8)))
    with pytest.raises(ValueError):
        vs.assemble_operator(d2)
    H[..., 1, 1] = -1.0
    with pytest.raises(ValueError):
        DomainSpec("periodic", d.lower, d.upper, d.shape, H, np.ones((8, 8)))


# -- fixed alpha LCP ---------------------------------------------------------


def test_lcp_nonpositive_forcing_gives_zero():
    d = DomainSpec.periodic((-2, -2), (2, 2), (128, 128))
    g = sg.morse_signal(d, [((0.0, 0.0), np.eye(2) * 4)], gmax=0.9, background=0.09)
    u = vs.solve_fixed_alpha(d, g, pr.alpha0(0.9) * (1 - 1e-9))
    assert np.all(u == 0.0)


def test_lcp_radial_closed_form_512():
    d = DomainSpec.window((-3, -3), (3, 3), (512, 512))
    x, y = d.mesh()
    f = 1 - (x * x + y * y) / 2
    u, st = vs.solve_lcp(d, f)
    op = vs.assemble_operator(d)
    assert np.all(u >= 0.0)
    assert vs.complementarity_residual(op, u, f) <= 1e-9
    assert np.max(np.abs(u - radial_exact(x, y))) <= 5e-3
    assert vs.mass_of(u, d) == pytest.approx(2 * math.pi / 3, abs=1e-3)


def test_lcp_mesh_refinement_order():
    errs = []
    for n in (64, 128, 256):
        d = DomainSpec.window((-3, -3), (3, 3), (n, n))
        x, y = d.mesh()
        u, _ = vs.solve_lcp(d, 1 - (x * x + y * y) / 2)
        errs.append(np.max(np.abs(u - radial_exact(x, y))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 1.8)


@pytest.mark.parametrize("method", ["pdas", "psor"])
def test_lcp_initialization_independence(method):
    d = DomainSpec.window((-3, -3), (3, 3), (48, 48))
    x, y = d.mesh()
    f = 1 - (0.3 * x * x + 0.7 * y * y)
    opts = vs.SolverOptions(method=method, tol=1e-10, nested=False)
    u0, _ = vs.solve_lcp(d, f, opts, u0=np.zeros(d.shape))
    u1, _ = vs.solve_lcp(d, f, opts, u0=np.full(d.shape, 5.0))
    assert np.max(np.abs(u0 - u1)) <= 10 * opts.tol * 100   # residual -> error via ||A^-1||
    op = vs.assemble_operator(d)
    assert vs.complementarity_residual(op, u0, f) <= opts.tol


def test_psor_and_pdas_agree():
    d = DomainSpec.window((-3, -3), (3, 3), (40, 40))
    x, y = d.mesh()
    f = 1 - (x * x + y * y) / 2
    a, _ = vs.solve_lcp(d, f, vs.SolverOptions(method="psor", tol=1e-11))
    b, _ = vs.solve_lcp(d, f, vs.SolverOptions(method="pdas", tol=1e-11))
    assert np.max(np.abs(a - b)) <= 1e-8


def test_psor_reports_nonconvergence():
    d = DomainSpec.window((-3, -3), (3, 3), (40, 40))
    x, y = d.mesh()
    opts = vs.SolverOptions(method="psor", max_iter=3)
    with pytest.raises(vs.SolverError) as e:
        vs.solve_lcp(d, 1 - (x * x + y * y) / 2, opts)
    assert e.value.residual > opts.tol


def test_solver_options_validation():
    with pytest.raises(ValueError):
        vs.SolverOptions(omega=2.0)
    with pytest.raises(ValueError):
        vs.SolverOptions(method="newton")
    with pytest.raises(ValueError):
        vs.SolverOptions(tol=0.0)


def test_mass_monotone_in_alpha():
    d = DomainSpec.periodic((-3, -3), (3, 3), (128, 128))
    g = sg.morse_signal(d, [((0.0, 0.0), np.diag([2.0, 1.0]))], gmax=0.9, background=0.09)
    a0 = pr.alpha0(0.9)
    masses = [vs.mass_of(vs.solve_fixed_alpha(d, g, a0 + b), d) for b in np.linspace(0, 0.2, 10)]
    assert masses[0] == 0.0
    assert all(m1 >= m0 for m0, m1 in zip(masses, masses[1:]))
    assert masses[-1] > 0


def test_symmetric_signal_gives_symmetric_solution():
    d = DomainSpec.periodic((-3, -3), (3, 3), (128, 128))
    g = sg.morse_signal(d, [((-1.0, 0.3), np.eye(2) * 30), ((1.0, 0.3), np.eye(2) * 30)],
                        gmax=0.9, background=0.09)
    u = vs.solve_fixed_alpha(d, g, pr.alpha0(0.9) + 0.05)
    assert np.max(np.abs(u - u[::-1, :])) <= 100 * 1e-9


# -- mass and xi -------------------------------------------------------------


def test_mass_of():
    d = DomainSpec.periodic((0, 0), (2, 3), (16, 24))
    assert vs.mass_of(np.full(d.shape, 1.5), d) == pytest.approx(9.0)
    assert vs.mass_of(np.zeros(d.shape), d) == 0.0
    fine = DomainSpec.window((-2, -2), (2, 2), (1024, 1024))
    x, y = fine.mesh()
    assert vs.mass_of(radial_exact(x, y), fine) == pytest.approx(2 * math.pi / 3, abs=1e-3)
    with pytest.raises(ValueError):
        vs.mass_of(np.zeros((3, 3)), d)


def test_recover_xi():
    g = np.array([0.9, 0.5, 0.89])
    u = np.array([1.0, 0.0, 0.0])
    a0 = pr.alpha0(0.9)
    xi = vs.recover_xi(u, g, a0)
    assert xi[0] == 1.0
    assert xi[1] < 1.0
    assert xi[2] < 1.0
    assert vs.recover_xi(np.zeros(1), np.array([0.9]), a0)[0] == pytest.approx(1.0, abs=1e-15)
    assert vs.xi_violations(vs.recover_xi(np.zeros(1), np.array([0.9]), 2 * a0)) == 1


# -- mass constrained --------------------------------------------------------


@pytest.fixture(scope="module")
def bump_setup():
    d = DomainSpec.periodic((-3, -3), (3, 3), (192, 192))
    g = sg.morse_signal(d, [((0.2, -0.1), np.diag([2.0, 1.0]))], gmax=0.9, background=0.09)
    return d, g


def test_mass_constrained_contract(bump_setup):
    d, g = bump_setup
    opts = vs.SolverOptions()
    sol = vs.solve_mass_constrained(d, g, 1e-3, opts)
    assert abs(sol.mass - 1e-3) <= opts.mass_rtol * 1e-3
    assert vs.mass_of(sol.u, d) == pytest.approx(1e-3, rel=opts.mass_rtol)
    assert sol.comp_residual <= opts.tol
    assert np.all(sol.u >= 0.0)
    assert sol.valid and sol.clearance >= 5
    assert sol.xi_violations == 0
    assert np.all(sol.xi[sol.active] == 1.0)
    assert sol.alpha > sol.alpha0
    from cellpol.analysis import active_components
    assert len(active_components(sol.u, d, boundaries=False)) == 1
    # nonlocal identity holds up to the free-boundary discretization error
    assert sol.nonlocal_residual <= 10 * opts.mass_rtol + 20 * d.spacing[0]


def test_alpha_decreases_to_alpha0(bump_setup):
    d, g = bump_setup
    alphas = [vs.solve_mass_constrained(d, g, M).alpha for M in (4e-3, 1e-3, 2.5e-4, 6.25e-5)]
    assert all(b < a for a, b in zip(alphas, alphas[1:]))
    assert alphas[-1] > pr.alpha0(0.9)


def test_mass_constrained_bracket_failure():
    d = DomainSpec.window((-1, -1), (1, 1), (64, 64))
    g = sg.morse_signal(DomainSpec.periodic((-1, -1), (1, 1), (64, 64)),
                        [((0.0, 0.0), np.eye(2) * 20)], gmax=0.9, background=0.09)
    with pytest.raises(vs.SolverError):
        vs.solve_mass_constrained(d, g.values, 1e6)


def test_mass_constrained_flags_large_support():
    d = DomainSpec.periodic((-1, -1), (1, 1), (64, 64))
    g = sg.morse_signal(d, [((0.0, 0.0), np.eye(2) * 20)], gmax=0.9, background=0.09)
    sol = vs.solve_mass_constrained(d, g, 0.1)
    assert not sol.valid


def test_boundary_clearance():
    d = DomainSpec.window((0, 0), (1, 1), (20, 20))
    act = np.zeros(d.shape, bool)
    assert vs.boundary_clearance(act, d) == math.inf
    act[7:10, 3:12] = True
    assert vs.boundary_clearance(act, d) == 3.0
