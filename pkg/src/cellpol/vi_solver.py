"""Mass-constrained obstacle problem on a structured surface grid.

The inner problem at fixed multiplier is the linear complementarity problem

    u >= 0,   A u - f >= 0,   u (A u - f) = 0,     f = (1 + alpha) g - 1,

with ``A`` the finite-volume discretization of ``-lap_Gamma``. The outer loop
adjusts ``alpha`` until the surface integral of ``u`` equals the target mass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .domain import DomainSpec

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Inner or outer iteration failed; ``residual`` holds the last residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class BracketError(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    method: str = "pdas"          # "pdas" (active-set Newton) or "psor"
    omega: float = 1.7            # SOR relaxation
    tol: float = 1e-9             # complementarity residual bound
    max_iter: int = 200000        # PSOR sweeps
    max_pdas: int = 300
    mass_rtol: float = 1e-6
    max_outer: int = 60
    beta_start: float = 1.0       # first upper bracket is alpha_lo + beta_start
    min_clearance: int = 5        # cells between active set and chart edge
    nested: bool = True           # coarse-grid active-set guess for cold starts

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ValueError("omega must lie in (0, 2)")
        if self.tol <= 0 or self.mass_rtol <= 0:
            raise ValueError("tolerances must be positive")
        if self.method not in ("pdas", "psor"):
            raise ValueError(f"unknown inner method {self.method!r}")


# ---------------------------------------------------------------------------
# operator


@dataclass(frozen=True)
class LaplaceBeltrami:
    """Discrete ``-lap_Gamma`` as ``A = diag(1/mu) K`` with ``K`` symmetric PSD."""

    domain: DomainSpec
    K: sp.csr_matrix = field(repr=False)
    mu: np.ndarray = field(repr=False)   # flat

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.diags(1.0 / self.mu) @ self.K

    def apply(self, u: np.ndarray) -> np.ndarray:
        shape = self.domain.shape
        return (self.K @ np.ravel(u)).reshape(shape) / self.mu.reshape(shape)


def _face_coefficients(domain: DomainSpec):
    H = domain.metric
    if np.any(H[..., 0, 1] != 0.0) or np.any(H[..., 1, 0] != 0.0):
        raise ValueError("5-point stencil requires a diagonal diffusion tensor")
    w1 = domain.mu * H[..., 0, 0]
    w2 = domain.mu * H[..., 1, 1]
    return w1, w2


def assemble_operator(domain: DomainSpec) -> LaplaceBeltrami:
    """Conservative 5-point stencil with face-averaged ``mu H`` coefficients."""
    n1, n2 = domain.shape
    h1, h2 = domain.spacing
    w1, w2 = _face_coefficients(domain)
    p1, p2 = domain.periodic_axes
    idx = np.arange(n1 * n2).reshape(n1, n2)
    rows, cols, vals = [], [], []
    diag = np.zeros((n1, n2))

    def couple(a_idx, b_idx, c):
        rows.extend((a_idx.ravel(), b_idx.ravel()))
        cols.extend((b_idx.ravel(), a_idx.ravel()))
        vals.extend((-c.ravel(), -c.ravel()))

    # interior faces along axis 0
    c = 0.5 * (w1[:-1, :] + w1[1:, :]) / h1 ** 2
    couple(idx[:-1, :], idx[1:, :], c)
    diag[:-1, :] += c
    diag[1:, :] += c
    if p1:
        c = 0.5 * (w1[-1, :] + w1[0, :]) / h1 ** 2
        couple(idx[-1, :], idx[0, :], c)
        diag[-1, :] += c
        diag[0, :] += c
    elif domain.kind == "window":
        # zero ghost value one cell beyond the edge
        diag[0, :] += w1[0, :] / h1 ** 2
        diag[-1, :] += w1[-1, :] / h1 ** 2
    # sphere caps: zero flux

    c = 0.5 * (w2[:, :-1] + w2[:, 1:]) / h2 ** 2
    couple(idx[:, :-1], idx[:, 1:], c)
    diag[:, :-1] += c
    diag[:, 1:] += c
    if p2:
        c = 0.5 * (w2[:, -1] + w2[:, 0]) / h2 ** 2
        couple(idx[:, -1], idx[:, 0], c)
        diag[:, -1] += c
        diag[:, 0] += c
    elif domain.kind == "window":
        diag[:, 0] += w2[:, 0] / h2 ** 2
        diag[:, -1] += w2[:, -1] / h2 ** 2

    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    N = n1 * n2
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    K.sum_duplicates()
    return LaplaceBeltrami(domain, K, domain.mu.ravel().copy())


def complementarity_residual(op: LaplaceBeltrami, u: np.ndarray, f: np.ndarray) -> float:
    """``max |min(u, A u - f)|`` over all cells."""
    w = op.apply(u) - f
    return float(np.max(np.abs(np.minimum(u, w))))


# ---------------------------------------------------------------------------
# inner LCP solvers


def _pdas(op: LaplaceBeltrami, b: np.ndarray, active: np.ndarray, max_iter: int):
    """Primal-dual active-set iteration on ``K u - b`` (flat arrays).

    Returns ``(u, iterations, converged)``.
    """
    K = op.K
    N = b.size
    thr = 1e-12 * max(1.0, float(np.max(np.abs(b))))
    u = np.zeros(N)
    P = active.copy()
    seen = set()
    for it in range(1, max_iter + 1):
        u = np.zeros(N)
        if P.all() and op.domain.kind != "window":
            raise BracketError("active set covers the whole domain")
        if P.any():
            ip = np.flatnonzero(P)
            Kpp = K[ip][:, ip].tocsc()
            u[ip] = spsolve(Kpp, b[ip])
        w = K @ u - b
        w[P] = 0.0
        newP = (P & (u > 0.0)) | (~P & (w < -thr))
        if np.array_equal(newP, P):
            u[~P] = 0.0
            u[P & (u <= 0.0)] = 0.0
            return u, it, True
        key = hash(np.packbits(newP).tobytes())
        if key in seen:
            log.debug("active-set iteration cycled after %d steps", it)
            return np.maximum(u, 0.0), it, False
        seen.add(key)
        P = newP
    return np.maximum(u, 0.0), max_iter, False


def _psor(op: LaplaceBeltrami, b: np.ndarray, u0: np.ndarray, opts: SolverOptions,
          f_grid: np.ndarray):
    """Red-black projected SOR. Returns ``(u, sweeps, residual)``."""
    dom = op.domain
    n1, n2 = dom.shape
    p1, p2 = dom.periodic_axes
    if (p1 and n1 % 2) or (p2 and n2 % 2):
        raise ValueError("red-black PSOR needs even sizes along periodic axes")
    K = op.K
    d = K.diagonal()
    L = K - sp.diags(d)
    I1, I2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    red = ((I1 + I2) % 2 == 0).ravel()
    colors = (red, ~red)
    u = np.maximum(u0.copy(), 0.0)
    om = opts.omega
    res = np.inf
    for sweep in range(1, opts.max_iter + 1):
        for c in colors:
            gs = (b[c] - (L @ u)[c]) / d[c]
            u[c] = np.maximum(0.0, (1.0 - om) * u[c] + om * gs)
        if sweep % 20 == 0 or sweep == opts.max_iter:
            res = complementarity_residual(op, u.reshape(dom.shape), f_grid)
            if res <= opts.tol:
                return u, sweep, res
    return u, opts.max_iter, res


def _restrict(a: np.ndarray) -> np.ndarray:
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def _nested_guess(domain: DomainSpec, f: np.ndarray, opts: SolverOptions) -> Optional[np.ndarray]:
    """Active set from a coarse-grid solve, prolonged to ``domain``."""
    n1, n2 = domain.shape
    if min(n1, n2) < 128 or n1 % 2 or n2 % 2:
        return None
    coarse = domain.coarsen()
    uc, _ = solve_lcp(coarse, _restrict(f), opts)
    act = np.repeat(np.repeat(uc > 0.0, 2, axis=0), 2, axis=1)
    return act


def solve_lcp(domain: DomainSpec, f: np.ndarray, opts: SolverOptions = SolverOptions(),
              u0: Optional[np.ndarray] = None, op: Optional[LaplaceBeltrami] = None
              ) -> Tuple[np.ndarray, dict]:
    """Solve ``min(u, A u - f) = 0`` for a given right-hand side field ``f``.

    Returns the solution and a stats dict (``iterations``, ``residual``, ``method``).
    """
    if op is None:
        op = assemble_operator(domain)
    f = np.asarray(f, dtype=float)
    if f.shape != domain.shape:
        raise ValueError("rhs does not match the grid")
    b = op.mu * f.ravel()
    if not np.any(f > 0.0) and (u0 is None or not np.any(u0 > 0.0)):
        # nonpositive forcing: zero is the solution
        u = np.zeros(domain.shape)
        return u, {"iterations": 0, "residual": complementarity_residual(op, u, f), "method": "trivial"}

    iters = 0
    if opts.method == "pdas":
        if u0 is not None:
            start = np.ravel(u0) > 0.0
            if start.all():
                start = start & (f.ravel() > 0.0)
        else:
            guess = _nested_guess(domain, f, opts) if opts.nested else None
            start = guess.ravel() if guess is not None else f.ravel() > 0.0
        u, iters, ok = _pdas(op, b, start, opts.max_pdas)
        res = complementarity_residual(op, u.reshape(domain.shape), f)
        if not ok or res > opts.tol:
            # polish with PSOR from the current iterate
            u, sweeps, res = _psor(op, b, u, opts, f)
            iters += sweeps
    else:
        start = np.zeros(b.size) if u0 is None else np.ravel(u0).astype(float)
        u, iters, res = _psor(op, b, start, opts, f)
    u = u.reshape(domain.shape)
    if res > opts.tol:
        raise SolverError(f"LCP did not converge (residual {res:.3e})", res)
    return u, {"iterations": iters, "residual": res, "method": opts.method}


def solve_fixed_alpha(domain: DomainSpec, g, alpha: float, opts: SolverOptions = SolverOptions(),
                      u0: Optional[np.ndarray] = None, op: Optional[LaplaceBeltrami] = None
                      ) -> np.ndarray:
    """Obstacle solve with right-hand side ``(1 + alpha) g - 1``."""
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    values = getattr(g, "values", g)
    u, _ = solve_lcp(domain, (1.0 + alpha) * values - 1.0, opts, u0=u0, op=op)
    return u


def mass_of(u: np.ndarray, domain: DomainSpec) -> float:
    """Surface integral ``sum u mu h1 h2``."""
    u = np.asarray(u, dtype=float)
    if u.shape != domain.shape:
        raise ValueError("field does not match the grid")
    return float(np.sum(u * domain.cell_area))


def recover_xi(u: np.ndarray, g, alpha: float) -> np.ndarray:
    """``xi = 1`` on ``{u > 0}`` and ``alpha g / (1 - g)`` elsewhere."""
    values = getattr(g, "values", g)
    xi = alpha * values / (1.0 - values)
    return np.where(np.asarray(u) > 0.0, 1.0, xi)


def xi_violations(xi: np.ndarray, tol: float = 1e-12) -> int:
    """Number of cells where ``xi`` leaves ``[0, 1]``."""
    return int(np.count_nonzero((xi > 1.0 + tol) | (xi < -tol)))


def boundary_clearance(active: np.ndarray, domain: DomainSpec) -> float:
    """Cells between the active set and the nearest chart edge (inf if empty).

    Periodic rectangles count their fundamental cell edges as the chart edge;
    the sphere only has cap edges.
    """
    if not np.any(active):
        return math.inf
    i1, i2 = np.nonzero(active)
    n1, n2 = domain.shape
    gaps = [i1.min(), n1 - 1 - i1.max()]
    if domain.kind != "sphere":
        gaps += [i2.min(), n2 - 1 - i2.max()]
    return float(min(gaps))


# ---------------------------------------------------------------------------
# mass constraint


@dataclass
class ObstacleSolution:
    u: np.ndarray
    alpha: float
    alpha0: float
    mass: float
    target_mass: float
    active: np.ndarray
    xi: np.ndarray
    comp_residual: float
    nonlocal_residual: float
    inner_iterations: int
    outer_iterations: int
    clearance: float
    valid: bool
    xi_violations: int = 0

    @property
    def beta(self) -> float:
        return self.alpha - self.alpha0


class _MassMap:
    """Memoized ``alpha -> mass`` with warm-started inner solves."""

    def __init__(self, domain, op, rhs: Callable[[float], np.ndarray], opts):
        self.domain, self.op, self.rhs, self.opts = domain, op, rhs, opts
        self.cache = {}
        self.inner = 0
        self._last = None

    def solve(self, alpha):
        if alpha in self.cache:
            return self.cache[alpha]
        u, st = solve_lcp(self.domain, self.rhs(alpha), self.opts, u0=self._last, op=self.op)
        self.inner += st["iterations"]
        if np.any(u > 0.0):
            self._last = u
        m = mass_of(u, self.domain)
        self.cache[alpha] = (u, m, st)
        return u, m, st


def solve_for_mass(domain: DomainSpec, rhs: Callable[[float], np.ndarray], M: float,
                   alpha_lo: float, opts: SolverOptions = SolverOptions(),
                   op: Optional[LaplaceBeltrami] = None, alpha_hi: Optional[float] = None):
    """Find ``alpha`` with ``mass(u(alpha)) = M`` for a monotone family ``rhs(alpha)``.

    ``alpha_lo`` must give mass zero (or below ``M``). The bracket is closed by
    doubling ``alpha_hi - alpha_lo``; the root is refined by bisection
    accelerated with regula falsi on ``mass^(1/3)``, falling back to plain
    halving whenever a step fails to halve the bracket.

    Returns ``(u, alpha, stats)``.
    """
    if M <= 0.0:
        raise ValueError("target mass must be positive")
    if op is None:
        op = assemble_operator(domain)
    mm = _MassMap(domain, op, rhs, opts)
    lo = alpha_lo
    _, m_lo, _ = mm.solve(lo)
    if m_lo >= M:
        raise BracketError("lower bracket already exceeds the target mass")
    step = opts.beta_start if alpha_hi is None else alpha_hi - alpha_lo
    hi = lo + step
    outer = 0
    while True:
        outer += 1
        if outer > 200:
            raise BracketError("could not bracket the target mass")
        try:
            _, m_hi, _ = mm.solve(hi)
        except BracketError:
            # overshoot: the positivity set filled the chart, back off
            step *= 0.25
            hi = lo + step
            continue
        if m_hi >= M:
            break
        lo, m_lo = hi, m_hi
        step *= 2.0
        hi = lo + step

    def phi(m):
        return m ** (1.0 / 3.0) - M ** (1.0 / 3.0)

    width = hi - lo
    u_best, a_best, m_best = None, None, None
    for k in range(opts.max_outer):
        outer += 1
        f_lo, f_hi = phi(m_lo), phi(m_hi)
        cand = lo - f_lo * (hi - lo) / (f_hi - f_lo) if f_hi != f_lo else 0.5 * (lo + hi)
        margin = 0.02 * (hi - lo)
        if not (lo + margin < cand < hi - margin) or (hi - lo) > 0.5 * width:
            cand = 0.5 * (lo + hi)
        width = hi - lo
        u, m, _ = mm.solve(cand)
        if u_best is None or abs(m - M) < abs(m_best - M):
            u_best, a_best, m_best = u, cand, m
        if abs(m - M) <= opts.mass_rtol * M:
            break
        if m < M:
            lo, m_lo = cand, m
        else:
            hi, m_hi = cand, m
        if hi - lo <= 4.0 * np.finfo(float).eps * max(1.0, abs(hi)):
            break
    if abs(m_best - M) > opts.mass_rtol * M:
        raise SolverError(f"mass bracket exhausted: |mass - M|/M = {abs(m_best - M) / M:.3e}")
    return u_best, a_best, {"outer": outer, "inner": mm.inner, "mass": m_best}


def solve_mass_constrained(domain: DomainSpec, g, M: float, opts: SolverOptions = SolverOptions(),
                           op: Optional[LaplaceBeltrami] = None,
                           alpha_hi: Optional[float] = None) -> ObstacleSolution:
    """Solve the full system: obstacle problem, ``xi`` recovery and mass constraint.

    Parameters
    ----------
    g : SignalField or array of samples in (0, 1). ``g.gmax`` (else the grid
        max) sets ``alpha0 = (1 - gmax) / gmax``, the lower bracket.
    M : target surface mass.
    alpha_hi : optional initial upper bracket (warm start for sweeps).
    """
    values = np.asarray(getattr(g, "values", g), dtype=float)
    gmax = float(getattr(g, "gmax", values.max()))
    a0 = (1.0 - gmax) / gmax
    if op is None:
        op = assemble_operator(domain)
    u, alpha, st = solve_for_mass(domain, lambda a: (1.0 + a) * values - 1.0, M, a0, opts,
                                  op=op, alpha_hi=alpha_hi)
    f = (1.0 + alpha) * values - 1.0
    active = u > 0.0
    xi = recover_xi(u, values, alpha)
    clearance = boundary_clearance(active, domain)
    return ObstacleSolution(
        u=u, alpha=alpha, alpha0=a0, mass=st["mass"], target_mass=M, active=active, xi=xi,
        comp_residual=complementarity_residual(op, u, f),
        nonlocal_residual=nonlocal_residual(u, values, alpha, domain),
        inner_iterations=st["inner"], outer_iterations=st["outer"],
        clearance=clearance, valid=clearance >= opts.min_clearance,
        xi_violations=xi_violations(xi))


def nonlocal_residual(u: np.ndarray, g, alpha: float, domain: DomainSpec) -> float:
    """``|(1 + alpha) * mean_{u>0} g - 1|`` with area weights."""
    values = np.asarray(getattr(g, "values", g), dtype=float)
    active = np.asarray(u) > 0.0
    if not np.any(active):
        return math.nan
    w = domain.cell_area[active]
    return abs((1.0 + alpha) * float(np.sum(values[active] * w) / np.sum(w)) - 1.0)
