"""Command-line front end: ``cellpol {profile,signal,solve,sweep,fit,verify}``.

Runs are driven by an INI config (key names in ``docs/config.md``). Every
command that writes a run directory also writes ``config.ini`` (the
effective configuration) and ``manifest.json`` (versions, timings, outputs).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import platform
import re
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from . import experiments as ex
from .domain import DomainSpec
from .fieldio import write_field
from .profiles import (TRACE_POWER_STATED, anisotropic_limit_profile, deg_profile_eval, quad_mass,
                       quad_params, quad_profile_eval, scaling_exponents)
from .signals import (anisotropic_signal, curve_signal, homogeneous_signal, morse_signal,
                      noncoercive_signal)
from .vi_solver import SolverError, SolverOptions, solve_mass_constrained

log = logging.getLogger("cellpol")

CASES = ("morse", "morse2", "hom", "aniso", "noncoercive", "separation", "curve")

DEFAULTS = {
    "run": {"case": "morse", "out": "runs/latest", "workers": "1"},
    "domain": {"kind": "periodic", "lower": "-3, -3", "upper": "3, 3", "shape": "256, 256",
               "phi_min_deg": "5"},
    "signal": {"gmax": "0.9", "background": "", "centers": "0, 0", "hessians": "1, 0, 0, 1",
               "gamma": "2", "gammas": "2, 4", "angular": "1", "a": "1", "b": "1", "c": "1",
               "phi0": "1.0", "a_samples": "3"},
    "sweep": {"m_list": "", "m_max": "1e-2", "m_min": "", "levels": "8", "ratio": "0.5",
              "drop": "1"},
    "solver": {"method": "pdas", "omega": "1.7", "tol": "1e-9", "mass_rtol": "1e-6",
               "max_iter": "200000", "max_outer": "60", "beta_start": "1.0",
               "min_clearance": "5"},
    "solve": {"mass": "1e-3", "format": "bin"},
    "fit": {"tol_slope": "", "tol_fraction": "0.03", "tol_hausdorff": "", "trace_power": "1.5",
            "rhos": "2, 4", "tol_support": "0.25", "tol_width": "0.25",
            "deltas": "1e-1, 1e-2, 1e-3, 1e-4"},
}

# presets applied below user config when a case is chosen
PRESETS = {
    "morse": {"domain": {"kind": "periodic", "lower": "-3, -3", "upper": "3, 3", "shape": "256, 256"},
              "signal": {"centers": "0, 0", "hessians": "1, 0, 0, 1"}},
    "morse2": {"domain": {"kind": "periodic", "lower": "-10, -5", "upper": "10, 5", "shape": "512, 256"},
               "signal": {"centers": "-5, 0; 5, 0", "hessians": "1, 0, 0, 1; 4, 0, 0, 4"},
               "sweep": {"m_max": "1e-2"}},
    "hom": {"domain": {"kind": "periodic", "lower": "-1, -1", "upper": "1, 1", "shape": "256, 256"},
            "signal": {"gamma": "4"}, "sweep": {"m_max": "1e-3"}},
    "aniso": {"domain": {"kind": "window", "lower": "-0.6, -0.4", "upper": "0.6, 0.4",
                         "shape": "128, 256"},
              "sweep": {"m_max": "2.5e-4", "ratio": "0.25"}},
    "noncoercive": {"domain": {"kind": "periodic", "lower": "-0.8, -0.9", "upper": "0.8, 0.9",
                               "shape": "256, 256"},
                    "sweep": {"m_max": "1e-3", "levels": "10"}},
    "separation": {"domain": {"kind": "periodic", "lower": "-2, -1", "upper": "2, 1", "shape": "512, 256"},
                   "signal": {"gammas": "2, 4", "centers": "-1, 0; 1, 0"},
                   "sweep": {"m_max": "1e-3"}},
    "curve": {"domain": {"kind": "sphere", "shape": "128, 256"},
              "signal": {"phi0": "1.0", "a_samples": "3"}},
}

FIT_TOL = {"morse": 0.05, "morse2": 0.05, "hom": 0.05, "aniso": 0.05, "noncoercive": 0.07,
           "separation": 0.1}
HAUSDORFF_TOL = {"morse": 0.1, "morse2": 0.1, "aniso": 0.15}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config parsing


def _floats(text: str) -> List[float]:
    return [float(t) for t in re.split(r"[,\s]+", text.strip()) if t]


def _groups(text: str) -> List[List[float]]:
    return [_floats(part) for part in text.split(";") if part.strip()]


def load_config(path: Optional[str], case: Optional[str] = None) -> configparser.ConfigParser:
    """Defaults, then the case preset, then the user file, then ``--case``."""
    user = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            user.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
    name = case or user.get("run", "case", fallback=DEFAULTS["run"]["case"])
    base = _case_name(name)
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    cfg.read_dict(PRESETS[base])
    cfg.read_dict({s: dict(user[s]) for s in user.sections()})
    cfg["run"]["case"] = name
    return cfg


def _case_name(name: str) -> str:
    base = name.split("(")[0].strip()
    if base not in CASES:
        raise ConfigError(f"unknown case {name!r}; choose from {', '.join(CASES)}")
    return base


def _case_gamma(cfg) -> float:
    m = re.match(r"hom\(([^)]+)\)", cfg["run"]["case"])
    return float(m.group(1)) if m else cfg.getfloat("signal", "gamma")


def build_domain(cfg) -> DomainSpec:
    d = cfg["domain"]
    shape = [int(v) for v in _floats(d["shape"])]
    if len(shape) != 2 or min(shape) < 64:
        raise ConfigError("domain.shape needs two sizes, each at least 64")
    kind = d["kind"]
    if kind == "sphere":
        return DomainSpec.sphere(shape[0], shape[1], float(d["phi_min_deg"]))
    lower, upper = _floats(d["lower"]), _floats(d["upper"])
    if kind == "periodic":
        return DomainSpec.periodic(lower, upper, shape)
    if kind == "window":
        return DomainSpec.window(lower, upper, shape)
    raise ConfigError(f"unknown domain kind {kind!r}")


def solver_options(cfg) -> SolverOptions:
    s = cfg["solver"]
    try:
        return SolverOptions(method=s["method"], omega=float(s["omega"]), tol=float(s["tol"]),
                             mass_rtol=float(s["mass_rtol"]), max_iter=int(float(s["max_iter"])),
                             max_outer=int(s["max_outer"]), beta_start=float(s["beta_start"]),
                             min_clearance=int(s["min_clearance"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def mass_list(cfg) -> List[float]:
    s = cfg["sweep"]
    if s["m_list"].strip():
        Ms = _floats(s["m_list"])
    else:
        mmax = float(s["m_max"])
        if s["m_min"].strip():
            n = int(s["levels"])
            Ms = list(np.geomspace(mmax, float(s["m_min"]), n))
        else:
            r = float(s["ratio"])
            Ms = [mmax * r ** k for k in range(int(s["levels"]))]
    if any(M <= 0 for M in Ms) or any(b >= a for a, b in zip(Ms, Ms[1:])):
        raise ConfigError("sweep masses must be positive and strictly decreasing")
    return [float(M) for M in Ms]


def _background(cfg):
    t = cfg["signal"]["background"].strip()
    return float(t) if t else None


def _morse_maxima(cfg):
    centers = _groups(cfg["signal"]["centers"])
    hs = _groups(cfg["signal"]["hessians"])
    if len(centers) != len(hs):
        raise ConfigError("signal.centers and signal.hessians need the same number of entries")
    return [(tuple(c), np.array(h, dtype=float).reshape(2, 2)) for c, h in zip(centers, hs)]


def build_signal(cfg, domain: DomainSpec):
    case = _case_name(cfg["run"]["case"])
    s = cfg["signal"]
    gmax = float(s["gmax"])
    bg = _background(cfg)
    center = tuple(_groups(s["centers"])[0])
    if case in ("morse", "morse2"):
        return morse_signal(domain, _morse_maxima(cfg), gmax, bg)
    if case == "hom":
        return homogeneous_signal(domain, center, _case_gamma(cfg), tuple(_floats(s["angular"])), gmax, bg)
    if case == "aniso":
        return anisotropic_signal(domain, center, float(s["a"]), float(s["b"]), gmax, bg)
    if case == "noncoercive":
        return noncoercive_signal(domain, center, float(s["a"]), float(s["b"]), float(s["c"]), gmax, bg)
    if case == "separation":
        gam = _floats(s["gammas"])
        return ex.two_homogeneous_signal(domain, (gam[0], gam[1]),
                                         [tuple(c) for c in _groups(s["centers"])], gmax, bg)
    if case == "curve":
        return curve_signal(domain, float(s["phi0"]), _floats(s["a_samples"]), gmax, bg)
    raise ConfigError(f"no signal for case {case!r}")


# ---------------------------------------------------------------------------
# output helpers


def _g(x) -> str:
    return format(float(x), ".17g")


def _dumps17(obj) -> str:
    """Compact JSON with every float written to 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        return _g(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_dumps17(v)}" for k, v in sorted(obj.items())) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps17(v) for v in obj) + "]"
    return json.dumps(obj)


def _prepare_out(args, cfg) -> Path:
    out = Path(args.out or cfg["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    with (out / "config.ini").open("w") as fh:
        cfg.write(fh)
    return out


def _manifest(out: Path, command: str, t0: float, outputs: dict, status: dict):
    import scipy
    import skimage
    man = {"command": command, "cellpol": __version__, "python": platform.python_version(),
           "numpy": np.__version__, "scipy": scipy.__version__, "scikit-image": skimage.__version__,
           "elapsed_seconds": time.perf_counter() - t0, "outputs": outputs, "status": status}
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _error_record(out: Optional[Path], kind: str, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    if out is not None:
        (out / "error.json").write_text(json.dumps({"error": kind, "message": message}, indent=2) + "\n")
    return 2


# ---------------------------------------------------------------------------
# commands


def cmd_profile(args) -> int:
    n = args.n
    out = Path(args.out) if args.out else None
    info = {"family": args.family}
    try:
        if args.family == "quad":
            p = quad_params(args.s)
            half = 1.05 * max(p.semiaxes)
            info.update({"s": args.s, "C0": p.C0, "beta2": p.beta2, "beta4": p.beta4, "k1": p.k1,
                         "k2": p.k2, "mass": quad_mass(args.s), "semiaxes": list(p.semiaxes)})
            fn = lambda y1, y2: quad_profile_eval(p, y1, y2)
        elif args.family == "deg":
            if args.alpha <= 0:
                raise ValueError("alpha must be positive")
            half = 1.05 * max(args.alpha ** 0.25, math.sqrt(3.0 * args.alpha))
            info.update({"alpha": args.alpha})
            fn = lambda y1, y2: deg_profile_eval(y1, y2, args.alpha)
        else:   # aniso
            prof = anisotropic_limit_profile(args.a, args.b, args.gmax)
            (a1, b1), (a2, b2) = prof.bbox
            half = 1.05 * max(b1, b2)
            info.update({k: float(v) if np.isscalar(v) else list(map(float, v))
                         for k, v in prof.meta.items()})
            fn = prof
    except ValueError as exc:
        return _error_record(out, "invalid-parameters", str(exc))
    dom = DomainSpec.window((-half, -half), (half, half), (n, n))
    Y1, Y2 = dom.mesh()
    vals = np.asarray(fn(Y1, Y2), dtype=float)
    info["grid_max"] = float(vals.max())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_field(out / "profile", vals, dom, {"family": args.family})
        (out / "params.json").write_text(_dumps17(info) + "\n")
    print(_dumps17(info))
    return 0


def cmd_signal(args) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.case)
        dom = build_domain(cfg)
        sig = build_signal(cfg, dom)
    except (ConfigError, ValueError) as exc:
        return _error_record(None, "config", str(exc))
    out = _prepare_out(args, cfg)
    h, d = write_field(out / "signal", sig.values, dom, {"gmax": sig.gmax, "background": sig.background,
                                                          "name": sig.name})
    _manifest(out, "signal", t0, {"header": str(h), "data": str(d)}, {"ok": True})
    print(f"signal {sig.name}: max {_g(sig.values.max())} min {_g(sig.values.min())}")
    return 0


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.case)
        dom = build_domain(cfg)
        sig = build_signal(cfg, dom)
        opts = solver_options(cfg)
        M = float(cfg["solve"]["mass"])
    except (ConfigError, ValueError) as exc:
        return _error_record(None, "config", str(exc))
    out = _prepare_out(args, cfg)
    try:
        sol = solve_mass_constrained(dom, sig, M, opts)
    except SolverError as exc:
        return _error_record(out, "solver", str(exc))
    meta = {"alpha": sol.alpha, "M": M, "mass": sol.mass}
    h, d = write_field(out / "u", sol.u, dom, meta, fmt=cfg["solve"]["format"])
    report = {"M": M, "mass": sol.mass, "alpha": sol.alpha, "alpha0": sol.alpha0, "beta": sol.beta,
              "complementarity_residual": sol.comp_residual, "nonlocal_residual": sol.nonlocal_residual,
              "clearance_cells": sol.clearance, "valid": sol.valid, "xi_violations": sol.xi_violations,
              "inner_iterations": sol.inner_iterations, "outer_iterations": sol.outer_iterations}
    (out / "solve.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _manifest(out, "solve", t0, {"field": str(d), "report": str(out / "solve.json")},
              {"valid": sol.valid})
    for k in ("M", "mass", "alpha", "beta", "complementarity_residual", "nonlocal_residual"):
        print(f"{k}: {_g(report[k])}")
    if not sol.valid:
        return _error_record(out, "domain", "active set reached window boundary")
    return 0


def _cases_for(cfg, sig):
    case = _case_name(cfg["run"]["case"])
    if case in ("morse", "morse2"):
        return ex.morse_cases([H for _, H in _morse_maxima(cfg)], sig.gmax)
    if case == "hom":
        return [ex.BumpCase(scaling_exponents("homogeneous", _case_gamma(cfg)))]
    if case == "aniso":
        return [ex.BumpCase(scaling_exponents("anisotropic_4_2"))]
    if case == "noncoercive":
        return [ex.BumpCase(scaling_exponents("noncoercive"))]
    if case == "separation":
        return [ex.BumpCase(scaling_exponents("homogeneous", g)) for g in _floats(cfg["signal"]["gammas"])]
    raise ConfigError(f"case {case!r} has no sweep")


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.case)
        dom = build_domain(cfg)
        sig = build_signal(cfg, dom)
        opts = solver_options(cfg)
        Ms = mass_list(cfg)
        cases = _cases_for(cfg, sig)
    except (ConfigError, ValueError) as exc:
        return _error_record(None, "config", str(exc))
    out = _prepare_out(args, cfg)
    workers = args.workers or int(cfg["run"]["workers"])
    try:
        recs = ex.sweep_mass(dom, sig, Ms, cases, opts, workers)
    except (SolverError, ValueError) as exc:
        return _error_record(out, "sweep", str(exc))
    path = ex.write_sweep_csv(recs, out / "sweep.csv")
    _manifest(out, "sweep", t0, {"sweep": str(path)},
              {"valid_levels": sum(r.valid for r in recs), "levels": len(recs)})
    for r in recs:
        print(f"M {_g(r.M)} beta {_g(r.beta)} valid {r.valid}")
    return 0


def cmd_fit(args) -> int:
    try:
        rows = ex.read_sweep_csv(args.csv)
    except (OSError, KeyError, ValueError) as exc:
        return _error_record(None, "input", f"cannot read sweep CSV: {exc}")
    seen, pairs = set(), []
    for r in rows:
        if r["valid"] and r["M"] not in seen and math.isfinite(r["beta"]):
            seen.add(r["M"])
            pairs.append((r["M"], r["beta"]))
    pairs.sort(reverse=True)
    pairs = pairs[args.drop:]
    try:
        fit = ex.fit_exponent(pairs, args.predicted, args.tol)
    except ValueError as exc:
        return _error_record(None, "fit", str(exc))
    print(f"slope: {_g(fit.slope)}")
    print(f"intercept: {_g(fit.intercept)}")
    print(f"prefactor: {_g(fit.prefactor)}")
    print(f"stderr: {_g(fit.stderr)}")
    if fit.passed is not None:
        print(f"pass: {str(fit.passed).lower()}")
        return 0 if fit.passed else 1
    return 0


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.case)
        dom = build_domain(cfg)
        opts = solver_options(cfg)
        Ms = mass_list(cfg)
    except (ConfigError, ValueError) as exc:
        return _error_record(None, "config", str(exc))
    case = _case_name(cfg["run"]["case"])
    s, f = cfg["signal"], cfg["fit"]
    workers = args.workers or int(cfg["run"]["workers"])
    drop = int(cfg["sweep"]["drop"])
    gmax = float(s["gmax"])
    bg = _background(cfg)
    tol_slope = float(f["tol_slope"]) if f["tol_slope"].strip() else FIT_TOL.get(case, 0.05)
    tol_h = float(f["tol_hausdorff"]) if f["tol_hausdorff"].strip() else HAUSDORFF_TOL.get(case, 0.1)
    out = _prepare_out(args, cfg)
    try:
        if case in ("morse", "morse2"):
            rep = ex.verify_morse_case(dom, _morse_maxima(cfg), gmax, Ms, opts, workers, bg, drop,
                                       tol_slope, float(f["tol_fraction"]), tol_h,
                                       float(f["trace_power"]))
        elif case == "aniso":
            rep = ex.verify_anisotropic_case(dom, float(s["a"]), float(s["b"]), Ms, gmax, opts, workers,
                                             bg, tuple(_groups(s["centers"])[0]), drop, tol_slope, tol_h)
        elif case == "noncoercive":
            rep = ex.verify_noncoercive_case(dom, float(s["a"]), float(s["b"]), float(s["c"]), Ms, gmax,
                                             opts, workers, bg, tuple(_groups(s["centers"])[0]), drop,
                                             tol_slope, tuple(_floats(f["rhos"])),
                                             float(f["tol_support"]), float(f["tol_width"]),
                                             tuple(_floats(f["deltas"])))
        elif case == "separation":
            gam = _floats(s["gammas"])
            rep = ex.mass_ratio_separation(dom, gam[0], gam[1], Ms,
                                           [tuple(c) for c in _groups(s["centers"])], gmax, opts,
                                           workers, bg, drop, tol_slope)
        elif case == "hom":
            gamma = _case_gamma(cfg)
            sig = build_signal(cfg, dom)
            recs = ex.sweep_mass(dom, sig, Ms, _cases_for(cfg, sig), opts, workers)
            valid = [r for r in recs if r.valid]
            fit = ex.fit_exponent([(r.M, r.beta) for r in valid[drop:]], gamma / (gamma + 4.0), tol_slope)
            rep = {"case": f"hom({gamma:g})", "records": recs, "fit": fit,
                   "checks": {"slope": bool(fit.passed)}, "pass": bool(fit.passed)}
        else:
            return _error_record(out, "config", f"case {case!r} has no verification")
    except (SolverError, ValueError) as exc:
        return _error_record(out, "verify", str(exc))
    paths = ex.write_report(rep, out)
    _manifest(out, "verify", t0, paths, {"pass": bool(rep["pass"]), "checks": rep["checks"]})
    for line in ex.summary_lines(rep):
        print(line)
    return 0 if rep["pass"] else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellpol", description="Mass-constrained obstacle problem toolkit.")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--out", help="run directory (overrides run.out)")
        sp.add_argument("--workers", type=int, default=None, help="concurrent solves")
        sp.add_argument("--case", help=f"case preset: {', '.join(CASES)} (hom(gamma) accepted)")

    sp = sub.add_parser("profile", help="sample a closed-form limit profile")
    sp.add_argument("family", choices=("quad", "deg", "aniso"))
    sp.add_argument("--s", type=float, default=0.5)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--b", type=float, default=1.0)
    sp.add_argument("--gmax", type=float, default=1.0)
    sp.add_argument("--n", type=int, default=201)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_profile)

    for name, fn, hl in (("signal", cmd_signal, "build and dump a signal"),
                         ("solve", cmd_solve, "one mass-constrained solve"),
                         ("sweep", cmd_sweep, "sweep M and write sweep.csv"),
                         ("verify", cmd_verify, "sweep, fit and check predictions")):
        sp = sub.add_parser(name, help=hl)
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("fit", help="fit beta ~ M^slope from a sweep CSV")
    sp.add_argument("csv")
    sp.add_argument("--predicted", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--drop", type=int, default=0, help="largest-M levels to drop")
    sp.set_defaults(func=cmd_fit)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return int(args.func(args))


if __name__ == "__main__":
    sys.exit(main())
