"""Scenario-driven command line front end.

Every run loads a YAML scenario (a file path or a shipped preset name), builds
the scenario, passes it through the assumption gates and then executes one
command.  Each run writes ``report.json`` and ``samples.csv`` into the output
directory.

Exit codes: 0 all asserted identities hold, 1 identity violation, 2 assumption
failure (named), 3 numerical refusal.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .halfline import ContourError, FirstOrderWeight, MorphismWeight, SingularBoundaryError
from .projections import (
    aps_projection,
    check_sigma_compat,
    check_wellposed,
    constant_projection,
    generating_operator,
    orthogonalize,
    perturb_projection,
    rotate_projection,
    spectral_projection,
)
from .reduction import (
    AssumptionError,
    RefusalError,
    Scenario,
    assemble_resolvent,
    fd_oracle_solve,
    gaussian_section,
    reduction_residuals,
    section_norm,
    validate_scenario,
)
from .spectral_functions import (
    IdentityViolation,
    boundary_heat_trace,
    eta,
    eta_invariant,
    fit_expansion,
    index_supertrace,
    log_t_grid,
    residue_of_weighted_projection,
    stability_experiment,
    zeta,
    zeta_eta_identity,
    zeta_from_fit,
)
from .constants import RESIDUE_BRIDGE
from .tangential import (
    SIGMA1,
    SIGMA2,
    SIGMA3,
    ModeBasis,
    TangentialOperator,
    build_model_operator,
    dirac_sigma,
    morphism,
    square,
    tangential_derivative,
)

log = logging.getLogger("spectral_bvp_lab")

COMMANDS = ("check", "heat", "fit", "zeta", "eta", "index", "stability", "resolvent-verify")
PRESETS = (
    "aps-scalar",
    "aps-dirac",
    "robin-real",
    "robin-imaginary",
    "sigma-symmetric",
    "perturbed-grassmannian",
)

TOL = {
    "log_coefficient": 1e-4,
    "residue_relative": 0.03,
    "zeta_eta_identity": 1e-10,
    "index_flatness": 1e-5,
    "fd_rate": 0.1,
    "fd_error_factor": 5.0,
    "reduction_residual": 1e-10,
}

RUN_DEFAULTS = {
    "t_min": 1e-4,
    "t_max": 1e-1,
    "t_points": 160,
    "k_max": 4,
    "theta": math.pi / 2 - 0.01,
    "precision": "dd",
    "seed": 0,
}

_NAMED = {"sigma1": SIGMA1, "sigma2": SIGMA2, "sigma3": SIGMA3}


class ConfigError(ValueError):
    """Malformed configuration document."""


# ---------------------------------------------------------------------------
# configuration


def load_config(ref: str) -> dict:
    """Read a YAML scenario from a path or a shipped preset name."""
    path = Path(ref)
    if path.exists():
        text = path.read_text()
    elif ref in PRESETS:
        text = resources.files("spectral_bvp_lab").joinpath("presets", f"{ref}.yaml").read_text()
    else:
        raise ConfigError(f"no config file or preset named {ref!r}")
    cfg = yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    run = {**RUN_DEFAULTS, **(cfg.get("run") or {})}
    for key in ("t_min", "t_max", "t_points", "precision", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    cfg["run"] = run
    if getattr(args, "cutoff", None) is not None:
        cfg.setdefault("geometry", {})["cutoff"] = args.cutoff
    return cfg


def config_hash(cfg: dict) -> str:
    body = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(body).hexdigest()


def _matrix(value, n: int) -> np.ndarray:
    if isinstance(value, str):
        if value == "identity":
            return np.eye(n, dtype=complex)
        if value in _NAMED:
            return _NAMED[value].astype(complex)
        raise ConfigError(f"unknown matrix name {value!r}")
    m = np.asarray(value, dtype=complex)
    if m.ndim == 0:
        return m * np.eye(n, dtype=complex)
    return np.atleast_2d(m)


def _complex(v) -> complex:
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    return complex(v)


def _tangential(cfg: dict) -> TangentialOperator:
    geo = cfg.get("geometry") or {}
    op = cfg.get("operator") or {}
    family = op.get("family")
    params = op.get("params") or {}
    if geo.get("type", "circle") == "point":
        return build_model_operator({"family": "MatrixPoint", "M": params["M"]})
    cutoff = int(geo.get("cutoff", 64))
    n = int(geo.get("fiber_dim", {"ScalarShift": 1, "DiracPair": 2}.get(family, 1)))
    basis = ModeBasis("circle", n, cutoff)
    return build_model_operator({"family": family, **params}, basis=basis)


def _projection(cfg: dict, a: TangentialOperator, sigma):
    pc = cfg.get("projection") or {}
    kind = pc.get("kind", "aps")
    params = pc.get("params") or {}
    if kind == "aps":
        return aps_projection(a, params.get("variant", "ge"), sigma=sigma)
    if kind == "spectral":
        return spectral_projection(a, pc.get("null_selector"), sigma=sigma)
    if kind == "custom":
        return constant_projection(a.basis, _matrix(params["M"], a.fiber_dim))
    if kind == "perturbed":
        base = aps_projection(a, params.get("variant", "ge"), sigma=sigma)
        if "rotate" in params:
            base = rotate_projection(base, float(params["rotate"]))
        return perturb_projection(
            base,
            int(params["decay_order"]),
            float(params["eps"]),
            int(params.get("seed", cfg["run"]["seed"])),
            preserve_sigma=sigma if params.get("preserve_sigma", False) else None,
        )
    raise ConfigError(f"unknown projection kind {kind!r}")


def _boundary(cfg: dict, a: TangentialOperator) -> TangentialOperator:
    bc = cfg.get("boundary") or {}
    fam = bc.get("b_family", "zero")
    params = bc.get("params") or {}
    n = a.fiber_dim
    if fam == "zero":
        return morphism(a.basis, np.zeros((n, n)))
    if fam == "A":
        return a.scale(float(params.get("scale", 1.0)))
    if fam == "derivative":
        return tangential_derivative(a.basis, _complex(params["beta"]))
    if fam == "constant":
        return morphism(a.basis, _matrix(params["M"], n))
    raise ConfigError(f"unknown boundary family {fam!r}")


def _weight(cfg: dict, a: TangentialOperator, sigma):
    wc = cfg.get("weight") or {}
    kind = wc.get("kind", "none")
    params = wc.get("params") or {}
    n = a.fiber_dim
    if kind == "none":
        return None
    if kind == "morphism":
        return MorphismWeight(_matrix(params.get("phi", "identity"), n))
    if kind == "first_order":
        psi = params.get("psi", "sigma")
        psi = sigma.blocks if psi == "sigma" else _matrix(psi, n)
        b1 = params.get("b1", "A")
        b1 = a.blocks if b1 == "A" else _matrix(b1, n)
        return FirstOrderWeight(psi, b1)
    raise ConfigError(f"unknown weight kind {kind!r}")


def build_scenario(cfg: dict) -> Scenario:
    """Turn a parsed configuration into a Scenario."""
    run = {**RUN_DEFAULTS, **(cfg.get("run") or {})}
    cfg = {**cfg, "run": run}
    a = _tangential(cfg)
    op = cfg.get("operator") or {}
    sigma = dirac_sigma(a.basis) if op.get("sigma", False) else None
    pprime = square(a)
    if op.get("pprime_shift") is not None:
        shift = morphism(a.basis, _matrix(op["pprime_shift"], a.fiber_dim))
        pprime = dataclasses.replace(pprime + shift, nonnegative=True)
    return Scenario(
        pprime=pprime,
        pi1=_projection(cfg, a, sigma),
        b=_boundary(cfg, a),
        a=a,
        sigma=sigma,
        weight=_weight(cfg, a, sigma),
        theta=float(run["theta"]),
        name=str(cfg.get("name", "")),
        meta={"config": cfg},
    )


# ---------------------------------------------------------------------------
# commands


def _tgrid(run: dict) -> np.ndarray:
    return log_t_grid(float(run["t_min"]), float(run["t_max"]), int(run["t_points"]))


def _n(sc: Scenario) -> int:
    return sc.basis.boundary_dim + 1


def _fit_record(fit) -> dict:
    out = {}
    for k in sorted(fit.coefficients):
        for slot, name in enumerate(("a", "a'", "a''")):
            c = fit.coefficients[k][slot]
            if c is None:
                continue
            out[f"{name}_{k}"] = {"value": _num(c), "uncertainty": fit.uncertainties[k][slot]}
    return {
        "coefficients": out,
        "condition_number": fit.condition_number,
        "t_window": list(fit.t_window),
        "indeterminate": list(fit.indeterminate),
        "m_prime": fit.m_prime,
        "k_max": fit.k_max,
    }


def _num(x):
    x = complex(x)
    if x.imag == 0:
        return x.real
    return {"re": x.real, "im": x.imag}


def _assertion(name: str, value: float, tol: float, passed: bool) -> dict:
    return {"name": name, "value": value, "tolerance": tol, "passed": bool(passed)}


def _gate(sc: Scenario) -> dict:
    rep = validate_scenario(sc)
    out = {
        "parameter_ellipticity": {
            "passed": rep.passed,
            "theta": rep.theta,
            "margin_to_half_pi": math.pi / 2 - rep.theta,
            "min_singular_value": rep.min_singular_value,
            "worst_point": {"xi": rep.worst_point[0], "mu": _num(rep.worst_point[1])},
            "sufficient_conditions": list(rep.sufficient_conditions),
        },
        "principal_commutation": {"passed": True},
    }
    if sc.a is not None and sc.basis.fiber_dim % 2 == 0 and sc.sigma is not None:
        wp = check_wellposed(sc.pi1, sc.a)
        out["well_posedness"] = {"passed": wp.passed, "margin": wp.margin, "ranks": list(wp.ranks)}
        if not wp.passed:
            raise AssumptionError("well-posedness", f"margin {wp.margin:.3e}, ranks {wp.ranks}")
    if sc.sigma is not None:
        out["sigma_compatible"] = check_sigma_compat(sc.pi1, sc.sigma)
    return out


def cmd_check(sc, run, report, rows):
    report["gates"] = _gate(sc)


def cmd_heat(sc, run, report, rows):
    h = boundary_heat_trace(sc, _tgrid(run), precision=run["precision"])
    report["heat"] = {"cutoff": h.cutoff, "tail_bound": h.tail_bound, "precision": h.precision}
    rows.extend((float(t), _num(v), "") for t, v in zip(h.t, h.values))
    return h


def cmd_fit(sc, run, report, rows):
    h = cmd_heat(sc, run, report, rows)
    m_prime = 1 if isinstance(sc.weight, FirstOrderWeight) else 0
    fit = fit_expansion(h, _n(sc), m_prime, int(run["k_max"]))
    report["fit"] = _fit_record(fit)
    a1, u1 = fit.log_coefficient(0)
    a2, _ = fit.constant_coefficient(0)
    checks = report.setdefault("assertions", [])
    if sc.weight is None:
        tol = TOL["log_coefficient"] * max(1.0, abs(a2))
        checks.append(_assertion("log coefficient a'_0(I) vanishes", abs(a1), tol, abs(a1) <= tol))
    elif isinstance(sc.weight, MorphismWeight) and sc.pi1.symbol is not None:
        phi = np.asarray(sc.weight.phi)
        if phi.ndim == 2:
            res = residue_of_weighted_projection(phi, sc.pi1)
            pred = 0.25 * res / RESIDUE_BRIDGE
            rel = abs(a1 - pred) / max(abs(pred), 1e-300)
            report["residue"] = {"res_phi_pi2": res, "predicted_log_coefficient": pred}
            checks.append(
                _assertion("log coefficient matches quarter residue", rel, TOL["residue_relative"],
                           rel <= TOL["residue_relative"])
            )
    return fit


def _generator(sc: Scenario):
    """A selfadjoint C with Π_>(C) = Π₁ plus the matching nullspace selector."""
    p = sc.pi1
    cfg = sc.meta.get("config", {})
    kind = (cfg.get("projection") or {}).get("kind", "aps")
    if kind in ("aps", "spectral") and sc.a is not None:
        return sc.a, p
    if not p.orthogonal:
        p, _ = orthogonalize(p)
    return generating_operator(p), p


def cmd_zeta(sc, run, report, rows):
    fit = cmd_fit(sc, run, report, rows)
    rows.clear()
    if fit.m_prime == 0:
        z0 = zeta_from_fit(fit)
        report["boundary_zeta_at_0"] = {"finite_part": _num(z0.value), "residue": z0.residue_simple}
    c, p = _generator(sc)
    checks = report.setdefault("assertions", [])
    for s in (0.3, 0.7, 1.5):
        lhs, rhs = zeta_eta_identity(c, p, s)
        err = abs(lhs - rhs)
        checks.append(_assertion(f"zeta-eta identity at s={s}", err, TOL["zeta_eta_identity"],
                                 err <= TOL["zeta_eta_identity"]))
        zv = zeta(c, 2 * s).value
        rows.append((s, _num(zv), ""))


def cmd_eta(sc, run, report, rows):
    c, p = _generator(sc)
    cfg = sc.meta.get("config", {})
    selector = (cfg.get("projection") or {}).get("null_selector")
    e0 = eta(c, 0.0)
    report["eta"] = {"eta_C_0": _num(e0.value), "null_dims": list(p.null_dims)}
    if c is sc.a:
        report["eta"]["eta_C_V0"] = eta_invariant(c, selector, sigma=sc.sigma)
    for s in np.linspace(0.1, 2.0, 20):
        rows.append((float(s), _num(eta(c, s).value), ""))


def cmd_index(sc, run, report, rows):
    t = log_t_grid(max(float(run["t_min"]), 1e-2), 10.0, 40)
    res = index_supertrace(sc, t, TOL["index_flatness"], run["precision"])
    report["index"] = {"index": res.index, "flatness": res.flatness, "tolerance": TOL["index_flatness"]}
    c, _ = _generator(sc)
    if c is sc.a:
        cfg = sc.meta.get("config", {})
        selector = (cfg.get("projection") or {}).get("null_selector")
        if (cfg.get("projection") or {}).get("kind") == "aps":
            selector = {"ge": "full", "gt": "empty", "plus": "lagrangian"}[
                (cfg["projection"].get("params") or {}).get("variant", "ge")
            ]
        report["index"]["eta_C_V0"] = eta_invariant(c, selector, sigma=sc.sigma)
    rows.extend((float(ti), float(si), "") for ti, si in zip(res.t, res.supertrace))


def cmd_stability(sc, run, report, rows):
    cfg = sc.meta.get("config", {})
    st = cfg.get("stability") or {}
    rep = stability_experiment(
        sc,
        int(st.get("decay_order", -2)),
        float(st.get("eps", 0.05)),
        int(st.get("trials", 5)),
        seed=int(run["seed"]),
        t=_tgrid(run),
        k_max=int(run["k_max"]),
        log_tol=TOL["log_coefficient"],
    )
    report["stability"] = {
        "decay_order": rep.decay_order,
        "eps": rep.eps,
        "resampled": rep.resampled,
        "base": dataclasses.asdict(rep.base),
        "trials": [dataclasses.asdict(c) for c in rep.trials],
        "max_delta_a2_I": rep.max_delta_a2_I,
        "max_delta_a2_D": rep.max_delta_a2_D,
        "ratio_to_uncertainty_I": rep.ratio_I,
        "ratio_to_uncertainty_D": rep.ratio_D,
        "max_abs_a1": rep.max_abs_a1,
    }
    checks = report.setdefault("assertions", [])
    checks.append(_assertion("a'_0 vanishes in every trial", rep.max_abs_a1, TOL["log_coefficient"],
                             rep.a1_within))
    if rep.decay_order <= -_n(sc):
        ratio = max(rep.ratio_I, rep.ratio_D)
        checks.append(_assertion("a''_0 shift within twice the fit uncertainty", ratio, 2.0, ratio <= 2.0))
    for i, c in enumerate(rep.trials):
        rows.append((i, c.a2_I - rep.base.a2_I, c.u_a2_I + rep.base.u_a2_I))


def cmd_resolvent_verify(sc, run, report, rows):
    lam = _complex(run.get("lambda", "-1+0.5j"))
    kk = min(sc.basis.cutoff, int(run.get("verify_modes", 3)))
    modes = list(range(-kk, kk + 1))
    checks = report.setdefault("assertions", [])
    worst = 0.0
    for k in modes:
        r = reduction_residuals(sc.mode_data(k), lam)
        worst = max(worst, r.dirichlet, r.neumann, r.right_inverse)
    checks.append(_assertion("reduction identities", worst, TOL["reduction_residual"],
                             worst <= TOL["reduction_residual"]))
    res = assemble_resolvent(sc, lam, modes)
    grid = res.grid
    f = gaussian_section(grid, modes, sc.basis.fiber_dim, 2.0, 0.7, seed=int(run["seed"]))
    u = res.apply(f)
    fn = section_norm(f, grid)
    errs = []
    steps = (0.2, 0.1, 0.05)
    for h in steps:
        v = fd_oracle_solve(sc, lam, f, h, grid, modes)
        errs.append(section_norm(u - v, grid) / section_norm(u, grid))
        rows.append((h, errs[-1], ""))
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    report["resolvent"] = {"lambda": _num(lam), "relative_errors": errs, "rates": rates,
                           "assembly_residual": res.residual(u, f)}
    ok_rate = all(abs(r - 2.0) <= TOL["fd_rate"] for r in rates)
    checks.append(_assertion("finite-difference convergence rate 2", max(abs(r - 2) for r in rates),
                             TOL["fd_rate"], ok_rate))
    bound = max(e / (h**2 * fn) for e, h in zip(errs, steps))
    checks.append(_assertion("error below 5 h^2 |f|", bound, TOL["fd_error_factor"],
                             bound <= TOL["fd_error_factor"]))


_HANDLERS = {
    "check": cmd_check,
    "heat": cmd_heat,
    "fit": cmd_fit,
    "zeta": cmd_zeta,
    "eta": cmd_eta,
    "index": cmd_index,
    "stability": cmd_stability,
    "resolvent-verify": cmd_resolvent_verify,
}


# ---------------------------------------------------------------------------
# driver


def _write(out: Path, report: dict, rows: list) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["abscissa", "value_re", "value_im", "uncertainty"])
        for x, v, u in rows:
            if isinstance(v, dict):
                re, im = v["re"], v["im"]
            else:
                re, im = v, 0.0
            w.writerow([repr(float(x)), repr(float(re)), repr(float(im)), u])


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return _num(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def run_scenario(config: str, command: str, args: argparse.Namespace | None = None) -> int:
    """Execute one command on one scenario and write the report files."""
    args = args or argparse.Namespace()
    out = Path(getattr(args, "out", None) or ".")
    report: dict = {"command": command}
    rows: list = []
    try:
        cfg = apply_overrides(load_config(config), args)
        report["config"] = cfg
        report["config_hash"] = config_hash(cfg)
        report["seed"] = cfg["run"]["seed"]
        report["tolerances"] = TOL
        sc = build_scenario(cfg)
        report["gates"] = _gate(sc)
        if command != "check":
            _HANDLERS[command](sc, cfg["run"], report, rows)
        failed = [a["name"] for a in report.get("assertions", []) if not a["passed"]]
        if failed:
            raise IdentityViolation("; ".join(failed))
        code, status = 0, "ok"
    except AssumptionError as exc:
        code, status = 2, "assumption failure"
        report["assumption"] = exc.assumption
        report["error"] = str(exc)
    except (RefusalError, ContourError, SingularBoundaryError) as exc:
        code, status = 3, "numerical refusal"
        report["error"] = str(exc)
    except IdentityViolation as exc:
        code, status = 1, "identity violation"
        report["error"] = str(exc)
    report["status"] = status
    report["exit_code"] = code
    _write(out, report, rows)
    log.info("%s: %s (exit %d)", command, status, code)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectral-bvp-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML path or preset name")
    p.add_argument("--cutoff", type=int)
    p.add_argument("--t-min", dest="t_min", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--t-points", dest="t_points", type=int)
    p.add_argument("--precision", choices=("f64", "dd"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run_scenario(args.config, args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
