"""Command-line entry point.

Every subcommand prints one JSON object (sorted keys) on standard output and
writes CSV tables under ``--out`` when given.  Exit codes: 0 success, 1 usage
or configuration error, 2 deterministic assertion failure, 3 statistical
rejection.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, rng
from .config import ParseError, ValidationError, config_hash, parse_config
from .environment import classify_regime, compute_delta, environment_issues, rho_vector

EXIT_OK, EXIT_USAGE, EXIT_ASSERT, EXIT_STAT = 0, 1, 2, 3
ALPHA = 1e-3

STOCHASTIC = {"simulate-walk", "simulate-z", "speed", "markovian-check", "gw-survival",
              "couple-check", "feq-check", "moment-probe"}


class UsageError(Exception):
    pass


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None,
    tuple keys to comma strings."""
    if isinstance(x, dict):
        return {(",".join(map(str, k)) if isinstance(k, tuple) else str(k)): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Fraction):
        return str(x)
    return x


def _ints(text):
    return tuple(int(x) for x in text.split(",")) if text else None


def _floats(text):
    return [float(x) for x in text.split(",")] if text else None


def _out_path(args, name):
    if not args.out:
        return None
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _budgets(args):
    keys = ["replicas", "steps", "iterations", "horizon", "grid", "N", "K", "level"]
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


# --- subcommands ----------------------------------------------------------------


def cmd_validate(env, args):
    issues = environment_issues(env)
    return {"valid": not issues, "issues": [str(i) for i in issues]}, EXIT_OK


def cmd_delta(env, args):
    d = compute_delta(env)
    return {"delta": float(d), "delta_exact": str(d), "regime": classify_regime(d).label}, EXIT_OK


def cmd_spectral(env, args):
    from .emigration import TableOffspring, WOffspring
    from .spectral import char_poly_check, perron_pair, read_matrix_csv, sigma_beta_theta, w_right_vector

    if args.matrix:
        m = read_matrix_csv(args.matrix)
        s = perron_pair(m)
        return {"summary": s.as_dict(), "critical": s.critical}, EXIT_OK
    rho = rho_vector(env)
    off = WOffspring(rho)
    s = perron_pair(off.mean_matrix())
    N = args.N or (1,) * env.L
    rep = sigma_beta_theta(off, N, s.u, s.v)
    s.beta, s.theta = rep.beta, rep.theta
    cp = char_poly_check(rho)
    closed_u = w_right_vector(env.L)
    ok = (s.right_residual <= 1e-10 and s.left_residual <= 1e-10 and cp.ok
          and float(np.abs(s.u - closed_u).max()) <= 1e-10 and s.second_modulus < 1 - 1e-9)
    out = {"rho": [str(r) for r in rho], "N": list(N), "summary": s.as_dict(),
           "char_poly": cp.as_dict(), "u_closed_form_error": float(np.abs(s.u - closed_u).max()),
           "critical": s.critical, "ok": ok}
    return out, EXIT_OK if ok else EXIT_ASSERT


def cmd_simulate_walk(env, args):
    from .walk import (check_hitting_identity, run_to_level, simulate_profiles, write_profile_csv,
                       write_trajectory_csv)

    n = args.level or 50
    horizon = args.horizon or 10**8
    T, prof, resid, trunc = simulate_profiles(env, n, args.replicas or 1000, args.seed, horizon,
                                              args.threads, experiment="cli-walk")
    done = ~trunc
    rec = run_to_level(env, n, horizon, args.seed, 0, record_path=True, experiment="cli-walk-path")
    p = _out_path(args, "trajectory.csv")
    if p:
        with open(p, "w", newline="") as fh:
            write_trajectory_csv(rec.path, fh)
        with open(_out_path(args, "profile.csv"), "w", newline="") as fh:
            write_profile_csv(rec.profile, fh)
    max_resid = int(np.abs(resid[done]).max()) if done.any() else 0
    out = {"level": n, "replicas": int(T.size), "truncated": int(trunc.sum()),
           "mean_hitting_time": float(T[done].mean()) if done.any() else None,
           "identity_max_abs_residual": max_resid,
           "example": {"hitting_time": rec.hitting_times.get(n), "steps": rec.steps,
                       "identity_residual": check_hitting_identity(rec)[1] if not rec.truncated else None}}
    return out, EXIT_OK if max_resid == 0 else EXIT_ASSERT


def cmd_simulate_z(env, args):
    from .branching import estimate_stationary, write_histogram_csv

    st = estimate_stationary(env, args.iterations or 10**6, args.seed)
    p = _out_path(args, "histogram.csv")
    if p:
        with open(p, "w", newline="") as fh:
            write_histogram_csv(st, env.L, fh)
    return st.as_dict(), EXIT_OK


def cmd_speed(env, args):
    from .branching import estimate_stationary
    from .walk import estimate_speed_direct

    n = args.steps or 10**6
    d = estimate_speed_direct(env, n, args.replicas or 200, args.seed, args.threads,
                              checkpoints=[max(n // 10, 1)], experiment="cli-speed")
    out = {"v_direct": d.estimate, "v_direct_se": d.stderr, "direct": d.as_dict(),
           "regime": classify_regime(compute_delta(env)).label}
    code = EXIT_OK
    if compute_delta(env) > 2:
        st = estimate_stationary(env, args.iterations or 10**7, args.seed, experiment="cli-speed-z")
        comb = math.hypot(d.stderr, st.speed_formula_se)
        gap = abs(d.estimate - st.speed_formula_value)
        agree = gap <= 3 * comb
        out.update({"v_formula": st.speed_formula_value, "v_formula_se": st.speed_formula_se,
                    "combined_se": comb, "difference": gap, "agree_within_3se": agree})
        code = EXIT_OK if agree else EXIT_STAT
    else:
        out["v_formula"] = None
        out["note"] = "E[Z_inf] is infinite for delta <= 2; only the direct estimate is reported"
    return out, code


def cmd_markovian_check(env, args):
    from .branching import backward_profile_vs_z_test

    levels = _ints(args.level_list) or (2, 3, 5)
    reports = [backward_profile_vs_z_test(env, n, args.replicas or 10**5, args.seed, args.threads,
                                          horizon=args.horizon)
               for n in levels]
    rejected = [r["n"] for r in reports if r["p_value"] < ALPHA]
    return {"alpha": ALPHA, "tests": reports, "rejected": rejected}, EXIT_STAT if rejected else EXIT_OK


def _w_config(env, args):
    from .emigration import EmigrationConfig, w_offspring_for

    off = w_offspring_for(env)
    N = args.N or (1,) * env.L
    K = args.K or N
    return EmigrationConfig(N, K, off)


def cmd_gw_survival(env, args):
    from .emigration import EmptyWindow, fit_survival_tail, survival_experiment
    from .spectral import perron_pair, sigma_beta_theta

    cfg = _w_config(env, args)
    tab = survival_experiment(cfg, args.horizon or 200, args.replicas or 10**6, args.seed, args.threads)
    p = _out_path(args, "survival.csv")
    if p:
        with open(p, "w", newline="") as fh:
            tab.write_csv(fh)
    s = perron_pair(cfg.offspring.mean_matrix())
    rep = sigma_beta_theta(cfg.offspring, cfg.N, s.u, s.v)
    out = {"N": list(cfg.N), "K": list(cfg.initial), "theta": rep.theta, "beta": rep.beta,
           "expected_exponent": 1 + rep.theta, "table": tab.as_dict()}
    try:
        out["fit"] = fit_survival_tail(tab).as_dict()
    except EmptyWindow as exc:
        out["fit"] = None
        out["fit_error"] = str(exc)
    return out, EXIT_OK


def cmd_kolmogorov(env, args):
    from .genfun import iterate_f, kolmogorov_check

    rho = rho_vector(env)
    n = args.steps or 10**5
    rep = kolmogorov_check(rho, n)
    it = iterate_f(rho, n)
    monotone = bool(np.all(np.diff(it.tail, axis=0) <= 0))
    out = rep.as_dict()
    out.update({"rho": [str(r) for r in rho], "tail_nonincreasing": monotone,
                "underflow_at": it.underflow_at})
    return out, EXIT_OK if monotone else EXIT_ASSERT


def cmd_gamma_fit(env, args):
    from .genfun import gamma_fit

    rho = rho_vector(env)
    N = args.N or (1,) * env.L
    rep = gamma_fit(rho, N, args.steps or 10**5)
    out = rep.as_dict()
    out["N"] = list(N)
    return out, EXIT_OK if rep.log_gamma_nondecreasing else EXIT_ASSERT


def cmd_couple_check(env, args):
    from .emigration import coupled_Z_W_run

    rep = coupled_Z_W_run(env, args.horizon or 500, args.replicas or 10**5, args.seed, args.threads,
                          raise_on_violation=False)
    return rep.as_dict(), EXIT_OK if rep.violations == 0 else EXIT_ASSERT


def cmd_feq_check(env, args):
    from .genfun import functional_equation_residual

    grid = _floats(args.grid) or [0.80, 0.85, 0.90, 0.95]
    rep = functional_equation_residual(env, grid, args.iterations or 10**6, args.replicas or 10**6,
                                       args.seed)
    p = _out_path(args, "feq.csv")
    if p:
        with open(p, "w", newline="") as fh:
            rep.write_csv(fh)
    bad = [e.s for e in rep.evaluations if abs(e.residual) > 3 * e.residual_se and e.residual != 0]
    out = rep.as_dict()
    out["rejected_s"] = bad
    return out, EXIT_STAT if bad else EXIT_OK


def cmd_moment_probe(env, args):
    from .emigration import moment_divergence_probe

    rep = moment_divergence_probe(env, args.kappa_max, args.iterations or 10**7, args.seed)
    return rep, EXIT_OK


COMMANDS = {
    "validate": cmd_validate, "delta": cmd_delta, "spectral": cmd_spectral,
    "simulate-walk": cmd_simulate_walk, "simulate-z": cmd_simulate_z, "speed": cmd_speed,
    "markovian-check": cmd_markovian_check, "gw-survival": cmd_gw_survival,
    "kolmogorov": cmd_kolmogorov, "gamma-fit": cmd_gamma_fit, "couple-check": cmd_couple_check,
    "feq-check": cmd_feq_check, "moment-probe": cmd_moment_probe,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="environment file, or one of ENV-A, ENV-B, ENV-C, ENV-DELTA2")
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--grid", help="comma-separated s values")
    common.add_argument("--N", type=_ints, help="comma-separated emigration vector")
    common.add_argument("--K", type=_ints, help="comma-separated initial vector")
    common.add_argument("--out", help="directory for CSV tables")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--level", type=int, help="target level for simulate-walk")
    common.add_argument("--levels", dest="level_list", help="comma-separated levels for markovian-check")
    common.add_argument("--matrix", help="mean-matrix CSV for spectral")
    common.add_argument("--kappa-max", type=int, default=3)
    p = argparse.ArgumentParser(prog="erwlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        for k in ("replicas", "steps", "iterations", "horizon", "threads", "level"):
            v = getattr(args, k)
            if v is not None and v <= 0:
                raise UsageError(f"--{k} must be positive")
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"{args.command} needs --seed")
        env = parse_config(args.config)
    except (UsageError, ParseError, ValidationError, OSError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, stdout, sort_keys=True)
        stdout.write("\n")
        return EXIT_USAGE
    body, code = COMMANDS[args.command](env, args)
    doc = {"command": args.command, "config_hash": config_hash(env), "environment": env.name,
           "seed": args.seed, "budgets": _budgets(args), "version": __version__,
           "rng": rng.ALGORITHM_ID, "result": body, "exit_code": code}
    json.dump(_clean(doc), stdout, sort_keys=True)
    stdout.write("\n")
    return code


def main(argv=None):
    sys.exit(run(argv))
