"""Command-line front end: ``regensim <subcommand> --config run.yaml``.

Exit status: 0 success, 2 invalid configuration or arguments, 3 numerical
failure, 4 failed ``--assert`` checks.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import report
from .concentration import FnParams, TwoDepSpec, fn_bound_explicit, fn_empirical
from .config import (
    SEED_ENV,
    RunConfig,
    build_lyapunov,
    build_model,
    build_phi,
    load_config,
    parse_functions,
)
from .errors import ConfigError, DomainError, RegenSimError, UnsupportedModelError
from .estimators import (
    cycle_moment,
    deviation_study,
    estimate_mu,
    harvest_cycles,
    hitting_moment_check,
    regen_moment_envelope,
    time_average,
)
from .functions import BoundedFunction
from .models import JumpSdeModel, generator_value, verify_drift
from .simulation import mc_generator_estimate, replica_seeds, sample_path
from .splitting import compute_minorization

log = logging.getLogger("regensim")

SUBCOMMANDS = ("drift-check", "minorize", "simulate", "regen-stats", "deviation", "fuknagaev")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 2, 3, 4

MINORIZATION_TOL = -1e-10


class Result:
    """Output of one subcommand: CSV tables, a JSON summary and the assert verdict."""

    def __init__(self, summary, tables, passed):
        self.summary = summary
        self.tables = tables  # name -> (header, rows)
        self.passed = passed


def _minorization(cfg: RunConfig, model):
    s = cfg.split
    return compute_minorization(model, s.c_radius, s.window, s.grid, s.c_grid, s.alpha_cap)


def run_drift_check(cfg: RunConfig, model) -> Result:
    exp = cfg.experiment.drift_check
    phi = build_phi(cfg, model)
    V = build_lyapunov(cfg)
    rep = verify_drift(model, phi, V, exp.region, exp.n_grid)
    summary = {
        "worst_margin": rep.worst_margin,
        "m0": rep.m0,
        "b_hat": rep.b_hat,
        "p_order": phi.p_order,
        "phi_c": phi.c,
        "phi_exponent": phi.phi_exponent,
    }
    checks = {"tail_margins_nonnegative": rep.m0 is not None}
    if exp.expected_margin == "abs_minus_one":
        err = float(np.max(np.abs(rep.margin - (np.abs(rep.x) - 1.0))))
        summary["expected_margin_error"] = err
        checks["expected_margin"] = err <= 1e-12
    if exp.hitting is not None:
        h = exp.hitting
        if rep.m0 is None or rep.b_hat is None:
            raise DomainError("hitting check needs a drift set B: no radius with nonnegative tail margins")
        common = dict(step=cfg.euler.step, max_time=h.max_time, seed=cfg.seed)
        rows = hitting_moment_check(model, rep.m0, h.delta, h.x_grid, V, phi, rep.b_hat, h.replicas, **common)
        halved = hitting_moment_check(model, rep.m0, h.delta, h.x_grid, V, phi, rep.b_hat, h.replicas,
                                      v_scale=0.5, b_scale=0.5, **common)
        zeroed = hitting_moment_check(model, rep.m0, h.delta, h.x_grid, V, phi, rep.b_hat, h.replicas,
                                      v_scale=0.0, b_scale=0.0, **common)
        as_dict = lambda rs: [vars(r) for r in rs]
        summary["hitting"] = as_dict(rows)
        summary["hitting_halved_control"] = as_dict(halved)
        summary["hitting_zero_control"] = as_dict(zeroed)
        checks["hitting_bound"] = all(r.passed for r in rows)
        checks["halved_control_fails"] = not all(r.passed for r in halved)
        checks["zero_control_fails"] = not all(r.passed for r in zeroed)
    if exp.generator_check is not None:
        if not isinstance(model, JumpSdeModel):
            raise UnsupportedModelError("generator_check applies to the jump SDE model")
        g = exp.generator_check
        out = []
        for k, x in enumerate(g.x_grid):
            exact = float(generator_value(model, V, x))
            est, se = mc_generator_estimate(model, V, x, g.h, g.samples, seed=int(replica_seeds(cfg.seed, 8, k, k + 1)[0]))
            out.append({"x": x, "quadrature": exact, "mc": est, "se": se,
                        "passed": abs(exact - est) <= 5 * g.h + 3 * se})
        summary["generator_check"] = out
        checks["generator_check"] = all(r["passed"] for r in out)
    summary["checks"] = checks
    rows = list(rep.rows())
    return Result(summary, {"drift-check": (["x", "AV", "phiV", "margin"], rows)}, all(checks.values()))


def run_minorize(cfg: RunConfig, model) -> Result:
    mz = _minorization(cfg, model)
    worst = mz.verify(n_x=64)
    summary = {
        "alpha": mz.alpha,
        "alpha_raw": mz.alpha_raw,
        "c_radius": mz.c_radius,
        "window": mz.window,
        "nu_grid": mz.nu_grid,
        "nu_values": mz.nu_values,
        "worst_violation": worst,
    }
    rows = list(zip(mz.nu_grid, mz.nu_values))
    return Result(summary, {"minorize": (["y", "nu"], rows)}, worst >= MINORIZATION_TOL)


def run_simulate(cfg: RunConfig, model) -> Result:
    exp = cfg.experiment.simulate
    step = cfg.euler.step
    rows = []
    finals = []
    for i in range(cfg.replicas):
        seed_i = int(replica_seeds(cfg.seed, 9, i, i + 1)[0])
        path = sample_path(model, exp.x0, exp.horizon, step, seed=seed_i)
        finals.append(path.states[-1])
        for t, x in zip(path.times[:: exp.every], path.states[:: exp.every]):
            rows.append((i, t, x))
    finals = np.asarray(finals, dtype=float)
    summary = {
        "horizon": exp.horizon,
        "step": step,
        "x0": exp.x0,
        "final_mean": float(finals.mean()),
        "final_var": float(finals.var(ddof=1)) if len(finals) > 1 else None,
    }
    return Result(summary, {"simulate": (["replica", "t", "x"], rows)}, True)


def _chi_square_geometric(counts, alpha):
    """Pearson chi-square of ``counts`` against Geometric(alpha) on {1, 2, ...}."""
    counts = np.asarray(counts)
    n = len(counts)
    k_max = 1
    while n * alpha * (1 - alpha) ** k_max >= 5.0:
        k_max += 1
    obs = np.array([np.count_nonzero(counts == k) for k in range(1, k_max)] + [np.count_nonzero(counts >= k_max)])
    probs = np.array([alpha * (1 - alpha) ** (k - 1) for k in range(1, k_max)] + [(1 - alpha) ** (k_max - 1)])
    res = stats.chisquare(obs, n * probs)
    return float(res.statistic), float(res.pvalue)


def run_regen_stats(cfg: RunConfig, model) -> Result:
    exp = cfg.experiment.regen_stats
    step = cfg.euler.step
    fs = parse_functions(exp.functions)
    mz = _minorization(cfg, model)
    phi = build_phi(cfg, model) if cfg.phi is not None or cfg.model.kind != "ou" else None
    rate = phi.rate() if phi is not None else None
    cs = harvest_cycles(model, mz, fs, rate, exp.horizon, cfg.replicas, cfg.seed, step, exp.x0)
    ta = time_average(model, fs, exp.horizon, max(cfg.replicas, 2), cfg.seed, step, exp.x0)
    refs = exp.reference or [None] * len(fs)
    tols = exp.tolerance or [None] * len(fs)
    if len(refs) != len(fs) or len(tols) != len(fs):
        raise ConfigError("reference and tolerance lists must match functions", key="experiment.regen_stats")
    checks = {}
    per_f = []
    rows = []
    for j, f in enumerate(fs):
        est = estimate_mu(cs, j)
        ta_mean = float(ta[:, j].mean())
        ta_se = float(ta[:, j].std(ddof=1) / math.sqrt(len(ta)))
        combined = math.sqrt(est.se_mu**2 + ta_se**2)
        agree = abs(est.mu_f - ta_mean) <= 3 * combined
        entry = {"function": str(f), "mu_f": est.mu_f, "se_mu": est.se_mu, "time_average": ta_mean,
                 "time_average_se": ta_se, "agree_3se": agree, "reference": refs[j]}
        checks[f"time_average_agrees[{f}]"] = agree
        if refs[j] is not None and tols[j] is not None:
            ok = abs(est.mu_f - refs[j]) < tols[j]
            entry["within_tolerance"] = ok
            checks[f"reference[{f}]"] = ok
        per_f.append(entry)
        rows.append((str(f), est.mu_f, est.se_mu, est.ell, est.se_ell, est.n_cycles, ta_mean, ta_se))
    est0 = estimate_mu(cs, 0)
    moment, moment_se = cycle_moment(cs, exp.moment_p)
    ks_gap = stats.kstest(cs.skeleton_gaps, "expon")
    ks_nu = stats.kstest(cs.start_states, mz.nu_cdf)
    chi2, chi_p = _chi_square_geometric(cs.c_visits, mz.alpha)
    checks["skeleton_gaps_exp1"] = ks_gap.pvalue > 0.01
    checks["post_regeneration_law_nu"] = ks_nu.statistic < 0.03
    checks["c_visits_geometric"] = chi_p > 0.01
    summary = {
        "ell": est0.ell,
        "se_ell": est0.se_ell,
        "mu_f": est0.mu_f,
        "functions": per_f,
        "n_cycles": cs.n_cycles,
        "alpha": mz.alpha,
        "cycle_moment": {"p": exp.moment_p, "value": moment, "se": moment_se},
        "skeleton_gap_ks_pvalue": float(ks_gap.pvalue),
        "post_regeneration_ks_distance": float(ks_nu.statistic),
        "c_visit_chi2": chi2,
        "c_visit_chi2_pvalue": chi_p,
        "slope": None,
        "p_order": phi.p_order if phi is not None else None,
    }
    tables = {"regen-stats": (["function", "mu_f", "se_mu", "ell", "se_ell", "n_cycles", "time_average",
                               "time_average_se"], rows)}
    if exp.envelope is not None:
        if rate is None:
            raise ConfigError("the envelope needs a phi block", key="phi")
        env = regen_moment_envelope(model, mz, rate, exp.envelope.x_grid, build_lyapunov(cfg),
                                    exp.envelope.replicas, cfg.seed, step)
        summary["slope"] = env.slope
        summary["envelope"] = {"intercept": env.intercept, "r2": env.r2, "slope": env.slope}
        checks["envelope_fit"] = env.r2 > exp.envelope.r2_min and env.slope > 0
        tables["envelope"] = (["x", "V", "mean", "se"], list(zip(env.x, env.v, env.mean, env.se)))
    summary["checks"] = checks
    return Result(summary, tables, all(checks.values()))


def run_deviation(cfg: RunConfig, model) -> Result:
    exp = cfg.experiment.deviation
    f = BoundedFunction.parse(exp.function) if exp.function else None
    phi = build_phi(cfg, model)
    p = phi.p_order
    mz = _minorization(cfg, model) if exp.counting else None
    study = deviation_study(model, mz, f, exp.epsilon, exp.t_grid, cfg.replicas, cfg.seed, cfg.euler.step,
                            exp.x0, p_order=p, epsilon_n=exp.epsilon_n,
                            calibration_replicas=exp.calibration_replicas)
    checks = {}
    tables = {}
    summary = {"ell": study.ell, "mu_f": study.mu_f, "slope": None, "nt_slope": None, "p_order": p}
    if study.additive is not None:
        r = study.additive
        summary["slope"] = r.fitted_slope
        checks["slope"] = bool(r.fitted_slope <= exp.slope_max)
        tables["deviation"] = (["t", "epsilon", "p_hat", "ci_lo", "ci_hi"], list(r.rows()))
    if study.counting is not None:
        r = study.counting
        limit = exp.nt_slope_max if exp.nt_slope_max is not None else -(p - 1.0) + 0.4
        summary["nt_slope"] = r.fitted_slope
        summary["nt_slope_max"] = limit
        checks["nt_slope"] = bool(r.fitted_slope <= limit)
        tables["deviation_nt"] = (["t", "epsilon", "p_hat", "ci_lo", "ci_hi"], list(r.rows()))
    summary["slope_max"] = exp.slope_max
    summary["checks"] = checks
    return Result(summary, tables, all(checks.values()))


def run_fuknagaev(cfg: RunConfig, model=None) -> Result:
    exp = cfg.experiment.fuknagaev
    spec = TwoDepSpec(exp.law, exp.dof, exp.half_width, tuple(exp.weights))
    m_p = spec.m_p(exp.p)
    emp = fn_empirical(spec, exp.n, exp.lambda_grid, cfg.replicas, cfg.seed)
    bounds = [fn_bound_explicit(FnParams(exp.n, lam, exp.p, spec.sigma2, m_p)) for lam in exp.lambda_grid]
    ci_hi = emp.ci_hi
    dominated = bool(np.all(ci_hi <= np.asarray(bounds)))
    summary = {"n": exp.n, "p": exp.p, "sigma2": spec.sigma2, "m_p": m_p, "dominated": dominated}
    rows = list(zip(emp.lam, emp.probabilities, ci_hi, bounds))
    return Result(summary, {"fuknagaev": (["lambda", "empirical", "ci_hi", "bound_explicit"], rows)}, dominated)


RUNNERS = {
    "drift-check": run_drift_check,
    "minorize": run_minorize,
    "simulate": run_simulate,
    "regen-stats": run_regen_stats,
    "deviation": run_deviation,
    "fuknagaev": run_fuknagaev,
}


def resolve_seed(flag_seed, cfg_seed: int) -> int:
    """Seed precedence: command-line flag, then ``REGENSIM_SEED``, then the config."""
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}", key="seed") from exc
    return cfg_seed


def run(subcommand: str, cfg: RunConfig) -> Result:
    if subcommand not in RUNNERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    model = build_model(cfg) if subcommand != "fuknagaev" else None
    result = RUNNERS[subcommand](cfg, model)
    result.summary.update({"subcommand": subcommand, "seed": cfg.seed, "replicas": cfg.replicas,
                           "passed": bool(result.passed)})
    result.summary = report.validate_summary(subcommand, result.summary)
    return result


def write_outputs(result: Result, subcommand: str, out_dir: Path, fmt: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        for name, (header, rows) in result.tables.items():
            path = out_dir / f"{name}.csv"
            report.write_csv(path, header, rows)
            written.append(path)
        path = out_dir / f"{subcommand}.json"
        report.write_json(path, result.summary)
    else:
        full = dict(result.summary)
        full["tables"] = {name: {"header": h, "rows": [list(r) for r in rows]}
                          for name, (h, rows) in result.tables.items()}
        path = out_dir / f"{subcommand}.json"
        report.write_json(path, full)
    written.append(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regensim", description="Regenerative simulation experiments.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="base seed (overrides env and config)")
    parser.add_argument("--replicas", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None, help="maximum worker threads")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--format", choices=("csv", "json"), default=None)
    parser.add_argument("--assert", dest="do_assert", action="store_true",
                        help="exit with status 4 when the subcommand's checks fail")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        updates = {"seed": resolve_seed(args.seed, cfg.seed)}
        if args.replicas is not None:
            updates["replicas"] = args.replicas
        cfg = cfg.model_validate({**cfg.model_dump(), **updates})
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1", key="threads")
            import numba

            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        out_dir = Path(args.out or cfg.output.dir)
        fmt = args.format or cfg.output.format
        result = run(args.subcommand, cfg)
        for path in write_outputs(result, args.subcommand, out_dir, fmt):
            log.info("wrote %s", path)
    except (ConfigError, DomainError, UnsupportedModelError) as exc:
        print(f"regensim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegenSimError as exc:
        print(f"regensim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # pydantic re-validation
        from pydantic import ValidationError

        if isinstance(exc, ValidationError):
            err = exc.errors()[0]
            print(f"regensim: error: invalid value for {'.'.join(map(str, err['loc']))}: {err['msg']}",
                  file=sys.stderr)
            return EXIT_CONFIG
        raise
    if args.do_assert and not result.passed:
        failed = [k for k, v in result.summary.get("checks", {}).items() if not v]
        print(f"regensim: assertion failed: {', '.join(failed) or args.subcommand}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
