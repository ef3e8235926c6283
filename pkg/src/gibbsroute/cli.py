"""Command-line experiment runner.

Exit codes: 0 ok, 1 oracle mismatch, 2 config error, 3 budget refusal,
4 non-convergence under --strict.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .combinatorics import class_census, count_terms
from .config import ConfigError, ExperimentConfig, load_config
from .domain import PointConfig, sample_ppp
from .empirical import read_setting_csv, setting_distance, trajectory_setting_of, write_setting_csv
from .gibbs import BudgetExceeded, factorized_log_partition_beta0, n_user_options
from .mcmc import AnnealSchedule, default_c0, run_replicas, write_trace
from .minimizer import NotConverged, probe_fixed_points, solve_beta0

log = logging.getLogger("gibbsroute")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_BUDGET, EXIT_NONCONVERGED = 0, 1, 2, 3, 4

COMMANDS = ("sample", "mcmc", "anneal", "solve", "functionals", "count-check", "free-energy", "distance")


class Run:
    def __init__(self, cfg: ExperimentConfig, out: Path, strict: bool):
        self.cfg = cfg
        self.out = out
        self.strict = strict
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header: list, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_hash={self.cfg.hash}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        return path

    def points(self, seed: Optional[int] = None, lam: Optional[float] = None) -> PointConfig:
        seed = self.cfg["run.seed"] if seed is None else seed
        return sample_ppp(lam or self.cfg["model.lambda"], self.cfg.density(), seed=seed)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def cmd_sample(run: Run) -> int:
    pc = run.points()
    d = pc.window.d
    run.csv("points.csv", [f"x{j}" for j in range(d)], (list(map(float, p)) for p in pc.points))
    return EXIT_OK


def _chains(run: Run, anneal: bool) -> int:
    cfg = run.cfg
    pc = run.points()
    if pc.N == 0:
        raise ConfigError("the sampled user set is empty; raise model.lambda", cfg.source, "model.lambda")
    params = cfg.params()
    if anneal:
        c0 = cfg["mcmc.c0"] or default_c0(pc)
        schedule = AnnealSchedule.logarithmic(params, c0, cfg["mcmc.gamma_max"] or None)
    else:
        schedule = None
    results = run_replicas(pc, params, cfg["mcmc.steps"], cfg["run.seed"], cfg["mcmc.replicas"],
                           workers=cfg["mcmc.workers"], thin=cfg["mcmc.thin"], schedule=schedule,
                           sampler=cfg["mcmc.sampler"], burn_in=cfg["mcmc.burn_in"])
    name = "anneal" if anneal else "mcmc"
    rows = []
    for r, res in enumerate(results):
        write_trace(run.out / f"{name}_trace_{r}.ndjson", res.trace, cfg.hash)
        s = res.summary()
        rows.append([r, pc.N] + [s[k] for k in SUMMARY_FIELDS])
    run.csv(f"{name}_summary.csv", ["replica", "N"] + list(SUMMARY_FIELDS), rows)
    return EXIT_OK


SUMMARY_FIELDS = ("acceptance_rate", "mean_S", "mean_M", "best_S", "best_M", "best_objective",
                  "final_S", "final_M", "fallbacks")


def _solve(run: Run, grid):
    """Minimizer candidates on one grid, as (setting, value or objective, residual, converged)."""
    cfg = run.cfg
    params = cfg.params()
    mu = cfg.density().as_grid_measure(grid)
    if params.beta == 0:
        sol = solve_beta0(grid, mu, params)
        return mu, [(sol.setting(mu), sol.value, sol.residual, True)]
    results, spread = probe_fixed_points(grid, mu, params, starts=cfg["solver.starts"], seed=cfg["run.seed"],
                                         damping=cfg["solver.damping"], tol=cfg["solver.tol"],
                                         max_iter=cfg["solver.max_iter"])
    if spread > 1e-6:
        log.warning("distinct fixed points found on delta=%s (sup spread of C %.3g)", grid.delta, spread)
    out = []
    for r in results:
        if not r.converged and run.strict:
            raise NotConverged(f"fixed point did not converge on delta={grid.delta}: residual {r.state.residual:.3g}")
        from .variational import eval_functionals

        obj = eval_functionals(r.setting, mu, params, tol=1e-8).objective if r.converged else float("nan")
        out.append((r.setting, obj, r.state.residual, r.converged))
    return mu, out


def cmd_solve(run: Run) -> int:
    rows = []
    for gi, grid in enumerate(run.cfg.grids()):
        _, cands = _solve(run, grid)
        for ci, (setting, value, residual, conv) in enumerate(cands):
            write_setting_csv(run.out / f"minimizer_{gi}_{ci}.csv", setting, run.cfg.hash)
            rows.append([str(grid.delta), ci, value, residual, conv])
    run.csv("solve_summary.csv", ["delta", "candidate", "value", "residual", "converged"], rows)
    return EXIT_OK


def cmd_functionals(run: Run) -> int:
    from .variational import eval_functionals

    cfg = run.cfg
    params = cfg.params()
    rows = []
    fields = ["I", "I_alt", "S", "M", "J", "gamma", "beta", "objective"]
    if cfg["functionals.setting"]:
        grid = cfg.grids()[0]
        mu = cfg.density().as_grid_measure(grid)
        try:
            setting = read_setting_csv(cfg["functionals.setting"], grid)
        except OSError as exc:
            raise ConfigError(f"cannot read setting: {exc.strerror}", cfg["functionals.setting"],
                              "functionals.setting") from None
        settings = [(grid, mu, setting)]
    else:
        settings = []
        for grid in cfg.grids():
            mu, cands = _solve(run, grid)
            settings.extend((grid, mu, c[0]) for c in cands)
    for grid, mu, setting in settings:
        fv = eval_functionals(setting, mu, params, tol=1e-8).as_row()
        rows.append([str(grid.delta)] + [fv[f] for f in fields])
    run.csv("functionals.csv", ["delta"] + fields, rows)
    return EXIT_OK


def cmd_count_check(run: Run) -> int:
    cfg = run.cfg
    k_max = cfg["model.k_max"]
    rows, bad = [], 0
    for s in range(cfg["run.seeds"]):
        pc = run.points(cfg["run.seed"] + s)
        for grid in cfg.grids():
            budget = cfg["budget.enumeration"]
            census = class_census(pc, grid, k_max, True, budget)
            routes = class_census(pc, grid, k_max, False, budget)
            mis_J = sum(count_terms(census.settings[k]).J != c for k, c in census.counts.items())
            mis_K = sum(count_terms(routes.settings[k]).K != c for k, c in routes.counts.items())
            expected = n_user_options(pc.N, k_max) ** pc.N
            total = sum(census.counts.values())
            ok = mis_J == 0 and mis_K == 0 and total == expected
            bad += not ok
            rows.append([cfg["run.seed"] + s, str(grid.delta), pc.N, len(census.counts), total, expected,
                         mis_J, mis_K, ok])
    run.csv("count_check.csv", ["seed", "delta", "N", "classes", "total", "expected_total",
                                "mismatches_J", "mismatches_K", "ok"], rows)
    return EXIT_MISMATCH if bad else EXIT_OK


def cmd_free_energy(run: Run) -> int:
    cfg = run.cfg
    params = cfg.params()
    if params.beta != 0:
        raise ConfigError("free-energy compares against the beta = 0 variational formula; set model.beta = 0",
                          cfg.source, "model.beta")
    mu_c = cfg.density()
    variational = {}
    for grid in cfg.grids():
        variational[grid.delta] = -solve_beta0(grid, mu_c.as_grid_measure(grid), params, build_tensors=False).value
    rows = []
    for lam in cfg["free_energy.lambdas"]:
        logs = [factorized_log_partition_beta0(run.points(cfg["run.seed"] + s, lam), params)
                for s in range(cfg["run.seeds"])]
        for delta, v in variational.items():
            gaps = [abs(x - v) for x in logs]
            rows.append([lam, str(delta), cfg["run.seeds"], float(np.mean(logs)), v, float(np.mean(gaps))])
    run.csv("free_energy.csv", ["lambda", "delta", "seeds", "mean_log_partition", "variational", "mean_gap"],
            rows)
    return EXIT_OK


def cmd_distance(run: Run) -> int:
    cfg = run.cfg
    params = cfg.params()
    pc = run.points()
    if pc.N == 0:
        raise ConfigError("the sampled user set is empty; raise model.lambda", cfg.source, "model.lambda")
    res = run_replicas(pc, params, cfg["mcmc.steps"], cfg["run.seed"], 1, thin=cfg["mcmc.thin"],
                       sampler=cfg["mcmc.sampler"], burn_in=cfg["mcmc.burn_in"])[0]
    rows = []
    for grid in cfg.grids():
        emp = trajectory_setting_of(res.final_config, pc, grid, params.k_max)
        _, cands = _solve(run, grid)
        for ci, (setting, *_rest) in enumerate(cands):
            d = setting_distance(emp, setting)
            rows.append([str(grid.delta), ci, pc.N, d.d0, sum(d.d_nu), d.d0 - sum(d.d_nu)])
    run.csv("distance.csv", ["delta", "candidate", "N", "d0", "d_nu", "d_mum"], rows)
    return EXIT_OK


HANDLERS = {
    "sample": cmd_sample,
    "mcmc": lambda run: _chains(run, anneal=False),
    "anneal": lambda run: _chains(run, anneal=True),
    "solve": cmd_solve,
    "functionals": cmd_functionals,
    "count-check": cmd_count_check,
    "free-energy": cmd_free_energy,
    "distance": cmd_distance,
}


def _error(kind: str, message: str, code: int, **extra) -> int:
    record = {"error": kind, "message": message, "exit_code": code}
    record.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(record), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbsroute", description="Gibbsian multihop routeing experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", help="override output.dir")
    p.add_argument("--strict", action="store_true", help="treat solver non-convergence as an error")
    return p


def run_experiment(config_path, command: str, seed: Optional[int] = None, out: Optional[str] = None,
                   strict: bool = False) -> int:
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.with_seed(seed)
        run = Run(cfg, Path(out or cfg["output.dir"]), strict)
        return HANDLERS[command](run)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG, path=exc.path, key=exc.key)
    except BudgetExceeded as exc:
        return _error("budget", str(exc), EXIT_BUDGET, path=str(config_path))
    except NotConverged as exc:
        return _error("nonconvergence", str(exc), EXIT_NONCONVERGED, path=str(config_path))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return run_experiment(args.config, args.command, args.seed, args.out, args.strict)


if __name__ == "__main__":
    sys.exit(main())
