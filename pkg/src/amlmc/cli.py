"""Command-line entry point.

Subcommands:
  estimate            run a single antithetic MLMC estimate from an epsilon target
  rates <kind>        run a rate-verification experiment and emit CSV
  schedule            print the level schedule for an epsilon target
  selftest            run the structural invariant suite
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, mlmc
from .errors import ConfigurationError
from .measure import get_functional, tree_sum
from .models import mean_field_ou
from .paths import SeedKey, coarsen, draw_increments, draw_initials
from .simulate import antithetic_triple_euler, antithetic_triple_exact, evolve_euler, \
    exact_linear_terminal


def _load_or_default(args, kind: str) -> harness.ExperimentConfig:
    if args.config:
        cfg = harness.load_config(args.config)
        if cfg.kind != kind:
            raise ConfigurationError(
                f"config kind {cfg.kind!r} does not match requested {kind!r}"
            )
    else:
        cfg = harness.default_config(kind)
    if args.seed is not None:
        cfg = harness.config_from_dict({**cfg.as_dict(), "seed": args.seed})
    return cfg


def _cmd_schedule(args) -> int:
    flavor = args.flavor
    if flavor == "euler":
        sched = mlmc.schedule_from_epsilon(args.epsilon, args.T)
    else:
        sched = mlmc.schedule_from_epsilon_exact(args.epsilon, args.T)
    print(f"epsilon={args.epsilon} T={args.T} flavor={flavor} L={sched.L}")
    print("level,n_particles,h,m_clouds")
    for lv in sched.levels:
        print(f"{lv.ell},{lv.n_particles},{lv.h:.17g},{lv.m_clouds}")
    return 0


def _cmd_estimate(args) -> int:
    cfg = _load_or_default(args, "estimate")
    report, sched = harness.run_estimate(cfg, threads=args.threads)
    model = cfg.build_model()
    phi = cfg.build_functional()
    print(f"estimator={cfg.estimator} epsilon={cfg.epsilon} L={sched.L} seed={cfg.seed}")
    print(f"estimate={report.estimate:.17g}")
    print(f"cost_interactions={report.cost_interactions}")
    if model.analytic is not None:
        try:
            exact = model.analytic.phi_exact(phi, cfg.horizon)
            print(f"reference={exact:.17g} abs_error={abs(report.estimate - exact):.17g}")
        except Exception:
            pass
    for ls in report.per_level:
        var = "" if ls.variance is None else f"{ls.variance:.17g}"
        print(f"level {ls.ell}: M={ls.m_clouds} mean={ls.mean:.17g} var={var}")
    if args.out:
        rows = tuple(
            (ls.ell, ls.m_clouds, ls.mean, 0.0 if ls.variance is None else ls.variance)
            for ls in report.per_level
        )
        result = harness.ExperimentResult(
            kind="estimate",
            columns=("level", "m_clouds", "mean", "variance"),
            rows=rows, fits={}, flags={}, config=cfg,
        )
        path = harness.write_result(result, args.out)
        print(f"wrote {path}")
    return 0


def _cmd_rates(args) -> int:
    cfg = _load_or_default(args, args.kind)
    result = harness.run_experiment(cfg, threads=args.threads)
    for name, fit in result.fits.items():
        print(f"fit {name}: slope={fit.slope:.4f} stderr={fit.stderr_slope:.4f}")
    for name, value in result.flags.items():
        print(f"flag {name}: {value}")
    if args.out:
        path = harness.write_result(result, args.out)
        print(f"wrote {path}")
    else:
        print(",".join(result.columns))
        for row in result.rows:
            print(",".join(harness._fmt(v) for v in row))
    return 0


def _selftest_checks(seed: int):
    model = mean_field_ou(alpha=1.0, sigma=1.0)
    T = 1.0

    key = SeedKey(master=seed, level=3, cloud=5)
    triple = antithetic_triple_euler(model, 8, 16, T, key)
    xi = draw_initials(model, 16, key)
    table = draw_increments(16, 16, T / 16, 1, key)
    ctab = coarsen(table)
    direct1 = evolve_euler(model, xi[:8], ctab.restrict(0, 8))
    direct2 = evolve_euler(model, xi[8:], ctab.restrict(8, 16))
    yield "euler half coupling identity", (
        np.array_equal(triple.half1.states, direct1)
        and np.array_equal(triple.half2.states, direct2)
    )

    triple_x = antithetic_triple_exact(model, 8, T, key)
    direct = exact_linear_terminal(model, 8, T, key)
    yield "exact half coupling identity", np.array_equal(
        triple_x.half1.states, direct.states
    )

    sched = mlmc.schedule_from_epsilon(0.1, T)
    yield "epsilon schedule closed form", (
        sched.L == 4 and [lv.m_clouds for lv in sched.levels] == [2732, 483, 86, 16, 3]
    )

    phi = get_functional("cos_mean")
    sched_small = mlmc.manual_schedule([64, 16, 4], T=T)
    rep1 = mlmc.run_amlmc_particles_euler(model, phi, sched_small, seed, threads=1)
    rep4 = mlmc.run_amlmc_particles_euler(model, phi, sched_small, seed, threads=4)
    yield "thread-count invariance", (
        rep1.estimate == rep4.estimate and rep1.per_level == rep4.per_level
        and rep1.cost_interactions == rep4.cost_interactions
    )

    linear = get_functional("linear_mean")
    rep = mlmc.run_amlmc_iid(model.initial_law, linear, sched_small, seed)
    yield "linear antithetic corrections vanish", all(
        ls.mean == 0.0 and (ls.variance in (None, 0.0)) for ls in rep.per_level[1:]
    )

    fine = draw_increments(4, 8, 0.125, 1, key)
    total_f = tree_sum(fine.dW)
    total_c = tree_sum(coarsen(fine).dW)
    yield "coarsening preserves totals", np.array_equal(total_f, total_c)

    big = draw_initials(model, 12, key)
    small = draw_initials(model, 5, key)
    yield "particle sub-sampling identity", np.array_equal(big[:5], small)


def _cmd_selftest(args) -> int:
    failures = 0
    for name, ok in _selftest_checks(args.seed if args.seed is not None else 0):
        print(f"{'PASS' if ok else 'FAIL'}: {name}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amlmc",
        description="Antithetic multilevel Monte Carlo engine and rate-verification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed (u64, default 0)")
        p.add_argument("--out", default=None, help="output directory for CSV + metadata")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (wall time only; results are identical)")

    p_est = sub.add_parser("estimate", help="single antithetic MLMC run")
    common(p_est)

    p_rates = sub.add_parser("rates", help="rate-verification experiment")
    p_rates.add_argument("kind", choices=[k for k in harness.EXPERIMENT_KINDS if k != "estimate"])
    common(p_rates)

    p_sched = sub.add_parser("schedule", help="print the level schedule for epsilon")
    p_sched.add_argument("--epsilon", type=float, required=True)
    p_sched.add_argument("--T", type=float, default=1.0)
    p_sched.add_argument("--flavor", choices=("euler", "exact"), default="euler")

    p_self = sub.add_parser("selftest", help="run the structural invariant suite")
    p_self.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "schedule":
            return _cmd_schedule(args)
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "rates":
            return _cmd_rates(args)
        if args.command == "selftest":
            return _cmd_selftest(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
