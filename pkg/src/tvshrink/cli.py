"""Command-line interface.

Subcommands: simulate, fit-garch, tv-adjust, estimate, scenario, grid,
esd-dump.  Options may come from a flat ``key=value`` config file via
``--config``; explicit flags override file values.  The worker count for
replicated runs is controlled by the ``TVSHRINK_WORKERS`` environment
variable.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bekk import BekkParams, SimConfig, simulate
from .experiments import (
    ScenarioConfig,
    emit_esd_dump,
    grid_to_csv,
    records_to_csv,
    run_grid,
    run_scenario,
    summarize_records,
    toeplitz_sigma,
)
from .garch import fit_garch, fit_garch_pooled
from .linalg import check_symmetric
from .panelio import read_panel, write_panel, write_panel_csv
from .shrinkage import TruncationRule, nls_estimate
from .tvadjust import TvAdjustConfig, default_mp, tv_adjust


def _load_config_file(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line (expected key=value): {line!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def _truncation(arg: str) -> TruncationRule:
    if arg == "auto":
        return TruncationRule("auto")
    return TruncationRule(float(arg))


def _mp_arg(value: str):
    return "auto" if value == "auto" else int(value)


def _cmd_simulate(args) -> int:
    sigma = toeplitz_sigma(args.p, args.rho)
    params = BekkParams(a=args.a, b=args.b, sigma_bar=sigma)
    cfg = SimConfig(seed=args.seed, n=args.n, burn_in=args.burn_in, emit_paired_iid=args.paired)
    panel = simulate(params, cfg)
    write_panel(args.out, panel)
    if args.csv:
        write_panel_csv(args.csv, panel)
    print(f"wrote panel p={panel.p} n={panel.n} seed={panel.seed} to {args.out}")
    return 0


def _cmd_fit_garch(args) -> int:
    panel = read_panel(args.panel)
    if args.pool_k > 1:
        fit = fit_garch_pooled(panel, k=args.pool_k, delta=args.delta, cap_c=args.cap_c, seed=args.seed)
    else:
        fit = fit_garch(panel.returns[args.coord], delta=args.delta, cap_c=args.cap_c)
    print(f"a_hat={fit.a_hat:.6f} b_hat={fit.b_hat:.6f} sigma_bar2_hat={fit.sigma_bar2_hat:.6f} "
          f"converged={fit.converged}")
    return 0


def _cmd_tv_adjust(args) -> int:
    panel = read_panel(args.panel)
    if args.a_hat is None or args.b_hat is None:
        fit = fit_garch_pooled(panel, k=args.pool_k, seed=args.seed)
        a_hat, b_hat = fit.a_hat, fit.b_hat
        print(f"pooled estimates: a_hat={a_hat:.6f} b_hat={b_hat:.6f}")
    else:
        a_hat, b_hat = args.a_hat, args.b_hat
    m_p = default_mp(panel.p) if args.mp == "auto" else int(args.mp)
    adj = tv_adjust(panel, TvAdjustConfig(m_p=m_p, a_hat=a_hat, b_hat=b_hat))
    np.savetxt(args.out, adj.covariance, delimiter=",", fmt="%.17g")
    print(f"wrote adjusted covariance ({panel.p}x{panel.p}, {adj.adjusted.shape[1]} columns averaged, "
          f"m_p={m_p}) to {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    cov = np.loadtxt(args.cov, delimiter=",", ndmin=2)
    cov = check_symmetric(cov)
    result, spectrum = nls_estimate(cov, args.y, _truncation(args.cap))
    np.savetxt(args.out, result.estimate, delimiter=",", fmt="%.17g")
    if args.spectrum_out:
        np.savetxt(args.spectrum_out, np.sort(spectrum.locations)[::-1], delimiter=",",
                   header="eigenvalue", comments="", fmt="%.17g")
    print(f"truncated {result.truncation_count} eigenvalues; inversion objective "
          f"{result.quest.objective:.3e} (converged={result.quest.converged}); wrote {args.out}")
    return 0


def _scenario_config(args) -> ScenarioConfig:
    return ScenarioConfig(
        p=args.p, n=args.n, rho=args.rho, a=args.a, b=args.b,
        replications=args.replications, seed=args.seed, m_p=_mp_arg(args.mp),
        pool_k=args.pool_k, use_true_ab=args.use_true_ab,
        truncation=_truncation(args.cap), burn_in=args.burn_in,
        with_nls=not args.no_nls, scenario_id=args.scenario_id,
    )


def _cmd_scenario(args) -> int:
    cfg = _scenario_config(args)
    records = run_scenario(cfg)
    os.makedirs(args.out, exist_ok=True)
    rec_path = os.path.join(args.out, "replications.csv")
    records_to_csv(records, rec_path)
    summary = summarize_records(records)
    sum_path = os.path.join(args.out, "summary.csv")
    with open(sum_path, "w") as fh:
        fh.write("metric,mean,sd,se\n")
        for name, stats in summary.items():
            fh.write(f"{name},{stats['mean']:.17g},{stats['sd']:.17g},{stats['se']:.17g}\n")
    for name, stats in summary.items():
        print(f"{name}: mean={stats['mean']:.6f} sd={stats['sd']:.6f} se={stats['se']:.6f}")
    print(f"wrote {rec_path} and {sum_path}")
    return 0


def _cmd_grid(args) -> int:
    cfg = _scenario_config(args)
    rows = run_grid(cfg, max_pair_sum=args.max_pair_sum)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "grid.csv")
    grid_to_csv(rows, path)
    print(f"wrote {len(rows)} grid rows to {path}")
    return 0


def _cmd_esd_dump(args) -> int:
    cfg = _scenario_config(args)
    paths = emit_esd_dump(cfg, args.out, replication=args.replication)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _add_scenario_args(sp) -> None:
    sp.add_argument("--p", type=int, default=100)
    sp.add_argument("--n", type=int, default=125)
    sp.add_argument("--rho", type=float, default=0.4)
    sp.add_argument("--a", type=float, default=0.05)
    sp.add_argument("--b", type=float, default=0.9)
    sp.add_argument("--replications", type=int, default=100)
    sp.add_argument("--seed", type=int, default=20231118)
    sp.add_argument("--mp", default="auto", help="lag count for the projection matrix, or 'auto'")
    sp.add_argument("--pool-k", type=int, default=10, help="coordinates pooled in the GARCH fit")
    sp.add_argument("--use-true-ab", action="store_true", help="inject the true (a, b) instead of estimating")
    sp.add_argument("--cap", default="auto", help="eigenvalue truncation level, or 'auto'")
    sp.add_argument("--burn-in", type=int, default=1000)
    sp.add_argument("--no-nls", action="store_true", help="skip the shrinkage metrics (eigenvalue distances only)")
    sp.add_argument("--scenario-id", default="")
    sp.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvshrink", description=__doc__)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate a BEKK panel to a binary file")
    sp.add_argument("--p", type=int, default=100)
    sp.add_argument("--n", type=int, default=125)
    sp.add_argument("--rho", type=float, default=0.4)
    sp.add_argument("--a", type=float, default=0.05)
    sp.add_argument("--b", type=float, default=0.9)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--burn-in", type=int, default=1000)
    sp.add_argument("--paired", action="store_true", help="emit the paired i.i.d. panel")
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv", default=None, help="also write the returns as CSV (one column per step)")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("fit-garch", help="estimate (a, b) from a stored panel")
    sp.add_argument("--panel", required=True)
    sp.add_argument("--coord", type=int, default=0)
    sp.add_argument("--pool-k", type=int, default=1)
    sp.add_argument("--delta", type=float, default=0.01)
    sp.add_argument("--cap-c", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_fit_garch)

    sp = sub.add_parser("tv-adjust", help="build the adjusted sample covariance from a panel")
    sp.add_argument("--panel", required=True)
    sp.add_argument("--mp", default="auto")
    sp.add_argument("--a-hat", type=float, default=None)
    sp.add_argument("--b-hat", type=float, default=None)
    sp.add_argument("--pool-k", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_tv_adjust)

    sp = sub.add_parser("estimate", help="nonlinear shrinkage from a covariance CSV")
    sp.add_argument("--cov", required=True)
    sp.add_argument("--y", type=float, required=True, help="concentration ratio p/n of the source")
    sp.add_argument("--cap", default="auto")
    sp.add_argument("--out", required=True)
    sp.add_argument("--spectrum-out", default=None)
    sp.set_defaults(func=_cmd_estimate)

    sp = sub.add_parser("scenario", help="replicated Monte Carlo run with CSV output")
    _add_scenario_args(sp)
    sp.set_defaults(func=_cmd_scenario)

    sp = sub.add_parser("grid", help="scenario means over an (a, b) grid")
    _add_scenario_args(sp)
    sp.add_argument("--max-pair-sum", type=float, default=0.95)
    sp.set_defaults(func=_cmd_grid)

    sp = sub.add_parser("esd-dump", help="eigenvalue dumps of one replication for plotting")
    _add_scenario_args(sp)
    sp.add_argument("--replication", type=int, default=0)
    sp.set_defaults(func=_cmd_esd_dump)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        # config values become defaults; explicit flags keep priority because
        # the reparse sees them again on the command line
        file_vals = _load_config_file(args.config)
        converted = {}
        for key, raw in file_vals.items():
            attr = key.replace("-", "_")
            default = parser.get_default(attr)
            if default is None and not hasattr(args, attr):
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(default, bool):
                converted[attr] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                converted[attr] = int(raw)
            elif isinstance(default, float):
                converted[attr] = float(raw)
            else:
                converted[attr] = raw
        parser = build_parser()
        parser.set_defaults(**converted)
        for sub_action in parser._subparsers._group_actions:
            for sub in sub_action.choices.values():
                known = {a.dest for a in sub._actions}
                sub.set_defaults(**{k: v for k, v in converted.items() if k in known})
        args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
