"""Command-line interface.

Subcommands::

    boselat simulate        one trajectory, CSV dump of means/covariances
    boselat steady-state    closed-form steady covariances and profiles
    boselat filter analytic closed-form kernels to CSV
    boselat filter design   Wiener-Hopf design from analytic correlators
    boselat postselect      full recovery pipeline from a config file
    boselat reproduce FIG   desk-scale reference dataset (fig2..fig8)
    boselat husimi          phase-space distributions from 3 seeds

All stochastic commands accept --seed; outputs land under --out.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import BoselatError
from .filters import (
    analytic_correlator_tables,
    analytic_filter_single,
    analytic_kernels_lattice,
    design_filter_wiener_hopf,
    fit_damped_cosine,
    save_kernel,
)
from .gaussian import (
    SingleSiteParams,
    simulate_trajectory_single,
    steady_state_single,
    vacuum_state,
)
from .lattice import LatticeParams, correlator_profile, steady_state_lattice
from .pipelines import FIGURE_NAMES, _reproduce_fig4, reproduce_figure, run_pipeline
from .records import SeedSpec, TimeGrid


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", type=str, default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (reserved)")


def _add_model(p):
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--h0", type=float, default=1.0)
    p.add_argument("--j0", type=float, default=3.0)
    p.add_argument("--j", type=float, default=1.0)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t-final", type=float, default=10.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boselat",
        description="Continuously monitored lattice bosons: simulation, "
        "filtering, and postselection recovery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="one single-site trajectory to CSV")
    _add_model(p_sim)
    _add_common(p_sim)

    p_ss = sub.add_parser("steady-state", help="closed-form steady covariances")
    _add_model(p_ss)
    p_ss.add_argument("--lattice", action="store_true", help="lattice profile instead of single site")
    _add_common(p_ss)

    p_f = sub.add_parser("filter", help="kernel construction")
    f_sub = p_f.add_subparsers(dest="filter_command", required=True)
    p_fa = f_sub.add_parser("analytic", help="closed-form kernels to CSV")
    _add_model(p_fa)
    p_fa.add_argument("--lattice", action="store_true")
    _add_common(p_fa)
    p_fd = f_sub.add_parser("design", help="Wiener-Hopf design from correlators")
    _add_model(p_fd)
    p_fd.add_argument("--max-lag", type=float, default=10.0)
    _add_common(p_fd)

    p_post = sub.add_parser("postselect", help="recovery pipeline from a config file")
    p_post.add_argument("config", type=str, help="key=value or JSON config file")
    _add_common(p_post)

    p_rep = sub.add_parser("reproduce", help="desk-scale reference dataset")
    p_rep.add_argument("figure", choices=FIGURE_NAMES)
    p_rep.add_argument("--n-traj", type=int, default=None, help="override trajectory count")
    _add_common(p_rep)

    p_h = sub.add_parser("husimi", help="Husimi distributions from 3 seeds")
    _add_common(p_h)
    return parser


def _cmd_simulate(args) -> int:
    params = SingleSiteParams(h0=args.h0, gamma=args.gamma)
    grid = TimeGrid(dt=args.dt, n_steps=int(round(args.t_final / args.dt)))
    traj = simulate_trajectory_single(params, vacuum_state(), grid, SeedSpec(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectory.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "site", "mean_x", "mean_p", "v_x", "v_p", "u"])
        for k in range(grid.n_steps + 1):
            writer.writerow(
                [k, 0, traj.mean_x[k], traj.mean_p[k], traj.v_x[k], traj.v_p[k], traj.u[k]]
            )
    print(path)
    return 0


def _cmd_steady_state(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.lattice:
        params = LatticeParams(j0=args.j0, j=args.j, lengths=(args.length,), gamma=args.gamma)
        c_x, c_p = correlator_profile(params)
        path = out / "steady_profile.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "c_x", "c_p"])
            for r in range(args.length // 2 + 1):
                writer.writerow([r, repr(float(c_x[r])), repr(float(c_p[r]))])
        print(path)
    else:
        ss = steady_state_single(SingleSiteParams(h0=args.h0, gamma=args.gamma))
        print(f"v_x={ss.v_x:.9f} v_p={ss.v_p:.9f} u={ss.u:.9f} tau={ss.tau:.9f}")
    return 0


def _cmd_filter_analytic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.lattice:
        params = LatticeParams(j0=args.j0, j=args.j, lengths=(args.length,), gamma=args.gamma)
        k_x, k_p = analytic_kernels_lattice(params, dt=args.dt)
        save_kernel(k_x.truncated_small(), out / "kernel_x.csv", out / "kernel_x.json")
        save_kernel(k_p.truncated_small(), out / "kernel_p.csv", out / "kernel_p.json")
        print(out / "kernel_x.csv")
        print(out / "kernel_p.csv")
    else:
        kernel = analytic_filter_single(
            SingleSiteParams(h0=args.h0, gamma=args.gamma), dt=args.dt
        )
        save_kernel(kernel, out / "filter_single.csv", out / "filter_single.json")
        print(out / "filter_single.csv")
    return 0


def _cmd_filter_design(args) -> int:
    params = SingleSiteParams(h0=args.h0, gamma=args.gamma)
    tables = analytic_correlator_tables(params, args.dt, args.max_lag)
    kernel = design_filter_wiener_hopf(tables, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_kernel(kernel, out / "filter_designed.csv", out / "filter_designed.json")
    prof = kernel.temporal_profile(0)
    times = kernel.dt * np.arange(prof.size)
    _, decay, freq, _ = fit_damped_cosine(times, prof)
    ss = steady_state_single(params)
    print(out / "filter_designed.csv")
    print(
        f"decay={decay:.6f} (ref {1.0 / ss.tau:.6f})  "
        f"frequency={freq:.6f} (ref {params.gamma * params.h0 * ss.tau:.6f})"
    )
    return 0


def _cmd_postselect(args) -> int:
    config = load_config(args.config)
    config.master_seed = args.seed if args.seed else config.master_seed
    if args.out != ".":
        config.out = args.out
    for path in run_pipeline(config):
        print(path)
    return 0


def _cmd_reproduce(args) -> int:
    for path in reproduce_figure(args.figure, out=args.out, master_seed=args.seed, n_traj=args.n_traj):
        print(path)
    return 0


def _cmd_husimi(args) -> int:
    for path in _reproduce_fig4(Path(args.out), args.seed, None):
        print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "steady-state":
            return _cmd_steady_state(args)
        if args.command == "filter":
            if args.filter_command == "analytic":
                return _cmd_filter_analytic(args)
            return _cmd_filter_design(args)
        if args.command == "postselect":
            return _cmd_postselect(args)
        if args.command == "reproduce":
            return _cmd_reproduce(args)
        if args.command == "husimi":
            return _cmd_husimi(args)
    except BoselatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
