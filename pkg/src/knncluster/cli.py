"""Command-line interface.

Subcommands:

- ``sample``: draw a point cloud from the configured model
- ``identify``: run one identification pipeline and emit a label file
- ``sweep``: run a Monte Carlo grid from a config file, emit CSV records
- ``theory``: print the rate quantities for the configured geometry
- ``schedule``: print the exact-identification bandwidth/accuracy schedules

Exit status is 0 on success and 2 on configuration errors (bad arguments,
missing or invalid config file).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import (
    ConfigError,
    _resolve_eps_h,
    load_config,
    sweep,
    write_outputs,
)
from .identify import run_pipeline, write_labels
from .kde import exact_id_schedule
from .model import DegenerateGeometry, geometry_quantities, sample
from .theory import (
    TheoryInputs,
    condition1_window,
    gamma_coefficient,
    omega_rates,
    optimal_k,
)

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="knncluster")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a point cloud from the configured model")
    p.add_argument("--config", required=True, help="experiment config file (YAML)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="-", help="output file, '-' for stdout")

    p = sub.add_parser("identify", help="run one pipeline and emit point labels")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", required=True, help="neighbor count, or 'optimal'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--flavor", choices=["mutual", "symmetric"], default=None)
    p.add_argument("--mode", choices=["noisefree", "noisy"], default=None)
    p.add_argument("--out", default="-", help="label file, '-' for stdout")

    p = sub.add_parser("sweep", help="run the Monte Carlo grid of a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (default: config 'out')")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("theory", help="print rate quantities for the configured geometry")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--flavor", choices=["mutual", "symmetric"], default="mutual")

    p = sub.add_parser("schedule", help="print the bandwidth/accuracy schedules")
    p.add_argument("--n", required=True, help="sample size, or comma-separated list")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--h0", type=float, default=1.0)
    p.add_argument("--eps0", type=float, default=1.0)

    return parser


def _open_out(path: str):
    if path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _cmd_sample(args) -> int:
    config = load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    cloud = sample(config.model, args.n, seed)
    fh, close = _open_out(args.out)
    try:
        for row in cloud.points:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    finally:
        if close:
            fh.close()
    return 0


def _cmd_identify(args) -> int:
    config = load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    mode = args.mode or config.mode
    flavor = args.flavor or config.flavors[0]
    eps, h = _resolve_eps_h(config, args.n)
    if args.k == "optimal":
        geo = geometry_quantities(config.model, config.t)
        gamma = gamma_coefficient(geo.rho_min, geo.t, geo.p_max_global, geo.d)
        k = optimal_k(args.n, gamma).k
    else:
        k = int(args.k)
    if mode == "noisy" and config.t - eps <= 0.0:
        raise ConfigError(f"t - eps = {config.t - eps:.6g} must be positive in noisy mode")
    cloud = sample(config.model, args.n, seed)
    artifacts = run_pipeline(
        cloud,
        k,
        flavor=flavor,
        mode=mode,
        t=config.t,
        eps=eps,
        h=h if mode == "noisy" else None,
        delta=config.delta if mode == "noisy" else 0.0,
    )
    fh, close = _open_out(args.out)
    try:
        write_labels(artifacts.result, fh)
    finally:
        if close:
            fh.close()
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = type(config)(**{**config.__dict__, "seed": args.seed})
    result = sweep(config, jobs=max(1, args.jobs))
    out_dir = args.out if args.out is not None else config.out
    paths = write_outputs(result, out_dir)
    total = len(result.records)
    errors = sum(1 for r in result.records if r.error)
    print(f"{total} trials over {len(result.cells)} cells ({errors} errored)")
    print(f"records: {paths['records']}")
    print(f"summary: {paths['summary']}")
    return 0


def _cmd_theory(args) -> int:
    config = load_config(args.config)
    geo = geometry_quantities(config.model, config.t)
    n = args.n
    eps, h = _resolve_eps_h(config, n)
    inputs = TheoryInputs(
        geometry=geo,
        n=n,
        delta=config.delta,
        eps=eps,
        h=h,
        background_density=config.model.background_density,
    )

    print(f"geometry: d={geo.d} m={geo.m} t={geo.t:.6g} eta_d={geo.eta_d:.6g} eps_tilde={geo.eps_tilde:.6g}")
    for i in range(geo.m):
        print(
            f"cluster {i + 1}: beta={geo.beta[i]:.6g} beta_tilde={geo.beta_tilde[i]:.6g} "
            f"u={geo.u[i]:.6g} rho={geo.rho[i]:.6g} p_max={geo.p_max[i]:.6g} "
            f"nu_max={geo.nu_max[i]:.6g} kappa={geo.kappa[i]:.6g}"
        )
        gamma = gamma_coefficient(
            geo.rho[i] if args.flavor == "mutual" else geo.rho_min,
            geo.t,
            float(geo.p_max[i]),
            geo.d,
        )
        opt = optimal_k(n, gamma)
        window = condition1_window(inputs, cluster=i)
        print(
            f"  Gamma={gamma:.6f} k_opt={opt.k} (k_real={opt.k_real:.2f})"
            f" window=[{window.k_low}, {window.k_high}] feasible={window.feasible}"
        )

    gamma_all = gamma_coefficient(geo.rho_min, geo.t, geo.p_max_global, geo.d)
    opt_all = optimal_k(n, gamma_all)
    print(f"all clusters: Gamma_all={gamma_all:.6f} k_opt={opt_all.k} (k_real={opt_all.k_real:.2f})")

    nf = omega_rates(inputs, "noisefree", "one-cluster", args.flavor)
    print(f"Omega noisefree ({args.flavor}): " + " ".join(f"{v:.6g}" for v in np.atleast_1d(nf.omega)))
    print(
        f"bound at n={n}: prefactor={nf.prefactor:g} -> "
        + " ".join(f"{v:.6g}" for v in np.atleast_1d(nf.bound()))
    )
    if config.mode == "noisy":
        nz = omega_rates(inputs, "noisy", "one-cluster", args.flavor)
        print(
            f"Omega noisy ({args.flavor}, C2={nz.c2:g}, delta={config.delta:g}, eps={eps:.6g}, h={h:.6g}): "
            + " ".join(f"{v:.6g}" for v in np.atleast_1d(nz.omega))
        )
        print(
            f"bound at n={n}: prefactor={nz.prefactor:g} -> "
            + " ".join(f"{v:.6g}" for v in np.atleast_1d(nz.bound()))
        )
    return 0


def _cmd_schedule(args) -> int:
    try:
        ns = [int(v) for v in str(args.n).split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad n list {args.n!r}") from exc
    for n in ns:
        h_n, eps_n = exact_id_schedule(n, args.d, args.h0, args.eps0)
        print(f"n={n} h_n={h_n!r} eps_n={eps_n!r}")
    return 0


_COMMANDS = {
    "sample": _cmd_sample,
    "identify": _cmd_identify,
    "sweep": _cmd_sweep,
    "theory": _cmd_theory,
    "schedule": _cmd_schedule,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DegenerateGeometry, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
