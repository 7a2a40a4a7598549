"""Command-line entry point: ``glelab <subcommand> [--config FILE] [--set key=value ...]``.

Every subcommand writes its outputs into the ``--out`` directory. Every JSON report carries
``config_hash`` and ``seed``. Exit codes: 0 success, 2 invalid configuration, 3 non-finite
state during integration (details in ``error.json``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .config import ConfigError, ExperimentConfig, Violation
from .history import ConstantTail, InitialPast, PowerGrowthTail, novikov_integral
from .integrators import (
    NonFiniteError,
    cross_scheme_gap,
    energy_diagnostic,
    get_potential,
    hamiltonian,
    simulate_ensemble,
    _trajectory,
)
from .kernels import KernelError, chaining_bound, kernel_deriv, kernel_eval
from .noise import NegativeEigenvalueError, circulant_ensemble, empirical_autocov, forcing_ensemble, sup_square_statistic
from .stationary import coupling_experiment, growth_statistics, lyapunov_oracle, msd_estimate, stationarity_experiment

EXIT_OK, EXIT_INVALID, EXIT_NONFINITE = 0, 2, 3
SUBCOMMANDS = ("kernel-info", "sample-noise", "simulate", "msd", "stationarity", "coupling", "novikov", "lyapunov")


# ---------------------------------------------------------------- output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: str, payload: dict) -> None:
    # json uses repr() for floats: shortest round-trip form, locale independent
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: str, header: list[str], columns) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([repr(float(a)) for a in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _stamp(cfg: ExperimentConfig, payload: dict) -> dict:
    return {**payload, "config_hash": cfg.config_hash, "seed": cfg.seed}


# ---------------------------------------------------------------- subcommands


def cmd_kernel_info(cfg, k, out):
    rep = chaining_bound(k, cfg.T)
    payload = {
        "kernel": cfg.kernel,
        "M": k.M,
        "K0": k.k0,
        "Kprime0": float(kernel_deriv(k, 0.0)) if k.M else 0.0,
        "tail_mass": k.tail_mass,
        "rate_min": k.rate_min if k.M else None,
        "weights": k.weights,
        "rates": k.rates,
        "T": rep.T,
        "max_abs_Kprime": rep.max_abs_Kprime,
        "series_constant": rep.series_constant,
        "gamma2_bound": rep.gamma2_bound,
    }
    write_json(os.path.join(out, "kernel_info.json"), _stamp(cfg, payload))
    print(f"M={k.M} K(0)={k.k0!r} gamma2_bound={rep.gamma2_bound!r}")
    return EXIT_OK


def cmd_sample_noise(cfg, k, out):
    cfgmod.check_grid_alignment(cfg, ("lags",))
    n_lag = int(round(max(cfg.lags, default=0.0) / cfg.dt))
    steps = max(cfg.steps, n_lag)
    if cfg.method == "ou":
        vals = forcing_ensemble(k, cfg.dt, steps, cfg.paths, cfg.seed)
    else:
        vals = circulant_ensemble(lambda t: kernel_eval(k, t), cfg.dt, steps, cfg.paths, cfg.seed)
    times = cfg.dt * np.arange(steps + 1)
    write_csv(os.path.join(out, "forcing.csv"), ["t", "F"], [times, vals[:, 0]])
    est = empirical_autocov(vals, cfg.lags, cfg.dt)
    write_json(os.path.join(out, "autocov.json"), _stamp(cfg, {"method": cfg.method, **est.to_dict(k)}))
    sup = [sup_square_statistic(k, cfg.T, cfg.paths, h, cfg.seed) for h in (cfg.dt, cfg.dt / 2)]
    rel = abs(sup[1].mean - sup[0].mean) / sup[0].mean if sup[0].mean > 0 else math.nan
    payload = {"by_dt": {repr(h): r.to_dict() for h, r in zip((cfg.dt, cfg.dt / 2), sup)}, "relative_change": rel}
    write_json(os.path.join(out, "sup_square.json"), _stamp(cfg, payload))
    return EXIT_OK


def _simulate_compare(cfg, k, U, out):
    rep = cross_scheme_gap(k, U, cfg.dt * cfg.steps, cfg.dt, cfg.seed)
    write_json(os.path.join(out, "cross_scheme.json"), _stamp(cfg, rep.to_dict()))
    return EXIT_OK


def cmd_simulate(cfg, k, U, out):
    if cfg.scheme == "compare":
        return _simulate_compare(cfg, k, U, out)
    past = InitialPast.constant(cfg.x0, cfg.v0)
    traj_path = os.path.join(out, "trajectory.csv")
    summary = {"scheme": cfg.scheme, "n_paths": cfg.paths}
    if cfg.steps == 0:
        write_csv(traj_path, ["t", "x", "v", "H"], [[], [], [], []])
        summary.update(e_sup_H=float(hamiltonian(cfg.x0, cfg.v0, U)), se=0.0, nonfinite_count=0)
        write_json(os.path.join(out, "summary.json"), _stamp(cfg, summary))
        return EXIT_OK
    common = dict(memory_window=cfg.memory_window, on_nonfinite="mark")
    # path 0 alone with every step recorded; its streams are the same as inside the ensemble
    first = simulate_ensemble(k, U, cfg.scheme, past, cfg.dt, cfg.steps, 1, cfg.seed, record_steps=None, **common)
    tr = _trajectory(first.core, cfg.dt, U, cfg.scheme, cfg.seed, cfg.config_hash)
    write_csv(traj_path, ["t", "x", "v", "H"], [tr.t, tr.x, tr.v, tr.H])
    ens = first if cfg.paths == 1 else simulate_ensemble(
        k, U, cfg.scheme, past, cfg.dt, cfg.steps, cfg.paths, cfg.seed, record_steps=[0], **common
    )
    energy = energy_diagnostic(ens)
    summary.update(e_sup_H=energy.e_sup_H, se=energy.se, nonfinite_count=ens.nonfinite_count)
    write_json(os.path.join(out, "summary.json"), _stamp(cfg, summary))
    if ens.nonfinite_count:
        bad = ens.core.nonfinite_step
        p = int(np.argmin(np.where(bad >= 0, bad, np.iinfo(np.int64).max)))
        raise NonFiniteError(int(bad[p]), p)
    return EXIT_OK


def cmd_msd(cfg, k, out):
    rep = msd_estimate(k, cfg.paths, cfg.horizon, cfg.dt, cfg.seed)
    write_csv(os.path.join(out, "msd.csv"), ["t", "msd", "se"], [rep.times, rep.msd, rep.se])
    write_json(os.path.join(out, "msd.json"), _stamp(cfg, {"kernel_M": k.M, "potential": "free", **rep.to_dict()}))
    return EXIT_OK


def cmd_stationarity(cfg, k, U, out):
    cfgmod.check_grid_alignment(cfg, ("times",))
    rep = stationarity_experiment(k, U, cfg.dt, cfg.paths, cfg.times, cfg.seed)
    payload = {"kernel_M": k.M, **rep.to_dict()}
    if cfg.growth_horizon > 0:
        payload["growth"] = growth_statistics(k, U, cfg.growth_horizon, cfg.dt, cfg.paths, cfg.seed, cfg.rho).to_dict()
    write_json(os.path.join(out, "stationarity.json"), _stamp(cfg, payload))
    return EXIT_OK


def smooth_step_pasts(x0: float, shift: float, dt: float):
    """Two pasts equal on [-1, 0]; the second rises smoothly by ``shift`` over [-2, -1] and
    stays constant below -2."""

    def bump(r):
        r = np.asarray(r, dtype=float)
        s = 0.5 * (1.0 + np.cos(np.pi * (r + 2.0)))
        return np.where(r <= -2.0, 1.0, np.where(r >= -1.0, 0.0, s))

    def dbump(r):
        r = np.asarray(r, dtype=float)
        return np.where((r > -2.0) & (r < -1.0), -0.5 * np.pi * np.sin(np.pi * (r + 2.0)), 0.0)

    p1 = InitialPast.from_functions(lambda r: np.full_like(r, x0), np.zeros_like, -2.0, dt, ConstantTail(x0, 0.0))
    p2 = InitialPast.from_functions(
        lambda r: x0 + shift * bump(r), lambda r: shift * dbump(r), -2.0, dt, ConstantTail(x0 + shift, 0.0)
    )
    return p1, p2


def cmd_coupling(cfg, k, U, out):
    scheme = "embedded" if cfg.scheme == "embedded" else "direct"
    p1, p2 = smooth_step_pasts(cfg.x0, cfg.past_shift, cfg.dt)
    rep = coupling_experiment(k, U, p1, p2, cfg.seed, cfg.ladder, cfg.dt, cfg.memory_window, scheme)
    write_csv(os.path.join(out, "coupling.csv"), ["horizon", "gap_x", "gap_v"], [rep.horizons, rep.gap_x, rep.gap_v])
    write_json(os.path.join(out, "coupling.json"), _stamp(cfg, rep.to_dict()))
    return EXIT_OK


def cmd_novikov(cfg, k, out):
    past = InitialPast.from_tail(PowerGrowthTail(1.0, cfg.rho))
    rep = novikov_integral(k, past, cfg.ladder)
    write_csv(os.path.join(out, "novikov.csv"), ["T", "partial_integral"], [rep.ladder, rep.partial_integrals])
    write_json(os.path.join(out, "novikov.json"), _stamp(cfg, {"rho": cfg.rho, "kernel_M": k.M, **rep.to_dict()}))
    return EXIT_OK


def cmd_lyapunov(cfg, k, out):
    sigma = lyapunov_oracle(k, cfg.s_param)
    dev = float(np.max(np.abs(sigma - np.eye(len(sigma)))))
    write_json(os.path.join(out, "lyapunov.json"), _stamp(cfg, {"M": k.M, "max_abs_deviation": dev, "sigma": sigma}))
    print(f"M={k.M} max|Sigma - I|={dev!r}")
    return EXIT_OK


# ---------------------------------------------------------------- orchestration


def run_experiment(cfg: ExperimentConfig, subcommand: str, out_dir: str | None = None) -> int:
    """Run one subcommand and write its files into ``out_dir`` (default ``cfg.out``)."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = out_dir or cfg.out
    os.makedirs(out, exist_ok=True)
    try:
        k = cfg.build_kernel()
        U = get_potential(cfg.potential)
        if subcommand == "kernel-info":
            return cmd_kernel_info(cfg, k, out)
        if subcommand == "sample-noise":
            return cmd_sample_noise(cfg, k, out)
        if subcommand == "simulate":
            return cmd_simulate(cfg, k, U, out)
        if subcommand == "msd":
            return cmd_msd(cfg, k, out)
        if subcommand == "stationarity":
            return cmd_stationarity(cfg, k, U, out)
        if subcommand == "coupling":
            return cmd_coupling(cfg, k, U, out)
        if subcommand == "novikov":
            return cmd_novikov(cfg, k, out)
        return cmd_lyapunov(cfg, k, out)
    except NonFiniteError as exc:
        payload = {"error": "NonFinite", "step": exc.step, "path": exc.path, "time": exc.step * cfg.dt}
        write_json(os.path.join(out, "error.json"), _stamp(cfg, payload))
        print(f"non-finite state at step {exc.step} (path {exc.path})", file=sys.stderr)
        return EXIT_NONFINITE
    except (ConfigError, KernelError, NegativeEigenvalueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID


FLAG_KEYS = {
    "scheme": "scheme",
    "potential": "potential",
    "dt": "dt",
    "steps": "steps",
    "memory_window": "memory_window",
    "seed": "seed",
    "paths": "paths",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glelab", description="Generalized Langevin equation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--kernel", help="kernel TOML file or inline spec, e.g. 'alpha=1, beta=2, tail_tol=1e-3'")
        p.add_argument("--scheme", choices=cfgmod.SCHEMES)
        p.add_argument("--potential", choices=cfgmod.POTENTIAL_KINDS)
        p.add_argument("--dt", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--memory-window", dest="memory_window", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--out", help="output directory")
    return parser


def load_config(args) -> ExperimentConfig:
    text = ""
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([Violation("--config", f"cannot read {args.config}: {exc.strerror}")]) from None
    overrides = list(args.set)
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag)
        if val is not None:
            overrides.append(f"{key}={json.dumps(val) if isinstance(val, str) else repr(val)}")
    if args.out is not None:
        overrides.append(f"out={json.dumps(args.out)}")
    kernel = cfgmod.parse_kernel_arg(args.kernel) if args.kernel else None
    return cfgmod.parse_config(text, overrides, kernel=kernel)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_INVALID
    return run_experiment(cfg, args.command)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
