"""Invariant-measure sampling and stationarity, diffusion-exponent, coupling and
growth experiments built on the two integrators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, linalg, stats

from .history import InitialPast, memory_integral
from .integrators import (
    FREE,
    QUADRATIC,
    ExtendedState,
    Potential,
    _ArrayNoise,
    _StreamNoise,
    default_s_param,
    direct_core,
    embedded_core,
    embedded_init_from_past,
    hamiltonian,
    matched_forcing,
)
from .kernels import SumExpKernel
from .rng import stream, streams

KS_COEF = 1.63  # two-sided KS critical value at alpha ~ 0.01, large n


class NormalizationError(ValueError):
    """exp(-U) is not integrable."""


class LyapunovError(RuntimeError):
    pass


# ---------------------------------------------------------------- exp(-U) tables


class BoltzmannTable:
    """Tabulated CDF of exp(-U(x)) / Z and its inverse.

    The support is found by doubling until U has risen 60 above its minimum on both sides;
    the CDF comes from cumulative Simpson on 2^17 + 1 nodes (error well below 1e-8 for the
    built-in potentials) and is inverted by linear interpolation.
    """

    RISE = 60.0
    MAX_HALF_WIDTH = 1e4

    def __init__(self, U: Potential, n_nodes: int = 2**17 + 1):
        self.U = U
        half = 1.0
        while True:
            x = np.linspace(-half, half, 4001)
            u = U.U(x)
            if u[0] - u.min() > self.RISE and u[-1] - u.min() > self.RISE:
                break
            half *= 2.0
            if half > self.MAX_HALF_WIDTH:
                raise NormalizationError(f"exp(-U) for potential {U.kind!r} does not decay; not normalizable")
        self.x = np.linspace(-half, half, n_nodes)
        u = U.U(self.x)
        dens = np.exp(-(u - u.min()))
        cdf = integrate.cumulative_simpson(dens, x=self.x, initial=0.0)
        self.Z = float(cdf[-1]) * math.exp(-u.min())
        self.cdf_nodes = np.maximum.accumulate(cdf / cdf[-1])

    def cdf(self, x):
        return np.interp(x, self.x, self.cdf_nodes, left=0.0, right=1.0)

    def ppf(self, q):
        return np.interp(q, self.cdf_nodes, self.x)

    def pdf(self, x):
        return np.exp(-self.U.U(np.asarray(x, dtype=float))) / self.Z


_TABLES: dict[str, BoltzmannTable] = {}


def boltzmann_table(U: Potential) -> BoltzmannTable:
    if U.kind == "custom":
        return BoltzmannTable(U)
    if U.kind not in _TABLES:
        _TABLES[U.kind] = BoltzmannTable(U)
    return _TABLES[U.kind]


def x_marginal_cdf(U: Potential):
    if U.kind == "quadratic":
        return stats.norm.cdf
    return boltzmann_table(U).cdf


# ---------------------------------------------------------------- invariant measure


@dataclass
class InvariantSample:
    state: ExtendedState
    diagnostics: dict = field(default_factory=dict)


def _draw_invariant(U: Potential, M: int, g: np.random.Generator):
    if U.kind == "quadratic":
        x = g.standard_normal()
    else:
        x = float(boltzmann_table(U).ppf(g.random()))
    v = g.standard_normal()
    z = g.standard_normal(M)
    return x, v, z


def sample_invariant(U: Potential, k: SumExpKernel, rng: np.random.Generator, s_param: float | None = None) -> InvariantSample:
    """One draw from pi(dx, dv) x prod N(0, 1): v and z exact normals, x from exp(-U)/Z."""
    if U.kind == "free":
        raise NormalizationError("U = 0 has no normalizable Gibbs measure")
    x, v, z = _draw_invariant(U, k.M, rng)
    diag = {"x_sampler": "normal" if U.kind == "quadratic" else "inverse_cdf"}
    if U.kind != "quadratic":
        diag["table_nodes"] = len(boltzmann_table(U).x)
    return InvariantSample(ExtendedState.for_kernel(k, x, v, z, s_param), diag)


def invariant_ensemble(U: Potential, k: SumExpKernel, n_paths: int, seed: int):
    """(x, v, z) arrays for n_paths draws; path p uses stream (seed, p, "init")."""
    if U.kind == "free":
        raise NormalizationError("U = 0 has no normalizable Gibbs measure")
    if U.kind != "quadratic":
        boltzmann_table(U)
    x = np.empty(n_paths)
    v = np.empty(n_paths)
    z = np.empty((n_paths, k.M))
    for p, g in enumerate(streams(seed, n_paths, "init")):
        x[p], v[p], z[p] = _draw_invariant(U, k.M, g)
    return x, v, z


# ---------------------------------------------------------------- Lyapunov oracle


def extended_drift(k: SumExpKernel, spring: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Drift A and diffusion B of the linear extended system with U(x) = spring * x^2 / 2."""
    M = k.M
    n = 2 + M
    sqc = k.sqrt_weights
    A = np.zeros((n, n))
    A[0, 1] = 1.0
    A[1, 0] = -spring
    A[1, 1] = -1.0
    A[1, 2:] = -sqc
    A[2:, 1] = sqc
    A[2:, 2:] = -np.diag(k.rates)
    B = np.diag(np.concatenate([[0.0, math.sqrt(2.0)], np.sqrt(2.0 * k.rates)]))
    return A, B


def lyapunov_oracle(k: SumExpKernel, s_param: float | None = None) -> np.ndarray:
    """Stationary covariance of the quadratic-potential extended system: A S + S A^T + B B^T = 0."""
    if k.M > 256:
        raise ValueError("lyapunov_oracle supports at most 256 modes")
    if s_param is not None:
        ExtendedState.for_kernel(k, s_param=s_param)
    A, B = extended_drift(k)
    try:
        S = linalg.solve_continuous_lyapunov(A, -B @ B.T)
    except (linalg.LinAlgError, ValueError) as exc:
        raise LyapunovError(f"Lyapunov solve failed: {exc}") from exc
    if not np.all(np.isfinite(S)):
        raise LyapunovError("Lyapunov solve returned non-finite entries (ill-conditioned drift)")
    return S


# ---------------------------------------------------------------- KS marginals


@dataclass
class KsReport:
    stat_x: float
    stat_v: float
    threshold: float
    n: int

    @property
    def passed(self) -> bool:
        return self.stat_x < self.threshold and self.stat_v < self.threshold

    def to_dict(self) -> dict:
        return {"ks_x": self.stat_x, "ks_v": self.stat_v, "threshold": self.threshold, "n": self.n, "passed": self.passed}


def ks_marginal_test(x, v, U: Potential) -> KsReport:
    """KS distances of the x and v samples to the exp(-H) marginals; pass iff both < 1.63/sqrt(n)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = len(x)
    sx = stats.kstest(x, x_marginal_cdf(U)).statistic
    sv = stats.kstest(v, stats.norm.cdf).statistic
    return KsReport(float(sx), float(sv), KS_COEF / math.sqrt(n), n)


@dataclass
class StationarityReport:
    times: list[float]
    reports: list[KsReport]
    potential: str

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def to_dict(self) -> dict:
        return {
            "potential": self.potential,
            "times": list(self.times),
            "ks": [r.to_dict() for r in self.reports],
            "passed": self.passed,
        }


def stationarity_experiment(
    k: SumExpKernel, U: Potential, dt: float, n_paths: int, times: Sequence[float], seed: int
) -> StationarityReport:
    """mu-initialized embedded ensemble; KS test of the (x, v) marginals at each time."""
    steps = np.rint(np.asarray(times, dtype=float) / dt).astype(int)
    x0, v0, z0 = invariant_ensemble(U, k, n_paths, seed)
    noise = _StreamNoise(streams(seed, n_paths, "wiener"), streams(seed, n_paths, "aux"), k.M, dt)
    res = embedded_core(k, U, x0, v0, z0, noise, dt, int(steps.max(initial=0)), record_steps=steps)
    idx = {int(s): i for i, s in enumerate(res.steps)}
    reports = [ks_marginal_test(res.x[idx[s]], res.v[idx[s]], U) for s in steps]
    return StationarityReport([float(t) for t in times], reports, U.kind)


# ---------------------------------------------------------------- mean-squared displacement


@dataclass
class MsdReport:
    times: np.ndarray
    msd: np.ndarray
    se: np.ndarray
    fitted_exponent: float
    exponent_ci: tuple[float, float]
    fit_window: tuple[float, float]
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "msd": self.msd.tolist(),
            "se": self.se.tolist(),
            "fitted_exponent": self.fitted_exponent,
            "exponent_ci": list(self.exponent_ci),
            "fit_window": list(self.fit_window),
            "n_paths": self.n_paths,
        }


def _fit_slope(t, y):
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])


def msd_estimate(
    k: SumExpKernel,
    n_paths: int,
    horizon: float,
    dt: float,
    seed: int,
    n_times: int = 41,
    n_boot: int = 200,
) -> MsdReport:
    """Ensemble E x(t)^2 for the unconfined GLE (U = 0) from x = v = 0, z ~ N(0, 1).

    The exponent is the least-squares slope of log msd against log t over the last decade.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths")
    n_steps = int(round(horizon / dt))
    steps = np.unique(np.rint(np.geomspace(1, n_steps, n_times)).astype(int))
    z0 = np.empty((n_paths, k.M))
    for p, g in enumerate(streams(seed, n_paths, "init")):
        z0[p] = g.standard_normal(k.M)
    noise = _StreamNoise(streams(seed, n_paths, "wiener"), streams(seed, n_paths, "aux"), k.M, dt)
    res = embedded_core(k, FREE, np.zeros(n_paths), np.zeros(n_paths), z0, noise, dt, n_steps, record_steps=steps)
    sq = res.x**2
    times = dt * res.steps
    msd = sq.mean(axis=1)
    se = sq.std(axis=1, ddof=1) / math.sqrt(n_paths)
    lo_t = times[-1] / 10.0
    win = times >= lo_t * (1 - 1e-12)
    slope = _fit_slope(times[win], msd[win])
    g = stream(seed, 0, "bootstrap")
    boots = np.empty(n_boot)
    for b in range(n_boot):
        pick = g.integers(0, n_paths, n_paths)
        boots[b] = _fit_slope(times[win], sq[win][:, pick].mean(axis=1))
    ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
    return MsdReport(times, msd, se, slope, ci, (float(times[win][0]), float(times[-1])), n_paths)


# ---------------------------------------------------------------- coupling


@dataclass
class CouplingReport:
    horizons: np.ndarray
    gap_x: np.ndarray
    gap_v: np.ndarray
    gap_H: np.ndarray
    shared_seed: int
    scheme: str = "direct"

    def to_dict(self) -> dict:
        return {
            "horizons": self.horizons.tolist(),
            "gap_x": self.gap_x.tolist(),
            "gap_v": self.gap_v.tolist(),
            "gap_H": self.gap_H.tolist(),
            "shared_seed": self.shared_seed,
            "scheme": self.scheme,
        }


def _running_average(y: np.ndarray, dt: float, steps: np.ndarray) -> np.ndarray:
    cum = np.concatenate([np.zeros((1,) + y.shape[1:]), np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)])
    return cum[steps] / (dt * steps[:, None])


def coupling_experiment(
    k: SumExpKernel,
    U: Potential,
    past1: InitialPast,
    past2: InitialPast,
    seed: int,
    horizon_ladder: Sequence[float],
    dt: float,
    memory_window: float = math.inf,
    scheme: str = "direct",
    h_cap: float = 10.0,
) -> CouplingReport:
    """Evolve two pasts with a common endpoint under identical noise and compare running
    time averages of x, v and min(H, h_cap) at each ladder horizon."""
    if abs(past1.x0 - past2.x0) > 1e-12 or abs(past1.v0 - past2.v0) > 1e-12:
        raise ValueError("pasts must agree at r = 0")
    ladder = np.asarray(horizon_ladder, dtype=float)
    steps = np.rint(ladder / dt).astype(int)
    n = int(steps.max())
    xi = stream(seed, 0, "init").standard_normal(k.M)
    dW = stream(seed, 0, "wiener").standard_normal(n)[:, None] * math.sqrt(dt)
    dB = stream(seed, 0, "aux").standard_normal((n, k.M)) * math.sqrt(dt)
    x0 = [past1.x0, past2.x0]
    v0 = [past1.v0, past2.v0]
    if scheme == "direct":
        F = matched_forcing(k, dB, dt, xi)
        tgrid = dt * np.arange(n + 1)
        past_mem = np.column_stack([memory_integral(k, past1, tgrid), memory_integral(k, past2, tgrid)])
        res = direct_core(k, U, x0, v0, past_mem, F, _ArrayNoise(dW), dt, n, memory_window)
    elif scheme == "embedded":
        z0 = np.stack([embedded_init_from_past(k, p, xi) for p in (past1, past2)])
        res = embedded_core(k, U, x0, v0, z0, _ArrayNoise(dW, dB[:, None, :]), dt, n)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    H = np.minimum(hamiltonian(res.x, res.v, U), h_cap)
    gaps = [np.abs(np.diff(_running_average(y, dt, steps), axis=1))[:, 0] for y in (res.x, res.v, H)]
    return CouplingReport(ladder, gaps[0], gaps[1], gaps[2], seed, scheme)


# ---------------------------------------------------------------- moderate growth


@dataclass
class GrowthReport:
    windows: np.ndarray
    exceed_fraction: np.ndarray
    bin_edges: list[int]
    binned_counts: np.ndarray
    rho: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.binned_counts) <= 0))

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "bin_edges": self.bin_edges,
            "binned_counts": self.binned_counts.tolist(),
            "monotone": self.monotone,
        }


def growth_statistics(
    k: SumExpKernel, U: Potential, horizon: float, dt: float, n_paths: int, seed: int, rho: float = 1.0
) -> GrowthReport:
    """Fraction of unit windows [n-1, n] with sup |x| > (n+1)^rho along mu-initialized runs,
    with counts binned by decade of n."""
    per_unit = int(round(1.0 / dt))
    n_windows = int(horizon)
    x0, v0, z0 = invariant_ensemble(U, k, n_paths, seed)
    noise = _StreamNoise(streams(seed, n_paths, "wiener"), streams(seed, n_paths, "aux"), k.M, dt)
    res = embedded_core(k, U, x0, v0, z0, noise, dt, n_windows * per_unit, record_steps=[0], window_steps=per_unit)
    wins = np.arange(1, n_windows + 1)
    exceed = res.window_max > ((wins + 1.0) ** rho)[:, None]
    edges = [1]
    while edges[-1] * 10 <= n_windows:
        edges.append(edges[-1] * 10)
    edges.append(n_windows + 1)
    counts = np.array([exceed[lo - 1 : hi - 1].sum() for lo, hi in zip(edges[:-1], edges[1:])])
    return GrowthReport(wins, exceed.mean(axis=1), edges, counts, rho)
