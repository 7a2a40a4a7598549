"""Stationary Gaussian forcing F with E[F(s)F(t)] = K(|s - t|).

For exponential-sum kernels F is a sum of independent OU components f_l, each
started from its stationary law N(0, c_l) and advanced by the exact OU update.
A circulant-embedding sampler covers covariances without that structure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernels import SumExpKernel, chaining_bound, ChainingReport, kernel_eval
from .rng import stream


class NegativeEigenvalueError(ValueError):
    """Circulant embedding of the covariance sequence is not positive semidefinite."""


@dataclass
class ForcingPath:
    t0: float
    dt: float
    values: np.ndarray
    mode_states: np.ndarray = field(default_factory=lambda: np.empty(0))
    seed: object = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if len(self.values) < 1:
            raise ValueError("a forcing path needs at least one sample")

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.n_steps


@dataclass
class AutocovEstimate:
    lags: np.ndarray
    estimates: np.ndarray
    std_errors: np.ndarray
    n_paths: int

    def to_dict(self, k: SumExpKernel | None = None) -> dict:
        out = {
            "lags": self.lags.tolist(),
            "estimates": self.estimates.tolist(),
            "std_errors": self.std_errors.tolist(),
            "n_paths": self.n_paths,
        }
        if k is not None:
            out["kernel_values"] = np.atleast_1d(kernel_eval(k, self.lags)).tolist()
        return out


def ou_coefficients(k: SumExpKernel, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode decay exp(-lambda dt) and innovation std sqrt(c (1 - exp(-2 lambda dt)))."""
    decay = np.exp(-k.rates * dt)
    scale = np.sqrt(k.weights * -np.expm1(-2.0 * k.rates * dt))
    return decay, scale


def ou_recursion(decay, scale, f0: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance modes f (paths, M) through innovations xi (steps, paths, M).

    Returns F = sum over modes at every grid point, shape (steps + 1, paths), and the final modes.
    """
    f = np.array(f0, dtype=float)
    n = xi.shape[0]
    out = np.empty((n + 1, f.shape[0]))
    out[0] = f.sum(axis=-1)
    for i in range(n):
        f = decay * f + scale * xi[i]
        out[i + 1] = f.sum(axis=-1)
    return out, f


def sample_forcing_ou(
    k: SumExpKernel,
    t0: float,
    dt: float,
    n_steps: int,
    rng: np.random.Generator,
    init_states=None,
    seed=None,
) -> ForcingPath:
    """Exact sampler on the grid t0 + i*dt, i = 0..n_steps.

    Without ``init_states`` the modes start from N(0, c_l), i.e. the stationary law.
    Passing a previous path's ``mode_states`` and the same generator continues it.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if init_states is None:
        f0 = np.sqrt(k.weights) * rng.standard_normal(k.M)
    else:
        f0 = np.asarray(init_states, dtype=float)
        if f0.shape != (k.M,):
            raise ValueError(f"init_states must have {k.M} entries")
    xi = rng.standard_normal((n_steps, k.M))
    decay, scale = ou_coefficients(k, dt)
    vals, f = ou_recursion(decay, scale, f0[None, :], xi[:, None, :])
    return ForcingPath(float(t0), float(dt), vals[:, 0], f[0], seed)


def forcing_ensemble(k: SumExpKernel, dt: float, n_steps: int, n_paths: int, seed: int, t0: float = 0.0):
    """Values of shape (n_steps + 1, n_paths); path p equals
    ``sample_forcing_ou(..., rng=stream(seed, p, "forcing"))`` bit for bit."""
    f0 = np.empty((n_paths, k.M))
    xi = np.empty((n_steps, n_paths, k.M))
    for p in range(n_paths):
        g = stream(seed, p, "forcing")
        f0[p] = np.sqrt(k.weights) * g.standard_normal(k.M)
        xi[:, p] = g.standard_normal((n_steps, k.M))
    decay, scale = ou_coefficients(k, dt)
    vals, _ = ou_recursion(decay, scale, f0, xi)
    return vals


def forcing_from_increments(k: SumExpKernel, dB: np.ndarray, dt: float, f0=None) -> np.ndarray:
    """Forcing driven by given Brownian increments dB of shape (steps, paths, M), variance dt.

    Each mode is sqrt(2 lambda c) * int exp(-lambda (t - r)) dB(r) integrated exactly over a step
    for piecewise-constant dB/dt; f0=None starts every mode at zero (no Brownian past).
    """
    dB = np.asarray(dB, dtype=float)
    decay, scale = ou_coefficients(k, dt)
    if f0 is None:
        f0 = np.zeros(dB.shape[1:])
    vals, _ = ou_recursion(decay, scale / np.sqrt(dt), f0, dB)
    return vals


def circulant_eigenvalues(cov: Callable, dt: float, n_points: int, rtol: float = 1e-10) -> np.ndarray:
    r = np.array([float(cov(j * dt)) for j in range(n_points)])
    if not r[0] > 0:
        raise ValueError("cov(0) must be > 0")
    if n_points == 1:
        return r
    row = np.concatenate([r, r[-2:0:-1]])
    eig = np.fft.fft(row).real
    floor = -rtol * np.abs(eig).max()
    if eig.min() < floor:
        raise NegativeEigenvalueError(
            f"circulant embedding has eigenvalue {eig.min():.3e}; enlarge the embedding or reject the covariance"
        )
    # clear round-off only; anything below -rtol*max was rejected above
    return np.maximum(eig, 0.0)


def _circulant_draw(eig: np.ndarray, n_points: int, rng: np.random.Generator) -> np.ndarray:
    if n_points == 1:
        return np.sqrt(eig[0]) * rng.standard_normal(1)
    m = len(eig)
    xi = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    y = np.fft.fft(np.sqrt(eig / m) * xi)
    return y.real[:n_points]


def sample_forcing_circulant(cov: Callable, dt: float, n_steps: int, rng: np.random.Generator, seed=None) -> ForcingPath:
    """Exact Gaussian sample with covariance [cov(|t_i - t_j|)] on n_steps + 1 grid points."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    eig = circulant_eigenvalues(cov, dt, n_steps + 1)
    return ForcingPath(0.0, float(dt), _circulant_draw(eig, n_steps + 1, rng), np.empty(0), seed)


def circulant_ensemble(cov: Callable, dt: float, n_steps: int, n_paths: int, seed: int) -> np.ndarray:
    eig = circulant_eigenvalues(cov, dt, n_steps + 1)
    out = np.empty((n_steps + 1, n_paths))
    for p in range(n_paths):
        out[:, p] = _circulant_draw(eig, n_steps + 1, stream(seed, p, "circulant"))
    return out


def _as_matrix(paths, dt) -> tuple[np.ndarray, float]:
    if isinstance(paths, np.ndarray):
        if dt is None:
            raise ValueError("dt is required when passing a value matrix")
        return np.atleast_2d(paths.T).T if paths.ndim == 1 else paths, float(dt)
    paths = list(paths)
    if not paths:
        raise ValueError("need at least one path")
    ref = paths[0]
    for p in paths[1:]:
        if p.t0 != ref.t0 or p.dt != ref.dt or len(p.values) != len(ref.values):
            raise ValueError("all paths must share (t0, dt, n_steps)")
    return np.column_stack([p.values for p in paths]), ref.dt


def empirical_autocov(paths, lags: Sequence[float], dt: float | None = None) -> AutocovEstimate:
    """Cross-ensemble autocovariance with Monte-Carlo standard errors.

    Each path contributes the average of F(t_i) F(t_i + lag) over its grid (mean zero is known,
    so the estimate is unbiased); the standard error is the spread of these per-path averages.
    """
    vals, dt = _as_matrix(paths, dt)
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0) or np.any(np.diff(lags) <= 0):
        raise ValueError("lags must be nonnegative and increasing")
    steps = np.rint(lags / dt).astype(int)
    if not np.allclose(steps * dt, lags, rtol=0, atol=1e-9 * max(1.0, float(lags.max(initial=0)))):
        raise ValueError("lags must be multiples of the grid step")
    n_t, n_paths = vals.shape
    if steps.max(initial=0) >= n_t:
        raise ValueError("lag exceeds path length")
    est = np.empty(len(lags))
    se = np.empty(len(lags))
    for i, j in enumerate(steps):
        per_path = (vals[: n_t - j] * vals[j:]).mean(axis=0)
        est[i] = per_path.mean()
        se[i] = per_path.std(ddof=1) / np.sqrt(n_paths) if n_paths > 1 else 0.0
    return AutocovEstimate(lags, est, se, n_paths)


@dataclass
class SupSquareReport:
    mean: float
    se: float
    k0: float
    n_points: int
    n_paths: int
    chaining: ChainingReport

    def to_dict(self) -> dict:
        return {
            "mean_sup_F2": self.mean,
            "se": self.se,
            "lower_bound_K0": self.k0,
            "n_points": self.n_points,
            "n_paths": self.n_paths,
            "T": self.chaining.T,
            "max_abs_Kprime": self.chaining.max_abs_Kprime,
            "series_constant": self.chaining.series_constant,
            "gamma2_bound": self.chaining.gamma2_bound,
        }


def sup_square_statistic(k: SumExpKernel, T: float, n_paths: int, dt: float, seed: int) -> SupSquareReport:
    """Monte-Carlo E sup_{[0,T]} F^2 over the grid, reported beside the chaining bound."""
    if T < 0:
        raise ValueError("T must be >= 0")
    n_steps = int(round(T / dt))
    vals = forcing_ensemble(k, dt, n_steps, n_paths, seed)
    sup2 = (vals**2).max(axis=0)
    se = sup2.std(ddof=1) / np.sqrt(n_paths) if n_paths > 1 else 0.0
    return SupSquareReport(float(sup2.mean()), float(se), k.k0, n_steps + 1, n_paths, chaining_bound(k, T))
