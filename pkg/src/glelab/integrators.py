"""Two independent time-steppers for the GLE

    dx = v dt
    m dv = -gamma v dt - U'(x) dt - int_{-inf}^t K(t - r) v(r) dr dt + sqrt(2 gamma) dW + F dt

``direct``: explicit Euler-Maruyama with the memory term as a trapezoid convolution over the
computed history (lag cutoff ``memory_window``) plus the closed-form contribution of the past.

``embedded``: the Markovian system in (x, v, z_1..z_M) with
    dv = (-v - U'(x) - sum sqrt(c_l) z_l) dt + sqrt(2) dW
    dz_l = (-lambda_l z_l + sqrt(c_l) v) dt + sqrt(2 lambda_l) dB_l,
where the z-update applies the exact OU decay and an Euler step for the sqrt(c_l) v coupling.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .history import InitialPast, exp_moments, memory_integral
from .kernels import SumExpKernel, kernel_eval
from .noise import forcing_from_increments
from .rng import draw_block, stream, streams


class NonFiniteError(FloatingPointError):
    """NaN or overflow in the state; the step size is too large for this configuration."""

    def __init__(self, step: int, path: int | None = None):
        self.step = step
        self.path = path
        where = f" on path {path}" if path is not None else ""
        super().__init__(f"non-finite state at step {step}{where}")


# ---------------------------------------------------------------- potentials


@dataclass(frozen=True)
class Potential:
    kind: str
    U: Callable
    dU: Callable
    witness: tuple[float, float] | None = None

    def check_assumption(self, grid=None) -> bool:
        """b (U(x) + 1) >= |x|^(1 + delta) on a scan grid for the stored witness (b, delta)."""
        if self.witness is None:
            return False
        b, delta = self.witness
        x = np.linspace(-50.0, 50.0, 20001) if grid is None else np.asarray(grid, dtype=float)
        return bool(np.all(b * (self.U(x) + 1.0) >= np.abs(x) ** (1.0 + delta)))

    @classmethod
    def custom(cls, U: Callable, dU: Callable, witness=None) -> "Potential":
        return cls("custom", U, dU, witness)


def _quad_U(x):
    return 0.5 * np.asarray(x) ** 2


def _quad_dU(x):
    return x


def _dw_U(x):
    x = np.asarray(x)
    return 0.25 * x**4 - 0.5 * x**2 + 0.25


def _dw_dU(x):
    return x**3 - x


def _free_U(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _free_dU(x):
    return 0.0 * x


QUADRATIC = Potential("quadratic", _quad_U, _quad_dU, (2.0, 1.0))
DOUBLEWELL = Potential("doublewell", _dw_U, _dw_dU, (4.0, 1.0))
# U = 0 violates the growth assumption; used only for diffusion-exponent experiments
FREE = Potential("free", _free_U, _free_dU, None)

POTENTIALS = {p.kind: p for p in (QUADRATIC, DOUBLEWELL, FREE)}


def get_potential(kind: str) -> Potential:
    try:
        return POTENTIALS[kind]
    except KeyError:
        raise ValueError(f"unknown potential {kind!r}; choose from {sorted(POTENTIALS)}") from None


def hamiltonian(x, v, U: Potential):
    with np.errstate(over="ignore", invalid="ignore"):
        return 0.5 * np.asarray(v) ** 2 + U.U(x)


# ---------------------------------------------------------------- extended state


@dataclass
class ExtendedState:
    x: float
    v: float
    z: np.ndarray
    s_param: float
    alpha_beta: float | None = None

    def __post_init__(self):
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if not 2.0 * self.s_param > 1.0:
            raise ValueError(f"s_param={self.s_param}: need 1 < 2s")
        if self.alpha_beta is not None and not 2.0 * self.s_param < self.alpha_beta:
            raise ValueError(f"s_param={self.s_param}: need 2s < alpha*beta = {self.alpha_beta}")

    @classmethod
    def for_kernel(cls, k: SumExpKernel, x=0.0, v=0.0, z=None, s_param: float | None = None) -> "ExtendedState":
        if s_param is None:
            s_param = default_s_param(k)
        z = np.zeros(k.M) if z is None else z
        if len(np.atleast_1d(z)) != k.M:
            raise ValueError(f"z must have {k.M} entries")
        return cls(float(x), float(v), z, s_param, k.alpha_beta)


def default_s_param(k: SumExpKernel) -> float:
    """Midpoint of the admissible interval 1 < 2s < alpha*beta (0.75 when alpha*beta is undefined)."""
    ab = k.alpha_beta
    return 0.75 if ab is None else 0.25 * (1.0 + ab)


def embed_norm(state: ExtendedState) -> float:
    ell = np.arange(1, len(state.z) + 1, dtype=float)
    return math.sqrt(state.x**2 + state.v**2 + float(np.sum(ell ** (-2.0 * state.s_param) * state.z**2)))


# ---------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    t0: float
    dt: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    H: np.ndarray
    scheme: str
    seed: object = None
    config_hash: str | None = None

    def rows(self):
        return zip(self.t, self.x, self.v, self.H)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "v", "H"])
        for row in self.rows():
            w.writerow([repr(float(a)) for a in row])
        return buf.getvalue()


@dataclass
class CoreResult:
    steps: np.ndarray
    x: np.ndarray
    v: np.ndarray
    sup_H: np.ndarray
    nonfinite_step: np.ndarray  # -1 where the path stayed finite
    window_max: np.ndarray | None = None
    z: np.ndarray | None = None


class _Recorder:
    def __init__(self, record_steps, n_steps, n_paths, window_steps=None, keep_z=False, M=0):
        if record_steps is None:
            record_steps = np.arange(n_steps + 1)
        self.steps = np.unique(np.asarray(record_steps, dtype=int))
        if len(self.steps) and (self.steps[0] < 0 or self.steps[-1] > n_steps):
            raise ValueError("record_steps out of range")
        self.x = np.empty((len(self.steps), n_paths))
        self.v = np.empty((len(self.steps), n_paths))
        self.z = np.empty((len(self.steps), n_paths, M)) if keep_z else None
        self.pos = 0
        self.window_steps = window_steps
        if window_steps:
            self.window_max = np.zeros((n_steps // window_steps, n_paths))
            self._cur = np.zeros(n_paths)

    def __call__(self, n, x, v, z=None):
        if self.pos < len(self.steps) and self.steps[self.pos] == n:
            self.x[self.pos] = x
            self.v[self.pos] = v
            if self.z is not None:
                self.z[self.pos] = z
            self.pos += 1
        if self.window_steps:
            if n > 0:
                np.maximum(self._cur, np.abs(x), out=self._cur)
                if n % self.window_steps == 0 and n // self.window_steps <= len(self.window_max):
                    self.window_max[n // self.window_steps - 1] = self._cur
                    self._cur = np.abs(x).copy()
            else:
                self._cur = np.abs(x).copy()


def _check_finite(x, v, n, bad, mode):
    ok = np.isfinite(x) & np.isfinite(v)
    if ok.all():
        return
    fresh = ~ok & (bad < 0)
    if mode == "raise":
        path = int(np.flatnonzero(fresh)[0]) if fresh.any() else None
        raise NonFiniteError(n, path if len(x) > 1 else None)
    bad[fresh] = n


class _ArrayNoise:
    """Serves injected increments chunk by chunk."""

    def __init__(self, *arrays):
        self.arrays = arrays

    def __call__(self, start, count):
        return tuple(a[start : start + count] for a in self.arrays)


class _StreamNoise:
    """Brownian increments drawn from per-path streams, variance dt."""

    def __init__(self, gens_w, gens_b, M, dt):
        self.gens_w, self.gens_b, self.M, self.sq = gens_w, gens_b, M, math.sqrt(dt)

    def __call__(self, start, count):
        dW = draw_block(self.gens_w, count) * self.sq
        if self.gens_b is None:
            return (dW,)
        return dW, draw_block(self.gens_b, count, self.M) * self.sq


def _chunk_size(n_paths, M, budget=4_000_000):
    return max(1, budget // max(1, n_paths * (M + 1)))


def embedded_core(
    k: SumExpKernel,
    U: Potential,
    x0,
    v0,
    z0,
    noise,
    dt: float,
    n_steps: int,
    record_steps=None,
    window_steps=None,
    keep_z=False,
    mass=1.0,
    friction=1.0,
    on_nonfinite="raise",
) -> CoreResult:
    """Vectorized over paths: x0, v0 of shape (P,), z0 (P, M); noise(start, count) -> (dW, dB)."""
    x = np.array(x0, dtype=float).reshape(-1)
    v = np.array(v0, dtype=float).reshape(-1)
    P = len(x)
    z = np.array(z0, dtype=float).reshape(P, k.M)
    sqc = k.sqrt_weights
    decay = np.exp(-k.rates * dt)
    nscale = np.sqrt(-np.expm1(-2.0 * k.rates * dt) / dt)
    couple = sqc * dt
    wn = math.sqrt(2.0 * friction) / mass
    rec = _Recorder(record_steps, n_steps, P, window_steps, keep_z, k.M)
    bad = np.full(P, -1)
    supH = np.asarray(hamiltonian(x, v, U), dtype=float).copy()
    rec(0, x, v, z)
    chunk = _chunk_size(P, k.M)
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_steps, chunk):
            count = min(chunk, n_steps - start)
            dW, dB = noise(start, count)
            for i in range(count):
                fz = z @ sqc if k.M else 0.0
                acc = (-friction * v - U.dU(x) - fz) * (dt / mass)
                z = decay * z + couple * v[:, None] + nscale * dB[i]
                x = x + dt * v
                v = v + acc + wn * dW[i]
                n = start + i + 1
                _check_finite(x, v, n, bad, on_nonfinite)
                np.fmax(supH, hamiltonian(x, v, U), out=supH)
                rec(n, x, v, z)
    supH[bad >= 0] = np.nan
    return CoreResult(rec.steps, rec.x, rec.v, supH, bad, rec.window_max if window_steps else None, rec.z)


def direct_core(
    k: SumExpKernel,
    U: Potential,
    x0,
    v0,
    past_mem: np.ndarray,
    forcing: np.ndarray,
    noise,
    dt: float,
    n_steps: int,
    memory_window: float,
    record_steps=None,
    mass=1.0,
    friction=1.0,
    on_nonfinite="raise",
) -> CoreResult:
    """Vectorized over paths. ``past_mem`` and ``forcing`` have shape (n_steps + 1,) or (n_steps + 1, P)."""
    x = np.array(x0, dtype=float).reshape(-1)
    v = np.array(v0, dtype=float).reshape(-1)
    P = len(x)
    past_mem = np.asarray(past_mem, dtype=float)
    forcing = np.asarray(forcing, dtype=float)
    if forcing.shape[0] < n_steps + 1 or past_mem.shape[0] < n_steps + 1:
        raise ValueError("forcing and past memory must cover n_steps + 1 grid points")
    if past_mem.ndim == 1:
        past_mem = past_mem[:, None]
    if forcing.ndim == 1:
        forcing = forcing[:, None]
    W = n_steps if math.isinf(memory_window) else min(n_steps, int(math.floor(memory_window / dt + 1e-9)))
    Klag = kernel_eval(k, dt * np.arange(W + 1)) if k.M else np.zeros(W + 1)
    Krev = np.ascontiguousarray(Klag[::-1])
    hist = np.empty((n_steps + 1, P))
    hist[0] = v
    wn = math.sqrt(2.0 * friction) / mass
    rec = _Recorder(record_steps, n_steps, P)
    bad = np.full(P, -1)
    supH = np.asarray(hamiltonian(x, v, U), dtype=float).copy()
    rec(0, x, v)
    chunk = _chunk_size(P, 0)
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_steps, chunk):
            count = min(chunk, n_steps - start)
            (dW,) = noise(start, count)[:1]
            for i in range(count):
                n = start + i
                L = min(n, W)
                if L > 0 and k.M:
                    conv = Krev[W - L :] @ hist[n - L : n + 1]
                    conv -= 0.5 * (Klag[0] * v + Klag[L] * hist[n - L])
                    conv *= dt
                else:
                    conv = 0.0
                acc = (-friction * v - U.dU(x) - past_mem[n] - conv + forcing[n]) * (dt / mass)
                x = x + dt * v
                v = v + acc + wn * dW[i]
                hist[n + 1] = v
                _check_finite(x, v, n + 1, bad, on_nonfinite)
                np.fmax(supH, hamiltonian(x, v, U), out=supH)
                rec(n + 1, x, v)
    supH[bad >= 0] = np.nan
    return CoreResult(rec.steps, rec.x, rec.v, supH, bad)


def _trajectory(res: CoreResult, dt, U, scheme, seed, config_hash, t0=0.0) -> Trajectory:
    x, v = res.x[:, 0], res.v[:, 0]
    return Trajectory(t0, dt, t0 + dt * res.steps, x, v, np.asarray(hamiltonian(x, v, U)), scheme, seed, config_hash)


def run_direct(
    k: SumExpKernel,
    U: Potential,
    past: InitialPast,
    forcing,
    wiener_increments,
    dt: float,
    n_steps: int,
    memory_window: float = math.inf,
    mass: float = 1.0,
    friction: float = 1.0,
    seed=None,
    config_hash=None,
) -> Trajectory:
    """Single path of the history-convolution scheme; ``forcing`` is a ForcingPath or value array."""
    if memory_window < 0:
        raise ValueError("memory_window must be >= 0")
    fvals = np.asarray(getattr(forcing, "values", forcing), dtype=float)
    if getattr(forcing, "dt", dt) != dt or len(fvals) < n_steps + 1:
        raise ValueError("forcing grid must match (dt, n_steps)")
    dW = np.asarray(wiener_increments, dtype=float).reshape(-1, 1)
    if len(dW) < n_steps:
        raise ValueError("need n_steps Wiener increments")
    past_mem = memory_integral(k, past, dt * np.arange(n_steps + 1))
    res = direct_core(
        k, U, [past.x0], [past.v0], past_mem, fvals, _ArrayNoise(dW), dt, n_steps, memory_window,
        mass=mass, friction=friction,
    )
    return _trajectory(res, dt, U, "direct", seed, config_hash)


def run_embedded(
    k: SumExpKernel,
    U: Potential,
    init: ExtendedState,
    wiener_increments,
    aux_increments,
    dt: float,
    n_steps: int,
    mass: float = 1.0,
    friction: float = 1.0,
    seed=None,
    config_hash=None,
) -> Trajectory:
    """Single path of the Markovian-embedding scheme; aux_increments has shape (n_steps, M)."""
    dW = np.asarray(wiener_increments, dtype=float).reshape(-1, 1)
    dB = np.asarray(aux_increments, dtype=float).reshape(-1, 1, k.M)
    if len(dW) < n_steps or len(dB) < n_steps:
        raise ValueError("need n_steps Wiener and auxiliary increments")
    if len(init.z) != k.M:
        raise ValueError(f"initial z must have {k.M} entries (one per mode)")
    res = embedded_core(
        k, U, [init.x], [init.v], init.z[None, :], _ArrayNoise(dW, dB), dt, n_steps, mass=mass, friction=friction
    )
    return _trajectory(res, dt, U, "embedded", seed, config_hash)


# ---------------------------------------------------------------- matched schemes


def embedded_init_from_past(k: SumExpKernel, past: InitialPast, xi=None) -> np.ndarray:
    """z_l(0) = sqrt(c_l) int exp(lambda_l r) v0(r) dr + (Brownian-past part, standard normal xi_l)."""
    z = k.sqrt_weights * exp_moments(past, k.rates, "v") if k.M else np.zeros(0)
    return z if xi is None else z + np.asarray(xi, dtype=float)


def matched_forcing(k: SumExpKernel, aux_increments, dt: float, xi=None) -> np.ndarray:
    """Forcing that the embedded scheme implies for the same auxiliary draws.

    In the embedding the noise enters the v-equation as -sum sqrt(c_l) z_l, so the direct
    scheme must see F built from -dB and started at -sqrt(c_l) xi_l.
    """
    dB = np.asarray(aux_increments, dtype=float)
    squeeze = dB.ndim == 2
    if squeeze:
        dB = dB[:, None, :]
    f0 = None if xi is None else -k.sqrt_weights * np.asarray(xi, dtype=float).reshape(-1, k.M)
    vals = forcing_from_increments(k, -dB, dt, f0)
    return vals[:, 0] if squeeze else vals


@dataclass
class EnsembleResult:
    scheme: str
    dt: float
    n_paths: int
    seed: int
    core: CoreResult

    @property
    def times(self) -> np.ndarray:
        return self.dt * self.core.steps

    @property
    def nonfinite_count(self) -> int:
        return int(np.sum(self.core.nonfinite_step >= 0))


def simulate_ensemble(
    k: SumExpKernel,
    U: Potential,
    scheme: str,
    past: InitialPast,
    dt: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    memory_window: float = math.inf,
    record_steps=None,
    stationary_forcing: bool = True,
    on_nonfinite: str = "mark",
    mass: float = 1.0,
    friction: float = 1.0,
) -> EnsembleResult:
    """Ensemble from a common deterministic past; path p draws from streams (seed, p, role).

    Both schemes consume identical draws for a given seed: the direct forcing is the one the
    embedding implies (``matched_forcing``), so scheme outputs are pathwise comparable.
    With ``stationary_forcing`` the Brownian past of each mode is a standard normal from the
    "init" stream, otherwise it is zero.
    """
    if scheme not in ("direct", "embedded"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if n_steps < 0 or n_paths < 1:
        raise ValueError("need n_steps >= 0 and n_paths >= 1")
    xi = np.zeros((n_paths, k.M))
    if stationary_forcing:
        for p, g in enumerate(streams(seed, n_paths, "init")):
            xi[p] = g.standard_normal(k.M)
    x0 = np.full(n_paths, past.x0)
    v0 = np.full(n_paths, past.v0)
    gw = streams(seed, n_paths, "wiener")
    gb = streams(seed, n_paths, "aux")
    if scheme == "embedded":
        z0 = embedded_init_from_past(k, past)[None, :] + xi
        core = embedded_core(
            k, U, x0, v0, z0, _StreamNoise(gw, gb, k.M, dt), dt, n_steps, record_steps,
            on_nonfinite=on_nonfinite, mass=mass, friction=friction,
        )
    else:
        F = np.empty((n_steps + 1, n_paths))
        sq = math.sqrt(dt)
        for p in range(n_paths):
            dB = gb[p].standard_normal((n_steps, k.M)) * sq
            F[:, p] = matched_forcing(k, dB, dt, xi[p])
        past_mem = memory_integral(k, past, dt * np.arange(n_steps + 1))
        core = direct_core(
            k, U, x0, v0, past_mem, F, _StreamNoise(gw, None, k.M, dt), dt, n_steps, memory_window,
            record_steps, on_nonfinite=on_nonfinite, mass=mass, friction=friction,
        )
    return EnsembleResult(scheme, dt, n_paths, seed, core)


@dataclass
class CrossSchemeReport:
    dts: list[float]
    max_gap_x: list[float]
    max_gap_v: list[float]
    horizon: float
    seed: int

    @property
    def shrinks(self) -> bool:
        """Gap decreases under every dt halving in the ladder."""
        return bool(np.all(np.diff(self.max_gap_x) < 0))

    def to_dict(self) -> dict:
        return {
            "dts": self.dts,
            "max_gap_x": self.max_gap_x,
            "max_gap_v": self.max_gap_v,
            "horizon": self.horizon,
            "seed": self.seed,
            "shrinks": self.shrinks,
        }


def cross_scheme_gap(
    k: SumExpKernel, U: Potential, horizon: float, dt: float, seed: int, halvings: int = 1, refine: int = 2
) -> CrossSchemeReport:
    """Zero-past direct and embedded runs on [0, horizon] driven by one Brownian path.

    Increments are drawn on the grid dt / 2**(halvings + refine - 1) from the (seed, 0) wiener
    and aux streams and summed up to each coarser step, so every dt in the ladder sees the
    same path. Reports max_t |x_direct - x_embedded| (and the same for v) per dt.
    """
    n_levels = halvings + 1
    fine = 2 ** (halvings + refine - 1)
    dt_fine = dt / fine
    n_fine = int(round(horizon / dt_fine))
    if abs(n_fine * dt_fine - horizon) > 1e-9 * horizon:
        raise ValueError("horizon must be a multiple of dt")
    dWf = stream(seed, 0, "wiener").standard_normal(n_fine) * math.sqrt(dt_fine)
    dBf = stream(seed, 0, "aux").standard_normal((n_fine, k.M)) * math.sqrt(dt_fine)
    dts, gx, gv = [], [], []
    init = ExtendedState.for_kernel(k)
    for level in range(n_levels):
        agg = fine // 2**level
        h = dt_fine * agg
        n = n_fine // agg
        dW = dWf.reshape(n, agg).sum(axis=1)
        dB = dBf.reshape(n, agg, k.M).sum(axis=1)
        te = run_embedded(k, U, init, dW, dB, h, n)
        td = run_direct(k, U, InitialPast.zero(), matched_forcing(k, dB, h), dW, h, n)
        dts.append(h)
        gx.append(float(np.max(np.abs(te.x - td.x))))
        gv.append(float(np.max(np.abs(te.v - td.v))))
    return CrossSchemeReport(dts, gx, gv, float(horizon), seed)


# ---------------------------------------------------------------- energy


@dataclass
class EnergyReport:
    e_sup_H: float
    se: float
    finite: bool
    nonfinite_paths: list[int] = field(default_factory=list)

    @property
    def nonfinite_count(self) -> int:
        return len(self.nonfinite_paths)


def energy_diagnostic(ensemble) -> EnergyReport:
    """Monte-Carlo E sup_t H over the horizon; accepts Trajectories, an (paths, times) H array,
    or per-path sup-H values. Non-finite paths are excluded from the mean and reported."""
    if isinstance(ensemble, EnsembleResult):
        sup = ensemble.core.sup_H
    elif isinstance(ensemble, np.ndarray):
        sup = ensemble if ensemble.ndim == 1 else np.array([np.max(row) if np.all(np.isfinite(row)) else np.nan for row in ensemble])
    else:
        sup = np.array([np.max(tr.H) if np.all(np.isfinite(tr.H)) else np.nan for tr in ensemble])
    sup = np.asarray(sup, dtype=float)
    bad = [int(i) for i in np.flatnonzero(~np.isfinite(sup))]
    good = sup[np.isfinite(sup)]
    mean = float(good.mean()) if len(good) else math.nan
    se = float(good.std(ddof=1) / math.sqrt(len(good))) if len(good) > 1 else 0.0
    return EnergyReport(mean, se, not bad, bad)
