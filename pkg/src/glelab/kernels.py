"""Sum-of-exponentials memory kernels.

K(t) = sum_l c_l exp(-lambda_l t), either from an explicit mode list or from the
power-law family c_l = l^-(1 + alpha*beta), lambda_l = l^-beta, which decays like
t^-alpha at large times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

MAX_MODES = 10_000_000


class KernelError(ValueError):
    pass


class PhaseSpaceError(KernelError):
    """alpha*beta <= 1 leaves no admissible norm exponent s with 1 < 2s < alpha*beta."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SumExpKernel:
    weights: np.ndarray
    rates: np.ndarray
    alpha: float | None = None
    beta: float | None = None
    tail_tol: float | None = None
    tail_mass: float = 0.0

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.weights, dtype=float))
        lam = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if c.shape != lam.shape or c.ndim != 1:
            raise KernelError("weights and rates must be 1-d arrays of equal length")
        if np.any(~np.isfinite(c)) or np.any(c <= 0):
            raise KernelError("all weights c_l must be finite and > 0")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise KernelError("all rates lambda_l must be finite and > 0")
        order = np.argsort(-lam, kind="stable")
        object.__setattr__(self, "weights", _frozen(c[order]))
        object.__setattr__(self, "rates", _frozen(lam[order]))

    @classmethod
    def from_modes(cls, modes) -> "SumExpKernel":
        modes = np.asarray(modes, dtype=float).reshape(-1, 2)
        return cls(modes[:, 0], modes[:, 1])

    @classmethod
    def empty(cls) -> "SumExpKernel":
        return cls(np.empty(0), np.empty(0))

    @property
    def M(self) -> int:
        return len(self.weights)

    @property
    def alpha_beta(self) -> float | None:
        if self.alpha is None or self.beta is None:
            return None
        return self.alpha * self.beta

    @property
    def k0(self) -> float:
        return float(self.weights.sum())

    @property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.weights)

    @property
    def rate_min(self) -> float:
        return float(self.rates.min()) if self.M else math.inf

    def __call__(self, t):
        return kernel_eval(self, t)

    def __eq__(self, other):
        if not isinstance(other, SumExpKernel):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.rates, other.rates)
            and self.alpha == other.alpha
            and self.beta == other.beta
            and self.tail_tol == other.tail_tol
        )

    def __hash__(self):
        return hash((self.weights.tobytes(), self.rates.tobytes(), self.alpha, self.beta))

    def components(self) -> list["ComponentSpec"]:
        return [ComponentSpec(c, lam) for c, lam in zip(self.weights, self.rates)]

    def to_spec(self) -> dict:
        if self.alpha is not None:
            return {"alpha": self.alpha, "beta": self.beta, "tail_tol": self.tail_tol}
        return {"modes": [[float(c), float(lam)] for c, lam in zip(self.weights, self.rates)]}


def powerlaw_tail_bound(alpha: float, beta: float, M: int) -> float:
    """Integral bound on sum_{l>M} l^-(1+alpha*beta)."""
    ab = alpha * beta
    return M ** (-ab) / ab


def make_powerlaw_kernel(alpha: float, beta: float, tail_tol: float) -> SumExpKernel:
    """Truncate the power-law family at the smallest M whose analytic tail bound
    is at most ``tail_tol * K(0)``."""
    if not alpha > 0:
        raise KernelError(f"alpha must be > 0, got {alpha}")
    if not beta > 1:
        raise KernelError(f"beta must be > 1, got {beta}")
    if not 0 < tail_tol < 1:
        raise KernelError(f"tail_tol must lie in (0, 1), got {tail_tol}")
    ab = alpha * beta
    if ab <= 1:
        raise PhaseSpaceError(
            f"alpha*beta = {ab:g} must exceed 1, required by phase-space condition 1 < 2s < alpha*beta"
        )
    # K(0) >= 1, so this M always satisfies the bound
    m_hi = math.ceil((ab * tail_tol) ** (-1.0 / ab))
    if m_hi > MAX_MODES:
        raise KernelError(f"tail_tol={tail_tol} needs more than {MAX_MODES} modes")
    ell = np.arange(1, m_hi + 1, dtype=float)
    csum = np.cumsum(ell ** (-(1.0 + ab)))
    lo, hi = 1, m_hi
    while lo < hi:
        mid = (lo + hi) // 2
        if powerlaw_tail_bound(alpha, beta, mid) <= tail_tol * csum[mid - 1]:
            hi = mid
        else:
            lo = mid + 1
    M = lo
    ell = ell[:M]
    return SumExpKernel(
        ell ** (-(1.0 + ab)),
        ell ** (-beta),
        alpha=float(alpha),
        beta=float(beta),
        tail_tol=float(tail_tol),
        tail_mass=powerlaw_tail_bound(alpha, beta, M),
    )


def kernel_from_spec(spec: dict) -> SumExpKernel:
    if "modes" in spec:
        modes = spec["modes"]
        return SumExpKernel.from_modes(modes) if len(modes) else SumExpKernel.empty()
    return make_powerlaw_kernel(spec["alpha"], spec["beta"], spec["tail_tol"])


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("kernel time argument must be >= 0")
    return t


def _modesum(coef: np.ndarray, rates: np.ndarray, t: np.ndarray):
    out = np.exp(-np.multiply.outer(t, rates)) @ coef if coef.size else np.zeros(t.shape)
    return float(out) if out.ndim == 0 else out


def kernel_eval(k: SumExpKernel, t):
    t = _check_time(t)
    return _modesum(k.weights, k.rates, t)


def kernel_deriv(k: SumExpKernel, t):
    t = _check_time(t)
    return _modesum(-k.weights * k.rates, k.rates, t)


def tail_ratio_bound(k: SumExpKernel, t):
    """Envelope exp(-lambda_min t) >= sup_s K(t+s)/K(s) for the truncated kernel."""
    t = _check_time(t)
    if k.M == 0:
        return np.ones_like(t) if t.ndim else 1.0
    out = np.exp(-k.rate_min * t)
    return float(out) if out.ndim == 0 else out


def tail_ratio_scan(k: SumExpKernel, t: float, s_grid) -> float:
    """Diagnostic: max of K(t+s)/K(s) over a supplied s-grid."""
    s = _check_time(s_grid)
    return float(np.max(kernel_eval(k, t + s) / kernel_eval(k, s)))


@dataclass(frozen=True)
class ComponentSpec:
    """One OU component: J(t) = sqrt(2 c lambda) exp(-lambda t), K_l(t) = c exp(-lambda t)."""

    weight: float
    rate: float

    def amplitude(self, t):
        return math.sqrt(2.0 * self.weight * self.rate) * np.exp(-self.rate * np.asarray(t, dtype=float))

    def covariance(self, t):
        return self.weight * np.exp(-self.rate * np.asarray(t, dtype=float))


def verify_component_consistency(spec: ComponentSpec, t_grid) -> float:
    """Max |int_0^inf J(t+r) J(r) dr - c exp(-lambda t)| over ``t_grid`` by adaptive quadrature."""
    worst = 0.0
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        if t < 0:
            raise ValueError("t_grid must be nonnegative")
        val, _ = integrate.quad(
            lambda r: float(spec.amplitude(t + r) * spec.amplitude(r)),
            0.0,
            np.inf,
            epsabs=1e-13,
            epsrel=1e-12,
        )
        worst = max(worst, abs(val - float(spec.covariance(t))))
    return worst


def chaining_series_constant() -> float:
    """sqrt(2) + sum_{n>=1} 2^((n+1)/2) / 2^(2^(n-1)), summed until terms vanish in double precision."""
    total = math.sqrt(2.0)
    n = 1
    while True:
        log2_term = (n + 1) / 2.0 - 2.0 ** (n - 1)
        term = 2.0 ** log2_term
        if term < 1e-17 * total:
            break
        total += term
        n += 1
    return total


@dataclass(frozen=True)
class ChainingReport:
    T: float
    max_abs_Kprime: float
    series_constant: float
    gamma2_bound: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "gamma2_bound", math.sqrt(self.T * self.max_abs_Kprime) * self.series_constant
        )


def chaining_bound(k: SumExpKernel, T: float) -> ChainingReport:
    """Admissible-sequence bound on gamma_2 over [0, T] using dyadic-in-N_n partitions.

    |K'| is decreasing for a positive exponential sum, so its max on [0, T] is |K'(0)|.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    return ChainingReport(float(T), abs(float(kernel_deriv(k, 0.0))), chaining_series_constant())
