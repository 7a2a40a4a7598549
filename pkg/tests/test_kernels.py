import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from glelab.kernels import (
    ComponentSpec,
    KernelError,
    PhaseSpaceError,
    SumExpKernel,
    chaining_bound,
    chaining_series_constant,
    kernel_deriv,
    kernel_eval,
    kernel_from_spec,
    make_powerlaw_kernel,
    powerlaw_tail_bound,
    tail_ratio_bound,
    tail_ratio_scan,
    verify_component_consistency,
)

from conftest import zeta_oracle

ZETA3 = zeta_oracle(3.0)
ZETA5 = zeta_oracle(5.0)

mode_lists = st.lists(
    st.tuples(st.floats(0.01, 10.0), st.floats(0.01, 10.0)), min_size=1, max_size=8
)


def test_zeta_oracle_values():
    assert ZETA3 == pytest.approx(1.2020569, abs=1e-7)
    assert ZETA5 == pytest.approx(1.0369278, abs=1e-7)


def test_powerlaw_mode_two():
    k = make_powerlaw_kernel(1.0, 2.0, 1e-3)
    assert k.weights[1] == pytest.approx(0.125)
    assert k.rates[1] == pytest.approx(0.25)


@pytest.mark.parametrize("tol", [1e-2, 1e-3, 1e-4, 1e-6])
def test_powerlaw_k0_against_zeta(tol):
    k = make_powerlaw_kernel(1.0, 2.0, tol)
    # missing mass is bounded by the integral tail estimate
    assert 0 <= ZETA3 - k.k0 <= powerlaw_tail_bound(1.0, 2.0, k.M) + 1e-12
    assert ZETA3 - k.k0 <= tol * k.k0


def test_powerlaw_large_m_values():
    k = make_powerlaw_kernel(1.0, 2.0, 1e-7)
    assert kernel_eval(k, 0.0) == pytest.approx(ZETA3, abs=1e-6)
    assert kernel_deriv(k, 0.0) == pytest.approx(-ZETA5, abs=1e-6)


@pytest.mark.parametrize("alpha,beta,tol", [(1, 2, 1e-3), (0.8, 2, 1e-3), (0.7, 2, 5.83e-4), (1.5, 3, 1e-2)])
def test_truncation_is_minimal(alpha, beta, tol):
    k = make_powerlaw_kernel(alpha, beta, tol)
    ab = alpha * beta
    ell = np.arange(1, k.M + 1, dtype=float)
    assert k.M ** (-ab) / ab <= tol * np.sum(ell ** (-1 - ab))
    if k.M > 1:
        m = k.M - 1
        assert m ** (-ab) / ab > tol * np.sum(ell[:m] ** (-1 - ab))


@pytest.mark.parametrize("tol,M", [(0.707, 1), (0.0356, 4), (0.00174, 16), (0.000103, 64)])
def test_tail_tolerances_give_expected_mode_counts(tol, M):
    assert make_powerlaw_kernel(1.0, 2.0, tol).M == M


def test_single_mode_from_loose_tolerance():
    k = make_powerlaw_kernel(1.0, 2.0, 0.9)
    assert k.M == 1
    assert kernel_eval(k, 0.0) == 1.0
    assert kernel_eval(k, 1.3) == pytest.approx(math.exp(-1.3))


def test_phase_space_rejection():
    with pytest.raises(PhaseSpaceError, match="phase-space"):
        make_powerlaw_kernel(0.4, 2.0, 1e-3)
    with pytest.raises(KernelError):
        make_powerlaw_kernel(1.0, 0.5, 1e-3)
    with pytest.raises(KernelError):
        make_powerlaw_kernel(1.0, 2.0, 1.5)


def test_invalid_modes_rejected():
    with pytest.raises(KernelError):
        SumExpKernel.from_modes([[1.0, -1.0]])
    with pytest.raises(KernelError):
        SumExpKernel.from_modes([[0.0, 1.0]])


def test_kernel_eval_examples():
    k = SumExpKernel.from_modes([[2.0, 0.5]])
    assert kernel_eval(k, 2.0) == pytest.approx(2 * math.exp(-1), abs=1e-12)
    assert kernel_eval(k, 2.0) == pytest.approx(0.7357589, abs=1e-7)
    assert kernel_deriv(SumExpKernel.from_modes([[1, 1]]), 0.0) == -1.0
    assert kernel_eval(SumExpKernel.empty(), [0.0, 1.0]).tolist() == [0.0, 0.0]


def test_kernel_decays_below_any_epsilon():
    k = make_powerlaw_kernel(1.0, 2.0, 1e-3)
    t_big = 50.0 / k.rate_min
    assert kernel_eval(k, t_big) < 1e-20


def test_negative_time_rejected():
    k = SumExpKernel.from_modes([[1, 1]])
    with pytest.raises(ValueError):
        kernel_eval(k, -0.1)
    with pytest.raises(ValueError):
        kernel_deriv(k, [0.0, -1.0])


def test_kernel_is_immutable_value():
    k = make_powerlaw_kernel(1.0, 2.0, 1e-2)
    with pytest.raises(ValueError):
        k.weights[0] = 3.0
    assert k == make_powerlaw_kernel(1.0, 2.0, 1e-2)
    assert hash(k) == hash(make_powerlaw_kernel(1.0, 2.0, 1e-2))


def test_spec_round_trip():
    for k in (make_powerlaw_kernel(1.0, 2.0, 1e-3), SumExpKernel.from_modes([[1, 2], [3, 0.5]])):
        assert kernel_from_spec(k.to_spec()) == k


@given(mode_lists)
def test_positive_and_monotone(modes):
    k = SumExpKernel.from_modes(modes)
    t = np.linspace(0, 30, 301)
    K = kernel_eval(k, t)
    assert np.all(K > 0)
    assert np.all(np.diff(K) <= 0)
    assert K[0] == pytest.approx(sum(c for c, _ in modes))


@pytest.mark.parametrize("tol", [0.0356, 1e-3, 1e-5])
def test_powerlaw_positive_monotone(tol):
    k = make_powerlaw_kernel(1.0, 2.0, tol)
    t = np.concatenate([[0.0], np.geomspace(1e-3, 1e4, 500)])
    K = kernel_eval(k, t)
    assert np.all(K > 0) and np.all(np.diff(K) <= 0)


@given(mode_lists)
def test_tail_ratio_domination(modes):
    k = SumExpKernel.from_modes(modes)
    s = np.linspace(0, 50, 201)
    for t in np.linspace(0, 20, 21):
        ratio = kernel_eval(k, t + s) / kernel_eval(k, s)
        assert np.all(ratio <= tail_ratio_bound(k, t) + 1e-12)


def test_tail_ratio_examples(powerlaw4):
    k1 = SumExpKernel.from_modes([[2.5, 1.0]])
    s = np.linspace(0, 10, 11)
    assert tail_ratio_bound(k1, 1.0) == pytest.approx(math.exp(-1))
    assert tail_ratio_scan(k1, 1.0, s) == pytest.approx(math.exp(-1))
    assert tail_ratio_bound(powerlaw4, 0.0) == 1.0
    s_dense = np.linspace(0, 100, 20001)
    for t in (0.5, 2.0, 10.0, 40.0):
        assert tail_ratio_scan(powerlaw4, t, s_dense) <= math.exp(-t / 16) + 1e-12


@given(mode_lists, st.floats(0.0, 10.0))
def test_derivative_matches_central_differences(modes, t):
    k = SumExpKernel.from_modes(modes)
    h = 1e-5
    t = max(t, h)
    fd = (kernel_eval(k, t + h) - kernel_eval(k, t - h)) / (2 * h)
    d = kernel_deriv(k, t)
    assert abs(d - fd) <= 1e-6 * (1 + abs(d))


def test_derivative_central_differences_powerlaw():
    k = make_powerlaw_kernel(1.0, 2.0, 1e-3)
    h = 1e-5
    t = np.linspace(h, 10, 200)
    fd = (kernel_eval(k, t + h) - kernel_eval(k, t - h)) / (2 * h)
    d = kernel_deriv(k, t)
    assert np.all(np.abs(d - fd) <= 1e-6 * (1 + np.abs(d)))


# frozen from a 10^6-mode direct summation of l^-3 exp(-t / l^2) over t in [10, 1000]
ENVELOPE_ORACLE_BAND = (0.4995, 0.5029)


def test_powerlaw_envelope_band():
    k = make_powerlaw_kernel(1.0, 2.0, 1e-6)
    t = np.geomspace(10, 1e3, 200)
    scaled = kernel_eval(k, t) * t
    lo, hi = ENVELOPE_ORACLE_BAND
    assert np.all(scaled >= lo * 0.99) and np.all(scaled <= hi * 1.01)


@pytest.mark.parametrize("c,lam", [(1.0, 1.0), (3.0, 0.5), (0.125, 0.25)])
def test_component_consistency(c, lam):
    spec = ComponentSpec(c, lam)
    assert verify_component_consistency(spec, [0.0, 0.5, 2.0, 5.0]) < 1e-8
    assert float(spec.covariance(0.0)) == c


def test_component_quadrature_example():
    val, _ = integrate.quad(lambda r: 2 * math.exp(-2 * r), 0, np.inf)
    assert val == pytest.approx(1.0)
    assert float(ComponentSpec(3.0, 0.5).covariance(2.0)) == pytest.approx(3 * math.exp(-1))


def test_component_consistency_all_builtin_modes():
    k = make_powerlaw_kernel(1.0, 2.0, 0.00174)
    worst = max(verify_component_consistency(m, [0.0, 1.0, 3.0]) for m in k.components())
    assert worst < 1e-8


@given(mode_lists, st.lists(st.floats(0.0, 20.0), min_size=2, max_size=64))
def test_gram_matrix_psd(modes, times):
    k = SumExpKernel.from_modes(modes)
    t = np.asarray(times)
    G = kernel_eval(k, np.abs(t[:, None] - t[None, :]))
    assert np.linalg.eigvalsh(G).min() >= -1e-9 * k.k0


def test_series_constant():
    direct = math.sqrt(2) + sum(2 ** ((n + 1) / 2) / 2 ** (2 ** (n - 1)) for n in range(1, 11))
    assert chaining_series_constant() == pytest.approx(direct, rel=1e-15)
    assert abs(chaining_series_constant() - 3.3935) < 1e-3
    terms = [2 ** ((n + 1) / 2) / 2 ** (2 ** (n - 1)) for n in range(1, 6)]
    assert terms[:4] == pytest.approx([1.0, 0.70711, 0.25, 0.02210], abs=1e-5)
    assert terms[4] == pytest.approx(1.22e-4, rel=1e-2)


def test_chaining_bound_examples():
    rep = chaining_bound(SumExpKernel.from_modes([[1, 1]]), 1.0)
    assert rep.max_abs_Kprime == 1.0
    assert rep.gamma2_bound == pytest.approx(chaining_series_constant())
    assert chaining_bound(SumExpKernel.from_modes([[1, 1]]), 0.0).gamma2_bound == 0.0
    with pytest.raises(ValueError):
        chaining_bound(SumExpKernel.from_modes([[1, 1]]), -1.0)
