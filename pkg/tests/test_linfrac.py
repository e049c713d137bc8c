import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracavg.errors import NumericalDomainError
from fracavg.linfrac import (
    ControlSignal,
    FractionalOrder,
    SystemRealization,
    TimeGrid,
    adjoint_fractional_integral,
    adjoint_state,
    duality_residual,
    duality_terms,
    duhamel_state,
    homogeneous_state,
    product_weights,
    solve,
)

from oracles import abm_solve, rk4_solve, scalar_forced_exact

# E_0.97(2^0.97 A) (1,1,1) for the Rössler linearization with a = 0.34 (mpmath, 40 digits)
ROSSLER_HOM_T2 = np.array([-1.797007751450443, 0.6542823491557512, -0.13917491250985206])
# fractional ABM at N = 4000 for the same problem
ROSSLER_ABM_T2 = np.array([-1.797007863952834, 0.6542821908339147, -0.13917492183358560])
# D^0.5 x = -x + 1, x(0) = 0, at t = 1: t^a E_{a,a+1}(-t^a) by mpmath
SCALAR_FORCED_T1 = 0.572416423844193


def rossler(a=0.34):
    return SystemRealization([[0, -1, -1], [1, a, 0], [0.4, 0, -4.5]], [0, 0, 1])


def test_types_validate():
    with pytest.raises(NumericalDomainError):
        FractionalOrder(0.0, 1.0)
    with pytest.raises(NumericalDomainError):
        FractionalOrder(1.2, 1.0)
    with pytest.raises(NumericalDomainError):
        FractionalOrder(0.5, 0.0)
    with pytest.raises(NumericalDomainError):
        TimeGrid(1.0, 0)
    with pytest.raises(NumericalDomainError):
        SystemRealization(np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(NumericalDomainError):
        SystemRealization(np.eye(2), np.ones((3, 1)))
    with pytest.raises(NumericalDomainError):
        ControlSignal(TimeGrid(1.0, 4), np.zeros((3, 1)))
    with pytest.raises(NumericalDomainError):
        ControlSignal(TimeGrid(1.0, 2), np.array([[np.inf], [0.0]]))


def test_system_shapes():
    s = rossler()
    assert (s.n, s.m) == (3, 1)
    assert s.B.shape == (3, 1)
    with pytest.raises(ValueError):
        s.A[0, 0] = 1.0


def test_grid():
    g = TimeGrid(2.0, 4)
    assert g.h == 0.5
    assert np.array_equal(g.nodes, [0, 0.5, 1.0, 1.5, 2.0])
    assert np.array_equal(g.midpoints, [0.25, 0.75, 1.25, 1.75])


def test_homogeneous_examples():
    s = rossler()
    o = FractionalOrder(0.97, 2.0)
    x0 = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(homogeneous_state(o, s, x0, 0.0), x0)
    one = SystemRealization([[-1.0]], [[1.0]])
    x = homogeneous_state(FractionalOrder(1.0, 2.0), one, [1.0], 2.0)
    assert x[0] == pytest.approx(math.exp(-2.0), rel=1e-13)


def test_homogeneous_rossler_oracles():
    x = homogeneous_state(FractionalOrder(0.97, 2.0), rossler(), np.ones(3), 2.0)
    # eigenvalue ~ -8.8 of 2^0.97 A: series cancellation costs ~1e-12
    assert np.allclose(x, ROSSLER_HOM_T2, rtol=0, atol=1e-11)
    # the independent time stepper agrees at its own discretization level
    assert np.allclose(x, ROSSLER_ABM_T2, rtol=0, atol=1e-6)


@pytest.mark.slow
def test_abm_oracle_freeze():
    _, xs = abm_solve(0.97, rossler().A, np.zeros((3, 1)), np.ones(3), lambda t: 0.0, 2.0, 4000)
    assert np.allclose(xs[-1], ROSSLER_ABM_T2, rtol=0, atol=1e-13)


def test_time_outside_horizon():
    with pytest.raises(NumericalDomainError):
        homogeneous_state(FractionalOrder(0.5, 1.0), rossler(), np.ones(3), 1.5)
    with pytest.raises(NumericalDomainError):
        homogeneous_state(FractionalOrder(0.5, 1.0), rossler(), np.ones(3), -0.1)


def test_weights_positive_and_telescoping():
    for alpha in (0.3, 0.5, 0.97, 1.0):
        h, N = 0.01, 300
        w = product_weights(alpha, h, N)
        assert np.all(w > 0)
        for k in (1, 17, 300):
            assert w[:k].sum() == pytest.approx((k * h) ** alpha / alpha, rel=1e-13)


def test_duhamel_zero_control_is_homogeneous():
    o = FractionalOrder(0.8, 1.0)
    s = rossler()
    g = TimeGrid(1.0, 50)
    u = ControlSignal.zeros(g, 1)
    for k in (0, 7, 50):
        assert np.allclose(
            duhamel_state(o, s, np.ones(3), u, k),
            homogeneous_state(o, s, np.ones(3), g.nodes[k]),
            rtol=1e-13,
            atol=1e-14,
        )


def test_duhamel_node_zero_exact():
    g = TimeGrid(1.0, 10)
    u = ControlSignal(g, np.random.default_rng(0).normal(size=(10, 1)))
    x0 = np.array([0.1, -0.2, 0.3])
    assert np.array_equal(duhamel_state(FractionalOrder(0.6, 1.0), rossler(), x0, u, 0), x0)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.97, 1.0])
def test_duhamel_constant_kernel(alpha):
    # A = 0, B = 1, u = 1: x(T) = x0 + T^a / Gamma(a + 1) exactly
    s = SystemRealization([[0.0]], [[1.0]])
    T, x0 = 1.7, 0.4
    g = TimeGrid(T, 37)
    x = duhamel_state(FractionalOrder(alpha, T), s, [x0], ControlSignal.constant(g, [1.0]), g.N)
    assert x[0] == pytest.approx(x0 + T**alpha / math.gamma(alpha + 1), rel=1e-13)


def test_duhamel_index_errors():
    g = TimeGrid(1.0, 5)
    u = ControlSignal.zeros(g, 1)
    with pytest.raises(IndexError):
        duhamel_state(FractionalOrder(0.5, 1.0), rossler(), np.ones(3), u, 6)
    with pytest.raises(IndexError):
        duhamel_state(FractionalOrder(0.5, 1.0), rossler(), np.ones(3), u, -1)
    with pytest.raises(NumericalDomainError):
        duhamel_state(FractionalOrder(0.5, 2.0), rossler(), np.ones(3), u, 1)
    with pytest.raises(NumericalDomainError):
        duhamel_state(FractionalOrder(0.5, 1.0), rossler(), np.ones(3), ControlSignal.zeros(g, 2), 1)


def test_scalar_forced_converges_to_exact():
    assert scalar_forced_exact(0.5, -1.0, 0.0, 1.0) == pytest.approx(SCALAR_FORCED_T1, rel=1e-14)
    s = SystemRealization([[-1.0]], [[1.0]])
    o = FractionalOrder(0.5, 1.0)
    errs = []
    for N in (100, 200, 400):
        g = TimeGrid(1.0, N)
        x = duhamel_state(o, s, [0.0], ControlSignal.constant(g, [1.0]), N)[0]
        errs.append(abs(x - SCALAR_FORCED_T1))
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] < 1e-2
    # first-order self-convergence for this smooth-forcing case
    assert 1.8 < errs[0] / errs[1] < 2.2 and 1.8 < errs[1] / errs[2] < 2.2


def test_scalar_forced_abm_cross_check():
    _, xs = abm_solve(0.5, [[-1.0]], [[1.0]], [0.0], lambda t: 1.0, 1.0, 2000)
    assert xs[-1, 0] == pytest.approx(SCALAR_FORCED_T1, abs=5e-6)


def test_solve_matches_duhamel_state():
    rng = np.random.default_rng(1)
    o = FractionalOrder(0.75, 1.5)
    s = SystemRealization(rng.uniform(-1, 1, (3, 3)), rng.uniform(-1, 1, (3, 2)))
    g = TimeGrid(1.5, 40)
    u = ControlSignal(g, rng.normal(size=(40, 2)))
    x0 = rng.normal(size=3)
    traj = solve(o, s, x0, u)
    assert traj.states.shape == (41, 3)
    assert np.array_equal(traj.states[0], x0)
    for k in (1, 13, 40):
        assert np.allclose(traj.states[k], duhamel_state(o, s, x0, u, k), rtol=1e-12, atol=1e-13)


def test_classical_limit_rk4():
    rng = np.random.default_rng(5)
    s = rossler()
    N = 2000
    g = TimeGrid(2.0, N)
    # smooth control sampled at midpoints, held constant per step
    u = ControlSignal(g, np.sin(3 * g.midpoints)[:, None] + 0.2)
    x0 = rng.normal(size=3)
    traj = solve(FractionalOrder(1.0, 2.0), s, x0, u)
    ref = rk4_solve(s.A, s.B, x0, u.values, 2.0, N)
    assert np.max(np.abs(traj.states - ref)) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.4, 0.75, 0.97, 1.0]))
def test_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    s = SystemRealization(rng.uniform(-2, 2, (n, n)), rng.uniform(-2, 2, (n, m)))
    o = FractionalOrder(alpha, 1.0)
    g = TimeGrid(1.0, 30)
    u = ControlSignal(g, rng.normal(size=(30, m)))
    x0 = rng.normal(size=n)
    k = int(rng.integers(0, 31))
    full = duhamel_state(o, s, x0, u, k)
    parts = duhamel_state(o, s, x0, ControlSignal.zeros(g, m), k) + duhamel_state(o, s, np.zeros(n), u, k)
    assert np.allclose(full, parts, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(full))))


def test_adjoint_examples():
    o = FractionalOrder(0.5, 1.0)
    zero = SystemRealization([[0.0]], [[1.0]])
    y = adjoint_state(o, zero, [3.0], 0.75)
    assert y[0] == pytest.approx(2 * 3.0 / math.sqrt(math.pi), rel=1e-14)
    s = rossler()
    assert np.array_equal(adjoint_state(o, s, np.zeros(3), 0.2), np.zeros(3))
    with pytest.raises(NumericalDomainError):
        adjoint_state(o, s, np.ones(3), 1.0)
    # classical adjoint flow
    from scipy.linalg import expm

    o1 = FractionalOrder(1.0, 2.0)
    yT = np.array([1.0, -1.0, 0.5])
    assert np.allclose(adjoint_state(o1, s, yT, 0.5), expm(1.5 * s.A.T) @ yT, rtol=1e-12, atol=1e-13)
    assert np.array_equal(adjoint_state(o1, s, yT, 2.0), yT)


def test_adjoint_fractional_integral_examples():
    s = rossler()
    o = FractionalOrder(0.7, 2.0)
    yT = np.array([1.0, 2.0, -1.0])
    assert np.array_equal(adjoint_fractional_integral(o, s, yT, 2.0), yT)
    zero = SystemRealization(np.zeros((3, 3)), np.ones(3))
    for t in (0.0, 0.9, 2.0):
        assert np.array_equal(adjoint_fractional_integral(o, zero, yT, t), yT)
    scalar = SystemRealization([[-0.8]], [[1.0]])
    val = adjoint_fractional_integral(FractionalOrder(1.0, 2.0), scalar, [1.0], 0.0)
    assert val[0] == pytest.approx(math.exp(-1.6), rel=1e-13)


def test_adjoint_fractional_integral_quadrature():
    # I^{1-a}_{T-} y(0) = 1/Gamma(1-a) int_0^T s^{-a} y(s) ds, by tanh-sinh quadrature
    import mpmath

    from oracles import ml_mp

    a, T, lam = 0.6, 1.0, -0.7

    def y(x):
        lag = T - x
        return lag ** (a - 1) * ml_mp(a, a, lam * lag**a, dps=20)

    with mpmath.workdps(20):
        val = mpmath.quad(lambda x: x ** (-a) * y(x), [0, 0.5, T]) / mpmath.gamma(1 - a)
    s = SystemRealization([[lam]], [[1.0]])
    closed = adjoint_fractional_integral(FractionalOrder(a, T), s, [1.0], 0.0)[0]
    assert closed == pytest.approx(float(val), rel=1e-9)


def test_duality_trivial_cases():
    s = rossler()
    g = TimeGrid(1.0, 20)
    o = FractionalOrder(0.6, 1.0)
    assert duality_residual(o, s, np.zeros(3), np.ones(3), ControlSignal.zeros(g, 1)) == 0.0
    one = SystemRealization([[0.0]], [[1.0]])
    o1 = FractionalOrder(1.0, 1.0)
    for N in (1, 7, 100):
        gN = TimeGrid(1.0, N)
        terms = duality_terms(o1, one, [0.0], [1.0], ControlSignal.constant(gN, [1.0]))
        assert terms.control_pairing == pytest.approx(1.0, abs=1e-12)
        assert terms.terminal_pairing == pytest.approx(1.0, abs=1e-12)
        assert terms.residual <= 1e-12


def test_duality_small_relative_to_scale():
    rng = np.random.default_rng(8)
    for alpha in (0.5, 0.75, 0.97):
        s = SystemRealization(rng.uniform(-1, 1, (3, 3)), rng.uniform(-1, 1, (3, 1)))
        g = TimeGrid(1.0, 200)
        u = ControlSignal(g, rng.normal(size=(200, 1)))
        terms = duality_terms(FractionalOrder(alpha, 1.0), s, rng.normal(size=3), rng.normal(size=3), u)
        assert terms.residual <= 1e-3 * terms.scale
