import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracavg.control import (
    ControlProblem,
    cg_solve,
    control_from_adjoint,
    free_average,
    hum_control,
    minimality_check,
    variational_control,
    weighted_energy,
)
from fracavg.ensemble import ParameterEnsemble
from fracavg.errors import CGBreakdownError, NumericalDomainError, SingularGramianError
from fracavg.experiments import RosslerConfig, build_rossler
from fracavg.linfrac import ControlSignal, FractionalOrder, SystemRealization, TimeGrid, solve

J = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation(values, x0=(1.0, 1.0)):
    return ParameterEnsemble.discrete([SystemRealization(r * J, [[1.0], [0.0]]) for r in values], x0=list(x0))


def test_cg_identity():
    b = np.array([1.0, -2.0, 3.0])
    res = cg_solve(lambda y: y, b, tol=1e-14)
    assert res.iterations == 1 and res.converged
    assert np.allclose(res.y, b, rtol=0, atol=1e-15)
    assert res.residual_history[0] == pytest.approx(np.linalg.norm(b))


def test_cg_diagonal_two_steps():
    G = np.diag([1.0, 1e-4])
    res = cg_solve(lambda y: G @ y, [1.0, 1.0], tol=1e-12)
    assert res.converged and res.iterations <= 2
    assert np.allclose(res.y, [1.0, 1e4], rtol=1e-10)


def test_cg_zero_rhs_and_budget():
    res = cg_solve(lambda y: y, np.zeros(3))
    assert res.iterations == 0 and res.converged and np.array_equal(res.y, np.zeros(3))
    G = np.diag([1.0, 2.0, 3.0, 4.0])
    res = cg_solve(lambda y: G @ y, np.ones(4), tol=1e-14, kmax=1)
    assert res.iterations == 1 and not res.converged
    assert len(res.residual_history) == 2


def test_cg_breakdown():
    with pytest.raises(CGBreakdownError):
        cg_solve(lambda y: np.zeros_like(y), np.ones(2))
    with pytest.raises(CGBreakdownError):
        cg_solve(lambda y: np.diag([1.0, -1.0]) @ y, np.array([0.0, 1.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0.0, 8.0))
def test_cg_termination_and_anorm_decay(seed, n, logcond):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = np.geomspace(1.0, 10.0**-logcond, n) if n > 1 else np.array([1.0])
    G = Q @ np.diag(lam) @ Q.T
    G = 0.5 * (G + G.T)
    b = rng.normal(size=n)
    res = cg_solve(lambda y: G @ y, b, tol=1e-10 * max(1.0, np.linalg.norm(b)) * 1e-2)
    exact = np.linalg.solve(G, b)
    assert res.iterations <= 10 * n and res.converged
    errs = [math.sqrt(max(0.0, (y - exact) @ G @ (y - exact))) for y in res.iterates]
    scale = math.sqrt(abs(exact @ G @ exact)) + 1.0
    assert all(b_ <= a_ + 1e-9 * scale for a_, b_ in zip(errs, errs[1:]))


def test_problem_validation():
    e = rotation((1.0,))
    g = TimeGrid(1.0, 10)
    o = FractionalOrder(0.5, 1.0)
    with pytest.raises(NumericalDomainError):
        ControlProblem(o, e, [1.0], g)
    with pytest.raises(NumericalDomainError):
        ControlProblem(o, e, [np.nan, 0.0], g)
    with pytest.raises(NumericalDomainError):
        ControlProblem(o, e, [0.0, 0.0], g, cg_tol=0.0)
    with pytest.raises(NumericalDomainError):
        ControlProblem(o, e, [0.0, 0.0], g, cg_max_iter=0)
    p = ControlProblem(o, e, [0.0, 0.0], g, quadrature_Nq=None)
    assert p.Nq == 10 and p.max_iter == 20


def test_target_is_free_average():
    cfg = RosslerConfig(M=20, N=200)
    e = build_rossler(cfg)
    x1 = free_average(cfg.order, e)
    res = hum_control(ControlProblem(cfg.order, e, x1, cfg.grid))
    assert np.array_equal(res.rhs, np.zeros(3))
    assert np.array_equal(res.y_hat_T, np.zeros(3)) and res.iterations == 0
    assert np.array_equal(res.u_hat.values, np.zeros((200, 1)))
    assert res.terminal_error <= 1e-12 and res.energy == 0.0


@pytest.mark.parametrize("Nq", [1, 50, None])
def test_analytic_scalar_control(Nq):
    o = FractionalOrder(0.5, 1.0)
    e = ParameterEnsemble.deterministic([[0.0]], [[1.0]], [0.0])
    g = TimeGrid(1.0, 100)
    res = hum_control(ControlProblem(o, e, [1.0], g, quadrature_Nq=Nq))
    assert res.y_hat_T[0] == pytest.approx(math.pi / 2, rel=1e-12)
    assert np.allclose(res.u_hat.values, math.pi / 2 / math.gamma(0.5), rtol=1e-12)
    assert res.achieved_average[0] == pytest.approx(1.0, abs=1e-12)
    assert res.converged and res.iterations == 1


def test_singular_gramian_raises():
    e = rotation((-1.0, 1.0))
    o = FractionalOrder(0.8, 1.0)
    with pytest.raises(SingularGramianError):
        hum_control(ControlProblem(o, e, [0.0, 0.0], TimeGrid(1.0, 100)))


def test_non_convergence_is_reported(caplog):
    cfg = RosslerConfig(M=10, N=200)
    p = ControlProblem(cfg.order, build_rossler(cfg), np.zeros(3), cfg.grid, 100, 1e-14, 1)
    with caplog.at_level(logging.WARNING):
        res = hum_control(p)
    assert not res.converged and res.iterations == 1
    assert "CG stopped" in caplog.text


def test_ill_conditioned_flag(caplog):
    # nearly zero-mean rotation: E(r) = 1e-7 makes the Gramian nearly singular
    e = rotation((-1.0 + 1e-7, 1.0 + 1e-7))
    o = FractionalOrder(0.9, 1.0)
    p = ControlProblem(o, e, [0.0, 0.0], TimeGrid(1.0, 200), 200, cg_tol=1e-6, cg_max_iter=50)
    with caplog.at_level(logging.WARNING):
        res = hum_control(p)
    assert res.gramian.condition_number > 1e12
    assert res.ill_conditioned and "ill-conditioned" in caplog.text


def test_control_formulas_coincide():
    cfg = RosslerConfig(M=15, N=300)
    e = build_rossler(cfg)
    y = np.array([0.3, -1.2, 2.0])
    direct = control_from_adjoint(cfg.order, e, cfg.grid, y).values
    adj = variational_control(cfg.order, e, cfg.grid, y).values
    assert np.max(np.abs(direct - adj)) <= 1e-14 * max(1.0, np.max(np.abs(direct)))


def test_weighted_energy_examples():
    g = TimeGrid(2.0, 40)
    for alpha in (0.3, 0.5, 0.97):
        o = FractionalOrder(alpha, 2.0)
        assert weighted_energy(o, ControlSignal.zeros(g, 2)) == 0.0
        c = np.array([3.0, -4.0])
        assert weighted_energy(o, ControlSignal.constant(g, c)) == pytest.approx(
            5.0 * math.sqrt(2.0**alpha / alpha), rel=1e-13
        )
    g1 = TimeGrid(1.0, 13)
    assert weighted_energy(FractionalOrder(1.0, 1.0), ControlSignal.constant(g1, [1.0])) == pytest.approx(1.0)


def test_minimality_small_problem():
    e = ParameterEnsemble.discrete(
        [SystemRealization([[0.0, 1.0], [-1.0, -0.2]], [[0.0], [1.0]]),
         SystemRealization([[0.0, 1.0], [-2.0, 0.1]], [[0.0], [1.0]])],
        x0=[1.0, 0.0],
    )
    o = FractionalOrder(0.75, 1.0)
    p = ControlProblem(o, e, [0.0, 0.0], TimeGrid(1.0, 200), quadrature_Nq=None)
    res = hum_control(p)
    assert res.terminal_error <= 1e-9
    rep = minimality_check(p, res, trials=5)
    assert rep.passed
    for t in rep.trials:
        assert t.energy_perturbed >= t.energy_hat
    zero = minimality_check(p, res, trials=0)
    assert zero.passed and zero.trials == []


def test_summary_fields():
    o = FractionalOrder(0.5, 1.0)
    e = ParameterEnsemble.deterministic([[0.0]], [[1.0]], [0.0])
    res = hum_control(ControlProblem(o, e, [1.0], TimeGrid(1.0, 10)))
    s = res.summary()
    assert s["converged"] and s["iterations"] == 1 and s["final_residual"] <= 1e-10
    assert s["energy"] >= 0


def test_same_grid_quadrature_reaches_target():
    # Nq = N makes the Gramian identical to the solver's reach map
    cfg = RosslerConfig(M=30, N=500)
    e = build_rossler(cfg)
    res = hum_control(ControlProblem(cfg.order, e, np.zeros(3), cfg.grid, quadrature_Nq=None))
    assert res.terminal_error <= 1e-9
    trajs = [solve(cfg.order, m.system, m.x0, res.u_hat) for m in e.members]
    mean_T = sum(m.weight * t.states[-1] for m, t in zip(e.members, trajs))
    assert np.allclose(mean_T, res.achieved_average, rtol=0, atol=1e-12)
