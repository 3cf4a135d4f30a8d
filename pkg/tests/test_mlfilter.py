import math
from pathlib import Path

import numpy as np
import pytest

from qreadout import mlfilter as ml
from qreadout.model import INF, ContinuousTrace, ParameterError, PulseTimes, QubitState, ReadoutConfig, generate_continuous_trace, shot_rng

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def fixture_trace():
    rows = np.loadtxt(DATA / "trace_g4_r30.csv", delimiter=",", comments="#", skiprows=2)
    return ContinuousTrace(1e-3, rows[:, 1]), ReadoutConfig(r=30, gamma=4.0, tau_m=3.0)


def random_trace(cfg, seed, state=None, dt=None):
    rng = shot_rng(seed, 0)
    if state is None:
        state = QubitState.PLUS if rng.random() < 0.5 else QubitState.MINUS
    return generate_continuous_trace(cfg, dt or ml.default_ml_dt(cfg), state, rng, check=False)


def total(parts):
    return np.logaddexp.reduce(np.vstack(parts), axis=0)


# ---------------------------------------------------------------- likelihood ratio


def test_missed_pulse_part_is_exact(fixture_trace):
    trace, cfg = fixture_trace
    parts = ml.likelihood_direct(trace, cfg)
    assert parts.log_l3 == -cfg.gamma * cfg.tau_m
    assert parts.l1 >= 0 and parts.l2 >= 0
    lim = ml.likelihood_direct(trace, cfg.with_(gamma=INF))
    assert lim.l3 == 0.0


@pytest.mark.parametrize("gamma", [0.7, 1.0, 4.0, INF])
def test_no_signal_gives_unit_likelihood(gamma):
    # at r -> 0 the record carries no weight whatever its values
    cfg = ReadoutConfig(r=1e-300, gamma=gamma, tau_m=5.0)
    trace = ContinuousTrace(0.01, np.random.default_rng(3).normal(0, 5, 500))
    assert ml.likelihood_direct(trace, cfg).log_total == pytest.approx(0.0, abs=1e-12)
    assert ml.likelihood_ode(trace, cfg) == pytest.approx(0.0, abs=1e-12)
    traj = ml.integrate_estimator(trace, cfg)
    assert np.allclose(traj.p_plus, 0.5, atol=1e-12)


def test_fixture_ode_matches_direct(fixture_trace):
    trace, cfg = fixture_trace
    direct = ml.likelihood_direct(trace, cfg).log_total
    ode = ml.likelihood_ode(trace, cfg)
    assert math.exp(ode - direct) == pytest.approx(1.0, abs=1e-3)
    post = ml.likelihood_direct(trace, cfg).posterior
    assert ml.final_estimator(trace, cfg).p_plus == pytest.approx(post, abs=1e-3)


def test_linear_system_matches_finite_differences(fixture_trace):
    trace, cfg = fixture_trace
    lam_direct = np.exp(total(ml.likelihood_direct(trace, cfg, cumulative=True)))
    lam_ode = np.exp(ml.likelihood_ode(trace, cfg, cumulative=True))
    d_direct = np.diff(lam_direct) / trace.dt
    d_ode = np.diff(lam_ode) / trace.dt
    assert np.max(np.abs(d_ode - d_direct)) < 1e-3 * np.max(np.abs(d_direct))


def test_cumulative_endpoint_matches_final(fixture_trace):
    trace, cfg = fixture_trace
    cum = ml.likelihood_direct(trace, cfg, cumulative=True)
    fin = ml.likelihood_direct(trace, cfg)
    assert cum[0][-1] == pytest.approx(fin.log_l1) and cum[1][-1] == pytest.approx(fin.log_l2)
    assert ml.likelihood_direct(trace, cfg, tau_m=1.5).log_l3 == -6.0


def test_short_trace_rejected(fixture_trace):
    trace, cfg = fixture_trace
    with pytest.raises(ParameterError):
        ml.likelihood_direct(trace, cfg, tau_m=4.0)
    with pytest.raises(ParameterError):
        ml.integrate_estimator(trace, cfg, tau_m=3.5)


@pytest.mark.parametrize("gamma", [4.0, INF])
def test_large_likelihoods_stay_finite(gamma):
    cfg = ReadoutConfig(r=3000, gamma=gamma, tau_m=3.0)
    trace = random_trace(cfg, 1, QubitState.PLUS, dt=1e-4)
    parts = ml.likelihood_direct(trace, cfg)
    assert parts.log_total > 700
    assert parts.posterior == 1.0
    assert ml.likelihood_ode(trace, cfg) == pytest.approx(parts.log_total, rel=1e-3)


# ---------------------------------------------------------------- estimator


def test_estimator_shape_for_plus_record():
    cfg = ReadoutConfig(r=30, gamma=4.0, tau_m=10.0)
    pulse = PulseTimes(1.0, 2.0)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        trace = generate_continuous_trace(cfg, 2e-3, QubitState.PLUS, rng, pulse=pulse)
        traj = ml.integrate_estimator(trace, cfg)
        assert traj.at(0.0) == 0.5
        # drifts down while nothing is seen, jumps up once the pulse starts
        assert traj.at(0.5) > traj.at(1.0)
        assert traj.at(1.0) < 0.2
        assert traj.at(1.5) > 0.999
        assert traj.p_plus[750:].min() > 0.999


def test_deterministic_turn_on_has_no_missed_component():
    cfg = ReadoutConfig(r=30, gamma=INF, tau_m=4.0)
    traj = ml.integrate_estimator(random_trace(cfg, 2), cfg)
    assert np.all(traj.p[:, 2] == 0.0)
    assert traj[0].p1 == 0.0 and traj[0].p2 == 0.5
    fin = ReadoutConfig(r=30, gamma=4.0, tau_m=4.0)
    assert ml.integrate_estimator(random_trace(fin, 2), fin)[0] == ml.EstimatorState(0.0, 0.0, 0.5)


@pytest.fixture(scope="module")
def trajectories():
    out = {}
    for gamma in (4.0, INF):
        for r in (3.0, 30.0, 300.0):
            cfg = ReadoutConfig(r=r, gamma=gamma, tau_m=ml.ML_TAU_M)
            out[gamma, r] = [ml.integrate_estimator(random_trace(cfg, s), cfg) for s in range(1000)]
    return out


@pytest.mark.slow
@pytest.mark.parametrize("gamma", [4.0, INF])
@pytest.mark.parametrize("r", [3.0, 30.0, 300.0])
def test_estimator_bounded(trajectories, gamma, r):
    for traj in trajectories[gamma, r]:
        assert traj.p.min() >= -ml.BAND
        assert traj.p_plus.max() <= 1 + ml.BAND


@pytest.mark.slow
@pytest.mark.parametrize("gamma", [4.0, INF])
@pytest.mark.parametrize("r", [30.0, 300.0])
def test_estimator_plateau(trajectories, gamma, r):
    jumps = np.array([abs(t.at(10.0) - t.at(8.0)) for t in trajectories[gamma, r]])
    assert np.mean(jumps < 1e-3) >= 0.99


@pytest.mark.parametrize("gamma", [4.0, INF])
@pytest.mark.parametrize("r", [30.0, 250.0])
def test_substep_halving_converges(gamma, r):
    cfg = ReadoutConfig(r=r, gamma=gamma, tau_m=ml.ML_TAU_M)
    for seed in range(20):
        trace = random_trace(cfg, seed)
        a = ml.final_estimator(trace, cfg).p_plus
        b = ml.final_estimator(trace, cfg, max_phase=ml.DEFAULT_MAX_PHASE / 2).p_plus
        assert abs(a - b) < 1e-4


def test_step_error_when_band_cannot_be_met(fixture_trace):
    trace, cfg = fixture_trace
    with pytest.raises(ml.EstimatorStepError):
        ml.integrate_estimator(trace, cfg, max_phase=50.0, max_halvings=0, band=-1.0)


def test_decision_rule_and_tie_coin():
    assert ml.decide(0.51, 0.9) is QubitState.PLUS
    assert ml.decide(0.49, 0.1) is QubitState.MINUS
    assert ml.decide(0.5, 0.3) is QubitState.PLUS
    assert ml.decide(0.5, 0.7) is QubitState.MINUS


def test_ties_are_split_by_the_coin():
    cfg = ReadoutConfig(r=1e-300, gamma=4.0, tau_m=2.0)
    res = ml.ml_error_rate(cfg, 400, seed=5, dt=0.02)
    # no information: every record is a tie, so about half of each state is wrong
    for e in (res.eps, res.eps_plus, res.eps_minus):
        assert abs(e - 0.5) < 4 * 0.5 / math.sqrt(200)
    assert ml.decide(0.5 + 1e-13, 0.9) is QubitState.MINUS


# ---------------------------------------------------------------- benchmark


def test_benchmark_independent_of_workers():
    cfg = ReadoutConfig(r=30, gamma=4.0, tau_m=ml.ML_TAU_M, seed=4)
    a = ml.ml_error_rate(cfg, 120)
    b = ml.ml_error_rate(cfg, 120, workers=3)
    assert a == b
    assert a.stderr == pytest.approx(math.sqrt(a.eps * (1 - a.eps) / 120))
    assert a.dt == ml.default_ml_dt(cfg)


def test_benchmark_rejects_empty_run():
    with pytest.raises(ParameterError):
        ml.ml_error_rate(ReadoutConfig(r=30), 0)


def test_default_dt_rule():
    assert ml.default_ml_dt(ReadoutConfig(r=250, gamma=4)) == pytest.approx(1e-3)
    assert ml.default_ml_dt(ReadoutConfig(r=135, gamma=INF)) == pytest.approx(1 / 540)
    assert ml.default_ml_dt(ReadoutConfig(r=1e6, gamma=4)) == 1e-4
