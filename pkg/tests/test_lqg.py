import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqgvtr import lqg


def solved_demo():
    A = np.array([[0.55, 0.2], [-0.15, 0.4]])
    B = np.array([[1.0], [0.3]])
    C = np.array([[1.0, 0.5]])
    cost = lqg.CostSpec([[1.0]], [[0.6]])
    return lqg.solve(lqg.LqgSystem(A, B, C, name="demo"), cost), cost


def test_static_system_average_cost_closed_form():
    # A = 0: optimal average cost is q (c^2 + 1) exactly
    s = lqg.solve(lqg.LqgSystem([[0.0]], [[1.0]], [[1.5]]),
                  lqg.CostSpec([[0.8]], [[1.0]]))
    assert s.J_star == pytest.approx(0.8 * (1.5 ** 2 + 1.0), abs=1e-12)
    assert np.allclose(s.K, 0.0)


def test_average_cost_monte_carlo():
    s, cost = solved_demo()
    H = 20000
    mean, se, _ = lqg.rollout_policy(s.system, cost,
                                     lqg.StaticFilterPolicy(s), H,
                                     np.random.default_rng(10), reps=6)
    avg = mean / (H + 1)
    avg_se = se / (H + 1)
    assert abs(avg - s.J_star) < max(3 * avg_se, 0.01 * s.J_star)


def test_finite_horizon_value_monte_carlo():
    s, cost = solved_demo()
    H = 40
    fh = lqg.finite_horizon_optimal(s.system, cost, H)
    mean, se, _ = lqg.rollout_policy(
        s.system, cost, lqg.ScheduledFilterPolicy(s.system, fh), H,
        np.random.default_rng(11), reps=3000)
    assert abs(mean - fh.V_star) < 3 * se


def test_finite_horizon_monotone_pieces():
    s, cost = solved_demo()
    values = [lqg.finite_horizon_optimal(s.system, cost, H).V_star
              for H in (5, 10, 20, 40)]
    assert all(b > a for a, b in zip(values, values[1:]))
    # per-step value approaches the stationary rate from the offset side
    assert values[-1] / 41 == pytest.approx(s.J_star, rel=0.02)


def test_filter_update_hand_example():
    # A = 0, b = c = 1: Sigma = 1, L = 1/2, posterior = (u + y') / 2
    s = lqg.solve(lqg.LqgSystem([[0.0]], [[1.0]], [[1.0]]),
                  lqg.CostSpec([[1.0]], [[1.0]]))
    b0 = lqg.initial_belief(s, [4.0])
    assert b0.mean[0] == pytest.approx(2.0)
    b1 = lqg.filter_update(s, b0, [1.0], [4.0])
    assert b1.mean[0] == pytest.approx(2.5)
    assert b1.step == 1 and b1.filtered


def test_filter_update_rejects_bad_dims():
    s, _ = solved_demo()
    with pytest.raises(lqg.DimensionMismatch):
        lqg.filter_update(s, np.zeros(3), [0.0], [0.0])
    with pytest.raises(lqg.DimensionMismatch):
        lqg.filter_update(s, np.zeros(2), [0.0, 1.0], [0.0])


def test_bias_bellman_fixed_point():
    # h(x) = u'Ru - J* + E[h(x', y')] at u = -Kx, expectation in closed form
    s, cost = solved_demo()
    A, B, C = s.system.A, s.system.B, s.system.C
    M = s.bias_matrix
    trace_part = float(np.trace(s.L.T @ M @ s.L @ s.innov_cov)
                       + np.trace(cost.Q @ s.innov_cov))
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=2)
        u = -(s.K @ x)
        ybar = C @ (A @ x + B @ u)
        v = s.L @ ybar + s.filt_A @ x + s.filt_B @ u
        Eh = float(v @ M @ v + ybar @ cost.Q @ ybar) + trace_part
        lhs = float(x @ M @ x)
        rhs = float(u @ cost.R @ u) - s.J_star + Eh
        assert abs(lhs - rhs) < 1e-7 * max(1.0, abs(lhs))


def test_bias_function_matches_solved_method():
    s, cost = solved_demo()
    x = np.array([0.3, -1.1])
    y = np.array([0.7])
    assert lqg.bias_function(s, cost, x, y) == pytest.approx(s.bias(x, y))


def test_env_determinism():
    s, cost = solved_demo()
    def run(seed):
        env = lqg.LqgEnv(s.system, np.random.default_rng(seed))
        ys = [env.y.copy()]
        for t in range(50):
            ys.append(env.step([0.1 * np.sin(t)]).copy())
        return np.array(ys)
    assert np.array_equal(run(5), run(5))
    assert not np.array_equal(run(5), run(6))


def test_rollout_determinism_and_se():
    s, cost = solved_demo()
    m1 = lqg.rollout_policy(s.system, cost, lqg.ZeroPolicy(1), 200,
                            np.random.default_rng(3), reps=4)
    m2 = lqg.rollout_policy(s.system, cost, lqg.ZeroPolicy(1), 200,
                            np.random.default_rng(3), reps=4)
    assert m1[0] == m2[0]
    assert m1[1] > 0.0
    single = lqg.rollout_policy(s.system, cost, lqg.ZeroPolicy(1), 200,
                                np.random.default_rng(3), reps=1)
    assert single[1] == 0.0


def test_zero_noise_rollout_is_free():
    s, cost = solved_demo()
    mean, se, traj = lqg.rollout_policy(s.system, cost,
                                        lqg.StaticFilterPolicy(s), 100,
                                        np.random.default_rng(0), reps=2,
                                        noise_scale=0.0)
    assert mean == 0.0 and se == 0.0
    assert np.allclose(traj.xs, 0.0) and np.allclose(traj.ys, 0.0)


def test_unitary_invariance_of_average_cost():
    s, cost = solved_demo()
    rng = np.random.default_rng(8)
    G = rng.normal(size=(2, 2))
    T, _ = np.linalg.qr(G)
    sys2 = lqg.LqgSystem(T @ s.system.A @ T.T, T @ s.system.B,
                         s.system.C @ T.T)
    s2 = lqg.solve(sys2, cost)
    assert s2.J_star == pytest.approx(s.J_star, rel=1e-9)


def test_history_policy_sees_full_history():
    s, cost = solved_demo()
    seen = []
    def fn(ys, us):
        seen.append((len(ys), len(us)))
        return np.zeros(1)
    lqg.rollout_policy(s.system, cost, lqg.HistoryPolicy(fn), 5,
                       np.random.default_rng(1))
    # at decision t the policy has observations 0..t and actions 0..t-1
    assert seen == [(t + 1, t) for t in range(6)]


def test_spec_roundtrip(tmp_path):
    s, cost = solved_demo()
    path = tmp_path / "sys.json"
    lqg.save_spec(path, s.system, cost)
    sys2, cost2 = lqg.read_spec(path)
    assert np.array_equal(sys2.A, s.system.A)
    assert np.array_equal(cost2.R, cost.R)
    # file is plain row-major JSON
    doc = json.loads(path.read_text())
    assert doc["A"] == s.system.A.tolist()


def test_cost_spec_validation():
    with pytest.raises(lqg.DimensionMismatch):
        lqg.CostSpec([[1.0, 0.0]], [[1.0]])
    with pytest.raises(ValueError):
        lqg.CostSpec([[1.0]], [[0.0]])  # R must be positive definite
    with pytest.raises(ValueError):
        lqg.CostSpec([[-1.0]], [[1.0]])


def test_stage_cost_quadratic_form():
    cost = lqg.CostSpec([[2.0, 0.0], [0.0, 1.0]], [[0.5]])
    y = np.array([1.0, -2.0])
    u = np.array([3.0])
    assert cost.stage_cost(y, u) == pytest.approx(2.0 + 4.0 + 4.5)


@given(a=st.floats(-0.9, 0.9), c=st.floats(-2.0, 2.0), q=st.floats(0.1, 3.0),
       r=st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_scalar_cost_floor_property(a, c, q, r):
    # long-run cost can never beat the observation-noise floor tr(Q)
    s = lqg.solve(lqg.LqgSystem([[a]], [[1.0]], [[c]]),
                  lqg.CostSpec([[q]], [[r]]))
    assert s.J_star >= q - 1e-10
    # and control can only help: the zero-gain loop costs at least J_star
    if abs(a) < 1.0:
        sig_x = 1.0 / (1.0 - a * a)  # open-loop state variance
        J_zero = q * (c * c * sig_x + 1.0)
        assert J_zero >= s.J_star - 1e-8


@given(seed=st.integers(0, 2 ** 16))
@settings(max_examples=25, deadline=None)
def test_filter_consistency_property(seed):
    # the solved filter is the optimal MMSE gain: perturbing L never helps
    rng = np.random.default_rng(seed)
    s, cost = solved_demo()
    env = lqg.LqgEnv(s.system, rng)
    x_hat = s.L @ env.y
    errs = []
    for t in range(300):
        u = -(s.K @ x_hat)
        y1 = env.step(u)
        x_hat = s.filter_step(x_hat, u, y1)
        if t > 50:
            errs.append(env.x - x_hat)
    emp = np.cov(np.array(errs).T)
    # steady posterior covariance (I-LC) Sigma, sampled loosely
    target = (np.eye(2) - s.L @ s.system.C) @ s.Sigma
    assert np.linalg.norm(emp - target, 2) < 1.0
