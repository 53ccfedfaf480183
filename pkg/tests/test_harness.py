import math

import numpy as np
import pytest

from lqgvtr import benchmarks, harness, lqg, model_class, vtr


@pytest.fixture(scope="module")
def bench():
    return benchmarks.benchmark_class(), benchmarks.benchmark_cost()


@pytest.fixture(scope="module")
def flip_pair():
    """Two stable scalar systems whose controllers destabilize each other."""
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    fwd = lqg.LqgSystem([[0.75]], [[1.0]], [[1.0]], name="fwd")
    rev = lqg.LqgSystem([[0.75]], [[-1.0]], [[1.0]], name="rev")
    return fwd, rev, cost


# ---------------------------------------------------------------------------
# Exact stationary cross-model costs


def test_cross_cost_self_consistency():
    for system, cost in benchmarks.consistency_systems():
        solved = lqg.solve(system, cost)
        got = harness.cross_policy_avg_cost(system, system, cost)
        assert got == pytest.approx(solved.J_star, rel=1e-8, abs=1e-10)


def test_cross_cost_matches_long_rollout(bench):
    simclass, cost = bench
    truth = simclass.solved_by_id("star")
    ctrl = simclass.solved_by_id("f4")
    avg = harness.cross_policy_avg_cost(truth, ctrl, cost)
    H = 20000
    mean, se, _ = lqg.rollout_policy(truth.system, cost,
                                     lqg.StaticFilterPolicy(ctrl), H,
                                     np.random.SeedSequence(31), reps=6)
    assert abs(mean / (H + 1) - avg) < 3.0 * se / (H + 1) + 5e-4


def test_cross_cost_exceeds_optimum(bench):
    # Any foreign certainty-equivalence controller pays at least J*.
    simclass, cost = bench
    truth = simclass.solved_by_id("star")
    for mid in simclass.ids:
        avg = harness.cross_policy_avg_cost(truth,
                                            simclass.solved_by_id(mid), cost)
        assert avg >= truth.J_star - 1e-9


def test_cross_cost_unstable_sentinel(flip_pair):
    fwd, rev, cost = flip_pair
    assert harness.cross_policy_avg_cost(rev, fwd, cost) == math.inf
    with pytest.raises(harness.UnstableLoop, match="spectral radius"):
        harness.cross_policy_avg_cost(rev, fwd, cost, strict=True)


def test_cross_cost_dimension_check():
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    a = lqg.solve(lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]]), cost)
    b = lqg.solve(
        lqg.LqgSystem([[0.5, 0.0], [0.0, 0.4]], [[1.0], [0.0]],
                      [[1.0, 0.0], [0.0, 1.0]]),
        lqg.CostSpec(np.eye(2), [[1.0]]))
    with pytest.raises(ValueError, match="dimensions"):
        harness.cross_policy_avg_cost(a, b, cost)


def test_joint_loop_stable_iff_finite(flip_pair):
    fwd, rev, cost = flip_pair
    sf, sr = lqg.solve(fwd, cost), lqg.solve(rev, cost)
    M_good, _ = harness.joint_closed_loop(sf, sf)
    M_bad, _ = harness.joint_closed_loop(sr, sf)
    assert np.max(np.abs(np.linalg.eigvals(M_good))) < 1.0
    assert np.max(np.abs(np.linalg.eigvals(M_bad))) >= 1.0


# ---------------------------------------------------------------------------
# Minimax static baseline


def test_minimax_table_matches_brute_force(bench):
    simclass, cost = bench
    sub = simclass.subset(["star", "clone", "f2", "f4"])
    rep = harness.minimax_static_policy(sub, cost)
    assert rep.ids == ["star", "clone", "f2", "f4"]
    for j, cid in enumerate(sub.ids):
        for i, tid in enumerate(sub.ids):
            want = (harness.cross_policy_avg_cost(sub.solved[i],
                                                  sub.solved[j], cost)
                    - sub.solved[i].J_star)
            assert rep.table[j, i] == pytest.approx(want, rel=1e-10,
                                                    abs=1e-12)
    np.testing.assert_allclose(rep.worst, rep.table.max(axis=1), rtol=1e-12)
    assert rep.minimax_value == pytest.approx(float(rep.worst.min()))
    assert rep.winner_id == sub.ids[int(np.argmin(rep.worst))]
    assert rep.policy.kind == "certainty_equivalent"
    assert rep.winner_id in rep.policy.description


def test_minimax_full_benchmark_winner(bench):
    simclass, cost = bench
    rep = harness.minimax_static_policy(simclass, cost)
    assert rep.winner_id == "star"
    assert rep.minimax_value == pytest.approx(0.34211498964005127, rel=1e-9)
    # the diagonal is exact-zero excess up to Lyapunov round-off
    assert np.max(np.abs(np.diag(rep.table))) < 1e-8


def test_minimax_tie_breaks_to_first(bench):
    _, cost = bench
    member = benchmarks.benchmark_class().members[0]
    twin_a = lqg.LqgSystem(member.A, member.B, member.C, name="twin_a")
    twin_b = lqg.LqgSystem(member.A, member.B, member.C, name="twin_b")
    sc = model_class.SimulatorClass([twin_a, twin_b], cost)
    rep = harness.minimax_static_policy(sc, cost)
    assert rep.worst[0] == pytest.approx(rep.worst[1], abs=1e-12)
    assert rep.winner_id == "twin_a"


def test_minimax_survives_partial_instability(flip_pair):
    # A zero-gain member (A = 0 forces K = 0) never destabilizes anyone, so
    # it wins even though the table holds infinite entries elsewhere.
    fwd, rev, cost = flip_pair
    idle = lqg.LqgSystem([[0.0]], [[1.0]], [[1.0]], name="idle")
    sc = model_class.SimulatorClass([fwd, rev, idle], cost)
    rep = harness.minimax_static_policy(sc, cost)
    assert rep.winner_id == "idle"
    assert rep.minimax_value == pytest.approx(0.7252864245161352, rel=1e-9)
    assert np.isinf(rep.table).sum() == 2
    doc = rep.to_dict()
    assert doc["winner"] == "idle"
    flat = [v for row in doc["table"] for v in row]
    assert flat.count("inf") == 2            # JSON-safe sentinel encoding
    assert all(isinstance(v, (float, str)) for v in flat)


def test_minimax_all_unstable_raises(flip_pair):
    fwd, rev, cost = flip_pair
    sc = model_class.SimulatorClass([fwd, rev], cost)
    with pytest.raises(harness.AllUnstable):
        harness.minimax_static_policy(sc, cost)


# ---------------------------------------------------------------------------
# Finite-horizon gap reports


def test_policy_spec_kinds():
    with pytest.raises(ValueError, match="unknown policy kind"):
        harness.PolicySpec("bogus")
    assert harness.PolicySpec.zero().kind == "zero"
    spec = harness.PolicySpec.custom(lambda s, c, h: lqg.ZeroPolicy(s.m),
                                     description="noop")
    assert spec.kind == "custom" and spec.description == "noop"


def test_gap_zero_policy_hand_value():
    # A = 0, C = 1.5, Q = 2: unit state covariance under no control, so the
    # stationary open-loop rate is q (c^2 + 1) = 6.5 exactly.
    system = lqg.LqgSystem([[0.0]], [[1.0]], [[1.5]])
    cost = lqg.CostSpec([[2.0]], [[1.0]])
    rep = harness.evaluate_gap(harness.PolicySpec.zero(), system, cost,
                               H=200, reps=32, seed=3)
    assert rep.details["avg_cost"] == pytest.approx(6.5, rel=1e-12)
    assert rep.V_pi == pytest.approx(
        201 * 6.5 + rep.details["transient"], rel=1e-12)
    # A = 0 forces K = 0, so no control IS optimal here: pure noise gap
    assert solved_rate_is_optimal(system, cost)
    assert abs(rep.gap) < 4.0 * rep.std_error + 0.5
    assert rep.gap == pytest.approx(rep.V_pi - rep.V_star, rel=1e-9)


def solved_rate_is_optimal(system, cost):
    solved = lqg.solve(system, cost)
    return np.allclose(solved.K, 0.0) and solved.J_star == pytest.approx(6.5)


def test_gap_own_controller_is_noise_level(bench):
    simclass, cost = bench
    star = simclass.solved_by_id("star")
    spec = harness.PolicySpec.certainty_equivalent(star)
    rep = harness.evaluate_gap(spec, star.system, cost, H=400, reps=48,
                               seed=11)
    # optimal static policy: the finite-horizon gap is pure transient noise
    assert abs(rep.gap) < 4.0 * rep.std_error + 0.2


def test_gap_foreign_controller_grows_linearly(bench):
    simclass, cost = bench
    star = simclass.solved_by_id("star")
    spec = harness.PolicySpec.certainty_equivalent(simclass.solved_by_id("f6"))
    lo = harness.evaluate_gap(spec, star.system, cost, H=500, reps=4, seed=0)
    hi = harness.evaluate_gap(spec, star.system, cost, H=5000, reps=4, seed=0)
    excess = (harness.cross_policy_avg_cost(star, simclass.solved_by_id("f6"),
                                            cost) - star.J_star)
    assert hi.gap > lo.gap
    assert hi.gap - lo.gap == pytest.approx(4500 * excess, rel=0.05)


def test_gap_unstable_pair_reports_inf(flip_pair):
    fwd, rev, cost = flip_pair
    spec = harness.PolicySpec.certainty_equivalent(rev)
    rep = harness.evaluate_gap(spec, fwd, cost, H=100, reps=2)
    assert rep.V_pi == math.inf
    assert rep.gap == math.inf
    assert math.isnan(rep.std_error)


def test_gap_custom_policy_rollout_determinism(bench):
    simclass, cost = bench
    star = simclass.solved_by_id("star")
    spec = harness.PolicySpec.custom(
        lambda system, c, h: lqg.StaticFilterPolicy(star))
    a = harness.evaluate_gap(spec, star.system, cost, H=300, reps=3, seed=5)
    b = harness.evaluate_gap(spec, star.system, cost, H=300, reps=3, seed=5)
    c = harness.evaluate_gap(spec, star.system, cost, H=300, reps=3, seed=6)
    assert a.V_pi == b.V_pi
    assert a.V_pi != c.V_pi
    assert a.std_error > 0.0


def test_gap_online_learner_plumbing(bench):
    simclass, cost = bench
    spec = harness.PolicySpec.lqg_vtr(
        simclass, config=benchmarks.benchmark_learner(seed=0))
    star = simclass.members[simclass.index_of("star")]
    rep = harness.evaluate_gap(spec, star, cost, H=1500, reps=2, seed=1)
    assert rep.policy.kind == "lqg_vtr"
    assert math.isfinite(rep.V_pi) and rep.V_pi > 0.0
    assert rep.details["halted"] == [False, False]
    assert len(rep.details["final_model"]) == 2
    assert all(m in simclass.ids for m in rep.details["final_model"])
    doc = rep.to_dict()
    assert doc["true_model"] == "star"
    assert set(doc) >= {"policy", "kind", "V_pi", "V_star", "gap",
                        "std_error", "H", "reps", "seed"}


def test_gap_rejects_bad_horizon(bench):
    simclass, cost = bench
    with pytest.raises(ValueError, match="H must be"):
        harness.evaluate_gap(harness.PolicySpec.zero(),
                             simclass.members[0], cost, H=0)


# ---------------------------------------------------------------------------
# Reduction diagnostic


def test_reduction_constant_offset():
    system = lqg.LqgSystem([[0.5]], [[1.0]], [[1.3]])
    cost = lqg.CostSpec([[1.0]], [[0.5]])
    rep = harness.reduction_diagnostic(system, cost, [20, 40, 80, 160])
    assert rep.spread < 1e-8 * abs(rep.mean)
    assert abs(rep.slope) < 1e-9
    assert rep.empirical_Dh == pytest.approx(max(abs(d)
                                                 for d in rep.differences))
    assert rep.mean == pytest.approx(rep.differences[0], rel=1e-7)
    doc = rep.to_dict()
    assert doc["H"] == [20, 40, 80, 160]
    assert len(doc["difference"]) == 4


def test_reduction_detects_per_step_growth():
    # Sanity check on the trend fit itself: feeding a deliberately wrong
    # (inflated) stationary rate must show up as a clear negative slope.
    system = lqg.LqgSystem([[0.5]], [[1.0]], [[1.3]])
    cost = lqg.CostSpec([[1.0]], [[0.5]])
    solved = lqg.solve(system, cost)
    H_values = [20, 40, 80]
    diffs = [lqg.finite_horizon_optimal(system, cost, h).V_star
             - (h + 1) * (solved.J_star + 0.01) for h in H_values]
    x = np.array(H_values, dtype=float)
    slope = np.polyfit(x, np.array(diffs), 1)[0]
    assert slope == pytest.approx(-0.01, rel=1e-6)
    rep = harness.reduction_diagnostic(system, cost, H_values)
    assert abs(rep.slope) < 1e-3 * abs(slope)


def test_reduction_rejects_bad_horizons():
    system = lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]])
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        harness.reduction_diagnostic(system, cost, [10, 0])
