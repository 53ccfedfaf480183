import numpy as np
import pytest

from lqgvtr import benchmarks, lqg, model_class


def test_scalar_validation_certificates():
    rep = model_class.validate_assumptions(
        lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]]),
        lqg.CostSpec([[1.0]], [[1.0]]))
    assert rep.passed
    assert rep.certified["rho"] == pytest.approx(0.5)
    # scalar chain: P = 1.13278..., K = 0.5 P / (1 + P), |A - BK| = 0.2344
    assert rep.certified["K_norm"] == pytest.approx(0.265565, abs=1e-5)
    assert rep.certified["closed_loop_norm"] == pytest.approx(0.234435,
                                                              abs=1e-5)


def test_unstable_member_fails_first_check():
    rep = model_class.validate_assumptions(
        lqg.LqgSystem([[1.1]], [[1.0]], [[1.0]]),
        lqg.CostSpec([[1.0]], [[1.0]]))
    assert not rep.passed
    assert rep.checks[0][0] == "open_loop_stable"
    assert not rep.checks[0][1]
    assert len(rep.checks) == 1  # short-circuit: nothing else ran


def test_unobservable_member_flagged():
    rep = model_class.validate_assumptions(
        lqg.LqgSystem([[0.5]], [[1.0]], [[0.0]]),
        lqg.CostSpec([[1.0]], [[1.0]]))
    assert not rep.passed
    assert any(name == "controllable_observable" and not ok
               for name, ok, _ in rep.checks)


def test_norm_cap_enforced():
    limits = model_class.AssumptionLimits(N_S=0.4)
    rep = model_class.validate_assumptions(
        lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]]),
        lqg.CostSpec([[1.0]], [[1.0]]), limits=limits)
    assert not rep.passed
    assert any(name == "param_norms" and not ok for name, ok, _ in rep.checks)


def test_simulator_class_prunes_not_raises():
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    good = lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]], name="good")
    bad = lqg.LqgSystem([[1.2]], [[1.0]], [[1.0]], name="bad")
    sc = model_class.SimulatorClass([good, bad], cost)
    assert sc.ids == ["good"]
    assert [s.name for s, _ in sc.pruned] == ["bad"]
    assert sc.index_of("good") == 0
    assert sc.solved_by_id("good").J_star > 0


def test_empty_class_raises():
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    bad1 = lqg.LqgSystem([[1.2]], [[1.0]], [[1.0]])
    bad2 = lqg.LqgSystem([[0.5]], [[1.0]], [[0.0]])
    with pytest.raises(model_class.EmptyClass):
        model_class.SimulatorClass([bad1, bad2], cost)


def test_default_member_names():
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    sc = model_class.SimulatorClass(
        [lqg.LqgSystem([[0.3]], [[1.0]], [[1.0]]),
         lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]])], cost)
    assert sc.ids == ["m0", "m1"]


def test_profile_formulas_and_domination():
    sc = benchmarks.benchmark_class()
    prof = sc.profile
    g1, g2 = prof.gamma1, prof.gamma2
    assert prof.N_P == pytest.approx(
        prof.N_U * (prof.N_S ** 2 + prof.N_K ** 2) / (2 * g1 - g1 ** 2))
    assert prof.N_Sigma == pytest.approx(
        prof.kappa2 ** 2 * (1 + prof.kappa2 ** 2) / (2 * g2 - g2 ** 2))
    assert prof.N_L == pytest.approx(prof.N_Sigma * prof.N_S)
    # arithmetic instance of the P-bound formula
    assert 1.0 * (1.0 ** 2 + 0.5 ** 2) / (2 * 0.5 - 0.25) == pytest.approx(5 / 3)
    # analytic bounds dominate every certified member value
    assert prof.P_norm_max <= prof.N_P + 1e-9
    assert prof.Sigma_norm_max <= prof.N_Sigma + 1e-9
    assert prof.L_norm_max <= prof.N_L + 1e-9
    for rep in sc.reports:
        assert max(rep.certified["norm_A"], rep.certified["norm_B"],
                   rep.certified["norm_C"]) <= prof.N_S + 1e-12
        assert rep.certified["K_norm"] <= prof.N_K + 1e-12


def test_profile_empirical_dominance_random():
    # members of one class share dims and cost; sample until 4 match
    rng = np.random.default_rng(21)
    systems, cost = [], None
    while len(systems) < 4:
        s, c = benchmarks.random_validated_system(rng, n_max=3, m_max=2,
                                                  p_max=2)
        if cost is None and (s.n, s.m, s.p) == (2, 1, 1):
            cost = c
            systems.append(s)
        elif cost is not None and (s.n, s.m, s.p) == (2, 1, 1):
            systems.append(s)
    sc = model_class.SimulatorClass(systems, cost)
    prof = sc.profile
    assert len(sc) >= 1
    for solved in sc.solved:
        assert np.linalg.norm(solved.P, 2) <= prof.N_P + 1e-9
        assert np.linalg.norm(solved.Sigma, 2) <= prof.N_Sigma + 1e-9
        assert np.linalg.norm(solved.L, 2) <= prof.N_L + 1e-9


def test_singleton_profile_equals_member():
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    sc = model_class.SimulatorClass(
        [lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]])], cost)
    rep = sc.reports[0]
    prof = sc.profile
    assert prof.N_K == rep.certified["K_norm"]
    assert prof.gamma1 == rep.certified["closed_loop_norm"]
    assert prof.kappa2 == rep.certified["kappa2"]


def test_subset_preserves_order_and_profile():
    sc = benchmarks.benchmark_class()
    sub = sc.subset(["f4", "star"])
    assert sub.ids == ["star", "f4"]  # original order, not request order
    assert len(sub) == 2
    with pytest.raises(model_class.EmptyClass):
        sc.subset(["nope"])


def test_lowrank_exact_linearity():
    b1 = lqg.LqgSystem([[0.4, 0.0], [0.0, 0.2]], [[1.0], [0.0]], [[1.0, 0.0]])
    b2 = lqg.LqgSystem([[0.0, 0.1], [0.1, 0.0]], [[0.0], [1.0]], [[0.0, 1.0]])
    spec = model_class.LowRankSpec([b1, b2])
    member = spec.combine([0.7, 0.3])
    assert np.array_equal(member.A, 0.7 * b1.A + 0.3 * b2.A)
    assert np.array_equal(member.B, 0.7 * b1.B + 0.3 * b2.B)
    assert np.array_equal(member.C, 0.7 * b1.C + 0.3 * b2.C)


def test_lowrank_identity_coefficients():
    b1 = lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]])
    spec = model_class.LowRankSpec([b1])
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    sc = model_class.instantiate_lowrank(spec, cost, coefficients=[[1.0]])
    assert len(sc) == 1
    assert np.array_equal(sc.members[0].A, b1.A)


def test_lowrank_grid_matches_brute_force():
    b1 = lqg.LqgSystem([[0.5, 0.1], [0.0, 0.3]], [[1.0], [0.2]], [[1.0, 0.4]])
    b2 = lqg.LqgSystem([[0.2, 0.0], [0.1, 0.4]], [[0.3], [1.0]], [[0.5, 1.0]])
    spec = model_class.LowRankSpec([b1, b2])
    cost = lqg.CostSpec([[1.0]], [[0.5]])
    axes = [[0.0, 0.5, 1.0], [0.0, 0.5, 1.0]]
    sc = model_class.instantiate_lowrank(spec, cost, grid=axes)
    # brute force the same sweep with the standalone validator
    import itertools
    expected = 0
    for t in itertools.product(*axes):
        member = spec.combine(t)
        if model_class.validate_assumptions(member, cost).passed:
            expected += 1
    assert len(sc) == expected
    assert len(sc) + len(sc.pruned) == 9


def test_lowrank_box_rejection():
    b1 = lqg.LqgSystem([[0.5]], [[1.0]], [[1.0]])
    spec = model_class.LowRankSpec([b1], box=[(0.0, 1.0)])
    with pytest.raises(ValueError):
        spec.combine([1.5])


def test_lowrank_all_pruned_raises():
    b1 = lqg.LqgSystem([[2.0]], [[1.0]], [[1.0]])  # unstable base
    spec = model_class.LowRankSpec([b1])
    cost = lqg.CostSpec([[1.0]], [[1.0]])
    with pytest.raises(model_class.EmptyClass):
        model_class.instantiate_lowrank(spec, cost, coefficients=[[1.0], [1.2]])


def test_true_member_never_pruned():
    # pruning soundness: a validated designated truth stays in the class
    sc = benchmarks.benchmark_class()
    assert benchmarks.BENCHMARK_TRUE_ID in sc.ids
    assert not any(s.name == benchmarks.BENCHMARK_TRUE_ID
                   for s, _ in sc.pruned)


def test_class_roundtrip(tmp_path):
    sc = benchmarks.benchmark_class()
    path = tmp_path / "class.json"
    model_class.save_class(path, sc)
    sc2 = model_class.read_class(path)
    assert sc2.ids == sc.ids
    assert np.allclose(sc2.cost.Q, sc.cost.Q)
    for a, b in zip(sc.members, sc2.members):
        assert np.allclose(a.A, b.A)
        assert np.allclose(a.C, b.C)
    assert sc2.profile.gamma2 == pytest.approx(sc.profile.gamma2)
