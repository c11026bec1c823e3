import numpy as np
import pytest

from safemdp.augmentation import AugmentedMdp, penalized_return
from safemdp.dp import value_iteration
from safemdp.estimation import ErrorBound
from safemdp.mdp_core import AUGMENTED, PolicyTable, ValueTable, optimal_values, policy_return, policy_values
from safemdp.oracle import (
    EnumerationTooLarge,
    InfeasibleConstraint,
    augmented_policy_returns,
    batched_values,
    dual_curve,
    dual_grid_search,
    enumerate_policies,
    exact_constrained_optimum,
    lambda_grid,
    perturb_transitions,
    random_mdp,
    strong_duality_gap,
    upper_envelope,
)

from instances import perturbed_pair, strictly_feasible


# ---------------------------------------------------------------- generators


def test_random_mdp_is_seeded_and_valid():
    a, b = random_mdp(4, 3, 0.9, 5), random_mdp(4, 3, 0.9, 5)
    assert np.array_equal(a.transitions, b.transitions)
    assert np.allclose(a.transitions.sum(axis=2), 1.0)
    assert np.all(np.abs(a.rewards) <= a.r_max)


def test_zero_perturbation_is_identity():
    mdp = random_mdp(3, 2, 0.9, 1)
    assert np.allclose(perturb_transitions(mdp, 0.0, 7).transitions, mdp.transitions, atol=1e-15)
    with pytest.raises(ValueError):
        perturb_transitions(mdp, 1.5, 7)


# --------------------------------------------------------------- enumeration


def test_enumeration_counts_and_uniqueness():
    assert len(list(enumerate_policies(1, 3))) == 3
    tables = [tuple(p.table) for p in enumerate_policies(2, 2, augmented=True)]
    assert len(tables) == 16 and len(set(tables)) == 16
    plain = [tuple(p.table) for p in enumerate_policies(3, 2)]
    assert len(set(plain)) == 8
    assert plain[0] == (0, 0, 0) and plain[-1] == (1, 1, 1)


def test_enumeration_guard():
    with pytest.raises(EnumerationTooLarge):
        next(enumerate_policies(8, 10, augmented=True))


def test_batched_values_match_direct_evaluation():
    mdp = random_mdp(4, 3, 0.9, 2)
    policies = list(enumerate_policies(4, 3))
    tables = np.array([p.table for p in policies])
    values = batched_values(mdp, tables)
    for k in (0, 17, 80):
        assert np.allclose(values[k], policy_values(mdp, policies[k]), atol=1e-12)


def test_enumerated_maximum_matches_value_iteration():
    true, sim, error = perturbed_pair(3, 2, 0.9, 3, weight=0.2)
    aug = AugmentedMdp.penalized(sim, error, 0.7)
    _, returns = augmented_policy_returns(aug)
    limit, _ = value_iteration(aug, ValueTable(np.zeros(6), AUGMENTED))
    assert returns.max() == pytest.approx(float(aug.p0 @ limit.values), abs=1e-8)


# ----------------------------------------------------------- upper envelope


def test_upper_envelope_matches_brute_force():
    rng = np.random.default_rng(4)
    intercept = rng.normal(size=300)
    slope = rng.integers(-20, 20, size=300) / 4.0
    a, b = upper_envelope(intercept, slope)
    assert a.size < 300
    for lam in np.linspace(-10, 10, 401):
        assert np.max(a + lam * b) == pytest.approx(np.max(intercept + lam * slope), abs=1e-12)


def test_upper_envelope_of_parallel_lines():
    a, b = upper_envelope(np.array([1.0, 3.0, 2.0]), np.zeros(3))
    assert a.tolist() == [3.0] and b.tolist() == [0.0]


# ------------------------------------------------------ constrained optimum


def test_vacuous_threshold_gives_simulated_optimum():
    true, sim, _ = perturbed_pair(3, 2, 0.9, 5)
    result = exact_constrained_optimum(true, sim, -1e3)
    v, best = optimal_values(sim)
    assert result.best_policy_value == pytest.approx(v[0], abs=1e-9)
    assert result.primal_value == pytest.approx(v[0], abs=1e-7)
    assert result.lambda_star == pytest.approx(0.0, abs=1e-9)
    assert result.enumerated_count == 8


def test_tight_threshold_selects_true_optimum():
    true, sim, _ = perturbed_pair(3, 2, 0.9, 6)
    v_true, best = optimal_values(true)
    result = exact_constrained_optimum(true, sim, v_true[0])
    assert policy_return(true, result.best_policy) == pytest.approx(v_true[0], abs=1e-7)


def test_unreachable_threshold_raises():
    true, sim, _ = perturbed_pair(3, 2, 0.9, 7)
    with pytest.raises(InfeasibleConstraint):
        exact_constrained_optimum(true, sim, true.value_bound + 1.0)


def test_relaxation_dominates_and_measures_are_normalised():
    for seed in range(10):
        true, sim, _ = perturbed_pair(4, 2, 0.9, seed, weight=0.3)
        m_b = policy_return(true, PolicyTable.uniform(4, 2)) + 0.3
        try:
            result = exact_constrained_optimum(true, sim, m_b)
        except InfeasibleConstraint:
            continue
        assert result.primal_value >= result.best_policy_value - 1e-7
        assert abs(result.occupation.sum() - 1.0) <= 1e-9
        assert result.duality_gap <= 1e-6


def test_best_policy_is_feasible_and_optimal_by_brute_force():
    true, sim, _ = perturbed_pair(3, 3, 0.9, 8, weight=0.3)
    m_b = policy_return(true, PolicyTable.uniform(3, 3)) + 0.2
    result = exact_constrained_optimum(true, sim, m_b)
    brute = max(policy_return(sim, p) for p in enumerate_policies(3, 3) if policy_return(true, p) >= m_b)
    assert result.best_policy_value == pytest.approx(brute, abs=1e-12)
    assert policy_return(true, result.best_policy) >= m_b - 1e-7


# -------------------------------------------------------------- dual side


def test_zero_grid_gives_unconstrained_optimum():
    true, sim, error = perturbed_pair(3, 2, 0.9, 9)
    lam, f = dual_grid_search(sim, error, 0.2, [0.0])
    v, _ = optimal_values(sim)
    assert lam == 0.0
    assert f == pytest.approx(v[0], abs=1e-9)


def test_slack_exact_model_has_zero_multiplier():
    mdp = random_mdp(3, 2, 0.9, 10)
    m_b = policy_return(mdp, PolicyTable.uniform(3, 2))
    lam, f = dual_grid_search(mdp, ErrorBound.zeros(3, 2), m_b, lambda_grid(2.0, 0.01))
    assert lam == 0.0
    assert f == pytest.approx(optimal_values(mdp)[0][0], abs=1e-9)


def test_grid_search_rejects_bad_grids():
    true, sim, error = perturbed_pair(2, 2, 0.9, 11)
    with pytest.raises(ValueError):
        dual_grid_search(sim, error, 0.0, [])
    with pytest.raises(ValueError):
        dual_grid_search(sim, error, 0.0, [1.0, 0.5])


def test_dual_curve_agrees_with_policy_iteration():
    true, sim, error = perturbed_pair(3, 2, 0.9, 12, weight=0.3)
    m_b = policy_return(true, PolicyTable.uniform(3, 2)) + 1.0
    grid = np.linspace(0, 5, 11)
    curve = dual_curve(sim, error, m_b, grid)
    for lam, f in zip(grid, curve):
        _, f_pi = dual_grid_search(sim, error, m_b, [lam])
        assert f == pytest.approx(f_pi, abs=1e-8)


def test_dual_curve_is_convex():
    true, sim, error = perturbed_pair(3, 3, 0.9, 13, weight=0.4)
    m_b = policy_return(true, PolicyTable.uniform(3, 3)) + 1.5
    curve = dual_curve(sim, error, m_b, lambda_grid(10.0, 0.01))
    assert np.all(np.diff(curve, 2) >= -1e-9)


def test_penalized_dual_decouples_into_lines():
    # With separate track policies the dual is V_hat* + lambda (W* - m_b).
    true, sim, error = perturbed_pair(3, 2, 0.9, 14, weight=0.2)
    m_b = 0.1
    w_star = max(penalized_return(sim, error, p) for p in enumerate_policies(3, 2))
    v_star = optimal_values(sim)[0][0]
    grid = np.array([0.0, 0.5, 2.0])
    assert np.allclose(dual_curve(sim, error, m_b, grid), v_star + grid * (w_star - m_b), atol=1e-9)


def test_strong_duality_on_strictly_feasible_instance():
    true, sim, error, m_b = strictly_feasible(3, 3, 2, gamma=0.9)
    assert strong_duality_gap(true, sim, m_b, lambda_grid(20.0, 1e-3)) <= 1e-4


def test_two_track_multiplier_vanishes_below_true_optimum():
    # Track 1 can run the true-model optimum on its own, so the constraint only
    # binds when the threshold equals that optimum.
    true, sim, _ = perturbed_pair(3, 2, 0.9, 15, weight=0.5)
    v_true, _ = optimal_values(true)
    v_sim, _ = optimal_values(sim)
    for gap in (0.5, 0.05, 1e-3):
        result = exact_constrained_optimum(true, sim, v_true[0] - gap)
        assert result.lambda_star == pytest.approx(0.0, abs=1e-9)
        assert result.primal_value == pytest.approx(v_sim[0], abs=1e-7)
        assert strong_duality_gap(true, sim, v_true[0] - gap, lambda_grid(20.0, 1e-3)) <= 1e-4
