"""Tests for the joint (state, belief) value iteration and its belief lattice."""

import numpy as np
import pytest

from covertmdp import (
    EmptyAdmissibleSet,
    MdpModel,
    ObservationModel,
    SizeOverflow,
    example1_model,
    extract_nominal_policy,
    induced_chain,
    nominal_value_iteration,
    point_belief,
    uniform_belief,
)
from covertmdp.augmented import (
    AugmentedValueFunction,
    action_values,
    augmented_backup,
    build_simplex_grid,
    greedy_action,
    interpolate_value,
    interpolation_weights,
    load_value_file,
    save_value_file,
    solve_augmented_vi,
)
from covertmdp.mdp import bellman_backup

from _oracles import composition_count


def nominal_chain(model):
    result = nominal_value_iteration(model)
    policy = extract_nominal_policy(model, result.values)
    return induced_chain(model, policy), result.values


def smoothed_example1():
    """Example model with the sensor blurred so no reading is impossible."""
    model, obs = example1_model()
    q = 0.7 * obs.likelihood + 0.3 / obs.num_observations
    return model, ObservationModel(obs.num_observations, q)


def test_grid_size_matches_composition_count():
    for n, res in [(2, 1), (2, 10), (3, 10), (4, 5), (5, 3)]:
        grid = build_simplex_grid(n, res)
        assert grid.num_points == composition_count(res, n)


def test_grid_points_are_lattice_beliefs():
    grid = build_simplex_grid(3, 10)
    assert np.all(grid.points >= 0.0)
    np.testing.assert_allclose(grid.points.sum(axis=1), 1.0, atol=1e-15)
    np.testing.assert_array_equal(grid.compositions.sum(axis=1), 10)
    for g in range(grid.num_points):
        assert grid.index_of(grid.compositions[g]) == g


def test_build_grid_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_simplex_grid(0, 10)
    with pytest.raises(ValueError):
        build_simplex_grid(3, 0)
    with pytest.raises(SizeOverflow):
        build_simplex_grid(20, 50)


def test_interpolation_reproduces_vertices_exactly():
    rng = np.random.default_rng(0)
    grid = build_simplex_grid(3, 10)
    table = rng.normal(size=grid.num_points)
    for g in range(grid.num_points):
        assert interpolate_value(grid, table, grid.points[g]) == table[g]


def test_interpolation_is_exact_on_constants_and_linear_forms():
    rng = np.random.default_rng(1)
    grid = build_simplex_grid(3, 10)
    a = rng.normal(size=3)
    linear = grid.points @ a
    constant = np.full(grid.num_points, 0.8315)
    for _ in range(500):
        o = rng.dirichlet(np.ones(3))
        assert abs(interpolate_value(grid, constant, o) - 0.8315) < 1e-12
        assert abs(interpolate_value(grid, linear, o) - a @ o) < 1e-12


def test_interpolation_weights_form_a_convex_combination():
    rng = np.random.default_rng(2)
    grid = build_simplex_grid(4, 7)
    for _ in range(2000):
        o = rng.dirichlet(np.full(4, 0.5))
        idx, w = interpolation_weights(grid, o)
        assert len(idx) == len(w) <= 4
        assert np.all(w > 0.0)
        assert abs(w.sum() - 1.0) < 1e-12
        # the chosen vertices reconstruct the query point itself
        np.testing.assert_allclose(grid.points[idx].T @ w, o, atol=1e-12)


def test_interpolation_weights_reject_wrong_shape():
    grid = build_simplex_grid(3, 4)
    with pytest.raises(ValueError):
        interpolation_weights(grid, np.array([0.5, 0.5]))


def test_pure_reward_solution_reduces_to_nominal_values():
    # With an always-informative sensor nothing is ever prohibited, and with
    # zero exposure weight the belief coordinate is irrelevant: the joint
    # value collapses to the plain state value at every lattice point.
    model, obs = smoothed_example1()
    pa, nominal = nominal_chain(model)
    result = solve_augmented_vi(model, obs, pa, 1.0, 0.0, resolution=5, tol=1e-8)
    assert result.converged
    assert result.fallback_points == ()
    expected = np.repeat(nominal[:, None], result.value.grid.num_points, axis=1)
    np.testing.assert_allclose(result.value.values, expected, atol=1e-6)


def test_pure_exposure_solution_is_nonpositive():
    model, obs = smoothed_example1()
    pa, _ = nominal_chain(model)
    result = solve_augmented_vi(model, obs, pa, 0.0, 1.0, resolution=5, tol=1e-8)
    assert result.converged
    assert np.all(result.value.values <= 1e-9)
    assert result.value.values.min() < -0.5  # being pinned down really costs


def test_backup_fixed_point_residual():
    model, obs = smoothed_example1()
    pa, _ = nominal_chain(model)
    result = solve_augmented_vi(model, obs, pa, 0.5, 0.5, resolution=4, tol=1e-9)
    again = augmented_backup(model, obs, pa, result.value)
    assert np.max(np.abs(again - result.value.values)) < 1e-8


def test_greedy_action_pure_reward_matches_nominal_policy():
    model, obs = smoothed_example1()
    pa, nominal = nominal_chain(model)
    policy = extract_nominal_policy(model, nominal)
    # sanity: the nominal argmax is well separated, so tolerance can't flip it
    table = bellman_backup(model, nominal)
    sorted_q = np.sort(table, axis=1)
    assert np.all(sorted_q[:, -1] - sorted_q[:, -2] > 1e-3)
    result = solve_augmented_vi(model, obs, pa, 1.0, 0.0, resolution=5, tol=1e-8)
    for x in range(model.num_states):
        for o in [uniform_belief(3), point_belief(3, 0), point_belief(3, 2)]:
            assert greedy_action(model, obs, pa, result.value, x, o) == policy.actions[x]


def both_actions_jump_model():
    """Both actions leave state 0, which an identity sensor always reveals."""
    transition = np.zeros((2, 2, 2))
    transition[1, 0, :] = 1.0
    transition[1, 1, :] = 1.0
    model = MdpModel(2, 2, transition, np.zeros((2, 2)), 0.9)
    obs = ObservationModel(2, np.eye(2))
    pa = np.eye(2)  # the observer expects no motion at all
    return model, obs, pa


def test_action_values_mark_inadmissible_actions():
    model, obs, pa = both_actions_jump_model()
    o = point_belief(2, 0)
    vals = action_values(model, obs, pa, o=o, x=0, value=_zero_value(model, 3))
    assert np.all(np.isneginf(vals))
    with pytest.raises(EmptyAdmissibleSet):
        greedy_action(model, obs, pa, _zero_value(model, 3), 0, o)


def _zero_value(model, resolution):
    grid = build_simplex_grid(model.num_states, resolution)
    return AugmentedValueFunction(
        grid, np.zeros((model.num_states, grid.num_points)), 1.0, 1.0
    )


def test_solver_rejects_hopeless_grid_points():
    # Staying at a vertex belief is impossible to explain: every action's
    # entire observation mass lands on readings the observer rules out, so
    # even the relaxed backup has nothing to renormalize.
    model, obs, pa = both_actions_jump_model()
    with pytest.raises(EmptyAdmissibleSet):
        solve_augmented_vi(model, obs, pa, 1.0, 1.0, resolution=2, tol=1e-8)


def test_solver_reports_fallback_points():
    # One action that half-stays: banned at vertex beliefs (it can emit the
    # reading for the other state, which the static observer rules out), yet
    # the explainable half survives, so the backup relaxes and records it.
    transition = np.full((2, 2, 1), 0.5)
    model = MdpModel(2, 1, transition, np.zeros((2, 1)), 0.9)
    obs = ObservationModel(2, np.eye(2))
    pa = np.eye(2)
    result = solve_augmented_vi(model, obs, pa, 1.0, 1.0, resolution=2, tol=1e-8)
    grid = result.value.grid
    pinned_on_0 = grid.index_of((2, 0))
    pinned_on_1 = grid.index_of((0, 2))
    for x in (0, 1):
        assert (x, pinned_on_0) in result.fallback_points
        assert (x, pinned_on_1) in result.fallback_points
    assert result.converged


def test_evaluate_matches_manual_interpolation():
    rng = np.random.default_rng(5)
    grid = build_simplex_grid(3, 6)
    values = rng.normal(size=(3, grid.num_points))
    vf = AugmentedValueFunction(grid, values, 1.0, 0.5)
    for _ in range(100):
        o = rng.dirichlet(np.ones(3))
        x = int(rng.integers(3))
        assert abs(vf.evaluate(x, o) - interpolate_value(grid, values[x], o)) < 1e-15


def test_value_file_roundtrip(tmp_path):
    model, obs = smoothed_example1()
    pa, _ = nominal_chain(model)
    result = solve_augmented_vi(model, obs, pa, 0.7, 0.3, resolution=3, tol=1e-6)
    path = tmp_path / "value.json"
    save_value_file(result.value, path)
    back = load_value_file(path)
    assert back.grid.num_states == 3
    assert back.grid.resolution == 3
    assert back.reward_weight == 0.7
    assert back.exposure_weight == 0.3
    np.testing.assert_allclose(back.values, result.value.values, atol=1e-15)


def test_load_value_file_rejects_mismatched_table(tmp_path):
    import json

    path = tmp_path / "value.json"
    doc = {
        "num_states": 3,
        "resolution": 2,
        "reward_weight": 1.0,
        "exposure_weight": 0.0,
        "values": [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]],  # wrong width
    }
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_value_file(path)
