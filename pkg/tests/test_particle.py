# /superlab/tests/test_particle.py

import numpy as np
import pytest

from noise import sample_sheet, sample_bm, sample_bm_increments, zero_sheet, replica_seed, discrete_norm_sq
from particle import (
    SCHEME_EULER, SCHEME_EXPONENTIAL, simulate_paths, simulate_path, simulate_system, derivative_triangle,
    first_derivative, first_derivative_batch, second_derivative, second_derivative_batch, malliavin_state,
    finite_difference_gradient, exit_margin, triangular_derivatives,
)
from utils.errors import ParticleError


def test_zero_kernel_path_is_brownian(grid, zero):
    sheet = sample_sheet(grid, 1)
    bm = sample_bm(grid, 1, "B/0")
    path = simulate_path(zero, sheet, bm, 2, 0.5, 10)
    assert np.allclose(path.positions, 0.5 + np.concatenate([[0.0], np.cumsum(bm.increments[2:10])]))
    D1 = first_derivative(path)
    assert np.array_equal(D1[2:10], np.ones(8))
    assert not np.any(D1[:2]) and not np.any(D1[10:])
    assert not np.any(second_derivative(zero, sheet, path))


def test_zero_kernel_malliavin_state(grid, zero):
    sheet = sample_sheet(grid, 2)
    bm = sample_bm(grid, 2, "B/0")
    path = simulate_path(zero, sheet, bm, 0, 0.0, grid.n_t)
    state = malliavin_state(zero, path)
    assert state.h_norm_sq == pytest.approx(1.0)
    assert state.divergence == pytest.approx(bm.values[-1])
    assert state.trace == 0.0


def test_euler_derivative_is_the_exact_gradient(grid, bump):
    sheet = sample_sheet(grid, 3)
    bm = sample_bm(grid, 3, "B/0")
    path = simulate_path(bump, sheet, bm, 0, 0.2, grid.n_t)
    exact = first_derivative(path, scheme=SCHEME_EULER)
    numeric = finite_difference_gradient(bump, sheet, bm, 0, 0.2, grid.n_t)
    assert np.allclose(exact, numeric, rtol=1e-5, atol=1e-7)


def test_exponential_and_euler_forms_agree_to_first_order(bump):
    from noise import GridSpec

    fine = GridSpec(t_max=0.25, n_t=256, x_min=-12.0, x_max=12.0, n_x=192)
    sheet = sample_sheet(fine, 4)
    bm = sample_bm(fine, 4, "B/0")
    path = simulate_path(bump, sheet, bm, 0, 0.0, fine.n_t)
    exp_form = first_derivative(path)
    euler_form = first_derivative(path, scheme=SCHEME_EULER)
    assert np.allclose(exp_form, euler_form, rtol=0.05)


def test_single_path_and_batch_derivatives_agree(grid, bump):
    sheet = sample_sheet(grid, 5)
    bm = sample_bm(grid, 5, "B/0")
    path = simulate_path(bump, sheet, bm, 0, 0.0, grid.n_t)
    batch_d1 = first_derivative_batch(path.batch, grid.n_t)[0]
    assert np.allclose(first_derivative(path), batch_d1, rtol=1e-12)
    tri = derivative_triangle(path.batch, grid.n_t)[0]
    assert np.allclose(tri[:, grid.n_t], batch_d1, rtol=1e-12)

    local = triangular_derivatives(path, at_index=10)
    assert local.shape == (10, 11)
    assert np.allclose(local[:, 10], first_derivative(path, at_index=10)[:10], rtol=1e-12)
    assert not np.any(np.tril(local[:, :10]))


def test_triangle_does_not_depend_on_the_end_time(grid, bump):
    sheet = sample_sheet(grid, 6)
    increments = sample_bm_increments(grid, 6, range(4))
    batch = simulate_paths(bump, sheet, increments, 0, 0.0, grid.n_t)
    full = derivative_triangle(batch, grid.n_t)
    part = derivative_triangle(batch, 8)
    assert np.allclose(full[:, :8, :9], part, rtol=1e-12)


def test_second_derivative_is_symmetric(grid, bump):
    sheet = sample_sheet(grid, 7)
    bm = sample_bm(grid, 7, "B/0")
    path = simulate_path(bump, sheet, bm, 0, 0.0, grid.n_t)
    D2 = second_derivative(bump, sheet, path)
    assert np.any(D2)
    assert np.allclose(D2, D2.T, rtol=1e-9, atol=1e-12)


def test_start_and_exit_checks(grid, zero, bump):
    sheet = zero_sheet(grid)
    with pytest.raises(ParticleError) as err:
        simulate_paths(zero, sheet, np.full((1, grid.n_t), 5.0), 0, 0.0, grid.n_t)
    assert err.value.code == "domain-exit"
    with pytest.raises(ParticleError) as err:
        simulate_paths(bump, sheet, np.zeros((1, grid.n_t)), 0, 11.9, grid.n_t)
    assert err.value.code == "invalid-argument"
    with pytest.raises(ParticleError) as err:
        simulate_paths(zero, sheet, np.zeros((1, grid.n_t + 1)), 0, 0.0, grid.n_t)
    assert err.value.code == "shape-error"
    with pytest.raises(ParticleError):
        simulate_paths(zero, sheet, np.zeros((1, grid.n_t)), 4, 0.0, 4)


def test_system_density_is_a_probability_density(grid, bump):
    sheet = sample_sheet(grid, 8)
    snapshot = simulate_system(bump, sheet, np.zeros(500), 8, grid.n_t)
    assert snapshot.positions.shape == (500,)
    assert np.sum(snapshot.density) * grid.dy == pytest.approx(1.0)


def test_exit_margin(grid, zero, bump):
    assert exit_margin(grid, zero) == pytest.approx(12.0)
    assert exit_margin(grid, bump) == pytest.approx(12.0 - bump.support_radius)


@pytest.mark.parametrize("seed", [9, 10])
def test_euler_second_derivative_matches_differenced_gradient(grid, bump, seed):
    from dataclasses import replace

    sheet = sample_sheet(grid, seed)
    bm = sample_bm(grid, seed, "B/0")
    path = simulate_path(bump, sheet, bm, 0, 0.2, grid.n_t)
    exact = second_derivative(bump, sheet, path, scheme=SCHEME_EULER)
    step = 1e-5
    numeric = np.zeros_like(exact)
    for eta in range(grid.n_t):
        up, down = bm.increments.copy(), bm.increments.copy()
        up[eta] += step
        down[eta] -= step
        hi = first_derivative(simulate_path(bump, sheet, replace(bm, increments=up), 0, 0.2, grid.n_t),
                              scheme=SCHEME_EULER)
        lo = first_derivative(simulate_path(bump, sheet, replace(bm, increments=down), 0, 0.2, grid.n_t),
                              scheme=SCHEME_EULER)
        numeric[eta] = (hi - lo) / (2.0 * step)
    assert np.any(numeric)
    assert np.max(np.abs(exact - numeric)) <= 1e-4 * np.max(np.abs(numeric))


def _environment_means(values_by_env) -> tuple[float, float]:
    means = np.array([np.mean(v) for v in values_by_env])
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(means.size))


def _environment_batches(grid, kernel, n_env: int, n_paths: int, seed: int):
    for k in range(n_env):
        env_seed = replica_seed(seed, k)
        sheet = sample_sheet(grid, env_seed)
        yield simulate_paths(kernel, sheet, sample_bm_increments(grid, env_seed, range(n_paths)), 0, 0.0, grid.n_t)


@pytest.mark.parametrize("scheme", [SCHEME_EXPONENTIAL, SCHEME_EULER])
def test_first_derivative_has_unit_mean(grid, bump, scheme):
    firsts = [first_derivative_batch(batch, grid.n_t, scheme)[:, 0]
              for batch in _environment_batches(grid, bump, 40, 200, 60)]
    mean, se = _environment_means(firsts)
    assert abs(mean - 1.0) <= 4.0 * se


def test_euler_second_derivative_has_zero_mean(grid, bump):
    entries = []
    for batch in _environment_batches(grid, bump, 40, 200, 61):
        tri = derivative_triangle(batch, grid.n_t, SCHEME_EULER)
        d2 = second_derivative_batch(batch, tri, grid.n_t, scheme=SCHEME_EULER)
        entries.append(d2[:, 0, 0] + d2[:, 3, 7])
    mean, se = _environment_means(entries)
    assert se > 0
    assert abs(mean) <= 4.0 * se


def test_path_variance_is_the_annealed_diffusivity(grid, bump):
    squares = [batch.endpoint() ** 2 for batch in _environment_batches(grid, bump, 40, 500, 62)]
    mean, se = _environment_means(squares)
    expected = (1.0 + discrete_norm_sq(grid, bump, 0, 0.0)) * grid.t_max
    assert abs(mean - expected) <= 4.0 * se + 0.02 * expected
