# /superlab/tests/test_spde.py

import numpy as np
import pytest
from scipy.stats import norm

from noise import GridSpec, sample_sheet, zero_sheet, replica_seed, STREAM_V
from spde import (
    InitialFamily, SchemeTag, ConvolutionSettings, initial_density, point_mass, evolve_fd, step_finite_difference,
    heat_semigroup, evolve_convolution, step_convolution, initial_term, crosscheck, diffusion_coefficient,
    cfl_number, mass_series, _new_state,
)
from utils.errors import SpdeError


@pytest.fixture
def mu(grid):
    return initial_density(grid, InitialFamily.GAUSSIAN_BUMP, {"mass": 1.0, "mean": 0.0, "sd": 0.5})


def test_initial_density_families(grid, mu):
    assert mu.mass == pytest.approx(1.0, rel=1e-6)
    box = initial_density(grid, "indicator", {"lo": -1.0, "hi": 1.0, "height": 2.0})
    assert box.mass == pytest.approx(2.0 * 4 * grid.dy)
    assert point_mass(grid).mass == pytest.approx(1.0)
    with pytest.raises(SpdeError) as err:
        initial_density(grid, "tabulated", {"values": np.ones(3)})
    assert err.value.code == "shape-error"
    with pytest.raises(SpdeError):
        initial_density(grid, "tabulated", {"values": -np.ones(grid.n_x)})


def test_diffusion_coefficient(grid, zero, bump):
    assert diffusion_coefficient(grid, zero) == 0.5
    assert diffusion_coefficient(grid, bump) == pytest.approx(0.5 * (1 + bump.norm_sq), rel=1e-3)
    assert diffusion_coefficient(grid, bump, nu_override=0.3) == 0.3


def test_fd_heat_flow_matches_the_exact_semigroup(grid, zero, mu):
    state = evolve_fd(mu, zero, zero_sheet(grid, "W"), zero_sheet(grid))
    assert state.scheme == SchemeTag.FINITE_DIFFERENCE
    for n in (1, 5, grid.n_t):
        exact = heat_semigroup(mu.values, grid, state.nu, n)
        assert np.allclose(state.X[n], exact, rtol=1e-10, atol=1e-13)


def test_transport_conserves_mass(grid, bump, mu):
    state = evolve_fd(mu, bump, sample_sheet(grid, 3), zero_sheet(grid))
    mass = mass_series(state)
    assert np.allclose(mass, mass[0], rtol=1e-10)


def test_zero_initial_data_stays_zero(grid, bump):
    empty = initial_density(grid, "indicator", {"lo": -1.0, "hi": 1.0, "height": 0.0})
    sheet_w, sheet_v = sample_sheet(grid, 4), sample_sheet(grid, 4, STREAM_V)
    fd = evolve_fd(empty, bump, sheet_w, sheet_v)
    assert not np.any(fd.X)
    conv = evolve_convolution(empty, bump, sheet_w, sheet_v, ConvolutionSettings(n_paths=8, seed=4))
    assert not np.any(conv.X)
    assert conv.paths_used == 0


def test_fd_errors(grid, zero, mu):
    with pytest.raises(SpdeError) as err:
        evolve_fd(mu, zero, zero_sheet(grid, "W"), zero_sheet(grid), nu_override=50.0)
    assert err.value.code == "cfl-violation"

    huge = initial_density(grid, "tabulated", {"values": np.full(grid.n_x, 2e6)})
    with pytest.raises(SpdeError) as err:
        evolve_fd(huge, zero, zero_sheet(grid, "W"), zero_sheet(grid))
    assert err.value.code == "blowup"

    state = _new_state(grid, mu, SchemeTag.FINITE_DIFFERENCE, zero_sheet(grid, "W"), zero_sheet(grid))
    state.nu = 0.5
    with pytest.raises(SpdeError):
        step_finite_difference(state, zero, zero_sheet(grid, "W"), zero_sheet(grid), i=3)

    other = GridSpec(t_max=1.0, n_t=16, x_min=-12.0, x_max=12.0, n_x=24)
    with pytest.raises(SpdeError) as err:
        evolve_fd(mu, zero, zero_sheet(other, "W"), zero_sheet(other))
    assert err.value.code == "shape-error"


def test_cfl_number(grid):
    assert cfl_number(grid, 0.5) == pytest.approx(0.5 * grid.dt / grid.dy ** 2)


def test_initial_term_is_the_heat_convolution(grid, zero):
    box = initial_density(grid, "indicator", {"lo": -0.5, "hi": 0.5, "height": 1.0})
    values, se = initial_term(box, zero, zero_sheet(grid, "W"), 8, n_paths=2000, seed=5)
    sources = np.flatnonzero(box.values)
    exact = sum(box.values[j] * grid.dy * norm.pdf(grid.y, loc=grid.y[j], scale=np.sqrt(0.5)) for j in sources)
    assert values.shape == (grid.n_x,)
    assert np.all(np.abs(values - exact) <= 5.0 * se + 1e-3)

    rows, _ = initial_term(box, zero, zero_sheet(grid, "W"), [4, 8], n_paths=2000, seed=5)
    assert rows.shape == (2, grid.n_x)
    assert np.allclose(rows[1], values)
    with pytest.raises(SpdeError):
        initial_term(box, zero, zero_sheet(grid, "W"), 0, n_paths=2000, seed=5)


def test_convolution_without_branching_tracks_heat_flow(zero):
    coarse = GridSpec(t_max=1.0, n_t=8, x_min=-12.0, x_max=12.0, n_x=48)
    box = initial_density(coarse, "indicator", {"lo": -0.5, "hi": 0.5, "height": 1.0})
    settings = ConvolutionSettings(n_paths=4000, seed=6)
    conv = evolve_convolution(box, zero, zero_sheet(coarse, "W"), zero_sheet(coarse), settings)
    fd = evolve_fd(box, zero, zero_sheet(coarse, "W"), zero_sheet(coarse))
    assert conv.scheme == SchemeTag.CONVOLUTION
    assert conv.step == coarse.n_t
    assert not np.any(conv.X2)
    rel = crosscheck(conv, fd)
    assert rel[0] == 0.0
    assert rel[-1] < 0.1


def test_budget_is_enforced(grid, zero, mu):
    per_query = ConvolutionSettings(n_paths=200, seed=7, density_budget=150)
    with pytest.raises(SpdeError) as err:
        evolve_convolution(mu, zero, zero_sheet(grid, "W"), zero_sheet(grid), per_query)
    assert err.value.code == "budget-exceeded"
    assert "per density query" in str(err.value)

    total = ConvolutionSettings(n_paths=100, seed=7, density_budget=150, total_path_budget=150)
    with pytest.raises(SpdeError) as err:
        evolve_convolution(mu, zero, zero_sheet(grid, "W"), zero_sheet(grid), total)
    assert err.value.code == "budget-exceeded"
    assert "total budget" in str(err.value)


def test_step_convolution_needs_an_initial_term(grid, zero, mu):
    state = _new_state(grid, mu, SchemeTag.CONVOLUTION, zero_sheet(grid, "W"), zero_sheet(grid))
    with pytest.raises(SpdeError):
        step_convolution(state, zero, zero_sheet(grid, "W"), zero_sheet(grid), ConvolutionSettings(n_paths=8, seed=1))


def test_crosscheck_of_a_field_with_itself(grid, zero, bump, mu):
    fd = evolve_fd(mu, bump, sample_sheet(grid, 8), sample_sheet(grid, 8, STREAM_V))
    assert np.all(crosscheck(fd, fd) == 0.0)
    other = GridSpec(t_max=1.0, n_t=8, x_min=-12.0, x_max=12.0, n_x=48)
    small = evolve_fd(initial_density(other, "gaussian_bump"), zero, sample_sheet(other, 8), zero_sheet(other))
    with pytest.raises(SpdeError) as err:
        crosscheck(fd, small)
    assert err.value.code == "shape-error"


def test_mass_is_a_martingale_with_both_noises(grid, bump, mu):
    finals = np.array([mass_series(evolve_fd(mu, bump, sample_sheet(grid, replica_seed(50, k)),
                                             sample_sheet(grid, replica_seed(50, k), STREAM_V)))[-1]
                       for k in range(300)])
    se = finals.std(ddof=1) / np.sqrt(finals.size)
    assert np.std(finals) > 0.1
    assert abs(finals.mean() - mu.mass) <= 4.0 * se
