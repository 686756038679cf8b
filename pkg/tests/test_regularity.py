# /superlab/tests/test_regularity.py

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from data_manager import parse_config
from regularity import (
    Verdict, worst_verdict, moment_estimate, mean_estimate, lp_norm, fit_slope, verdict_for, bound_verdict,
    identity_verdict, smallest_constant, slope_report, dyadic_indices, holder_time, holder_space,
    check_lemma_suite, suite_setup, jackknife_se,
)
from utils.errors import RegularityError

finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)


def test_moment_of_constant_samples():
    for order in (2, 4):
        moment, se = moment_estimate(np.full(10, -1.5), order)
        assert moment == pytest.approx(1.5 ** order)
        assert se == pytest.approx(0.0, abs=1e-12)


def test_moments_of_a_standard_normal():
    x = np.random.default_rng(0).standard_normal(100_000)
    for order, expected in ((2, 1.0), (4, 3.0)):
        moment, se = moment_estimate(x, order)
        assert abs(moment - expected) <= 4.0 * se


def test_moment_estimate_errors():
    with pytest.raises(RegularityError) as err:
        moment_estimate([], 2)
    assert err.value.code == "no-data"
    with pytest.raises(RegularityError):
        moment_estimate([1.0, 2.0], 3)
    with pytest.raises(RegularityError):
        mean_estimate([1.0])


def test_lp_norm():
    value, se = lp_norm(np.full(8, 2.0), 4)
    assert value == pytest.approx(2.0)
    assert se == pytest.approx(0.0, abs=1e-12)
    assert lp_norm(np.zeros(5), 2) == (0.0, 0.0)


@given(st.floats(min_value=-2.0, max_value=2.0), st.floats(min_value=0.1, max_value=10.0))
@settings(max_examples=100, deadline=None)
def test_power_law_slopes_are_recovered_exactly(exponent, prefactor):
    lags = 2.0 ** -np.arange(3, 7)
    moments = prefactor * lags ** exponent
    slope, ci = fit_slope(lags, moments)
    assert slope == pytest.approx(exponent, abs=1e-9)
    assert ci == pytest.approx(0.0, abs=1e-6)
    slope, ci = fit_slope(lags, moments, std_errs=0.01 * moments)
    assert slope == pytest.approx(exponent, abs=1e-9)


def test_synthetic_holder_slopes():
    lags = 1.0 / np.array([64, 32, 16, 8])
    report = slope_report("holder_time", 2, lags, lags ** 0.5, np.zeros(4), [100] * 4, 0.25, 0.5)
    assert report.slope == pytest.approx(0.5)
    assert report.ci == pytest.approx(0.0, abs=1e-9)
    assert report.verdict == Verdict.SATISFIES_BOUND
    report = slope_report("holder_space", 2, lags, lags, np.zeros(4), [100] * 4, 0.5, 1.0, "space")
    assert report.slope == pytest.approx(1.0)


def test_too_few_lags():
    with pytest.raises(RegularityError) as err:
        fit_slope([0.1, 0.2], [1.0, 2.0])
    assert err.value.code == "insufficient-lags"
    with pytest.raises(RegularityError):
        fit_slope([0.1, 0.2, 0.4], [1.0, 0.0, 2.0])
    with pytest.raises(RegularityError):
        dyadic_indices(8, range(3, 7))
    assert dyadic_indices(64, range(3, 7)) == [1, 2, 4, 8]


@given(finite, st.floats(min_value=0.0, max_value=3.0), finite)
@settings(max_examples=300)
def test_verdict_is_a_pure_function_of_slope_ci_and_reference(slope, ci, reference):
    verdict = verdict_for(slope, ci, reference)
    if slope - ci >= reference - 0.05:
        assert verdict == Verdict.SATISFIES_BOUND
    elif slope + ci < reference - 0.05:
        assert verdict == Verdict.VIOLATES
    else:
        assert verdict == Verdict.INCONCLUSIVE


@given(finite, st.floats(min_value=0.0, max_value=3.0), finite, st.floats(min_value=0.0, max_value=2.0))
@settings(max_examples=200)
def test_wider_intervals_never_turn_a_violation_into_a_pass(slope, ci, reference, extra):
    narrow, wide = verdict_for(slope, ci, reference), verdict_for(slope, ci + extra, reference)
    if wide == Verdict.SATISFIES_BOUND:
        assert narrow == Verdict.SATISFIES_BOUND
    if narrow == Verdict.VIOLATES:
        assert wide != Verdict.SATISFIES_BOUND


def test_bound_and_identity_verdicts():
    assert bound_verdict(0.9, 0.1, 1.0) == Verdict.SATISFIES_BOUND
    assert bound_verdict(1.2, 0.1, 1.0) == Verdict.INCONCLUSIVE
    assert bound_verdict(2.0, 0.1, 1.0) == Verdict.VIOLATES
    assert identity_verdict(math.e + 0.01, 0.01, math.e) == Verdict.SATISFIES_BOUND
    assert identity_verdict(3.5, 0.01, math.e) == Verdict.VIOLATES
    assert worst_verdict([Verdict.SATISFIES_BOUND, Verdict.INCONCLUSIVE]) == Verdict.INCONCLUSIVE
    assert worst_verdict([Verdict.INCONCLUSIVE, Verdict.VIOLATES]) == Verdict.VIOLATES
    assert worst_verdict([]) == Verdict.SATISFIES_BOUND


def test_smallest_constant():
    lags = np.array([0.25, 0.5, 1.0])
    assert smallest_constant(2.0 * lags ** 0.5, lags, 0.5) == pytest.approx(2.0)
    assert smallest_constant([1.0, 1.0, 1.0], lags, 0.5) == pytest.approx(2.0)


def _brownian_fields(cfg, replicas: int, axis: str) -> np.ndarray:
    grid = cfg.grid
    rng = np.random.default_rng(4)
    if axis == "time":
        steps = rng.standard_normal((replicas, grid.n_t)) * math.sqrt(grid.t_max / grid.n_t)
        walk = np.concatenate([np.zeros((replicas, 1)), np.cumsum(steps, axis=1)], axis=1)
        return np.repeat(walk[:, :, None], grid.n_x, axis=2)
    dy = (grid.x_max - grid.x_min) / grid.n_x
    walk = np.cumsum(rng.standard_normal((replicas, grid.n_x)) * math.sqrt(dy), axis=1)
    return np.repeat(walk[:, None, :], grid.n_t + 1, axis=1)


def test_holder_pipeline_on_brownian_fields():
    cfg = parse_config({"grid": {"n_x": 32}, "experiment": {"replicas": 2000}}, env=False)
    time_reports = holder_time(cfg, _brownian_fields(cfg, 2000, "time"))
    assert [r.order for r in time_reports] == [2, 4]
    assert time_reports[0].slope == pytest.approx(1.0, abs=0.2)
    assert time_reports[0].reference == pytest.approx(0.25)
    assert time_reports[0].target == pytest.approx(0.5)
    assert all(r.verdict == Verdict.SATISFIES_BOUND for r in time_reports)

    space_reports = holder_space(cfg, _brownian_fields(cfg, 2000, "space"))
    assert space_reports[0].slope == pytest.approx(1.0, abs=0.2)
    assert space_reports[1].reference == pytest.approx(1.5)
    assert all(r.verdict == Verdict.SATISFIES_BOUND for r in space_reports)
    assert space_reports[0].moments.lag_kind == "space"


def test_base_time_before_half_horizon_is_rejected():
    cfg = parse_config({"experiment": {"base_time_fraction": 0.25}}, env=False)
    with pytest.raises(RegularityError):
        holder_time(cfg, np.zeros((3, cfg.grid.n_t + 1, cfg.grid.n_x)))


def test_clustered_errors_see_the_shared_environment():
    rng = np.random.default_rng(5)
    shared = np.repeat(rng.standard_normal(20), 500)
    samples = shared + 0.1 * rng.standard_normal(shared.size)
    _, naive = mean_estimate(samples)
    mean, clustered = mean_estimate(samples, clusters=20)
    block_means = samples.reshape(20, -1).mean(axis=1)
    assert clustered == pytest.approx(block_means.std(ddof=1) / math.sqrt(20), rel=1e-10)
    assert clustered > 10.0 * naive
    assert abs(mean) <= 4.0 * clustered
    _, moment_se = moment_estimate(samples, 2, clusters=20)
    _, moment_naive = moment_estimate(samples, 2)
    assert moment_se > 5.0 * moment_naive
    with pytest.raises(RegularityError) as err:
        mean_estimate(np.ones(10), clusters=3)
    assert err.value.code == "invalid-argument"


def test_jackknife_without_clusters_is_the_naive_error():
    x = np.random.default_rng(6).standard_normal(50)
    assert jackknife_se(x) == pytest.approx(x.std(ddof=1) / math.sqrt(50), rel=1e-10)
    assert jackknife_se(x, clusters=1) == pytest.approx(jackknife_se(x), rel=1e-12)


def test_suite_clusters_only_with_a_shared_environment(zero_suite_config):
    assert suite_setup(zero_suite_config).clusters is None
    cfg = parse_config({"mc": {"n_paths": 400, "n_env_replicas": 4}}, env=False)
    assert suite_setup(cfg).clusters == 4
    single = parse_config({"mc": {"n_paths": 400, "n_env_replicas": 1}}, env=False)
    assert suite_setup(single).clusters is None


def test_pooling_over_nodes_narrows_the_holder_errors():
    single = parse_config({"grid": {"n_x": 32}, "experiment": {"replicas": 400}}, env=False)
    pooled = parse_config({"grid": {"n_x": 32}, "experiment": {"replicas": 400, "holder_nodes": 5}}, env=False)
    grid = single.grid
    rng = np.random.default_rng(7)
    steps = rng.standard_normal((400, grid.n_t, grid.n_x)) * math.sqrt(grid.t_max / grid.n_t)
    fields = np.concatenate([np.zeros((400, 1, grid.n_x)), np.cumsum(steps, axis=1)], axis=1)
    one, five = holder_time(single, fields)[0], holder_time(pooled, fields)[0]
    assert five.slope == pytest.approx(1.0, abs=0.15)
    assert np.all(five.moments.std_errs < one.moments.std_errs)
    assert five.moments.counts[0] == 5 * 400
    with pytest.raises(RegularityError):
        holder_time(parse_config({"grid": {"n_x": 32}, "experiment": {"holder_nodes": 40}}, env=False), fields)


@pytest.fixture
def zero_suite_config():
    return parse_config({
        "kernel": {"family": "zero"},
        "grid": {"n_t": 32, "n_x": 48},
        "mc": {"n_paths": 400, "n_env_replicas": 4, "antithetic": False},
        "experiment": {"n_lags": 3, "ladder_points": 5},
        "rng": {"seed": 9},
    }, env=False)


def test_lemma_suite_reduces_to_closed_forms_without_an_environment(zero_suite_config):
    setup = suite_setup(zero_suite_config)
    assert setup.kernel_constant == 1.0
    assert setup.paths_per_env == 100
    suite = check_lemma_suite(zero_suite_config, setup)
    rows = {(row.check, row.order): row for row in suite.rows}

    for order in (2, 4):
        assert rows[("d1_identity", order)].measured == pytest.approx(1.0)
        assert rows[("d1_moment", order)].measured == pytest.approx(1.0)
        assert rows[("d1_moment", order)].verdict == Verdict.SATISFIES_BOUND
    assert rows[("d1_negative", 2)].measured == pytest.approx(1.0)
    assert rows[("d1_increment", 2)].measured == pytest.approx(0.5)
    for check in ("d1_identity", "d1_negative", "d2_scaling", "d2_increment", "d2_increment_fresh", "gaussian_tail",
                  "conjugate_pair", "density_envelope", "divergence_split"):
        assert rows[(check, 2)].verdict == Verdict.SATISFIES_BOUND
    assert suite.verdict != Verdict.VIOLATES
    assert rows[("divergence_split", 2)].measured <= 1e-8
    assert {p.check for p in suite.points} >= {"d1_moment", "d1_negative", "divergence_decay", "divergence_increment",
                                              "density_envelope", "divergence_split_A1", "divergence_split_A2",
                                              "divergence_split_A3"}


@pytest.mark.slow
def test_lemma_suite_with_a_bump_kernel():
    cfg = parse_config({"mc": {"n_paths": 10000, "n_env_replicas": 20, "antithetic": False,
                               "derivative_scheme": "exponential"}}, env=False)
    suite = check_lemma_suite(cfg)
    rows = {(row.check, row.order): row for row in suite.rows}
    assert rows[("d1_identity", 2)].measured == pytest.approx(math.e, abs=3 * rows[("d1_identity", 2)].std_err + 0.05)
    assert rows[("divergence_decay", 2)].measured == pytest.approx(-0.5, abs=0.1)
    assert rows[("d2_increment", 2)].measured == pytest.approx(0.5, abs=0.25)
    assert rows[("d2_increment", 2)].reference == 0.5
    assert rows[("d2_increment_fresh", 2)].reference == 1.5
    assert rows[("divergence_split", 2)].verdict == Verdict.SATISFIES_BOUND
    assert suite.verdict != Verdict.VIOLATES
