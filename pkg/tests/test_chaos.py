import numpy as np
import pytest

from cqed_stirap.chaos import (ChaosWindow, LyapunovSettings, benettin, constrained_direction, ensemble_spread,
                               lambda_max_at, lyapunov_profile, metric_weights, noise_floor, refine_peak,
                               window_from_profile)
from cqed_stirap.dynamics import IntegratorOptions, integrate
from cqed_stirap.exceptions import ValidationError
from cqed_stirap.model import SemiclassicalState, reference_three_cavity
from cqed_stirap.stationary import find_ssp, ssp_at, uniform_grid

FLOOR = 2e-3
INSIDE, OUTSIDE = 2.78, 2.0


@pytest.fixture(scope="module")
def ssp_state(ssp_g02, fig2_model):
    params, protocol = fig2_model
    return lambda tt: ssp_at(ssp_g02, tt, params, protocol).to_state()


def test_renormalisation_matches_independent_pair_integration(fig2_model, ssp_state):
    params, protocol = fig2_model
    st = LyapunovSettings(delta0=1e-4, xi=0.5, m_max=6, seed=11)
    series = benettin(ssp_state(INSIDE), INSIDE, params, protocol, settings=st)

    y0 = ssp_state(INSIDE).to_vector()
    w = metric_weights(3, params.N)
    v = constrained_direction(y0, np.random.default_rng(11), 3)
    ref, pert = y0, y0 + v * (1e-4 / np.linalg.norm(w * v))
    opts = IntegratorOptions(rtol=1e-12, atol=1e-14, max_step=0.05)
    logs = []
    for _ in range(6):
        ends = [integrate(SemiclassicalState.from_vector(y), params, protocol, t_span=(0.0, 0.5), options=opts,
                          frozen_ttilde=INSIDE).states[-1] for y in (ref, pert)]
        d = ends[1] - ends[0]
        delta = np.linalg.norm(w * d)
        logs.append(np.log(delta / 1e-4))
        ref, pert = ends[0], ends[0] + d * (1e-4 / delta)
    np.testing.assert_allclose(series.log_ratios, logs, atol=1e-5)
    np.testing.assert_allclose(series.lambdas, np.cumsum(logs) / (0.5 * np.arange(1, 7)), atol=1e-5)


def test_series_bookkeeping(fig2_model, ssp_state):
    params, protocol = fig2_model
    series = benettin(ssp_state(OUTSIDE), OUTSIDE, params, protocol, m_max=50)
    assert series.lambdas.size == 50
    np.testing.assert_allclose(series.times, 0.5 * np.arange(1, 51))
    np.testing.assert_allclose(series.lambdas, np.cumsum(series.log_ratios) / series.times)
    assert np.all(np.isfinite(series.lambdas))
    assert series.settings.m_max == 50


def test_initial_offset_preserves_invariants_to_first_order(rng, ssp_state):
    y = ssp_state(INSIDE).to_vector()
    v = constrained_direction(y, rng, 3)
    grad_total = np.concatenate([2 * y[:6], [0.0, 0.0, 1.0]])
    grad_spin = np.concatenate([np.zeros(6), 2 * y[6:]])
    assert abs(np.dot(v, grad_total)) < 1e-12 * np.linalg.norm(v)
    assert abs(np.dot(v, grad_spin)) < 1e-12 * np.linalg.norm(v)


def test_uncoupled_chain_has_no_growth(ssp_state):
    params, protocol = reference_three_cavity(0.0, 0.0202)
    state = ssp_at(find_ssp(params, protocol), INSIDE, params, protocol).to_state()
    est = lambda_max_at(INSIDE, params, protocol, state=state)
    assert abs(est.plateau) < 1e-4
    assert abs(est.plateau) < 3 * FLOOR


def test_exponent_positive_inside_and_small_outside(ssp_g02, fig2_model):
    params, protocol = fig2_model
    inside = lambda_max_at(INSIDE, params, protocol, branch=ssp_g02).plateau
    outside = lambda_max_at(OUTSIDE, params, protocol, branch=ssp_g02).plateau
    assert inside > 3 * FLOOR
    assert abs(outside) < 3 * FLOOR


@pytest.mark.parametrize("change", [dict(delta0=1e-8), dict(seed=1)])
def test_plateau_is_stable_against_offset_size_and_seed(ssp_g02, fig2_model, change):
    params, protocol = fig2_model
    base = lambda_max_at(INSIDE, params, protocol, branch=ssp_g02).plateau
    other = lambda_max_at(INSIDE, params, protocol, LyapunovSettings(**change), branch=ssp_g02).plateau
    assert abs(other - base) < 2 * FLOOR


def test_noise_floor_is_at_least_the_plateau_resolution(fig2_model):
    params, protocol = fig2_model
    floor = noise_floor(params, protocol, [1.0, 2.78, 4.0])
    assert floor == pytest.approx(1.0 / 500.0)


def test_profile_is_deterministic(ssp_g02, fig2_model):
    params, protocol = fig2_model
    st = LyapunovSettings(m_max=1200)
    a = lyapunov_profile(params, protocol, [2.5, 2.78], st, ssp_g02)
    b = lyapunov_profile(params, protocol, [2.5, 2.78], st, ssp_g02)
    np.testing.assert_array_equal(a, b)


def test_window_from_synthetic_profile():
    grid = np.linspace(0.0, 1.0, 11)
    profile = np.array([0, 0.01, 0, 0.02, 0.05, 0.04, 0.02, 0, 0.03, 0, 0], dtype=float)
    win = window_from_profile(grid, profile, 0.005)
    assert win.threshold == pytest.approx(0.015)
    assert (win.ttilde_left, win.ttilde_right) == pytest.approx((0.3, 0.6))
    assert win.lambda_max_peak == pytest.approx(0.05)
    inside = (grid >= win.ttilde_left) & (grid <= win.ttilde_right)
    assert np.all(profile[inside] > win.threshold)
    assert win.contains(0.45) and not win.contains(0.8)


def test_window_absent_below_threshold():
    grid = np.linspace(0.0, 1.0, 5)
    win = window_from_profile(grid, np.full(5, 1e-3), 2e-3)
    assert not win.exists
    assert win.ttilde_left is None and win.ttilde_right is None
    assert not win.contains(0.5)


def test_refine_peak_keeps_edges_and_merges_grids(ssp_g02, fig2_model):
    params, protocol = fig2_model
    st = LyapunovSettings(m_max=3000)
    grid = np.array([2.74, 2.76, 2.78, 2.80])
    coarse = window_from_profile(grid, lyapunov_profile(params, protocol, grid, st, ssp_g02), FLOOR, settings=st)
    assert coarse.exists
    fine = refine_peak(coarse, params, protocol, spacing=0.01, branch=ssp_g02)
    assert (fine.ttilde_left, fine.ttilde_right) == (coarse.ttilde_left, coarse.ttilde_right)
    assert fine.threshold == coarse.threshold
    added = [t for t in uniform_grid(coarse.ttilde_left, coarse.ttilde_right, 0.01)
             if not np.isclose(grid, t).any()]
    assert fine.ttilde.size == grid.size + len(added)
    assert np.all(np.diff(fine.ttilde) > 0)
    assert fine.lambda_max_peak >= coarse.lambda_max_peak


def test_refine_peak_passes_through_absent_window(fig2_model):
    params, protocol = fig2_model
    empty = ChaosWindow(None, None, 0.0, 0.006, 0.002, np.array([1.0]), np.array([0.0]))
    assert refine_peak(empty, params, protocol) is empty


def test_ensemble_spreads_inside_window_only(ssp_g02, fig2_model):
    params, protocol = fig2_model
    inside = ensemble_spread(INSIDE, params, protocol, branch=ssp_g02)
    outside = ensemble_spread(OUTSIDE, params, protocol, branch=ssp_g02)
    assert inside.diameter.max() > 20 * inside.diameter[0]
    assert outside.diameter.max() < 2 * outside.diameter[0]
    assert inside.phase_diff.shape == (inside.times.size, 10)
    assert np.all(np.abs(inside.phase_diff) <= np.pi)


def test_ensemble_static_without_qubit_coupling():
    params, protocol = reference_three_cavity(0.0, 0.0202)
    cloud = ensemble_spread(INSIDE, params, protocol, branch=find_ssp(params, protocol))
    np.testing.assert_allclose(cloud.diameter, cloud.diameter[0], rtol=1e-4)


def test_ensemble_csv(tmp_path, ssp_g02, fig2_model):
    params, protocol = fig2_model
    cloud = ensemble_spread(OUTSIDE, params, protocol, n_samples=3, horizon=5.0, branch=ssp_g02)
    path = tmp_path / "cloud.csv"
    cloud.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,sample_id,phase_diff,n_diff"
    assert len(lines) == 1 + 3 * cloud.times.size


@pytest.mark.parametrize("bad", [dict(delta0=0.0), dict(xi=-1.0), dict(m_max=0), dict(plateau=(10.0, 5.0))])
def test_settings_validation(bad):
    with pytest.raises(ValidationError):
        LyapunovSettings(**bad)


def test_benettin_rejects_wrong_state(fig2_model):
    params, protocol = fig2_model
    with pytest.raises(ValidationError):
        benettin(np.zeros(5), 2.0, params, protocol)
    with pytest.raises(ValidationError):
        benettin(np.full(9, np.nan), 2.0, params, protocol)
