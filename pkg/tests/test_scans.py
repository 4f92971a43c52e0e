import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqed_stirap.chaos import ChaosWindow
from cqed_stirap.dynamics import Trajectory, integrate
from cqed_stirap.exceptions import ValidationError
from cqed_stirap.model import SemiclassicalState, reference_three_cavity
from cqed_stirap.scans import (Bounds, EfficiencyCurve, _bisect, bounds_95, branch_deviation,
                               check_bound_inequality, default_rate_grid, departure_ttilde, efficiency_scan,
                               initial_ssp, instantaneous_departure_ttilde, linear_dark_state,
                               restart_from_branch, transfer_efficiency)
from cqed_stirap.stationary import find_ssp


def curve(T, rates=None):
    T = np.asarray(T, dtype=float)
    rates = np.logspace(-4, 0, T.size) if rates is None else rates
    return EfficiencyCurve(rates, T, 0.2, 20.0)


def window(peak):
    return ChaosWindow(2.7, 2.8, peak, 0.006, 0.002, np.array([2.7, 2.8]), np.array([peak, peak]))


def test_bounds_are_ends_of_the_longest_efficient_run():
    c = curve([0.3, 0.97, 0.5, 0.96, 0.99, 0.98, 0.97, 0.4, 0.2])
    b = bounds_95(c, refine=False)
    assert b.inv_tau_slow == c.rates[3]
    assert b.inv_tau_fast == c.rates[6]
    assert not b.fast_at_edge and not b.refined


def test_plateau_from_the_lowest_rate_has_no_slow_bound():
    b = bounds_95(curve([0.99, 0.99, 0.98, 0.5]), refine=False)
    assert b.inv_tau_slow is None
    assert any("slow" in d for d in b.diagnostics)


def test_fast_bound_at_grid_edge_is_flagged():
    c = curve([0.2, 0.96, 0.97])
    b = bounds_95(c, refine=False)
    assert b.fast_at_edge and b.inv_tau_fast == c.rates[-1]


def test_no_efficient_point_gives_no_bounds():
    b = bounds_95(curve([0.1, np.nan, 0.94]), refine=False)
    assert b.inv_tau_slow is None and b.inv_tau_fast is None
    assert b.diagnostics


def test_one_point_scan():
    b = bounds_95(curve([0.99], rates=np.array([0.02])), refine=False)
    assert b.inv_tau_slow is None
    assert b.fast_at_edge and b.inv_tau_fast == 0.02


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 1e-1), st.floats(1e-4, 0.05))
def test_bisection_brackets_a_step(edge, rtol):
    result = _bisect(1e-5, 1.0, lambda r: 1.0 if r >= edge else 0.0, 0.95, rtol)
    assert result >= edge
    assert result <= edge * (1 + rtol) * (1 + 1e-12)


def test_curve_rejects_bad_grids():
    with pytest.raises(ValidationError):
        EfficiencyCurve([0.1, 0.05], [1.0, 1.0], 0.2, 20.0)
    with pytest.raises(ValidationError):
        EfficiencyCurve([0.1, 0.2], [1.0], 0.2, 20.0)


def test_default_rate_grid_spans_the_demonstrated_rates():
    grid = default_rate_grid()
    assert grid[0] == pytest.approx(1e-5) and grid[-1] == pytest.approx(1.0)
    assert grid.size == 301
    assert np.all(np.diff(np.log10(grid)) == pytest.approx(1 / 60))


def test_fast_sweep_transfer_and_statistics(fig2_model):
    params, protocol = fig2_model
    res = transfer_efficiency(params, protocol)
    assert res.T > 0.95 and res.T_late > 0.95
    assert res.T == res.T_source
    assert res.denominator == pytest.approx(params.N, rel=1e-9)
    assert res.ttilde_start == 0.0
    c_late = efficiency_scan(params, protocol, [0.0202])
    c_final = efficiency_scan(params, protocol, [0.0202], statistic="final")
    assert c_late.T[0] == res.T_late and c_final.T[0] == res.T
    with pytest.raises(ValidationError):
        efficiency_scan(params, protocol, [0.0202], statistic="median")


def test_scan_orders_by_rate_and_parallel_matches_serial(fig2_model):
    params, protocol = fig2_model
    rates = [0.5, 0.0303, 0.2]
    serial = efficiency_scan(params, protocol, rates)
    parallel = efficiency_scan(params, protocol, rates, workers=2)
    np.testing.assert_array_equal(serial.rates, sorted(rates))
    np.testing.assert_array_equal(serial.T, parallel.T)
    assert not serial.errors


def test_mid_protocol_start_uses_available_excitation(ssp_g02, fig2_model):
    params, protocol = fig2_model
    state = restart_from_branch(ssp_g02, 4.0, params, protocol)
    res = transfer_efficiency(params, protocol, state, t_start=4.0 * protocol.tau)
    assert res.denominator == pytest.approx(params.N - 0.5 - state.sz)
    assert res.ttilde_start == pytest.approx(4.0)
    assert res.T_source == pytest.approx(res.n_terminal_end / state.photon_numbers[0])


def test_empty_start_is_rejected(fig2_model):
    params, protocol = fig2_model
    with pytest.raises(ValidationError):
        transfer_efficiency(params, protocol, SemiclassicalState(np.zeros(3)))


def test_initial_ssp_is_near_the_source_state(fig2_model):
    params, protocol = fig2_model
    state = initial_ssp(params, protocol)
    assert state.photon_numbers[0] == pytest.approx(params.N, rel=1e-9)
    assert state.sz == pytest.approx(-0.5, abs=1e-9)


@pytest.mark.parametrize("J1, J2, expected", [(0.0, 1.0, (20.0, 0.0, 0.0)), (1.0, 0.0, (0.0, 0.0, 20.0)),
                                              (1.0, 1.0, (10.0, 0.0, 10.0)), (1.0, 3.0 ** 0.5, (15.0, 0.0, 5.0))])
def test_linear_dark_state(J1, J2, expected):
    assert linear_dark_state(J1, J2, 20.0) == pytest.approx(expected)


def test_linear_dark_state_undefined_without_couplings():
    with pytest.raises(ValidationError):
        linear_dark_state(0.0, 0.0, 20.0)


def test_branch_departure_detection(ssp_g02, fig2_model):
    params, protocol = fig2_model
    idx = np.arange(0, len(ssp_g02), 10)
    states = np.array([ssp_g02[i].to_state().to_vector() for i in idx])
    traj = Trajectory(ssp_g02.ttilde[idx] * protocol.tau, states, protocol.tau, 3)
    assert np.max(branch_deviation(traj, ssp_g02)) < 1e-9
    assert departure_ttilde(traj, ssp_g02, params.N) is None
    kicked = states.copy()
    k = np.searchsorted(ssp_g02.ttilde[idx], 3.0)
    kicked[k:, 0] *= 0.9
    traj = Trajectory(ssp_g02.ttilde[idx] * protocol.tau, kicked, protocol.tau, 3)
    assert departure_ttilde(traj, ssp_g02, params.N) == pytest.approx(ssp_g02.ttilde[idx][k])


def test_uniform_loss_is_not_a_departure():
    # without the qubit the stationary point at excitation f N is the branch point scaled by sqrt(f)
    params, protocol = reference_three_cavity(0.0, 0.0202, kappa=1e-3)
    branch = find_ssp(params.with_g(0.0), protocol)
    idx = np.arange(0, len(branch), 5)
    tt = branch.ttilde[idx]
    keep = np.exp(-0.1 * tt)
    states = np.array([branch[i].to_state().to_vector() for i in idx])
    states[:, :6] *= np.sqrt(keep)[:, None]
    traj = Trajectory(tt * protocol.tau, states, protocol.tau, 3)
    assert departure_ttilde(traj, branch, params.N) is not None
    assert instantaneous_departure_ttilde(traj, branch, params, protocol) is None
    kicked = states.copy()
    k = np.searchsorted(tt, 3.0)
    kicked[k:, 0] *= 0.9
    traj = Trajectory(tt * protocol.tau, kicked, protocol.tau, 3)
    assert instantaneous_departure_ttilde(traj, branch, params, protocol) == pytest.approx(tt[k])


def test_instantaneous_departure_matches_plain_without_loss(ssp_g02):
    params, protocol = reference_three_cavity(0.2, 0.0012)
    traj = integrate(initial_ssp(params, protocol), params, protocol)
    plain = departure_ttilde(traj, ssp_g02, params.N)
    assert plain is not None
    assert instantaneous_departure_ttilde(traj, ssp_g02, params, protocol) == pytest.approx(plain, abs=0.02)


def test_bound_inequality_checks_each_coupling_and_ordering():
    ok = check_bound_inequality([(0.4, Bounds(0.03, 0.2), window(0.07)), (0.1, Bounds(0.004, 0.15), window(0.02)),
                                 (0.2, Bounds(0.012, 0.16), window(0.04))])
    assert ok.ok and ok.monotone
    assert [c.g for c in ok.checks] == [0.1, 0.2, 0.4]
    assert all(line.startswith("PASS") for line in ok.lines())

    bad = check_bound_inequality([(0.1, Bounds(0.03, 0.15), window(0.02)), (0.2, Bounds(0.012, 0.16), window(0.04))])
    assert not bad.ok
    assert not bad.checks[0].passed and bad.checks[1].passed
    assert not bad.monotone
    assert bad.to_dict()["ok"] is False


def test_missing_slow_bound_passes_vacuously():
    report = check_bound_inequality([(0.0, Bounds(None, 0.2), None), (0.2, Bounds(0.01, 0.16), window(0.04))])
    assert report.ok
    assert report.checks[0].message.startswith("no slow bound")


def test_bound_against_absent_window_fails():
    report = check_bound_inequality([(0.2, Bounds(0.01, 0.16), None)])
    assert not report.ok


def test_curve_csv_and_sidecar(tmp_path):
    c = curve([0.5, 0.97, 0.96])
    c.bounds = bounds_95(c, refine=False)
    c.to_csv(tmp_path / "curve.csv")
    assert (tmp_path / "curve.csv").read_text().splitlines()[0] == "inv_tau,T"
    side = json.loads((tmp_path / "curve.json").read_text())
    assert side["bounds"]["inv_tau_fast"] == c.rates[-1]
