import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqed_stirap.exceptions import ValidationError
from cqed_stirap.model import (ChainParams, PulseProtocol, SemiclassicalState, check_valid, default_centers,
                               mixing_angle, reference_four_cavity, reference_three_cavity, pulse_value, validate)
from cqed_stirap.presets import PRESETS, figure_preset


def test_pulse_peak_and_one_width():
    pr = PulseProtocol(tau=50.0)
    assert pulse_value(pr, 0, 3.697 * 50.0) == pytest.approx(1.0, abs=1e-15)
    assert pulse_value(pr, 1, 2.4242 * 50.0 + 50.0) == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_pulse_at_origin_direct_formula():
    pr = PulseProtocol(tau=50.0)
    assert pulse_value(pr, 0, 0.0) == pytest.approx(math.exp(-3.697 ** 2), rel=1e-14)
    assert pulse_value(pr, 0, 0.0) == pytest.approx(1.16e-6, rel=0.01)


def test_pulse_bad_bond():
    with pytest.raises(IndexError):
        pulse_value(PulseProtocol(), 2, 0.0)


@given(st.floats(0.0, 20.0), st.floats(1.0, 1e4), st.integers(0, 1))
def test_pulse_symmetric_about_center(x, tau, bond):
    pr = PulseProtocol(tau=tau)
    c = pr.centers[bond] * tau
    assert pulse_value(pr, bond, c + x * tau) == pytest.approx(pulse_value(pr, bond, c - x * tau), rel=1e-12)


@given(st.floats(3.72, 50.0), st.integers(0, 1))
def test_pulse_decays_beyond_372_widths(x, bond):
    pr = PulseProtocol(tau=49.5)
    assert pulse_value(pr, bond, (pr.centers[bond] + x) * pr.tau) < 1e-6


def test_pulse_positive_in_range():
    pr = PulseProtocol(tau=49.5)
    for t in np.linspace(0, pr.t_end, 50):
        assert all(pulse_value(pr, b, t) > 0 for b in range(2))


def test_mixing_angle_endpoints():
    pr = PulseProtocol(tau=49.5)
    assert mixing_angle(pr, 0.0) < 0.05
    assert mixing_angle(pr, pr.t_end) > math.pi / 2 - 0.05


def test_mixing_angle_at_origin_from_both_gaussians():
    pr = PulseProtocol(tau=49.5)
    j1 = math.exp(-3.697 ** 2)
    j2 = math.exp(-2.4242 ** 2)
    assert mixing_angle(pr, 0.0) == pytest.approx(math.atan(j1 / j2), rel=1e-12)


def test_mixing_angle_equal_pulses_is_quarter_pi():
    pr = PulseProtocol(tau=10.0)
    t_mid = 0.5 * (pr.centers[0] + pr.centers[1]) * pr.tau
    assert mixing_angle(pr, t_mid) == pytest.approx(math.pi / 4, abs=1e-12)


def test_mixing_angle_zero_when_source_pulse_negligible():
    pr = PulseProtocol(tau=10.0, centers=(30.0, 2.0))
    assert mixing_angle(pr, 2.0 * pr.tau) < 1e-10


def test_mixing_angle_monotone_for_counter_intuitive_order():
    pr = PulseProtocol(tau=49.5)
    th = [mixing_angle(pr, t) for t in np.linspace(0, pr.t_end, 200)]
    assert np.all(np.diff(th) > 0)
    assert all(0 <= v <= math.pi / 2 for v in th)


def test_mixing_angle_undefined_raises():
    pr = PulseProtocol(tau=1.0, centers=(3.697, 2.4242))
    with pytest.raises(ValueError):
        mixing_angle(pr, 1e4)


def test_mixing_angle_requires_three_cavities():
    with pytest.raises(ValueError):
        mixing_angle(PulseProtocol.from_rate(0.01, n_cavities=4), 0.0)


def test_validate_reference_setup_ok():
    params, protocol = reference_three_cavity()
    assert validate(params, protocol) == []
    assert params.g == (0.0, 0.0, 0.2) and params.N == 20.0


def test_validate_reports_field_names():
    params = ChainParams(3, (0, 0.5, 0), (0, 0, 0.2), N=-1.0, kappa=-1.0)
    diag = validate(params, PulseProtocol(tau=-1.0, centers=(1.0,)))
    text = " ".join(diag)
    assert "tau > 0 violated" in diag
    assert "N > 0 violated" in text and "kappa >= 0 violated" in text
    assert "centers length" in text


def test_validate_single_terminal_qubit_and_order():
    params = ChainParams(3, (0, 0, 0), (0.1, 0, 0.2))
    assert any("terminal" in d for d in validate(params))
    assert any("counter-intuitive" in d for d in validate(ChainParams(), PulseProtocol(centers=(1.0, 2.0))))
    assert validate(ChainParams(), PulseProtocol(centers=(1.0, 2.0), counter_intuitive=False)) == []
    with pytest.raises(ValidationError):
        check_valid(ChainParams(n_cavities=2, detuning=(0, 0), g=(0, 0.2)))


def test_default_centers_four_cavity():
    c = default_centers(4)
    assert c[0] == 3.697 and c[1] == pytest.approx(2.4242)
    assert np.all(np.diff(c) < 0)
    params, protocol = reference_four_cavity()
    assert validate(params, protocol) == []
    assert params.detuning == (0.0, 0.5, 0.5, 0.0)


def test_end_time_default():
    pr = PulseProtocol(tau=2.0)
    assert pr.ttilde_end == pytest.approx(3.697 + 3.0)
    assert pr.t_end == pytest.approx(2.0 * 6.697)
    assert PulseProtocol(tau=2.0, t_end_factor=5.0).t_end == 10.0


def test_state_roundtrip_and_invariants():
    st_ = SemiclassicalState(np.array([1 + 2j, 0.5j, -1.0]), 0.3 + 0.1j, 0.2)
    back = SemiclassicalState.from_vector(st_.to_vector())
    assert np.array_equal(back.amps, st_.amps) and back.s == st_.s and back.sz == st_.sz
    assert st_.check() == []
    assert SemiclassicalState(np.zeros(3), 0.5, 0.5).check() != []


def test_state_immutable():
    st_ = SemiclassicalState.source_filled(20.0)
    with pytest.raises(ValueError):
        st_.amps[0] = 0.0
    assert st_.total_excitation() == pytest.approx(20.0)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates(name):
    cfg = figure_preset(name)
    assert validate(cfg.params, cfg.protocol) == []
    assert cfg.problems() == []
    assert cfg.params.N == 20.0


def test_preset_values():
    slow = figure_preset("fig2-slow")
    assert slow.protocol.rate == pytest.approx(1.2121e-4) and slow.params.g_terminal == 0.2
    s2 = figure_preset("figS2")
    assert s2.params.kappa == s2.params.gamma == 1e-4 and s2.settings["rates"] == [0.0202, 0.0012]
    s6 = figure_preset("fig6-nonlinear")
    assert s6.params.n_cavities == 4 and s6.params.g_terminal == 0.2 and s6.protocol.rate == pytest.approx(0.0101)
    with pytest.raises(ValidationError):
        figure_preset("fig7")


@settings(max_examples=30)
@given(st.integers(3, 6), st.floats(0, 1), st.floats(0.1, 50))
def test_chain_constructor_valid(n, g, N):
    params = ChainParams.chain(n, g, 0.5, N)
    assert validate(params, PulseProtocol.from_rate(0.02, n_cavities=n)) == []
    assert params.state_size == 2 * n + 3
