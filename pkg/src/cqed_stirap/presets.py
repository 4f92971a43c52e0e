"""Named configurations reproducing each reference figure.

Every preset uses ``N = 20``, ``K = 1``, interior detuning
:data:`~cqed_stirap.model.REFERENCE_DETUNING` and tight integrator tolerances
so that spin length stays within ``1e-8`` of ``1/4``.
"""
from __future__ import annotations

from .exceptions import ValidationError
from .io import ExperimentConfig
from .model import reference_four_cavity, reference_three_cavity

FAST_RATE = 0.0202
SLOW_RATE = 1.2121e-4
QUANTUM_FAST_RATE = 0.0303
QUANTUM_SLOW_RATE = 0.0012
STRONG_SLOW_RATE = 1.2121e-3
FOUR_LINEAR_RATE = 0.00379
FOUR_NONLINEAR_RATE = 0.0101
DISSIPATION = 1e-4

PRESET_OPTIONS = {"rtol": 1e-12, "atol": 1e-14}

# reference stationary points used as restart states: (ttilde, rate, {n_a, n_b, n_c, |s|, sz})
FIG2_RESTARTS = (
    (1.9697, FAST_RATE, {"n": [19.4542, 0.0150, 0.0396], "abs_s": 0.4999, "sz": -0.0088}),
    (2.9394, SLOW_RATE, {"n": [12.8592, 0.0073, 6.6399], "abs_s": 0.4999, "sz": -0.0065}),
)
FIGS3_RESTARTS = (
    (2.1212, FAST_RATE, {"n": [19.3819, 0.0475, 0.0798], "abs_s": 0.4999, "sz": -0.0091}),
    (2.7273, STRONG_SLOW_RATE, {"n": [16.7613, 0.035, 2.7105], "abs_s": 0.4999, "sz": -0.0068}),
)

G_VALUES = [0.1, 0.2, 0.4]


def _three(g, rate=FAST_RATE, **kw):
    return reference_three_cavity(g, rate, **kw)


def _sweep(name, params, protocol, rates, **settings):
    settings = {"rates": list(rates), "options": dict(PRESET_OPTIONS), **settings}
    return ExperimentConfig("sweep", params, protocol, settings, name=name)


def _restarts(table):
    return [{"ttilde": t, "rate": r, "reference": ref} for t, r, ref in table]


def _fig2_fast():
    return _sweep("fig2-fast", *_three(0.2), [FAST_RATE], window=True)


def _fig2_slow():
    return _sweep("fig2-slow", *_three(0.2, SLOW_RATE), [SLOW_RATE], window=True)


def _fig2_restart():
    return _sweep("fig2-restart", *_three(0.2), [], restarts=_restarts(FIG2_RESTARTS), window=True)


def _fig3():
    params, protocol = _three(0.2)
    return ExperimentConfig("lyapunov", params, protocol,
                            {"ttilde": [2.0, 2.78, 3.2], "ensemble": True}, name="fig3")


def _fig4():
    params, protocol = _three(0.2)
    return ExperimentConfig("window", params, protocol, {"g_values": list(G_VALUES), "refine_peak": 0.005},
                            name="fig4")


def _fig5():
    params, protocol = _three(0.2)
    return ExperimentConfig("scan", params, protocol,
                            {"g_values": [0.0] + G_VALUES, "statistic": "late", "refine": True}, name="fig5")


def _fig6_linear():
    params, protocol = reference_four_cavity(0.0, FOUR_LINEAR_RATE)
    return _sweep("fig6-linear", params, protocol, [FOUR_LINEAR_RATE])


def _fig6_nonlinear():
    params, protocol = reference_four_cavity(0.2, FOUR_NONLINEAR_RATE)
    return _sweep("fig6-nonlinear", params, protocol, [FOUR_NONLINEAR_RATE], window=True)


def _figS1():
    params, protocol = _three(0.2, QUANTUM_FAST_RATE)
    return ExperimentConfig("quantum", params, protocol,
                            {"rates": [QUANTUM_FAST_RATE, QUANTUM_SLOW_RATE], "g_values": [0.0, 0.2],
                             "initial": "fock", "compare": True}, name="figS1")


def _figS2():
    params, protocol = _three(0.2, kappa=DISSIPATION, gamma=DISSIPATION)
    # the qubit relaxes only once the photons are gone, so the tail covers both decays
    return _sweep("figS2", params, protocol, [FAST_RATE, QUANTUM_SLOW_RATE], compare_hermitian=True,
                  tail=10.0 / DISSIPATION, window=True)


def _figS3():
    return _sweep("figS3", *_three(0.4), [FAST_RATE, STRONG_SLOW_RATE], restarts=_restarts(FIGS3_RESTARTS),
                  window=True)


def _figS4():
    params, protocol = _three(0.4)
    return ExperimentConfig("lyapunov", params, protocol,
                            {"ttilde": [2.0, 2.5, 3.0], "ensemble": True}, name="figS4")


PRESETS = {
    "fig2-fast": _fig2_fast,
    "fig2-slow": _fig2_slow,
    "fig2-restart": _fig2_restart,
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig5,
    "fig6-linear": _fig6_linear,
    "fig6-nonlinear": _fig6_nonlinear,
    "figS1": _figS1,
    "figS2": _figS2,
    "figS3": _figS3,
    "figS4": _figS4,
}


def figure_preset(name: str) -> ExperimentConfig:
    """Resolved configuration for figure ``name`` (see :data:`PRESETS`)."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None

