"""Dispatch of an :class:`ExperimentConfig` to the numerical modules.

Each kind produces numeric tables plus a JSON summary; the run manifest is
written last and lists every output with its checksum.
"""
from __future__ import annotations

import os
import time
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .chaos import (LyapunovSettings, benettin, chaos_window, default_window_grid, ensemble_spread,
                    noise_floor, refine_peak)
from .dynamics import IntegratorOptions, Trajectory, integrate
from .exceptions import ValidationError
from .io import SUMMARY_NAME, ExperimentConfig, RunManifest, Table, sha256, write_json, write_table
from .model import SemiclassicalState
from .quantum import build_basis, coherent_initial_state, compare_semiclassical, propagate, source_fock_state
from .scans import (bounds_95, check_bound_inequality, default_rate_grid, departure_ttilde,
                    efficiency_scan, initial_ssp, instantaneous_departure_ttilde, restart_from_branch,
                    transfer_efficiency)
from .stationary import SPBranch, default_grid, find_ssp


def _tag(value) -> str:
    return f"{float(value):g}"


def trajectory_table(name, traj: Trajectory) -> Table:
    n = traj.n_cavities
    header = ["t", "ttilde"] + [f"n_{i + 1}" for i in range(n)] + ["re_s", "im_s", "sz", "conserved"]
    s = traj.s
    return Table(name, header, np.column_stack([traj.times, traj.ttilde, traj.photon_numbers, s.real, s.imag,
                                                traj.sz, traj.conserved]))


def branch_table(name, branch: SPBranch) -> Table:
    n = branch.n_cavities
    header = ["ttilde"] + [f"n_{i + 1}" for i in range(n)] + ["s", "sz", "mu", "residual_norm", "continuity"]
    return Table(name, header, np.column_stack([branch.ttilde, branch.photon_numbers, branch.s, branch.sz,
                                                branch.mu, branch.residual_norm, branch.step_distance]))


def _branch_summary(branch: SPBranch):
    return {"ssp_ok": branch.ssp_ok, "intermediate_ok": branch.intermediate_ok,
            "continuity": branch.continuity, "events": [list(e) for e in branch.events],
            "diagnostics": list(branch.diagnostics),
            "start_photons": branch.photon_numbers[0], "end_photons": branch.photon_numbers[-1]}


def _traj_checks(traj: Trajectory, N):
    return {"max_conservation_error": float(np.max(np.abs(traj.conserved - traj.conserved[0]))),
            "max_spin_length_error": float(np.max(np.abs(traj.spin_length_sq - 0.25))),
            "relative_conservation_error": float(np.max(np.abs(traj.conserved - traj.conserved[0])) / N)}


def _options(settings) -> IntegratorOptions:
    return IntegratorOptions(**settings.get("options", {}))


def _lyapunov_settings(config: ExperimentConfig) -> LyapunovSettings:
    over = dict(config.settings.get("lyapunov", {}))
    if "plateau" in over:
        over["plateau"] = tuple(over["plateau"])
    over.setdefault("seed", int(config.seed))
    return LyapunovSettings(**over)


def _window(config, params, protocol, branch, floor=None):
    settings = config.settings
    lset = _lyapunov_settings(config)
    grid = default_window_grid(protocol, settings.get("window_spacing", 0.02))
    if floor is None:
        floor = noise_floor(params, protocol, grid, lset, config.workers)
    w = chaos_window(params, protocol, grid, lset, floor, branch, config.workers)
    if settings.get("refine_peak"):
        w = refine_peak(w, params, protocol, float(settings["refine_peak"]), branch, config.workers)
    return w, floor


def _window_table(name, w) -> Table:
    return Table(name, ["ttilde", "lambda_max"], np.column_stack([w.ttilde, w.profile]))


def _extend(traj: Trajectory, params, protocol, tail, options):
    """Continue a finished sweep for ``tail`` time units with the final couplings."""
    t0 = traj.times[-1]
    ext = integrate(traj.states[-1], params, protocol, (t0, t0 + tail), options,
                    t_eval=np.linspace(t0, t0 + tail, 2001), frozen_ttilde=protocol.ttilde_end)
    return Trajectory(np.concatenate([traj.times, ext.times[1:]]), np.vstack([traj.states, ext.states[1:]]),
                      traj.tau, traj.n_cavities, traj.nfev + ext.nfev)


def _run_sweep(config: ExperimentConfig):
    s = config.settings
    params, protocol = config.params, config.protocol
    options = _options(s)
    tables, summary = [], {"runs": [], "restarts": []}
    # stationary points and chaos window belong to the closed system
    closed = replace(params, kappa=0.0, gamma=0.0)
    branch = find_ssp(closed, protocol, default_grid(protocol, s.get("branch_spacing", 0.01)))
    tables.append(branch_table("branch", branch))
    summary["branch"] = _branch_summary(branch)
    window = None
    if s.get("window"):
        window, _ = _window(config, closed, protocol, branch)
        tables.append(_window_table("window", window))
        summary["window"] = window.to_dict()
    start = s.get("start", "ssp")
    for rate in s["rates"]:
        pr = protocol.with_rate(rate)
        state = initial_ssp(params, pr) if start == "ssp" else SemiclassicalState.source_filled(
            params.N, params.n_cavities)
        res = transfer_efficiency(params, pr, state, options=options, keep_trajectory=True)
        traj = res.trajectory
        entry = {"rate": rate, **res.metadata(), "final_photons": traj.photon_numbers[-1],
                 **_traj_checks(traj, params.N),
                 "departure_ttilde": (departure_ttilde(traj, branch, params.N) if params.hermitian else
                                      instantaneous_departure_ttilde(traj, branch, params, pr))}
        if window is not None:
            entry["departure_in_window"] = (entry["departure_ttilde"] is not None and window.exists and
                                            window.ttilde_left - 0.1 <= entry["departure_ttilde"]
                                            <= window.ttilde_right)
        if s.get("compare_hermitian") and not params.hermitian:
            herm = integrate(state, closed, pr, options=options)
            entry["max_hermitian_deviation_over_N"] = float(
                np.max(np.abs(herm.photon_numbers - traj.photon_numbers)) / params.N)
            tables.append(trajectory_table(f"sweep_hermitian_rate{_tag(rate)}", herm))
        if s.get("tail"):
            traj = _extend(traj, params, pr, float(s["tail"]), options)
            entry["after_tail_photons"] = traj.photon_numbers[-1]
            entry["after_tail_sz"] = float(traj.sz[-1])
        tables.append(trajectory_table(f"sweep_rate{_tag(rate)}", traj))
        summary["runs"].append(entry)
    for r in s.get("restarts", []):
        pr = protocol.with_rate(r["rate"])
        state = restart_from_branch(branch, r["ttilde"], closed, pr)
        res = transfer_efficiency(params, pr, state, t_start=r["ttilde"] * pr.tau, options=options,
                                  keep_trajectory=True)
        entry = {"ttilde": r["ttilde"], "rate": r["rate"], **res.metadata(),
                 "start_photons": state.photon_numbers, "start_abs_s": abs(state.s), "start_sz": state.sz,
                 "reference": r.get("reference"), **_traj_checks(res.trajectory, params.N)}
        tables.append(trajectory_table(f"restart_t{_tag(r['ttilde'])}_rate{_tag(r['rate'])}", res.trajectory))
        summary["restarts"].append(entry)
    return tables, summary, None


def _run_branch(config: ExperimentConfig):
    s = config.settings
    branch = find_ssp(config.params, config.protocol, default_grid(config.protocol, s.get("spacing", 0.01)))
    return [branch_table("branch", branch)], {"branch": _branch_summary(branch)}, None


def _run_lyapunov(config: ExperimentConfig):
    s = config.settings
    params, protocol = config.params, config.protocol
    lset = _lyapunov_settings(config)
    branch = find_ssp(params, protocol)
    tables, summary = [], {"settings": lset.to_dict(), "points": []}
    for t in s["ttilde"]:
        state = restart_from_branch(branch, t, params, protocol)
        series = benettin(state, t, params, protocol, settings=lset)
        tables.append(Table(f"lyapunov_t{_tag(t)}", ["K_M_xi", "lambda_M"],
                            np.column_stack([series.times, series.lambdas])))
        entry = {"ttilde": t, "plateau": series.plateau_mean(), "tail": series.tail}
        if s.get("ensemble"):
            cloud = _ensemble(config, t, branch)
            tables.append(_cloud_table(f"ensemble_t{_tag(t)}", cloud))
            entry["ensemble_diameter"] = [float(cloud.diameter[0]), float(cloud.diameter[-1])]
        summary["points"].append(entry)
    return tables, summary, None


def _ensemble(config, ttilde, branch):
    e = config.settings.get("ensemble_settings", {})
    return ensemble_spread(ttilde, config.params, config.protocol, n_samples=e.get("n_samples", 10),
                           perturbation=e.get("perturbation", 1e-3), horizon=e.get("horizon", 200.0),
                           seed=int(config.seed), branch=branch)


def _cloud_table(name, cloud) -> Table:
    rows = []
    for i, t in enumerate(cloud.times):
        for k in range(cloud.phase_diff.shape[1]):
            ph = cloud.phase_diff[i, k] if cloud.valid[i, k] else np.nan
            rows.append((t, k, ph, cloud.n_diff[i, k], cloud.diameter[i]))
    return Table(name, ["t", "sample_id", "phase_diff", "n_diff", "diameter"], np.array(rows))


def _run_ensemble(config: ExperimentConfig):
    branch = find_ssp(config.params, config.protocol)
    tables, summary = [], {"points": []}
    for t in config.settings["ttilde"]:
        cloud = _ensemble(config, t, branch)
        tables.append(_cloud_table(f"ensemble_t{_tag(t)}", cloud))
        summary["points"].append({"ttilde": t, "initial_diameter": cloud.diameter[0],
                                  "final_diameter": cloud.diameter[-1], "max_diameter": cloud.diameter.max()})
    return tables, summary, None


def _run_window(config: ExperimentConfig):
    params, protocol = config.params, config.protocol
    tables, summary = [], {"windows": []}
    floor = None
    for g in config.settings["g_values"]:
        p = params.with_g(g)
        branch = find_ssp(p, protocol)
        w, floor = _window(config, p, protocol, branch, floor)
        tables.append(_window_table(f"window_g{_tag(g)}", w))
        summary["windows"].append({"g": g, **w.to_dict(), "exists": w.exists})
    return tables, summary, None


def _rate_grid(settings):
    if "rate_grid" in settings:
        return np.asarray(settings["rate_grid"], dtype=float)
    return default_rate_grid(settings.get("rate_lo", 1e-5), settings.get("rate_hi", 1.0),
                             settings.get("per_decade", 60))


def _scan(config, g):
    s = config.settings
    p = config.params.with_g(g)
    curve = efficiency_scan(p, config.protocol, _rate_grid(s), _options(s), config.workers,
                            s.get("statistic", "late"))
    curve.bounds = bounds_95(curve, options=_options(s), refine=s.get("refine", True))
    return curve


def _run_scan(config: ExperimentConfig):
    tables, summary = [], {"curves": []}
    for g in config.settings["g_values"]:
        curve = _scan(config, g)
        tables.append(Table(f"scan_g{_tag(g)}", ["inv_tau", "T"], np.column_stack([curve.rates, curve.T])))
        summary["curves"].append(curve.to_dict())
    return tables, summary, None


def _run_bound_check(config: ExperimentConfig):
    params, protocol = config.params, config.protocol
    tables, entries, floor = [], [], None
    summary = {"curves": [], "windows": []}
    for g in config.settings["g_values"]:
        p = params.with_g(g)
        branch = find_ssp(p, protocol)
        w, floor = _window(replace(config, settings={"refine_peak": 0.005, **config.settings}), p, protocol,
                           branch, floor)
        curve = _scan(config, g)
        tables.append(_window_table(f"window_g{_tag(g)}", w))
        tables.append(Table(f"scan_g{_tag(g)}", ["inv_tau", "T"], np.column_stack([curve.rates, curve.T])))
        summary["windows"].append({"g": g, **w.to_dict()})
        summary["curves"].append(curve.to_dict())
        entries.append((g, curve.bounds, w))
    report = check_bound_inequality(entries)
    summary["report"] = report.to_dict()
    summary["lines"] = report.lines()
    return tables, summary, report.ok


def _run_quantum(config: ExperimentConfig):
    s = config.settings
    params, protocol = config.params, config.protocol
    M = int(round(params.N))
    if abs(params.N - M) > 1e-12:
        raise ValidationError("quantum runs need an integer N")
    tables, summary = [], {"runs": []}
    qopts = IntegratorOptions(**s.get("options", {"rtol": 1e-10, "atol": 1e-12}))
    for g in s.get("g_values", [params.g_terminal]):
        p = params.with_g(g)
        for rate in s["rates"]:
            pr = protocol.with_rate(rate)
            if s.get("initial", "fock") == "fock":
                basis = build_basis(p.n_cavities, M)
                psi0 = source_fock_state(basis, M)
            else:
                alphas = [np.sqrt(p.N)] + [0.0] * (p.n_cavities - 1)
                psi0, basis = coherent_initial_state(alphas, s.get("cutoff"))
            series = propagate(psi0, basis, p, pr, options=qopts)
            tag = f"g{_tag(g)}_rate{_tag(rate)}"
            tables.append(Table(f"quantum_{tag}", ["t", "ttilde"] + [f"n_{i + 1}" for i in range(p.n_cavities)]
                                + ["sz", "norm"],
                                np.column_stack([series.times, series.ttilde, series.n, series.sz, series.norm])))
            entry = {"g": g, "rate": rate, "dimension": basis.dim, "final_n": series.n[-1],
                     "max_norm_drift": float(np.max(np.abs(series.norm - 1.0)))}
            if s.get("compare", True):
                traj = integrate(initial_ssp(p, pr), p, pr, options=_options(s), t_eval=series.times)
                tables.append(trajectory_table(f"semiclassical_{tag}", traj))
                entry["comparison"] = compare_semiclassical(series, traj).to_dict()
            summary["runs"].append(entry)
    return tables, summary, None


RUNNERS = {
    "sweep": _run_sweep,
    "branch": _run_branch,
    "lyapunov": _run_lyapunov,
    "window": _run_window,
    "ensemble": _run_ensemble,
    "scan": _run_scan,
    "quantum": _run_quantum,
    "bound-check": _run_bound_check,
}


class RunResult:
    """Manifest plus the kind-level verdict (``None`` when the kind asserts nothing)."""

    def __init__(self, manifest: RunManifest, summary: dict, passed: Optional[bool]):
        self.manifest = manifest
        self.summary = summary
        self.passed = passed


def run(config: ExperimentConfig) -> RunResult:
    """Validate, compute, write the outputs and then the manifest.

    Validation happens before any computation. On failure every file this
    run wrote is removed and the exception propagates.
    """
    config.check()
    os.makedirs(config.out_dir, exist_ok=True)
    if not os.access(config.out_dir, os.W_OK):
        raise ValidationError(f"output directory {config.out_dir} is not writable")
    written = []
    start = time.perf_counter()
    try:
        tables, summary, passed = RUNNERS[config.kind](config)
        for table in tables:
            written.append(write_table(table, config.out_dir, config.format))
        summary = {"kind": config.kind, "name": config.name, "passed": passed, **summary}
        written.append(write_json(summary, os.path.join(config.out_dir, SUMMARY_NAME)))
        outputs = {os.path.basename(p): sha256(p) for p in written}
        status = "ok" if passed is not False else "assertion_failed"
        manifest = RunManifest(config.to_dict(), __version__, time.perf_counter() - start, outputs, status)
        manifest.write(config.out_dir)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return RunResult(manifest, summary, passed)

