"""scikit-learn style wrappers around the functional core.

Each estimator takes model settings as constructor parameters (so
``get_params``/``set_params``/``clone`` work) and a one-column array of
protocol coordinates or sweep rates as ``X``. ``fit`` runs the computation
and stores results in trailing-underscore attributes; ``transform`` or
``predict`` evaluates at new points.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .chaos import LyapunovSettings, lyapunov_profile, noise_floor, window_from_profile
from .dynamics import IntegratorOptions
from .exceptions import ValidationError
from .model import ChainParams, PulseProtocol, default_centers
from .scans import bounds_95, efficiency_scan
from .stationary import find_ssp, ssp_at


def _column(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1 or X.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-D array or a single column")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} must be finite")
    return X


class _ChainMixin:
    def _model(self):
        params = ChainParams.chain(self.n_cavities, self.g, self.delta, self.N, getattr(self, "kappa", 0.0),
                                   getattr(self, "gamma", 0.0))
        # scans replace the rate per point; the nominal one only fixes the protocol shape
        protocol = PulseProtocol(tau=1.0 / getattr(self, "rate", 1.0), centers=default_centers(self.n_cavities))
        return params, protocol


class SSPTracker(_ChainMixin, TransformerMixin, BaseEstimator):
    """Track the special stationary-point branch over a ``ttilde`` grid.

    ``transform`` returns the branch photon numbers, ``s`` and ``sz`` at each
    requested ``ttilde`` (walking from the nearest grid point when needed).
    """

    def __init__(self, n_cavities=3, g=0.2, delta=0.5, N=20.0, kappa=0.0, gamma=0.0, rate=0.0202):
        self.n_cavities = n_cavities
        self.g = g
        self.delta = delta
        self.N = N
        self.kappa = kappa
        self.gamma = gamma
        self.rate = rate

    def fit(self, X, y=None):
        grid = np.sort(_column(X, "ttilde grid"))
        self.params_, self.protocol_ = self._model()
        self.branch_ = find_ssp(self.params_, self.protocol_, grid)
        self.ssp_ok_ = self.branch_.ssp_ok
        return self

    def transform(self, X):
        check_is_fitted(self, "branch_")
        tt = _column(X, "ttilde")
        rows = []
        for t in tt:
            sol = ssp_at(self.branch_, t, self.params_, self.protocol_)
            rows.append(np.concatenate([sol.photon_numbers, [sol.s, sol.sz]]))
        return np.array(rows)


class LyapunovProfile(_ChainMixin, TransformerMixin, BaseEstimator):
    """Finite-time maximal exponent at the SSP; ``fit`` also locates the chaos window."""

    def __init__(self, n_cavities=3, g=0.2, delta=0.5, N=20.0, rate=0.0202, delta0=1e-7, xi=0.5,
                 m_max=4000, seed=0, workers=1):
        self.n_cavities = n_cavities
        self.g = g
        self.delta = delta
        self.N = N
        self.rate = rate
        self.delta0 = delta0
        self.xi = xi
        self.m_max = m_max
        self.seed = seed
        self.workers = workers

    def _settings(self):
        return LyapunovSettings(delta0=self.delta0, xi=self.xi, m_max=self.m_max, seed=self.seed)

    def fit(self, X, y=None):
        grid = np.sort(_column(X, "ttilde grid"))
        self.params_, self.protocol_ = self._model()
        st = self._settings()
        self.branch_ = find_ssp(self.params_, self.protocol_)
        self.noise_floor_ = noise_floor(self.params_, self.protocol_, grid, st, self.workers)
        self.profile_ = lyapunov_profile(self.params_, self.protocol_, grid, st, self.branch_, self.workers)
        self.window_ = window_from_profile(grid, self.profile_, self.noise_floor_, settings=st)
        return self

    def transform(self, X):
        check_is_fitted(self, "branch_")
        tt = _column(X, "ttilde")
        prof = lyapunov_profile(self.params_, self.protocol_, tt, self._settings(), self.branch_, self.workers)
        return prof[:, None]


class EfficiencyScan(_ChainMixin, RegressorMixin, BaseEstimator):
    """Transfer efficiency against sweep rate with the 95% bounds.

    ``predict`` runs fresh transfers at the requested rates.
    """

    def __init__(self, n_cavities=3, g=0.2, delta=0.5, N=20.0, kappa=0.0, gamma=0.0, statistic="late",
                 refine=True, rtol=1e-9, atol=1e-11, workers=1):
        self.n_cavities = n_cavities
        self.g = g
        self.delta = delta
        self.N = N
        self.kappa = kappa
        self.gamma = gamma
        self.statistic = statistic
        self.refine = refine
        self.rtol = rtol
        self.atol = atol
        self.workers = workers

    def _options(self):
        return IntegratorOptions(rtol=self.rtol, atol=self.atol)

    def fit(self, X, y=None):
        rates = _column(X, "rates")
        if np.any(rates <= 0):
            raise ValidationError("rates must be positive")
        self.params_, self.protocol_ = self._model()
        self.curve_ = efficiency_scan(self.params_, self.protocol_, rates, self._options(), self.workers,
                                      self.statistic)
        self.bounds_ = bounds_95(self.curve_, options=self._options(), refine=self.refine)
        self.curve_.bounds = self.bounds_
        self.inv_tau_slow_ = self.bounds_.inv_tau_slow
        self.inv_tau_fast_ = self.bounds_.inv_tau_fast
        return self

    def predict(self, X):
        check_is_fitted(self, "curve_")
        rates = _column(X, "rates")
        curve = efficiency_scan(self.params_, self.protocol_, rates, self._options(), self.workers, self.statistic)
        order = np.argsort(np.argsort(rates))
        return curve.T[order]
