"""Unscented Kalman filter over a constant-turn-rate-and-acceleration model, and its rollout.

State vector: ``[x, y, v, heading, heading_change_rate, a]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .geom import normalize_angle, world_to_actor_xy
from .scene import DT, ActorState, Example

N_STATE = 6
HEADING = 3
TURN_EPS = 1e-6

PROCESS_STD = (0.1, 0.1, 0.5, 0.05, 0.05, 0.5)
MEASUREMENT_STD = (0.1, 0.1, 0.05)
INITIAL_STD = (0.1, 0.1, 0.5, 0.05, 0.05, 0.5)


class CovarianceError(np.linalg.LinAlgError):
    """Covariance lost positive definiteness; ``diagnostics`` holds eigenvalues and the matrix."""

    def __init__(self, message: str, cov: np.ndarray):
        eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        super().__init__(f"{message}; smallest eigenvalue {eig.min():.3e}")
        self.diagnostics = {"eigenvalues": eig, "covariance": cov.copy()}


@dataclass
class UkfState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(N_STATE)
        self.cov = np.asarray(self.cov, dtype=float).reshape(N_STATE, N_STATE)

    @classmethod
    def from_actor(cls, s: ActorState, std: Sequence[float] = INITIAL_STD) -> "UkfState":
        mean = [s.pose.position.x, s.pose.position.y, s.velocity, s.heading,
                s.heading_change_rate, s.acceleration]
        return cls(np.array(mean), np.diag(np.square(std)))


@dataclass(frozen=True)
class UkfParams:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    process_std: tuple = PROCESS_STD
    measurement_std: tuple = MEASUREMENT_STD

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.square(self.process_std))

    @property
    def R(self) -> np.ndarray:
        return np.diag(np.square(self.measurement_std))


def _arc_integrals(u: float) -> tuple[complex, complex]:
    """``E1 = int_0^1 exp(i u s) ds`` and ``E2 = int_0^1 s exp(i u s) ds``, stable near ``u = 0``."""
    if abs(u) < 0.1:
        e1 = e2 = 0j
        term = 1 + 0j  # (i u)^k / k!
        for k in range(12):
            e1 += term / (k + 1)
            e2 += term / (k + 2)
            term *= 1j * u / (k + 1)
        return e1, e2
    eiu = complex(np.cos(u), np.sin(u))
    e1 = (eiu - 1) / (1j * u)
    return e1, eiu / (1j * u) + (eiu - 1) / (u * u)


def ctra(state: np.ndarray, dt: float) -> np.ndarray:
    """Closed-form CTRA propagation; constant-velocity-and-acceleration form when the turn rate is ~0.

    The displacement is the exact integral of ``(v + a t) exp(i (heading + w t))``,
    evaluated without the cancellation of the textbook ``1 / w**2`` form.
    """
    x, y, v, th, w, a = state
    th1 = th + w * dt
    v1 = v + a * dt
    if abs(w) < TURN_EPS:
        d = v * dt + 0.5 * a * dt * dt
        x1 = x + d * np.cos(th)
        y1 = y + d * np.sin(th)
    else:
        e1, e2 = _arc_integrals(w * dt)
        z = complex(np.cos(th), np.sin(th)) * (v * dt * e1 + a * dt * dt * e2)
        x1, y1 = x + z.real, y + z.imag
    return np.array([x1, y1, v1, normalize_angle(th1), w, a])


def _check_pd(cov: np.ndarray, what: str) -> None:
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise CovarianceError(f"{what}: covariance is not positive definite", cov) from None


def sigma_weights(n: int, p: UkfParams) -> tuple[np.ndarray, np.ndarray, float]:
    lam = p.alpha ** 2 * (n + p.kappa) - n
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - p.alpha ** 2 + p.beta)
    return wm, wc, n + lam


def _residual(a: np.ndarray, b: np.ndarray, angle_idx) -> np.ndarray:
    d = a - b
    for i in angle_idx:
        d[..., i] = normalize_angle(d[..., i])
    return d


def unscented_transform(mean: np.ndarray, cov: np.ndarray, f: Callable[[np.ndarray], np.ndarray],
                        params: UkfParams = UkfParams(), in_angles=(HEADING,), out_angles=(HEADING,)):
    """Propagate ``(mean, cov)`` through ``f``; returns ``(mean, cov, sigma_in, sigma_out, wc)``.

    The output mean is accumulated as offsets from the central sigma point, which
    keeps precision when the central weight is large and negative.
    """
    n = len(mean)
    wm, wc, scale = sigma_weights(n, params)
    _check_pd(cov, "sigma point generation")
    root = np.linalg.cholesky(scale * cov)
    sig = np.vstack([mean, mean + root.T, mean - root.T])
    for i in in_angles:
        sig[:, i] = normalize_angle(sig[:, i])
    out = np.array([f(s) for s in sig])
    dev = _residual(out, np.broadcast_to(out[0], out.shape).copy(), out_angles)
    mu = out[0] + wm @ dev
    for i in out_angles:
        mu[i] = normalize_angle(mu[i])
    r = _residual(out, np.broadcast_to(mu, out.shape).copy(), out_angles)
    cov_out = (wc[:, None] * r).T @ r
    return mu, 0.5 * (cov_out + cov_out.T), sig, out, wc


def ukf_predict(state: UkfState, dt: float, params: UkfParams = UkfParams(),
                process: bool = True) -> UkfState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    mu, cov, *_ = unscented_transform(state.mean, state.cov, lambda s: ctra(s, dt), params)
    if process:
        cov = cov + params.Q
    _check_pd(cov, "predict")
    return UkfState(mu, cov)


def _measure(s: np.ndarray) -> np.ndarray:
    return np.array([s[0], s[1], s[HEADING]])


def ukf_update(state: UkfState, z, params: UkfParams = UkfParams(), R: np.ndarray | None = None) -> UkfState:
    """Standard UKF measurement step for an ``(x, y, heading)`` observation."""
    z = np.asarray(z, dtype=float)
    R = params.R if R is None else np.asarray(R, dtype=float)
    zmu, S, sig, zsig, wc = unscented_transform(state.mean, state.cov, _measure, params, out_angles=(2,))
    S = S + R
    _check_pd(S, "innovation")
    dx = _residual(sig, np.broadcast_to(state.mean, sig.shape).copy(), (HEADING,))
    dz = _residual(zsig, np.broadcast_to(zmu, zsig.shape).copy(), (2,))
    C = (wc[:, None] * dx).T @ dz
    K = np.linalg.solve(S.T, C.T).T
    innov = _residual(z[None], zmu[None], (2,))[0]
    mean = state.mean + K @ innov
    mean[HEADING] = normalize_angle(mean[HEADING])
    cov = state.cov - K @ S @ K.T
    cov = 0.5 * (cov + cov.T)
    _check_pd(cov, "update")
    return UkfState(mean, cov)


def track(observations: Sequence, init: UkfState, dt: float = DT,
          params: UkfParams = UkfParams()) -> list[UkfState]:
    """Filter a sequence of ``(x, y, heading)`` observations; the first one updates ``init`` directly."""
    states, s = [], init
    for k, z in enumerate(observations):
        if k > 0:
            s = ukf_predict(s, dt, params)
        s = ukf_update(s, z, params)
        states.append(s)
    return states


def rollout(state: UkfState | np.ndarray, horizon: int, dt: float = DT, frame=None) -> np.ndarray:
    """Noise-free propagation for ``horizon`` steps, returned in an actor frame.

    ``frame`` is ``(origin_xy, heading)``; by default the frame of the start state.
    Speed is clamped at zero: a decelerating actor stops rather than reversing.
    """
    s = np.array(state.mean if isinstance(state, UkfState) else state, dtype=float)
    if frame is None:
        frame = (s[:2].copy(), float(s[HEADING]))
    pts = np.empty((horizon, 2))
    for k in range(horizon):
        v, a = s[2], s[5]
        if a < 0 and v + a * dt < 0:
            t_stop = max(-v / a, 0.0)
            if t_stop > 0:
                s = ctra(s, t_stop)
            s[2], s[5] = 0.0, 0.0
        else:
            s = ctra(s, dt)
        pts[k] = s[:2]
    return world_to_actor_xy(pts, frame[0], frame[1])


class UKFRollout(BaseEstimator):
    """Non-learned baseline: filter each example's observed track, then roll out the motion model.

    ``fit`` is a no-op kept for API symmetry with the learned models.
    """

    def __init__(self, horizon: int | None = None, dt: float = DT, refilter: bool = True,
                 alpha: float = 1e-3, beta: float = 2.0, kappa: float = 0.0,
                 process_std=PROCESS_STD, measurement_std=MEASUREMENT_STD):
        self.horizon = horizon
        self.dt = dt
        self.refilter = refilter
        self.alpha = alpha
        self.beta = beta
        self.kappa = kappa
        self.process_std = process_std
        self.measurement_std = measurement_std

    def _params(self) -> UkfParams:
        return UkfParams(self.alpha, self.beta, self.kappa, tuple(self.process_std), tuple(self.measurement_std))

    def fit(self, X=None, y=None):
        if y is not None and self.horizon is None:
            self.horizon_ = np.asarray(y).shape[1]
        else:
            self.horizon_ = self.horizon
        return self

    def filtered_state(self, ex: Example) -> UkfState:
        if not self.refilter or not ex.history:
            return UkfState.from_actor(ex.target)
        obs = [(s.pose.position.x, s.pose.position.y, s.heading) for s in (*ex.history, ex.target)]
        return track(obs, UkfState.from_actor(ex.history[0]), self.dt, self._params())[-1]

    def predict(self, X: Sequence[Example]) -> np.ndarray:
        out = []
        for ex in X:
            h = getattr(self, "horizon_", None) or self.horizon or ex.horizon
            frame = (ex.target.xy, ex.target.heading)
            out.append(rollout(self.filtered_state(ex), h, self.dt, frame))
        return np.stack(out)

    def score(self, X, y) -> float:
        pred = self.predict(X)
        return -float(np.linalg.norm(pred - np.asarray(y), axis=-1).mean())
