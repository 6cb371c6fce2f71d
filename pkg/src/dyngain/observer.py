"""
Dynamic-gain disturbance observer.

The observer estimates the acceleration-level disturbance D = M^-1 d through

    D_hat = xi + a(t) qd
    xi'   = -a'(t) qd - a(t) M^-1 (u - C qd - G) - a(t) D_hat
    d_hat = M D_hat

with ``a(t) = alpha(mu(t))`` and ``a'(t)`` its total time derivative. Only
measured quantities (q, qd, M, C, G) and the known input ``u`` enter; the
true disturbance is confined to :func:`error_rate_oracle`, which integrates
the closed-form error dynamics ``D_tilde' = -a D_tilde - D'`` for
cross-checking.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from dyngain.errors import RejectedInput
from dyngain.gain_schedule import GainFunction, KfFunction
from dyngain.plants import GeneralizedState, PlantMatrices, spd_solve


class Xi0Policy(str, enum.Enum):
    ZERO = "zero"
    CANCEL_VELOCITY_TERM = "cancel"


@dataclass(frozen=True)
class DynamicGain:
    """Time-varying observer gain alpha(mu(t))."""

    gain: GainFunction
    kf: KfFunction

    def value(self, t):
        return self.gain.value(self.kf.value(t))

    def value_and_rate(self, t):
        mu = self.kf.value(t)
        return self.gain.value(mu), self.gain.rate(mu) * self.kf.rate(t)


@dataclass(frozen=True)
class ConstantGain:
    """Fixed observer gain L, the classical baseline."""

    L: float

    def __post_init__(self):
        if not (math.isfinite(self.L) and self.L > 0.0):
            raise RejectedInput(f"baseline gain must be positive, got {self.L}")

    def value(self, t):
        return self.L

    def value_and_rate(self, t):
        return self.L, 0.0


def as_schedule(g, f=None):
    """Accept ``(GainFunction, KfFunction)`` or a ready-made gain schedule."""
    if isinstance(g, (DynamicGain, ConstantGain)):
        return g
    if isinstance(g, GainFunction) and isinstance(f, KfFunction):
        return DynamicGain(g, f)
    raise RejectedInput("expected a GainFunction with a KfFunction, or a DynamicGain/ConstantGain")


@dataclass(frozen=True)
class ObserverState:
    xi: np.ndarray
    t: float

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if not np.all(np.isfinite(xi)):
            raise RejectedInput(f"observer state has non-finite entries: {xi}")
        object.__setattr__(self, "xi", xi)


@dataclass(frozen=True)
class ObserverOutput:
    D_hat: np.ndarray
    d_hat: np.ndarray


@dataclass(frozen=True)
class ErrorState:
    D_tilde: np.ndarray
    d_tilde: np.ndarray


def _check_dims(obs, state, mats=None):
    n = state.n_dof
    if obs is not None and obs.xi.size != n:
        raise RejectedInput(f"observer has {obs.xi.size} states, plant state has {n}")
    if mats is not None and mats.m.shape != (n, n):
        raise RejectedInput(f"mass matrix shape {mats.m.shape} does not match n_dof={n}")


def observer_init(n_dof, state0: GeneralizedState, g, f=None, xi0_policy=Xi0Policy.CANCEL_VELOCITY_TERM) -> ObserverState:
    """Initial observer state.

    ``zero`` starts from xi = 0, so D_hat(t0) = alpha(mu(t0)) qd(t0);
    ``cancel`` starts from xi = -alpha(mu(t0)) qd(t0), so d_hat(t0) = 0.
    """
    if state0.n_dof != n_dof:
        raise RejectedInput(f"state0 has {state0.n_dof} degrees of freedom, expected {n_dof}")
    policy = Xi0Policy(xi0_policy)
    if policy is Xi0Policy.ZERO:
        return ObserverState(np.zeros(n_dof), state0.t)
    a0 = as_schedule(g, f).value(state0.t)
    return ObserverState(-a0 * state0.qd, state0.t)


def _xi_rate(xi, qd, m, c, g, u, a, a_dot):
    D_hat = xi + a * qd
    return -a_dot * qd - a * spd_solve(m, u - c @ qd - g) - a * D_hat


def xi_rate(obs: ObserverState, state: GeneralizedState, mats: PlantMatrices, u, g, f=None) -> np.ndarray:
    """Rate of the internal observer state; consumes the known input ``u`` only."""
    _check_dims(obs, state, mats)
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != state.n_dof:
        raise RejectedInput(f"u has length {u.size}, expected {state.n_dof}")
    a, a_dot = as_schedule(g, f).value_and_rate(state.t)
    return _xi_rate(obs.xi, state.qd, mats.m, mats.c, mats.g, u, a, a_dot)


def observer_output(obs: ObserverState, state: GeneralizedState, mats: PlantMatrices, g, f=None) -> ObserverOutput:
    _check_dims(obs, state, mats)
    D_hat = obs.xi + as_schedule(g, f).value(state.t) * state.qd
    return ObserverOutput(D_hat=D_hat, d_hat=mats.m @ D_hat)


def error_state(output: ObserverOutput, mats: PlantMatrices, d) -> ErrorState:
    """Estimation errors against the true disturbance (test/logging use only)."""
    d = np.asarray(d, dtype=float).reshape(-1)
    return ErrorState(D_tilde=output.D_hat - spd_solve(mats.m, d), d_tilde=output.d_hat - d)


def _D_rate(m, c, d, d_dot):
    # d/dt (M^-1 d) = -M^-1 Mdot M^-1 d + M^-1 d_dot, with Mdot = C + C^T
    D = spd_solve(m, d)
    return spd_solve(m, d_dot - (c + c.T) @ D)


def disturbance_rate(mats: PlantMatrices, d, d_dot) -> np.ndarray:
    """Time derivative of D = M^-1 d along the flow."""
    return _D_rate(mats.m, mats.c, np.asarray(d, dtype=float), np.asarray(d_dot, dtype=float))


def error_rate_oracle(D_tilde, t, state: GeneralizedState, mats: PlantMatrices, d, d_dot, g, f=None) -> np.ndarray:
    """Closed-form error dynamics ``-alpha(mu(t)) D_tilde - D'`` using the true disturbance."""
    _check_dims(None, state, mats)
    D_tilde = np.asarray(D_tilde, dtype=float).reshape(-1)
    a = as_schedule(g, f).value(t)
    return -a * D_tilde - disturbance_rate(mats, d, d_dot)
