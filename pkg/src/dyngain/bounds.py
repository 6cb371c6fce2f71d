"""
Convergence certificate for the dynamic-gain observer.

When the gain condition holds, the disturbance estimation error obeys

    ||d_tilde(t)|| <= ( k_m_hi / k_m_lo * alpha(mu(t0)) * ||d_tilde(t0)||
                        + k_m_hi * sigma_tilde**-0.5 * Ddot_m ) / alpha(mu(t))

with ``Ddot_m = 2 k_c qd_m d_m / k_m_lo**2 + d_dot_m / k_m_lo`` bounding the
rate of D = M^-1 d. This module evaluates that envelope and checks logged
trajectories against it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from dyngain.errors import NumericError, RejectedInput
from dyngain.gain_schedule import GainFunction, KfFunction
from dyngain.plants import PropertyConstants

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-3
# Absolute floor for the check: a zero envelope still admits round-off.
DEFAULT_ATOL = 1e-10


@dataclass(frozen=True)
class SupNorms:
    q_m: float
    qd_m: float
    d_m: float
    d_dot_m: float

    def __post_init__(self):
        for name in ("q_m", "qd_m", "d_m", "d_dot_m"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise RejectedInput(f"{name} must be finite and non-negative, got {v}")


def sigma_tilde_from_sigma(sigma: float) -> float:
    """Decay fraction left once the gain-growth term is absorbed: 1 - sigma."""
    if not (math.isfinite(sigma) and 0.0 < sigma < 1.0):
        raise RejectedInput(f"sigma must lie in (0, 1), got {sigma}")
    return 1.0 - sigma


def d_dot_m_bound(props: PropertyConstants, norms: SupNorms) -> float:
    """Upper bound on ||d/dt (M^-1 d)||."""
    return (
        2.0 * props.k_c * norms.qd_m * norms.d_m / props.k_m_lo**2
        + norms.d_dot_m / props.k_m_lo
    )


@dataclass(frozen=True)
class BoundCertificate:
    k_m_lo: float
    k_m_hi: float
    k_c: float
    sigma: float
    sigma_tilde: float
    D_dot_m: float
    alpha_mu_t0: float
    gain: GainFunction
    kf: KfFunction
    norms: SupNorms | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise RejectedInput(f"sigma must lie in (0, 1), got {self.sigma}")
        if not 0.0 < self.sigma_tilde < 1.0:
            raise RejectedInput(f"sigma_tilde must lie in (0, 1), got {self.sigma_tilde}")
        if not 0.0 < self.k_m_lo <= self.k_m_hi:
            raise RejectedInput("need 0 < k_m_lo <= k_m_hi")
        if not (math.isfinite(self.D_dot_m) and self.D_dot_m >= 0.0):
            raise RejectedInput(f"D_dot_m must be finite and non-negative, got {self.D_dot_m}")

    @classmethod
    def build(cls, props: PropertyConstants, norms: SupNorms, gain: GainFunction, kf: KfFunction,
              sigma_tilde: float | None = None) -> "BoundCertificate":
        """Assemble the certificate; ``sigma_tilde`` defaults to ``1 - gain.sigma``."""
        if sigma_tilde is None:
            sigma_tilde = sigma_tilde_from_sigma(gain.sigma)
        return cls(
            k_m_lo=props.k_m_lo,
            k_m_hi=props.k_m_hi,
            k_c=props.k_c,
            sigma=gain.sigma,
            sigma_tilde=sigma_tilde,
            D_dot_m=d_dot_m_bound(props, norms),
            alpha_mu_t0=gain.value(kf.value(kf.t0)),
            gain=gain,
            kf=kf,
            norms=norms,
        )

    def numerator(self, d_tilde_0: float) -> float:
        return (
            self.k_m_hi / self.k_m_lo * self.alpha_mu_t0 * d_tilde_0
            + self.k_m_hi * self.sigma_tilde**-0.5 * self.D_dot_m
        )

    def limit(self, d_tilde_0: float) -> float:
        """Envelope as t -> infinity (0 when b_hi is infinite)."""
        b_hi = self.kf.b_hi
        if math.isinf(b_hi):
            return 0.0
        return self.numerator(d_tilde_0) / self.gain.value(b_hi)


def predefined_bound(cert: BoundCertificate, d_tilde_0: float, t) -> float | np.ndarray:
    """Envelope on ||d_tilde(t)||; ``t`` may be a scalar or an array of times."""
    if not (math.isfinite(d_tilde_0) and d_tilde_0 >= 0.0):
        raise RejectedInput(f"||d_tilde(t0)|| must be finite and non-negative, got {d_tilde_0}")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < cert.kf.t0):
        raise RejectedInput(f"bound evaluated before t0={cert.kf.t0}")
    num = cert.numerator(d_tilde_0)
    gains = np.array([cert.gain.value(cert.kf.value(ti)) for ti in times])
    if np.any(gains <= 0.0):
        raise NumericError("alpha(mu(t)) vanished; the envelope is undefined (b_lo = 0?)")
    out = num / gains
    if np.ndim(t) == 0:
        return float(out[0])
    return out


@dataclass
class BoundReport:
    violations: list  # (t, measured, bound)
    max_ratio: float
    n_samples: int
    tolerance: float
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self, max_violations=20):
        return {
            "ok": self.ok,
            "n_samples": self.n_samples,
            "tolerance": self.tolerance,
            "max_ratio": self.max_ratio,
            "violations_count": len(self.violations),
            "violations": [list(v) for v in self.violations[:max_violations]],
            "warnings": list(self.warnings),
        }


def check_trajectory_bound(cert: BoundCertificate, log, tolerance: float = DEFAULT_TOLERANCE,
                           atol: float = DEFAULT_ATOL) -> BoundReport:
    """Compare every logged ||d_tilde(t)|| against ``(1 + tolerance) * bound(t) + atol``.

    ``log`` needs ``t`` and ``d_tilde`` columns whose first row is the initial
    instant. ``max_ratio`` is measured/bound over samples with a positive bound.
    """
    t = np.asarray(log.t, dtype=float)
    if t.size == 0:
        raise RejectedInput("trajectory log is empty")
    if not (math.isfinite(tolerance) and tolerance >= 0.0):
        raise RejectedInput(f"tolerance must be non-negative, got {tolerance}")
    measured = np.linalg.norm(np.asarray(log.d_tilde, dtype=float).reshape(t.size, -1), axis=1)
    bound = predefined_bound(cert, float(measured[0]), t)
    bound = np.atleast_1d(bound)

    bad = measured > (1.0 + tolerance) * bound + atol
    violations = [(float(ti), float(mi), float(bi)) for ti, mi, bi in zip(t[bad], measured[bad], bound[bad])]
    positive = bound > 0.0
    max_ratio = float(np.max(measured[positive] / bound[positive])) if positive.any() else 0.0

    warnings = []
    if cert.norms is not None:
        from dyngain.sim import measure_sup_norms  # local import: sim depends on this module

        try:
            measured_norms = measure_sup_norms(log)
        except (AttributeError, RejectedInput):
            measured_norms = None
        if measured_norms is not None:
            for name in ("qd_m", "d_m", "d_dot_m"):
                declared, seen = getattr(cert.norms, name), getattr(measured_norms, name)
                if seen > declared * (1.0 + 1e-9) + 1e-12:
                    msg = f"measured {name}={seen:.6g} exceeds declared {declared:.6g}; certificate may not apply"
                    warnings.append(msg)
                    logger.warning(msg)
    return BoundReport(violations, max_ratio, int(t.size), tolerance, warnings)
