"""
Dynamic-gain time functions mu(t) and comparison gains alpha(s).

A dynamic gain ``mu`` starts at ``b_lo`` at ``t0``, increases strictly towards
``b_hi`` (possibly infinite) and grows no faster than ``b_tilde * mu**2``.
The observer feeds ``alpha(mu(t))`` back as its gain; the pair converges
with the certified envelope when

    alpha'(s) <= 0.5 * s**-2 * sigma / b_tilde * alpha(s)**2

holds on the values ``mu`` visits.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from dyngain.errors import NumericError, RejectedInput, ValidationError

# Relative slack used when comparing analytic quantities that are equal in
# exact arithmetic (e.g. the gain condition at c = 2 b_tilde / sigma).
ROUNDOFF_SLACK = 1e-12


def _positive(name, value):
    if not (math.isfinite(value) and value > 0.0):
        raise RejectedInput(f"{name} must be a positive finite number, got {value}")
    return float(value)


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        raise NumericError(f"exp({x}) overflows; shorten the horizon or reduce the rate") from None


# --------------------------------------------------------------------------
# mu(t)
# --------------------------------------------------------------------------


class KfFunction(ABC):
    """Base class for dynamic-gain time functions."""

    kind: str = ""
    t0: float = 0.0
    #: False for user-supplied tabulated functions whose constants are declared, not derived.
    verified: bool = True

    @abstractmethod
    def value(self, t: float) -> float: ...

    @abstractmethod
    def rate(self, t: float) -> float: ...

    @abstractmethod
    def constants(self) -> tuple[float, float, float]:
        """Return ``(b_lo, b_hi, b_tilde)``."""

    @abstractmethod
    def params(self) -> dict: ...

    def headroom(self, t: float) -> float:
        """``b_hi - mu(t)`` computed without cancellation (inf when unbounded)."""
        return math.inf

    @property
    def b_lo(self):
        return self.constants()[0]

    @property
    def b_hi(self):
        return self.constants()[1]

    @property
    def b_tilde(self):
        return self.constants()[2]


@dataclass(frozen=True)
class LinearKf(KfFunction):
    """mu(t) = k1 (t - t0) + k2."""

    k1: float
    k2: float
    t0: float = 0.0
    kind = "linear"

    def __post_init__(self):
        _positive("k1", self.k1)
        _positive("k2", self.k2)

    def value(self, t):
        return self.k1 * (t - self.t0) + self.k2

    def rate(self, t):
        return self.k1

    def constants(self):
        return self.k2, math.inf, self.k1 / self.k2**2

    def params(self):
        return {"k1": self.k1, "k2": self.k2}


@dataclass(frozen=True)
class ExponentialKf(KfFunction):
    """mu(t) = exp(k (t - t0))."""

    k: float
    t0: float = 0.0
    kind = "exponential"

    def __post_init__(self):
        _positive("k", self.k)

    def value(self, t):
        return _exp(self.k * (t - self.t0))

    def rate(self, t):
        return self.k * _exp(self.k * (t - self.t0))

    def constants(self):
        return 1.0, math.inf, self.k

    def params(self):
        return {"k": self.k}


@dataclass(frozen=True)
class LogisticKf(KfFunction):
    """mu(t) = k / (1 + k exp(-lam (t - t0))), saturating at ``k``."""

    k: float
    lam: float
    t0: float = 0.0
    kind = "logistic"

    def __post_init__(self):
        _positive("k", self.k)
        _positive("lam", self.lam)

    def value(self, t):
        return self.k / (1.0 + self.k * math.exp(-self.lam * (t - self.t0)))

    def headroom(self, t):
        e = self.k * math.exp(-self.lam * (t - self.t0))
        return self.k * e / (1.0 + e)

    def rate(self, t):
        # lam * mu * (1 - mu / k), with (k - mu) taken from headroom to stay
        # accurate once mu is within an ulp of k.
        return self.lam * self.value(t) * self.headroom(t) / self.k

    def constants(self):
        return self.k / (1.0 + self.k), self.k, self.lam

    def params(self):
        return {"k": self.k, "lam": self.lam}


@dataclass(frozen=True)
class TabulatedKf(KfFunction):
    """User-supplied mu samples, interpolated with a monotone cubic.

    The constants are declared by the user (``b_tilde`` defaults to the
    largest sampled rate/mu**2 ratio) and are reported as unverified.
    Evaluation outside the tabulated time range is rejected.
    """

    times: tuple
    values: tuple
    b_hi_declared: float = math.inf
    b_tilde_declared: float | None = None
    kind = "tabulated"
    verified = False
    _interp: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 2 or t.size != v.size:
            raise RejectedInput("tabulated mu needs matching time/value arrays of length >= 2")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise RejectedInput("tabulated mu contains non-finite samples")
        if np.any(np.diff(t) <= 0.0):
            raise RejectedInput("tabulated times must be strictly increasing")
        if v[0] < 0.0:
            raise RejectedInput(f"tabulated mu must start at b_lo >= 0, got {v[0]}")
        if not self.b_hi_declared > v[0]:
            raise ValidationError(
                "b_lo < b_hi", f"declared b_hi={self.b_hi_declared} does not exceed b_lo={v[0]}"
            )
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))
        object.__setattr__(self, "t0", float(t[0]))
        object.__setattr__(self, "_interp", PchipInterpolator(t, v, extrapolate=False))

    def _check(self, t):
        if t > self.times[-1]:
            raise RejectedInput(f"t={t} lies beyond the last tabulated sample {self.times[-1]}")

    def value(self, t):
        self._check(t)
        return float(self._interp(t))

    def rate(self, t):
        self._check(t)
        return float(self._interp.derivative()(t))

    def constants(self):
        b_tilde = self.b_tilde_declared
        if b_tilde is None:
            t = np.linspace(self.times[0], self.times[-1], 4 * len(self.times))
            mu = self._interp(t)
            b_tilde = float(np.max(self._interp.derivative()(t) / np.maximum(mu, 1e-300) ** 2))
            b_tilde = max(b_tilde, 1e-300)
        return self.values[0], self.b_hi_declared, b_tilde

    def params(self):
        out = {"times": list(self.times), "values": list(self.values)}
        if math.isfinite(self.b_hi_declared):
            out["b_hi"] = self.b_hi_declared
        if self.b_tilde_declared is not None:
            out["b_tilde"] = self.b_tilde_declared
        return out


def _check_time(f, t):
    if not math.isfinite(t):
        raise RejectedInput(f"non-finite time {t}")
    if t < f.t0:
        raise RejectedInput(f"t={t} precedes t0={f.t0}")


def mu_eval(f: KfFunction, t: float) -> float:
    _check_time(f, t)
    return f.value(t)


def mu_rate(f: KfFunction, t: float) -> float:
    _check_time(f, t)
    return f.rate(t)


@dataclass(frozen=True)
class ValidationReport:
    b_lo: float
    b_hi: float
    b_tilde: float
    max_ratio: float
    verified_constants: bool = True


def kf_validate(f: KfFunction, horizon: float, grid_points: int) -> ValidationReport:
    """Check the defining properties of ``f`` on a uniform grid over ``[t0, t0 + horizon]``.

    Monotonicity of bounded functions is checked on ``b_hi - mu``, which
    stays resolvable after ``mu`` itself has saturated in floating point.
    Raises ``ValidationError`` naming the clause and witness time on failure.
    """
    if not (math.isfinite(horizon) and horizon > 0.0):
        raise RejectedInput(f"horizon must be positive, got {horizon}")
    if int(grid_points) < 2:
        raise RejectedInput(f"grid_points must be >= 2, got {grid_points}")
    b_lo, b_hi, b_tilde = f.constants()
    if not 0.0 <= b_lo < b_hi:
        raise ValidationError("0 <= b_lo < b_hi", f"b_lo={b_lo}, b_hi={b_hi}")
    if not b_tilde > 0.0:
        raise ValidationError("b_tilde > 0", f"b_tilde={b_tilde}")

    mu0 = f.value(f.t0)
    if mu0 != b_lo:
        raise ValidationError("mu(t0) = b_lo", f"mu(t0)={mu0!r} but b_lo={b_lo!r}", witness=f.t0)

    t = f.t0 + np.linspace(0.0, horizon, int(grid_points))
    mu = np.array([f.value(ti) for ti in t])
    rate = np.array([f.rate(ti) for ti in t])
    if math.isfinite(b_hi):
        gap = np.array([f.headroom(ti) for ti in t])
        bad = np.flatnonzero(np.diff(gap) >= 0.0)
        if bad.size:
            raise ValidationError("strictly increasing", "b_hi - mu failed to decrease", witness=float(t[bad[0] + 1]))
        bad = np.flatnonzero(gap <= 0.0)
        if bad.size:
            raise ValidationError("mu < b_hi", f"mu reached b_hi={b_hi}", witness=float(t[bad[0]]))
    else:
        bad = np.flatnonzero(np.diff(mu) <= 0.0)
        if bad.size:
            raise ValidationError("strictly increasing", "mu failed to increase", witness=float(t[bad[0] + 1]))
    bad = np.flatnonzero(mu < b_lo)
    if bad.size:
        raise ValidationError("mu >= b_lo", f"mu={mu[bad[0]]} below b_lo", witness=float(t[bad[0]]))

    ratio = rate / mu**2
    max_ratio = float(np.max(ratio))
    if max_ratio > b_tilde * (1.0 + ROUNDOFF_SLACK) + 1e-300:
        i = int(np.argmax(ratio))
        raise ValidationError(
            "dmu/dt <= b_tilde mu^2", f"ratio {max_ratio} exceeds b_tilde={b_tilde}", witness=float(t[i])
        )
    return ValidationReport(b_lo, b_hi, b_tilde, max_ratio, verified_constants=f.verified)


# --------------------------------------------------------------------------
# alpha(s)
# --------------------------------------------------------------------------


class GainFunction(ABC):
    """Comparison gain alpha (class K-infinity) with its condition margin ``sigma``."""

    kind: str = ""
    sigma: float = 0.5
    verified: bool = True

    @abstractmethod
    def value(self, s: float) -> float: ...

    @abstractmethod
    def rate(self, s: float) -> float: ...

    @abstractmethod
    def params(self) -> dict: ...

    def margin(self, s: float, b_tilde: float) -> float:
        return 0.5 * self.sigma / b_tilde * (self.value(s) / s) ** 2 - self.rate(s)

    def holds_for_all_s(self, b_tilde: float) -> bool | None:
        """Closed-form verdict over all s > 0, or None when no closed form is known."""
        return None


def _check_sigma(sigma):
    if not (math.isfinite(sigma) and 0.0 < sigma < 1.0):
        raise RejectedInput(f"sigma must lie in (0, 1), got {sigma}")
    return float(sigma)


@dataclass(frozen=True)
class LinearGain(GainFunction):
    """alpha(s) = c s."""

    c: float
    sigma: float = 0.5
    kind = "linear"

    def __post_init__(self):
        _positive("c", self.c)
        _check_sigma(self.sigma)

    def value(self, s):
        return self.c * s

    def rate(self, s):
        return self.c

    def margin(self, s, b_tilde):
        return 0.5 * self.sigma / b_tilde * self.c**2 - self.c

    def holds_for_all_s(self, b_tilde):
        return self.c >= min_admissible_c(b_tilde, self.sigma) * (1.0 - ROUNDOFF_SLACK)

    def params(self):
        return {"c": self.c, "sigma": self.sigma}


@dataclass(frozen=True)
class ExpGain(GainFunction):
    """alpha(s) = k s exp(lam s)."""

    k: float
    lam: float
    sigma: float = 0.5
    kind = "exp"

    def __post_init__(self):
        _positive("k", self.k)
        _positive("lam", self.lam)
        _check_sigma(self.sigma)

    def value(self, s):
        return self.k * s * _exp(self.lam * s)

    def rate(self, s):
        return self.k * _exp(self.lam * s) * (1.0 + self.lam * s)

    def margin(self, s, b_tilde):
        # k e^{lam s} (0.5 sigma k e^{lam s} / b_tilde - 1 - lam s); inf once e^{lam s} overflows
        x = self.lam * s
        if x > 700.0:
            return math.inf
        e = math.exp(x)
        return self.k * e * (0.5 * self.sigma * self.k * e / b_tilde - 1.0 - x)

    def holds_for_all_s(self, b_tilde):
        # k >= 2 b_tilde / sigma is sufficient; below it nothing is claimed.
        if self.k >= min_admissible_c(b_tilde, self.sigma) * (1.0 - ROUNDOFF_SLACK):
            return True
        return None

    def params(self):
        return {"k": self.k, "lam": self.lam, "sigma": self.sigma}


@dataclass(frozen=True)
class TabulatedGain(GainFunction):
    """User-supplied alpha samples on s >= 0 with alpha(0) = 0; never certified analytically."""

    s_values: tuple
    alpha_values: tuple
    sigma: float = 0.5
    kind = "tabulated"
    verified = False
    _interp: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_sigma(self.sigma)
        s = np.asarray(self.s_values, dtype=float)
        a = np.asarray(self.alpha_values, dtype=float)
        if s.ndim != 1 or s.size < 2 or s.size != a.size:
            raise RejectedInput("tabulated alpha needs matching arrays of length >= 2")
        if s[0] != 0.0 or a[0] != 0.0:
            raise RejectedInput("tabulated alpha must start at (0, 0)")
        if np.any(np.diff(s) <= 0.0) or np.any(np.diff(a) <= 0.0):
            raise RejectedInput("tabulated alpha must be strictly increasing")
        object.__setattr__(self, "s_values", tuple(s.tolist()))
        object.__setattr__(self, "alpha_values", tuple(a.tolist()))
        object.__setattr__(self, "_interp", PchipInterpolator(s, a, extrapolate=False))

    def _check(self, s):
        if s > self.s_values[-1]:
            raise RejectedInput(f"s={s} lies beyond the last tabulated sample {self.s_values[-1]}")

    def value(self, s):
        self._check(s)
        return float(self._interp(s))

    def rate(self, s):
        self._check(s)
        return float(self._interp.derivative()(s))

    def params(self):
        return {"s": list(self.s_values), "alpha": list(self.alpha_values), "sigma": self.sigma}


def alpha_eval(g: GainFunction, s: float) -> float:
    if not (math.isfinite(s) and s >= 0.0):
        raise RejectedInput(f"alpha is defined for s >= 0, got {s}")
    return g.value(s)


def alpha_rate(g: GainFunction, s: float) -> float:
    if not (math.isfinite(s) and s > 0.0):
        raise RejectedInput(f"alpha_rate needs s > 0, got {s}")
    return g.rate(s)


def min_admissible_c(b_tilde: float, sigma: float) -> float:
    """Smallest slope c for which alpha(s) = c s meets the gain condition."""
    _positive("b_tilde", b_tilde)
    _check_sigma(sigma)
    return 2.0 * b_tilde / sigma


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    worst_margin: float
    witness_s: float
    grid_lo: float
    grid_hi: float
    #: closed-form verdict over every s > 0 (None: no closed form for this family)
    holds_all_s: bool | None = None
    #: the grid stops short of the range mu can visit (b_hi beyond grid_hi)
    range_truncated: bool = False


def default_condition_grid(kf: KfFunction, points: int = 512) -> np.ndarray:
    """Log-spaced grid on ``[b_lo, min(b_hi, 1e3 b_lo)]``, the range mu visits."""
    b_lo, b_hi, _ = kf.constants()
    lo = b_lo if b_lo > 0.0 else 1e-6
    hi = min(b_hi, lo * 1e3)
    return np.geomspace(lo, hi, points)


def _rate_scale(g, s):
    try:
        return max(1.0, abs(g.rate(s)))
    except NumericError:
        return 1.0


def verify_gain_condition(g: GainFunction, b_tilde: float, s_grid=None, kf: KfFunction | None = None) -> ConditionReport:
    """Evaluate ``0.5 s^-2 sigma alpha(s)^2 / b_tilde - alpha'(s)`` on a grid.

    Without an explicit ``s_grid`` the default grid for ``kf`` is used.
    """
    _positive("b_tilde", b_tilde)
    _check_sigma(g.sigma)
    if s_grid is None:
        if kf is None:
            raise RejectedInput("pass either s_grid or kf")
        s_grid = default_condition_grid(kf)
    s = np.asarray(s_grid, dtype=float).reshape(-1)
    if s.size == 0:
        raise RejectedInput("s_grid is empty")
    if not (np.all(np.isfinite(s)) and np.all(s > 0.0)):
        raise RejectedInput("s_grid entries must be positive and finite")

    # fast-growing gains overflow to +inf far out on the grid, which is the right verdict there
    with np.errstate(over="ignore"):
        margins = np.array([g.margin(si, b_tilde) for si in s])
        scale = np.array([_rate_scale(g, si) for si in s])
    i = int(np.argmin(margins))
    holds = bool(np.all(margins >= -ROUNDOFF_SLACK * scale))
    truncated = False
    if kf is not None:
        truncated = bool(kf.constants()[1] > s.max())
    return ConditionReport(
        holds=holds,
        worst_margin=float(margins[i]),
        witness_s=float(s[i]),
        grid_lo=float(s.min()),
        grid_hi=float(s.max()),
        holds_all_s=g.holds_for_all_s(b_tilde),
        range_truncated=truncated,
    )


KF_KINDS = {"linear": LinearKf, "exponential": ExponentialKf, "logistic": LogisticKf, "tabulated": TabulatedKf}
GAIN_KINDS = {"linear": LinearGain, "exp": ExpGain, "tabulated": TabulatedGain}


def make_kf(kind: str, params: dict, t0: float = 0.0) -> KfFunction:
    p = dict(params)
    if kind == "tabulated":
        return TabulatedKf(
            times=tuple(p.pop("times")),
            values=tuple(p.pop("values")),
            b_hi_declared=float(p.pop("b_hi", math.inf)),
            b_tilde_declared=p.pop("b_tilde", None),
        )
    try:
        cls = KF_KINDS[kind]
    except KeyError:
        raise RejectedInput(f"unknown kf kind {kind!r}; expected one of {sorted(KF_KINDS)}") from None
    return cls(**p, t0=t0)


def make_gain(kind: str, params: dict) -> GainFunction:
    p = dict(params)
    if kind == "tabulated":
        return TabulatedGain(s_values=tuple(p.pop("s")), alpha_values=tuple(p.pop("alpha")), **p)
    try:
        cls = GAIN_KINDS[kind]
    except KeyError:
        raise RejectedInput(f"unknown gain kind {kind!r}; expected one of {sorted(GAIN_KINDS)}") from None
    return cls(**p)
