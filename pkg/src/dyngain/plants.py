"""
Euler-Lagrange plant models.

Both plants follow the structure

    M(q) qdd + C(q, qd) qd + G(q) = u + d(t)

where ``u`` lumps every known generalized force (joint torques plus the
contact-force contribution on a legged robot) and ``d`` is the external
disturbance. ``C`` is built from Christoffel symbols, so ``Mdot = C + C^T``
holds identically and can be used as a test oracle.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import lapack
from scipy.optimize import minimize_scalar

from dyngain.errors import NumericError, RejectedInput


def _as_vector(x, name, n=None):
    arr = np.asarray(x, dtype=float).reshape(-1)
    if n is not None and arr.size != n:
        raise RejectedInput(f"{name} has length {arr.size}, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInput(f"{name} contains non-finite entries: {arr}")
    return arr


@dataclass(frozen=True)
class GeneralizedState:
    """Joint positions ``q``, velocities ``qd`` and time ``t``."""

    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = _as_vector(self.q, "q")
        qd = _as_vector(self.qd, "qd")
        if q.size < 1:
            raise RejectedInput("state needs at least one degree of freedom")
        if q.size != qd.size:
            raise RejectedInput(f"q has length {q.size} but qd has length {qd.size}")
        if not math.isfinite(self.t):
            raise RejectedInput(f"non-finite time {self.t}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n_dof(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class PlantMatrices:
    m: np.ndarray
    c: np.ndarray
    g: np.ndarray


@dataclass(frozen=True)
class PropertyConstants:
    """Bounds k_m_lo I <= M <= k_m_hi I, ||C|| <= k_c ||qd||, ||G|| <= k_g."""

    k_m_lo: float
    k_m_hi: float
    k_c: float
    k_g: float

    def __post_init__(self):
        vals = (self.k_m_lo, self.k_m_hi, self.k_c, self.k_g)
        if not all(math.isfinite(v) for v in vals):
            raise RejectedInput(f"property constants must be finite, got {vals}")
        if not 0.0 < self.k_m_lo <= self.k_m_hi:
            raise RejectedInput(f"need 0 < k_m_lo <= k_m_hi, got {self.k_m_lo}, {self.k_m_hi}")
        if self.k_c < 0.0 or self.k_g < 0.0:
            raise RejectedInput(f"k_c and k_g must be non-negative, got {self.k_c}, {self.k_g}")

    def encloses(self, other: "PropertyConstants", tol: float = 1e-9) -> bool:
        """True if ``other`` (e.g. empirical estimates) lies inside these bounds."""
        return (
            self.k_m_lo <= other.k_m_lo + tol
            and other.k_m_hi <= self.k_m_hi + tol
            and other.k_c <= self.k_c + tol
            and other.k_g <= self.k_g + tol
        )


def spd_factor(m, context=None):
    """Lower Cholesky factor of an SPD matrix (LAPACK packed layout)."""
    factor, info = lapack.dpotrf(m, lower=1, clean=0)
    if info != 0:
        where = f" at {context}" if context is not None else ""
        raise NumericError(
            f"mass matrix is not positive definite{where} (potrf info={info})"
        )
    return factor


def spd_factor_solve(factor, b):
    x, info = lapack.dpotrs(factor, b, lower=1)
    if info != 0:
        raise NumericError(f"Cholesky back-substitution failed (potrs info={info})")
    return x


def spd_solve(m, b, context=None):
    """Solve ``m x = b`` through a Cholesky factorization.

    ``b`` may be a vector or an (n, k) block of right-hand sides.
    """
    return spd_factor_solve(spd_factor(m, context), b)


class PlantModel(ABC):
    """Common interface of the Euler-Lagrange plants."""

    kind: str = ""
    n_dof: int = 0

    @abstractmethod
    def mass(self, q: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def coriolis(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def gravity(self, q: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def potential(self, q: np.ndarray) -> float: ...

    @property
    @abstractmethod
    def property_constants(self) -> PropertyConstants: ...

    @abstractmethod
    def params(self) -> dict: ...

    def matrices(self, q, qd):
        # Unchecked fast path for the integrator; public callers use eval_matrices.
        return self.mass(q), self.coriolis(q, qd), self.gravity(q)

    def energy(self, state: GeneralizedState) -> float:
        m = self.mass(state.q)
        return 0.5 * float(state.qd @ m @ state.qd) + self.potential(state.q)


@dataclass(frozen=True)
class TwoLinkManipulator(PlantModel):
    """Planar revolute two-link arm.

    Angles are measured from the horizontal, so gravity acts through
    ``cos q1`` and ``cos(q1 + q2)``. ``lc1``/``lc2`` default to the link
    lengths (point masses at the distal ends).
    """

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float | None = None
    lc2: float | None = None
    i1: float = 0.0
    i2: float = 0.0
    gravity_accel: float = 9.81

    kind = "TwoLinkManipulator"
    n_dof = 2

    def __post_init__(self):
        if self.lc1 is None:
            object.__setattr__(self, "lc1", self.l1)
        if self.lc2 is None:
            object.__setattr__(self, "lc2", self.l2)
        vals = dict(
            m1=self.m1, m2=self.m2, l1=self.l1, l2=self.l2, lc1=self.lc1,
            lc2=self.lc2, i1=self.i1, i2=self.i2, gravity_accel=self.gravity_accel,
        )
        for name, v in vals.items():
            if not math.isfinite(v):
                raise RejectedInput(f"TwoLinkManipulator.{name} is not finite")
        for name in ("m1", "m2", "l1", "l2", "lc1", "lc2"):
            if vals[name] <= 0.0:
                raise RejectedInput(f"TwoLinkManipulator.{name} must be positive, got {vals[name]}")
        for name in ("i1", "i2", "gravity_accel"):
            if vals[name] < 0.0:
                raise RejectedInput(f"TwoLinkManipulator.{name} must be non-negative")

    # M11 = a + 2 b cos(q2), M12 = e + b cos(q2), M22 = e
    @cached_property
    def _coeffs(self):
        a = self.m1 * self.lc1**2 + self.i1 + self.m2 * (self.l1**2 + self.lc2**2) + self.i2
        b = self.m2 * self.l1 * self.lc2
        e = self.m2 * self.lc2**2 + self.i2
        return a, b, e

    def mass(self, q):
        a, b, e = self._coeffs
        c2 = math.cos(q[1])
        m12 = e + b * c2
        return np.array([[a + 2.0 * b * c2, m12], [m12, e]])

    def coriolis(self, q, qd):
        _, b, _ = self._coeffs
        h = -b * math.sin(q[1])
        return np.array([[h * qd[1], h * (qd[0] + qd[1])], [-h * qd[0], 0.0]])

    def matrices(self, q, qd):
        # same three matrices as mass/coriolis/gravity, sharing the trig calls
        a, b, e = self._coeffs
        c2, s2 = math.cos(q[1]), math.sin(q[1])
        m12 = e + b * c2
        h = -b * s2
        g = self.gravity_accel
        g2 = self.m2 * self.lc2 * g * math.cos(q[0] + q[1])
        return (
            np.array([[a + 2.0 * b * c2, m12], [m12, e]]),
            np.array([[h * qd[1], h * (qd[0] + qd[1])], [-h * qd[0], 0.0]]),
            np.array([(self.m1 * self.lc1 + self.m2 * self.l1) * g * math.cos(q[0]) + g2, g2]),
        )

    def gravity(self, q):
        g = self.gravity_accel
        c12 = math.cos(q[0] + q[1])
        g2 = self.m2 * self.lc2 * g * c12
        return np.array([(self.m1 * self.lc1 + self.m2 * self.l1) * g * math.cos(q[0]) + g2, g2])

    def potential(self, q):
        g = self.gravity_accel
        return float(
            (self.m1 * self.lc1 + self.m2 * self.l1) * g * math.sin(q[0])
            + self.m2 * self.lc2 * g * math.sin(q[0] + q[1])
        )

    def _eig_extremes(self, c2):
        a, b, e = self._coeffs
        m11, m12 = a + 2.0 * b * c2, e + b * c2
        half_tr = 0.5 * (m11 + e)
        det = m11 * e - m12 * m12
        lam_hi = half_tr + math.sqrt(max(half_tr * half_tr - det, 0.0))
        return det / lam_hi, lam_hi

    @cached_property
    def property_constants(self) -> PropertyConstants:
        # M depends on q only through cos(q2) in [-1, 1]: bracket the extreme
        # eigenvalues on a grid, polish with a bounded scalar search, then pad
        # outward by a relative 1e-9.
        grid = np.linspace(-1.0, 1.0, 2001)
        lo = np.array([self._eig_extremes(c)[0] for c in grid])
        hi = np.array([self._eig_extremes(c)[1] for c in grid])
        step = grid[1] - grid[0]

        def polish(values, idx, sign, which):
            best = sign * values[idx]
            left, right = max(grid[idx] - step, -1.0), min(grid[idx] + step, 1.0)
            res = minimize_scalar(
                lambda c: sign * self._eig_extremes(c)[which],
                bounds=(left, right), method="bounded", options={"xatol": 1e-12},
            )
            return sign * min(best, res.fun)

        k_m_lo = polish(lo, int(np.argmin(lo)), 1.0, 0)
        k_m_hi = polish(hi, int(np.argmax(hi)), -1.0, 1)
        _, b, _ = self._coeffs
        # ||C||_2 <= ||C||_F = |b sin q2| sqrt(qd1^2 + qd2^2 + (qd1 + qd2)^2) <= sqrt(3) b ||qd||
        k_c = math.sqrt(3.0) * b
        big_a = (self.m1 * self.lc1 + self.m2 * self.l1) * self.gravity_accel
        big_b = self.m2 * self.lc2 * self.gravity_accel
        k_g = math.hypot(big_a + big_b, big_b)
        return PropertyConstants(
            k_m_lo=k_m_lo * (1.0 - 1e-9),
            k_m_hi=k_m_hi * (1.0 + 1e-9),
            k_c=k_c,
            k_g=k_g,
        )

    def params(self):
        return dict(
            m1=self.m1, m2=self.m2, l1=self.l1, l2=self.l2, lc1=self.lc1, lc2=self.lc2,
            i1=self.i1, i2=self.i2, gravity=self.gravity_accel,
        )


@dataclass(frozen=True)
class FloatingTrunk(PlantModel):
    """Rigid trunk moving in the sagittal plane: q = (x, z, pitch)."""

    mass_kg: float = 12.0
    inertia: float = 0.5
    gravity_accel: float = 9.81
    _m: np.ndarray = field(init=False, repr=False, compare=False)
    _c: np.ndarray = field(init=False, repr=False, compare=False)
    _g: np.ndarray = field(init=False, repr=False, compare=False)

    kind = "FloatingTrunk"
    n_dof = 3

    def __post_init__(self):
        for name in ("mass_kg", "inertia", "gravity_accel"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise RejectedInput(f"FloatingTrunk.{name} is not finite")
        if self.mass_kg <= 0.0 or self.inertia <= 0.0:
            raise RejectedInput("FloatingTrunk mass and inertia must be positive")
        if self.gravity_accel < 0.0:
            raise RejectedInput("FloatingTrunk gravity must be non-negative")
        # constant matrices are shared, so freeze them
        m = np.diag([self.mass_kg, self.mass_kg, self.inertia])
        c = np.zeros((3, 3))
        g = np.array([0.0, self.mass_kg * self.gravity_accel, 0.0])
        for arr in (m, c, g):
            arr.flags.writeable = False
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_c", c)
        object.__setattr__(self, "_g", g)

    def mass(self, q):
        return self._m

    def coriolis(self, q, qd):
        return self._c

    def gravity(self, q):
        return self._g

    def potential(self, q):
        return float(self.mass_kg * self.gravity_accel * q[1])

    @property
    def property_constants(self) -> PropertyConstants:
        return PropertyConstants(
            k_m_lo=min(self.mass_kg, self.inertia),
            k_m_hi=max(self.mass_kg, self.inertia),
            k_c=0.0,
            k_g=self.mass_kg * self.gravity_accel,
        )

    def params(self):
        return dict(mass=self.mass_kg, inertia=self.inertia, gravity=self.gravity_accel)


PLANT_KINDS = {
    "TwoLinkManipulator": TwoLinkManipulator,
    "FloatingTrunk": FloatingTrunk,
}


def make_plant(kind: str, params: dict) -> PlantModel:
    """Build a plant from its kind name and a parameter table (scenario files)."""
    params = dict(params)
    if "gravity" in params:
        params["gravity_accel"] = params.pop("gravity")
    if kind == "FloatingTrunk" and "mass" in params:
        params["mass_kg"] = params.pop("mass")
    try:
        cls = PLANT_KINDS[kind]
    except KeyError:
        raise RejectedInput(f"unknown plant kind {kind!r}; expected one of {sorted(PLANT_KINDS)}")
    try:
        return cls(**params)
    except TypeError as exc:
        raise RejectedInput(f"bad parameters for {kind}: {exc}") from None


def _check_state(model, state):
    if state.n_dof != model.n_dof:
        raise RejectedInput(
            f"state has {state.n_dof} degrees of freedom, {model.kind} has {model.n_dof}"
        )


def eval_matrices(model: PlantModel, state: GeneralizedState) -> PlantMatrices:
    """Evaluate M(q), C(q, qd), G(q) at ``state``."""
    if not isinstance(state, GeneralizedState):
        state = GeneralizedState(*state)
    _check_state(model, state)
    m, c, g = model.matrices(state.q, state.qd)
    return PlantMatrices(m=m, c=c, g=g)


def plant_accel(model: PlantModel, state: GeneralizedState, u, d) -> np.ndarray:
    """Forward dynamics ``qdd = M^-1 (u + d - C qd - G)``."""
    _check_state(model, state)
    u = _as_vector(u, "u", model.n_dof)
    d = _as_vector(d, "d", model.n_dof)
    m, c, g = model.matrices(state.q, state.qd)
    rhs = u + d - c @ state.qd - g
    return spd_solve(m, rhs, context=f"t={state.t}, q={state.q}, qd={state.qd}")


def verify_property2(model: PlantModel, state: GeneralizedState, fd_step: float) -> float:
    """Max-abs residual between a central difference of M along the flow and C + C^T."""
    if not (fd_step > 0.0 and math.isfinite(fd_step)):
        raise RejectedInput(f"fd_step must be positive, got {fd_step}")
    _check_state(model, state)
    q, qd = state.q, state.qd
    mdot = (model.mass(q + fd_step * qd) - model.mass(q - fd_step * qd)) / (2.0 * fd_step)
    c = model.coriolis(q, qd)
    return float(np.max(np.abs(mdot - (c + c.T))))


def certify_property1(model: PlantModel, state_samples) -> PropertyConstants:
    """Empirical Property-1 constants over a list of sampled states.

    Samples with ``qd = 0`` do not contribute to ``k_c``.
    """
    samples = list(state_samples)
    if not samples:
        raise RejectedInput("certify_property1 needs at least one state sample")
    lo, hi, kc, kg = math.inf, -math.inf, 0.0, 0.0
    for s in samples:
        _check_state(model, s)
        m, c, g = model.matrices(s.q, s.qd)
        eig = np.linalg.eigvalsh(m)
        lo, hi = min(lo, eig[0]), max(hi, eig[-1])
        speed = float(np.linalg.norm(s.qd))
        if speed > 0.0:
            kc = max(kc, float(np.linalg.norm(c, 2)) / speed)
        kg = max(kg, float(np.linalg.norm(g)))
    if lo <= 0.0:
        raise NumericError(f"sampled mass matrix has non-positive eigenvalue {lo}")
    return PropertyConstants(k_m_lo=float(lo), k_m_hi=float(hi), k_c=kc, k_g=kg)
