"""Closed-form problem definitions and oracles for the quadratic porous
medium equation du/dt = (1/2) Lap(u^2) on Q = [0,T] x [-a,a]^d.

The self-similar source solution (m=2)

    U(t,x) = t^(-d/(d+2)) (C - |x|^2 / (2(d+2) t^(2/(d+2))))+

and its time-shifted variant give a machine-precision reference for every
downstream test.  All partial derivatives here are hand-derived from the
closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Point or time outside the admissible range of an oracle."""


@dataclass(frozen=True)
class DomainSpec:
    """Space-time box Q = [0,T] x prod_i [-a_i, a_i]."""

    d: int
    half_widths: tuple
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "half_widths", tuple(float(a) for a in self.half_widths))
        if len(self.half_widths) != self.d:
            raise ValueError("half_widths length must equal d")
        if any(a <= 0 for a in self.half_widths) or self.T <= 0:
            raise ValueError("half_widths and T must be positive")

    @classmethod
    def cube(cls, d, a, T=1.0):
        return cls(d=d, half_widths=(float(a),) * d, T=T)

    @property
    def volume(self):
        return float(np.prod([2.0 * a for a in self.half_widths]))


@dataclass(frozen=True)
class BarenblattSpec:
    """Parameters of the self-similar source solution."""

    d: int
    C: float = 1.0
    m: int = 2
    time_shift: float = 0.0

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.m < 2:
            raise ValueError("m must be >= 2")

    @property
    def alpha(self):
        return self.d / (self.d * (self.m - 1) + 2.0)

    @property
    def beta(self):
        return self.alpha / self.d


def _shifted_time(spec, t):
    s = np.asarray(t, dtype=np.float64) + spec.time_shift
    if np.any(s <= 0):
        raise DomainError(f"t + time_shift must be positive, got {s}")
    return s


def _sqnorm(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.dot(x, x)
    return np.sum(x * x, axis=0)


def barenblatt(spec: BarenblattSpec, t, x):
    """Solution value; never negative, zero outside the support ball."""
    s = _shifted_time(spec, t)
    d, m, C = spec.d, spec.m, spec.C
    if m == 2:
        core = C - _sqnorm(x) / (2.0 * (d + 2) * s ** (2.0 / (d + 2)))
        return s ** (-d / (d + 2.0)) * np.maximum(core, 0.0)
    core = C - (spec.beta * (m - 1) / 2.0) * _sqnorm(x) / s ** (2.0 * spec.beta)
    return s ** (-spec.alpha) * np.maximum(core, 0.0) ** (1.0 / (m - 1))


def free_boundary_radius(spec: BarenblattSpec, t):
    """Radius of the support sphere at time t (m=2)."""
    s = _shifted_time(spec, t)
    return np.sqrt(2.0 * spec.C * (2 + spec.d)) * s ** (1.0 / (spec.d + 2))


def domain_halfwidth(d: int) -> int:
    """Smallest integer exceeding the free-boundary radius at T=1 for the
    shifted unit-constant solution."""
    if d < 1:
        raise ValueError("d must be >= 1")
    r_T = math.sqrt(2 + d) * 2.0 ** ((4 + d) / (2.0 * d + 4))
    return math.ceil(r_T)


def barenblatt_gradient(spec: BarenblattSpec, t, x):
    """Spatial gradient; zero outside the support, interior-side value on
    the free boundary itself (m=2)."""
    s = _shifted_time(spec, t)
    x = np.asarray(x, dtype=np.float64)
    inside = _sqnorm(x) < free_boundary_radius(spec, t) ** 2
    grad = -x / ((spec.d + 2) * s)
    return np.where(inside, grad, 0.0)


def barenblatt_dt(spec: BarenblattSpec, t, x):
    """Time derivative inside the support; zero outside (m=2)."""
    s = _shifted_time(spec, t)
    d = spec.d
    alpha = d / (d + 2.0)
    core = spec.C - _sqnorm(x) / (2.0 * (d + 2) * s ** (2.0 / (d + 2)))
    inside = core > 0
    val = -alpha * s ** (-alpha - 1.0) * core + _sqnorm(x) / ((d + 2) ** 2 * s**2)
    return np.where(inside, val, 0.0)


def barenblatt_laplacian(spec: BarenblattSpec, t, x):
    """Spatial Laplacian inside the support; zero outside (m=2)."""
    s = _shifted_time(spec, t)
    inside = _sqnorm(x) < free_boundary_radius(spec, t) ** 2
    return np.where(inside, -spec.d / ((spec.d + 2) * s), 0.0)


def barenblatt_residual(spec: BarenblattSpec, t, x):
    """PDE residual du/dt - |grad u|^2 - u lap u from closed-form partials.

    Requires the point to be strictly interior (|x| < 0.95 r_t): the
    solution is only Lipschitz across the free boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    r = free_boundary_radius(spec, t)
    nrm = np.sqrt(_sqnorm(x))
    if np.any(nrm >= 0.95 * r):
        raise DomainError(
            f"residual oracle requires |x| < 0.95 r_t (|x|={nrm}, r_t={r})"
        )
    u = barenblatt(spec, t, x)
    ut = barenblatt_dt(spec, t, x)
    g = barenblatt_gradient(spec, t, x)
    lap = barenblatt_laplacian(spec, t, x)
    gsq = np.sum(g * g, axis=0) if g.ndim > 1 else np.dot(g, g)
    return ut - gsq - u * lap


def scale_invariance_check(spec: BarenblattSpec, lam, t, x):
    """(lam^alpha U(lam t, lam^beta x), U(t, x)) for the unshifted solution;
    the two values coincide for the exact self-similar profile."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    base = BarenblattSpec(d=spec.d, C=spec.C, m=spec.m, time_shift=0.0)
    x = np.asarray(x, dtype=np.float64)
    lhs = lam**spec.alpha * barenblatt(base, lam * t, lam**spec.beta * x)
    rhs = barenblatt(base, t, x)
    return lhs, rhs


def waiting_ic(x):
    """cos(|x|) capped to its first lobe: the waiting-time initial datum."""
    r = np.sqrt(_sqnorm(x))
    return np.where(r <= np.pi / 2, np.cos(r), 0.0)


# ---------------------------------------------------------------------------
# initial conditions with derivative bundles (needed by hard-IC ansatz)


@dataclass(frozen=True)
class InitialCondition:
    """Initial datum with the derivatives the hard-IC chain rule needs.

    The Barenblatt datum is only Lipschitz on its support sphere; grad/lap
    use the interior-side values there.
    """

    value: callable
    gradient: callable
    laplacian: callable
    support_radius: float = math.inf


def barenblatt_ic(d: int) -> InitialCondition:
    """Shifted solution at t=0: u0 = (1 - |x|^2 / (2(2+d)))+."""
    spec = BarenblattSpec(d=d, C=1.0, time_shift=1.0)

    def value(x):
        return barenblatt(spec, 0.0, x)

    def gradient(x):
        return barenblatt_gradient(spec, 0.0, x)

    def laplacian(x):
        return barenblatt_laplacian(spec, 0.0, x)

    return InitialCondition(value, gradient, laplacian,
                            support_radius=float(free_boundary_radius(spec, 0.0)))


def waiting_ic_bundle() -> InitialCondition:
    def gradient(x):
        x = np.asarray(x, dtype=np.float64)
        r = np.sqrt(_sqnorm(x))
        safe = np.where(r > 0, r, 1.0)
        return np.where(r <= np.pi / 2, -np.sin(safe) / safe * x, 0.0)

    def laplacian(x):
        x = np.asarray(x, dtype=np.float64)
        d = x.shape[0]
        r = np.sqrt(_sqnorm(x))
        safe = np.where(r > 0, r, 1.0)
        lap = -np.cos(safe) - (d - 1) * np.sin(safe) / safe
        return np.where(r <= np.pi / 2, np.where(r > 0, lap, -float(d)), 0.0)

    return InitialCondition(waiting_ic, gradient, laplacian, support_radius=np.pi / 2)


class ExactBarenblatt:
    """Batch evaluator of the shifted exact solution, with the interface
    metrics and the contraction check expect (value / gradient / residual)."""

    def __init__(self, d: int, C: float = 1.0, time_shift: float = 1.0):
        self.spec = BarenblattSpec(d=d, C=C, time_shift=time_shift)
        self.d = d

    def value(self, t, X):
        return barenblatt(self.spec, t, X)

    def gradient(self, t, X):
        return barenblatt_gradient(self.spec, t, X)

    def value_and_grad(self, t, X):
        return self.value(t, X), self.gradient(t, X)

    def residual(self, t, X):
        # strong residual of the exact solution: identically zero on both
        # sides of the free boundary (measure-zero kink ignored)
        return np.zeros(np.asarray(X).shape[-1])
