"""Constraint-imposing wrappers turning raw networks into admissible
solution candidates.

Hard constraints are exact by construction: the boundary factor kills the
value (and all its time derivatives) on the box faces, the (T-t) factor
kills the potential at the final time, and the softplus shift pins the
density-ratio denominator to one at t=T.  Derivatives of the wrappers
combine network jets with the closed-form derivatives of the boundary
factor via product/chain rules, so they work identically on plain arrays
and on tape variables.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .analytic import DomainSpec, InitialCondition
from .autodiff import (
    ContractError,
    MlpSpec,
    ParamVector,
    SpaceTimeDerivs,
    mlp_forward_batch,
    mlp_jet_batch,
    sigmoid,
    softplus,
    value_of,
)


class SingularDenominatorError(ArithmeticError):
    """1 - lap(phi) hit (near) zero: recovery quotient undefined."""


class DegenerateSigmaError(ArithmeticError):
    """sigma dropped below the positivity guard."""


class AnsatzKind(enum.Enum):
    PINN_HARD_IC_HARD_BC = "pinn-hard-ic"
    PINN_SOFT_IC_HARD_BC = "pinn-soft-ic"
    PHI_HARD_BC = "phi"
    Q_SIGMA = "qsigma"
    Q_SIGMA_GROWING = "qsigma-growing"


@dataclass
class RecoveredSolution:
    """Solution recovered from intermediate functions, with the quotient
    denominator kept for diagnosability."""

    u: object
    denominator: object
    ut: object = None
    grad: object = None
    lap: object = None


@dataclass
class DerivBundle:
    """Batched (u, du/dt, grad, lap) of a wrapped ansatz; entries are
    ndarrays of shape (n,) (grad: list of d of them) or tape Vars."""

    u: object
    ut: object
    grad: list
    lap: object


# ---------------------------------------------------------------------------
# boundary factor


def f_dc(x, half_widths):
    """prod_i (a_i - x_i)(a_i + x_i) / a_i^2: 1 at the origin, exactly zero
    on every face of the box."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(half_widths, dtype=np.float64)
    if x.ndim == 1:
        return float(np.prod((a - x) * (a + x) / a**2))
    return np.prod((a[:, None] - x) * (a[:, None] + x) / a[:, None] ** 2, axis=0)


def f_dc_bundle(X, half_widths):
    """(F, dF, d2F) of the boundary factor over a batch X of shape (d, n).

    dF and d2F have shape (d, n); second cross-derivatives never appear in
    the losses so only the diagonal is produced.
    """
    X = np.asarray(X, dtype=np.float64)
    a = np.asarray(half_widths, dtype=np.float64)[:, None]
    g = (a - X) * (a + X) / a**2
    g1 = -2.0 * X / a**2
    g2 = np.broadcast_to(-2.0 / a**2, X.shape)
    d = X.shape[0]
    # products over i != k via prefix/suffix
    pre = np.ones_like(g)
    suf = np.ones_like(g)
    for k in range(1, d):
        pre[k] = pre[k - 1] * g[k - 1]
        suf[d - 1 - k] = suf[d - k] * g[d - k]
    others = pre * suf
    F = g[0] * suf[0] if d > 0 else np.ones(X.shape[1])
    return F, g1 * others, g2 * others


def _check_point(t, X, domain: DomainSpec):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] != domain.d:
        raise ContractError(f"spatial dim {X.shape[0]} != domain dim {domain.d}")
    return np.asarray(t, dtype=np.float64), X


def _stack_inputs(t, X):
    return np.vstack([np.broadcast_to(t, (1, X.shape[1])), X])


# ---------------------------------------------------------------------------
# PINN ansatz (direct parameterization of u)


class PinnAnsatz:
    """Direct solution ansatz with hard homogeneous Dirichlet boundary.

    soft_ic: u = f_dc(x) softplus(NN(t,x))      (positivity for free)
    hard_ic: u = u0(x) + t f_dc(x) NN(t,x)      (needs grad/lap of u0)
    """

    def __init__(self, spec: MlpSpec, domain: DomainSpec, soft_ic=True,
                 u0: InitialCondition = None):
        if spec.input_dim != domain.d + 1:
            raise ContractError("network input_dim must be d+1")
        if not soft_ic and u0 is None:
            raise ContractError("hard-IC ansatz needs the initial condition bundle")
        self.spec = spec
        self.domain = domain
        self.soft_ic = soft_ic
        self.u0 = u0

    @property
    def kind(self):
        return (AnsatzKind.PINN_SOFT_IC_HARD_BC if self.soft_ic
                else AnsatzKind.PINN_HARD_IC_HARD_BC)

    def value(self, params, t, X):
        """Forward-only evaluation (no derivative passes)."""
        t, X = _check_point(t, X, self.domain)
        inp = _stack_inputs(t, X)
        N = mlp_forward_batch(self.spec, params, inp)
        F, _, _ = f_dc_bundle(X, self.domain.half_widths)
        if self.soft_ic:
            return F * softplus(N)
        return self.u0.value(X) + np.broadcast_to(t, F.shape) * F * N

    def bundle(self, params, t, X) -> DerivBundle:
        t, X = _check_point(t, X, self.domain)
        d = self.domain.d
        inp = _stack_inputs(t, X)
        F, dF, d2F = f_dc_bundle(X, self.domain.half_widths)
        Nv, Nt, _ = mlp_jet_batch(self.spec, params, inp, 0)
        jets = [mlp_jet_batch(self.spec, params, inp, k + 1) for k in range(d)]
        if self.soft_ic:
            s = sigmoid(Nv)
            S = softplus(Nv)
            u = F * S
            ut = F * s * Nt
            grad = []
            lap = None
            for k in range(d):
                _, n1, n2 = jets[k]
                grad.append(dF[k] * S + F * s * n1)
                term = d2F[k] * S + 2.0 * dF[k] * s * n1 + F * (
                    s * (1.0 - s) * n1**2 + s * n2
                )
                lap = term if lap is None else lap + term
            return DerivBundle(u=u, ut=ut, grad=grad, lap=lap)
        # hard IC: u = u0 + t F N
        tb = np.broadcast_to(t, F.shape)
        u0v = self.u0.value(X)
        u0g = self.u0.gradient(X)
        u0l = self.u0.laplacian(X)
        u = u0v + tb * F * Nv
        ut = F * Nv + tb * F * Nt
        grad = []
        lap = None
        for k in range(d):
            _, n1, n2 = jets[k]
            grad.append(u0g[k] + tb * (dF[k] * Nv + F * n1))
            term = tb * (d2F[k] * Nv + 2.0 * dF[k] * n1 + F * n2)
            lap = term if lap is None else lap + term
        return DerivBundle(u=u, ut=ut, grad=grad, lap=lap + u0l)

    def residual(self, params, t, X):
        """Strong PDE residual du/dt - |grad u|^2 - u lap u over a batch."""
        b = self.bundle(params, t, X)
        gsq = None
        for gk in b.grad:
            gsq = gk * gk if gsq is None else gsq + gk * gk
        return b.ut - gsq - b.u * b.lap

    def value_and_grad(self, params, t, X):
        b = self.bundle(params, t, X)
        return value_of(b.u), np.stack([value_of(g) for g in b.grad])


# ---------------------------------------------------------------------------
# phi ansatz (potential parameterization)


class PhiAnsatz:
    """phi = (T-t) f_dc(x) NN(t,x): vanishes at t=T; d(phi)/dt vanishes on
    the box faces, so the recovered solution satisfies the homogeneous
    Dirichlet boundary exactly."""

    def __init__(self, spec: MlpSpec, domain: DomainSpec):
        if spec.input_dim != domain.d + 1:
            raise ContractError("network input_dim must be d+1")
        self.spec = spec
        self.domain = domain
        self.kind = AnsatzKind.PHI_HARD_BC

    def bundle(self, params, t, X):
        """(phi, d(phi)/dt, lap(phi)) over a batch."""
        t, X = _check_point(t, X, self.domain)
        d = self.domain.d
        T = self.domain.T
        inp = _stack_inputs(t, X)
        F, dF, d2F = f_dc_bundle(X, self.domain.half_widths)
        Nv, Nt, _ = mlp_jet_batch(self.spec, params, inp, 0)
        tm = np.broadcast_to(T - t, F.shape)
        phi = tm * F * Nv
        phit = -F * Nv + tm * F * Nt
        lap = None
        for k in range(d):
            _, n1, n2 = mlp_jet_batch(self.spec, params, inp, k + 1)
            term = tm * (d2F[k] * Nv + 2.0 * dF[k] * n1 + F * n2)
            lap = term if lap is None else lap + term
        return phi, phit, lap

    def recovered_value(self, params, t, X, guard=1e-10):
        _, phit, lap = self.bundle(params, t, X)
        return value_of(recover_u_phi(phit, lap, guard=guard).u)

    def value_and_grad(self, params, t, X, h=1e-5):
        """Recovered solution and its spatial gradient on a batch.

        The gradient of the quotient needs mixed third derivatives of the
        network, outside what single-axis jets provide; it is estimated by
        central differences of the recovered value with step h.
        """
        t, X = _check_point(t, X, self.domain)
        u = self.recovered_value(params, t, X)
        grad = np.empty_like(X)
        for k in range(self.domain.d):
            e = np.zeros((self.domain.d, 1))
            e[k] = h
            up = self.recovered_value(params, t, X + e)
            um = self.recovered_value(params, t, X - e)
            grad[k] = (up - um) / (2.0 * h)
        return u, grad

    def value(self, params, t, X):
        return self.recovered_value(params, t, X)

    def residual(self, params, t, X, h=1e-4):
        """Strong residual of the recovered solution via central
        differences in t and x of the recovered value."""
        t, X = _check_point(t, X, self.domain)
        tb = np.broadcast_to(t, (X.shape[1],))
        u0v = self.recovered_value(params, tb, X)
        ut = (self.recovered_value(params, tb + h, X)
              - self.recovered_value(params, tb - h, X)) / (2.0 * h)
        gsq = 0.0
        lap = 0.0
        for k in range(self.domain.d):
            e = np.zeros((self.domain.d, 1))
            e[k] = h
            up = self.recovered_value(params, tb, X + e)
            um = self.recovered_value(params, tb, X - e)
            gsq = gsq + ((up - um) / (2.0 * h)) ** 2
            lap = lap + (up - 2.0 * u0v + um) / h**2

        return ut - gsq - u0v * lap


def recover_u_phi(phit, lap_phi, guard=1e-10) -> RecoveredSolution:
    """u = d(phi)/dt / (1 - lap(phi)); raises when the denominator is
    within `guard` of zero (signals training divergence, never clamped)."""
    denom = 1.0 - lap_phi
    dv = np.asarray(value_of(denom))
    if np.any(np.abs(dv) < guard):
        idx = int(np.argmin(np.abs(np.atleast_1d(dv))))
        raise SingularDenominatorError(
            f"1 - lap(phi) = {np.atleast_1d(dv)[idx]:.3e} at sample {idx}"
        )
    return RecoveredSolution(u=phit / denom, denominator=denom)


# ---------------------------------------------------------------------------
# q-sigma ansatz


class QSigmaAnsatz:
    """Pair parameterization q ~ d(phi)/dt, sigma ~ 1 - lap(phi).

    q = f_dc softplus(NN_q) is nonnegative and vanishes on the boundary;
    sigma = softplus(ln(e-1) + (T-t) NN_s) is positive with sigma(T,.) = 1.
    The growing variant floors sigma at (t/T)^(d/(d+2)).
    """

    def __init__(self, spec_q: MlpSpec, spec_sigma: MlpSpec, domain: DomainSpec,
                 growing=False):
        if spec_q.input_dim != domain.d + 1 or spec_sigma.input_dim != domain.d + 1:
            raise ContractError("network input_dim must be d+1")
        self.spec_q = spec_q
        self.spec_sigma = spec_sigma
        self.domain = domain
        self.growing = growing
        self.kind = AnsatzKind.Q_SIGMA_GROWING if growing else AnsatzKind.Q_SIGMA

    def q_bundle(self, params_q, t, X, with_lap=True):
        """(q, lap q, grad q) of the flux-like part."""
        t, X = _check_point(t, X, self.domain)
        d = self.domain.d
        inp = _stack_inputs(t, X)
        F, dF, d2F = f_dc_bundle(X, self.domain.half_widths)
        if not with_lap:
            N = mlp_forward_batch(self.spec_q, params_q, inp)
            return F * softplus(N), None, None
        Nv, _, _ = mlp_jet_batch(self.spec_q, params_q, inp, 0)
        s = sigmoid(Nv)
        S = softplus(Nv)
        q = F * S
        lap = None
        grad = []
        for k in range(d):
            _, n1, n2 = mlp_jet_batch(self.spec_q, params_q, inp, k + 1)
            grad.append(dF[k] * S + F * s * n1)
            term = d2F[k] * S + 2.0 * dF[k] * s * n1 + F * (
                s * (1.0 - s) * n1**2 + s * n2
            )
            lap = term if lap is None else lap + term
        return q, lap, grad

    def sigma_bundle(self, params_sigma, t, X, with_t=True, with_grad=False):
        """(sigma, d(sigma)/dt, grad sigma)."""
        t, X = _check_point(t, X, self.domain)
        T = self.domain.T
        inp = _stack_inputs(t, X)
        tm = np.broadcast_to(T - t, (X.shape[1],))
        if with_t or with_grad:
            Nv, Nt, _ = mlp_jet_batch(self.spec_sigma, params_sigma, inp, 0)
        else:
            Nv = mlp_forward_batch(self.spec_sigma, params_sigma, inp)
            Nt = None
        if not self.growing:
            A = np.log(np.e - 1.0) + tm * Nv
            sig = softplus(A)
            sigt = sigmoid(A) * (-Nv + tm * Nt) if with_t else None
            grad = None
            if with_grad:
                grad = []
                for k in range(self.domain.d):
                    _, n1, _ = mlp_jet_batch(self.spec_sigma, params_sigma, inp, k + 1)
                    grad.append(sigmoid(A) * tm * n1)
            return sig, sigt, grad
        # growing variant: floor at (t/T)^(d/(d+2))
        dd = self.domain.d
        gamma = dd / (dd + 2.0)
        tb = np.broadcast_to(t, (X.shape[1],)).astype(np.float64)
        floor = (tb / T) ** gamma
        S = softplus(Nv)
        sig = floor + tm * S
        sigt = None
        if with_t:
            with np.errstate(divide="ignore"):
                dfloor = np.where(tb > 0, gamma / T * (tb / T) ** (gamma - 1.0), np.inf)
            sigt = dfloor + (-S + tm * sigmoid(Nv) * Nt)
        grad = None
        if with_grad:
            grad = []
            for k in range(self.domain.d):
                _, n1, _ = mlp_jet_batch(self.spec_sigma, params_sigma, inp, k + 1)
                grad.append(tm * sigmoid(Nv) * n1)
        return sig, sigt, grad

    def evaluate(self, params_q, params_sigma, t, X, sigma_floor=1e-12):
        """(q, sigma, recovered u, d(sigma)/dt, lap q) over a batch."""
        q, lapq, _ = self.q_bundle(params_q, t, X)
        sig, sigt, _ = self.sigma_bundle(params_sigma, t, X)
        sv = np.atleast_1d(np.asarray(value_of(sig)))
        if np.any(sv < sigma_floor):
            idx = int(np.argmin(sv))
            raise DegenerateSigmaError(f"sigma = {sv[idx]:.3e} at sample {idx}")
        rec = RecoveredSolution(u=q / sig, denominator=sig)
        return q, sig, rec, sigt, lapq

    def value(self, params_pair, t, X):
        pq, ps = params_pair
        q, _, _ = self.q_bundle(pq, t, X, with_lap=False)
        sig, _, _ = self.sigma_bundle(ps, t, X, with_t=False)
        return value_of(q / sig)

    def value_and_grad(self, params_pair, t, X):
        pq, ps = params_pair
        q, _, gq = self.q_bundle(pq, t, X)
        sig, _, gs = self.sigma_bundle(ps, t, X, with_t=False, with_grad=True)
        q, sig = value_of(q), value_of(sig)
        u = q / sig
        grad = np.stack(
            [(value_of(gq[k]) * sig - q * value_of(gs[k])) / sig**2
             for k in range(self.domain.d)]
        )
        return u, grad


# ---------------------------------------------------------------------------
# spec-level single-point wrappers


def eval_u(kind: AnsatzKind, params: ParamVector, t, x, domain: DomainSpec,
           u0: InitialCondition = None) -> SpaceTimeDerivs:
    """Derivative bundle of a PINN-kind ansatz at one (t, x)."""
    if kind not in (AnsatzKind.PINN_SOFT_IC_HARD_BC, AnsatzKind.PINN_HARD_IC_HARD_BC):
        raise ContractError(f"eval_u expects a PINN kind, got {kind}")
    soft = kind is AnsatzKind.PINN_SOFT_IC_HARD_BC
    a = PinnAnsatz(params.spec, domain, soft_ic=soft, u0=u0)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    b = a.bundle(params, np.array([t]), x)
    return SpaceTimeDerivs(
        u=float(value_of(b.u)[0]),
        ut=float(value_of(b.ut)[0]),
        grad=np.array([float(value_of(g)[0]) for g in b.grad]),
        lap=float(value_of(b.lap)[0]),
    )


def eval_phi(params: ParamVector, t, x, domain: DomainSpec):
    """(phi, d(phi)/dt, lap(phi)) at one (t, x)."""
    a = PhiAnsatz(params.spec, domain)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    phi, phit, lap = a.bundle(params, np.array([t]), x)
    return (float(value_of(phi)[0]), float(value_of(phit)[0]),
            float(value_of(lap)[0]))


def eval_q_sigma(kind: AnsatzKind, params_q: ParamVector, params_sigma: ParamVector,
                 t, x, domain: DomainSpec):
    """(q, sigma, RecoveredSolution, d(sigma)/dt, lap q) at one (t, x)."""
    if kind not in (AnsatzKind.Q_SIGMA, AnsatzKind.Q_SIGMA_GROWING):
        raise ContractError(f"eval_q_sigma expects a q-sigma kind, got {kind}")
    a = QSigmaAnsatz(params_q.spec, params_sigma.spec, domain,
                     growing=kind is AnsatzKind.Q_SIGMA_GROWING)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    q, sig, rec, sigt, lapq = a.evaluate(params_q, params_sigma, np.array([t]), x)
    rec = RecoveredSolution(u=float(value_of(rec.u)[0]),
                            denominator=float(value_of(rec.denominator)[0]))
    return (float(value_of(q)[0]), float(value_of(sig)[0]), rec,
            float(value_of(sigt)[0]), float(value_of(lapq)[0]))
