"""Loss functionals for the three solution strategies, as pure batch
evaluators.

Every empirical term is a plain mean over its batch, which matches the
1/|Omega|-scaled integrals the training problems minimize; time
integration is folded into the same mean through uniform t-sampling.
Evaluators take parameters first so they close naturally over everything
else for gradient computation, and they accept either plain parameter
vectors or tape-traced parameters.

Correction weights c(x) are always applied to the variational objectives
(the mixture measure would otherwise bias them); on the residual, initial
and consistency terms they are opt-in flags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import absolute, maximum, value_of, vmean
from .ansatz import DegenerateSigmaError

KINDS = ("pinn-l2", "pinn-l1", "phi", "qsigma")


class ConstraintViolationError(ArithmeticError):
    """An admissibility constraint (1 - lap(phi) >= 0) failed at a sample."""


class NonFiniteTermError(ArithmeticError):
    """A loss term evaluated to NaN or infinity."""


@dataclass(frozen=True)
class FormulationConfig:
    """Which loss to build and how to weight its terms.

    kappa scales the objective (PDE residual or variational objective), mu
    the boundary penalty, nu the initial penalty, gamma the q-sigma
    consistency penalty.  The correction flags switch the mixture weights
    c(x) on individual terms; the variational objectives always use them.
    """

    kind: str
    kappa: float = 1.0
    mu: float = 0.0
    nu: float = 1.0
    gamma: float = 0.0
    correct_pde: bool = False
    correct_initial: bool = False
    correct_consistency: bool = False
    consistency_norm: str = None  # "l1" | "l2"; default follows kind
    soft_guard: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown formulation kind {self.kind!r}")
        for name in ("kappa", "mu", "nu", "gamma"):
            w = getattr(self, name)
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {w}")
        if self.consistency_norm is None:
            object.__setattr__(self, "consistency_norm",
                               "l1" if self.kind == "pinn-l1" else "l2")
        if self.consistency_norm not in ("l1", "l2"):
            raise ValueError(f"bad consistency_norm {self.consistency_norm!r}")


@dataclass
class LossBreakdown:
    """Per-term values; total = kappa*objective + mu*boundary + nu*initial
    + gamma*consistency.  Fields are floats or tape variables depending on
    what the evaluator was fed."""

    total: object
    objective: object
    boundary: object
    initial: object
    consistency: object

    def values(self):
        return LossBreakdown(*(float(value_of(getattr(self, f))) for f in
                               ("total", "objective", "boundary", "initial",
                                "consistency")))


def _rho(r, kind):
    return absolute(r) if kind == "l1" else r * r


def _check_finite(term_values, name):
    v = np.atleast_1d(np.asarray(value_of(term_values), dtype=np.float64))
    bad = ~np.isfinite(v)
    if bad.any():
        idx = int(np.argmax(bad))
        raise NonFiniteTermError(f"{name} term is {v[idx]} at sample {idx}")


def _total(cfg, objective, boundary, initial, consistency):
    total = cfg.kappa * objective
    if boundary is not None:
        total = total + cfg.mu * boundary
    if initial is not None:
        total = total + cfg.nu * initial
    if consistency is not None:
        total = total + cfg.gamma * consistency
    return LossBreakdown(
        total=total,
        objective=objective,
        boundary=0.0 if boundary is None else boundary,
        initial=0.0 if initial is None else initial,
        consistency=0.0 if consistency is None else consistency,
    )


def _initial_term(u_at_zero, u0_values, weights, rho_kind, correct):
    diff = u_at_zero - u0_values
    _check_finite(diff, "initial")
    w = weights if correct else 1.0
    return vmean(w * _rho(diff, rho_kind))


def _boundary_term(u_on_boundary, rho_kind):
    if u_on_boundary is None:
        return None
    _check_finite(u_on_boundary, "boundary")
    return vmean(_rho(u_on_boundary, rho_kind))


def pinn_loss(params, ansatz, u0, batch, ic_batch, boundary_batch,
              cfg: FormulationConfig) -> LossBreakdown:
    """Strong-form residual loss, L2 or L1 flavor.

    boundary_batch may be None (hard boundary ansatz); then the boundary
    term is reported as 0 and skipped.
    """
    rho_kind = "l1" if cfg.kind == "pinn-l1" else "l2"
    b = ansatz.bundle(params, batch.t, batch.x)
    gsq = None
    for gk in b.grad:
        gsq = gk * gk if gsq is None else gsq + gk * gk
    res = b.ut - gsq - b.u * b.lap
    _check_finite(res, "pde")
    w = batch.c if cfg.correct_pde else 1.0
    pde = vmean(w * _rho(res, rho_kind))

    u_init = ansatz.value(params, np.zeros_like(ic_batch.t), ic_batch.x)
    initial = _initial_term(u_init, u0.value(ic_batch.x), ic_batch.c,
                            rho_kind, cfg.correct_initial)

    boundary = None
    if boundary_batch is not None:
        tb, xb = boundary_batch
        boundary = _boundary_term(ansatz.value(params, tb, xb), rho_kind)
    return _total(cfg, pde, boundary, initial, None)


def phi_loss(params, ansatz, u0, batch, ic_batch, boundary_batch,
             cfg: FormulationConfig) -> LossBreakdown:
    """Variational potential objective plus penalties on the recovered
    solution.  The objective term always carries the correction weights.

    1 - lap(phi) < 0 at any sample raises ConstraintViolationError with
    the offending location unless cfg.soft_guard hinges the denominator
    at 1e-6.
    """
    _, phit, lap = ansatz.bundle(params, batch.t, batch.x)
    denom = 1.0 - lap
    dv = np.asarray(value_of(denom))
    if cfg.soft_guard:
        denom = maximum(denom, 1e-6)
    elif np.any(dv < 0):
        idx = int(np.argmin(dv))
        raise ConstraintViolationError(
            f"1 - lap(phi) = {dv[idx]:.3e} at t={batch.t[idx]:.4f}, "
            f"x={batch.x[:, idx]}"
        )
    integrand = phit * phit / denom - 2.0 * u0.value(batch.x) * phit
    _check_finite(integrand, "objective")
    objective = vmean(batch.c * integrand)

    def recovered(t, X):
        _, pt, lp = ansatz.bundle(params, t, X)
        dn = 1.0 - lp
        if cfg.soft_guard:
            dn = maximum(dn, 1e-6)
        return pt / dn

    u_init = recovered(np.zeros_like(ic_batch.t), ic_batch.x)
    initial = _initial_term(u_init, u0.value(ic_batch.x), ic_batch.c,
                            "l2", cfg.correct_initial)

    boundary = None
    if boundary_batch is not None:
        tb, xb = boundary_batch
        boundary = _boundary_term(recovered(tb, xb), "l2")
    return _total(cfg, objective, boundary, initial, None)


def qsigma_loss(params_pair, ansatz, u0, batch, ic_batch, boundary_batch,
                cfg: FormulationConfig) -> LossBreakdown:
    """Two-network variational objective with the consistency penalty
    d(sigma)/dt + lap(q) and initial/boundary penalties on u = q/sigma."""
    pq, ps = params_pair
    q, sig, rec, sigt, lapq = ansatz.evaluate(pq, ps, batch.t, batch.x)
    integrand = q * q / sig - 2.0 * u0.value(batch.x) * q
    _check_finite(integrand, "objective")
    objective = vmean(batch.c * integrand)

    cons_res = sigt + lapq
    _check_finite(cons_res, "consistency")
    w = batch.c if cfg.correct_consistency else 1.0
    consistency = vmean(w * _rho(cons_res, cfg.consistency_norm))

    q0, _, _ = ansatz.q_bundle(pq, np.zeros_like(ic_batch.t), ic_batch.x,
                               with_lap=False)
    sig0, _, _ = ansatz.sigma_bundle(ps, np.zeros_like(ic_batch.t),
                                     ic_batch.x, with_t=False)
    s0 = np.atleast_1d(np.asarray(value_of(sig0)))
    if np.any(s0 < 1e-12):
        raise DegenerateSigmaError(f"sigma = {s0.min():.3e} on the initial batch")
    initial = _initial_term(q0 / sig0, u0.value(ic_batch.x), ic_batch.c,
                            "l2", cfg.correct_initial)

    boundary = None
    if boundary_batch is not None:
        tb, xb = boundary_batch
        qb, _, _ = ansatz.q_bundle(pq, tb, xb, with_lap=False)
        sb, _, _ = ansatz.sigma_bundle(ps, tb, xb, with_t=False)
        boundary = _boundary_term(qb / sb, "l2")
    return _total(cfg, objective, boundary, initial, consistency)


def loss_for(cfg: FormulationConfig):
    """The evaluator matching cfg.kind, with the uniform signature
    (params, ansatz, u0, batch, ic_batch, boundary_batch, cfg)."""
    if cfg.kind in ("pinn-l2", "pinn-l1"):
        return pinn_loss
    if cfg.kind == "phi":
        return phi_loss
    return qsigma_loss


# ---------------------------------------------------------------------------
# a-posteriori stability bound


@dataclass
class ContractionEstimate:
    """Monte Carlo estimates of both sides of the L1 stability bound
    ||u(t) - uhat(t)||_1 <= ||u0 - uhat0||_1 + int_0^t ||residual(uhat)||_1,
    with the combined standard error for the inequality assertion."""

    lhs: float
    rhs: float
    sigma: float


def l1_contraction_check(value_fn, residual_fn, exact, domain, t,
                         n_mc=20000, rng=None) -> ContractionEstimate:
    """value_fn(t, X) and residual_fn(t, X) evaluate the candidate; exact
    supplies .value for the reference solution.  Integrals use plain
    uniform sampling over Omega (and [0,t] x Omega for the residual)."""
    if rng is None:
        rng = np.random.default_rng(0)
    a = np.asarray(domain.half_widths)
    vol = domain.volume

    def mc_abs(f):
        X = rng.uniform(-1.0, 1.0, (domain.d, n_mc)) * a[:, None]
        vals = np.abs(f(X))
        return vol * float(np.mean(vals)), vol * float(np.std(vals)) / np.sqrt(n_mc)

    lhs, s1 = mc_abs(lambda X: value_fn(t, X) - exact.value(t, X))
    rhs0, s2 = mc_abs(lambda X: value_fn(0.0, X) - exact.value(0.0, X))

    X = rng.uniform(-1.0, 1.0, (domain.d, n_mc)) * a[:, None]
    tt = rng.uniform(0.0, t, n_mc)
    rvals = np.abs(residual_fn(tt, X))
    rterm = t * vol * float(np.mean(rvals))
    s3 = t * vol * float(np.std(rvals)) / np.sqrt(n_mc)
    sigma = float(np.sqrt(s1**2 + s2**2 + s3**2))
    return ContractionEstimate(lhs=lhs, rhs=rhs0 + rterm, sigma=sigma)
