"""Optimization loop: Adam updates over one or two networks, on-the-fly
batch generation, loss history, checkpoints and run manifests.

Every step draws fresh interior / initial / (optional) boundary batches
from one seeded RNG stream, so a run is fully determined by its config
and seed; two identical single-threaded runs produce bitwise-identical
loss histories.  Checkpoints carry the RNG and optimizer state needed to
resume to a bitwise-identical continuation.
"""

from __future__ import annotations

import datetime
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .analytic import (
    BarenblattSpec,
    DomainSpec,
    ExactBarenblatt,
    barenblatt,
    barenblatt_ic,
    domain_halfwidth,
    free_boundary_radius,
    waiting_ic_bundle,
)
from .ansatz import PhiAnsatz, PinnAnsatz, QSigmaAnsatz
from .autodiff import (
    MlpSpec,
    NonFiniteLossError,
    ParamVector,
    load_checkpoint,
    param_gradient,
    save_checkpoint,
    value_of,
)
from .formulations import (
    ConstraintViolationError,
    FormulationConfig,
    NonFiniteTermError,
    loss_for,
)
from .metrics import eval_slice, relative_errors
from .sampling import MixtureSpec, sample_boundary, sample_mixture


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss or a constraint violation."""


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3

    @classmethod
    def fresh(cls, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m=np.zeros(n), v=np.zeros(n), step=0,
                   beta1=beta1, beta2=beta2, eps=eps, lr=lr)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    bad = ~np.isfinite(grads)
    if bad.any():
        raise NonFiniteLossError(
            f"non-finite gradient at parameter {int(np.argmax(bad))}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    mhat = state.m / (1.0 - state.beta1**state.step)
    vhat = state.v / (1.0 - state.beta2**state.step)
    params -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# configuration and problem setup


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; the manifest echoes it verbatim."""

    formulation: FormulationConfig
    d: int
    steps: int
    problem: str = "barenblatt"
    width: int = 200
    depth: int = 2
    activation: str = "softplus"
    batch_size: int = 1000
    lr: float = 1e-3
    seed: int = 0
    theta0: float = 0.3
    theta1: float = 0.3
    eval_every: int = 500
    hard_ic: bool = False
    growing_sigma: bool = False
    grad_clip: float = 0.0  # global-norm clip; 0 disables
    boundary_batch: int = 0  # 0: hard boundary, no penalty batch
    T: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size >= 1 and steps >= 0 required")
        if self.problem not in ("barenblatt", "waiting"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.problem == "waiting" and self.d != 2:
            raise ValueError("the waiting-time problem is set up in d=2")


def paper_preset(name: str, d: int, steps=None, width=None, **overrides) -> TrainConfig:
    """Published per-dimension hyperparameter sets, by formulation family.

    name: "pinn" (L2), "pinn-l1", "phi" or "qsigma".  steps/width may be
    overridden for scaled-down runs; remaining TrainConfig fields accept
    keyword overrides.
    """
    theta0, theta1, lr = 0.3, 0.3, 1e-3
    if name in ("pinn", "pinn-l2", "pinn-l1"):
        kind = "pinn-l1" if name == "pinn-l1" else "pinn-l2"
        if d <= 5:
            form = FormulationConfig(kind=kind, kappa=1.0, nu=1e3)
        else:
            form = FormulationConfig(kind=kind, kappa=1e3, nu=1.0)
        w, s = (400, 200000) if d >= 20 else (200, 100000)
        if d >= 20:
            theta1 = 0.2
    elif name == "phi":
        if d <= 4:
            kappa = 1.0
            nu = 1e3
        else:
            nu = 1.0
            kappa = {15: 1e4, 20: 1e5}.get(d, 1e3)
        form = FormulationConfig(kind="phi", kappa=kappa, nu=nu)
        w, s = (400, 600000) if d == 20 else (200, 100000)
        if d == 20:
            theta0 = 0.2
        if d == 50:
            w, s, lr = 400, 200000, 1e-4
            theta0 = theta1 = 0.4
    elif name == "qsigma":
        gamma = 1.0 if d >= 10 else 1e3
        form = FormulationConfig(kind="qsigma", kappa=1e3, nu=1.0, gamma=gamma)
        w, s = 200, 100000
    else:
        raise ValueError(f"unknown preset {name!r}")
    base = dict(formulation=form, d=d, steps=steps if steps is not None else s,
                width=width if width is not None else w, depth=2,
                batch_size=1000, lr=lr, theta0=theta0, theta1=theta1)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class Problem:
    domain: DomainSpec
    mixture: MixtureSpec
    u0: object
    exact: object  # None when no closed form exists


def make_problem(config: TrainConfig) -> Problem:
    d, T = config.d, config.T
    if config.problem == "barenblatt":
        a = float(domain_halfwidth(d))
        spec = BarenblattSpec(d=d, C=1.0, time_shift=1.0)
        r0 = float(free_boundary_radius(spec, 0.0))
        rT = float(free_boundary_radius(spec, T))
        domain = DomainSpec.cube(d, a, T=T)
        mixture = MixtureSpec(d=d, theta0=config.theta0, theta1=config.theta1,
                              r0=r0, rT=min(rT, a), half_widths=domain.half_widths)
        return Problem(domain=domain, mixture=mixture, u0=barenblatt_ic(d),
                       exact=ExactBarenblatt(d))
    domain = DomainSpec.cube(d, 4.0, T=T)
    mixture = MixtureSpec(d=d, theta0=config.theta0, theta1=config.theta1,
                          r0=np.pi / 2.0, rT=3.0, half_widths=domain.half_widths)
    return Problem(domain=domain, mixture=mixture, u0=waiting_ic_bundle(),
                   exact=None)


def build_ansatz(config: TrainConfig, problem: Problem):
    """(ansatz, list of MlpSpec) for the configured formulation."""
    spec = MlpSpec(input_dim=config.d + 1,
                   hidden_widths=(config.width,) * config.depth,
                   activation=config.activation)
    kind = config.formulation.kind
    if kind in ("pinn-l2", "pinn-l1"):
        return PinnAnsatz(spec, problem.domain, soft_ic=not config.hard_ic,
                          u0=problem.u0 if config.hard_ic else None), [spec]
    if kind == "phi":
        return PhiAnsatz(spec, problem.domain), [spec]
    return QSigmaAnsatz(spec, spec, problem.domain,
                        growing=config.growing_sigma), [spec, spec]


# ---------------------------------------------------------------------------
# history and manifest


@dataclass
class History:
    """Per-step term values plus the exact-solution square integral on the
    same batch (for the entropy-gap diagnostic)."""

    step: list = field(default_factory=list)
    total: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    boundary: list = field(default_factory=list)
    initial: list = field(default_factory=list)
    consistency: list = field(default_factory=list)
    u2sq: list = field(default_factory=list)
    eval_steps: list = field(default_factory=list)
    eval_errors: list = field(default_factory=list)  # (e1, e2, eh1) tuples

    def append(self, step, breakdown, u2sq):
        self.step.append(step)
        self.total.append(breakdown.total)
        self.objective.append(breakdown.objective)
        self.boundary.append(breakdown.boundary)
        self.initial.append(breakdown.initial)
        self.consistency.append(breakdown.consistency)
        self.u2sq.append(u2sq)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("step,total,objective,boundary,initial,consistency\n")
            for i in range(len(self.step)):
                fh.write(f"{self.step[i]},{self.total[i]!r},{self.objective[i]!r},"
                         f"{self.boundary[i]!r},{self.initial[i]!r},"
                         f"{self.consistency[i]!r}\n")


def entropy_gap(history: History) -> np.ndarray:
    """Series of (MC integral of the squared exact solution) + objective;
    converges to zero when the variational objective reaches its optimum."""
    return np.asarray(history.u2sq) + np.asarray(history.objective)


@dataclass
class RunManifest:
    """Reproducibility record written next to the run artifacts."""

    config: dict
    status: str
    started: str
    finished: str = ""
    final_metrics: dict = field(default_factory=dict)
    checkpoint: str = ""
    source: str = ""

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def _config_dict(config: TrainConfig):
    d = asdict(config)
    d["formulation"] = asdict(config.formulation)
    return d


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainState:
    params: list        # one or two ParamVectors
    adam: AdamState     # single state over the concatenation
    step: int
    ansatz: object
    problem: Problem
    config: TrainConfig


def _concat(params):
    return np.concatenate([p.data for p in params])


def _split(flat, params):
    out = []
    off = 0
    for p in params:
        n = p.data.shape[0]
        out.append(ParamVector(p.spec, flat[off:off + n].copy()))
        off += n
    return out


def _loss_closure(config, ansatz, u0, batch, ic_batch, bnd_batch):
    """Scalar loss as a function of a flat traced concatenation."""
    fn = loss_for(config.formulation)
    kind = config.formulation.kind
    if kind == "qsigma":
        def eval_pair(tp_q, tp_s):
            return fn((tp_q, tp_s), ansatz, u0, batch, ic_batch, bnd_batch,
                      config.formulation)
        return eval_pair
    def eval_one(tp):
        return fn(tp, ansatz, u0, batch, ic_batch, bnd_batch, config.formulation)
    return eval_one


def _exact_u2sq(problem, batch):
    """Correction-weighted mean of the squared exact solution on a batch."""
    if problem.exact is None:
        return 0.0
    u = problem.exact.value(batch.t, batch.x)
    return float(np.mean(batch.c * u * u))


def train(config: TrainConfig, out_dir=None, resume_from=None,
          log=None):
    """Run the configured optimization; returns (TrainState, History,
    RunManifest).  Divergence raises DivergenceError after writing a
    failed manifest when out_dir is given."""
    problem = make_problem(config)
    ansatz, specs = build_ansatz(config, problem)
    rng = np.random.default_rng(config.seed)
    params = [ParamVector.init(s, rng) for s in specs]
    start_step = 0
    adam = AdamState.fresh(sum(p.data.shape[0] for p in params), lr=config.lr)

    if resume_from is not None:
        params, adam, start_step, rng = _load_resume(resume_from, specs)

    history = History()
    manifest = RunManifest(config=_config_dict(config), status="running",
                           started=_now(), source=_source_id())
    two_nets = config.formulation.kind == "qsigma"
    t0 = time.monotonic()
    try:
        for step in range(start_step, config.steps):
            batch = sample_mixture(rng, problem.mixture, config.T,
                                   config.batch_size)
            ic_batch = sample_mixture(rng, problem.mixture, config.T,
                                      config.batch_size)
            bnd = None
            if config.boundary_batch > 0:
                bnd = sample_boundary(rng, problem.domain, config.T,
                                      config.boundary_batch)
            closure = _loss_closure(config, ansatz, problem.u0, batch,
                                    ic_batch, bnd)
            breakdown_box = {}

            if two_nets:
                def scalar(tp_pair):
                    lb = closure(tp_pair[0], tp_pair[1])
                    breakdown_box["lb"] = lb
                    return lb.total
                grads = _pair_gradient(scalar, params)
            else:
                def scalar(tp):
                    lb = closure(tp)
                    breakdown_box["lb"] = lb
                    return lb.total
                grads = param_gradient(scalar, params[0])
            if config.grad_clip > 0:
                gn = float(np.linalg.norm(grads))
                if gn > config.grad_clip:
                    grads = grads * (config.grad_clip / gn)

            flat = _concat(params)
            flat, adam = adam_step(flat, grads, adam)
            params = _split(flat, params)

            lb = breakdown_box["lb"].values()
            history.append(step, lb, _exact_u2sq(problem, batch))
            if not np.isfinite(lb.total):
                raise NonFiniteLossError(f"total loss {lb.total} at step {step}")

            if config.eval_every > 0 and (step + 1) % config.eval_every == 0:
                errs = _eval_metrics(config, ansatz, params, problem)
                if errs is not None:
                    history.eval_steps.append(step + 1)
                    history.eval_errors.append(errs)
                if log:
                    log(step + 1, lb, errs)
    except (NonFiniteLossError, NonFiniteTermError,
            ConstraintViolationError) as exc:
        manifest.status = "failed"
        manifest.finished = _now()
        manifest.final_metrics = {"error": str(exc), "step": len(history.step)}
        if out_dir is not None:
            _write_artifacts(out_dir, config, params, adam, rng, history,
                             manifest)
        raise DivergenceError(str(exc)) from exc

    manifest.status = "ok"
    manifest.finished = _now()
    errs = _eval_metrics(config, ansatz, params, problem)
    manifest.final_metrics = {
        "final_total": history.total[-1] if history.total else None,
        "wall_seconds": time.monotonic() - t0,
    }
    if errs is not None:
        manifest.final_metrics.update(
            {"rel_l1": errs[0], "rel_l2": errs[1], "rel_h1": errs[2]}
        )
    if out_dir is not None:
        _write_artifacts(out_dir, config, params, adam, rng, history, manifest)
    state = TrainState(params=params, adam=adam, step=config.steps,
                       ansatz=ansatz, problem=problem, config=config)
    return state, history, manifest


def _pair_gradient(scalar_of_pair, params):
    """Joint gradient over concatenated (theta_q, theta_sigma)."""
    from .autodiff import TracedParams

    tq, ts = TracedParams(params[0]), TracedParams(params[1])
    loss = scalar_of_pair((tq, ts))
    v = value_of(loss)
    if not np.isfinite(v):
        raise NonFiniteLossError(f"loss evaluated to {v!r}")
    if hasattr(loss, "backward"):
        loss.backward()
    return np.concatenate([tq.gradient(), ts.gradient()])


def solution_evaluator(config: TrainConfig, ansatz, params):
    """Uniform value_and_grad view over the formulation kinds."""
    kind = config.formulation.kind

    class _Eval:
        def value_and_grad(self, t, X):
            if kind == "qsigma":
                return ansatz.value_and_grad((params[0], params[1]), t, X)
            return ansatz.value_and_grad(params[0], t, X)

        def value(self, t, X):
            if kind == "qsigma":
                return ansatz.value((params[0], params[1]), t, X)
            return ansatz.value(params[0], t, X)

    return _Eval()


def _eval_metrics(config, ansatz, params, problem, t=0.5, n=100):
    if problem.exact is None:
        return None
    sol = solution_evaluator(config, ansatz, params)
    try:
        pred = eval_slice(sol, problem.domain, t, 1.0, n)
    except ArithmeticError:
        return None
    exact = eval_slice(problem.exact, problem.domain, t, 1.0, n)
    return tuple(float(e) for e in relative_errors(pred, exact))


# ---------------------------------------------------------------------------
# artifacts


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _source_id():
    try:
        from importlib.metadata import version
        return f"qpme {version('qpme')}"
    except Exception:
        return "qpme"


def _write_artifacts(out_dir, config, params, adam, rng, history, manifest):
    os.makedirs(out_dir, exist_ok=True)
    names = (["model.ckpt"] if len(params) == 1
             else ["model_q.ckpt", "model_sigma.ckpt"])
    meta = {
        "formulation": config.formulation.kind,
        "problem": config.problem,
        "d": config.d,
        "T": config.T,
        "hard_ic": config.hard_ic,
        "growing_sigma": config.growing_sigma,
        "rng_state": rng.bit_generator.state,
    }
    for name, p in zip(names, params):
        save_checkpoint(os.path.join(out_dir, name), p, seed=config.seed,
                        step=adam.step, meta=meta)
    np.savez(os.path.join(out_dir, "optimizer.npz"), m=adam.m, v=adam.v,
             step=adam.step, lr=adam.lr)
    history.write_csv(os.path.join(out_dir, "loss_history.csv"))
    manifest.checkpoint = os.path.join(out_dir, names[0])
    manifest.write(os.path.join(out_dir, "manifest.json"))


def _load_resume(out_dir, specs):
    """Rebuild (params, adam, start_step, rng) from a run directory."""
    names = (["model.ckpt"] if len(specs) == 1
             else ["model_q.ckpt", "model_sigma.ckpt"])
    params = []
    header = None
    for name in names:
        p, header = load_checkpoint(os.path.join(out_dir, name))
        params.append(p)
    opt = np.load(os.path.join(out_dir, "optimizer.npz"))
    adam = AdamState(m=opt["m"], v=opt["v"], step=int(opt["step"]),
                     lr=float(opt["lr"]))
    rng = np.random.default_rng()
    rng.bit_generator.state = header["meta"]["rng_state"]
    return params, adam, int(opt["step"]), rng
