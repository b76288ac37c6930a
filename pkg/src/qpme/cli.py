"""Command line experiment runner.

QPME_THREADS (0 = auto) caps the BLAS/OpenMP worker count; it must be
applied before numpy spins up its thread pools, hence the environment
setup at the very top of this module.
"""

from __future__ import annotations

import os

_threads = os.environ.get("QPME_THREADS", "").strip()
if _threads and _threads != "0":
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import json
import sys

import click
import numpy as np

from .analytic import domain_halfwidth
from .autodiff import ContractError, load_checkpoint
from .formulations import FormulationConfig
from .metrics import dump_slice_csv, eval_slice, relative_errors
from .sampling import (
    MixtureSpec,
    dump_samples_csv,
    region_probabilities,
    sample_mixture,
    sample_unit_ball,
)

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_USAGE = 2
EXIT_IO = 3

_CONFIG_KEYS = {
    "problem", "formulation", "d", "steps", "width", "depth", "activation",
    "batch_size", "lr", "seed", "theta0", "theta1", "eval_every", "hard_ic",
    "growing_sigma", "grad_clip", "boundary_batch", "T",
    "kappa", "mu", "nu", "gamma", "consistency_norm", "soft_guard",
    "output_dir",
}


@click.group()
def main():
    """Neural-network and finite-difference solvers for the quadratic
    porous medium equation."""


def _load_config_file(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise click.ClickException(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"config parse error at line {exc.lineno}: {exc.msg}")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _train_config(raw):
    from .training import TrainConfig

    form_keys = {"kappa", "mu", "nu", "gamma", "consistency_norm", "soft_guard"}
    form = FormulationConfig(kind=raw.pop("formulation", "pinn-l2"),
                             **{k: raw.pop(k) for k in list(raw)
                                if k in form_keys})
    raw.pop("output_dir", None)
    return TrainConfig(formulation=form, **raw)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; flags override nothing when given.")
@click.option("--problem", type=click.Choice(["barenblatt", "waiting"]),
              default="barenblatt", show_default=True)
@click.option("--dim", "-d", type=int, default=1, show_default=True)
@click.option("--formulation", type=click.Choice(["pinn-l2", "pinn-l1", "phi",
                                                  "qsigma"]),
              default="pinn-l2", show_default=True)
@click.option("--paper-table", type=click.Choice(["pinn", "pinn-l1", "phi",
                                                  "qsigma"]), default=None,
              help="Load the published per-dimension hyperparameters.")
@click.option("--steps", type=int, default=5000, show_default=True)
@click.option("--batch", type=int, default=1000, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--depth", type=int, default=2, show_default=True)
@click.option("--kappa", type=float, default=None, help="objective weight")
@click.option("--nu", type=float, default=None, help="initial-penalty weight")
@click.option("--gamma", type=float, default=None, help="consistency weight")
@click.option("--eval-every", type=int, default=500, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="run",
              show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True,
              help="Render loss/slice figures next to the CSV artifacts.")
def train(config_path, problem, dim, formulation, paper_table, steps, batch,
          lr, seed, width, depth, kappa, nu, gamma, eval_every, out_dir, plot):
    """Train a solution network and write run artifacts."""
    from .training import DivergenceError, paper_preset
    from .training import TrainConfig, train as run_train

    if config_path is not None:
        cfg = _train_config(_load_config_file(config_path))
    elif paper_table is not None:
        cfg = paper_preset(paper_table, dim, steps=steps, width=width,
                           problem=problem, batch_size=batch, seed=seed,
                           eval_every=eval_every)
    else:
        defaults = {"pinn-l2": dict(kappa=1.0, nu=1e3),
                    "pinn-l1": dict(kappa=1.0, nu=1e3),
                    "phi": dict(kappa=1.0, nu=1e3),
                    "qsigma": dict(kappa=1e3, nu=1.0, gamma=1e3)}[formulation]
        if kappa is not None:
            defaults["kappa"] = kappa
        if nu is not None:
            defaults["nu"] = nu
        if gamma is not None:
            defaults["gamma"] = gamma
        form = FormulationConfig(kind=formulation, **defaults)
        cfg = TrainConfig(formulation=form, d=dim, steps=steps, problem=problem,
                          width=width, depth=depth, batch_size=batch, lr=lr,
                          seed=seed, eval_every=eval_every)
    try:
        state, history, manifest = run_train(cfg, out_dir=out_dir)
    except DivergenceError as exc:
        click.echo(f"training diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    except OSError as exc:
        click.echo(f"cannot write artifacts: {exc}", err=True)
        sys.exit(EXIT_IO)
    if plot:
        from .plots import plot_loss_history

        plot_loss_history(history, os.path.join(out_dir, "loss_history.png"))
    click.echo(f"status {manifest.status}; artifacts in {out_dir}")
    for key, val in manifest.final_metrics.items():
        click.echo(f"  {key}: {val}")


def _rebuild_solution(ckpt_path):
    """(evaluator, domain, meta) from a checkpoint file or run directory."""
    from .training import TrainConfig, build_ansatz, make_problem, solution_evaluator

    if os.path.isdir(ckpt_path):
        for name in ("model.ckpt", "model_q.ckpt"):
            p = os.path.join(ckpt_path, name)
            if os.path.exists(p):
                ckpt_path = p
                break
    params, header = load_checkpoint(ckpt_path)
    meta = header.get("meta", {})
    if "formulation" not in meta:
        raise ContractError("checkpoint lacks run metadata")
    pv = [params]
    if meta["formulation"] == "qsigma":
        sig_path = ckpt_path.replace("model_q.ckpt", "model_sigma.ckpt")
        sparams, _ = load_checkpoint(sig_path)
        pv.append(sparams)
    form = FormulationConfig(kind=meta["formulation"])
    cfg = TrainConfig(formulation=form, d=meta["d"], steps=1,
                      problem=meta["problem"],
                      width=params.spec.hidden_widths[0],
                      depth=len(params.spec.hidden_widths),
                      activation=params.spec.activation,
                      hard_ic=meta.get("hard_ic", False),
                      growing_sigma=meta.get("growing_sigma", False),
                      T=meta.get("T", 1.0))
    problem = make_problem(cfg)
    ansatz, _ = build_ansatz(cfg, problem)
    return solution_evaluator(cfg, ansatz, pv), problem, meta


@main.command()
@click.argument("checkpoint", type=click.Path())
@click.option("--t", "t_eval", type=float, default=0.5, show_default=True)
@click.option("--c", "fixed_coord", type=float, default=1.0, show_default=True,
              help="Value held on coordinates 3..d of the slice.")
@click.option("--n", type=int, default=100, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=".",
              show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
def evaluate(checkpoint, t_eval, fixed_coord, n, out_dir, plot):
    """Export a solution slice and, when an exact solution exists, the
    relative errors against it."""
    try:
        sol, problem, meta = _rebuild_solution(checkpoint)
    except (OSError, ContractError, KeyError) as exc:
        click.echo(f"cannot load checkpoint: {exc}", err=True)
        sys.exit(EXIT_IO)
    os.makedirs(out_dir, exist_ok=True)
    pred = eval_slice(sol, problem.domain, t_eval, fixed_coord, n)
    dump_slice_csv(os.path.join(out_dir, "slice.csv"), pred)
    exact = None
    if problem.exact is not None:
        exact = eval_slice(problem.exact, problem.domain, t_eval, fixed_coord, n)
        e1, e2, eh = relative_errors(pred, exact)
        report = {"rel_l1": e1, "rel_l2": e2, "rel_h1": eh,
                  "t": t_eval, "fixed_coord": fixed_coord, "n": n}
        with open(os.path.join(out_dir, "errors.json"), "w") as fh:
            json.dump(report, fh, indent=2)
        click.echo(f"relative errors: L1 {e1:.4f}  L2 {e2:.4f}  H1 {eh:.4f}")
    if plot:
        from .plots import plot_slice

        plot_slice(pred, os.path.join(out_dir, "slice.png"), exact=exact)
    click.echo(f"slice written to {os.path.join(out_dir, 'slice.csv')}")


@main.command("sample-check")
@click.option("--dim", "-d", type=int, default=3, show_default=True)
@click.option("--theta0", type=float, default=0.3, show_default=True)
@click.option("--theta1", type=float, default=0.3, show_default=True)
@click.option("--r0", type=float, default=None, help="inner-ball radius")
@click.option("--rt", "rT", type=float, default=None, help="shell outer radius")
@click.option("--half-width", type=float, default=None)
@click.option("--n", type=int, default=100000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dump", type=click.Path(), default=None,
              help="Write the sampled batch as CSV.")
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=".",
              show_default=True)
def sample_check(dim, theta0, theta1, r0, rT, half_width, n, seed, dump, plot,
                 out_dir):
    """Empirical self-test of the three-region mixture sampler."""
    if n < 1000:
        raise click.UsageError("need n >= 1000 for meaningful statistics")
    a = half_width if half_width is not None else float(domain_halfwidth(dim))
    r0 = r0 if r0 is not None else np.sqrt(2.0 * (2 + dim))
    rT = rT if rT is not None else min(
        np.sqrt(2.0 * (2 + dim)) * 2.0 ** (1.0 / (dim + 2)), a)
    spec = MixtureSpec(d=dim, theta0=theta0, theta1=theta1, r0=r0, rT=rT,
                       half_widths=(a,) * dim)
    rng = np.random.default_rng(seed)
    batch = sample_mixture(rng, spec, 1.0, n)
    probs = region_probabilities(spec)
    freqs = np.bincount(batch.region, minlength=3) / n
    click.echo("region    P(model)   frequency")
    for i in range(3):
        click.echo(f"  V{i}     {probs[i]:.6f}   {freqs[i]:.6f}")
    wmean = float(np.mean(batch.c))
    wsig = float(np.std(batch.c)) / np.sqrt(n)
    click.echo(f"correction-weighted constant: {wmean:.6f} +- {wsig:.6f} (expect 1)")
    ball = sample_unit_ball(rng, dim, n)
    radial = np.sort(np.linalg.norm(ball, axis=0) ** dim)
    ks = float(np.max(np.abs(radial - (np.arange(1, n + 1) - 0.5) / n)))
    click.echo(f"ball radial-law KS statistic: {ks:.5f} "
               f"(1% critical ~ {1.63 / np.sqrt(n):.5f})")
    if dump:
        dump_samples_csv(dump, batch)
        click.echo(f"samples written to {dump}")
    if plot:
        from .plots import plot_sample_projection

        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "samples.png")
        plot_sample_projection(batch, path)
        click.echo(f"projection figure written to {path}")


@main.command()
@click.option("--problem", type=click.Choice(["waiting", "barenblatt-1d"]),
              default="waiting", show_default=True)
@click.option("--h", "h", type=float, default=0.04, show_default=True)
@click.option("--dt", type=str, default="auto", show_default=True,
              help="Time step, or 'auto' for the stability bound.")
@click.option("--t-end", type=float, default=1.0, show_default=True)
@click.option("--epsilon", type=float, default=1e-3, show_default=True,
              help="Support detection threshold.")
@click.option("--out", "out_dir", type=click.Path(), default="fdref",
              show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
def fdref(problem, h, dt, t_end, epsilon, out_dir, plot):
    """Run the finite-difference reference solver and export snapshots."""
    from .fdref import (
        StabilityError,
        barenblatt_validation,
        dump_snapshot_csv,
        waiting_time_experiment,
    )

    dt_val = None if dt == "auto" else float(dt)
    try:
        os.makedirs(out_dir, exist_ok=True)
        if problem == "barenblatt-1d":
            err, grid = barenblatt_validation(h=h, t_end=min(t_end, 0.5))
            click.echo(f"max-norm error vs closed form: {err:.6f}")
            dump_snapshot_csv(os.path.join(out_dir, "final.csv"),
                              grid.nodes, grid.field)
            return
        result = waiting_time_experiment(h=h, dt=dt_val, epsilon=epsilon,
                                         t_end=t_end)
    except StabilityError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_USAGE)
    except OSError as exc:
        click.echo(f"cannot write artifacts: {exc}", err=True)
        sys.exit(EXIT_IO)
    with open(os.path.join(out_dir, "radius.csv"), "w", newline="") as fh:
        fh.write("t,radius\n")
        for t, r in zip(result.times, result.radii):
            fh.write(f"{t:.17g},{r:.17g}\n")
    for t, (x, u) in result.snapshots.items():
        dump_snapshot_csv(os.path.join(out_dir, f"snapshot_t{t:g}.csv"), x, u)
    if plot:
        from .plots import plot_snapshots

        plot_snapshots(result, os.path.join(out_dir, "snapshots.png"))
    click.echo(f"radius series and {len(result.snapshots)} snapshots "
               f"written to {out_dir}")


if __name__ == "__main__":
    main()
