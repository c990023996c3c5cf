"""Command-line harness.

Exit codes: 0 success, 2 validation error, 3 numerical failure (including a
failed gradient check), 4 I/O or parse error.
"""

import json
import os
import sys

import click

from . import __version__
from .config import ExperimentConfig, format_config, load_config
from .errors import InvalidArgument, NumericalFailure, ParseError
from .evaluation import compute_metrics, gradient_check
from .experiments import (
    SWEEP_AXES,
    fidelity_for,
    load_prior,
    oracle_report,
    run_recovery,
    simulate,
    sweep,
    write_sweep_csv,
)
from .likelihood import DataFidelity
from .measurement import load_problem, read_vector_csv, save_problem
from .prior import random_mixture, save_mixture

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except NumericalFailure as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            ctx.exit(EXIT_NUMERICAL)
        except InvalidArgument as exc:
            click.echo(f"invalid argument: {exc}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except (ParseError, OSError) as exc:
            click.echo(f"I/O error: {exc}", err=True)
            ctx.exit(EXIT_IO)


_OVERRIDES = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Experiment config file."),
    click.option("--task", type=click.Choice(["onebit_cs", "logistic", "onebit_inpainting"])),
    click.option("--n", type=int, help="Signal dimension N."),
    click.option("--m", type=int, help="Number of measurements M (default N/16)."),
    click.option("--mask-ratio", type=float),
    click.option("--sigma", type=float, help="Pre-quantization noise std."),
    click.option("--prior", type=click.Path(dir_okay=False), help="Mixture prior file."),
    click.option("--image-shape", type=(int, int), default=None, help="H W for SSIM."),
    click.option("--T", "T", type=int),
    click.option("--beta-min", type=float),
    click.option("--beta-max", type=float),
    click.option("--lambda", "lam", type=float, help="Penalty coefficient (task default if unset)."),
    click.option("--zeta", type=float),
    click.option("--nfe", type=int),
    click.option("--inner-steps", type=int),
    click.option("--lr", type=float),
    click.option("--optimizer", type=click.Choice(["adam", "gd"])),
    click.option("--warm-start", type=click.Choice(["from_z", "from_previous"])),
    click.option("--fidelity-sigma", type=float, help="Probit sigma assumed by recovery (default: simulation sigma)."),
    click.option("--trials", type=int),
    click.option("--seed", type=int),
    click.option("--output", "-o", type=click.Path(), help="Output file or directory."),
    click.option("--workers", type=int),
    click.option("--data-range", type=float),
]


def config_options(fn):
    for opt in reversed(_OVERRIDES):
        fn = opt(fn)
    return fn


def _resolve(config_path, overrides, check_files=True, for_recovery=True):
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    return cfg.with_overrides(**overrides).validate(check_files, for_recovery)


@click.group(cls=_Group)
@click.version_option(__version__)
def main():
    """Recover signals from 1-bit measurements with a diffusion-style prior."""


@main.command("make-prior")
@click.option("--n", type=int, required=True)
@click.option("--components", type=int, default=4, show_default=True)
@click.option("--spread", type=float, default=2**-0.5, show_default=True, help="Std of the component means.")
@click.option("--tau", type=float, default=2**-0.5, show_default=True, help="Within-component std.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True)
def make_prior(n, components, spread, tau, seed, output):
    """Write a random equal-weight mixture prior file."""
    save_mixture(output, random_mixture(seed, components, n, spread, tau))
    click.echo(output)


@main.command("simulate")
@config_options
def simulate_cmd(config_path, **overrides):
    """Draw a ground truth from the prior and write an OBIT1 problem file."""
    cfg = _resolve(config_path, overrides, for_recovery=False)
    prior = load_prior(cfg.prior)
    problem = simulate(cfg, prior)
    path = cfg.output if cfg.output.endswith(".obit") else os.path.join(cfg.output, "problem.obit")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_problem(path, problem)
    click.echo(f"{path}: N={problem.operator.cols} M={problem.observation.m} model={problem.observation.model}")


@main.command("recover")
@click.argument("problem_file", type=click.Path(dir_okay=False))
@config_options
def recover_cmd(problem_file, config_path, **overrides):
    """Run recovery trials on a problem file."""
    cfg = _resolve(config_path, overrides)
    problem = load_problem(problem_file)
    prior = load_prior(cfg.prior)
    if prior.dim != problem.operator.cols:
        raise InvalidArgument(f"prior has N={prior.dim}, problem has N={problem.operator.cols}")
    cfg = cfg.with_overrides(n=problem.operator.cols)
    fidelity_for(cfg, problem.observation)
    records = run_recovery(problem, cfg, prior, cfg.output)
    for rec in records:
        m = rec.metrics
        click.echo(
            f"trial {rec.trial}: cosine={m.cosine:.4f} psnr={m.psnr:.2f} "
            f"norm_err={m.norm_rel_error:.4f} sign={m.sign_consistency:.4f}"
        )
    click.echo(f"results in {cfg.output}")


@main.command("sweep")
@click.option("--axis", type=click.Choice(SWEEP_AXES), required=True)
@click.option("--values", required=True, help="Comma-separated axis values.")
@config_options
def sweep_cmd(axis, values, config_path, **overrides):
    """Cross axis values with trials; write a CSV with per-trial and aggregate rows."""
    vals = [v for v in (s.strip() for s in values.split(",")) if v]
    if not vals:
        raise InvalidArgument("--values is empty")
    try:
        parsed = [int(v) if axis == "nfe" or (axis == "measurements" and "." not in v) else float(v) for v in vals]
    except ValueError:
        raise InvalidArgument(f"cannot parse sweep values {values!r}") from None
    cfg = _resolve(config_path, overrides)
    prior = load_prior(cfg.prior)
    rows, aggs = sweep(cfg, prior, axis, parsed)
    path = cfg.output if cfg.output.endswith(".csv") else os.path.join(cfg.output, f"sweep_{axis}.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_sweep_csv(path, rows, aggs, {**cfg.provenance(), "axis": axis})
    for a in aggs:
        click.echo(f"{axis}={a['value']}: cosine={a['cosine']:.4f} ± {a['cosine_std']:.4f} psnr={a['psnr']:.2f} ± {a['psnr_std']:.2f}")
    click.echo(path)


@main.command("oracle")
@click.argument("problem_file", type=click.Path(dir_okay=False))
@click.option("--prior", type=click.Path(dir_okay=False), required=True)
@click.option("--bounds", type=(float, float), default=(-5.0, 5.0), show_default=True)
@click.option("--resolution", type=int, default=512, show_default=True)
@click.option("--fidelity-sigma", type=float, default=None)
@click.option("--null", "null_fidelity", is_flag=True, help="Ignore the measurements (prior-only MAP).")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def oracle_cmd(problem_file, prior, bounds, resolution, fidelity_sigma, null_fidelity, output):
    """Brute-force grid minimizer of the MAP objective (N <= 3)."""
    problem = load_problem(problem_file)
    mix = load_prior(prior)
    fid = DataFidelity.null() if null_fidelity else DataFidelity.matching(problem.observation, fidelity_sigma)
    report = oracle_report(problem, mix, fid, bounds, resolution)
    report["tool_version"] = __version__
    report["problem_config_hash"] = problem.meta.get("config_hash")
    text = json.dumps(report, indent=2, sort_keys=True)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    click.echo(text)


@main.command("gradcheck")
@click.option("--instances", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--family", type=click.Choice(["probit", "logistic", "null", "all"]), default="all", show_default=True)
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--perturb", type=float, default=0.0, hidden=True, help="Test hook: offset added to analytic gradients.")
def gradcheck_cmd(instances, seed, family, tol, perturb):
    """Compare analytic gradients with central differences."""
    families = ["probit", "logistic", "null"] if family == "all" else [family]
    ok = True
    for fam in families:
        res = gradient_check(fam, instances, seed, tol=tol, perturb=perturb)
        status = "PASS" if res.passed else "FAIL"
        click.echo(
            f"{status} {fam}: {res.instances} instances, max rel error {res.max_rel_error:.3e} "
            f"(instance {res.worst_instance}, tol {tol:g})"
        )
        ok &= res.passed
    if not ok:
        sys.exit(EXIT_NUMERICAL)


@main.command("metrics")
@click.argument("problem_file", type=click.Path(dir_okay=False))
@click.argument("recon_files", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--data-range", type=float, default=2.0, show_default=True)
@click.option("--image-shape", type=(int, int), default=None)
def metrics_cmd(problem_file, recon_files, data_range, image_shape):
    """Recompute metrics for stored reconstructions; one JSON line each."""
    problem = load_problem(problem_file)
    if problem.truth is None:
        raise InvalidArgument("problem file has no ground truth")
    for path in recon_files:
        x_hat = read_vector_csv(path)
        m = compute_metrics(problem.operator, problem.observation, x_hat, problem.truth, data_range, image_shape)
        click.echo(json.dumps({"file": path, "metrics": m.to_dict()}, sort_keys=True))


@main.command("show-config")
@config_options
def show_config(config_path, **overrides):
    """Print the resolved config and its hash."""
    cfg = _resolve(config_path, overrides, check_files=False)
    click.echo(format_config(cfg))
    click.echo(f"# config_hash={cfg.config_hash()}")


if __name__ == "__main__":
    main()
