from __future__ import annotations

import json
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from unrect.config import ExperimentConfig, load_experiment
from unrect.core import get_services
from unrect.core.models import LocalVariantReport
from unrect.errors import GuardError, UnrectError
from unrect.log import setup_logging

app = typer.Typer(add_completion=False, help="unrect: measure-zeroing perturbations of constant-rank maps")
console = Console()

ConfigOpt = typer.Option(None, "--config", "-c", help="JSON experiment config; explicit flags override it")
SeedOpt = typer.Option(None, "--seed", help="Seed for every random draw (required by randomised commands)")


def _floats(text: Optional[str], name: str) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise GuardError(f"--{name} expects comma-separated numbers, got {text!r}") from None


def _ints(text: Optional[str], name: str) -> Optional[List[int]]:
    values = _floats(text, name)
    return None if values is None else [int(v) for v in values]


def _config(config: Optional[Path], angle: Optional[float] = None, **flags: Any) -> ExperimentConfig:
    cfg = load_experiment(config, flags)
    if angle is not None:
        cfg = cfg.model_copy(update={"map": cfg.map.model_copy(update={"angle": angle})})
    return cfg


def _guarded(fn: Callable) -> Callable:
    """Map library errors to exit codes: 2 guard, 3 infeasible, 4 budget."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as e:
            typer.secho(f"Invalid configuration: {e}", fg=typer.colors.RED)
            raise typer.Exit(code=2)
        except UnrectError as e:
            typer.secho(f"{type(e).__name__}: {e}", fg=typer.colors.RED)
            raise typer.Exit(code=e.exit_code)

    return wrapper


@app.callback()
def _root(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR (env UNRECT_LOG_LEVEL)"),
):
    setup_logging(log_level)


@app.command()
@_guarded
def gen(
    set_name: Optional[str] = typer.Option(None, "--set", help="four-corner, ifs-segment, segment or graph"),
    depth: Optional[int] = typer.Option(None, "--depth", help="Generation depth for IFS sets"),
    samples: Optional[int] = typer.Option(None, "--samples", help="Samples along a curve"),
    a: Optional[str] = typer.Option(None, "--a", help="Segment start, e.g. 0,0"),
    b: Optional[str] = typer.Option(None, "--b", help="Segment end, e.g. 1,0"),
    coefficients: Optional[str] = typer.Option(None, "--coefficients", help="Graph polynomial coefficients c0,c1,..."),
    x_range: Optional[str] = typer.Option(None, "--x-range", help="Graph domain, e.g. 0,1"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="CSV output (sidecar JSON written next to it)"),
    svg: Optional[Path] = typer.Option(None, "--svg", help="Scatter plot of the cloud"),
    config: Optional[Path] = ConfigOpt,
):
    """Generate a test set and write it as CSV plus a JSON sidecar."""
    cfg = _config(
        config,
        generator=set_name,
        depth=depth,
        samples=samples,
        a=_floats(a, "a"),
        b=_floats(b, "b"),
        coefficients=_floats(coefficients, "coefficients"),
        x_range=_floats(x_range, "x-range"),
        out=out,
        svg=svg,
    )
    cloud, meta = get_services().gen(cfg)
    table = Table(title=f"Cloud: {meta.generator}")
    table.add_column("Field")
    table.add_column("Value")
    table.add_row("points", str(cloud.count))
    table.add_row("depth", str(meta.depth))
    table.add_row("total mass", f"{meta.total_mass:.17g}")
    table.add_row("file", str(cfg.out) if cfg.out else "(not written)")
    console.print(table)


@app.command()
@_guarded
def favard(
    set_name: Optional[str] = typer.Option(None, "--set", help="Generator; IFS sets are swept over --depths"),
    depths: Optional[str] = typer.Option(None, "--depths", help="Comma-separated depths, e.g. 1,2,3,4,5,6"),
    input_path: Optional[Path] = typer.Option(None, "--input", "-i", help="Read a stored cloud instead"),
    samples: Optional[int] = typer.Option(None, "--samples", help="Samples along a curve"),
    a: Optional[str] = typer.Option(None, "--a", help="Segment start"),
    b: Optional[str] = typer.Option(None, "--b", help="Segment end"),
    angles: Optional[int] = typer.Option(None, "--angles", help="Equispaced angles in [0, pi)"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Covering scale (default: the cloud's cell size)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Decay table CSV"),
    svg: Optional[Path] = typer.Option(None, "--svg", help="Decay plot"),
    json_out: bool = typer.Option(False, "--json", help="Output as JSON"),
    config: Optional[Path] = ConfigOpt,
):
    """Favard length (mean projected length over directions), per depth."""
    cfg = _config(
        config,
        generator=set_name,
        depths=_ints(depths, "depths"),
        input=input_path,
        samples=samples,
        a=_floats(a, "a"),
        b=_floats(b, "b"),
        angles=angles,
        delta=delta,
        out=out,
        svg=svg,
    )
    rows = get_services().favard(cfg)
    if json_out:
        typer.echo(json.dumps([r.model_dump() for r in rows], indent=2))
        raise typer.Exit()
    table = Table(title="Favard length")
    for col in ("depth", "value", "delta", "angles", "samples"):
        table.add_column(col)
    for r in rows:
        table.add_row(str(r.depth), f"{r.value:.6g}", f"{r.delta:.3g}", str(r.angles), str(r.samples))
    console.print(table)


@app.command()
@_guarded
def measure(
    set_name: Optional[str] = typer.Option(None, "--set", help="Generator"),
    depth: Optional[int] = typer.Option(None, "--depth", help="Generation depth"),
    input_path: Optional[Path] = typer.Option(None, "--input", "-i", help="Stored cloud"),
    angle: Optional[float] = typer.Option(None, "--angle", help="Projection direction for the projected length"),
    angles: Optional[int] = typer.Option(None, "--angles", help="Angles for the Favard quadrature"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Covering scale"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Angle trace CSV angle,value,delta,method"),
    summary: Optional[Path] = typer.Option(None, "--summary", help="JSON record of the estimates"),
    svg: Optional[Path] = typer.Option(None, "--svg", help="Plot of the angle trace"),
    json_out: bool = typer.Option(False, "--json", help="Output as JSON"),
    config: Optional[Path] = ConfigOpt,
):
    """Box-cover, projected-length and Favard estimates for one cloud."""
    cfg = _config(
        config,
        angle=angle,
        generator=set_name,
        depth=depth,
        input=input_path,
        angles=angles,
        delta=delta,
        out=out,
        summary=summary,
        svg=svg,
    )
    estimates = get_services().measure(cfg)
    if json_out:
        typer.echo(json.dumps({k: v.model_dump() for k, v in estimates.items()}, indent=2))
        raise typer.Exit()
    table = Table(title="Measure estimates")
    for col in ("estimate", "value", "delta", "method"):
        table.add_column(col)
    for name, est in estimates.items():
        table.add_row(name, f"{est.value:.6g}", f"{est.delta:.3g}", est.method)
    console.print(table)


@app.command()
@_guarded
def perturb(
    set_name: Optional[str] = typer.Option(None, "--set", help="Generator"),
    depth: Optional[int] = typer.Option(None, "--depth", help="Generation depth"),
    input_path: Optional[Path] = typer.Option(None, "--input", "-i", help="Stored cloud"),
    samples: Optional[int] = typer.Option(None, "--samples", help="Samples along a curve"),
    a: Optional[str] = typer.Option(None, "--a", help="Segment start"),
    b: Optional[str] = typer.Option(None, "--b", help="Segment end"),
    center: Optional[str] = typer.Option(None, "--center", help="Chart centre x,y: run the local variant on U(x, r_x / 2)"),
    angle: Optional[float] = typer.Option(None, "--angle", help="Direction of the image line V"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="C1 budget for f . Xi_theta"),
    rho: Optional[float] = typer.Option(None, "--rho", help="Generator norm bound"),
    trials: Optional[int] = typer.Option(None, "--trials", help="Random rotations to try"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Covering scale"),
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="JSON search report"),
    json_out: bool = typer.Option(False, "--json", help="Output as JSON"),
    config: Optional[Path] = ConfigOpt,
):
    """Search rotations near the identity that shrink the image measure; with --center, on one chart ball."""
    cfg = _config(
        config,
        angle=angle,
        generator=set_name,
        depth=depth,
        input=input_path,
        samples=samples,
        a=_floats(a, "a"),
        b=_floats(b, "b"),
        center=_floats(center, "center"),
        epsilon=epsilon,
        rho=rho,
        trials=trials,
        delta=delta,
        seed=seed,
        out=out,
    )
    result = get_services().perturb(cfg)
    if json_out:
        typer.echo(result.model_dump_json(indent=2))
        raise typer.Exit()
    report = result.search if isinstance(result, LocalVariantReport) else result
    table = Table(title="Rotation search" if report is result else "Local variant")
    table.add_column("Field")
    table.add_column("Value")
    if isinstance(result, LocalVariantReport):
        table.add_row("chart radius r_x", f"{result.chart_radius:.4g}")
        table.add_row("radius r", f"{result.radius:.4g} ({result.points} points)")
    table.add_row("feasible trials", f"{report.feasible}/{len(report.trials)}")
    table.add_row("identity measure", f"{report.identity_measure:.6g}")
    table.add_row("best measure", f"{report.measure:.6g}")
    table.add_row("ratio", "n/a" if report.ratio is None else f"{report.ratio:.4f}")
    table.add_row("|X|", f"{report.norm:.4g}")
    table.add_row("|exp(X) - I|", f"{report.identity_distance:.4g}")
    table.add_row("C1 distance", f"{report.distance:.4g} (epsilon {report.epsilon:g})")
    console.print(table)


@app.command()
@_guarded
def lemma(
    cases: Optional[int] = typer.Option(None, "--cases", help="Random (theta, O, mu, eta) configurations"),
    mu: Optional[float] = typer.Option(None, "--mu", help="Largest collar width drawn"),
    eta: Optional[float] = typer.Option(None, "--eta", help="Largest C1 budget drawn"),
    rho: Optional[float] = typer.Option(None, "--rho", help="Generator norm bound"),
    flow_steps: Optional[int] = typer.Option(None, "--flow-steps", help="RK4 steps (>= 16)"),
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="JSON list of lemma reports"),
    json_out: bool = typer.Option(False, "--json", help="Output as JSON"),
    config: Optional[Path] = ConfigOpt,
):
    """Run the cutoff-flow property suite and print the measured margins."""
    cfg = _config(config, cases=cases, mu=mu, eta=eta, rho=rho, flow_steps=flow_steps, seed=seed, out=out)
    reports = get_services().lemma(cfg)
    if json_out:
        typer.echo(json.dumps([r.model_dump(mode="json") for r in reports], indent=2))
        raise typer.Exit()
    table = Table(title="Key lemma")
    for col in ("case", "t*", "inner error", "outer error", "C1", "eta"):
        table.add_column(col)
    for i, r in enumerate(reports):
        table.add_row(str(i), f"{r.t_star:.4g}", f"{r.error_inner:.2e}", f"{r.error_outer:.1e}", f"{r.c1_norm:.4g}", f"{r.eta:.4g}")
    console.print(table)


@app.command()
@_guarded
def iterate(
    set_name: Optional[str] = typer.Option(None, "--set", help="Generator"),
    depth: Optional[int] = typer.Option(None, "--depth", help="Generation depth"),
    input_path: Optional[Path] = typer.Option(None, "--input", "-i", help="Stored cloud"),
    angle: Optional[float] = typer.Option(None, "--angle", help="Direction of the image line V"),
    steps: Optional[int] = typer.Option(None, "--steps", "-n", help="Rounds N per element"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="Total C1 budget; eps_k = eps 2^-k"),
    rho: Optional[float] = typer.Option(None, "--rho", help="Generator norm bound for the searches"),
    trials: Optional[int] = typer.Option(None, "--trials", help="Rotations per search"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Covering scale"),
    grid_h: Optional[float] = typer.Option(None, "--grid-h", help="Occupancy grid spacing"),
    sigma: Optional[float] = typer.Option(None, "--sigma", help="Mass budget per element (default: the cloud mass inside it)"),
    flow_steps: Optional[int] = typer.Option(None, "--flow-steps", help="RK4 steps (>= 16)"),
    seed: Optional[int] = SeedOpt,
    ledger: Optional[Path] = typer.Option(None, "--ledger", help="Ledger CSV"),
    summary: Optional[Path] = typer.Option(None, "--summary", help="JSON run summary"),
    svg: Optional[Path] = typer.Option(None, "--svg", help="Before/after scatter; the ledger figure goes to <stem>-ledger.svg"),
    config: Optional[Path] = ConfigOpt,
):
    """Cover, iterate collar/rotation/flow rounds per element and glue the results."""
    cfg = _config(
        config,
        angle=angle,
        generator=set_name,
        depth=depth,
        input=input_path,
        steps=steps,
        epsilon=epsilon,
        rho=rho,
        trials=trials,
        delta=delta,
        grid_h=grid_h,
        sigma=sigma,
        flow_steps=flow_steps,
        seed=seed,
        ledger=ledger,
        summary=summary,
        svg=svg,
    )
    run, _ = get_services().iterate(cfg)
    table = Table(title=f"Ledger ({run.generator}, depth {run.depth}, N={run.steps})")
    for col in ("element", "step", "mu", "collar mass", "image measure", "step dist", "cum dist"):
        table.add_column(col)
    for el in run.elements:
        for row in el.ledger:
            mu_text = "-" if row.mu is None else f"{row.mu:.4g}"
            table.add_row(
                str(el.index),
                str(row.step),
                mu_text,
                f"{row.collar_mass:.4g}",
                f"{row.image_measure:.4g}",
                f"{row.step_distance:.3g}",
                f"{row.cum_distance:.3g}",
            )
    console.print(table)
    if run.glue is not None:
        console.print(f"gluing: {run.glue.elements} elements, min gap {run.glue.min_gap}, ok={run.glue.ok}")


def main():
    app()


if __name__ == "__main__":
    main()
