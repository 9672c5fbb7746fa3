# clusterlab/cli.py
"""
Command-line runner.

    clusterlab run --config experiment.yaml [--seed N] [--replicas N] [--threads N] [--out DIR]

`run` executes whatever the config's `test:` section names; every other
subcommand does the same but first checks that the section belongs to it
(`laplace-check` accepts laplace-check and marked-laplace-check, and so on).

Exit codes: 0 all checks passed, 1 config or modelling error, 2 a check
failed (|z| > 3 or a rejected KS test). Records go to <out>/results.jsonl and
to stdout; logs go to stderr.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Any, Callable, Optional

import numpy as np
import structlog
import typer

from .budget import Budget, DrawBudgetExceeded, DrawTracker
from .calculus import (
    RouteUnavailableError,
    dirichlet_form_check,
    ibp_test,
    ibp_test_general,
    qi_test,
)
from .centres import IntensityBoundError, sample_centres
from .clusters import DensityUnavailableError, DimensionMismatchError
from .config import (
    ConfigError,
    CorrTest,
    DirichletTest,
    DropletTest,
    DynamicsTest,
    ExperimentConfig,
    IbpGeneralTest,
    IbpTest,
    LaplaceTest,
    MarkedLaplaceTest,
    MomentTest,
    OuVarianceTest,
    PairCorrelationTest,
    PropernessTest,
    QiTest,
    ReversibilityTest,
    SampleTest,
    VarpiTest,
    config_hash,
    load_config,
    with_overrides,
)
from .droplet import condition_probe, sigma_bar_check
from .dynamics import DynamicsConfig, StabilityError, ou_variance_check, reversibility_check, stationarity_test
from .factory import (
    build_cylinder,
    build_diffeomorphism,
    build_field,
    build_model,
    build_region,
    build_test_function,
)
from .geometry import GeometryError
from .guard import draw_guard
from .output import ResultWriter, dumps_record, write_points_csv, write_timeseries_csv
from .process import (
    ClusterProcessModel,
    properness_report,
    sample_marked_replicas,
    sample_replicas,
    track_draws,
    varpi_check,
)
from .replicas import run_replicas
from .stats import (
    EstimatorError,
    IndicatorProduct,
    cluster_laplace_theoretical,
    comparison_record,
    correlation_identity_check,
    empirical_laplace,
    lyapunov_holds,
    marked_laplace_check,
    moment_class_check,
    pair_correlation,
)
from .telemetry import init_logging, init_tracing

log = structlog.get_logger(__name__)

Z_LIMIT = 3.0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

RESULTS_FILE = "results.jsonl"
POINTS_FILE = "points.csv"
TIMESERIES_FILE = "timeseries.csv"

# Errors a well-formed config can still run into; reported with exit code 1.
MODEL_ERRORS = (
    DensityUnavailableError,
    DimensionMismatchError,
    DrawBudgetExceeded,
    EstimatorError,
    GeometryError,
    IntensityBoundError,
    RouteUnavailableError,
    StabilityError,
    ValueError,
)

app = typer.Typer(
    name="clusterlab",
    help="Simulate cluster point processes and run their statistical checks.",
    no_args_is_help=True,
    add_completion=False,
)

ConfigOpt = Annotated[Path, typer.Option("--config", "-c", help="Experiment file (YAML).")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Override the config seed (unsigned 64-bit).")]
ReplicasOpt = Annotated[Optional[int], typer.Option("--replicas", help="Override the replica count.")]
ThreadsOpt = Annotated[Optional[int], typer.Option("--threads", help="Worker threads for replicas.")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", help="Output directory.")]


# --- Pass / fail ---------------------------------------------------------------

def record_failed(record: dict[str, Any]) -> bool:
    z = record.get("z")
    if z is not None and (not math.isfinite(z) or abs(z) > Z_LIMIT):
        return True
    return record.get("passed") is False


# --- Operations ------------------------------------------------------------------

Runner = Callable[[ExperimentConfig, ClusterProcessModel, np.random.Generator, DrawTracker, Path], list[dict]]


def _run_sample(cfg, model, rng, tracker, out):
    test: SampleTest = cfg.test
    samples = sample_replicas(model, rng, cfg.replicas, cfg.threads, tracker, test.pipeline)
    blocks = [model.geometry.to_chart(s.points) for s in samples if len(s)]
    points = np.vstack(blocks) if blocks else np.zeros((0, model.geometry.chart_dim))
    marks = np.concatenate([np.full(len(s), i) for i, s in enumerate(samples)]) if samples else np.zeros(0)
    write_points_csv(out / POINTS_FILE, points, marks)
    counts = np.array([len(s) for s in samples], dtype=float)
    return [
        {
            "pipeline": test.pipeline,
            "replicas": cfg.replicas,
            "mean_points": float(counts.mean()),
            "total_points": int(counts.sum()),
            "points_file": POINTS_FILE,
        }
    ]


def _run_laplace(cfg, model, rng, tracker, out):
    test: LaplaceTest = cfg.test
    f = build_test_function(test.f)
    rng_emp, rng_th = rng.spawn(2)
    samples = sample_replicas(model, rng_emp, cfg.replicas, cfg.threads, tracker)
    empirical = empirical_laplace(samples, f)
    theoretical = cluster_laplace_theoretical(model, f, rng_th, test.n_outer, test.n_inner)
    return [comparison_record(empirical, theoretical)]


def _tracked_centres(model, rng, tracker):
    centres = sample_centres(model.centres, rng, window=model.plus_window)
    track_draws(tracker, len(centres), "centres")
    return centres


def _run_marked_laplace(cfg, model, rng, tracker, out):
    test: MarkedLaplaceTest = cfg.test
    f = build_test_function(test.f)
    rng_marked, rng_centres, rng_inner = rng.spawn(3)
    marked = sample_marked_replicas(model, rng_marked, cfg.replicas, cfg.threads, tracker)
    centres = run_replicas(
        lambda r: _tracked_centres(model, r, tracker),
        rng_centres,
        cfg.replicas,
        cfg.threads,
        "sample_centres",
    )
    return [marked_laplace_check(marked, centres, model.kernel, f, rng_inner, test.n_inner)]


def _run_varpi(cfg, model, rng, tracker, out):
    test: VarpiTest = cfg.test
    return [varpi_check(model, build_test_function(test.f), rng, cfg.replicas, cfg.threads, test.alpha, tracker)]


def _run_droplet(cfg, model, rng, tracker, out):
    test: DropletTest = cfg.test
    shape = build_region(test.shape)
    rng_check, rng_probe = rng.spawn(2)
    check = sigma_bar_check(model, shape, rng_check, test.n_mc, test.n_outer, test.n_inner, tracker)
    probe = condition_probe(model, shape, rng_probe, test.probe_samples, test.n_inner, tracker)
    return [{**check, "kind": "sigma_bar"}, {**probe, "kind": "condition_probe"}]


def _run_qi(cfg, model, rng, tracker, out):
    test: QiTest = cfg.test
    phi = build_diffeomorphism(test.flows)
    return [qi_test(model, phi, build_cylinder(test.F), rng, cfg.replicas, cfg.threads, tracker)]


def _run_ibp(cfg, model, rng, tracker, out):
    test: IbpTest = cfg.test
    return [ibp_test(model, build_cylinder(test.F), build_field(test.field), rng, cfg.replicas, cfg.threads, tracker)]


def _run_ibp_general(cfg, model, rng, tracker, out):
    test: IbpGeneralTest = cfg.test
    terms = [(build_cylinder(t.G), build_field(t.field)) for t in test.terms]
    return [
        ibp_test_general(
            model, build_cylinder(test.F1), build_cylinder(test.F2), terms, rng, cfg.replicas, cfg.threads, tracker
        )
    ]


def _run_dirichlet(cfg, model, rng, tracker, out):
    test: DirichletTest = cfg.test
    return [
        dirichlet_form_check(
            model, build_cylinder(test.F1), build_cylinder(test.F2), rng, cfg.replicas, cfg.threads, tracker
        )
    ]


def _run_corr(cfg, model, rng, tracker, out):
    test: CorrTest = cfg.test
    phi = IndicatorProduct(tuple(build_region(r) for r in test.regions))
    rng_samples, rng_mc = rng.spawn(2)
    samples = sample_replicas(model, rng_samples, cfg.replicas, cfg.threads, tracker)
    reference = model.reference if test.use_reference else None
    record = correlation_identity_check(samples, phi, test.order, rng_mc, reference, n_mc=test.n_mc)
    return [{**record, "order": test.order}]


def _run_moments(cfg, model, rng, tracker, out):
    test: MomentTest = cfg.test
    f = build_test_function(test.f)
    samples = sample_replicas(model, rng, cfg.replicas, cfg.threads, tracker)
    records = moment_class_check(samples, f, test.max_order)
    holds = lyapunov_holds(samples, f, test.lyapunov_r, test.lyapunov_delta)
    records.append({"kind": "lyapunov", "r": test.lyapunov_r, "delta": test.lyapunov_delta, "passed": holds})
    return records


def _run_pair_correlation(cfg, model, rng, tracker, out):
    test: PairCorrelationTest = cfg.test
    samples = sample_replicas(model, rng, cfg.replicas, cfg.threads, tracker)
    g = pair_correlation(samples, np.asarray(test.r_values), test.bandwidth)
    return [{"r": list(test.r_values), "g": g.tolist(), "bandwidth": test.bandwidth, "n": cfg.replicas}]


def _run_dynamics(cfg, model, rng, tracker, out):
    test: DynamicsTest = cfg.test
    dyn = DynamicsConfig(test.time_step, test.n_steps, model.window, test.stride)
    record = stationarity_test(model, dyn, build_test_function(test.f), rng, cfg.replicas, cfg.threads, tracker)
    write_timeseries_csv(out / TIMESERIES_FILE, record.pop("times"), record.pop("mean"), record.pop("se"))
    return [{**record, "timeseries_file": TIMESERIES_FILE}]


def _run_ou_variance(cfg, model, rng, tracker, out):
    test: OuVarianceTest = cfg.test
    dyn = DynamicsConfig(test.time_step, test.n_steps, model.window)
    return [ou_variance_check(model.kernel, dyn, rng, cfg.replicas, test.method, tracker)]


def _run_reversibility(cfg, model, rng, tracker, out):
    test: ReversibilityTest = cfg.test
    dyn = DynamicsConfig(test.time_step, test.n_steps, model.window)
    F1, F2 = build_cylinder(test.F1), build_cylinder(test.F2)
    return [reversibility_check(model, dyn, F1, F2, rng, cfg.replicas, cfg.threads, tracker)]


def _run_properness(cfg, model, rng, tracker, out):
    test: PropernessTest = cfg.test
    report = properness_report(model, rng, cfg.replicas, build_region(test.region), cfg.threads, test.bins, tracker)
    return [report.to_record()]


RUNNERS: dict[str, Runner] = {
    "sample": _run_sample,
    "laplace-check": _run_laplace,
    "marked-laplace-check": _run_marked_laplace,
    "varpi-check": _run_varpi,
    "droplet-check": _run_droplet,
    "qi-check": _run_qi,
    "ibp-check": _run_ibp,
    "ibp-general-check": _run_ibp_general,
    "dirichlet-check": _run_dirichlet,
    "corr-check": _run_corr,
    "moment-check": _run_moments,
    "pair-correlation": _run_pair_correlation,
    "dynamics": _run_dynamics,
    "ou-variance-check": _run_ou_variance,
    "reversibility-check": _run_reversibility,
    "properness": _run_properness,
}

SUBCOMMANDS: dict[str, tuple[str, ...]] = {
    "sample": ("sample",),
    "laplace-check": ("laplace-check", "marked-laplace-check"),
    "varpi-check": ("varpi-check",),
    "droplet-check": ("droplet-check",),
    "qi-check": ("qi-check",),
    "ibp-check": ("ibp-check", "ibp-general-check", "dirichlet-check"),
    "corr-check": ("corr-check", "moment-check", "pair-correlation"),
    "dynamics": ("dynamics", "ou-variance-check", "reversibility-check"),
    "properness": ("properness",),
}


def execute(cfg: ExperimentConfig, base_dir: Path | None = None) -> list[dict[str, Any]]:
    """Build the model, run the configured operation and write its outputs. Returns the stamped records."""
    operation = cfg.test.operation
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    writer = ResultWriter(out / RESULTS_FILE, config_hash(cfg), cfg.seed)
    model = build_model(cfg, base_dir)
    rng = np.random.default_rng(cfg.seed)
    budget = Budget(cfg.budget.max_points, cfg.budget.warn_threshold_pct, cfg.budget.enforce_mode)
    structlog.contextvars.bind_contextvars(operation=operation, seed=cfg.seed)
    try:
        with draw_guard(budget) as tracker:
            log.info("operation_started", replicas=cfg.replicas, threads=cfg.threads)
            records = RUNNERS[operation](cfg, model, rng, tracker, out)
        return [writer.write({**r, "operation": operation}) for r in records]
    finally:
        structlog.contextvars.unbind_contextvars("operation", "seed")


def _main(
    command: str,
    accepted: tuple[str, ...] | None,
    config: Path,
    seed: int | None,
    replicas: int | None,
    threads: int | None,
    out: Path | None,
) -> None:
    try:
        cfg = with_overrides(load_config(config), seed, replicas, threads, str(out) if out is not None else None)
    except ConfigError as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_ERROR) from exc

    telemetry = cfg.telemetry
    init_logging(telemetry.log_level, telemetry.json_logs)
    init_tracing(
        telemetry.exporter,
        telemetry.service_name,
        telemetry.endpoint or "http://localhost:4318",
        telemetry.headers,
    )

    if accepted is not None and cfg.test.operation not in accepted:
        typer.echo(
            f"error: {config}: test.operation: '{command}' cannot run '{cfg.test.operation}' "
            f"(accepted: {', '.join(accepted)})",
            err=True,
        )
        raise typer.Exit(EXIT_ERROR)

    try:
        records = execute(cfg, config.parent)
    except ConfigError as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_ERROR) from exc
    except MODEL_ERRORS as exc:
        log.error("operation_failed", error=type(exc).__name__, detail=str(exc))
        typer.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        raise typer.Exit(EXIT_ERROR) from exc

    failed = [r for r in records if record_failed(r)]
    for record in records:
        typer.echo(dumps_record(record))
    if failed:
        for record in failed:
            typer.echo(f"check failed: {dumps_record(record)}", err=True)
        raise typer.Exit(EXIT_CHECK_FAILED)


@app.command("run", help="Run the operation named in the config's test section.")
def run(
    config: ConfigOpt,
    seed: SeedOpt = None,
    replicas: ReplicasOpt = None,
    threads: ThreadsOpt = None,
    out: OutOpt = None,
) -> None:
    _main("run", None, config, seed, replicas, threads, out)


def _register(name: str, accepted: tuple[str, ...]) -> None:
    def command(
        config: ConfigOpt,
        seed: SeedOpt = None,
        replicas: ReplicasOpt = None,
        threads: ThreadsOpt = None,
        out: OutOpt = None,
    ) -> None:
        _main(name, accepted, config, seed, replicas, threads, out)

    app.command(name, help=f"Run a config whose test.operation is one of: {', '.join(accepted)}.")(command)


for _name, _accepted in SUBCOMMANDS.items():
    _register(_name, _accepted)


def main() -> None:
    app()
