"""CLI interface for projive.

Batch front end over the library: fit block files or simulated datasets,
generate simulation studies, score recovery and select ranks. Every command
writes a manifest.json (version, seed, config hash) next to its outputs.

Usage:
    projive simulate -c study.yaml -o sims/
    projive fit --data-dir sims/ -o fits/
    projive evaluate --truth-dir sims/ --fit-dir fits/ -o report/
    projive select-rank --block x1.csv --block x2.csv --total-ranks 3,3
    projive init-config -o study.yaml
    projive validate study.yaml

Exit codes: 0 success, 1 error, 2 a fit stopped at max_iters.
"""

from __future__ import annotations

import logging
import sys
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, TypeVar

import numpy as np
import pandas as pd
import typer
import yaml
from joblib import Parallel, delayed
from pydantic import BaseModel
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from projive import __version__
from projive.core.config import RunConfig, load_config, save_config
from projive.core.data import BlockRanks, FloatArray, MultiBlockData, NoiseModel
from projive.core.errors import ProjiveError
from projive.core.events import EventType, get_event_bus, log_fit_events
from projive.core.io import config_hash, read_blocks, read_covariates, read_json, write_frame, write_json
from projive.model.em import fit_starts
from projive.model.initialization import InitMethod, strategies_from_name
from projive.model.storage import SUMMARY_FILE, save_fit
from projive.simulation.feng import generate_feng
from projive.simulation.scenarios import SimScenario, SimTruth, factorial_grid, generate, replicate_seed
from projive.simulation.storage import TRUTH_FILE, block_paths, discover_truth_dirs, load_truth, save_truth
from projive.stats.metrics import FittedComponents, compare_components, recovery_rows, summarize_recovery
from projive.stats.preprocess import center_and_scale, preprocess
from projive.stats.rank_select import eigen_spectrum, ic_grid, permutation_joint_rank, spectrum_frame

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="projive",
    help="Probabilistic joint and individual variation explained for multi-block data.",
    add_completion=False,
    no_args_is_help=True,
)
console = Console(soft_wrap=True)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

#: Failures reported as exit code 1 rather than a traceback.
USER_ERRORS = (ProjiveError, ValueError, OSError, KeyError)

#: Scenario design factors carried into evaluate rows and summaries.
DESIGN_COLUMNS = ("r_j", "p2", "r2_j1", "r2_j2", "distribution")

M = TypeVar("M", bound=BaseModel)


# =============================================================================
# Shared plumbing
# =============================================================================


def _fail(message: str) -> typer.Exit:
    console.print(f"[red]Error:[/] {escape(message)}")
    return typer.Exit(EXIT_ERROR)


def _override(model: M, **updates: Any) -> M:
    """Copy of a config section with non-None updates applied and re-validated."""
    changes = {k: v for k, v in updates.items() if v is not None}
    if not changes:
        return model
    return type(model).model_validate({**model.model_dump(), **changes})


def _load(config_path: Path | None, seed: int | None, out: Path | None, n_jobs: int | None) -> RunConfig:
    try:
        config = load_config(config_path) if config_path is not None else RunConfig()
        return _override(config, seed=seed, out=str(out) if out is not None else None, n_jobs=n_jobs)
    except FileNotFoundError:
        raise _fail(f"Config file not found: {config_path}") from None
    except (ValueError, yaml.YAMLError) as e:
        raise _fail(f"Invalid configuration: {e}") from None


def _manifest(command: str, config: RunConfig) -> dict[str, Any]:
    payload = config.model_dump(mode="json")
    return {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config_hash": config_hash(payload),
        "config": payload,
    }


def _truth_ranks(directory: Path) -> tuple[int, BlockRanks]:
    """Block count and generating ranks recorded in truth.json."""
    manifest = read_json(directory / TRUTH_FILE)
    return int(manifest["n_blocks"]), BlockRanks.parse(str(manifest["ranks"]))


def _read_input(blocks: list[str], data_dir: str | None) -> tuple[MultiBlockData, BlockRanks | None]:
    """Data from block files, or from one truth directory with its ranks."""
    if data_dir is not None:
        directory = Path(data_dir)
        n_blocks, ranks = _truth_ranks(directory)
        return read_blocks(block_paths(directory, n_blocks)), ranks
    if not blocks:
        msg = "No input: give block files (--block) or a data directory (--data-dir)"
        raise ValueError(msg)
    return read_blocks(blocks), None


def _run_tasks(function: Callable[..., Any], tasks: list[tuple[Any, ...]], n_jobs: int) -> list[Any]:
    return list(Parallel(n_jobs=n_jobs)(delayed(function)(*task) for task in tasks))


@app.callback()
def root(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log progress to the console")] = False,
) -> None:
    """Probabilistic joint and individual variation explained for multi-block data."""
    if verbose:
        logging.basicConfig(
            level=logging.INFO,
            format="%(message)s",
            handlers=[RichHandler(console=console, show_path=False)],
            force=True,
        )
        log_fit_events()


ConfigOption = Annotated[Path | None, typer.Option("--config", "-c", help="YAML or JSON run configuration")]
SeedOption = Annotated[int | None, typer.Option("--seed", help="Root seed (overrides the config)")]
OutOption = Annotated[Path | None, typer.Option("--out", "-o", help="Output directory")]
JobsOption = Annotated[int | None, typer.Option("--n-jobs", help="Parallel workers")]


# =============================================================================
# fit
# =============================================================================


@dataclass(frozen=True)
class _FitOutcome:
    path: str
    exit_code: int
    loglik: float = float("nan")
    iterations: int = 0
    error: str = ""


def _fit_one(
    config: RunConfig,
    data: MultiBlockData,
    ranks: BlockRanks,
    covariates: FloatArray | None,
    out_dir: Path,
) -> _FitOutcome:
    cfg = config.fit
    if covariates is not None:
        data = preprocess(data, covariates, scale=cfg.scale)[0]
    elif cfg.center:
        data = center_and_scale(data, scale=cfg.scale)[0]
    result = fit_starts(
        data,
        ranks,
        strategies_from_name(cfg.init, config.seed),
        cfg.noise,
        cfg.tol,
        cfg.max_iters,
        source=str(out_dir),
    )
    save_fit(result, data, out_dir, _manifest("fit", config))
    return _FitOutcome(
        path=str(out_dir),
        exit_code=EXIT_OK if result.converged else EXIT_NOT_CONVERGED,
        loglik=result.final_loglik,
        iterations=result.iterations,
    )


def _fit_truth_dir(config: RunConfig, directory: Path, root_dir: Path) -> _FitOutcome:
    relative = directory.relative_to(root_dir)
    out_dir = Path(config.out) / relative
    try:
        n_blocks, truth_ranks = _truth_ranks(directory)
        ranks = BlockRanks.parse(config.fit.ranks) if config.fit.ranks else truth_ranks
        data = read_blocks(block_paths(directory, n_blocks))
        return _fit_one(config, data, ranks, None, out_dir)
    except USER_ERRORS as e:
        logger.warning("Fit of %s failed: %s", directory, e)
        return _FitOutcome(path=str(out_dir), exit_code=EXIT_ERROR, error=str(e))


@app.command()
def fit(
    config_path: ConfigOption = None,
    block: Annotated[list[Path] | None, typer.Option("--block", "-b", help="Block CSV (repeat per block)")] = None,
    data_dir: Annotated[Path | None, typer.Option("--data-dir", help="Truth directory or a root of many")] = None,
    covariates: Annotated[Path | None, typer.Option("--covariates", help="Covariates to regress out")] = None,
    ranks: Annotated[str | None, typer.Option("--ranks", "-r", help="rJ:rI1,rI2,...")] = None,
    noise: Annotated[NoiseModel | None, typer.Option("--noise", help="Noise model")] = None,
    init: Annotated[
        InitMethod | None, typer.Option("--init", help="Starting values; all keeps the better of cholesky and random")
    ] = None,
    tol: Annotated[float | None, typer.Option("--tol", help="Relative log-likelihood tolerance")] = None,
    max_iters: Annotated[int | None, typer.Option("--max-iters", help="EM iteration cap")] = None,
    seed: SeedOption = None,
    out: OutOption = None,
    n_jobs: JobsOption = None,
) -> None:
    """Fit ProJIVE to block files or to simulated datasets."""
    config = _load(config_path, seed, out, n_jobs)
    try:
        cfg = _override(
            config.fit,
            blocks=[str(p) for p in block] if block else None,
            data_dir=str(data_dir) if data_dir is not None else None,
            covariates=str(covariates) if covariates is not None else None,
            ranks=ranks,
            noise=noise,
            init=init,
            tol=tol,
            max_iters=max_iters,
        )
    except ValueError as e:
        raise _fail(f"Invalid configuration: {e}") from None
    config = config.model_copy(update={"fit": cfg})

    if cfg.data_dir is not None:
        root_dir = Path(cfg.data_dir)
        directories = discover_truth_dirs(root_dir) if root_dir.is_dir() else []
        if not directories:
            raise _fail(f"No {TRUTH_FILE} found under {root_dir}")
        outcomes = _run_tasks(_fit_truth_dir, [(config, d, root_dir) for d in directories], config.n_jobs)
    else:
        try:
            data, _ = _read_input(cfg.blocks, None)
            if cfg.ranks is None:
                msg = "Ranks are required for block files (--ranks rJ:rI1,rI2,...)"
                raise ValueError(msg)
            cov = read_covariates(cfg.covariates, data.subject_ids) if cfg.covariates else None
            outcomes = [_fit_one(config, data, BlockRanks.parse(cfg.ranks), cov, Path(config.out))]
        except USER_ERRORS as e:
            raise _fail(str(e)) from None

    table = Table(title="ProJIVE fits")
    table.add_column("Output", style="cyan")
    table.add_column("loglik", justify="right")
    table.add_column("Iterations", justify="right")
    table.add_column("Status")
    for o in outcomes:
        status = {EXIT_OK: "[green]converged[/]", EXIT_NOT_CONVERGED: "[yellow]max_iters[/]"}.get(
            o.exit_code, f"[red]error:[/] {escape(o.error)}"
        )
        table.add_row(escape(o.path), f"{o.loglik:.6f}", str(o.iterations), status)
    console.print(table)

    codes = {o.exit_code for o in outcomes}
    if EXIT_ERROR in codes:
        raise typer.Exit(EXIT_ERROR)
    if EXIT_NOT_CONVERGED in codes:
        raise typer.Exit(EXIT_NOT_CONVERGED)


# =============================================================================
# simulate
# =============================================================================


def _simulate_task(
    label: str,
    replicate: int,
    seed: int,
    make: Callable[[int], SimTruth],
    out_dir: Path,
) -> dict[str, Any]:
    row: dict[str, Any] = {"scenario": label, "replicate": replicate, "seed": seed, "path": out_dir.as_posix()}
    try:
        save_truth(make(seed), out_dir)
    except ProjiveError as e:
        logger.warning("Cell %s replicate %d failed: %s", label, replicate, e)
        return {**row, "status": "failed", "error": str(e)}
    return {**row, "status": "ok", "error": ""}


def _scenario_maker(scenario: SimScenario) -> Callable[[int], SimTruth]:
    def make(seed: int) -> SimTruth:
        return generate(scenario.with_seed(seed))

    return make


@app.command()
def simulate(
    config_path: ConfigOption = None,
    grid: Annotated[str | None, typer.Option("--grid", help="scenarios, factorial or feng")] = None,
    replicates: Annotated[int | None, typer.Option("--replicates", "-n", help="Datasets per cell")] = None,
    seed: SeedOption = None,
    out: OutOption = None,
    n_jobs: JobsOption = None,
) -> None:
    """Generate simulated datasets, one truth directory per cell and replicate."""
    config = _load(config_path, seed, out, n_jobs)
    try:
        cfg = _override(config.simulate, grid=grid, replicates=replicates)
    except ValueError as e:
        raise _fail(f"Invalid configuration: {e}") from None
    config = config.model_copy(update={"simulate": cfg})
    root_dir = Path(config.out)

    cells: list[tuple[str, int, Callable[[int], SimTruth]]] = []
    if cfg.grid == "feng":
        feng = cfg.feng

        def make_feng(s: int) -> SimTruth:
            return generate_feng(feng.n, feng.p1, feng.p2, feng.noise_sd, seed=s)

        cells.append(("feng", config.seed, make_feng))
    else:
        if cfg.grid == "factorial":
            scenarios = factorial_grid(n=cfg.factorial_n, seed=config.seed)
        elif seed is not None:
            scenarios = [s.with_seed(seed) for s in cfg.scenarios]
        else:
            scenarios = list(cfg.scenarios)
        cells.extend((s.name, s.seed, _scenario_maker(s)) for s in scenarios)

    tasks = [
        (name, r, replicate_seed(base, r), make, root_dir / name / f"rep_{r:03d}")
        for name, base, make in cells
        for r in range(cfg.replicates)
    ]
    rows = _run_tasks(_simulate_task, tasks, config.n_jobs)

    bus = get_event_bus()
    failed = [row for row in rows if row["status"] != "ok"]
    for row in failed:
        bus.emit_simple(EventType.SIM_CELL_FAILED, source="simulate", message=row["error"], scenario=row["scenario"])
    write_frame(root_dir / "simulate_report.csv", pd.DataFrame(rows), index=False)
    write_json(root_dir / "manifest.json", _manifest("simulate", config))

    console.print(f"[green]Simulated:[/] {len(rows) - len(failed)} datasets in {escape(str(root_dir))}")
    for row in failed:
        console.print(
            f"[yellow]Failed:[/] {escape(row['scenario'])} replicate {row['replicate']}: {escape(row['error'])}"
        )
    if rows and len(failed) == len(rows):
        raise typer.Exit(EXIT_ERROR)


# =============================================================================
# evaluate
# =============================================================================


def _components(directory: Path) -> FittedComponents:
    """Fitted components of a fit directory, or true ones of a truth directory."""
    if (directory / SUMMARY_FILE).exists():
        return FittedComponents.from_directory(directory)
    return FittedComponents.from_truth(load_truth(directory))


def _evaluate_dir(truth_dir: Path, truth_root: Path, fit_root: Path, method: str) -> list[dict[str, Any]]:
    relative = truth_dir.relative_to(truth_root)
    manifest = read_json(truth_dir / TRUTH_FILE)
    scenario = manifest.get("scenario")
    design = SimScenario.model_validate(scenario).labels() if scenario else {"scenario": manifest.get("label", "")}
    labels = {**design, "path": relative.as_posix(), "method": method}
    try:
        truth = FittedComponents.from_truth(load_truth(truth_dir))
        report = compare_components(_components(fit_root / relative), truth)
    except USER_ERRORS as e:
        return [{**labels, "metric": "", "value": np.nan, "error": str(e)}]
    return [{**row, "error": ""} for row in recovery_rows(report, labels)]


@app.command()
def evaluate(
    config_path: ConfigOption = None,
    truth_dir: Annotated[Path | None, typer.Option("--truth-dir", help="Root of truth directories")] = None,
    fit_dir: Annotated[Path | None, typer.Option("--fit-dir", help="Root of fit outputs")] = None,
    method: Annotated[str | None, typer.Option("--method", help="Label of the fits")] = None,
    seed: SeedOption = None,
    out: OutOption = None,
    n_jobs: JobsOption = None,
) -> None:
    """Score fitted subspaces against the simulation truth."""
    config = _load(config_path, seed, out, n_jobs)
    try:
        cfg = _override(
            config.evaluate,
            truth_dir=str(truth_dir) if truth_dir is not None else None,
            fit_dir=str(fit_dir) if fit_dir is not None else None,
            method=method,
        )
    except ValueError as e:
        raise _fail(f"Invalid configuration: {e}") from None
    config = config.model_copy(update={"evaluate": cfg})
    if cfg.truth_dir is None:
        raise _fail("evaluate needs --truth-dir")
    truth_root = Path(cfg.truth_dir)
    fit_root = Path(cfg.fit_dir) if cfg.fit_dir is not None else truth_root
    directories = discover_truth_dirs(truth_root) if truth_root.is_dir() else []
    if not directories:
        raise _fail(f"No {TRUTH_FILE} found under {truth_root}")

    results = _run_tasks(_evaluate_dir, [(d, truth_root, fit_root, cfg.method) for d in directories], config.n_jobs)
    frame = pd.DataFrame([row for rows in results for row in rows])
    ok = frame[frame["error"] == ""]
    summary = summarize_recovery(ok, by=("scenario", *DESIGN_COLUMNS, "method"), digits=cfg.digits)

    out_dir = Path(config.out)
    write_frame(out_dir / "recovery.csv", frame, index=False)
    write_frame(out_dir / "recovery_summary.csv", summary, index=False)
    write_json(out_dir / "manifest.json", _manifest("evaluate", config))

    table = Table(title="Scaled chordal norm, mean (SD)")
    for column in ("scenario", "method", "metric", "summary"):
        table.add_column(column)
    for row in summary.itertuples(index=False):
        table.add_row(escape(str(row.scenario)), escape(str(row.method)), str(row.metric), str(row.summary))
    console.print(table)

    errors = frame[frame["error"] != ""]
    for row in errors.itertuples(index=False):
        console.print(f"[yellow]Skipped:[/] {escape(str(row.path))}: {escape(str(row.error))}")
    if ok.empty:
        raise typer.Exit(EXIT_ERROR)


# =============================================================================
# select-rank
# =============================================================================


def _parse_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        msg = f"--total-ranks takes two integers 'r1,r2', got {text!r}"
        raise ValueError(msg)
    return int(parts[0]), int(parts[1])


@app.command("select-rank")
def select_rank(
    config_path: ConfigOption = None,
    block: Annotated[list[Path] | None, typer.Option("--block", "-b", help="Block CSV (repeat per block)")] = None,
    data_dir: Annotated[Path | None, typer.Option("--data-dir", help="One truth directory")] = None,
    mode: Annotated[str | None, typer.Option("--mode", help="permutation, ic or both")] = None,
    total_ranks: Annotated[str | None, typer.Option("--total-ranks", help="PCA ranks 'r1,r2'")] = None,
    n_perm: Annotated[int | None, typer.Option("--n-perm", help="Permutations")] = None,
    alpha: Annotated[float | None, typer.Option("--alpha", help="Significance level")] = None,
    candidate: Annotated[list[str] | None, typer.Option("--candidate", help="IC candidate rJ:rI1,... (repeat)")] = None,
    seed: SeedOption = None,
    out: OutOption = None,
    n_jobs: JobsOption = None,
) -> None:
    """Select the joint rank by permutation test and/or information criteria."""
    config = _load(config_path, seed, out, n_jobs)
    try:
        cfg = _override(
            config.select_rank,
            blocks=[str(p) for p in block] if block else None,
            data_dir=str(data_dir) if data_dir is not None else None,
            mode=mode,
            total_ranks=_parse_pair(total_ranks) if total_ranks is not None else None,
            n_perm=n_perm,
            alpha=alpha,
            candidates=candidate,
        )
    except ValueError as e:
        raise _fail(f"Invalid configuration: {e}") from None
    config = config.model_copy(update={"select_rank": cfg})
    out_dir = Path(config.out)

    try:
        data, known_ranks = _read_input(cfg.blocks, cfg.data_dir)
        if cfg.center:
            data = center_and_scale(data, scale=False)[0]
        write_frame(out_dir / "spectrum.csv", spectrum_frame(eigen_spectrum(data)), index=False)

        if cfg.mode in ("permutation", "both"):
            pair = cfg.total_ranks
            if pair is None and known_ranks is not None and known_ranks.n_blocks == 2:
                pair = (known_ranks.block_rank(0), known_ranks.block_rank(1))
            if pair is None:
                msg = "The permutation test needs total ranks (--total-ranks r1,r2)"
                raise ValueError(msg)
            perm = permutation_joint_rank(data, pair, cfg.n_perm, cfg.alpha, config.seed, n_jobs=config.n_jobs)
            write_json(out_dir / "permutation.json", perm.to_dict())
            write_frame(out_dir / "permutation.csv", perm.to_frame(), index=False)
            console.print(f"[bold]Permutation test:[/] selected r_J = {perm.selected_r_j}")

        if cfg.mode in ("ic", "both"):
            if not cfg.candidates:
                msg = "The information-criterion grid needs candidates (--candidate rJ:rI1,rI2,...)"
                raise ValueError(msg)
            grid = ic_grid(
                data,
                [BlockRanks.parse(c) for c in cfg.candidates],
                init=config.fit.init,
                noise_model=config.fit.noise,
                tol=config.fit.tol,
                max_iters=config.fit.max_iters,
                seed=config.seed,
                n_jobs=config.n_jobs,
            )
            best = grid.best(cfg.criterion)
            write_frame(out_dir / "ic_grid.csv", grid.to_frame(), index=False)
            write_json(out_dir / "ic_best.json", {"criterion": cfg.criterion, "ranks": str(best.ranks)})
            console.print(f"[bold]Information criteria:[/] best {cfg.criterion} at ranks {best.ranks}")
    except USER_ERRORS as e:
        raise _fail(str(e)) from None

    write_json(out_dir / "manifest.json", _manifest("select-rank", config))


# =============================================================================
# Configuration files
# =============================================================================


@app.command("init-config")
def init_config(
    output: Annotated[Path, typer.Option("--output", "-o", help="Output file (.yaml or .json)")] = Path("projive.yaml"),
) -> None:
    """Write a starter configuration with every default spelled out."""
    save_config(RunConfig(), output)
    console.print(f"[green]Created:[/] {escape(str(output))}")
    console.print("\nEdit this file, then run for example:")
    console.print(f"  projive simulate -c {escape(str(output))}")


@app.command()
def validate(
    config_path: Annotated[Path, typer.Argument(help="Path to YAML or JSON configuration")],
) -> None:
    """Validate a configuration file without running anything."""
    try:
        config = load_config(config_path)
    except FileNotFoundError:
        raise _fail(f"File not found: {config_path}") from None
    except (ValueError, yaml.YAMLError) as e:
        console.print(f"[red]Invalid:[/] {escape(str(e))}")
        raise typer.Exit(EXIT_ERROR) from None
    console.print(f"[green]Valid:[/] {escape(str(config_path))}")
    console.print(f"  Seed: {config.seed}")
    console.print(f"  Output: {escape(config.out)}")
    fit_config = config.fit
    ranks = fit_config.ranks or "-"
    console.print(f"  Fit: ranks {ranks}, {fit_config.noise.value} noise, {fit_config.init.value} start")
    console.print(f"  Simulate: {config.simulate.grid} grid, {config.simulate.replicates} replicate(s)")
    console.print(f"  Select rank: {config.select_rank.mode}")


def main() -> int:
    """Application entry point.

    Returns:
        Exit code.
    """
    try:
        app()
        return EXIT_OK
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
