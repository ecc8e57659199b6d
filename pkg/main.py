import os
import sys

import click
import setproctitle
from loguru import logger

import utils.functions as helpers
from utils import APPLICATION_NAME, Colors, ConfigError, MicroelastError


def _load(ctx: click.Context, config_path: str, **overrides):
    from utils.config import load_config

    config = load_config(config_path, overrides)
    helpers.configure_threads(config.threads)
    ctx.obj = config
    return config


def _out_dir(config, out: str | None, name: str) -> str:
    directory = out or os.path.join(config.output_dir, name)
    helpers.ensure_directory(directory)
    return directory


config_option = click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Experiment file (JSON or TOML).")
seed_option = click.option("--seed", type=int, default=None, help="Override the experiment seed.")
out_option = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
threads_option = click.option("--threads", type=int, default=None, help="Torch intra-op threads.")
format_option = click.option("--format", "fmt", type=click.Choice(["csv", "vtk"]), default=None, help="Field export format.")


@click.group()
def cli():
    """Physics-informed neural network solver for 2D linear-elastic unit cells."""
    helpers.configure_logging()


@cli.command()
@config_option
@seed_option
@out_option
@threads_option
@format_option
@click.pass_context
def solve(ctx, config_path, seed, out, threads, fmt):
    """Train one model and write its report, fields, history and parameters."""
    setproctitle.setproctitle(f"{APPLICATION_NAME}:solve")
    from modules.experiment import run_solve, write_outputs

    config = _load(ctx, config_path, seed=seed, threads=threads, format=fmt)
    result = run_solve(config)
    summary = write_outputs(config, result, _out_dir(config, out, config.problem))
    logger.info(f"{Colors.OKGREEN}[Main] Summary written to {summary}{Colors.RESET}")


@cli.group()
def study():
    """Convergence and domain-split studies."""


def _run_study(ctx, kind: str, config_path, seed, out, threads):
    setproctitle.setproctitle(f"{APPLICATION_NAME}:study-{kind}")
    from modules.studies import convergence_study, split_study
    from utils.export import write_study_csv

    config = _load(ctx, config_path, seed=seed, threads=threads)
    result = convergence_study(config) if kind == "convergence" else split_study(config)
    path = os.path.join(_out_dir(config, out, f"study_{kind}"), f"{kind}.csv")
    write_study_csv(path, result)
    if result.failures:
        logger.warning(f"{Colors.WARNING}[Main] {len(result.failures)} study runs failed{Colors.RESET}")


@study.command()
@config_option
@seed_option
@out_option
@threads_option
@click.pass_context
def convergence(ctx, config_path, seed, out, threads):
    """Mean residual per method and collocation budget."""
    _run_study(ctx, "convergence", config_path, seed, out, threads)


@study.command()
@config_option
@seed_option
@out_option
@threads_option
@click.pass_context
def split(ctx, config_path, seed, out, threads):
    """Mean residual per N x N domain split."""
    _run_study(ctx, "split", config_path, seed, out, threads)


@cli.command("material-fit")
@config_option
@seed_option
@out_option
@threads_option
@click.pass_context
def material_fit(ctx, config_path, seed, out, threads):
    """Fit the material network to a voxel image and store it."""
    setproctitle.setproctitle(f"{APPLICATION_NAME}:material-fit")
    from modules.experiment import build_material
    from services.material import NetworkMaterial, classification_accuracy
    from utils.export import Snapshot, save_snapshot, write_history_csv
    from utils.imaging import write_pgm

    config = _load(ctx, config_path, seed=seed, threads=threads)
    if config.problem != "voxel":
        raise ConfigError("problem", "material-fit needs a 'voxel' problem")
    setup = build_material(config)
    directory = _out_dir(config, out, "material")
    network: NetworkMaterial = setup.field
    save_snapshot(os.path.join(directory, "material.bin"), Snapshot(network.topology, 1, 1, config.length, network.params))
    write_history_csv(os.path.join(directory, "history.csv"), setup.history)
    write_pgm(os.path.join(directory, "microstructure.pgm"), setup.grid)
    accuracy = classification_accuracy(network, setup.grid)
    logger.info(f"{Colors.OKGREEN}[Main] Material network accuracy {accuracy:.2%}{Colors.RESET}")


@cli.command()
@config_option
@click.option("--run", "run_dir", required=True, type=click.Path(file_okay=False, exists=True), help="Directory of a finished solve.")
@format_option
@threads_option
@click.pass_context
def export(ctx, config_path, run_dir, fmt, threads):
    """Re-evaluate a stored run and export its fields."""
    setproctitle.setproctitle(f"{APPLICATION_NAME}:export")
    from modules.experiment import run_export

    config = _load(ctx, config_path, threads=threads)
    run_export(config, run_dir, fmt)


def run(argv: list[str] | None = None) -> int:
    """Run the CLI and map faults to exit codes: 2 for config errors, 1 for other faults."""
    try:
        cli.main(args=argv, prog_name=APPLICATION_NAME, standalone_mode=False)
    except ConfigError as e:
        click.echo(f"{Colors.ERROR}Configuration error: {e}{Colors.RESET}", err=True)
        return 2
    except MicroelastError as e:
        click.echo(f"{Colors.ERROR}{type(e).__name__}: {e}{Colors.RESET}", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except ValueError as e:
        logger.opt(exception=e).debug("[Main] Unhandled value error")
        click.echo(f"{Colors.ERROR}Invalid value: {e}{Colors.RESET}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
