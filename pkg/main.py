"""
main.py
Punto de entrada principal de ARCO (operación continua de arreglos de átomos).
Define los subcomandos predict, simulate, plan y analyze.
"""

import sys
from typing import Dict, Optional

import click

from controllers import cli_controller
from services.config_service import dump_default_config, load_config
from utils.errors import ArcoError
from views.console_view import show_error


def _overrides(seed: Optional[int] = None, replicas: Optional[int] = None, out: Optional[str] = None,
               fmt: Optional[str] = None, **loss) -> Dict[str, dict]:
    cambios: Dict[str, dict] = {}
    if seed is not None:
        cambios.setdefault("simulation", {})["rng_seed"] = seed
    if replicas is not None:
        cambios.setdefault("simulation", {})["n_replicas"] = replicas
    if out is not None:
        cambios.setdefault("output", {})["out_dir"] = out
    if fmt is not None:
        cambios.setdefault("output", {})["format"] = fmt
    for clave, valor in loss.items():
        if valor is not None:
            cambios.setdefault("loss", {})[clave] = valor
    return cambios


def _configuration(config_path, **overrides):
    try:
        return load_config(config_path, _overrides(**overrides))
    except ArcoError as e:
        show_error(str(e))
        sys.exit(e.exit_code)


def _finish(funcion, *args, **kwargs) -> None:
    sys.exit(cli_controller.run_command(funcion, *args, **kwargs))


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                             help="Archivo YAML de parámetros")
out_option = click.option("--out", type=click.Path(file_okay=False), default=None, help="Directorio de salida")


@click.group()
def cli():
    """ARCO: operación continua de un arreglo de átomos con recarga y reordenamiento."""


@cli.command()
@config_option
@out_option
@click.option("--alpha-r", type=float, default=None, help="Pérdida de reordenamiento α_r")
@click.option("--alpha-c", type=float, default=None, help="Pérdida por ciclo α_c")
@click.option("--n-load", type=float, default=None, help="Átomos cargados por ciclo N_L")
def predict(config_path, out, alpha_r, alpha_c, n_load):
    """Factor de amplificación, estado estacionario y acumulación determinista."""
    config = _configuration(config_path, alpha_r=alpha_r, alpha_c=alpha_c, n_load=n_load)
    _finish(cli_controller.cmd_predict, config, out_dir=out)


@cli.command()
@config_option
@out_option
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Semilla (entero de 64 bits)")
@click.option("--replicas", type=click.IntRange(min=1), default=None, help="Número de réplicas")
@click.option("--format", "fmt", type=click.Choice(["table", "grid"]), default=None,
              help="table: solo trazas; grid: trazas y grillas de imágenes")
@click.option("--write-default-config", type=click.Path(dir_okay=False), default=None,
              help="Escribe el archivo de parámetros por defecto y termina")
def simulate(config_path, out, seed, replicas, fmt, write_default_config):
    """Simulación Monte Carlo del ciclo continuo."""
    if write_default_config:
        _finish(dump_default_config, write_default_config)
    config = _configuration(config_path, seed=seed, replicas=replicas, out=out, fmt=fmt)
    _finish(cli_controller.cmd_simulate, config)


@cli.command()
@config_option
@out_option
@click.option("--trajectories", is_flag=True, help="Escribe la trayectoria muestreada de cada movimiento")
@click.argument("occupancy_files", nargs=-1, required=True, type=click.Path(dir_okay=False))
def plan(config_path, out, trajectories, occupancy_files):
    """Plan de reordenamiento a partir de grillas de ocupación 0/1."""
    config = _configuration(config_path)
    _finish(cli_controller.cmd_plan, config, list(occupancy_files), out_dir=out, trajectories=trajectories)


@cli.command()
@out_option
@click.option("--decay-window", default=None, help="Ventana A:B (semiabierta) para el ajuste del decaimiento")
@click.argument("trace_files", nargs=-1, required=True, type=click.Path(dir_okay=False))
def analyze(out, decay_window, trace_files):
    """Fracciones, correlaciones, ajuste del decaimiento y superposición del modelo."""
    def _analizar():
        ventana = cli_controller.parse_window(decay_window)
        cli_controller.cmd_analyze(list(trace_files), out or "analysis", decay_window=ventana)

    _finish(_analizar)


if __name__ == "__main__":
    cli()
