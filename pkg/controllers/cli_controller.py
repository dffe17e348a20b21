"""
cli_controller.py
Orquesta los comandos de la línea de comandos: conecta la configuración con
los servicios de modelo, planificación, simulación y análisis, escribe los
archivos de salida y traduce los errores a códigos de salida.
"""

import os
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import polars as pl

from services import file_manager
from services.analysis_service import (
    ImageSequence,
    correlation_report,
    correlation_table,
    counts_overlay_table,
    ensemble_band,
    fit_decay,
    fraction_table,
    overlay_table,
)
from services.config_service import RunConfiguration
from services.geometry_service import path_modulation
from services.loss_model_service import (
    amplification_factor,
    effective_loaded,
    emergent_cycle_loss,
    ionization_lifetime,
    iterate_recurrence,
    steady_state,
)
from services.planner_service import plan_cycle, plan_summary, route_move, synthesize_trajectory
from services.simulator_service import emergent_parameters, run_replicas
from utils.constants import MODULATION_SAMPLES, REFERENCE_PEARSON
from utils.errors import ArcoError, ConfigError, DataError, DomainError
from views import console_view

# Ciclos finales usados para estimar la meseta
PLATEAU_CYCLES = 10


def run_command(funcion: Callable, *args, **kwargs) -> int:
    """Ejecuta un comando y devuelve su código de salida (0 o el del error)."""
    try:
        funcion(*args, **kwargs)
    except ArcoError as e:
        console_view.show_error(str(e))
        return e.exit_code
    return 0


def parse_window(texto: Optional[str]) -> Optional[Tuple[int, int]]:
    """'A:B' → (A, B) semiabierta."""
    if texto is None:
        return None
    a, separador, b = texto.partition(":")
    try:
        if not separador:
            raise ValueError
        return int(a), int(b)
    except ValueError as e:
        raise ConfigError(f"--decay-window debe tener la forma A:B (recibido '{texto}')") from e


# ----------------------------------------------------------------------
# predict
# ----------------------------------------------------------------------
def _transport_report(config: RunConfiguration) -> Dict[str, Optional[float]]:
    """
    Profundidad de la pinza, vida media por fotoionización a esa profundidad y
    modulación pico a pico de la red sobre la ruta de la primera pinza al
    primer sitio objetivo (None si no hay pinzas u objetivos).
    """
    sim = config.simulation
    profundidad = config.potential.lattice_depth * config.potential.tweezer_depth_ratio / 1000.0
    pinzas = sorted(sim.geometry.tweezer_sites)
    objetivos = sorted(sim.target_pattern.sites)
    modulacion = None
    if pinzas and objetivos:
        ruta = route_move(sim.geometry, pinzas[0], objetivos[0], sim.target_pattern.approach_rows)
        modulacion = path_modulation(config.potential, sim.geometry, ruta.polyline, MODULATION_SAMPLES)["peak_to_peak"]
    return {
        "tweezer_depth_mK": profundidad,
        "ionization_lifetime_s": ionization_lifetime(profundidad, config.ionization),
        "lattice_modulation_uK": modulacion,
    }


def cmd_predict(config: RunConfiguration, out_dir: Optional[str] = None, show: bool = True) -> Dict[str, object]:
    """
    Reporte de estado estacionario: β, N_∞, N_L,eff y la acumulación determinista.

    Args:
        config (RunConfiguration): Configuración
        out_dir (str): Si se indica, escribe prediction.csv
        show (bool): Imprimir el reporte

    Returns:
        dict: beta, n_inf, n_l_eff, alpha_c_channels, tweezer_depth_mK,
              ionization_lifetime_s, lattice_modulation_uK, table
    """
    p = config.loss
    beta = amplification_factor(p.alpha_r, p.alpha_c)
    serie = iterate_recurrence(0.0, p.n_load, p.alpha_r, p.alpha_c, config.simulation.n_cycles)
    tabla = pl.DataFrame({"cycle": list(range(len(serie))), "n_stored": serie})
    resumen = {
        "beta": beta,
        "n_inf": steady_state(p.n_load, p.alpha_r, p.alpha_c),
        "n_l_eff": effective_loaded(p.n_load, p.alpha_r),
        "alpha_c_channels": emergent_cycle_loss(p),
        **_transport_report(config),
        "table": tabla,
    }
    if out_dir is not None:
        file_manager.ensure_directory(out_dir)
        encabezado = {k: v for k, v in resumen.items() if k != "table"}
        file_manager.write_table(tabla, os.path.join(out_dir, "prediction.csv"), encabezado)
    if show:
        console_view.show_prediction(resumen, tabla)
    return resumen


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------
def cmd_simulate(config: RunConfiguration, show: bool = True) -> Dict[str, object]:
    """Corre las réplicas y escribe una traza por réplica y el resumen del ensamble."""
    out_dir = file_manager.ensure_directory(config.out_dir)
    ensamble = run_replicas(config.simulation, verbose=config.verbose and show)

    archivos: List[str] = []
    for traza in ensamble.traces:
        archivos.append(file_manager.write_trace(traza, out_dir))
        if config.output_format == "grid":
            archivos.append(file_manager.write_grids(traza, out_dir))

    banda = ensemble_band([t.stored_counts() for t in ensamble.traces])
    archivos.append(file_manager.write_table(banda, os.path.join(out_dir, "ensemble_summary.csv")))

    ultimos = min(PLATEAU_CYCLES, config.simulation.n_cycles)
    meseta = float(np.mean(ensamble.mean[-ultimos:]))
    cargados = float(np.mean([[r.n_loaded for r in t.records] for t in ensamble.traces]))
    parametros = [emergent_parameters(t) for t in ensamble.traces]
    resumen = {
        "n_replicas": len(ensamble),
        "n_cycles": config.simulation.n_cycles,
        "plateau": meseta,
        "mean_loaded": cargados,
        "ratio": meseta / cargados if cargados else None,
        "alpha_c": _mean_defined([p["alpha_c"] for p in parametros]),
        "alpha_r": _mean_defined([p["alpha_r"] for p in parametros]),
        "files": archivos,
        "ensemble": ensamble,
    }
    if show:
        console_view.show_simulation(resumen)
    return resumen


def _mean_defined(valores: Sequence[Optional[float]]) -> Optional[float]:
    definidos = [v for v in valores if v is not None]
    return float(np.mean(definidos)) if definidos else None


# ----------------------------------------------------------------------
# plan
# ----------------------------------------------------------------------
def cmd_plan(
    config: RunConfiguration,
    occupancy_paths: Sequence[str],
    out_dir: Optional[str] = None,
    trajectories: bool = False,
    show: bool = True,
) -> Dict[str, object]:
    """
    Planifica un ciclo a partir de grillas de ocupación.

    Con un archivo, la misma grilla describe la zona de carga y el registro;
    con dos, el primero es la carga y el segundo el almacenamiento.

    Raises:
        DomainError: Si el plan escrito conserva violaciones de despeje
    """
    if not 1 <= len(occupancy_paths) <= 2:
        raise ConfigError("plan requiere uno o dos archivos de ocupación")
    sim = config.simulation
    geometria = sim.geometry
    grillas = [file_manager.read_occupancy_grid(ruta, geometria) for ruta in occupancy_paths]
    carga, almacen = grillas[0], grillas[-1]

    plan = plan_cycle(
        geometria, carga, almacen, sim.target_pattern,
        d_min=sim.collateral_model.d_min,
        exact_limit=sim.exact_assignment_limit,
    )
    out_dir = file_manager.ensure_directory(out_dir or config.out_dir)
    archivos = [file_manager.write_plan(plan, geometria, sim.kinematics, os.path.join(out_dir, "plan.csv"))]
    if plan.violations:
        archivos.append(
            file_manager.write_table(file_manager.violations_table(plan, geometria), os.path.join(out_dir, "violations.csv"))
        )
    if trajectories:
        for move in plan.moves:
            ruta = os.path.join(out_dir, f"trajectory_{move.order_rank:04d}.csv")
            archivos.append(file_manager.write_trajectory(synthesize_trajectory(move, sim.kinematics), ruta))

    resumen = dict(plan_summary(plan, sim.kinematics))
    resumen["files"] = archivos
    resumen["plan"] = plan
    if show:
        console_view.show_plan(resumen)
    if plan.violations:
        raise DomainError(f"El plan conserva {len(plan.violations)} violaciones de despeje (ver violations.csv)")
    return resumen


# ----------------------------------------------------------------------
# analyze
# ----------------------------------------------------------------------
def _stem(path: str) -> str:
    nombre = os.path.basename(path)
    for sufijo in (".trace.csv", ".grids.txt"):
        if nombre.endswith(sufijo):
            return nombre[: -len(sufijo)]
    return os.path.splitext(nombre)[0]


def _write_decay_fit(conteos: Sequence[float], decay_window: Optional[Tuple[int, int]], base: str):
    """Ajusta el decaimiento en la ventana y escribe <base>.decay_fit.csv; (None, None) sin ventana."""
    if decay_window is None:
        return None, None
    ajuste = fit_decay(conteos, decay_window)
    tabla = pl.DataFrame({
        "window_start": [ajuste.window[0]],
        "window_end": [ajuste.window[1]],
        "survival": [ajuste.survival],
        "alpha_c": [ajuste.alpha_c],
        "residual_norm": [ajuste.residual_norm],
    })
    return ajuste, file_manager.write_table(tabla, f"{base}.decay_fit.csv")


def _analyze_counts(ruta: str, base: str, decay_window: Optional[Tuple[int, int]]) -> Dict[str, object]:
    """Análisis de una traza sin grillas: superposición y ajuste a partir de los conteos por ciclo."""
    _, df = file_manager.read_trace(ruta)
    conteos = df["stored_count_after"].to_list()
    tabla = counts_overlay_table(conteos, df["n_moves_succeeded"].to_list(), df["n_loaded"].to_list())
    archivos = [file_manager.write_table(tabla, f"{base}.overlay.csv")]
    ajuste, archivo = _write_decay_fit(conteos, decay_window, base)
    if archivo is not None:
        archivos.append(archivo)
    return {
        "n_cycles": df.height,
        "correlations": {},
        "decay_fit": ajuste,
        "files": archivos,
        "counts_only": True,
        "stored_counts": conteos,
    }


def _analyze_grids(secuencia: ImageSequence, base: str, decay_window: Optional[Tuple[int, int]]) -> Dict[str, object]:
    reporte = correlation_report(secuencia)
    archivos = [
        file_manager.write_table(fraction_table(secuencia), f"{base}.fractions.csv"),
        file_manager.write_table(correlation_table(reporte, REFERENCE_PEARSON), f"{base}.correlations.csv"),
        file_manager.write_table(overlay_table(secuencia), f"{base}.overlay.csv"),
    ]
    ajuste, archivo = _write_decay_fit(secuencia.stored_counts(), decay_window, base)
    if archivo is not None:
        archivos.append(archivo)
    return {
        "n_cycles": secuencia.n_cycles,
        "correlations": reporte.coefficients,
        "decay_fit": ajuste,
        "files": archivos,
        "counts_only": False,
        "stored_counts": secuencia.stored_counts(),
    }


def cmd_analyze(
    trace_paths: Sequence[str],
    out_dir: str,
    decay_window: Optional[Tuple[int, int]] = None,
    show: bool = True,
) -> Dict[str, Dict[str, object]]:
    """
    Analiza trazas del simulador (o grillas externas en el mismo formato).

    Por cada traza escribe <stem>.fractions.csv, <stem>.correlations.csv,
    <stem>.overlay.csv y, si hay ventana, <stem>.decay_fit.csv. Una traza
    simulada con --format table no tiene grillas: se analiza solo con sus
    conteos (superposición y ajuste). Con varias trazas agrega ensemble_band.csv.
    """
    if not trace_paths:
        raise ConfigError("analyze requiere al menos un archivo de traza")
    out_dir = file_manager.ensure_directory(out_dir)

    resultados: Dict[str, Dict[str, object]] = {}
    conteos = []
    for ruta in trace_paths:
        grillas = file_manager.grids_path_for(ruta)
        stem = _stem(ruta)
        base = os.path.join(out_dir, stem)
        if grillas != ruta and not os.path.exists(grillas):
            resultados[stem] = _analyze_counts(ruta, base, decay_window)
        else:
            resultados[stem] = _analyze_grids(file_manager.read_grids(grillas), base, decay_window)
        conteos.append(resultados[stem]["stored_counts"])
        if show:
            console_view.show_analysis(stem, resultados[stem])

    if len(conteos) > 1:
        if len({len(c) for c in conteos}) != 1:
            raise DataError("Las trazas tienen distinto número de ciclos; no se puede formar el ensamble")
        file_manager.write_table(ensemble_band(conteos), os.path.join(out_dir, "ensemble_band.csv"))
    return resultados
