"""
⚙️ SERVICIO DE CONFIGURACIÓN
============================
Carga el archivo YAML de parámetros, lo valida con un esquema JSON que
rechaza claves desconocidas, lo combina con los valores por defecto de
utils/constants.py y construye los registros de cada servicio.

Author: Sistema ARCO
Version: 1.0.0
"""

import copy
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional

import yaml
from jsonschema import Draft7Validator

from services.geometry_service import LatticeGeometry, PotentialModel, build_target_pattern, build_tweezer_sites
from services.loss_model_service import (
    CollateralModel,
    IonizationModel,
    LossParameters,
    MoveSuccessModel,
    build_loss_parameters,
)
from services.planner_service import KinematicParams
from services.simulator_service import SimulationConfig
from utils.constants import DEFAULT_CONFIG
from utils.errors import ConfigError, OutputError

OUTPUT_FORMATS = ("table", "grid")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_INT = {"type": "integer", "minimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}


def _nullable(schema: Dict[str, Any]) -> Dict[str, Any]:
    esquema = dict(schema)
    esquema["type"] = [schema["type"], "null"]
    return esquema


def _section(**properties) -> Dict[str, Any]:
    return {"type": "object", "additionalProperties": False, "properties": properties}


CONFIG_SCHEMA = _section(
    geometry=_section(
        spacing_x=_POS, spacing_y=_POS, n_cols=_INT_POS, n_rows=_INT_POS,
        loading_cols=_INT, guard_cols=_INT, tweezer_cols=_INT, tweezer_rows=_INT,
        tweezer_col_stride=_INT_POS, tweezer_row_stride=_INT_POS, tweezer_col_start=_INT,
        tweezer_row_start=_nullable(_INT),
    ),
    target=_section(
        row_stride={"type": "integer", "minimum": 2}, col_stride=_INT_POS, start_row=_INT,
        start_col=_nullable(_INT), max_sites=_nullable(_INT),
    ),
    potential=_section(
        lattice_depth=_POS, tweezer_depth_ratio=_POS, form={"type": "string"},
    ),
    loss=_section(
        alpha_r=_PROB, alpha_c=_PROB, n_load=_nullable(_NONNEG), load_fraction=_PROB,
        n_tweezers=_nullable(_INT), shelving_roundtrip_infidelity=_PROB, shelving_lifetime=_POS,
        hold_time=_NONNEG, mot_extra_loss=_nullable(_PROB), total_shelving_loss=_nullable(_PROB),
        vacuum_lifetime=_POS, cycle_time=_POS, heating_extinction=_PROB, detection_infidelity=_PROB,
        imaging_loss=_PROB, mot_background_fill=_PROB, mot_shelved_defect=_PROB,
    ),
    move_success=_section(p0=_PROB, decay_length_between=_POS, decay_length_through=_POS),
    ionization=_section(
        quadratic_coefficient=_NONNEG, linear_coefficient=_NONNEG, constant_rate=_NONNEG,
    ),
    collateral=_section(
        d_min=_POS, loss_probability_inside=_PROB, interaction_range=_POS, passing_loss_probability=_PROB,
    ),
    kinematics=_section(
        peak_velocity=_POS, ramp_duration=_POS, depth_ratio=_POS, accel_time=_POS,
        profile={"type": "string"}, sample_step=_POS,
    ),
    simulation=_section(
        n_cycles=_INT_POS, resort_disable_after=_nullable(_INT),
        rng_seed={"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        n_replicas=_INT_POS, n_jobs={"type": "integer"}, exact_assignment_limit=_INT_POS,
    ),
    output=_section(
        out_dir={"type": "string"}, format={"enum": list(OUTPUT_FORMATS)},
        verbosity={"type": "integer", "minimum": 0, "maximum": 2},
    ),
)


@dataclass(frozen=True)
class RunConfiguration:
    """SimulationConfig completo más las opciones de salida."""

    simulation: SimulationConfig
    potential: PotentialModel
    ionization: IonizationModel
    out_dir: str
    output_format: str
    verbosity: int
    document: Dict[str, Any]

    @property
    def loss(self) -> LossParameters:
        return self.simulation.loss_parameters

    @property
    def verbose(self) -> bool:
        return self.verbosity > 0


def deep_merge(base: Dict[str, Any], cambios: Dict[str, Any]) -> Dict[str, Any]:
    """Combina diccionarios anidados; los valores de `cambios` prevalecen."""
    resultado = copy.deepcopy(base)
    for clave, valor in (cambios or {}).items():
        if isinstance(valor, dict) and isinstance(resultado.get(clave), dict):
            resultado[clave] = deep_merge(resultado[clave], valor)
        else:
            resultado[clave] = copy.deepcopy(valor)
    return resultado


def validate_document(document: Dict[str, Any]) -> None:
    """Valida contra CONFIG_SCHEMA; el primer error se reporta con su ruta de claves."""
    errores = sorted(Draft7Validator(CONFIG_SCHEMA).iter_errors(document), key=lambda e: list(e.absolute_path))
    if errores:
        error = errores[0]
        ruta = ".".join(str(p) for p in error.absolute_path) or "<raíz>"
        raise ConfigError(f"Configuración inválida en '{ruta}': {error.message}")


def read_config_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"No existe el archivo de configuración '{path}'")
    try:
        with open(path, encoding="utf-8") as fh:
            documento = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        marca = getattr(e, "problem_mark", None)
        donde = f" (línea {marca.line + 1}, columna {marca.column + 1})" if marca is not None else ""
        raise ConfigError(f"YAML inválido en '{path}'{donde}") from e
    if documento is None:
        return {}
    if not isinstance(documento, dict):
        raise ConfigError(f"El archivo '{path}' debe contener un mapeo de secciones")
    return documento


def build_run_configuration(document: Dict[str, Any]) -> RunConfiguration:
    """Construye los registros a partir de un documento completo (ya combinado con los valores por defecto)."""
    validate_document(document)
    g = document["geometry"]
    pinzas = build_tweezer_sites(
        g["n_rows"],
        tweezer_cols=g["tweezer_cols"],
        tweezer_rows=g["tweezer_rows"],
        col_stride=g["tweezer_col_stride"],
        row_stride=g["tweezer_row_stride"],
        col_start=g["tweezer_col_start"],
        row_start=g["tweezer_row_start"],
    )
    geometria = LatticeGeometry(
        spacing_x=g["spacing_x"],
        spacing_y=g["spacing_y"],
        n_cols=g["n_cols"],
        n_rows=g["n_rows"],
        loading_cols=g["loading_cols"],
        guard_cols=g["guard_cols"],
        tweezer_sites=pinzas,
    )
    objetivo = build_target_pattern(geometria, **document["target"])

    perdidas = dict(document["loss"])
    total_shelving = perdidas.pop("total_shelving_loss")
    if perdidas["n_tweezers"] is None:
        perdidas["n_tweezers"] = len(pinzas)
    if perdidas["n_load"] is None:
        perdidas["n_load"] = perdidas["load_fraction"] * perdidas["n_tweezers"]

    s = document["simulation"]
    simulacion = SimulationConfig(
        geometry=geometria,
        loss_parameters=build_loss_parameters(total_shelving_loss=total_shelving, **perdidas),
        move_success_model=MoveSuccessModel(**document["move_success"]),
        collateral_model=CollateralModel(**document["collateral"]),
        kinematics=KinematicParams(**document["kinematics"]),
        target_pattern=objetivo,
        n_cycles=s["n_cycles"],
        resort_disable_after=s["resort_disable_after"],
        rng_seed=s["rng_seed"],
        n_replicas=s["n_replicas"],
        n_jobs=s["n_jobs"],
        exact_assignment_limit=s["exact_assignment_limit"],
    )
    o = document["output"]
    return RunConfiguration(
        simulation=simulacion,
        potential=PotentialModel(**document["potential"]),
        ionization=IonizationModel(**document["ionization"]),
        out_dir=o["out_dir"],
        output_format=o["format"],
        verbosity=o["verbosity"],
        document=document,
    )


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfiguration:
    """
    Carga la configuración completa.

    Args:
        path (str): Archivo YAML (None usa solo los valores por defecto)
        overrides (dict): Cambios anidados que prevalecen sobre el archivo (flags de la CLI)

    Returns:
        RunConfiguration: Configuración validada
    """
    usuario = read_config_file(path) if path else {}
    validate_document(usuario)
    documento = deep_merge(DEFAULT_CONFIG, usuario)
    documento = deep_merge(documento, overrides or {})
    return build_run_configuration(documento)


def dump_default_config(path: str) -> str:
    """Escribe el archivo de parámetros por defecto, con todas las claves."""
    contenido = (
        "# Parámetros por defecto de ARCO (longitudes en μm, tiempos en s salvo indicación)\n"
        "# null en loss.n_load / loss.n_tweezers / loss.mot_extra_loss = valor derivado\n"
        + yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False, allow_unicode=True)
    )
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(contenido)
    except OSError as e:
        raise OutputError(f"No se pudo escribir '{path}': {e}") from e
    return path
