"""
🎲 SERVICIO DE SIMULACIÓN MONTE CARLO
=====================================
Ejecuta la secuencia cíclica de operación continua sobre matrices de
ocupación: shelving y vacío, recarga del reservorio, primera imagen,
planificación y ejecución del reordenamiento, segunda imagen.

El estado verdadero y las imágenes observadas se mantienen separados; el
análisis posterior solo consume imágenes.

Author: Sistema ARCO
Version: 1.0.0
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import xxhash
from joblib import Parallel, delayed
from numpy.random import Generator, SeedSequence
from tqdm import tqdm

from services.geometry_service import LatticeGeometry, Site, TargetPattern, validate_target_pattern
from services.loss_model_service import (
    CollateralModel,
    LossParameters,
    MoveSuccessModel,
    shelving_stage_survival,
    vacuum_survival,
)
from services.planner_service import (
    KinematicParams,
    MovePlan,
    StoredSites,
    move_success_probability,
    plan_cycle,
)
from utils.constants import EXACT_ASSIGNMENT_LIMIT, N_CYCLES, N_JOBS, N_REPLICAS, RNG_SEED
from utils.errors import UNDEFINED, ConfigError, DataError

IMAGE_TAGS = (1, 2)
MAX_SEED = 2 ** 64 - 1


@dataclass(frozen=True)
class SimulationConfig:
    geometry: LatticeGeometry
    loss_parameters: LossParameters
    move_success_model: MoveSuccessModel
    collateral_model: CollateralModel
    kinematics: KinematicParams
    target_pattern: TargetPattern
    n_cycles: int = N_CYCLES
    resort_disable_after: Optional[int] = None
    rng_seed: int = RNG_SEED
    n_replicas: int = N_REPLICAS
    n_jobs: int = N_JOBS
    exact_assignment_limit: int = EXACT_ASSIGNMENT_LIMIT

    def __post_init__(self):
        if self.n_cycles < 1:
            raise ConfigError("simulation.n_cycles debe ser ≥ 1")
        if self.resort_disable_after is not None and not 0 <= self.resort_disable_after <= self.n_cycles:
            raise ConfigError("simulation.resort_disable_after debe estar en [0, n_cycles]")
        if not 0 <= self.rng_seed <= MAX_SEED:
            raise ConfigError("simulation.rng_seed debe ser un entero de 64 bits sin signo")
        if self.n_replicas < 1:
            raise ConfigError("simulation.n_replicas debe ser ≥ 1")
        n_pinzas = len(self.geometry.tweezer_sites)
        if self.loss_parameters.n_tweezers != n_pinzas:
            raise ConfigError(
                f"loss.n_tweezers = {self.loss_parameters.n_tweezers} no coincide con las "
                f"{n_pinzas} pinzas de la geometría"
            )
        validate_target_pattern(self.geometry, self.target_pattern, self.collateral_model.d_min)

    def resorting_enabled(self, cycle: int) -> bool:
        return self.resort_disable_after is None or cycle < self.resort_disable_after

    def snapshot(self) -> Dict[str, object]:
        """Eco plano de la configuración para la cabecera de la traza."""
        geo = self.geometry
        eco = {
            "geometry.spacing_x": geo.spacing_x,
            "geometry.spacing_y": geo.spacing_y,
            "geometry.n_cols": geo.n_cols,
            "geometry.n_rows": geo.n_rows,
            "geometry.loading_cols": geo.loading_cols,
            "geometry.guard_cols": geo.guard_cols,
            "geometry.n_tweezers": len(geo.tweezer_sites),
            "target.row_stride": self.target_pattern.row_stride,
            "target.col_stride": self.target_pattern.col_stride,
            "target.capacity": self.target_pattern.capacity,
        }
        for grupo, registro in (
            ("loss", self.loss_parameters),
            ("move_success", self.move_success_model),
            ("collateral", self.collateral_model),
            ("kinematics", self.kinematics),
        ):
            for nombre, valor in vars(registro).items():
                eco[f"{grupo}.{nombre}"] = valor
        eco.update({
            "simulation.n_cycles": self.n_cycles,
            "simulation.resort_disable_after": self.resort_disable_after,
            "simulation.rng_seed": self.rng_seed,
            "simulation.n_replicas": self.n_replicas,
        })
        return eco


@dataclass(frozen=True)
class OccupancyMatrix:
    """Imagen (o estado) de ocupación de toda la red, indexada [row, col]."""

    geometry: LatticeGeometry
    occupied: np.ndarray
    image_tag: int = 1

    def __post_init__(self):
        ocupacion = np.array(self.occupied, dtype=bool, copy=True)
        if ocupacion.shape != self.geometry.shape:
            raise DataError(f"Imagen con forma {ocupacion.shape}; se esperaba {self.geometry.shape}")
        if self.image_tag not in IMAGE_TAGS:
            raise DataError(f"Etiqueta de imagen inválida: {self.image_tag}")
        ocupacion.flags.writeable = False
        object.__setattr__(self, "occupied", ocupacion)

    def count(self, mask: Optional[np.ndarray] = None) -> int:
        if mask is None:
            return int(self.occupied.sum())
        return int((self.occupied & mask).sum())

    def checksum(self) -> str:
        return occupancy_checksum(self.occupied)


@dataclass(frozen=True)
class MoveOutcome:
    source: Site
    destination: Site
    succeeded: bool


@dataclass(frozen=True)
class CycleRecord:
    cycle_index: int
    image1: OccupancyMatrix
    image2: OccupancyMatrix
    n_loaded: int
    n_moves_attempted: int
    n_moves_succeeded: int
    n_collateral_losses: int
    n_shelving_losses: int
    stored_count_after: int
    n_vacuum_losses: int = 0
    n_imaging_losses: int = 0
    true_stored_before: int = 0
    true_stored_after: int = 0
    moves: Tuple[MoveOutcome, ...] = ()

    def __post_init__(self):
        if not self.n_moves_succeeded <= self.n_moves_attempted <= self.n_loaded:
            raise DataError(
                f"Ciclo {self.cycle_index}: se requiere éxitos ≤ intentos ≤ cargados "
                f"({self.n_moves_succeeded}, {self.n_moves_attempted}, {self.n_loaded})"
            )

    @property
    def stored_losses(self) -> int:
        return self.n_shelving_losses + self.n_vacuum_losses + self.n_collateral_losses + self.n_imaging_losses


@dataclass(frozen=True)
class RunTrace:
    config: Dict[str, object]
    records: Tuple[CycleRecord, ...]
    wall_parameters: Dict[str, List[Optional[float]]]
    seed: int = RNG_SEED
    replica: int = 0
    masks: Dict[str, np.ndarray] = field(default_factory=dict)

    def stored_counts(self) -> np.ndarray:
        return np.array([r.stored_count_after for r in self.records], dtype=float)

    def true_stored_counts(self) -> np.ndarray:
        return np.array([r.true_stored_after for r in self.records], dtype=float)


@dataclass
class Ensemble:
    traces: List[RunTrace]
    mean: np.ndarray = field(init=False)
    std: np.ndarray = field(init=False)

    def __post_init__(self):
        conteos = np.vstack([t.stored_counts() for t in self.traces])
        self.mean = conteos.mean(axis=0)
        self.std = conteos.std(axis=0)

    def __len__(self) -> int:
        return len(self.traces)

    def band(self, k: float = 3.0) -> Tuple[np.ndarray, np.ndarray]:
        """Banda mean ± k·σ/√n del promedio del ensamble."""
        ancho = k * self.std / math.sqrt(len(self.traces))
        return self.mean - ancho, self.mean + ancho


@dataclass
class ExecutionResult:
    occupancy: np.ndarray
    n_attempted: int = 0
    n_succeeded: int = 0
    n_collateral_losses: int = 0
    outcomes: List[MoveOutcome] = field(default_factory=list)


@dataclass
class ImageCapture:
    observed: OccupancyMatrix
    occupancy: np.ndarray
    n_lost: int


def occupancy_checksum(occupied: np.ndarray) -> str:
    """xxh64 de la forma y los bits empaquetados de una ocupación."""
    ocupacion = np.asarray(occupied, dtype=bool)
    digest = xxhash.xxh64()
    digest.update(np.asarray(ocupacion.shape, dtype=np.int64).tobytes())
    digest.update(np.packbits(ocupacion, axis=None).tobytes())
    return digest.hexdigest()


def _bernoulli(rng: Generator, shape, p: float) -> np.ndarray:
    # Siempre consume el mismo número de variables para mantener el flujo estable
    return rng.random(shape) < p


# ----------------------------------------------------------------------
# Etapas del ciclo
# ----------------------------------------------------------------------
def load_reservoir(
    rng: Generator, config: SimulationConfig, carried: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Ocupación de la zona de carga tras el MOT y el calentamiento selectivo.

    Args:
        rng (Generator): Flujo aleatorio
        config (SimulationConfig): Configuración
        carried (np.ndarray): Átomos que quedaron en pinzas del ciclo anterior;
                              esas pinzas siguen ocupadas

    Returns:
        np.ndarray: Ocupación [row, col] restringida a la zona de carga
    """
    geo = config.geometry
    params = config.loss_parameters
    pinzas = geo.tweezer_mask
    fondo = geo.loading_mask & ~pinzas

    cargados = _bernoulli(rng, geo.shape, params.load_fraction) & pinzas
    if carried is not None:
        cargados |= np.asarray(carried, dtype=bool) & pinzas

    # Residuo de la red: átomos que sobreviven al calentamiento o quedaron guardados por accidente
    p_residuo = min(1.0, params.mot_background_fill * (params.heating_extinction + params.mot_shelved_defect))
    residuo = _bernoulli(rng, geo.shape, p_residuo) & fondo
    return cargados | residuo


def apply_shelving_stage(rng: Generator, storage_occupancy: np.ndarray, params: LossParameters) -> np.ndarray:
    """Cada átomo guardado sobrevive la etapa de shelving con probabilidad independiente."""
    ocupacion = np.asarray(storage_occupancy, dtype=bool)
    sobrevive = _bernoulli(rng, ocupacion.shape, shelving_stage_survival(params))
    return ocupacion & sobrevive


def apply_vacuum_loss(rng: Generator, occupancy: np.ndarray, params: LossParameters) -> np.ndarray:
    ocupacion = np.asarray(occupancy, dtype=bool)
    sobrevive = _bernoulli(rng, ocupacion.shape, vacuum_survival(params.cycle_time, params.vacuum_lifetime))
    return ocupacion & sobrevive


def execute_plan(
    rng: Generator,
    plan: MovePlan,
    occupancy: np.ndarray,
    geometry: LatticeGeometry,
    move_model: MoveSuccessModel = MoveSuccessModel(),
    collateral: CollateralModel = CollateralModel(),
    strict: bool = True,
) -> ExecutionResult:
    """
    Ejecuta los movimientos en orden sobre el estado verdadero.

    Cada movimiento tiene éxito con la probabilidad compuesta de sus trazos.
    Los átomos guardados a menos de d_min del trazado se pierden con
    loss_probability_inside; entre d_min e interaction_range con
    passing_loss_probability. Si el destino ya estaba ocupado (átomo no
    detectado) ambos se pierden.

    Args:
        strict (bool): Si es True, un origen vacío es un error; si no, el
                       movimiento se omite (falso positivo de la imagen)

    Returns:
        ExecutionResult: Ocupación final y conteos
    """
    estado = np.array(occupancy, dtype=bool, copy=True)
    resultado = ExecutionResult(occupancy=estado)
    registro = StoredSites.build(geometry, estado, plan)
    alcance = max(collateral.d_min, collateral.interaction_range)

    for move in plan.moves:
        col_s, row_s = move.source
        col_d, row_d = move.destination
        if not estado[row_s, col_s]:
            if strict:
                raise DataError(f"El movimiento {move.order_rank} parte de un sitio vacío {move.source}")
            continue

        resultado.n_attempted += 1
        estado[row_s, col_s] = False
        registro.set(move.source, False)

        indices, distancias = registro.near(move, alcance)
        if len(indices):
            p_perdida = np.where(
                distancias < collateral.d_min,
                collateral.loss_probability_inside,
                collateral.passing_loss_probability,
            )
            perdidos = indices[rng.random(len(indices)) < p_perdida]
            for k in perdidos:
                col, row = registro.sites[k]
                estado[row, col] = False
            registro.active[perdidos] = False
            resultado.n_collateral_losses += len(perdidos)

        exito = bool(rng.random() < move_success_probability(geometry, move, move_model))
        if exito and estado[row_d, col_d]:
            estado[row_d, col_d] = False
            registro.set(move.destination, False)
            resultado.n_collateral_losses += 1
            exito = False
        elif exito:
            estado[row_d, col_d] = True
            registro.set(move.destination, True)
            resultado.n_succeeded += 1
        resultado.outcomes.append(MoveOutcome(move.source, move.destination, exito))

    return resultado


def capture_image(
    rng: Generator,
    occupancy: np.ndarray,
    params: LossParameters,
    geometry: LatticeGeometry,
    image_tag: int = 1,
) -> ImageCapture:
    """
    Toma una imagen: errores de detección simétricos sobre el estado actual,
    luego pérdida por imagen en el estado verdadero. Nunca crea átomos.
    """
    ocupacion = np.asarray(occupancy, dtype=bool)
    error = _bernoulli(rng, ocupacion.shape, params.detection_infidelity)
    observada = ocupacion ^ error
    perdidos = ocupacion & _bernoulli(rng, ocupacion.shape, params.imaging_loss)
    return ImageCapture(
        observed=OccupancyMatrix(geometry, observada, image_tag),
        occupancy=ocupacion & ~perdidos,
        n_lost=int((perdidos & geometry.storage_mask).sum()),
    )


# ----------------------------------------------------------------------
# Corridas
# ----------------------------------------------------------------------
def _ratio(numerador: float, denominador: float) -> Optional[float]:
    return UNDEFINED if denominador == 0 else numerador / denominador


def run(
    config: SimulationConfig,
    seed_sequence: Optional[SeedSequence] = None,
    replica: int = 0,
    verbose: bool = False,
) -> RunTrace:
    """
    Corre n_cycles ciclos completos.

    Orden por ciclo: shelving + vacío (átomos guardados, mientras el MOT
    recarga) → recarga del reservorio → imagen 1 → plan → ejecución → imagen 2.

    Args:
        config (SimulationConfig): Configuración validada
        seed_sequence (SeedSequence): Semilla del flujo; None usa config.rng_seed
        replica (int): Índice de réplica (solo informativo)
        verbose (bool): Mostrar el progreso por consola

    Returns:
        RunTrace: Traza determinista para (config, semilla)
    """
    if seed_sequence is None:
        seed_sequence = SeedSequence(config.rng_seed)
    rng = np.random.default_rng(seed_sequence)
    geo = config.geometry
    params = config.loss_parameters
    objetivo = config.target_pattern.mask(geo)

    if verbose:
        print(f"🚀 Réplica {replica}: {config.n_cycles} ciclos, {len(geo.tweezer_sites)} pinzas")

    estado = geo.empty_occupancy()
    registros: List[CycleRecord] = []
    alpha_c: List[Optional[float]] = []
    alpha_r: List[Optional[float]] = []

    for ciclo in range(config.n_cycles):
        almacen = estado & geo.storage_mask
        antes = int(almacen.sum())

        tras_shelving = apply_shelving_stage(rng, almacen, params)
        n_shelving = antes - int(tras_shelving.sum())
        tras_vacio = apply_vacuum_loss(rng, tras_shelving, params)
        n_vacio = int(tras_shelving.sum()) - int(tras_vacio.sum())
        remanente = apply_vacuum_loss(rng, estado & geo.loading_mask, params)

        carga = load_reservoir(rng, config, carried=remanente)
        estado = tras_vacio | carga
        n_cargados = int((carga & geo.tweezer_mask).sum())

        imagen1 = capture_image(rng, estado, params, geo, image_tag=1)
        estado = imagen1.occupancy

        if config.resorting_enabled(ciclo):
            vista = imagen1.observed.occupied
            # solo pinzas como origen y solo sitios objetivo como registro
            plan = plan_cycle(
                geo, vista & geo.tweezer_mask, vista & objetivo, config.target_pattern,
                d_min=config.collateral_model.d_min,
                exact_limit=config.exact_assignment_limit,
            )
            ejecucion = execute_plan(
                rng, plan, estado, geo,
                config.move_success_model, config.collateral_model, strict=False,
            )
        else:
            ejecucion = ExecutionResult(occupancy=estado)
        estado = ejecucion.occupancy

        imagen2 = capture_image(rng, estado, params, geo, image_tag=2)
        estado = imagen2.occupancy
        despues = int((estado & geo.storage_mask).sum())

        registro = CycleRecord(
            cycle_index=ciclo,
            image1=imagen1.observed,
            image2=imagen2.observed,
            n_loaded=n_cargados,
            n_moves_attempted=ejecucion.n_attempted,
            n_moves_succeeded=ejecucion.n_succeeded,
            n_collateral_losses=ejecucion.n_collateral_losses,
            n_shelving_losses=n_shelving,
            stored_count_after=imagen2.observed.count(objetivo),
            n_vacuum_losses=n_vacio,
            n_imaging_losses=imagen1.n_lost + imagen2.n_lost,
            true_stored_before=antes,
            true_stored_after=despues,
            moves=tuple(ejecucion.outcomes),
        )
        registros.append(registro)
        alpha_c.append(_ratio(registro.stored_losses, antes))
        alpha_r.append(
            UNDEFINED if ejecucion.n_attempted == 0
            else 1.0 - ejecucion.n_succeeded / ejecucion.n_attempted
        )

        if verbose and (ciclo + 1) % 10 == 0:
            print(f"   📊 Ciclo {ciclo + 1}: {registro.stored_count_after} átomos en el registro")

    if verbose:
        print(f"✅ Réplica {replica} completada")

    return RunTrace(
        config=config.snapshot(),
        records=tuple(registros),
        wall_parameters={"alpha_c": alpha_c, "alpha_r": alpha_r},
        seed=config.rng_seed,
        replica=replica,
        masks={"target": objetivo, "loading": geo.loading_mask, "tweezer": geo.tweezer_mask},
    )


def replica_seeds(config: SimulationConfig) -> List[SeedSequence]:
    """Una semilla independiente por réplica, derivada de rng_seed."""
    return SeedSequence(config.rng_seed).spawn(config.n_replicas)


def run_replicas(config: SimulationConfig, verbose: bool = False) -> Ensemble:
    """
    Corre n_replicas réplicas independientes, en paralelo si n_jobs > 1.

    El resultado no depende de n_jobs: cada réplica tiene su propio flujo.
    """
    semillas = replica_seeds(config)
    if verbose:
        print("🎲 SIMULACIÓN DE RÉPLICAS")
        print("=" * 50)
        print(f"📊 Réplicas: {config.n_replicas} | Ciclos: {config.n_cycles} | Trabajos: {config.n_jobs}")

    tareas = (delayed(run)(config, semilla, k) for k, semilla in enumerate(semillas))
    if verbose:
        tareas = tqdm(tareas, total=len(semillas), desc="Réplicas")
    trazas = Parallel(n_jobs=config.n_jobs)(tareas)

    ensamble = Ensemble(traces=list(trazas))
    if verbose:
        print(f"✅ Meseta promedio (último ciclo): {ensamble.mean[-1]:.1f} ± {ensamble.std[-1]:.1f}")
    return ensamble


def emergent_parameters(trace: RunTrace, skip: int = 0) -> Dict[str, Optional[float]]:
    """Promedios temporales de α_c, α_r y N_L del estado verdadero."""
    def _media(valores: Sequence[Optional[float]]) -> Optional[float]:
        definidos = [v for v in valores[skip:] if v is not None]
        return float(np.mean(definidos)) if definidos else UNDEFINED

    return {
        "alpha_c": _media(trace.wall_parameters["alpha_c"]),
        "alpha_r": _media(trace.wall_parameters["alpha_r"]),
        "n_load": _media([r.n_moves_attempted for r in trace.records]),
    }
