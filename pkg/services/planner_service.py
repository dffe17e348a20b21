"""
🚚 SERVICIO DE PLANIFICACIÓN DE REORDENAMIENTO
==============================================
Asigna los átomos cargados a las vacantes del registro, genera movimientos de
cinco trazos por los pasillos de la red, valida el despeje mínimo respecto a
los átomos guardados y sintetiza la trayectoria temporal de la pinza móvil.

Flujo: ocupación → asignación → rutas → orden → validación → trayectorias

Author: Sistema ARCO
Version: 1.0.0
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from services.geometry_service import (
    LatticeGeometry,
    TargetPattern,
    Point,
    Site,
    COORD_TOL,
    approach_y,
    is_between_columns_x,
    is_corridor_y,
    occupied_sites,
    polyline_point_distances,
    site_position,
)
from services.loss_model_service import (
    MODE_BETWEEN,
    MODE_THROUGH,
    MoveSuccessModel,
    composed_success_prob,
)
from utils.constants import (
    ACCEL_TIME_MS,
    D_MIN_UM,
    EXACT_ASSIGNMENT_LIMIT,
    PEAK_VELOCITY,
    RAMP_DURATION_US,
    SAMPLE_STEP_MS,
    TWEEZER_DEPTH_RATIO,
    VELOCITY_PROFILE,
)
from utils.errors import ConfigError, DataError, DomainError

Stroke = Tuple[Point, Point]
VELOCITY_PROFILES = ("smooth_trapezoid",)


@dataclass(frozen=True)
class Move:
    """Movimiento de un átomo: trazos alineados con los ejes desde `start`."""

    source: Site
    destination: Site
    strokes: Tuple[Stroke, ...]
    start: Point
    order_rank: int = 0

    @property
    def polyline(self) -> Tuple[Point, ...]:
        return (self.start,) + tuple(b for _, b in self.strokes)

    @property
    def end(self) -> Point:
        return self.polyline[-1]

    @property
    def stroke_lengths(self) -> List[float]:
        return [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in self.strokes]

    @property
    def length(self) -> float:
        return float(sum(self.stroke_lengths))


@dataclass(frozen=True)
class Violation:
    """Átomo guardado a menos de d_min de un movimiento."""

    move_rank: int
    site: Site
    distance: float


@dataclass
class MovePlan:
    moves: List[Move]
    d_min: float = D_MIN_UM
    violations: List[Violation] = field(default_factory=list)
    unpaired: List[Site] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.moves)


@dataclass(frozen=True)
class KinematicParams:
    """
    Cinemática de la pinza móvil.

    peak_velocity en μm/ms, ramp_duration en μs (rampas de profundidad),
    accel_time en ms (cada rampa sinusoidal de velocidad), sample_step en ms.
    """

    peak_velocity: float = PEAK_VELOCITY
    ramp_duration: float = RAMP_DURATION_US
    depth_ratio: float = TWEEZER_DEPTH_RATIO
    accel_time: float = ACCEL_TIME_MS
    profile: str = VELOCITY_PROFILE
    sample_step: float = SAMPLE_STEP_MS

    def __post_init__(self):
        if not self.peak_velocity > 0:
            raise ConfigError("kinematics.peak_velocity debe ser positiva")
        if not self.ramp_duration > 0:
            raise ConfigError("kinematics.ramp_duration debe ser positiva")
        if not (self.accel_time > 0 and self.sample_step > 0):
            raise ConfigError("kinematics.accel_time y kinematics.sample_step deben ser positivos")
        if self.profile not in VELOCITY_PROFILES:
            raise ConfigError(f"Perfil de velocidad desconocido '{self.profile}'")

    @property
    def ramp_ms(self) -> float:
        return self.ramp_duration / 1000.0


@dataclass
class TweezerTrajectory:
    """Muestras (t [ms], x [μm], y [μm], profundidad relativa) de una pinza móvil."""

    samples: np.ndarray
    total_duration: float

    @property
    def times(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def positions(self) -> np.ndarray:
        return self.samples[:, 1:3]

    @property
    def depths(self) -> np.ndarray:
        return self.samples[:, 3]

    def speeds(self) -> np.ndarray:
        """Rapidez por diferencias finitas entre muestras consecutivas."""
        dt = np.diff(self.times)
        dp = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return dp / dt


# ----------------------------------------------------------------------
# Asignación
# ----------------------------------------------------------------------
def _positions(sites: Sequence[Site], geometry: Optional[LatticeGeometry]) -> np.ndarray:
    if geometry is None:
        return np.asarray(sites, dtype=float).reshape(-1, 2)
    return np.array(
        [(c * geometry.spacing_x, r * geometry.spacing_y) for c, r in sites], dtype=float
    ).reshape(-1, 2)


def assign_targets(
    loaded_sites: Sequence[Site],
    vacant_target_sites: Sequence[Site],
    geometry: Optional[LatticeGeometry] = None,
    exact_limit: int = EXACT_ASSIGNMENT_LIMIT,
) -> List[Tuple[Site, Site]]:
    """
    Empareja átomos cargados con vacantes minimizando la distancia euclídea total.

    Args:
        loaded_sites: Sitios con átomo en la zona de carga
        vacant_target_sites: Sitios objetivo vacíos
        geometry: Red para convertir índices a μm (None usa los índices como coordenadas)
        exact_limit (int): Tamaño máximo de la matriz de costos para la solución exacta;
                           por encima se usa la vacante más cercana en orden lexicográfico

    Returns:
        List[Tuple[Site, Site]]: min(|cargados|, |vacantes|) pares ordenados por origen
    """
    fuentes = sorted(set(map(tuple, loaded_sites)))
    destinos = sorted(set(map(tuple, vacant_target_sites)))
    if not fuentes or not destinos:
        return []

    p_fuentes = _positions(fuentes, geometry)
    p_destinos = _positions(destinos, geometry)

    if len(fuentes) * len(destinos) <= exact_limit:
        costo = cdist(p_fuentes, p_destinos)
        filas, columnas = linear_sum_assignment(costo)
        pares = [(fuentes[i], destinos[j]) for i, j in zip(filas, columnas)]
    else:
        libres = np.ones(len(destinos), dtype=bool)
        pares = []
        for i, fuente in enumerate(fuentes):
            if not libres.any():
                break
            distancias = np.linalg.norm(p_destinos - p_fuentes[i], axis=1)
            distancias[~libres] = np.inf
            j = int(np.argmin(distancias))
            libres[j] = False
            pares.append((fuente, destinos[j]))

    return sorted(pares)


def assignment_cost(pairs: Sequence[Tuple[Site, Site]], geometry: Optional[LatticeGeometry] = None) -> float:
    if not pairs:
        return 0.0
    origen = _positions([s for s, _ in pairs], geometry)
    destino = _positions([d for _, d in pairs], geometry)
    return float(np.sum(np.linalg.norm(origen - destino, axis=1)))


# ----------------------------------------------------------------------
# Rutas de cinco trazos
# ----------------------------------------------------------------------
def route_move(
    geometry: LatticeGeometry, source: Site, destination: Site, approach_rows: float = 0.5
) -> Move:
    """
    Ruta de cinco trazos de un sitio de carga a un sitio de almacenamiento.

    (1) medio paso vertical al pasillo vecino, (2) horizontal por ese pasillo
    hasta el carril entre zonas, (3) vertical hasta la línea de aproximación de
    la fila destino, (4) horizontal hasta la columna destino, (5) inserción
    vertical en el sitio. Los trazos de longitud cero se omiten.

    Args:
        geometry (LatticeGeometry): Red
        source (Site): Sitio de origen (col, row)
        destination (Site): Sitio destino en almacenamiento
        approach_rows (float): Filas entre la línea de aproximación y la fila destino
                               (0.5 = pasillo adyacente)

    Returns:
        Move: Movimiento con order_rank 0
    """
    x_s, y_s = site_position(geometry, *source)
    x_d, y_d = site_position(geometry, *destination)
    if tuple(source) == tuple(destination):
        raise DomainError(f"Origen y destino coinciden: {source}")
    if not geometry.in_storage_zone(*destination):
        raise DomainError(f"El destino {destination} está fuera de la zona de almacenamiento")
    if geometry.n_rows < 2:
        raise DataError("Una red de una sola fila no tiene pasillos")

    y_t = approach_y(geometry, destination[1], approach_rows)
    fila_s = source[1]
    hacia_arriba = fila_s < geometry.n_rows - 1 and (y_t >= y_s or fila_s == 0)
    y_c = (fila_s + 0.5) * geometry.spacing_y if hacia_arriba else (fila_s - 0.5) * geometry.spacing_y
    x_l = geometry.lane_x

    vertices = [(x_s, y_s), (x_s, y_c), (x_l, y_c), (x_l, y_t), (x_d, y_t), (x_d, y_d)]
    trazos = tuple(
        (a, b)
        for a, b in zip(vertices[:-1], vertices[1:])
        if math.hypot(b[0] - a[0], b[1] - a[1]) > COORD_TOL
    )
    return Move(
        source=tuple(source),
        destination=tuple(destination),
        strokes=trazos,
        start=(x_s, y_s),
    )


def classify_stroke(geometry: LatticeGeometry, stroke: Stroke) -> str:
    """
    'between' si el trazo corre entre sitios: horizontal sobre un pasillo o
    vertical sobre la línea media entre columnas. En otro caso 'through'.
    """
    (x0, y0), (x1, y1) = stroke
    if abs(y1 - y0) < COORD_TOL:
        return MODE_BETWEEN if is_corridor_y(geometry, y0) else MODE_THROUGH
    if abs(x1 - x0) < COORD_TOL:
        return MODE_BETWEEN if is_between_columns_x(geometry, x0) else MODE_THROUGH
    return MODE_THROUGH


def move_success_probability(
    geometry: LatticeGeometry, move: Move, model: MoveSuccessModel = MoveSuccessModel()
) -> float:
    """Probabilidad de no perder el átomo en todo el movimiento."""
    modos = [classify_stroke(geometry, s) for s in move.strokes]
    return composed_success_prob(move.stroke_lengths, modos, model)


# ----------------------------------------------------------------------
# Validación y plan del ciclo
# ----------------------------------------------------------------------
@dataclass
class StoredSites:
    """
    Átomos del registro indexados una sola vez por plan.

    Contiene los sitios de almacenamiento ocupados al inicio más los destinos
    del plan; `active` marca cuáles están ocupados en cada momento.
    """

    sites: List[Site]
    points: np.ndarray
    active: np.ndarray
    index: Dict[Site, int]

    @classmethod
    def build(cls, geometry: LatticeGeometry, occupancy: np.ndarray, plan: MovePlan) -> "StoredSites":
        ocupados = np.asarray(occupancy, dtype=bool) & geometry.storage_mask
        candidatos = ocupados.copy()
        for move in plan.moves:
            col, row = move.destination
            if geometry.is_valid_site(col, row):
                candidatos[row, col] = True
        filas, columnas = np.nonzero(candidatos)
        sitios = list(zip(columnas.tolist(), filas.tolist()))
        return cls(
            sites=sitios,
            points=geometry.site_points[filas, columnas],
            active=ocupados[filas, columnas].copy(),
            index={s: k for k, s in enumerate(sitios)},
        )

    def set(self, site: Site, occupied: bool) -> None:
        k = self.index.get(tuple(site))
        if k is not None:
            self.active[k] = occupied

    def near(self, move: Move, margin: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Sitios ocupados a menos de `margin` del trazado, sin el origen ni el
        destino del propio movimiento.

        Returns:
            (índices, distancias) sobre `sites`
        """
        visibles = self.active.copy()
        for sitio in (move.source, move.destination):
            k = self.index.get(tuple(sitio))
            if k is not None:
                visibles[k] = False
        vertices = np.asarray(move.polyline, dtype=float)
        bajo = vertices.min(axis=0) - margin
        alto = vertices.max(axis=0) + margin
        en_caja = np.all((self.points >= bajo) & (self.points <= alto), axis=1)
        candidatos = np.nonzero(visibles & en_caja)[0]
        distancias = polyline_point_distances(move.polyline, self.points[candidatos])
        cerca = distancias < margin
        return candidatos[cerca], distancias[cerca]


def validate_plan(geometry: LatticeGeometry, plan: MovePlan, occupancy_at_start: np.ndarray) -> List[Violation]:
    """
    Ejecuta el plan sobre la ocupación y reporta cada (movimiento, sitio, distancia)
    con distancia < d_min a un átomo guardado, sin contar el origen ni el destino
    del propio movimiento.
    """
    estado = np.asarray(occupancy_at_start, dtype=bool)
    if estado.shape != geometry.shape:
        raise DataError(f"La ocupación tiene forma {estado.shape}; se esperaba {geometry.shape}")

    registro = StoredSites.build(geometry, estado, plan)
    violaciones: List[Violation] = []
    for move in plan.moves:
        indices, distancias = registro.near(move, plan.d_min)
        cercanos = [Violation(move.order_rank, registro.sites[k], float(d)) for k, d in zip(indices, distancias)]
        violaciones.extend(sorted(cercanos, key=lambda v: v.site))
        registro.set(move.source, False)
        registro.set(move.destination, True)
    return violaciones


def order_moves(geometry: LatticeGeometry, moves: Sequence[Move], top_down: bool = True) -> List[Move]:
    """
    Destinos más lejanos del carril de transporte (y de la zona de carga)
    primero; a igual distancia, por fila ascendente (o descendente si
    top_down es False) y luego por columna.
    """
    signo = 1 if top_down else -1

    def clave(m: Move):
        col, row = m.destination
        return (-round(abs(m.end[0] - geometry.lane_x), 9), signo * row, col)

    ordenados = sorted(moves, key=clave)
    return [replace(m, order_rank=k) for k, m in enumerate(ordenados)]


def plan_cycle(
    geometry: LatticeGeometry,
    loading_occupancy: np.ndarray,
    storage_occupancy: np.ndarray,
    target: TargetPattern,
    d_min: float = D_MIN_UM,
    exact_limit: int = EXACT_ASSIGNMENT_LIMIT,
) -> MovePlan:
    """
    Plan de reordenamiento de un ciclo.

    Args:
        geometry (LatticeGeometry): Red
        loading_occupancy (np.ndarray): Ocupación [row, col]; se usa la zona de carga
        storage_occupancy (np.ndarray): Ocupación [row, col]; se usa la zona de almacenamiento
        target (TargetPattern): Patrón objetivo
        d_min (float): Despeje mínimo (μm)
        exact_limit (int): Límite de la asignación exacta

    Returns:
        MovePlan: Plan ordenado; si ningún orden elimina las violaciones,
                  se devuelve con las restantes listadas
    """
    carga = np.asarray(loading_occupancy, dtype=bool) & geometry.loading_mask
    almacen = np.asarray(storage_occupancy, dtype=bool) & geometry.storage_mask
    if carga.shape != geometry.shape or almacen.shape != geometry.shape:
        raise DataError("Las ocupaciones no coinciden con la forma de la red")

    cargados = occupied_sites(carga)
    vacantes = occupied_sites(target.mask(geometry) & ~almacen)
    pares = assign_targets(cargados, vacantes, geometry, exact_limit)
    origenes = {s for s, _ in pares}
    sin_pareja = [s for s in cargados if s not in origenes]

    movimientos = [route_move(geometry, s, d, target.approach_rows) for s, d in pares]
    inicio = carga | almacen

    mejor: Optional[MovePlan] = None
    for arriba_abajo in (True, False):
        plan = MovePlan(
            moves=order_moves(geometry, movimientos, arriba_abajo),
            d_min=d_min,
            unpaired=sin_pareja,
        )
        plan.violations = validate_plan(geometry, plan, inicio)
        if mejor is None or len(plan.violations) < len(mejor.violations):
            mejor = plan
        if plan.is_valid:
            break
    return mejor


# ----------------------------------------------------------------------
# Trayectorias
# ----------------------------------------------------------------------
def stroke_motion_time(length: float, kinematics: KinematicParams) -> float:
    """Duración (ms) del perfil trapezoidal suave para un trazo."""
    if length <= 0:
        return 0.0
    v, ta = kinematics.peak_velocity, kinematics.accel_time
    if length >= v * ta:
        return length / v + ta
    return 2.0 * ta


def _ramp_distance(t: np.ndarray, v: float, ta: float) -> np.ndarray:
    # Integral de v·sin²(πt/2ta)
    return v * (t / 2.0 - ta / (2.0 * np.pi) * np.sin(np.pi * t / ta))


def stroke_progress(length: float, kinematics: KinematicParams, t: np.ndarray) -> np.ndarray:
    """Distancia recorrida en el trazo al tiempo t (ms), velocidad nula en los extremos."""
    t = np.asarray(t, dtype=float)
    ta = kinematics.accel_time
    total = stroke_motion_time(length, kinematics)
    if total == 0.0:
        return np.zeros_like(t)
    v = kinematics.peak_velocity if length >= kinematics.peak_velocity * ta else length / ta
    t = np.clip(t, 0.0, total)
    resto = total - t
    return np.where(
        t <= ta,
        _ramp_distance(t, v, ta),
        np.where(resto <= ta, length - _ramp_distance(resto, v, ta), v * ta / 2.0 + v * (t - ta)),
    )


def move_duration(move: Move, kinematics: KinematicParams) -> float:
    """Rampa de subida + movimiento por trazos + rampa de bajada (ms)."""
    return 2.0 * kinematics.ramp_ms + sum(stroke_motion_time(d, kinematics) for d in move.stroke_lengths)


def _phase_times(duration: float, step: float) -> np.ndarray:
    tiempos = np.arange(0.0, duration, step)
    # sin muestras casi duplicadas junto al final
    tiempos = tiempos[duration - tiempos > 1e-6 * step]
    return np.append(tiempos, duration)


def synthesize_trajectory(move: Move, kinematics: KinematicParams = KinematicParams()) -> TweezerTrajectory:
    """
    Trayectoria muestreada de la pinza: rampa de profundidad, trazos con
    perfil trapezoidal suave y parada en cada esquina, rampa de bajada.
    """
    rampa = kinematics.ramp_ms
    paso = kinematics.sample_step
    prof = kinematics.depth_ratio
    bloques = []
    t0 = 0.0

    tiempos = _phase_times(rampa, paso)
    x0, y0 = move.start
    bloques.append(np.column_stack([
        tiempos, np.full_like(tiempos, x0), np.full_like(tiempos, y0),
        prof * np.sin(np.pi * tiempos / (2.0 * rampa)) ** 2,
    ]))
    t0 += rampa

    for (a, b), largo in zip(move.strokes, move.stroke_lengths):
        duracion = stroke_motion_time(largo, kinematics)
        tiempos = _phase_times(duracion, paso)
        s = stroke_progress(largo, kinematics, tiempos)
        u = s / largo
        bloques.append(np.column_stack([
            t0 + tiempos,
            a[0] + (b[0] - a[0]) * u,
            a[1] + (b[1] - a[1]) * u,
            np.full_like(tiempos, prof),
        ])[1:])
        t0 += duracion

    tiempos = _phase_times(rampa, paso)
    x1, y1 = move.end
    bloques.append(np.column_stack([
        t0 + tiempos, np.full_like(tiempos, x1), np.full_like(tiempos, y1),
        prof * np.cos(np.pi * tiempos / (2.0 * rampa)) ** 2,
    ])[1:])
    t0 += rampa

    muestras = np.vstack(bloques)
    muestras[-1, 3] = 0.0
    return TweezerTrajectory(samples=muestras, total_duration=t0)


def plan_duration(plan: MovePlan, kinematics: KinematicParams = KinematicParams()) -> float:
    """Duración total (ms) con ejecución secuencial de los movimientos."""
    return float(sum(move_duration(m, kinematics) for m in plan.moves))


def plan_summary(plan: MovePlan, kinematics: KinematicParams = KinematicParams()) -> Dict[str, float]:
    largos = [m.length for m in plan.moves]
    return {
        "moves": len(plan.moves),
        "violations": len(plan.violations),
        "unpaired": len(plan.unpaired),
        "duration_ms": plan_duration(plan, kinematics),
        "mean_length_um": float(np.mean(largos)) if largos else 0.0,
    }
