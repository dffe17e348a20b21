"""
🧭 SERVICIO DE GEOMETRÍA DE LA RED
==================================
Red bow-tie con zona de carga, zona de almacenamiento, pinzas superpuestas,
potencial de atrapamiento y distancias de despeje entre trayectorias y átomos.

Convenciones:
- Origen en el sitio (0, 0), x hacia la derecha, y hacia arriba, todo en μm.
- Un sitio se identifica con la tupla (col, row).
- Las matrices de ocupación se indexan [row, col].

Author: Sistema ARCO
Version: 1.0.0
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from utils.constants import (
    SPACING_X,
    SPACING_Y,
    N_COLS,
    N_ROWS,
    LOADING_COLS,
    GUARD_COLS,
    TWEEZER_COLS,
    TWEEZER_ROWS,
    TWEEZER_COL_STRIDE,
    TWEEZER_ROW_STRIDE,
    TWEEZER_COL_START,
    TARGET_ROW_STRIDE,
    TARGET_COL_STRIDE,
    LATTICE_DEPTH_UK,
    TWEEZER_DEPTH_RATIO,
    POTENTIAL_FORM,
)
from utils.errors import ConfigError, DataError

Site = Tuple[int, int]
Point = Tuple[float, float]

# Tolerancia para comparar coordenadas en μm
COORD_TOL = 1e-9


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class LatticeGeometry:
    """
    Red de sitios con una zona de carga (bloque de columnas a la izquierda),
    una franja de guarda y la zona de almacenamiento (resto de columnas).

    Los valores son inmutables tras la construcción y seguros para lectura
    concurrente.
    """

    spacing_x: float = SPACING_X
    spacing_y: float = SPACING_Y
    n_cols: int = N_COLS
    n_rows: int = N_ROWS
    loading_cols: int = LOADING_COLS
    guard_cols: int = GUARD_COLS
    tweezer_sites: FrozenSet[Site] = field(default_factory=frozenset)

    def __post_init__(self):
        if not (self.spacing_x > 0 and self.spacing_y > 0):
            raise ConfigError("Los espaciados de la red deben ser positivos")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ConfigError("La red necesita al menos un sitio (n_cols·n_rows ≥ 1)")
        if self.loading_cols < 0 or self.guard_cols < 0:
            raise ConfigError("loading_cols y guard_cols no pueden ser negativos")
        if self.loading_cols + self.guard_cols > self.n_cols:
            raise ConfigError("La zona de carga y la guarda exceden el número de columnas")
        fuera = [s for s in self.tweezer_sites if not self.in_loading_zone(*s)]
        if fuera:
            raise ConfigError(f"Pinzas fuera de la zona de carga: {sorted(fuera)[:5]}")

    # ------------------------------------------------------------------
    # Zonas
    # ------------------------------------------------------------------
    @property
    def first_storage_col(self) -> int:
        return self.loading_cols + self.guard_cols

    @property
    def n_sites(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def shape(self) -> Tuple[int, int]:
        """Forma (n_rows, n_cols) de las matrices de ocupación."""
        return (self.n_rows, self.n_cols)

    @property
    def extent(self) -> Tuple[float, float]:
        """Extensión (ancho, alto) en μm entre el primer y el último sitio."""
        return ((self.n_cols - 1) * self.spacing_x, (self.n_rows - 1) * self.spacing_y)

    @property
    def lane_x(self) -> float:
        """
        Carril vertical de transporte entre zonas: a media columna dentro del
        borde de la zona de carga, a (guard_cols + 1.5)·spacing_x de la
        primera columna de almacenamiento.
        """
        return (self.loading_cols - 1.5) * self.spacing_x

    def is_valid_site(self, col: int, row: int) -> bool:
        return 0 <= col < self.n_cols and 0 <= row < self.n_rows

    def in_loading_zone(self, col: int, row: int) -> bool:
        return self.is_valid_site(col, row) and col < self.loading_cols

    def in_storage_zone(self, col: int, row: int) -> bool:
        return self.is_valid_site(col, row) and col >= self.first_storage_col

    @cached_property
    def loading_zone(self) -> FrozenSet[Site]:
        return frozenset((c, r) for c in range(self.loading_cols) for r in range(self.n_rows))

    @cached_property
    def storage_zone(self) -> FrozenSet[Site]:
        return frozenset(
            (c, r) for c in range(self.first_storage_col, self.n_cols) for r in range(self.n_rows)
        )

    @cached_property
    def loading_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[:, : self.loading_cols] = True
        return _readonly(mask)

    @cached_property
    def storage_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[:, self.first_storage_col:] = True
        return _readonly(mask)

    @cached_property
    def tweezer_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for col, row in self.tweezer_sites:
            mask[row, col] = True
        return _readonly(mask)

    @cached_property
    def site_points(self) -> np.ndarray:
        """Posiciones (x, y) de todos los sitios, con forma (n_rows, n_cols, 2)."""
        cols, rows = np.meshgrid(np.arange(self.n_cols), np.arange(self.n_rows))
        puntos = np.stack([cols * self.spacing_x, rows * self.spacing_y], axis=-1).astype(float)
        return _readonly(puntos)

    def points_of(self, mask: np.ndarray) -> np.ndarray:
        """Posiciones de los sitios marcados en una máscara [row, col]."""
        return self.site_points[np.asarray(mask, dtype=bool)]

    def empty_occupancy(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=bool)


@dataclass(frozen=True)
class SitePosition:
    col: int
    row: int
    point: Point


@dataclass(frozen=True)
class TargetPattern:
    """
    Sitios objetivo del registro de almacenamiento.

    El trazo horizontal de aproximación corre a mitad de camino entre filas
    objetivo (approach_rows = row_stride/2 filas de la fila destino), de modo
    que la distancia a los átomos guardados no depende del orden de llenado.
    """

    sites: Tuple[Site, ...]
    row_stride: int = TARGET_ROW_STRIDE
    col_stride: int = TARGET_COL_STRIDE

    @property
    def approach_rows(self) -> float:
        return self.row_stride / 2.0

    @property
    def capacity(self) -> int:
        return len(self.sites)

    def mask(self, geometry: LatticeGeometry) -> np.ndarray:
        mask = np.zeros(geometry.shape, dtype=bool)
        for col, row in self.sites:
            mask[row, col] = True
        return mask


@dataclass(frozen=True)
class PotentialModel:
    lattice_depth: float = LATTICE_DEPTH_UK
    tweezer_depth_ratio: float = TWEEZER_DEPTH_RATIO
    form: str = POTENTIAL_FORM

    def __post_init__(self):
        if self.form not in POTENTIAL_FORMS:
            raise ConfigError(
                f"Modelo de potencial desconocido '{self.form}'. Opciones: {sorted(POTENTIAL_FORMS)}"
            )
        if self.lattice_depth <= 0:
            raise ConfigError("lattice_depth debe ser positiva")


# ----------------------------------------------------------------------
# Formas del potencial (periódicas, mínimos en los sitios)
# ----------------------------------------------------------------------
def _separable(x: np.ndarray, y: np.ndarray, ax: float, ay: float) -> np.ndarray:
    return np.cos(np.pi * x / ax) ** 2 * np.cos(np.pi * y / ay) ** 2


def _anisotropic(x: np.ndarray, y: np.ndarray, ax: float, ay: float) -> np.ndarray:
    # 10% de confinamiento solo en y: filas más profundas que los pasillos
    cy = np.cos(np.pi * y / ay) ** 2
    return 0.9 * np.cos(np.pi * x / ax) ** 2 * cy + 0.1 * cy


POTENTIAL_FORMS: Dict[str, Callable[[np.ndarray, np.ndarray, float, float], np.ndarray]] = {
    "separable": _separable,
    "anisotropic": _anisotropic,
}


# ----------------------------------------------------------------------
# Construcción
# ----------------------------------------------------------------------
def build_tweezer_sites(
    n_rows: int,
    tweezer_cols: int = TWEEZER_COLS,
    tweezer_rows: int = TWEEZER_ROWS,
    col_stride: int = TWEEZER_COL_STRIDE,
    row_stride: int = TWEEZER_ROW_STRIDE,
    col_start: int = TWEEZER_COL_START,
    row_start: Optional[int] = None,
) -> FrozenSet[Site]:
    """
    Genera la rejilla rectangular de pinzas dentro de la zona de carga.

    Args:
        n_rows (int): Filas de la red
        tweezer_cols (int): Columnas de pinzas
        tweezer_rows (int): Filas de pinzas
        col_stride (int): Separación entre pinzas en columnas de red
        row_stride (int): Separación entre pinzas en filas de red
        col_start (int): Primera columna de red con pinza
        row_start (int): Primera fila; None centra la rejilla en y

    Returns:
        FrozenSet[Site]: Sitios (col, row) de las pinzas
    """
    if row_start is None:
        alto = (tweezer_rows - 1) * row_stride
        row_start = max(0, (n_rows - 1 - alto) // 2)
    return frozenset(
        (col_start + i * col_stride, row_start + j * row_stride)
        for i in range(tweezer_cols)
        for j in range(tweezer_rows)
    )


def default_geometry() -> LatticeGeometry:
    """Geometría de campo completo (~130 μm × 130 μm, ~24000 sitios, 323 pinzas)."""
    return LatticeGeometry(tweezer_sites=build_tweezer_sites(N_ROWS))


def build_target_pattern(
    geometry: LatticeGeometry,
    row_stride: int = TARGET_ROW_STRIDE,
    col_stride: int = TARGET_COL_STRIDE,
    start_row: int = 0,
    start_col: Optional[int] = None,
    max_sites: Optional[int] = None,
) -> TargetPattern:
    """
    Construye el patrón objetivo regular en la zona de almacenamiento.

    Args:
        geometry (LatticeGeometry): Red
        row_stride (int): Separación entre filas objetivo (≥ 2)
        col_stride (int): Separación entre columnas objetivo (≥ 1)
        start_row (int): Primera fila objetivo
        start_col (int): Primera columna objetivo; None usa la primera de almacenamiento
        max_sites (int): Límite opcional de sitios (se recorta en orden fila-columna)

    Returns:
        TargetPattern: Patrón con sitios ordenados por (row, col)
    """
    if row_stride < 2 or col_stride < 1:
        raise ConfigError("El patrón objetivo requiere row_stride ≥ 2 y col_stride ≥ 1")
    if start_col is None:
        start_col = geometry.first_storage_col
    if not geometry.in_storage_zone(start_col, start_row):
        raise ConfigError(f"El sitio inicial del patrón ({start_col}, {start_row}) no está en almacenamiento")

    sitios = [
        (c, r)
        for r in range(start_row, geometry.n_rows, row_stride)
        for c in range(start_col, geometry.n_cols, col_stride)
    ]
    if max_sites is not None:
        sitios = sitios[:max_sites]
    return TargetPattern(sites=tuple(sitios), row_stride=row_stride, col_stride=col_stride)


def validate_target_pattern(geometry: LatticeGeometry, pattern: TargetPattern, d_min: float) -> None:
    """Verifica que el patrón esté en almacenamiento y respete d_min en sus carriles."""
    fuera = [s for s in pattern.sites if not geometry.in_storage_zone(*s)]
    if fuera:
        raise ConfigError(f"Sitios objetivo fuera de la zona de almacenamiento: {fuera[:5]}")
    despeje = travel_clearance(geometry, pattern)
    if despeje < d_min:
        raise ConfigError(
            f"El patrón objetivo deja {despeje:.4f} μm de despeje en los carriles (< d_min = {d_min} μm)"
        )
    vecinos = pattern.col_stride * geometry.spacing_x
    if len({c for c, _ in pattern.sites}) > 1 and vecinos < d_min:
        raise ConfigError(
            f"La inserción vertical pasa a {vecinos:.4f} μm de los vecinos de fila (< d_min = {d_min} μm)"
        )


def travel_clearance(geometry: LatticeGeometry, pattern: TargetPattern) -> float:
    """
    Distancia mínima entre cada línea de aproximación y las filas objetivo.

    Para row_stride = 2 vale spacing_y; para row_stride = 3 vale 1.5·spacing_y.
    """
    filas = sorted({r for _, r in pattern.sites})
    if not filas:
        return math.inf
    ys = np.array(filas, dtype=float) * geometry.spacing_y
    minimo = math.inf
    for fila in filas:
        y_t = approach_y(geometry, fila, pattern.approach_rows)
        minimo = min(minimo, float(np.min(np.abs(ys - y_t))))
    return minimo


def approach_y(geometry: LatticeGeometry, row: int, approach_rows: float) -> float:
    """Línea horizontal de aproximación para una fila destino (encima si cabe, si no debajo)."""
    if row + approach_rows <= geometry.n_rows - 1:
        return (row + approach_rows) * geometry.spacing_y
    if row - approach_rows >= 0:
        return (row - approach_rows) * geometry.spacing_y
    raise DataError(f"No hay espacio para aproximarse a la fila {row} con {approach_rows} filas de margen")


# ----------------------------------------------------------------------
# Operaciones
# ----------------------------------------------------------------------
def site_position(geometry: LatticeGeometry, col: int, row: int) -> Point:
    """
    Posición en μm de un sitio.

    Raises:
        DataError: Si el índice está fuera de rango (indica el eje)
    """
    if not 0 <= col < geometry.n_cols:
        raise DataError(f"Columna fuera de rango en el eje x: {col} (0 ≤ col < {geometry.n_cols})")
    if not 0 <= row < geometry.n_rows:
        raise DataError(f"Fila fuera de rango en el eje y: {row} (0 ≤ row < {geometry.n_rows})")
    return (col * geometry.spacing_x, row * geometry.spacing_y)


def site_record(geometry: LatticeGeometry, col: int, row: int) -> SitePosition:
    return SitePosition(col=col, row=row, point=site_position(geometry, col, row))


def corridor_y(geometry: LatticeGeometry, row: int) -> float:
    """Ordenada del pasillo entre la fila `row` y la fila `row + 1`."""
    if not 0 <= row < geometry.n_rows - 1:
        raise DataError(f"Pasillo fuera de rango: fila {row} (0 ≤ row < {geometry.n_rows - 1})")
    return (row + 0.5) * geometry.spacing_y


def is_corridor_y(geometry: LatticeGeometry, y: float) -> bool:
    k = y / geometry.spacing_y - 0.5
    return abs(k - round(k)) * geometry.spacing_y < COORD_TOL


def is_between_columns_x(geometry: LatticeGeometry, x: float) -> bool:
    k = x / geometry.spacing_x - 0.5
    return abs(k - round(k)) * geometry.spacing_x < COORD_TOL


def potential_at(model: PotentialModel, geometry: LatticeGeometry, point) -> float:
    """
    Profundidad del potencial (μK) en un punto.

    Fuera de la extensión de la red el potencial se extiende periódicamente.
    Vale -lattice_depth en los sitios y es estrictamente menos profundo en
    cualquier otro punto.
    """
    x = np.asarray(point[0], dtype=float)
    y = np.asarray(point[1], dtype=float)
    forma = POTENTIAL_FORMS[model.form]
    valor = -model.lattice_depth * forma(x, y, geometry.spacing_x, geometry.spacing_y)
    return float(valor) if valor.ndim == 0 else valor


def polyline_length(polyline: Sequence[Point]) -> float:
    puntos = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if len(puntos) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(puntos, axis=0), axis=1)))


def sample_polyline(polyline: Sequence[Point], n_samples: int) -> np.ndarray:
    """Muestrea n_samples puntos uniformemente en longitud de arco."""
    puntos = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if len(puntos) == 1:
        return np.repeat(puntos, n_samples, axis=0)
    tramos = np.linalg.norm(np.diff(puntos, axis=0), axis=1)
    acumulado = np.concatenate([[0.0], np.cumsum(tramos)])
    total = acumulado[-1]
    if total == 0.0:
        return np.repeat(puntos[:1], n_samples, axis=0)
    s = np.linspace(0.0, total, n_samples)
    x = np.interp(s, acumulado, puntos[:, 0])
    y = np.interp(s, acumulado, puntos[:, 1])
    return np.column_stack([x, y])


def path_modulation(
    model: PotentialModel, geometry: LatticeGeometry, polyline: Sequence[Point], n_samples: int
) -> Dict[str, float]:
    """
    Modulación del potencial a lo largo de una trayectoria.

    Args:
        model (PotentialModel): Modelo del potencial
        geometry (LatticeGeometry): Red
        polyline (Sequence[Point]): Vértices de la trayectoria (μm)
        n_samples (int): Puntos de muestreo (≥ 2)

    Returns:
        dict: {'min', 'max', 'peak_to_peak'} en μK
    """
    if len(polyline) == 0:
        raise DataError("La trayectoria está vacía")
    if n_samples < 2:
        raise DataError("path_modulation requiere n_samples ≥ 2")
    muestras = sample_polyline(polyline, n_samples)
    valores = potential_at(model, geometry, (muestras[:, 0], muestras[:, 1]))
    minimo, maximo = float(np.min(valores)), float(np.max(valores))
    return {"min": minimo, "max": maximo, "peak_to_peak": maximo - minimo}


def polyline_point_distances(polyline: Sequence[Point], points: np.ndarray) -> np.ndarray:
    """
    Distancia mínima de cada punto a cualquier tramo de la trayectoria.

    Todos los tramos se evalúan a la vez: proyección cerrada de cada punto
    sobre cada segmento, matriz (tramos, puntos) y mínimo por punto.
    """
    vertices = np.asarray(polyline, dtype=float).reshape(-1, 2)
    puntos = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(puntos) == 0:
        return np.empty(0)
    if len(vertices) == 1:
        return np.linalg.norm(puntos - vertices[0], axis=1)
    a = vertices[:-1]
    ab = vertices[1:] - a
    largo2 = np.einsum("sk,sk->s", ab, ab)
    relativo = puntos[None, :, :] - a[:, None, :]
    t = np.einsum("spk,sk->sp", relativo, ab) / np.where(largo2 > 0.0, largo2, 1.0)[:, None]
    t = np.clip(t, 0.0, 1.0)
    resto = relativo - t[:, :, None] * ab[:, None, :]
    return np.sqrt(np.einsum("spk,spk->sp", resto, resto)).min(axis=0)


def exclude_points(points: np.ndarray, excluded: Iterable[Point]) -> np.ndarray:
    """Quita de `points` los que coinciden (a COORD_TOL) con algún punto excluido."""
    puntos = np.asarray(points, dtype=float).reshape(-1, 2)
    excluidos = np.asarray(list(excluded), dtype=float).reshape(-1, 2)
    if len(puntos) == 0 or len(excluidos) == 0:
        return puntos
    cercanos = np.linalg.norm(puntos[:, None, :] - excluidos[None, :, :], axis=2) < COORD_TOL
    return puntos[~cercanos.any(axis=1)]


def min_clearance(
    geometry: LatticeGeometry,
    polyline: Sequence[Point],
    occupied_points: Iterable[Point],
    excluded_points: Iterable[Point] = (),
) -> float:
    """
    Distancia euclídea mínima entre la trayectoria y los puntos ocupados no excluidos.

    Returns:
        float: Distancia en μm, o math.inf si no queda ningún punto ocupado
    """
    if len(polyline) == 0:
        raise DataError("La trayectoria está vacía")
    puntos = exclude_points(np.asarray(list(occupied_points), dtype=float), excluded_points)
    if len(puntos) == 0:
        return math.inf
    return float(np.min(polyline_point_distances(polyline, puntos)))


def occupied_sites(mask: np.ndarray) -> List[Site]:
    """Sitios (col, row) ocupados de una matriz [row, col], en orden lexicográfico."""
    filas, columnas = np.nonzero(np.asarray(mask, dtype=bool))
    return sorted(zip(columnas.tolist(), filas.tolist()))
