"""
📊 SERVICIO DE ANÁLISIS DE SECUENCIAS DE IMÁGENES
=================================================
Estadísticas de supervivencia y ganancia entre imágenes, métricas por
ciclo, fluctuación del número de átomos, coeficientes de Pearson, ajuste
del decaimiento y superposición del modelo de recurrencia.

Índices aumentados: para el par de ciclos (i, i+1) las imágenes son
1 = I1(i), 2 = I2(i), 1' = I1(i+1), 2' = I2(i+1).

Todas las funciones son puras sobre secuencias inmutables.

Author: Sistema ARCO
Version: 1.0.0
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import polars as pl

from services.loss_model_service import iterate_recurrence
from utils.errors import UNDEFINED, DataError

MoveTuple = Tuple[Tuple[int, int], Tuple[int, int], bool]

# Cantidades correlacionadas con ΔN_s/N_s
CORRELATED_QUANTITIES = ("s_1p2p", "s_21p", "s_22p", "a_1p2p", "a_21p", "a_22p")
MIN_CORRELATION_PAIRS = 3
MIN_FIT_POINTS = 3


def _as_bool(image) -> np.ndarray:
    return np.asarray(getattr(image, "occupied", image), dtype=bool)


@dataclass(frozen=True)
class ImageSequence:
    """
    Imágenes de ocupación observadas, alternando etiquetas 1, 2 por ciclo.

    Las máscaras se indexan [row, col]; moves guarda por ciclo las tuplas
    (origen, destino, éxito) de los movimientos ejecutados.
    """

    images: Tuple[np.ndarray, ...]
    target_mask: np.ndarray
    loading_mask: np.ndarray
    tweezer_mask: np.ndarray
    tags: Tuple[int, ...] = ()
    moves: Tuple[Tuple[MoveTuple, ...], ...] = ()

    def __post_init__(self):
        imagenes = tuple(_as_bool(im) for im in self.images)
        object.__setattr__(self, "images", imagenes)
        if not self.tags:
            object.__setattr__(self, "tags", tuple(1 + k % 2 for k in range(len(imagenes))))
        if len(imagenes) % 2 != 0:
            raise DataError(f"La secuencia tiene {len(imagenes)} imágenes; se esperan pares (1, 2) por ciclo")
        esperadas = tuple(1 + k % 2 for k in range(len(imagenes)))
        if tuple(self.tags) != esperadas:
            raise DataError("Las etiquetas de imagen deben alternar 1, 2, 1, 2, ...")
        forma = np.shape(self.target_mask)
        for nombre in ("loading_mask", "tweezer_mask"):
            if np.shape(getattr(self, nombre)) != forma:
                raise DataError(f"{nombre} no coincide con la forma de la máscara objetivo")
        if any(im.shape != forma for im in imagenes):
            raise DataError(f"Todas las imágenes deben tener forma {forma}")
        if np.any(np.asarray(self.target_mask, bool) & np.asarray(self.loading_mask, bool)):
            raise DataError("La máscara objetivo debe estar fuera de la zona de carga")
        if self.moves and len(self.moves) != self.n_cycles:
            raise DataError("Se requiere una lista de movimientos por ciclo")

    @classmethod
    def from_trace(cls, trace) -> "ImageSequence":
        """Construye la secuencia a partir de una RunTrace del simulador."""
        imagenes = []
        for registro in trace.records:
            imagenes.extend([registro.image1.occupied, registro.image2.occupied])
        return cls(
            images=tuple(imagenes),
            target_mask=trace.masks["target"],
            loading_mask=trace.masks["loading"],
            tweezer_mask=trace.masks["tweezer"],
            moves=tuple(
                tuple((m.source, m.destination, m.succeeded) for m in registro.moves)
                for registro in trace.records
            ),
        )

    @property
    def n_cycles(self) -> int:
        return len(self.images) // 2

    @property
    def n_tweezers(self) -> int:
        return int(np.count_nonzero(self.tweezer_mask))

    def image1(self, cycle: int) -> np.ndarray:
        return self.images[2 * cycle]

    def image2(self, cycle: int) -> np.ndarray:
        return self.images[2 * cycle + 1]

    def destination_mask(self, cycle: int) -> Optional[np.ndarray]:
        """Destinos de los movimientos del ciclo, o None si no hay registro de movimientos."""
        if not self.moves:
            return None
        mask = np.zeros(np.shape(self.target_mask), dtype=bool)
        for _, (col, row), _ in self.moves[cycle]:
            mask[row, col] = True
        return mask

    def stored_counts(self) -> List[int]:
        """N_s(i): sitios objetivo ocupados en la imagen 2 de cada ciclo."""
        objetivo = np.asarray(self.target_mask, dtype=bool)
        return [int(np.count_nonzero(self.image2(i) & objetivo)) for i in range(self.n_cycles)]


@dataclass
class FractionSeries:
    """
    Series por ciclo (longitud n_cycles) y por par de ciclos (longitud n_cycles - 1).

    Los valores indefinidos son UNDEFINED.
    """

    loading_fraction: List[Optional[float]]
    move_success: List[Optional[float]]
    stored_survival: List[Optional[float]]
    n_loaded: List[int]
    stored_count: List[int]
    n_arrivals: List[int] = field(default_factory=list)
    shelved_survival: List[Optional[float]] = field(default_factory=list)
    s_1p2p: List[Optional[float]] = field(default_factory=list)
    s_22p: List[Optional[float]] = field(default_factory=list)
    a_1p2p: List[Optional[float]] = field(default_factory=list)
    a_21p: List[Optional[float]] = field(default_factory=list)
    a_22p: List[Optional[float]] = field(default_factory=list)
    delta_ns: List[Optional[float]] = field(default_factory=list)

    @property
    def s_21p(self) -> List[Optional[float]]:
        return self.shelved_survival


@dataclass(frozen=True)
class CorrelationReport:
    coefficients: Dict[str, Optional[float]]
    n_pairs: int

    def strongest(self) -> Optional[str]:
        """Cantidad con mayor |ρ| entre las definidas."""
        definidos = {k: v for k, v in self.coefficients.items() if v is not None}
        if not definidos:
            return None
        return max(definidos, key=lambda k: abs(definidos[k]))


@dataclass(frozen=True)
class DecayFit:
    survival: float
    alpha_c: float
    window: Tuple[int, int]
    residual_norm: float
    intercept: float = 0.0


# ----------------------------------------------------------------------
# Fracciones de Apéndice
# ----------------------------------------------------------------------
def _pair(image_m, image_n, mask) -> Tuple[np.ndarray, np.ndarray]:
    m = _as_bool(image_m)
    n = _as_bool(image_n)
    if m.shape != n.shape:
        raise DataError(f"Las imágenes no comparten geometría: {m.shape} vs {n.shape}")
    if mask is not None:
        region = np.asarray(mask, dtype=bool)
        if region.shape != m.shape:
            raise DataError("La máscara no coincide con la forma de las imágenes")
        m, n = m & region, n & region
    return m, n


def survival_fraction(image_m, image_n, mask=None) -> Optional[float]:
    """
    s_mn: fracción de sitios llenos en m que siguen llenos en n.

    Returns:
        float o UNDEFINED si m no tiene sitios ocupados en la máscara
    """
    m, n = _pair(image_m, image_n, mask)
    llenos = int(np.count_nonzero(m))
    if llenos == 0:
        return UNDEFINED
    return int(np.count_nonzero(m & n)) / llenos


def gain_fraction(image_m, image_n, mask=None) -> Optional[float]:
    """a_mn: fracción de los sitios llenos en n que estaban vacíos en m."""
    m, n = _pair(image_m, image_n, mask)
    llenos = int(np.count_nonzero(n))
    if llenos == 0:
        return UNDEFINED
    return int(np.count_nonzero(~m & n)) / llenos


def atom_number_fluctuation(sequence: ImageSequence) -> List[Optional[float]]:
    """ΔN_s/N_s entre ciclos consecutivos (imagen 2 sobre la máscara objetivo)."""
    if sequence.n_cycles < 2:
        raise DataError("atom_number_fluctuation requiere al menos 2 ciclos")
    conteos = sequence.stored_counts()
    return [
        UNDEFINED if actual == 0 else (siguiente - actual) / actual
        for actual, siguiente in zip(conteos[:-1], conteos[1:])
    ]


def pearson(x_series: Sequence[Optional[float]], y_series: Sequence[Optional[float]]) -> Optional[float]:
    """
    Coeficiente de Pearson con normalización poblacional (1/N) en la
    covarianza y en las desviaciones. Los pares con algún valor indefinido
    se descartan.

    Returns:
        float en [-1, 1] o UNDEFINED si queda menos de 2 pares o una serie es constante
    """
    if len(x_series) != len(y_series):
        raise DataError(f"Las series tienen longitudes distintas: {len(x_series)} y {len(y_series)}")
    pares = [(x, y) for x, y in zip(x_series, y_series) if x is not None and y is not None]
    if len(pares) < 2:
        return UNDEFINED
    x = np.array([p[0] for p in pares], dtype=float)
    y = np.array([p[1] for p in pares], dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return UNDEFINED
    dx = x - x.mean()
    dy = y - y.mean()
    rho = np.mean(dx * dy) / math.sqrt(np.mean(dx * dx) * np.mean(dy * dy))
    return float(np.clip(rho, -1.0, 1.0))


# ----------------------------------------------------------------------
# Métricas por ciclo
# ----------------------------------------------------------------------
def per_cycle_metrics(sequence: ImageSequence) -> FractionSeries:
    """
    Calcula los cuatro parámetros de interés y las fracciones entre ciclos.

    - n_loaded: pinzas ocupadas en la imagen 1 (N_L)
    - loading_fraction: N_L / número de pinzas
    - move_success: sitios objetivo vacíos en la imagen 1 y llenos en la 2
      (solo destinos de movimientos si hay registro) / átomos cargados
    - stored_survival: s_12 dentro del ciclo sobre sitios objetivo que no
      fueron destino de un movimiento
    - shelved_survival: s_21' entre ciclos

    Args:
        sequence (ImageSequence): Secuencia observada

    Returns:
        FractionSeries: Series con UNDEFINED donde el denominador es cero
    """
    objetivo = np.asarray(sequence.target_mask, dtype=bool)
    pinzas = np.asarray(sequence.tweezer_mask, dtype=bool)
    n_pinzas = sequence.n_tweezers

    carga_frac, exito, supervivencia, cargados, arribos = [], [], [], [], []
    for i in range(sequence.n_cycles):
        im1, im2 = sequence.image1(i), sequence.image2(i)
        n_l = int(np.count_nonzero(im1 & pinzas))
        cargados.append(n_l)
        carga_frac.append(UNDEFINED if n_pinzas == 0 else n_l / n_pinzas)

        destinos = sequence.destination_mask(i)
        llegadas = objetivo & ~im1 & im2
        if destinos is not None:
            llegadas &= destinos
        n_arr = int(np.count_nonzero(llegadas))
        arribos.append(n_arr)
        exito.append(UNDEFINED if n_l == 0 else min(1.0, n_arr / n_l))

        quietos = objetivo if destinos is None else objetivo & ~destinos
        supervivencia.append(survival_fraction(im1, im2, quietos))

    serie = FractionSeries(
        loading_fraction=carga_frac,
        move_success=exito,
        stored_survival=supervivencia,
        n_loaded=cargados,
        stored_count=sequence.stored_counts(),
        n_arrivals=arribos,
    )
    for i in range(sequence.n_cycles - 1):
        i2, i1p, i2p = sequence.image2(i), sequence.image1(i + 1), sequence.image2(i + 1)
        serie.shelved_survival.append(survival_fraction(i2, i1p, objetivo))
        serie.s_1p2p.append(survival_fraction(i1p, i2p, objetivo))
        serie.s_22p.append(survival_fraction(i2, i2p, objetivo))
        serie.a_1p2p.append(gain_fraction(i1p, i2p, objetivo))
        serie.a_21p.append(gain_fraction(i2, i1p, objetivo))
        serie.a_22p.append(gain_fraction(i2, i2p, objetivo))
    if sequence.n_cycles >= 2:
        serie.delta_ns = atom_number_fluctuation(sequence)
    return serie


def correlation_report(sequence: ImageSequence) -> CorrelationReport:
    """ρ(q, ΔN_s/N_s) para cada cantidad de CORRELATED_QUANTITIES, alineadas por par de ciclos."""
    pares = sequence.n_cycles - 1
    if pares < MIN_CORRELATION_PAIRS:
        raise DataError(
            f"correlation_report requiere al menos {MIN_CORRELATION_PAIRS} pares de ciclos "
            f"({MIN_CORRELATION_PAIRS + 1} ciclos); la secuencia tiene {sequence.n_cycles}"
        )
    serie = per_cycle_metrics(sequence)
    coeficientes = {q: pearson(getattr(serie, q), serie.delta_ns) for q in CORRELATED_QUANTITIES}
    return CorrelationReport(coefficients=coeficientes, n_pairs=pares)


def fit_decay(stored_counts: Sequence[float], window: Optional[Tuple[int, int]] = None) -> DecayFit:
    """
    Ajuste log-lineal por mínimos cuadrados de N_i sobre la ventana [a, b).

    Args:
        stored_counts: Serie N_i
        window: Ventana semiabierta (a, b); None usa toda la serie

    Returns:
        DecayFit: survival = exp(pendiente) acotada a ≤ 1, alpha_c = 1 - survival
    """
    conteos = np.asarray(stored_counts, dtype=float)
    a, b = window if window is not None else (0, len(conteos))
    if a < 0 or b > len(conteos) or a >= b:
        raise DataError(f"Ventana de ajuste inválida {a}:{b} para {len(conteos)} ciclos")
    if b - a < MIN_FIT_POINTS:
        raise DataError(f"El ajuste del decaimiento requiere al menos {MIN_FIT_POINTS} puntos (ventana {a}:{b})")
    tramo = conteos[a:b]
    if np.any(tramo <= 0):
        raise DataError(f"Conteos no positivos en la ventana {a}:{b}; no se puede tomar el logaritmo")

    ciclos = np.arange(a, b, dtype=float)
    logaritmo = np.log(tramo)
    pendiente, intercepto = np.polyfit(ciclos, logaritmo, 1)
    residuo = float(np.linalg.norm(logaritmo - (pendiente * ciclos + intercepto)))
    supervivencia = float(min(1.0, math.exp(pendiente)))
    return DecayFit(
        survival=supervivencia,
        alpha_c=1.0 - supervivencia,
        window=(a, b),
        residual_norm=residuo,
        intercept=float(intercepto),
    )


def count_parameters(
    stored_counts: Sequence[float], arrivals: Sequence[float], loaded: Sequence[float]
) -> Dict[str, Optional[float]]:
    """
    Parámetros de la recurrencia a partir de conteos por ciclo.

    Los átomos que siguen guardados de un ciclo al siguiente son N_s(i+1)
    menos los que llegaron en el ciclo i+1, así que
    α_c = 1 - Σ(N_s(i+1) - llegadas(i+1)) / ΣN_s(i) y α_r = 1 - Σllegadas / ΣN_L.
    Los sitios rellenados no entran en α_c y los falsos positivos de la zona
    de carga fuera de las pinzas no entran en N_L.

    Args:
        stored_counts: N_s por ciclo (imagen 2)
        arrivals: Sitios objetivo vacíos en la imagen 1 y llenos en la 2
        loaded: N_L por ciclo

    Returns:
        dict: alpha_c, alpha_r (UNDEFINED sin denominador), n_load y n0
    """
    n_s = np.asarray(stored_counts, dtype=float)
    llegadas = np.asarray(arrivals, dtype=float)
    cargados = np.asarray(loaded, dtype=float)
    if len(n_s) == 0 or len(llegadas) != len(n_s) or len(cargados) != len(n_s):
        raise DataError("Las series de conteos deben ser no vacías y de igual longitud")

    previos = float(n_s[:-1].sum())
    alpha_c = UNDEFINED
    if len(n_s) >= 2 and previos > 0:
        quedan = float((n_s[1:] - llegadas[1:]).sum())
        alpha_c = float(np.clip(1.0 - quedan / previos, 0.0, 1.0))
    total_cargados = float(cargados.sum())
    alpha_r = UNDEFINED
    if total_cargados > 0:
        alpha_r = float(np.clip(1.0 - llegadas.sum() / total_cargados, 0.0, 1.0))
    return {
        "alpha_c": alpha_c,
        "alpha_r": alpha_r,
        "n_load": float(cargados.mean()),
        "n0": float(n_s[0]),
    }


def measured_parameters(sequence: ImageSequence) -> Dict[str, Optional[float]]:
    """Parámetros medidos sobre la secuencia: α_c, α_r, N_L medio y N_0 (ver count_parameters)."""
    serie = per_cycle_metrics(sequence)
    return count_parameters(serie.stored_count, serie.n_arrivals, serie.n_loaded)


def _recurrence_from(medidos: Dict[str, Optional[float]], n_cycles: int) -> List[float]:
    if medidos["alpha_c"] is None:
        raise DataError("No se pudo medir alpha_c: no hay pares de ciclos con átomos guardados")
    alpha_r = medidos["alpha_r"] if medidos["alpha_r"] is not None else 0.0
    return iterate_recurrence(medidos["n0"], medidos["n_load"], alpha_r, medidos["alpha_c"], n_cycles - 1)


def model_overlay(sequence: ImageSequence, params: Optional[Dict[str, float]] = None) -> List[float]:
    """
    Serie N_i predicha por la recurrencia con los parámetros medidos.

    Args:
        sequence (ImageSequence): Secuencia observada (no vacía)
        params (dict): Valores que reemplazan a los medidos (alpha_c, alpha_r, n_load, n0)

    Returns:
        List[float]: N_0..N_{n-1} partiendo del N_0 observado
    """
    if sequence.n_cycles == 0:
        raise DataError("La secuencia está vacía")
    medidos = measured_parameters(sequence)
    medidos.update(params or {})
    return _recurrence_from(medidos, sequence.n_cycles)


def counts_overlay_table(
    stored_counts: Sequence[float],
    arrivals: Sequence[float],
    loaded: Sequence[float],
    params: Optional[Dict[str, float]] = None,
) -> pl.DataFrame:
    """Superposición observada/modelo cuando solo se tienen los conteos por ciclo (sin imágenes)."""
    medidos = count_parameters(stored_counts, arrivals, loaded)
    medidos.update(params or {})
    return pl.DataFrame({
        "cycle": list(range(len(stored_counts))),
        "observed": [float(v) for v in stored_counts],
        "model": _recurrence_from(medidos, len(stored_counts)),
    })


# ----------------------------------------------------------------------
# Tablas
# ----------------------------------------------------------------------
def _pad(valores: List[Optional[float]], largo: int) -> List[Optional[float]]:
    return list(valores) + [UNDEFINED] * (largo - len(valores))


def fraction_table(sequence: ImageSequence) -> pl.DataFrame:
    """Una fila por ciclo y una columna por serie; las cantidades entre ciclos quedan en la fila i del par (i, i+1)."""
    serie = per_cycle_metrics(sequence)
    n = sequence.n_cycles
    return pl.DataFrame(
        {
            "cycle": list(range(n)),
            "n_loaded": serie.n_loaded,
            "stored_count": serie.stored_count,
            "loading_fraction": serie.loading_fraction,
            "move_success": serie.move_success,
            "stored_survival": serie.stored_survival,
            "s_21p": _pad(serie.shelved_survival, n),
            "s_1p2p": _pad(serie.s_1p2p, n),
            "s_22p": _pad(serie.s_22p, n),
            "a_1p2p": _pad(serie.a_1p2p, n),
            "a_21p": _pad(serie.a_21p, n),
            "a_22p": _pad(serie.a_22p, n),
            "delta_ns_over_ns": _pad(serie.delta_ns, n),
        },
        schema_overrides={
            "loading_fraction": pl.Float64,
            "move_success": pl.Float64,
            "stored_survival": pl.Float64,
            "s_21p": pl.Float64,
            "s_1p2p": pl.Float64,
            "s_22p": pl.Float64,
            "a_1p2p": pl.Float64,
            "a_21p": pl.Float64,
            "a_22p": pl.Float64,
            "delta_ns_over_ns": pl.Float64,
        },
    )


def ensemble_band(series: Sequence[Sequence[float]], k: float = 3.0) -> pl.DataFrame:
    """Media, σ y banda mean ± k·σ por ciclo sobre un conjunto de series de igual longitud."""
    if not series:
        raise DataError("ensemble_band requiere al menos una serie")
    largos = {len(s) for s in series}
    if len(largos) != 1:
        raise DataError(f"Las series del ensamble tienen longitudes distintas: {sorted(largos)}")
    matriz = np.asarray(series, dtype=float)
    media = matriz.mean(axis=0)
    sigma = matriz.std(axis=0)
    return pl.DataFrame({
        "cycle": np.arange(matriz.shape[1]),
        "mean": media,
        "std": sigma,
        "lower": media - k * sigma,
        "upper": media + k * sigma,
    })


def overlay_table(sequence: ImageSequence, params: Optional[Dict[str, float]] = None) -> pl.DataFrame:
    observados = sequence.stored_counts()
    prediccion = model_overlay(sequence, params)
    return pl.DataFrame({
        "cycle": list(range(sequence.n_cycles)),
        "observed": [float(v) for v in observados],
        "model": prediccion,
    })


def correlation_table(report: CorrelationReport, references: Optional[Dict[str, float]] = None) -> pl.DataFrame:
    referencias = references or {}
    return pl.DataFrame(
        {
            "quantity": list(report.coefficients),
            "pearson": [report.coefficients[q] for q in report.coefficients],
            "reference": [referencias.get(q) for q in report.coefficients],
        },
        schema_overrides={"pearson": pl.Float64, "reference": pl.Float64},
    )
