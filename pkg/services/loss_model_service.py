"""
📉 SERVICIO DEL MODELO DE PÉRDIDAS
==================================
Fórmulas analíticas del ciclo continuo: factor de amplificación, recurrencia
de acumulación y su estado estacionario, supervivencia en shelving, vacío,
fotoionización en la pinza y éxito de movimiento según la distancia.

Todas las funciones son puras sobre registros inmutables.

Author: Sistema ARCO
Version: 1.0.0
"""

import math
from dataclasses import dataclass, fields
from typing import List, Optional

import numpy as np

from utils.constants import (
    ALPHA_R,
    ALPHA_C,
    N_LOAD,
    LOAD_FRACTION,
    N_TWEEZERS,
    SHELVING_ROUNDTRIP_INFIDELITY,
    SHELVING_LIFETIME_S,
    HOLD_TIME_S,
    MOT_EXTRA_LOSS,
    VACUUM_LIFETIME_S,
    CYCLE_TIME_S,
    HEATING_EXTINCTION,
    DETECTION_INFIDELITY,
    IMAGING_LOSS,
    MOT_BACKGROUND_FILL,
    MOT_SHELVED_DEFECT,
    MOVE_P0,
    DECAY_LENGTH_BETWEEN_UM,
    DECAY_LENGTH_THROUGH_UM,
    IONIZATION_QUADRATIC,
    IONIZATION_LINEAR,
    IONIZATION_CONSTANT,
    D_MIN_UM,
    LOSS_PROBABILITY_INSIDE,
    INTERACTION_RANGE_UM,
    PASSING_LOSS_PROBABILITY,
)
from utils.errors import ConfigError, DomainError

MODE_BETWEEN = "between"
MODE_THROUGH = "through"
MOVE_MODES = (MODE_BETWEEN, MODE_THROUGH)

_PROBABILIDADES = (
    "alpha_r",
    "alpha_c",
    "load_fraction",
    "shelving_roundtrip_infidelity",
    "mot_extra_loss",
    "heating_extinction",
    "detection_infidelity",
    "imaging_loss",
    "mot_background_fill",
    "mot_shelved_defect",
)
_TIEMPOS = ("shelving_lifetime", "hold_time", "vacuum_lifetime", "cycle_time")


@dataclass(frozen=True)
class LossParameters:
    """Todos los canales de pérdida por ciclo (tiempos en s)."""

    alpha_r: float = ALPHA_R
    alpha_c: float = ALPHA_C
    n_load: float = N_LOAD
    load_fraction: float = LOAD_FRACTION
    n_tweezers: int = N_TWEEZERS
    shelving_roundtrip_infidelity: float = SHELVING_ROUNDTRIP_INFIDELITY
    shelving_lifetime: float = SHELVING_LIFETIME_S
    hold_time: float = HOLD_TIME_S
    mot_extra_loss: float = MOT_EXTRA_LOSS
    vacuum_lifetime: float = VACUUM_LIFETIME_S
    cycle_time: float = CYCLE_TIME_S
    heating_extinction: float = HEATING_EXTINCTION
    detection_infidelity: float = DETECTION_INFIDELITY
    imaging_loss: float = IMAGING_LOSS
    mot_background_fill: float = MOT_BACKGROUND_FILL
    mot_shelved_defect: float = MOT_SHELVED_DEFECT

    def __post_init__(self):
        for nombre in _PROBABILIDADES:
            valor = getattr(self, nombre)
            if not 0.0 <= valor <= 1.0:
                raise ConfigError(f"loss.{nombre} debe estar en [0, 1] (recibido {valor})")
        for nombre in _TIEMPOS:
            valor = getattr(self, nombre)
            if nombre == "hold_time":
                if valor < 0:
                    raise ConfigError("loss.hold_time no puede ser negativo")
            elif not valor > 0:
                raise ConfigError(f"loss.{nombre} debe ser positivo (recibido {valor})")
        if self.n_load < 0 or self.n_tweezers < 0:
            raise ConfigError("loss.n_load y loss.n_tweezers no pueden ser negativos")

    def replace(self, **cambios) -> "LossParameters":
        valores = {f.name: getattr(self, f.name) for f in fields(self)}
        valores.update(cambios)
        return LossParameters(**valores)


@dataclass(frozen=True)
class MoveSuccessModel:
    """p(d) = p0·exp(-d/λ_modo), con λ_between > λ_through."""

    p0: float = MOVE_P0
    decay_length_between: float = DECAY_LENGTH_BETWEEN_UM
    decay_length_through: float = DECAY_LENGTH_THROUGH_UM

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ConfigError("move_success.p0 debe estar en [0, 1]")
        if not (self.decay_length_between > 0 and self.decay_length_through > 0):
            raise ConfigError("Las longitudes de decaimiento deben ser positivas")
        if not self.decay_length_between > self.decay_length_through:
            raise ConfigError("Se requiere decay_length_between > decay_length_through")

    def decay_length(self, mode: str) -> float:
        if mode == MODE_BETWEEN:
            return self.decay_length_between
        if mode == MODE_THROUGH:
            return self.decay_length_through
        raise DomainError(f"Modo de movimiento desconocido '{mode}'. Opciones: {MOVE_MODES}")


@dataclass(frozen=True)
class IonizationModel:
    """Tasa de pérdida en la pinza: a·U² + b·U + c (U en mK, tasa en s⁻¹)."""

    quadratic_coefficient: float = IONIZATION_QUADRATIC
    linear_coefficient: float = IONIZATION_LINEAR
    constant_rate: float = IONIZATION_CONSTANT

    def __post_init__(self):
        if min(self.quadratic_coefficient, self.linear_coefficient, self.constant_rate) < 0:
            raise ConfigError("Los coeficientes de ionización no pueden ser negativos")


@dataclass(frozen=True)
class CollateralModel:
    """
    Perturbación de átomos guardados por la pinza en tránsito.

    Por debajo de d_min el átomo se pierde con loss_probability_inside; entre
    d_min e interaction_range cada paso lo pierde con passing_loss_probability.
    """

    d_min: float = D_MIN_UM
    loss_probability_inside: float = LOSS_PROBABILITY_INSIDE
    interaction_range: float = INTERACTION_RANGE_UM
    passing_loss_probability: float = PASSING_LOSS_PROBABILITY

    def __post_init__(self):
        if not self.d_min > 0:
            raise ConfigError("collateral.d_min debe ser positivo")
        for nombre in ("loss_probability_inside", "passing_loss_probability"):
            if not 0.0 <= getattr(self, nombre) <= 1.0:
                raise ConfigError(f"collateral.{nombre} debe estar en [0, 1]")
        if self.interaction_range < self.d_min:
            raise ConfigError("collateral.interaction_range debe ser ≥ d_min")


# ----------------------------------------------------------------------
# Factor de amplificación y recurrencia
# ----------------------------------------------------------------------
def _check_alpha_c(alpha_c: float) -> None:
    if alpha_c <= 0:
        raise DomainError("alpha_c debe ser > 0: con pérdida de ciclo nula la amplificación no está acotada")
    if alpha_c > 1:
        raise DomainError(f"alpha_c debe estar en (0, 1] (recibido {alpha_c})")


def amplification_factor(alpha_r: float, alpha_c: float) -> float:
    """β = (1 - α_r)/α_c."""
    _check_alpha_c(alpha_c)
    if not 0.0 <= alpha_r <= 1.0:
        raise DomainError(f"alpha_r debe estar en [0, 1] (recibido {alpha_r})")
    return (1.0 - alpha_r) / alpha_c


def effective_loaded(n_load: float, alpha_r: float) -> float:
    """N_L,eff = N_L·(1 - α_r)."""
    return n_load * (1.0 - alpha_r)


def steady_state(n_load: float, alpha_r: float, alpha_c: float) -> float:
    """N_∞ = (1 - α_r)·N_L/α_c = β·N_L."""
    return amplification_factor(alpha_r, alpha_c) * n_load


def iterate_recurrence(
    n0: float, n_load: float, alpha_r: float, alpha_c: float, n_cycles: int
) -> List[float]:
    """
    N_{i+1} = (1 - α_c)·N_i + (1 - α_r)·N_L para i = 0..n_cycles-1.

    Returns:
        List[float]: N_0..N_{n_cycles}
    """
    if n_cycles < 0:
        raise DomainError("n_cycles no puede ser negativo")
    serie = [float(n0)]
    aporte = (1.0 - alpha_r) * n_load
    for _ in range(n_cycles):
        serie.append((1.0 - alpha_c) * serie[-1] + aporte)
    return serie


def closed_form(n0: float, n_load: float, alpha_r: float, alpha_c: float, i) -> np.ndarray:
    """N_i = N_∞ + (N_0 - N_∞)(1 - α_c)^i."""
    n_inf = steady_state(n_load, alpha_r, alpha_c)
    return n_inf + (n0 - n_inf) * (1.0 - alpha_c) ** np.asarray(i, dtype=float)


def decay_curve(n0: float, alpha_c: float, n_cycles: int) -> List[float]:
    """Decaimiento libre (sin recarga): N_i = N_0·(1 - α_c)^i."""
    return iterate_recurrence(n0, 0.0, 0.0, alpha_c, n_cycles)


# ----------------------------------------------------------------------
# Supervivencias
# ----------------------------------------------------------------------
def shelving_stage_survival(params: LossParameters) -> float:
    """(1 - infidelidad ida/vuelta)·exp(-t_hold/τ_shelving)·(1 - pérdida extra del MOT)."""
    return (
        (1.0 - params.shelving_roundtrip_infidelity)
        * math.exp(-params.hold_time / params.shelving_lifetime)
        * (1.0 - params.mot_extra_loss)
    )


def solve_mot_extra_loss(params: LossParameters, total_loss: float) -> float:
    """
    Pérdida extra del MOT que hace que la etapa de shelving pierda `total_loss`.

    Raises:
        DomainError: Si los otros canales ya superan la pérdida total pedida
    """
    base = (1.0 - params.shelving_roundtrip_infidelity) * math.exp(-params.hold_time / params.shelving_lifetime)
    extra = 1.0 - (1.0 - total_loss) / base
    if extra < -1e-12:
        raise DomainError(
            f"La pérdida total de shelving {total_loss} es menor que la de los canales fijos ({1 - base:.4f})"
        )
    return max(0.0, extra)


def projected_shelving_loss(
    clock_lifetime: float, mot_duration: float, roundtrip_infidelity: float = 0.0
) -> float:
    """Pérdida de shelving proyectada para una vida del estado reloj y una duración del MOT dadas."""
    if clock_lifetime <= 0 or mot_duration < 0:
        raise DomainError("clock_lifetime debe ser > 0 y mot_duration ≥ 0")
    return 1.0 - (1.0 - roundtrip_infidelity) * math.exp(-mot_duration / clock_lifetime)


def vacuum_survival(t: float, vacuum_lifetime: float) -> float:
    """exp(-t/τ_vacío)."""
    if t < 0:
        raise DomainError("El tiempo no puede ser negativo")
    if vacuum_lifetime <= 0:
        raise DomainError("vacuum_lifetime debe ser positivo")
    return math.exp(-t / vacuum_lifetime)


def emergent_cycle_loss(params: LossParameters, collateral_rate: float = 0.0) -> float:
    """
    α_c compuesto de los canales explícitos del ciclo.

    Combina shelving, vacío durante cycle_time, dos imágenes y la tasa de
    pérdida colateral por ciclo.
    """
    supervivencia = (
        shelving_stage_survival(params)
        * vacuum_survival(params.cycle_time, params.vacuum_lifetime)
        * (1.0 - params.imaging_loss) ** 2
        * (1.0 - collateral_rate)
    )
    return 1.0 - supervivencia


# ----------------------------------------------------------------------
# Fotoionización y éxito de movimiento
# ----------------------------------------------------------------------
def ionization_rate(depth_mK: float, model: IonizationModel = IonizationModel()) -> float:
    """Tasa de pérdida (s⁻¹) a una profundidad de pinza en mK."""
    if depth_mK < 0:
        raise DomainError(f"La profundidad no puede ser negativa (recibido {depth_mK} mK)")
    return (
        model.quadratic_coefficient * depth_mK ** 2
        + model.linear_coefficient * depth_mK
        + model.constant_rate
    )


def ionization_lifetime(depth_mK: float, model: IonizationModel = IonizationModel()) -> float:
    """Vida media 1/tasa (s); infinita si la tasa es cero."""
    tasa = ionization_rate(depth_mK, model)
    return math.inf if tasa == 0 else 1.0 / tasa


def move_success_prob(distance: float, mode: str, model: MoveSuccessModel = MoveSuccessModel()) -> float:
    """p0·exp(-d/λ_modo), acotado a [0, 1]."""
    if distance < 0:
        raise DomainError("La distancia no puede ser negativa")
    lam = model.decay_length(mode)
    return float(min(1.0, max(0.0, model.p0 * math.exp(-distance / lam))))


def composed_success_prob(
    distances: List[float], modes: List[str], model: MoveSuccessModel = MoveSuccessModel()
) -> float:
    """
    Éxito de un movimiento con varios trazos: p0 una vez, factores de
    decaimiento por trazo multiplicados.
    """
    if len(distances) != len(modes):
        raise DomainError("Cada trazo necesita su modo")
    exponente = 0.0
    for distancia, modo in zip(distances, modes):
        if distancia < 0:
            raise DomainError("La distancia no puede ser negativa")
        exponente += distancia / model.decay_length(modo)
    return float(min(1.0, max(0.0, model.p0 * math.exp(-exponente))))


def build_loss_parameters(
    total_shelving_loss: Optional[float] = None, **valores
) -> LossParameters:
    """
    Construye LossParameters; si mot_extra_loss es None se despeja para que la
    etapa de shelving pierda total_shelving_loss.
    """
    if valores.get("mot_extra_loss") is None:
        valores.pop("mot_extra_loss", None)
        provisional = LossParameters(**valores, mot_extra_loss=0.0)
        if total_shelving_loss is None:
            return provisional.replace(mot_extra_loss=MOT_EXTRA_LOSS)
        return provisional.replace(mot_extra_loss=solve_mot_extra_loss(provisional, total_shelving_loss))
    return LossParameters(**valores)
