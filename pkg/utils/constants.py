"""
constants.py
Constantes generales del proyecto ARCO.
Ubicado en utils/constants.py

Todos los valores por defecto del sistema viven aquí: la red de sitios, el
reservorio de pinzas, las pérdidas por ciclo, la cinemática del movimiento
y la simulación. Las longitudes están en μm, los tiempos en s salvo que el
nombre indique otra unidad.
"""

import math

# Red óptica (bow-tie)
SPACING_X = 0.579            # μm
SPACING_Y = 1.187            # μm
N_COLS = 224                 # ~130 μm de campo en x
N_ROWS = 109                 # ~130 μm de campo en y
LOADING_COLS = 68            # columnas de la zona de carga (izquierda)
GUARD_COLS = 2               # columnas libres entre carga y almacenamiento

# Reservorio de pinzas (17 x 19 = 323)
TWEEZER_COLS = 17
TWEEZER_ROWS = 19
TWEEZER_COL_STRIDE = 4
TWEEZER_ROW_STRIDE = 4
TWEEZER_COL_START = 2
N_TWEEZERS = TWEEZER_COLS * TWEEZER_ROWS

# Patrón objetivo del registro de almacenamiento
TARGET_ROW_STRIDE = 3
TARGET_COL_STRIDE = 2

# Potencial
LATTICE_DEPTH_UK = 200.0
TWEEZER_DEPTH_RATIO = 10.0
POTENTIAL_FORM = "separable"

# Pérdidas
ALPHA_R = 0.05
ALPHA_C = 0.10
LOAD_FRACTION = 0.40
N_LOAD = LOAD_FRACTION * N_TWEEZERS
SHELVING_ROUNDTRIP_INFIDELITY = 0.03
SHELVING_LIFETIME_S = 13.0
HOLD_TIME_S = 0.115
TOTAL_SHELVING_LOSS = 0.06
VACUUM_LIFETIME_S = 273.0
CYCLE_TIME_S = 2.5
HEATING_EXTINCTION = 5e-4
DETECTION_INFIDELITY = 0.005
IMAGING_LOSS = 0.005
MOT_BACKGROUND_FILL = 0.40
MOT_SHELVED_DEFECT = 0.0

# Pérdida extra del MOT que cierra el 6% total de la etapa de shelving
MOT_EXTRA_LOSS = 1.0 - (1.0 - TOTAL_SHELVING_LOSS) / (
    (1.0 - SHELVING_ROUNDTRIP_INFIDELITY) * math.exp(-HOLD_TIME_S / SHELVING_LIFETIME_S)
)

# Éxito de movimiento por distancia
MOVE_P0 = 0.99
DECAY_LENGTH_BETWEEN_UM = 2000.0
DECAY_LENGTH_THROUGH_UM = 100.0

# Fotoionización en la pinza
IONIZATION_QUADRATIC = 250.0   # s⁻¹ mK⁻²
IONIZATION_LINEAR = 0.0
IONIZATION_CONSTANT = 0.0

# Perturbación colateral
D_MIN_UM = 1.0
LOSS_PROBABILITY_INSIDE = 1.0
INTERACTION_RANGE_UM = 1.9
PASSING_LOSS_PROBABILITY = 0.008

# Cinemática de la pinza móvil
PEAK_VELOCITY = 54.0           # μm/ms
RAMP_DURATION_US = 400.0
ACCEL_TIME_MS = 0.1
VELOCITY_PROFILE = "smooth_trapezoid"
SAMPLE_STEP_MS = 0.005
MODULATION_SAMPLES = 200      # puntos sobre la ruta de referencia en predict

# Simulación
N_CYCLES = 100
RNG_SEED = 20240517
N_REPLICAS = 1
N_JOBS = 1
EXACT_ASSIGNMENT_LIMIT = 2_000_000   # celdas máximas de la matriz de costos

# Salida
OUTPUT_PATH = "output"
OUTPUT_FORMAT = "table"
FLOAT_PRECISION = 6
MISSING_VALUE = "NA"

# Referencias de la tabla de correlaciones (documentación, no oráculo)
REFERENCE_PEARSON = {
    "s_1p2p": 0.46,
    "s_21p": 0.50,
    "s_22p": 0.68,
    "a_1p2p": 0.53,
    "a_21p": -0.12,
    "a_22p": 0.51,
}

# Configuración por defecto completa (tabla de parámetros de referencia)
DEFAULT_CONFIG = {
    "geometry": {
        "spacing_x": SPACING_X,
        "spacing_y": SPACING_Y,
        "n_cols": N_COLS,
        "n_rows": N_ROWS,
        "loading_cols": LOADING_COLS,
        "guard_cols": GUARD_COLS,
        "tweezer_cols": TWEEZER_COLS,
        "tweezer_rows": TWEEZER_ROWS,
        "tweezer_col_stride": TWEEZER_COL_STRIDE,
        "tweezer_row_stride": TWEEZER_ROW_STRIDE,
        "tweezer_col_start": TWEEZER_COL_START,
        "tweezer_row_start": None,
    },
    "target": {
        "row_stride": TARGET_ROW_STRIDE,
        "col_stride": TARGET_COL_STRIDE,
        "start_row": 0,
        "start_col": None,
        "max_sites": None,
    },
    "potential": {
        "lattice_depth": LATTICE_DEPTH_UK,
        "tweezer_depth_ratio": TWEEZER_DEPTH_RATIO,
        "form": POTENTIAL_FORM,
    },
    "loss": {
        "alpha_r": ALPHA_R,
        "alpha_c": ALPHA_C,
        "n_load": None,
        "load_fraction": LOAD_FRACTION,
        "n_tweezers": None,
        "shelving_roundtrip_infidelity": SHELVING_ROUNDTRIP_INFIDELITY,
        "shelving_lifetime": SHELVING_LIFETIME_S,
        "hold_time": HOLD_TIME_S,
        "mot_extra_loss": None,
        "total_shelving_loss": TOTAL_SHELVING_LOSS,
        "vacuum_lifetime": VACUUM_LIFETIME_S,
        "cycle_time": CYCLE_TIME_S,
        "heating_extinction": HEATING_EXTINCTION,
        "detection_infidelity": DETECTION_INFIDELITY,
        "imaging_loss": IMAGING_LOSS,
        "mot_background_fill": MOT_BACKGROUND_FILL,
        "mot_shelved_defect": MOT_SHELVED_DEFECT,
    },
    "move_success": {
        "p0": MOVE_P0,
        "decay_length_between": DECAY_LENGTH_BETWEEN_UM,
        "decay_length_through": DECAY_LENGTH_THROUGH_UM,
    },
    "ionization": {
        "quadratic_coefficient": IONIZATION_QUADRATIC,
        "linear_coefficient": IONIZATION_LINEAR,
        "constant_rate": IONIZATION_CONSTANT,
    },
    "collateral": {
        "d_min": D_MIN_UM,
        "loss_probability_inside": LOSS_PROBABILITY_INSIDE,
        "interaction_range": INTERACTION_RANGE_UM,
        "passing_loss_probability": PASSING_LOSS_PROBABILITY,
    },
    "kinematics": {
        "peak_velocity": PEAK_VELOCITY,
        "ramp_duration": RAMP_DURATION_US,
        "depth_ratio": TWEEZER_DEPTH_RATIO,
        "accel_time": ACCEL_TIME_MS,
        "profile": VELOCITY_PROFILE,
        "sample_step": SAMPLE_STEP_MS,
    },
    "simulation": {
        "n_cycles": N_CYCLES,
        "resort_disable_after": None,
        "rng_seed": RNG_SEED,
        "n_replicas": N_REPLICAS,
        "n_jobs": N_JOBS,
        "exact_assignment_limit": EXACT_ASSIGNMENT_LIMIT,
    },
    "output": {
        "out_dir": OUTPUT_PATH,
        "format": OUTPUT_FORMAT,
        "verbosity": 1,
    },
}
