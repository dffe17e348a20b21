"""Fixtures compartidas: una red pequeña con 9 pinzas y un registro de 45 sitios."""

import numpy as np
import pytest

from services.geometry_service import LatticeGeometry, build_target_pattern, build_tweezer_sites
from services.loss_model_service import CollateralModel, LossParameters, MoveSuccessModel
from services.planner_service import KinematicParams
from services.simulator_service import SimulationConfig

LOSSLESS = {
    "shelving_roundtrip_infidelity": 0.0,
    "mot_extra_loss": 0.0,
    "heating_extinction": 0.0,
    "detection_infidelity": 0.0,
    "imaging_loss": 0.0,
    "vacuum_lifetime": 1e12,
    "shelving_lifetime": 1e12,
}


@pytest.fixture
def small_geometry():
    # cols 0..9 carga, 10..11 guarda, 12..29 almacenamiento; pinzas en cols 1,4,7 y filas 2,6,10
    pinzas = build_tweezer_sites(13, tweezer_cols=3, tweezer_rows=3, col_stride=3, row_stride=4, col_start=1)
    return LatticeGeometry(n_cols=30, n_rows=13, loading_cols=10, guard_cols=2, tweezer_sites=pinzas)


@pytest.fixture
def small_target(small_geometry):
    return build_target_pattern(small_geometry)


@pytest.fixture
def make_config(small_geometry, small_target):
    """Fábrica de SimulationConfig sobre la red pequeña."""

    def _make(lossless=False, p0=0.99, passing=0.0, n_cycles=5, **cambios):
        perdidas = dict(LOSSLESS) if lossless else {}
        perdidas.update({k: v for k, v in cambios.items() if k in LossParameters.__dataclass_fields__})
        perdidas.setdefault("n_tweezers", len(small_geometry.tweezer_sites))
        simulacion = {k: v for k, v in cambios.items() if k not in LossParameters.__dataclass_fields__}
        return SimulationConfig(
            geometry=small_geometry,
            loss_parameters=LossParameters(**perdidas),
            move_success_model=MoveSuccessModel(p0=p0),
            collateral_model=CollateralModel(passing_loss_probability=passing),
            kinematics=KinematicParams(),
            target_pattern=small_target,
            n_cycles=n_cycles,
            **simulacion,
        )

    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_CONFIG_YAML = """\
geometry:
  n_cols: 30
  n_rows: 13
  loading_cols: 10
  guard_cols: 2
  tweezer_cols: 3
  tweezer_rows: 3
  tweezer_col_stride: 3
  tweezer_row_stride: 4
  tweezer_col_start: 1
simulation:
  n_cycles: 6
  n_replicas: 2
  n_jobs: 1
  rng_seed: 2024
output:
  verbosity: 0
"""


@pytest.fixture
def small_config_file(tmp_path):
    """Archivo YAML con la misma red pequeña de small_geometry."""
    ruta = tmp_path / "small.yaml"
    ruta.write_text(SMALL_CONFIG_YAML, encoding="utf-8")
    return str(ruta)
