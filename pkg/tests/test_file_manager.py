import os

import numpy as np
import polars as pl
import pytest

from services import file_manager
from services.analysis_service import ImageSequence, per_cycle_metrics
from services.geometry_service import site_position
from services.planner_service import KinematicParams, MovePlan, Violation, route_move, synthesize_trajectory
from services.simulator_service import run
from utils.errors import DataError, OutputError


@pytest.fixture
def trace(make_config):
    return run(make_config(n_cycles=4, passing=0.02, detection_infidelity=0.02))


def test_write_table_precision_and_missing(tmp_path):
    df = pl.DataFrame({"a": [1, 2], "b": [1 / 3, None]}, schema_overrides={"b": pl.Float64})
    ruta = file_manager.write_table(df, str(tmp_path / "t.csv"), {"alpha_c": 0.1, "modo": None})
    texto = open(ruta, encoding="utf-8").read().splitlines()
    assert texto[:2] == ["# alpha_c = 0.100000", "# modo = NA"]
    assert texto[2:] == ["a,b", "1,0.333333", "2,NA"]

    cabecera, leida = file_manager.read_table(ruta)
    assert cabecera == {"alpha_c": "0.100000", "modo": "NA"}
    assert leida["b"].to_list() == [pytest.approx(0.333333), None]


def test_read_table_missing_file(tmp_path):
    with pytest.raises(DataError):
        file_manager.read_table(str(tmp_path / "nada.csv"))


def test_ensure_directory_on_a_file(tmp_path):
    archivo = tmp_path / "ocupado"
    archivo.write_text("x")
    with pytest.raises(OutputError):
        file_manager.ensure_directory(str(archivo / "sub"))


def test_trace_round_trip(trace, tmp_path):
    ruta = file_manager.write_trace(trace, str(tmp_path))
    assert os.path.basename(ruta) == "replica_000.trace.csv"
    cabecera, df = file_manager.read_trace(ruta)
    assert cabecera["format"] == "arco-trace-1"
    assert int(cabecera["seed"]) == trace.seed
    assert cabecera["simulation.resort_disable_after"] == "NA"
    assert df.columns == list(file_manager.TRACE_COLUMNS)
    assert df["stored_count_after"].to_list() == [r.stored_count_after for r in trace.records]
    assert df["image2_checksum"].to_list() == [r.image2.checksum() for r in trace.records]


def test_trace_without_required_columns(tmp_path):
    ruta = file_manager.write_table(pl.DataFrame({"cycle": [0]}), str(tmp_path / "x.trace.csv"))
    with pytest.raises(DataError, match="columnas"):
        file_manager.read_trace(ruta)


def test_grids_round_trip_preserves_statistics(trace, tmp_path):
    ruta = file_manager.write_grids(trace, str(tmp_path))
    leida = file_manager.read_grids(ruta)
    original = ImageSequence.from_trace(trace)
    assert leida.n_cycles == 4
    assert leida.moves == original.moves
    for a, b in zip(leida.images, original.images):
        assert np.array_equal(a, b)
    assert np.array_equal(leida.target_mask, original.target_mask)
    assert per_cycle_metrics(leida) == per_cycle_metrics(original)


def test_grids_path_for():
    assert file_manager.grids_path_for("out/replica_001.trace.csv") == "out/replica_001.grids.txt"
    assert file_manager.grids_path_for("x.grids.txt") == "x.grids.txt"
    with pytest.raises(DataError):
        file_manager.grids_path_for("x.json")


def _write(tmp_path, texto):
    ruta = tmp_path / "malo.grids.txt"
    ruta.write_text(texto, encoding="utf-8")
    return str(ruta)


def test_malformed_grid_reports_line_and_column(tmp_path):
    ruta = _write(tmp_path, "# mask name=target rows=2 cols=3\n001\n0a1\n")
    with pytest.raises(DataError) as info:
        file_manager.read_grids(ruta)
    assert (info.value.line, info.value.column) == (3, 2)
    assert "línea 3, columna 2" in str(info.value)


def test_grid_row_with_wrong_width(tmp_path):
    ruta = _write(tmp_path, "# mask name=target rows=1 cols=3\n0011\n")
    with pytest.raises(DataError) as info:
        file_manager.read_grids(ruta)
    assert (info.value.line, info.value.column) == (2, 4)


@pytest.mark.parametrize(
    "texto",
    [
        "# frame cycle=0\n",
        "0101\n",
        "# mask name=target rows=3 cols=2\n01\n",
        "# mask name=target rows=1 cols=2\n01\n",
        "# moves cycle=0 count=1\n1 2 3\n",
    ],
)
def test_malformed_grid_files(tmp_path, texto):
    with pytest.raises(DataError):
        file_manager.read_grids(_write(tmp_path, texto))


def test_occupancy_grid_round_trip(small_geometry, tmp_path):
    rng = np.random.default_rng(1)
    ocupacion = rng.random(small_geometry.shape) < 0.4
    ruta = file_manager.write_occupancy_grid(ocupacion, str(tmp_path / "occ.txt"))
    assert np.array_equal(file_manager.read_occupancy_grid(ruta, small_geometry), ocupacion)


def test_occupancy_grid_wrong_size(small_geometry, tmp_path):
    ruta = tmp_path / "occ.txt"
    ruta.write_text("\n".join(["0" * small_geometry.n_cols] * 3) + "\n")
    with pytest.raises(DataError, match="filas"):
        file_manager.read_occupancy_grid(str(ruta), small_geometry)


def test_plan_and_trajectory_files(small_geometry, tmp_path):
    move = route_move(small_geometry, (1, 2), (20, 9))
    plan = MovePlan(moves=[move])
    ruta = file_manager.write_plan(plan, small_geometry, KinematicParams(), str(tmp_path / "plan.csv"))
    cabecera, df = file_manager.read_table(ruta)
    assert cabecera["format"] == "arco-plan-1"
    assert cabecera["moves"] == "1"
    assert df.height == len(move.strokes)
    assert set(df["mode"].to_list()) <= {"between", "through"}

    assert file_manager.violations_table(plan, small_geometry).height == 0

    tray = synthesize_trajectory(move)
    ruta = file_manager.write_trajectory(tray, str(tmp_path / "trajectory_0000.csv"))
    cabecera, df = file_manager.read_table(ruta)
    assert df.columns == ["t_ms", "x_um", "y_um", "depth"]
    assert df.height == len(tray.times)
    assert float(cabecera["total_duration_ms"]) == pytest.approx(tray.total_duration, abs=1e-6)


def test_violations_table_places_sites_in_micrometres(small_geometry):
    move = route_move(small_geometry, (1, 2), (20, 9))
    plan = MovePlan(moves=[move], violations=[Violation(0, (16, 3), 0.25)])
    tabla = file_manager.violations_table(plan, small_geometry)
    assert tabla.columns == ["rank", "col", "row", "x_um", "y_um", "distance"]
    x, y = site_position(small_geometry, 16, 3)
    assert tabla.row(0) == (0, 16, 3, pytest.approx(x), pytest.approx(y), pytest.approx(0.25))
