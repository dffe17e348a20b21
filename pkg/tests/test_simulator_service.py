import math
from dataclasses import replace

import numpy as np
import pytest

from services.analysis_service import fit_decay
from services.config_service import load_config
from services.loss_model_service import (
    CollateralModel,
    LossParameters,
    MoveSuccessModel,
    emergent_cycle_loss,
    iterate_recurrence,
)
from services.planner_service import MovePlan, move_success_probability, route_move
from services.simulator_service import (
    CycleRecord,
    Ensemble,
    OccupancyMatrix,
    apply_shelving_stage,
    apply_vacuum_loss,
    capture_image,
    emergent_parameters,
    execute_plan,
    load_reservoir,
    occupancy_checksum,
    replica_seeds,
    run,
    run_replicas,
)
from utils.errors import ConfigError, DataError

# Movimientos prácticamente infalibles
PERFECT_MOVES = MoveSuccessModel(p0=1.0, decay_length_between=1e15, decay_length_through=1e14)


def _perfect(config):
    return replace(config, move_success_model=PERFECT_MOVES)


# ----------------------------------------------------------------------
# Configuración y registros
# ----------------------------------------------------------------------
def test_config_rejects_tweezer_mismatch(make_config):
    with pytest.raises(ConfigError):
        make_config(n_tweezers=5)
    with pytest.raises(ConfigError):
        make_config(n_cycles=0)
    with pytest.raises(ConfigError):
        make_config(n_cycles=5, resort_disable_after=9)


def test_resorting_switch(make_config):
    config = make_config(n_cycles=10, resort_disable_after=4)
    assert [config.resorting_enabled(c) for c in range(6)] == [True] * 4 + [False] * 2
    assert make_config().resorting_enabled(1000)


def test_cycle_record_bounds(small_geometry):
    imagen = OccupancyMatrix(small_geometry, small_geometry.empty_occupancy())
    with pytest.raises(DataError):
        CycleRecord(0, imagen, imagen, n_loaded=3, n_moves_attempted=2, n_moves_succeeded=3,
                    n_collateral_losses=0, n_shelving_losses=0, stored_count_after=0)
    with pytest.raises(DataError):
        CycleRecord(0, imagen, imagen, n_loaded=1, n_moves_attempted=2, n_moves_succeeded=0,
                    n_collateral_losses=0, n_shelving_losses=0, stored_count_after=0)


def test_occupancy_matrix_is_read_only(small_geometry):
    ocupacion = small_geometry.empty_occupancy()
    imagen = OccupancyMatrix(small_geometry, ocupacion, image_tag=2)
    ocupacion[0, 0] = True
    assert imagen.count() == 0
    with pytest.raises(ValueError):
        imagen.occupied[0, 0] = True
    with pytest.raises(DataError):
        OccupancyMatrix(small_geometry, ocupacion, image_tag=3)
    with pytest.raises(DataError):
        OccupancyMatrix(small_geometry, np.zeros((2, 2), dtype=bool))


def test_checksum_depends_on_content_and_shape():
    a = np.zeros((4, 6), dtype=bool)
    b = a.copy()
    b[1, 2] = True
    assert occupancy_checksum(a) == occupancy_checksum(a.copy())
    assert occupancy_checksum(a) != occupancy_checksum(b)
    assert occupancy_checksum(a) != occupancy_checksum(np.zeros((6, 4), dtype=bool))


# ----------------------------------------------------------------------
# Etapas
# ----------------------------------------------------------------------
def test_load_reservoir_respects_fraction(make_config, rng):
    lleno = load_reservoir(rng, make_config(lossless=True, load_fraction=1.0))
    assert np.array_equal(lleno, make_config().geometry.tweezer_mask)
    vacio = load_reservoir(rng, make_config(lossless=True, load_fraction=0.0))
    assert not vacio.any()


def test_load_reservoir_keeps_carried_atoms(make_config, small_geometry, rng):
    config = make_config(lossless=True, load_fraction=0.0)
    remanente = small_geometry.empty_occupancy()
    remanente[2, 1] = True
    remanente[7, 0] = True   # fuera de pinza
    carga = load_reservoir(rng, config, carried=remanente)
    assert carga[2, 1]
    assert int(carga.sum()) == 1


def test_load_reservoir_residue_only_in_loading_background(make_config, small_geometry, rng):
    config = make_config(load_fraction=0.0, heating_extinction=1.0, mot_background_fill=1.0)
    carga = load_reservoir(rng, config)
    assert np.array_equal(carga, small_geometry.loading_mask & ~small_geometry.tweezer_mask)


def test_shelving_stage_extremes(rng):
    ocupacion = np.ones((5, 7), dtype=bool)
    todo = LossParameters(shelving_roundtrip_infidelity=0.0, mot_extra_loss=0.0, hold_time=0.0)
    nada = LossParameters(shelving_roundtrip_infidelity=1.0)
    assert apply_shelving_stage(rng, ocupacion, todo).all()
    assert not apply_shelving_stage(rng, ocupacion, nada).any()


def test_vacuum_loss_rate(rng):
    ocupacion = np.ones((200, 200), dtype=bool)
    params = LossParameters(cycle_time=27.3, vacuum_lifetime=273.0)
    sobreviven = apply_vacuum_loss(rng, ocupacion, params).mean()
    assert sobreviven == pytest.approx(math.exp(-0.1), abs=0.01)


def test_capture_image_without_errors_is_identity(small_geometry, rng):
    params = LossParameters(detection_infidelity=0.0, imaging_loss=0.0)
    ocupacion = rng.random(small_geometry.shape) < 0.5
    captura = capture_image(rng, ocupacion, params, small_geometry, image_tag=1)
    assert np.array_equal(captura.observed.occupied, ocupacion)
    assert np.array_equal(captura.occupancy, ocupacion)
    assert captura.n_lost == 0


def test_imaging_loss_happens_after_detection(small_geometry, rng):
    params = LossParameters(detection_infidelity=0.0, imaging_loss=1.0)
    ocupacion = small_geometry.storage_mask.copy()
    ocupacion[2, 1] = True
    captura = capture_image(rng, ocupacion, params, small_geometry, image_tag=2)
    assert np.array_equal(captura.observed.occupied, ocupacion)
    assert not captura.occupancy.any()
    assert captura.n_lost == int(small_geometry.storage_mask.sum())


# ----------------------------------------------------------------------
# Ejecución del plan
# ----------------------------------------------------------------------
def test_empty_plan_changes_nothing(small_geometry, rng):
    ocupacion = rng.random(small_geometry.shape) < 0.3
    resultado = execute_plan(rng, MovePlan(moves=[]), ocupacion, small_geometry)
    assert np.array_equal(resultado.occupancy, ocupacion)
    assert (resultado.n_attempted, resultado.n_succeeded, resultado.n_collateral_losses) == (0, 0, 0)


def test_move_from_empty_source(small_geometry, rng):
    plan = MovePlan(moves=[route_move(small_geometry, (1, 2), (12, 0))])
    vacio = small_geometry.empty_occupancy()
    with pytest.raises(DataError):
        execute_plan(rng, plan, vacio, small_geometry)
    resultado = execute_plan(rng, plan, vacio, small_geometry, strict=False)
    assert resultado.n_attempted == 0
    assert not resultado.occupancy.any()


def test_successful_move_relocates_atom(small_geometry, rng):
    plan = MovePlan(moves=[route_move(small_geometry, (1, 2), (12, 0))])
    ocupacion = small_geometry.empty_occupancy()
    ocupacion[2, 1] = True
    resultado = execute_plan(rng, plan, ocupacion, small_geometry, PERFECT_MOVES)
    assert resultado.occupancy[0, 12] and not resultado.occupancy[2, 1]
    assert resultado.n_succeeded == 1
    assert resultado.outcomes[0].succeeded


def test_hidden_resident_loses_both_atoms(small_geometry, rng):
    plan = MovePlan(moves=[route_move(small_geometry, (1, 2), (12, 0))])
    ocupacion = small_geometry.empty_occupancy()
    ocupacion[2, 1] = True
    ocupacion[0, 12] = True
    resultado = execute_plan(rng, plan, ocupacion, small_geometry, PERFECT_MOVES)
    assert not resultado.occupancy.any()
    assert resultado.n_succeeded == 0
    assert resultado.n_collateral_losses == 1
    assert not resultado.outcomes[0].succeeded


def test_collateral_loss_by_distance(small_geometry, rng):
    # El trazo de aproximación corre por y = 6.5·ay: la fila 7 queda a 0.59 μm, la fila 8 a 1.78 μm
    plan = MovePlan(moves=[route_move(small_geometry, (1, 2), (20, 6))])
    ocupacion = small_geometry.empty_occupancy()
    ocupacion[2, 1] = True
    ocupacion[7, 16] = True
    ocupacion[8, 16] = True
    ocupacion[12, 28] = True

    sin_paso = execute_plan(rng, plan, ocupacion, small_geometry, PERFECT_MOVES, CollateralModel(passing_loss_probability=0.0))
    assert not sin_paso.occupancy[7, 16]
    assert sin_paso.occupancy[8, 16] and sin_paso.occupancy[12, 28]
    assert sin_paso.n_collateral_losses == 1

    con_paso = execute_plan(rng, plan, ocupacion, small_geometry, PERFECT_MOVES, CollateralModel(passing_loss_probability=1.0))
    assert not con_paso.occupancy[8, 16]
    assert con_paso.occupancy[12, 28]
    assert con_paso.n_collateral_losses == 2


# ----------------------------------------------------------------------
# Corridas completas
# ----------------------------------------------------------------------
def test_run_is_deterministic(make_config):
    config = make_config(n_cycles=6, passing=0.02)
    a, b = run(config), run(config)
    assert [r.image1.checksum() for r in a.records] == [r.image1.checksum() for r in b.records]
    assert [r.image2.checksum() for r in a.records] == [r.image2.checksum() for r in b.records]
    otra = run(replace(config, rng_seed=config.rng_seed + 1))
    assert [r.image2.checksum() for r in otra.records] != [r.image2.checksum() for r in a.records]


def test_bookkeeping_identity_on_true_state(make_config):
    traza = run(make_config(n_cycles=15, passing=0.05, load_fraction=0.8, detection_infidelity=0.02))
    for r in traza.records:
        esperado = (
            r.true_stored_before - r.n_shelving_losses - r.n_vacuum_losses
            - r.n_collateral_losses - r.n_imaging_losses + r.n_moves_succeeded
        )
        assert r.true_stored_after == esperado
        assert r.n_moves_succeeded <= r.n_moves_attempted <= r.n_loaded
    for previo, actual in zip(traza.records, traza.records[1:]):
        assert actual.true_stored_before == previo.true_stored_after


def test_lossless_run_fills_register(make_config, small_target):
    config = _perfect(make_config(lossless=True, load_fraction=1.0, n_cycles=8))
    traza = run(config)
    ciclos_llenado = math.ceil(small_target.capacity / 9)
    conteos = [r.stored_count_after for r in traza.records]
    assert conteos[ciclos_llenado - 1] == small_target.capacity
    assert all(a <= b for a, b in zip(conteos, conteos[1:]))
    assert traza.records[-1].n_moves_attempted == 0
    parametros = emergent_parameters(traza)
    assert parametros["alpha_c"] == 0.0
    assert parametros["alpha_r"] == 0.0


def test_nothing_loaded_means_nothing_stored(make_config):
    traza = run(make_config(lossless=True, load_fraction=0.0, n_cycles=4))
    assert all(r.n_loaded == 0 and r.stored_count_after == 0 for r in traza.records)
    assert traza.wall_parameters["alpha_c"] == [None] * 4
    assert traza.wall_parameters["alpha_r"] == [None] * 4
    assert emergent_parameters(traza)["alpha_c"] is None


def test_register_decays_after_resorting_stops(make_config):
    config = _perfect(make_config(load_fraction=1.0, n_cycles=20, resort_disable_after=8,
                                  shelving_roundtrip_infidelity=0.2))
    traza = run(config)
    apagado = traza.records[8:]
    assert all(r.n_moves_attempted == 0 for r in apagado)
    verdaderos = [r.true_stored_after for r in apagado]
    assert all(a >= b for a, b in zip(verdaderos, verdaderos[1:]))
    assert verdaderos[-1] < traza.records[7].true_stored_after


def test_trace_keeps_masks_and_snapshot(make_config, small_geometry, small_target):
    traza = run(make_config(n_cycles=2))
    assert np.array_equal(traza.masks["target"], small_target.mask(small_geometry))
    assert np.array_equal(traza.masks["tweezer"], small_geometry.tweezer_mask)
    assert traza.config["geometry.n_tweezers"] == 9
    assert traza.config["target.capacity"] == small_target.capacity
    assert len(traza.wall_parameters["alpha_c"]) == 2


def test_replicas_are_independent_and_reproducible(make_config):
    config = make_config(n_cycles=3, n_replicas=3, n_jobs=1)
    ensamble = run_replicas(config)
    assert len(ensamble) == 3
    firmas = [tuple(r.image2.checksum() for r in t.records) for t in ensamble.traces]
    assert len(set(firmas)) == 3

    semillas = replica_seeds(config)
    suelta = run(config, semillas[1], replica=1)
    assert tuple(r.image2.checksum() for r in suelta.records) == firmas[1]

    paralelo = run_replicas(replace(config, n_jobs=2))
    assert [tuple(r.image2.checksum() for r in t.records) for t in paralelo.traces] == firmas


def test_ensemble_band_uses_standard_error(make_config):
    ensamble = Ensemble(traces=[run(make_config(n_cycles=3, rng_seed=s)) for s in (1, 2, 3, 4)])
    bajo, alto = ensamble.band(k=3.0)
    assert np.allclose(alto - ensamble.mean, 3.0 * ensamble.std / 2.0)
    assert np.allclose(ensamble.mean - bajo, alto - ensamble.mean)


def test_plans_start_only_from_tweezers(make_config, small_geometry, small_target):
    # con fantasmas en la imagen los movimientos siguen saliendo de pinzas hacia sitios objetivo
    traza = run(make_config(n_cycles=6, load_fraction=0.6, detection_infidelity=0.05))
    objetivo = set(small_target.sites)
    movimientos = [m for r in traza.records for m in r.moves]
    assert movimientos
    assert all(m.source in small_geometry.tweezer_sites for m in movimientos)
    assert all(m.destination in objetivo for m in movimientos)
    assert all(r.n_loaded <= len(small_geometry.tweezer_sites) for r in traza.records)


# ----------------------------------------------------------------------
# Estadística sembrada
# ----------------------------------------------------------------------
def test_load_reservoir_binomial_moments():
    config = load_config().simulation
    rng = np.random.default_rng(7)
    pinzas = config.geometry.tweezer_mask
    conteos = np.array([int((load_reservoir(rng, config) & pinzas).sum()) for _ in range(400)])
    assert conteos.mean() == pytest.approx(129.2, abs=3 * 8.8 / math.sqrt(400))
    assert conteos.std() == pytest.approx(8.8, abs=1.0)


def test_capture_image_false_positive_rate(small_geometry, rng):
    params = LossParameters(detection_infidelity=0.05, imaging_loss=0.0)
    vacio = small_geometry.empty_occupancy()
    n = vacio.size
    espurios = [capture_image(rng, vacio, params, small_geometry).observed.count() for _ in range(200)]
    assert np.mean(espurios) == pytest.approx(0.05 * n, abs=3 * math.sqrt(0.05 * 0.95 * n / 200))


def test_execute_plan_success_rate_matches_model(small_geometry, rng):
    modelo = MoveSuccessModel(p0=0.9, decay_length_through=20.0)
    move = route_move(small_geometry, (1, 2), (25, 9))
    plan = MovePlan(moves=[move])
    ocupacion = small_geometry.empty_occupancy()
    ocupacion[2, 1] = True
    p = move_success_probability(small_geometry, move, modelo)
    exitos = sum(execute_plan(rng, plan, ocupacion, small_geometry, modelo).n_succeeded for _ in range(1000))
    assert exitos / 1000 == pytest.approx(p, abs=3 * math.sqrt(p * (1 - p) / 1000))


def test_decay_fit_recovers_configured_survival(make_config):
    config = _perfect(make_config(load_fraction=1.0, n_cycles=20, resort_disable_after=8))
    esperada = 1.0 - emergent_cycle_loss(config.loss_parameters)
    for semilla in range(20):
        traza = run(replace(config, rng_seed=semilla))
        ajuste = fit_decay(traza.true_stored_counts(), window=(8, 20))
        assert ajuste.survival == pytest.approx(esperada, rel=0.10)


def test_ensemble_mean_follows_recurrence(make_config):
    config = make_config(n_cycles=40, load_fraction=0.2, n_replicas=50)
    ensamble = run_replicas(config)
    registros = [r for t in ensamble.traces for r in t.records]
    alpha_c = sum(r.stored_losses for r in registros) / sum(r.true_stored_before for r in registros)
    alpha_r = 1.0 - sum(r.n_moves_succeeded for r in registros) / sum(r.n_moves_attempted for r in registros)
    n_load = float(np.mean([r.n_moves_attempted for r in registros]))
    modelo = np.array(iterate_recurrence(0.0, n_load, alpha_r, alpha_c, config.n_cycles)[1:])

    verdaderos = np.array([t.true_stored_counts() for t in ensamble.traces])
    meseta = slice(-15, None)
    por_replica = verdaderos[:, meseta].mean(axis=1)
    tolerancia = 3.0 * por_replica.std() / math.sqrt(len(ensamble))
    assert por_replica.mean() == pytest.approx(modelo[meseta].mean(), abs=tolerancia)


def test_default_configuration_plateau():
    config = replace(load_config().simulation, n_cycles=60, n_replicas=2)
    ensamble = run_replicas(config)
    meseta = float(np.mean(ensamble.mean[-10:]))
    cargados = float(np.mean([[r.n_loaded for r in t.records] for t in ensamble.traces]))
    assert meseta > 1000
    assert 7.0 <= meseta / cargados <= 10.0
