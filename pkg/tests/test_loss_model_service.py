import math

import numpy as np
import pytest

from services.loss_model_service import (
    MODE_BETWEEN,
    MODE_THROUGH,
    CollateralModel,
    LossParameters,
    MoveSuccessModel,
    amplification_factor,
    build_loss_parameters,
    closed_form,
    composed_success_prob,
    decay_curve,
    effective_loaded,
    emergent_cycle_loss,
    ionization_lifetime,
    ionization_rate,
    iterate_recurrence,
    move_success_prob,
    projected_shelving_loss,
    shelving_stage_survival,
    solve_mot_extra_loss,
    steady_state,
    vacuum_survival,
)
from utils.errors import ConfigError, DomainError


def test_amplification_factor_examples():
    assert amplification_factor(0.02, 0.008) == pytest.approx(122.5)
    assert amplification_factor(0.02, 0.008) > 100
    assert amplification_factor(0.0, 1.0) == 1.0
    assert amplification_factor(0.6, 0.1) == pytest.approx(4.0)


def test_zero_cycle_loss_is_a_domain_error():
    with pytest.raises(DomainError):
        amplification_factor(0.1, 0.0)
    with pytest.raises(DomainError):
        steady_state(100, 0.1, 0.0)


def test_steady_state_examples():
    assert steady_state(100, 0.02, 0.008) == pytest.approx(12250)
    assert steady_state(130, 0.0, 0.1) == pytest.approx(1300)
    assert steady_state(0, 0.37, 0.5) == 0.0


def test_steady_state_is_fixed_point():
    n_inf = steady_state(123.0, 0.05, 0.1)
    assert (1 - 0.1) * n_inf + (1 - 0.05) * 123.0 == pytest.approx(n_inf, rel=1e-14)
    assert n_inf == pytest.approx(123.0 * amplification_factor(0.05, 0.1), rel=1e-15)


def test_effective_loaded():
    assert effective_loaded(129.2, 0.0) == pytest.approx(129.2)
    assert effective_loaded(100, 0.05) == pytest.approx(95.0)


def test_iterate_recurrence_examples():
    assert iterate_recurrence(0, 130, 0, 0.1, 2) == pytest.approx([0, 130, 247])
    assert iterate_recurrence(0, 130, 0, 0.1, 10)[-1] == pytest.approx(846.7, abs=0.1)
    n_inf = steady_state(130, 0.05, 0.1)
    assert iterate_recurrence(n_inf, 130, 0.05, 0.1, 20) == pytest.approx([n_inf] * 21, rel=1e-12)


def test_recurrence_matches_closed_form_random():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n0 = rng.uniform(0, 5000)
        n_load = rng.uniform(0, 500)
        alpha_r = rng.uniform(0, 1)
        alpha_c = rng.uniform(0.001, 1)
        serie = np.array(iterate_recurrence(n0, n_load, alpha_r, alpha_c, 50))
        cerrada = closed_form(n0, n_load, alpha_r, alpha_c, np.arange(51))
        escala = max(np.max(np.abs(cerrada)), 1.0)
        assert np.max(np.abs(serie - cerrada)) / escala < 1e-12


def test_recurrence_converges_monotonically():
    n_inf = steady_state(100, 0.05, 0.1)
    subida = np.array(iterate_recurrence(0, 100, 0.05, 0.1, 60))
    bajada = np.array(iterate_recurrence(3 * n_inf, 100, 0.05, 0.1, 60))
    assert np.all(np.diff(subida) > 0)
    assert np.all(np.diff(bajada) < 0)
    distancias = np.abs(subida - n_inf)
    assert distancias[1:] / distancias[:-1] == pytest.approx(np.full(60, 0.9), rel=1e-9)


def test_negative_cycle_count_rejected():
    with pytest.raises(DomainError):
        iterate_recurrence(0, 1, 0, 0.1, -1)


def test_decay_curve_is_geometric():
    assert decay_curve(1000, 0.1, 3) == pytest.approx([1000, 900, 810, 729])


def test_shelving_stage_survival_examples():
    assert shelving_stage_survival(LossParameters()) == pytest.approx(0.94)
    p = LossParameters(shelving_roundtrip_infidelity=0.03, hold_time=0.0, mot_extra_loss=0.0)
    assert shelving_stage_survival(p) == pytest.approx(0.97)
    p = LossParameters(shelving_roundtrip_infidelity=0.0, shelving_lifetime=1e300, mot_extra_loss=0.0)
    assert shelving_stage_survival(p) == pytest.approx(1.0)


def test_solve_mot_extra_loss_closes_total():
    p = LossParameters(mot_extra_loss=0.0)
    extra = solve_mot_extra_loss(p, 0.08)
    assert shelving_stage_survival(p.replace(mot_extra_loss=extra)) == pytest.approx(0.92)
    with pytest.raises(DomainError):
        solve_mot_extra_loss(p, 0.01)


def test_build_loss_parameters_solves_extra_loss():
    p = build_loss_parameters(total_shelving_loss=0.10)
    assert 1 - shelving_stage_survival(p) == pytest.approx(0.10)
    assert build_loss_parameters(mot_extra_loss=0.02).mot_extra_loss == 0.02


def test_projected_shelving_loss():
    assert projected_shelving_loss(100.0, 0.1) == pytest.approx(1 - math.exp(-0.001))
    assert projected_shelving_loss(100.0, 0.1) < 0.0011
    with pytest.raises(DomainError):
        projected_shelving_loss(0.0, 0.1)


def test_vacuum_survival_examples():
    assert vacuum_survival(1.0, 273) == pytest.approx(0.99634, abs=1e-5)
    assert vacuum_survival(0.0, 273) == 1.0
    assert vacuum_survival(273, 273) == pytest.approx(math.exp(-1))
    with pytest.raises(DomainError):
        vacuum_survival(-1.0, 273)


def test_emergent_cycle_loss_combines_channels():
    p = LossParameters()
    base = emergent_cycle_loss(p)
    assert 0.06 < base < 0.08
    assert emergent_cycle_loss(p, collateral_rate=0.03) > base


def test_ionization_examples():
    assert ionization_rate(1.0) == 250.0
    assert ionization_rate(0.3) == pytest.approx(22.5)
    assert ionization_rate(0.0) == 0.0
    assert abs(ionization_lifetime(0.3) - 0.040) / 0.040 < 0.15
    assert ionization_lifetime(0.0) == math.inf
    with pytest.raises(DomainError):
        ionization_rate(-0.1)


def test_move_success_examples():
    modelo = MoveSuccessModel()
    assert move_success_prob(0.0, MODE_BETWEEN, modelo) == pytest.approx(0.99)
    assert move_success_prob(2000.0, MODE_BETWEEN, modelo) == pytest.approx(0.99 * math.exp(-1))
    for d in np.linspace(0, 500, 51):
        assert move_success_prob(d, MODE_BETWEEN) >= move_success_prob(d, MODE_THROUGH)
    valores = [move_success_prob(d, MODE_THROUGH) for d in np.linspace(0, 500, 51)]
    assert all(a >= b for a, b in zip(valores, valores[1:]))


def test_move_success_unknown_mode():
    with pytest.raises(DomainError):
        move_success_prob(1.0, "diagonal")


def test_composed_success_applies_p0_once():
    modelo = MoveSuccessModel(p0=0.9)
    p = composed_success_prob([100.0, 50.0], [MODE_BETWEEN, MODE_THROUGH], modelo)
    assert p == pytest.approx(0.9 * math.exp(-100 / 2000) * math.exp(-50 / 100))
    assert composed_success_prob([], [], modelo) == pytest.approx(0.9)


def test_parameter_validation():
    with pytest.raises(ConfigError):
        LossParameters(alpha_r=1.5)
    with pytest.raises(ConfigError):
        LossParameters(vacuum_lifetime=0.0)
    with pytest.raises(ConfigError):
        MoveSuccessModel(decay_length_between=50.0, decay_length_through=100.0)
    with pytest.raises(ConfigError):
        CollateralModel(d_min=1.0, interaction_range=0.5)
