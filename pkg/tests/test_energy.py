"""Extension energy, density monotonicity, and potential integrals."""

import numpy as np
import pytest

from fraclab import (DomainError, EnergyEvaluator, Field, Grid,
                     ParameterError, Potential, SolverConfig, density_curve,
                     energy_density, energy_eps, extend, make_params,
                     make_z_levels, monotonicity_residual, potential_integral,
                     save_density_csv, solve_allen_cahn, theta)


def layer_1d(pts):
    return np.sign(pts[:, 0])


def layer_2d(pts):
    return np.sign(pts[:, 1])


def ones_datum(pts):
    return np.ones(len(pts))


def make_cfg(n, s, eps, h, datum, half_width=1.5):
    grid = Grid.make(n, half_width, h, datum)
    return SolverConfig.make(params=make_params(n, s),
                             potential=Potential.prototype(),
                             epsilon=eps, grid=grid)


@pytest.fixture(scope="module")
def layer_setup():
    cfg = make_cfg(1, 0.3, 0.2, 0.05, layer_1d)
    u = solve_allen_cahn(cfg)
    U = extend(u, cfg, make_z_levels(cfg.grid.h, 2.0))
    return cfg, u, U


# -- energy density ----------------------------------------------------------


def test_density_splits_into_nonnegative_parts(layer_setup):
    cfg, _, U = layer_setup
    ev = EnergyEvaluator(U, cfg)
    d = ev.energy_density(0.0, 0.5)
    assert d.dirichlet >= 0.0
    assert d.potential >= 0.0
    assert d.total == d.dirichlet + d.potential
    assert d.radius == 0.5
    assert ev.energy(0.0, 0.5) == d.total


def test_module_wrappers_agree(layer_setup):
    cfg, _, U = layer_setup
    ev = EnergyEvaluator(U, cfg)
    assert energy_density(U, cfg, 0.0, 0.5).total == ev.energy(0.0, 0.5)
    assert energy_eps(U, cfg, 0.0, 0.5) == ev.energy(0.0, 0.5)
    assert theta(U, cfg, 0.0, 0.5) == ev.theta(0.0, 0.5)


def test_theta_is_scaled_energy(layer_setup):
    cfg, _, U = layer_setup
    ev = EnergyEvaluator(U, cfg)
    s, n = cfg.params.s, cfg.params.n
    for r in (0.3, 0.5, 1.0):
        assert ev.theta(0.0, r) == pytest.approx(
            r ** (2.0 * s - n) * ev.energy(0.0, r), rel=1e-14)


def test_energy_grows_with_radius(layer_setup):
    cfg, _, U = layer_setup
    ev = EnergyEvaluator(U, cfg)
    vals = [ev.energy(0.0, r) for r in (0.3, 0.6, 1.0)]
    assert vals[0] < vals[1] < vals[2]


def test_constant_field_has_negligible_energy():
    cfg = make_cfg(1, 0.3, 0.2, 0.05, ones_datum)
    u = Field.make(cfg.grid, np.ones(cfg.grid.shape))
    U = extend(u, cfg, make_z_levels(cfg.grid.h, 2.0))
    d = EnergyEvaluator(U, cfg).energy_density(0.0, 1.0)
    assert d.total <= 1e-3


def test_evaluator_on_2d_interface():
    cfg = make_cfg(2, 0.3, 0.5, 0.25, layer_2d)
    u = solve_allen_cahn(cfg)
    U = extend(u, cfg, make_z_levels(cfg.grid.h, 1.5))
    ev = EnergyEvaluator(U, cfg)
    d = ev.energy_density((0.0, 0.0), 0.75)
    assert d.dirichlet > 0.0 and d.potential > 0.0
    s = cfg.params.s
    assert ev.theta((0.0, 0.0), 0.75) == pytest.approx(
        0.75 ** (2.0 * s - 2.0) * d.total, rel=1e-14)


# -- guards ------------------------------------------------------------------


def test_underresolved_radius_rejected(layer_setup):
    cfg, _, U = layer_setup
    ev = EnergyEvaluator(U, cfg)
    with pytest.raises(ParameterError):
        ev.energy_density(0.0, 2.0 * cfg.grid.h)


def test_short_ladder_rejected():
    cfg = make_cfg(1, 0.3, 0.2, 0.05, layer_1d)
    u = solve_allen_cahn(cfg)
    U = extend(u, cfg, [0.0125, 0.05, 0.2])
    with pytest.raises(ParameterError):
        EnergyEvaluator(U, cfg).energy_density(0.0, 1.0)


def test_center_outside_box_rejected(layer_setup):
    cfg, _, U = layer_setup
    with pytest.raises(DomainError):
        EnergyEvaluator(U, cfg).energy_density(2.0, 0.5)


# -- monotonicity ------------------------------------------------------------


def test_density_curve_nearly_nondecreasing(layer_setup):
    cfg, _, U = layer_setup
    radii = np.geomspace(0.15, 1.0, 8)
    curve = density_curve(U, cfg, 0.0, radii)
    assert np.all(curve > 0.0)
    rel_drop = np.diff(curve) / curve[:-1]
    assert np.min(rel_drop) >= -0.05


def test_monotonicity_residual_contents(layer_setup):
    cfg, _, U = layer_setup
    res = monotonicity_residual(U, cfg, 0.0, 0.15, 0.8)
    assert set(res) == {"lhs", "rhs", "residual", "directional", "potential"}
    assert res["residual"] == pytest.approx(res["lhs"] - res["rhs"], abs=1e-15)
    assert res["directional"] >= 0.0
    assert res["potential"] >= 0.0
    assert abs(res["residual"]) <= 0.1


def test_monotonicity_radius_validation(layer_setup):
    cfg, _, U = layer_setup
    ev = EnergyEvaluator(U, cfg)
    with pytest.raises(ParameterError):
        ev.monotonicity_residual(0.0, 0.8, 0.3)
    with pytest.raises(ParameterError):
        ev.monotonicity_residual(0.0, 2.0 * cfg.grid.h, 0.8)


# -- potential integral ------------------------------------------------------


def test_potential_integral_hand_value():
    cfg = make_cfg(1, 0.3, 0.2, 0.05, layer_1d)
    u0 = Field.make(cfg.grid, np.zeros(cfg.grid.shape))
    # W(0) = 1/4 on exactly 40 cells of width 0.05 inside the unit ball
    assert potential_integral(u0, cfg, 0.0, 1.0) == pytest.approx(0.5, rel=1e-12)


def test_potential_integral_center_guard():
    cfg = make_cfg(1, 0.3, 0.2, 0.05, layer_1d)
    u0 = Field.make(cfg.grid, np.zeros(cfg.grid.shape))
    with pytest.raises(DomainError):
        potential_integral(u0, cfg, 5.0, 1.0)


def test_density_csv_parses_back(tmp_path):
    path = tmp_path / "density.csv"
    radii = np.geomspace(0.1, 1.0, 5)
    thetas = np.linspace(2.0, 3.0, 5)
    save_density_csv(path, radii, thetas)
    rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
    got_r = np.array([float(a) for a, _ in rows])
    got_t = np.array([float(b) for _, b in rows])
    assert np.array_equal(got_r, radii)
    assert np.array_equal(got_t, thetas)
