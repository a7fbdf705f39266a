"""Nets, ball classification, corona covers, and tubular volumes."""

import json
import math

import numpy as np
import pytest

from fraclab import (Ball, BallCover, ClassificationConsistencyError,
                     Grid, ParameterError, Potential, SolverConfig,
                     StratConfig, calibrate_eta_prime, classify_ball,
                     corona_decomposition, density_ceiling, extend,
                     fit_bad_plane, load_cover_csv, make_params,
                     make_z_levels, maximal_net, plane_distance,
                     refine_cover, save_certificates_json, save_cover_csv,
                     solve_allen_cahn, synthetic_sample, transition_sample,
                     tubular_volume)


def const_theta(value):
    return lambda c, r: value


def line_points(lo=-0.9, hi=0.9, step=0.005):
    xs = np.arange(lo, hi + step / 2.0, step)
    return np.stack([xs, np.zeros_like(xs)], axis=1)


def make_strat(M=2.0, **kw):
    kw.setdefault("k_thresh", 1.0)
    return StratConfig.make(M=M, **kw)


# -- configuration -----------------------------------------------------------


def test_strat_config_validation():
    for bad in (dict(tau=0.0), dict(tau=1.0), dict(rho=0.1), dict(rho=0.0),
                dict(eta=0.25), dict(eta=0.0), dict(rho=0.03, eta=0.03),
                dict(gamma=0.25), dict(gamma=0.0), dict(eta_prime=0.0),
                dict(k_thresh=0.5)):
        with pytest.raises(ParameterError):
            make_strat(**bad)
    with pytest.raises(ParameterError):
        StratConfig.make(M=-1.0)


def test_with_ceiling_replaces_only_m():
    cfg = make_strat(M=2.0)
    low = cfg.with_ceiling(1.25)
    assert low.M == 1.25
    assert (low.tau, low.rho, low.eta) == (cfg.tau, cfg.rho, cfg.eta)


def test_consistency_error_is_runtime_error():
    assert issubclass(ClassificationConsistencyError, RuntimeError)


# -- nets --------------------------------------------------------------------


def test_maximal_net_greedy_selection():
    pts = np.array([0.0, 0.1, 0.5, 1.0])
    idx = maximal_net(pts, 0.3)
    assert idx.tolist() == [0, 2, 3]
    # maximality: every point within spacing of an accepted one
    acc = pts[idx]
    assert all(np.min(np.abs(acc - p)) < 0.3 for p in pts)


def test_maximal_net_edge_cases():
    assert maximal_net(np.zeros((0, 2)), 0.5).size == 0
    assert maximal_net(np.array([[1.0, 2.0]]), 0.5).tolist() == [0]
    with pytest.raises(ParameterError):
        maximal_net(np.array([0.0]), 0.0)


# -- classification ----------------------------------------------------------


def test_classify_constant_density_good():
    sample = synthetic_sample(line_points(), const_theta(2.0), eps=0.05,
                              h=0.005)
    cfg = make_strat(M=2.0)
    assert classify_ball(sample, cfg, np.zeros(2), 0.5) == "good"


def test_classify_density_dip_bad():
    def theta(c, r):
        return 1.0 if abs(c[0] - 0.3) < 0.02 else 2.0
    sample = synthetic_sample(line_points(), theta, eps=0.05, h=0.005)
    cfg = make_strat(M=2.0)
    assert classify_ball(sample, cfg, np.array([0.3, 0.0]), 0.5) == "bad"
    assert classify_ball(sample, cfg, np.array([-0.6, 0.0]), 0.1) == "good"


def test_classify_scale_floor():
    sample = synthetic_sample(line_points(), const_theta(2.0), eps=0.05,
                              h=0.005)
    cfg = make_strat(M=2.0)
    classify_ball(sample, cfg, np.zeros(2), 0.05)     # t = k*eps allowed
    with pytest.raises(ParameterError):
        classify_ball(sample, cfg, np.zeros(2), 0.04)


def test_fit_bad_plane_2d_point_plane():
    pts = np.array([[0.31, 0.0], [0.29, 0.0], [0.3, 0.01]])
    fit = fit_bad_plane(pts, np.array([0.3, 0.0]), t=1.0, rho=0.05)
    assert fit.contained
    assert fit.plane is not None
    assert fit.max_dist <= 0.02
    # the 0-plane is the center of mass; distances are plain distances
    cm = np.mean(pts, axis=0)
    assert plane_distance(fit.plane, pts[0]) == pytest.approx(
        float(np.linalg.norm(pts[0] - cm)), rel=1e-12)


def test_fit_bad_plane_spread_points_not_contained():
    pts = np.array([[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5]])
    fit = fit_bad_plane(pts, np.zeros(2), t=1.0, rho=0.05)
    assert not fit.contained
    assert fit.max_dist > 0.05


def test_fit_bad_plane_empty_and_1d():
    fit = fit_bad_plane(np.zeros((0, 2)), np.array([0.1, 0.2]), t=1.0,
                        rho=0.05)
    assert fit.contained and fit.max_dist == 0.0
    fit1 = fit_bad_plane(np.array([[0.3]]), np.array([0.0]), t=1.0, rho=0.05)
    assert not fit1.contained and fit1.plane is None
    empty1 = fit_bad_plane(np.zeros((0, 1)), np.array([0.0]), t=1.0, rho=0.05)
    assert empty1.contained


# -- ceiling and calibration -------------------------------------------------


def test_density_ceiling_reference_scale():
    sample = synthetic_sample(np.array([[0.0], [0.5], [-0.5]]),
                              lambda c, r: r + abs(c[0]), eps=0.05, h=0.01)
    assert density_ceiling(sample) == pytest.approx(2.5)
    assert density_ceiling(sample, 0.7) == pytest.approx(1.2)


def test_density_ceiling_includes_probes():
    sample = synthetic_sample(np.array([[0.0]]),
                              lambda c, r: r + abs(c[0]), eps=0.05, h=0.01,
                              probes=np.array([[2.0]]))
    assert density_ceiling(sample) == pytest.approx(4.0)


def test_calibrate_eta_prime_raises_slack():
    sample = synthetic_sample(np.array([[0.0], [0.2]]), const_theta(1.5),
                              eps=0.05, h=0.01)
    cfg = make_strat(M=2.0)
    out = calibrate_eta_prime(sample, cfg)
    assert out.eta_prime == pytest.approx(0.5, abs=1e-6)
    assert out.eta_prime > 0.5                     # strict margin


def test_calibrate_eta_prime_keeps_sufficient_slack():
    sample = synthetic_sample(np.array([[0.0]]), const_theta(2.0),
                              eps=0.05, h=0.01)
    cfg = make_strat(M=2.0)
    assert calibrate_eta_prime(sample, cfg).eta_prime == cfg.eta_prime


# -- corona decomposition ----------------------------------------------------


def test_corona_covers_constant_density_line():
    sample = synthetic_sample(line_points(), const_theta(2.0), eps=0.05,
                              h=0.005)
    cfg = make_strat(M=2.0)
    cover = corona_decomposition(sample, cfg, r_min=0.06)
    certs = cover.certificates
    assert certs["covered_fraction"] == 1.0
    assert certs["energy_drop_ok"]
    assert certs["n_balls"] == len(cover.balls) > 0
    assert all(b.radius >= 0.06 for b in cover.balls)
    assert certs["packing_sum"] == pytest.approx(
        sum(b.radius ** 1 for b in cover.balls))
    for audit in certs["tree_audits"]:
        assert audit["covering_ok"]
        assert audit["fifth_disjoint"]


def concentrated_high_theta(c, r):
    # at fine scales the density sits at the ceiling everywhere; at coarse
    # scales only a small zone around the origin stays high, so coarse balls
    # classify bad with a high set contained in a point-plane tube
    if r <= 0.002:
        return 2.0
    return 2.0 if abs(c[0]) <= 0.04 else 1.0


def test_corona_bad_root_terminal_generation():
    sample = synthetic_sample(line_points(), concentrated_high_theta,
                              eps=0.05, h=0.005)
    cfg = make_strat(M=2.0)
    cover = corona_decomposition(sample, cfg, r_min=0.06)
    certs = cover.certificates
    assert certs["covered_fraction"] == 1.0
    assert certs["energy_drop_ok"]
    audits = certs["tree_audits"]
    assert len(audits) == 1                          # one terminal bad tree
    assert audits[0]["kind"] == "bad"
    assert audits[0]["covering_ok"]
    assert audits[0]["stop_structure_ok"]
    assert audits[0]["contraction_ok"]               # no continuation chain
    assert all(b.radius == 0.06 for b in cover.balls)


def test_corona_alternates_through_bad_root():
    sample = synthetic_sample(line_points(), concentrated_high_theta,
                              eps=0.002, h=0.001)
    cfg = make_strat(M=2.0)
    cover = corona_decomposition(sample, cfg, r_min=0.01)
    certs = cover.certificates
    assert certs["covered_fraction"] == 1.0
    audits = certs["tree_audits"]
    kinds = [a["kind"] for a in audits]
    assert kinds[0] == "bad"
    assert "good" in kinds                           # bad root shed good leaves
    assert audits[0]["chain"]                        # non-terminal generation
    assert audits[0]["stop_structure_ok"]
    assert all(b.radius >= 0.01 for b in cover.balls)


def test_corona_scale_refusals():
    sample = synthetic_sample(line_points(), const_theta(2.0), eps=0.05,
                              h=0.005)
    cfg = make_strat(M=2.0)
    with pytest.raises(ParameterError):
        corona_decomposition(sample, cfg, r_min=0.04)     # below k*eps
    with pytest.raises(ParameterError):
        corona_decomposition(sample, cfg, r_min=1.0)      # not below root


def test_corona_empty_targets():
    pts = np.stack([np.linspace(1.5, 2.0, 20), np.zeros(20)], axis=1)
    sample = synthetic_sample(pts, const_theta(2.0), eps=0.05, h=0.005)
    cfg = make_strat(M=2.0)
    cover = corona_decomposition(sample, cfg, r_min=0.06)
    assert cover.balls == []
    assert cover.certificates["covered_fraction"] == 1.0
    assert cover.certificates["energy_drop_ok"]


def test_refine_cover_reaches_uniform_radius():
    sample = synthetic_sample(line_points(), const_theta(2.0), eps=0.05,
                              h=0.005)
    cfg = make_strat(M=2.0)
    cover = corona_decomposition(sample, cfg, r_min=0.3)
    assert any(b.radius >= 0.3 for b in cover.balls)
    fine = refine_cover(sample, cfg, cover, 0.06)
    assert all(b.radius <= 0.06 * (1 + 1e-12) for b in fine.balls)
    assert fine.certificates["covered_fraction"] == 1.0
    gens = fine.certificates["generations"]
    assert len(gens) >= 2
    assert gens[-1]["radius_bound_ok"]
    assert fine.r_min == 0.06


def test_refine_cover_short_circuits_when_fine_enough():
    sample = synthetic_sample(line_points(), const_theta(2.0), eps=0.05,
                              h=0.005)
    cfg = make_strat(M=2.0)
    cover = corona_decomposition(sample, cfg, r_min=0.06)
    again = refine_cover(sample, cfg, cover, 0.06)
    assert again is cover
    with pytest.raises(ParameterError):
        refine_cover(sample, cfg, cover, 0.01)            # below k*eps


# -- tubular volume ----------------------------------------------------------


def test_tube_volume_single_point_2d():
    vol = tubular_volume(np.array([[0.0, 0.0]]), 0.3, h_c=0.3 / 128.0)
    assert vol == pytest.approx(math.pi * 0.09, rel=1e-2)


def test_tube_volume_single_point_1d():
    vol = tubular_volume(np.array([[0.0]]), 0.25, h_c=0.25 / 128.0)
    assert vol == pytest.approx(0.5, rel=1e-2)


def test_tube_volume_segment_1d():
    pts = np.linspace(-0.5, 0.5, 201).reshape(-1, 1)
    vol = tubular_volume(pts, 0.1, h_c=0.1 / 128.0)
    assert vol == pytest.approx(1.2, rel=1e-2)


def test_tube_volume_outside_unit_ball():
    assert tubular_volume(np.array([[1.5, 0.0]]), 0.2) == 0.0
    with pytest.raises(ParameterError):
        tubular_volume(np.array([[0.0, 0.0]]), 0.0)


# -- field-backed samples ----------------------------------------------------


def test_transition_sample_from_small_solve():
    grid = Grid.make(2, 1.5, 0.25, lambda p: np.sign(p[:, 1]))
    cfg = SolverConfig.make(params=make_params(2, 0.3),
                            potential=Potential.prototype(),
                            epsilon=0.5, grid=grid)
    u = solve_allen_cahn(cfg)
    U = extend(u, cfg, make_z_levels(grid.h, 2.0))
    sample = transition_sample(U, cfg, tau=0.5)
    assert sample.n == 2
    assert sample.eps == 0.5
    assert len(sample.points) > 0
    assert np.all(np.abs(sample.points[:, 1]) <= 0.5)   # band near interface
    assert sample.q_floor == pytest.approx(3.0 * grid.h)
    assert sample.q_ceil > sample.q_floor
    # clamped density query works below the floor and above the ceiling
    y = sample.points[0]
    assert sample.theta(y, 1e-9) == sample.theta(y, sample.q_floor)
    assert sample.theta(y, 99.0) == sample.theta(y, sample.q_ceil)


# -- serialization -----------------------------------------------------------


def test_cover_csv_round_trip(tmp_path):
    balls = [Ball(idx=4, center=np.array([0.25, -0.5]), radius=0.1,
                  kind="good", gen=2),
             Ball(idx=-1, center=np.array([0.0, 0.0]), radius=0.06,
                  kind="stop", gen=3)]
    cover = BallCover(balls=balls, r_min=0.06, certificates={"x": 1})
    path = tmp_path / "cover.csv"
    save_cover_csv(str(path), cover)
    back = load_cover_csv(str(path))
    assert len(back.balls) == 2
    for a, b in zip(back.balls, balls):
        assert np.array_equal(a.center, b.center)
        assert a.radius == b.radius
        assert a.kind == b.kind
        assert a.gen == b.gen
    assert back.r_min == 0.06


def test_certificates_json_deterministic(tmp_path):
    certs = {
        "flag": np.bool_(True),
        "count": np.int64(3),
        "value": np.float64(0.25),
        "arr": np.array([1.0, 2.0]),
        "worst": math.inf,
        "nested": {"z": 1, "a": [np.float64(2.0), {"k": np.bool_(False)}]},
    }
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_certificates_json(str(p1), certs)
    save_certificates_json(str(p2), certs)
    assert p1.read_bytes() == p2.read_bytes()
    data = json.loads(p1.read_text())
    assert data["flag"] is True
    assert data["count"] == 3
    assert data["arr"] == [1.0, 2.0]
    assert data["worst"] == "inf"
    assert data["nested"]["a"][1]["k"] is False
