"""Flatness numbers, packing measures, dyadic checks, nonlocal perimeter."""

import math

import numpy as np
import pytest

from fraclab import (DiscreteMeasure, ParameterError, ball_window, beta2,
                     load_mask_pgm, load_measure_csv, mask_axis,
                     nested_scale_sums, packing_bound_check, packing_measure,
                     perimeter_2s, plane_distance, reifenberg_hypothesis,
                     restriction_dichotomy_gap, save_mask_pgm,
                     save_measure_csv, second_moment)

# three unit atoms: two at distance 1, the third offset by 1/(2 sqrt 2);
# the best-line flatness in the unit ball about the base midpoint is then
# beta^2 = 3 * (2 eta^2 / 9) = 1/12 exactly
TRIPLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.5 / math.sqrt(2.0)]])


# -- discrete measures -------------------------------------------------------


def test_measure_basic_properties():
    mu = DiscreteMeasure.make(TRIPLE, [1.0, 1.0, 1.0])
    assert mu.count == 3
    assert mu.dim == 2
    assert mu.total_mass == 3.0
    assert mu.radii is None
    with pytest.raises(ValueError):
        mu.atoms[0, 0] = 5.0          # read-only


def test_measure_validation():
    with pytest.raises(ParameterError):
        DiscreteMeasure.make(TRIPLE, [1.0, 1.0])           # count mismatch
    with pytest.raises(ParameterError):
        DiscreteMeasure.make(TRIPLE, [1.0, -1.0, 1.0])     # negative weight
    with pytest.raises(ParameterError):
        DiscreteMeasure.make([[np.inf, 0.0]], [1.0])
    with pytest.raises(ParameterError):
        DiscreteMeasure.make(TRIPLE, np.ones(3), radii=[0.1, 0.1])
    with pytest.raises(ParameterError):
        DiscreteMeasure.make(TRIPLE, np.ones(3), radii=[0.1, 0.1, 0.0])
    with pytest.raises(ParameterError):
        DiscreteMeasure.make([[0.0, 0.0], [0.1, 0.0]], [1.0, 1.0],
                             radii=[1.0, 1.0], check_disjoint=True)


def test_ball_membership_includes_boundary():
    mu = DiscreteMeasure.make([[0.0, 0.0], [1.0, 0.0]], [2.0, 3.0])
    assert mu.mass_in((0.0, 0.0), 1.0) == 5.0     # boundary atom counted
    assert mu.mass_in((0.0, 0.0), 0.5) == 2.0
    assert mu.mass_in((5.0, 5.0), 0.1) == 0.0


# -- second moments and flatness ---------------------------------------------


def test_second_moment_structure():
    mu = DiscreteMeasure.make(TRIPLE, np.ones(3))
    sm = second_moment(mu, (0.5, 0.0), 1.0)
    assert sm is not None
    assert np.all(np.diff(sm.eigenvalues) <= 0.0)
    assert np.all(sm.eigenvalues >= 0.0)
    assert np.allclose(sm.eigenvectors @ sm.eigenvectors.T, np.eye(2),
                       atol=1e-12)
    assert second_moment(mu, (9.0, 9.0), 0.5) is None
    with pytest.raises(ParameterError):
        second_moment(mu, (0.0, 0.0), 0.0)


def test_beta2_triple_point_hand_value():
    mu = DiscreteMeasure.make(TRIPLE, np.ones(3))
    res = beta2(mu, (0.5, 0.0), 1.0, k=1)
    assert res.value ** 2 == pytest.approx(1.0 / 12.0, abs=1e-12)
    assert not res.empty


def test_beta2_vanishes_on_collinear_atoms():
    pts = np.array([[0.0, 0.0], [0.3, 0.15], [0.8, 0.4], [-0.4, -0.2]])
    mu = DiscreteMeasure.make(pts, np.ones(4))
    res = beta2(mu, (0.0, 0.0), 1.0, k=1)
    assert res.value <= 1e-7


def test_beta2_empty_ball():
    mu = DiscreteMeasure.make(TRIPLE, np.ones(3))
    res = beta2(mu, (9.0, 9.0), 0.5, k=1)
    assert res.empty
    assert res.value == 0.0
    assert res.plane is None


def test_beta2_plane_dimension_validation():
    mu = DiscreteMeasure.make(TRIPLE, np.ones(3))
    with pytest.raises(ParameterError):
        beta2(mu, (0.5, 0.0), 1.0, k=0)
    with pytest.raises(ParameterError):
        beta2(mu, (0.5, 0.0), 1.0, k=2)


def test_beta2_plane_attains_value():
    # the reported plane realizes the weighted squared-distance objective
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(12, 2))
    w = rng.uniform(0.5, 2.0, size=12)
    mu = DiscreteMeasure.make(pts, w)
    x, r = (0.0, 0.0), 3.0
    res = beta2(mu, x, r, k=1)
    sel = mu.in_ball(x, r)
    d = np.array([plane_distance(res.plane, p) for p in mu.atoms[sel]])
    obj = float(np.sum(mu.weights[sel] * d ** 2)) / r ** 3
    assert res.value ** 2 == pytest.approx(obj, rel=1e-12)
    # and no random line does better
    for _ in range(25):
        q = rng.normal(size=2)
        v = rng.normal(size=2)
        from fraclab import AffinePlane
        other = AffinePlane.make(q, [v / np.linalg.norm(v)])
        d = np.array([plane_distance(other, p) for p in mu.atoms[sel]])
        obj = float(np.sum(mu.weights[sel] * d ** 2)) / r ** 3
        assert res.value ** 2 <= obj + 1e-12


# -- packing measures --------------------------------------------------------


FAMILY = (np.array([[0.0, 0.0], [3.0, 0.0], [6.0, 0.0], [9.0, 0.0]]),
          np.array([1.0, 0.5, 0.25, 0.125]))


def test_packing_measure_scale_cut():
    centers, radii = FAMILY
    mu = packing_measure(centers, radii, k=1, scale_index=2)
    assert mu.count == 2                        # radii 0.25, 0.125 pass
    assert np.array_equal(mu.atoms, centers[2:])
    assert np.array_equal(mu.weights, radii[2:] ** 1)
    assert np.array_equal(mu.radii, radii[2:])
    mu0 = packing_measure(centers, radii, k=2, scale_index=0)
    assert mu0.count == 4
    assert np.array_equal(mu0.weights, radii ** 2)


def test_packing_measure_rejects_overlap():
    with pytest.raises(ParameterError):
        packing_measure([[0.0, 0.0], [0.5, 0.0]], [1.0, 1.0], k=1,
                        scale_index=0)


def test_reifenberg_single_atom_holds():
    mu = DiscreteMeasure.make([[0.25, 0.25]], [0.5], radii=[0.5])
    chk = reifenberg_hypothesis(mu, k=1, center=(0.25, 0.25), radius=1.0)
    assert chk.holds
    assert chk.total == 0.0
    assert chk.threshold == pytest.approx(2.0 ** -6 * 0.01)


def test_reifenberg_region_radius_must_be_dyadic():
    mu = DiscreteMeasure.make([[0.0, 0.0]], [1.0])
    with pytest.raises(ParameterError):
        reifenberg_hypothesis(mu, k=1, center=(0.0, 0.0), radius=0.3)
    with pytest.raises(ParameterError):
        reifenberg_hypothesis(mu, k=1, center=(0.0, 0.0), radius=-0.5)


def test_packing_bound_on_line_family():
    m = 5
    centers = np.stack([np.linspace(-0.8, 0.8, m), np.zeros(m)], axis=1)
    gap = 1.6 / (m - 1)
    radii = np.full(m, 0.45 * gap)
    chk = packing_bound_check(centers, radii, k=1)
    assert chk.hypothesis_ok
    assert chk.mass == pytest.approx(float(np.sum(radii)))
    assert chk.empirical_c > 0.0


def test_packing_bound_validation():
    with pytest.raises(ParameterError):
        packing_bound_check([[0.0, 0.0]], [1.5], k=1)      # radius above 1
    with pytest.raises(ParameterError):
        packing_bound_check([[0.0, 0.0], [0.5, 0.0]], [1.0, 1.0], k=1)


def test_dichotomy_gap_exact_zero():
    centers, radii = FAMILY
    assert restriction_dichotomy_gap(centers, radii, k=1, i=1, j=3) == 0.0
    with pytest.raises(ParameterError):
        restriction_dichotomy_gap(centers, radii, k=1, i=3, j=1)


def test_nested_sums_agree_exactly():
    centers, radii = FAMILY   # doubled balls still disjoint (gaps 3 > r+r')
    lhs, rhs = nested_scale_sums(centers, radii, k=1, i=1, x=(4.5, 0.0))
    assert lhs == rhs


def test_nested_sums_require_doubled_disjointness():
    with pytest.raises(ParameterError):
        nested_scale_sums([[0.0, 0.0], [1.9, 0.0]], [0.5, 0.5], k=1, i=1,
                          x=(0.0, 0.0))


# -- windows and masks -------------------------------------------------------


def test_mask_axis_is_centered():
    ax = mask_axis(4, 0.5)
    assert np.allclose(ax, [-0.75, -0.25, 0.25, 0.75])
    assert np.allclose(mask_axis(5, 0.5), -mask_axis(5, 0.5)[::-1])


def test_ball_window_shapes():
    w1 = ball_window(8, 0.25, (0.0,), 0.5)
    assert w1.shape == (8,) and w1.dtype == bool
    w2 = ball_window((6, 6), 0.5, (0.0, 0.0), 1.0)
    assert w2.shape == (6, 6)
    assert w2[3, 3] and not w2[0, 0]


# -- nonlocal perimeter ------------------------------------------------------


def half_line_mask(m, h):
    return (mask_axis(m, h) > 0.0).astype(int)


def half_line_exact(s, R):
    # window-ball perimeter of a half line: (2R)^(1-2s) / (2s(1-2s))
    return (2.0 * R) ** (1.0 - 2.0 * s) / (2.0 * s * (1.0 - 2.0 * s))


@pytest.mark.parametrize("s,R", [(0.25, 1.0), (0.25, 0.5), (0.3, 1.0),
                                 (0.1, 0.75)])
def test_half_line_perimeter_closed_form(s, R):
    m, h = 64, 1.0 / 16.0
    mask = half_line_mask(m, h)
    win = ball_window(m, h, (0.0,), R)
    got = perimeter_2s(mask, win, s, h)
    assert got == pytest.approx(half_line_exact(s, R), rel=1e-10)


def test_perimeter_complement_symmetry_1d():
    m, h = 64, 1.0 / 16.0
    rng = np.random.default_rng(3)
    mask = (rng.random(m) < 0.5).astype(int)
    win = ball_window(m, h, (0.0,), 1.0)
    a = perimeter_2s(mask, win, 0.25, h)
    b = perimeter_2s(1 - mask, win, 0.25, h)
    assert a == b                                  # bitwise


def test_perimeter_complement_symmetry_2d():
    m, h = 24, 3.0 / 24.0
    ax = mask_axis(m, h)
    mask = (ax[None, :] > 0.2 * np.sin(3.0 * ax[:, None])).astype(int)
    win = ball_window((m, m), h, (0.0, 0.0), 1.0)
    a = perimeter_2s(mask, win, 0.3, h)
    b = perimeter_2s(1 - mask, win, 0.3, h)
    assert a == b
    assert a > 0.0


def test_perimeter_monotone_in_window():
    m, h = 24, 3.0 / 24.0
    ax = mask_axis(m, h)
    mask = np.tile((ax > 0.0).astype(int), (m, 1))
    small = ball_window((m, m), h, (0.0, 0.0), 0.6)
    big = ball_window((m, m), h, (0.0, 0.0), 1.2)
    assert perimeter_2s(mask, small, 0.3, h) < perimeter_2s(mask, big, 0.3, h)


def test_perimeter_validation():
    m, h = 16, 0.25
    mask = half_line_mask(m, h)
    win = ball_window(m, h, (0.0,), 1.0)
    with pytest.raises(ParameterError):
        perimeter_2s(mask * 2, win, 0.25, h)
    with pytest.raises(ParameterError):
        perimeter_2s(mask, win[:-1], 0.25, h)
    with pytest.raises(ParameterError):
        perimeter_2s(mask, win, 0.6, h)
    with pytest.raises(ParameterError):
        perimeter_2s(mask, win, 0.25, -h)
    with pytest.raises(ParameterError):
        perimeter_2s(np.zeros((4, 6), dtype=int), np.ones((4, 6), bool), 0.25, h)
    assert perimeter_2s(np.zeros(m, dtype=int), win, 0.25, h) == 0.0


# -- serialization -----------------------------------------------------------


def test_measure_csv_round_trip(tmp_path):
    mu = DiscreteMeasure.make(TRIPLE, [1.0, 2.0, 0.5],
                              radii=[0.1, 0.2, 0.05])
    path = tmp_path / "mu.csv"
    save_measure_csv(str(path), mu)
    back = load_measure_csv(str(path))
    assert np.array_equal(back.atoms, mu.atoms)
    assert np.array_equal(back.weights, mu.weights)
    assert np.array_equal(back.radii, mu.radii)


def test_measure_csv_without_radii(tmp_path):
    mu = DiscreteMeasure.make([[0.125, -0.25]], [0.75])
    path = tmp_path / "mu.csv"
    save_measure_csv(str(path), mu)
    back = load_measure_csv(str(path))
    assert np.array_equal(back.atoms, mu.atoms)
    assert back.radii is None


def test_mask_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    mask2 = (rng.random((5, 7)) < 0.5).astype(int)
    p2 = tmp_path / "m2.pgm"
    save_mask_pgm(str(p2), mask2)
    assert np.array_equal(load_mask_pgm(str(p2)), mask2)
    mask1 = (rng.random(9) < 0.5).astype(int)
    p1 = tmp_path / "m1.pgm"
    save_mask_pgm(str(p1), mask1)
    back = load_mask_pgm(str(p1))
    assert back.ndim == 1 and np.array_equal(back, mask1)


def test_mask_pgm_validation(tmp_path):
    with pytest.raises(ParameterError):
        save_mask_pgm(str(tmp_path / "bad.pgm"), np.array([0, 2]))
    bad = tmp_path / "bad255.pgm"
    bad.write_text("P2\n2 1\n255\n0 255\n")
    with pytest.raises(ParameterError):
        load_mask_pgm(str(bad))
    nope = tmp_path / "nope.pgm"
    nope.write_text("P5\n2 1\n1\n0 1\n")
    with pytest.raises(ParameterError):
        load_mask_pgm(str(nope))
