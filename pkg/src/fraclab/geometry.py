"""Point-cloud geometry: discrete measures, flatness numbers, packing checks,
and the nonlocal interaction perimeter on pixel masks.

The flatness number of a measure in a ball is computed from the eigenvalues
of the mass-normalized second-moment matrix: the best-fit affine k-plane
passes through the center of mass and is spanned by the top-k eigenvectors,
and the squared flatness equals ``r^(-k-2) * mass * (sum of the n-k smallest
eigenvalues)``.  Packing measures assign each ball center the weight
``r_p^k`` and restrict to radii below a dyadic scale; the associated
hypothesis checker sums squared flatness numbers across dyadic scales and
compares against ``2^(-2-2n) * delta * 2^(-i k)``.

The perimeter routine sums the interaction kernel ``|x-y|^(-n-2s)`` over
cell pairs split by a binary mask, with dense subcell quadrature near the
diagonal and the package's graded exterior quadrature beyond the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import convolve
from scipy.spatial.distance import pdist

from .core import AffinePlane, Grid, ParameterError, plane_distance
from .solver import _pair_power_sums, build_exterior_geometry

__all__ = [
    "DiscreteMeasure",
    "SecondMoment",
    "BetaResult",
    "ReifenbergCheck",
    "PackingCheck",
    "second_moment",
    "beta2",
    "packing_measure",
    "reifenberg_hypothesis",
    "packing_bound_check",
    "restriction_dichotomy_gap",
    "nested_scale_sums",
    "perimeter_2s",
    "mask_axis",
    "ball_window",
    "save_measure_csv",
    "load_measure_csv",
    "save_mask_pgm",
    "load_mask_pgm",
]


# --------------------------------------------------------------------------
# discrete measures


@dataclass(frozen=True)
class DiscreteMeasure:
    """A finite atomic measure: points with nonnegative weights.

    ``radii`` is carried for packing measures (one ball radius per atom) and
    is ``None`` otherwise.  Arrays are read-only.
    """

    atoms: np.ndarray          # (count, dim)
    weights: np.ndarray        # (count,)
    radii: Optional[np.ndarray] = None

    @staticmethod
    def make(atoms, weights, radii=None,
             check_disjoint: bool = False) -> "DiscreteMeasure":
        pts = np.atleast_2d(np.asarray(atoms, dtype=float))
        w = np.asarray(weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.size:
            raise ParameterError(
                f"{pts.shape[0]} atoms but {w.size} weights")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ParameterError("atoms must be finite")
        if w.size and (not np.all(np.isfinite(w)) or np.any(w < 0)):
            raise ParameterError("weights must be finite and nonnegative")
        r = None
        if radii is not None:
            r = np.asarray(radii, dtype=float).reshape(-1)
            if r.size != pts.shape[0]:
                raise ParameterError("one radius per atom required")
            if r.size and (not np.all(np.isfinite(r)) or np.any(r <= 0)):
                raise ParameterError("radii must be finite and positive")
            if check_disjoint:
                _require_disjoint(pts, r)
            r = r.copy()
            r.setflags(write=False)
        pts = pts.copy()
        w = w.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        return DiscreteMeasure(atoms=pts, weights=w, radii=r)

    @property
    def count(self) -> int:
        return int(self.atoms.shape[0])

    @property
    def dim(self) -> int:
        return int(self.atoms.shape[1]) if self.count else 0

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def in_ball(self, x, r: float) -> np.ndarray:
        """Boolean selector of atoms in the closed ball B_r(x)."""
        if self.count == 0:
            return np.zeros(0, dtype=bool)
        x = np.asarray(x, dtype=float).reshape(-1)
        d = np.linalg.norm(self.atoms - x[None, :], axis=1)
        return d <= r + 1e-14 * max(r, 1.0)

    def mass_in(self, x, r: float) -> float:
        sel = self.in_ball(x, r)
        return float(np.sum(self.weights[sel]))


def _require_disjoint(pts: np.ndarray, radii: np.ndarray) -> None:
    """Validate that the balls B_{r_p}(p) are pairwise disjoint."""
    m = pts.shape[0]
    if m < 2:
        return
    gaps = pdist(pts) - (radii[:, None] + radii[None, :])[
        np.triu_indices(m, k=1)]
    worst = float(np.min(gaps))
    if worst < -1e-12:
        raise ParameterError(
            f"balls overlap: worst center gap deficit {-worst:.3e}")


# --------------------------------------------------------------------------
# second moments and flatness numbers


class SecondMoment(NamedTuple):
    center: np.ndarray        # center of mass in the ball
    matrix: np.ndarray        # mass-normalized second-moment matrix
    eigenvalues: np.ndarray   # descending, nonnegative
    eigenvectors: np.ndarray  # rows, orthonormal, matching order


@dataclass(frozen=True)
class BetaResult:
    """Flatness of a measure in a ball against its best-fit k-plane.

    ``value`` is the nonnegative flatness number; ``plane`` passes through
    the center of mass spanned by the top-k eigenvectors.  ``empty`` marks
    a ball with zero mass, where the value is 0 by convention and the plane
    is degenerate (None).
    """

    value: float
    plane: Optional[AffinePlane]
    eigenvalues: Optional[np.ndarray]
    empty: bool = False


def second_moment(mu: DiscreteMeasure, x, r: float) -> Optional[SecondMoment]:
    """Center of mass and normalized second moments of ``mu`` in B_r(x).

    Returns ``None`` when the ball carries no mass (the empty-ball signal;
    flatness numbers are 0 by convention in that case).
    """
    if r <= 0:
        raise ParameterError(f"ball radius must be positive, got {r}")
    sel = mu.in_ball(x, r)
    w = mu.weights[sel]
    mass = float(np.sum(w))
    if mass <= 0.0:
        return None
    pts = mu.atoms[sel]
    cm = (w @ pts) / mass
    y = pts - cm[None, :]
    q = (y.T * w) @ y / mass
    lam, vec = np.linalg.eigh(q)          # ascending
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vec = vec[:, order].T                 # rows are eigenvectors
    return SecondMoment(center=cm, matrix=q, eigenvalues=lam, eigenvectors=vec)


def beta2(mu: DiscreteMeasure, x, r: float, k: int) -> BetaResult:
    """Scale-normalized L2 flatness of ``mu`` in B_r(x) against k-planes.

    ``value**2 = r^(-k-2) * mass(B_r) * sum of the (n-k) smallest
    eigenvalues`` of the normalized second-moment matrix; the reported plane
    attains the infimum over all affine k-planes.
    """
    n = mu.dim if mu.count else np.asarray(x, dtype=float).size
    if not 1 <= k <= n - 1:
        raise ParameterError(f"plane dimension k={k} invalid for dimension {n}")
    sm = second_moment(mu, x, r) if mu.count else None
    if sm is None:
        return BetaResult(value=0.0, plane=None, eigenvalues=None, empty=True)
    mass = mu.mass_in(x, r)
    tail = float(np.sum(sm.eigenvalues[k:]))
    val2 = mass * tail / r ** (k + 2)
    plane = AffinePlane.make(sm.center, sm.eigenvectors[:k])
    return BetaResult(value=math.sqrt(max(val2, 0.0)), plane=plane,
                      eigenvalues=sm.eigenvalues, empty=False)


def _beta_sq(mu: DiscreteMeasure, x, r: float, k: int) -> float:
    """Squared flatness without building the plane object (inner loops)."""
    sm = second_moment(mu, x, r)
    if sm is None:
        return 0.0
    mass = mu.mass_in(x, r)
    return mass * float(np.sum(sm.eigenvalues[k:])) / r ** (k + 2)


# --------------------------------------------------------------------------
# packing measures and the dyadic-scale hypothesis


def packing_measure(centers, radii, k: int, scale_index: int,
                    check_disjoint: bool = True) -> DiscreteMeasure:
    """Atomic measure of a ball family restricted below a dyadic scale.

    Atoms are the centers with ``r_p <= 2**(-scale_index)``, each weighted
    ``r_p**k``.  Pairwise disjointness of the balls is validated when
    declared.
    """
    pts = np.atleast_2d(np.asarray(centers, dtype=float))
    r = np.asarray(radii, dtype=float).reshape(-1)
    if pts.shape[0] != r.size:
        raise ParameterError("one radius per center required")
    if check_disjoint:
        _require_disjoint(pts, r)
    cut = 2.0 ** (-scale_index)
    sel = r <= cut * (1.0 + 1e-12)
    return DiscreteMeasure.make(pts[sel].reshape(-1, pts.shape[1]),
                                r[sel] ** k, radii=r[sel])


class ReifenbergCheck(NamedTuple):
    total: float       # dyadic-scale sum of weighted squared flatness
    threshold: float   # 2^(-2-2n) * delta * 2^(-i k)
    holds: bool


def _min_positive_gap(pts: np.ndarray) -> float:
    """Smallest positive pairwise distance, or 0 if none exists."""
    if pts.shape[0] < 2:
        return 0.0
    d = pdist(pts)
    pos = d[d > 0.0]
    return float(np.min(pos)) if pos.size else 0.0


def _scale_index_of(radius: float) -> int:
    if radius <= 0:
        raise ParameterError(f"region radius must be positive, got {radius}")
    i = -math.log2(radius)
    j = round(i)
    if abs(i - j) > 1e-9:
        raise ParameterError(
            f"region radius must be a dyadic power 2**(-i), got {radius}")
    return int(j)


def reifenberg_hypothesis(mu: DiscreteMeasure, k: int, center,
                          radius: float, delta_dr: float = 0.01,
                          _cache: Optional[dict] = None) -> ReifenbergCheck:
    """Dyadic flatness-sum test for a packing measure in one region ball.

    Sums ``beta(y, 2^-j)**2 d mu(y)`` over the region ball ``B_radius(center)``
    and over the dyadic scales ``2^-j <= 2 * radius``.  The sum truncates
    exactly: once ``2^-j`` drops below the smallest positive atom gap, every
    ball holds a single atom location and all further terms vanish.  Holds
    when the total stays below ``2^(-2-2n) * delta_dr * 2^(-i k)``.
    """
    i = _scale_index_of(radius)
    n = mu.dim if mu.count else np.asarray(center, dtype=float).size
    threshold = 2.0 ** (-2 - 2 * n) * delta_dr * 2.0 ** (-i * k)
    if mu.count == 0:
        return ReifenbergCheck(total=0.0, threshold=threshold, holds=True)
    gap = _min_positive_gap(mu.atoms)
    sel = mu.in_ball(center, radius)
    idx = np.nonzero(sel)[0]
    total = 0.0
    if idx.size and gap > 0.0:
        j = i - 1
        while 2.0 ** (-j) >= gap:
            rj = 2.0 ** (-j)
            for a in idx:
                if _cache is not None:
                    key = (int(a), int(j))
                    b2 = _cache.get(key)
                    if b2 is None:
                        b2 = _beta_sq(mu, mu.atoms[a], rj, k)
                        _cache[key] = b2
                else:
                    b2 = _beta_sq(mu, mu.atoms[a], rj, k)
                total += float(mu.weights[a]) * b2
            j += 1
    return ReifenbergCheck(total=total, threshold=threshold,
                           holds=bool(total <= threshold))


class PackingCheck(NamedTuple):
    hypothesis_ok: bool   # flatness sums below threshold at every center/scale
    mass: float           # sum of r_q**k over the whole family
    empirical_c: float    # sup of mu_i(B_{2^-i}(x)) * 2^(i k) over tests


def packing_bound_check(centers, radii, k: int,
                        delta_dr: float = 0.01) -> PackingCheck:
    """Run the dyadic hypothesis at every ball center and dyadic scale.

    Reports whether the hypothesis holds everywhere, the family mass
    ``sum r_q**k`` (the quantity the packing theorem bounds), and the
    measured scale-normalized mass ratio over all tested region balls.
    """
    pts = np.atleast_2d(np.asarray(centers, dtype=float))
    r = np.asarray(radii, dtype=float).reshape(-1)
    _require_disjoint(pts, r)
    if np.any(r > 1.0 + 1e-12):
        raise ParameterError("ball radii must not exceed 1")
    mass = float(np.sum(r ** k))
    gap = _min_positive_gap(pts)
    i_max = 0 if gap <= 0.0 else max(0, math.ceil(-math.log2(gap))) + 1
    i_max = min(i_max, 60)
    ok = True
    emp_c = 0.0
    for i in range(i_max + 1):
        mu_i = packing_measure(pts, r, k, i, check_disjoint=False)
        if mu_i.count == 0:
            continue
        cache: dict = {}
        ri = 2.0 ** (-i)
        for a in range(mu_i.count):
            chk = reifenberg_hypothesis(mu_i, k, mu_i.atoms[a], ri,
                                        delta_dr, _cache=cache)
            ok = ok and chk.holds
            emp_c = max(emp_c, mu_i.mass_in(mu_i.atoms[a], ri) / ri ** k)
    return PackingCheck(hypothesis_ok=ok, mass=mass, empirical_c=emp_c)


def restriction_dichotomy_gap(centers, radii, k: int, i: int, j: int) -> float:
    """Worst deviation from the scale-restriction dichotomy.

    For disjoint balls and scales ``j >= i``, at each atom x of the coarse
    measure the flatness at scale ``2^-j`` either equals the fine measure's
    flatness there (when ``r_x <= 2^-j``) or vanishes (when ``r_x > 2^-j``,
    disjointness leaves x alone in its ball).  Returns the largest absolute
    mismatch over the atoms; 0 means the dichotomy holds exactly.
    """
    if j < i:
        raise ParameterError(f"need j >= i, got i={i}, j={j}")
    pts = np.atleast_2d(np.asarray(centers, dtype=float))
    r = np.asarray(radii, dtype=float).reshape(-1)
    _require_disjoint(pts, r)
    mu_i = packing_measure(pts, r, k, i, check_disjoint=False)
    mu_j = packing_measure(pts, r, k, j, check_disjoint=False)
    rj = 2.0 ** (-j)
    worst = 0.0
    for a in range(mu_i.count):
        x = mu_i.atoms[a]
        b_coarse = math.sqrt(max(_beta_sq(mu_i, x, rj, k), 0.0))
        if mu_i.radii[a] <= rj * (1.0 + 1e-12):
            b_fine = math.sqrt(max(_beta_sq(mu_j, x, rj, k), 0.0))
            worst = max(worst, abs(b_coarse - b_fine))
        else:
            worst = max(worst, abs(b_coarse))
    return worst


def nested_scale_sums(centers, radii, k: int, i: int, x) -> Tuple[float, float]:
    """The two sides of the nested dyadic flatness-sum identity.

    For a family whose doubled balls are pairwise disjoint, summing the
    coarse measure's squared flatness over scales ``2^-j <= 2^(1-i)`` inside
    ``B_{2^-i}(x)`` agrees exactly with the same sum taken against the
    scale-matched measures.  Both finite sums are returned for comparison.
    """
    pts = np.atleast_2d(np.asarray(centers, dtype=float))
    r = np.asarray(radii, dtype=float).reshape(-1)
    _require_disjoint(pts, 2.0 * r)
    mu_i = packing_measure(pts, r, k, i, check_disjoint=False)
    ri = 2.0 ** (-i)
    gap = _min_positive_gap(pts)
    lhs = 0.0
    rhs = 0.0
    if mu_i.count and gap > 0.0:
        sel = mu_i.in_ball(x, ri)
        idx = np.nonzero(sel)[0]
        j = i - 1
        while 2.0 ** (-j) >= gap:
            rj = 2.0 ** (-j)
            mu_j = packing_measure(pts, r, k, j, check_disjoint=False)
            selj = mu_j.in_ball(x, ri)
            idxj = np.nonzero(selj)[0]
            for a in idx:
                lhs += float(mu_i.weights[a]) * _beta_sq(
                    mu_i, mu_i.atoms[a], rj, k)
            for a in idxj:
                rhs += float(mu_j.weights[a]) * _beta_sq(
                    mu_j, mu_j.atoms[a], rj, k)
            j += 1
    return lhs, rhs


# --------------------------------------------------------------------------
# nonlocal perimeter on pixel masks


def mask_axis(m: int, h: float) -> np.ndarray:
    """Cell-center coordinates of an m-cell axis centered at the origin."""
    return (np.arange(m) - 0.5 * (m - 1)) * h


def ball_window(shape, h: float, center, radius: float) -> np.ndarray:
    """Boolean window selecting cells whose center lies in a ball."""
    shape = tuple(int(v) for v in np.atleast_1d(shape))
    c = np.asarray(center, dtype=float).reshape(-1)
    axes = [mask_axis(m, h) for m in shape]
    if len(shape) == 1:
        return np.abs(axes[0] - c[0]) <= radius
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
    return (xx - c[0]) ** 2 + (yy - c[1]) ** 2 <= radius ** 2


def _subcell_pair_factor(delta: np.ndarray, n: int, s: float, h: float,
                         q: int) -> float:
    """Average kernel over a pair of square cells offset by ``delta``.

    Both cells are split into q subcells per axis and the kernel is averaged
    over subcell-center pairs; accuracy improves with the subcell count for
    touching cells, where the midpoint value is far off.  Only used in 2D;
    the 1D table is exact.
    """
    c = (np.arange(q) - 0.5 * (q - 1)) * (h / q)
    gx, gy = np.meshgrid(c, c, indexing="ij")
    sub = np.stack([gx.ravel(), gy.ravel()], axis=1)
    diff = delta[None, None, :] + sub[None, :, :] - sub[:, None, :]
    d2 = np.sum(diff * diff, axis=2)
    vals = d2 ** (-(n + 2.0 * s) / 2.0)
    return float(np.mean(vals))


def _perimeter_table(n: int, m: int, h: float, s: float,
                     subcell_q: int, correct_cells: int) -> np.ndarray:
    """Kernel interaction table over cell offsets, origin punctured.

    Entries carry the full pair weight h^(2n) * average kernel.  Offsets
    within ``correct_cells`` cells of the origin (sup-norm) use the subcell
    average; the rest use the midpoint kernel value.
    """
    offs = (np.arange(2 * m - 1) - (m - 1)) * h
    p = n + 2.0 * s
    if n == 1:
        # Exact pair integrals: the double antiderivative of |t|^(-1-2s) on
        # t > 0 is H(t) = t^(1-2s) / ((2s)(2s-1)), and the integral of the
        # kernel over two cells at offset k*h is the centered second
        # difference h^(1-2s) * [H(k+1) - 2 H(k) + H(k-1)].
        k = np.abs(np.arange(2 * m - 1) - (m - 1)).astype(float)
        denom = (2.0 * s) * (2.0 * s - 1.0)

        def big_h(t: np.ndarray) -> np.ndarray:
            return np.power(np.maximum(t, 0.0), 1.0 - 2.0 * s) / denom

        table = h ** (1.0 - 2.0 * s) * (
            big_h(k + 1.0) - 2.0 * big_h(k) + big_h(k - 1.0))
        table[m - 1] = 0.0
        return table
    d2 = offs[:, None] ** 2 + offs[None, :] ** 2
    table = np.power(np.where(d2 > 0, d2, 1.0), -p / 2.0)
    table[m - 1, m - 1] = 0.0
    table = table * h ** (2 * n)
    rng = range(-correct_cells, correct_cells + 1)
    for di in rng:
        for dj in rng:
            if di == 0 and dj == 0:
                continue
            table[m - 1 + di, m - 1 + dj] = h ** 4 * _subcell_pair_factor(
                np.array([di * h, dj * h]), n, s, h, subcell_q)
    return table


_EXTERIOR_CACHE: dict = {}


def _nearest_cell_index(pts: np.ndarray, m: int, h: float) -> np.ndarray:
    """Flat index of the grid cell nearest to each point (clipped to box)."""
    half = 0.5 * m * h
    ij = np.clip(np.floor((pts + half) / h).astype(int), 0, m - 1)
    if pts.shape[1] == 1:
        return ij[:, 0]
    return ij[:, 0] * m + ij[:, 1]


def _exterior_split_masses(mask: np.ndarray, s: float, h: float,
                           r_cut_factor: float):
    """Kernel mass of the beyond-grid region, split by extended membership.

    The mask is extended beyond the grid by nearest-cell membership (clip to
    the box), which makes the exterior contribution symmetric under mask
    complement.  Returns (mass_e, mass_c): per-cell kernel masses of the
    exterior portions extended as E and as its complement; multiplying by h^n
    recovers double integrals over (cell) x (exterior part).
    """
    n, m = mask.ndim, mask.shape[0]
    half = 0.5 * m * h
    if n == 1:
        # exact: integral over each cell of (half -/+ x)^(-2s)/(2s)
        x = mask_axis(m, h)
        lo, hi = x - 0.5 * h, x + 0.5 * h
        c = 2.0 * s * (1.0 - 2.0 * s)
        right = ((half - lo) ** (1.0 - 2.0 * s)
                 - (half - hi) ** (1.0 - 2.0 * s)) / (c * h)
        left = ((half + hi) ** (1.0 - 2.0 * s)
                - (half + lo) ** (1.0 - 2.0 * s)) / (c * h)
        mass_e = left * float(mask[0]) + right * float(mask[-1])
        mass_c = left * (1.0 - float(mask[0])) + right * (1.0 - float(mask[-1]))
        return mass_e, mass_c
    key = (m, float(h), float(s), float(r_cut_factor))
    cached = _EXTERIOR_CACHE.get(key)
    if cached is None:
        grid = Grid.make(n, half, h, exterior=lambda p: np.zeros(len(p)))
        ext = build_exterior_geometry(grid, r_cut=r_cut_factor * half)
        ring_idx = _nearest_cell_index(ext.points, m, h)
        tail_idx = _nearest_cell_index(ext.r_cut * ext.tail_dirs, m, h)
        mx = np.maximum(np.abs(ext.tail_dirs[:, 0]), np.abs(ext.tail_dirs[:, 1]))
        dtheta = 2.0 * math.pi / len(ext.tail_dirs)
        tail_mass = dtheta * (ext.r_cut / mx) ** (-2.0 * s) / (2.0 * s)
        cached = (grid.points(), ext.points, ext.areas, ring_idx,
                  tail_idx, tail_mass)
        _EXTERIOR_CACHE[key] = cached
    nodes, pts, areas, ring_idx, tail_idx, tail_mass = cached
    flat = mask.reshape(-1).astype(float)
    member_ring = flat[ring_idx]
    member_tail = flat[tail_idx]
    expo = -(n + 2.0 * s)
    # both sides computed directly so mask complement swaps them bitwise
    mass_e = _pair_power_sums(nodes, pts, areas * member_ring, expo)
    mass_e = mass_e + float(np.sum(tail_mass * member_tail))
    mass_c = _pair_power_sums(nodes, pts, areas * (1.0 - member_ring), expo)
    mass_c = mass_c + float(np.sum(tail_mass * (1.0 - member_tail)))
    shape = (m, m)
    return mass_e.reshape(shape), mass_c.reshape(shape)


def perimeter_2s(mask: np.ndarray, window: np.ndarray, s: float,
                 h: float = 1.0, subcell_q: int = 16,
                 correct_cells: int = 2,
                 r_cut_factor: float = 100.0) -> float:
    """Nonlocal interaction perimeter of a binary mask within a window.

    The set E is the union of mask-1 cells of side ``h`` on a grid centered
    at the origin, extended beyond the grid box by nearest-cell membership;
    the window selects the cells of the observation region.  The value sums
    kernel interactions over (E in window, complement in window), (E in
    window, complement outside), and (E outside, complement in window).  The
    membership extension makes the value invariant under mask complement,
    bitwise: pair terms are accumulated in a canonical orientation and
    combined with exact summation.  1D cell-pair and beyond-grid integrals
    are exact; 2D uses subcell quadrature near the diagonal and graded
    exterior rings plus a directional tail beyond the grid.
    """
    mk = np.asarray(mask)
    vals = np.unique(mk)
    if not np.all(np.isin(vals, (0, 1))):
        raise ParameterError("mask must contain only 0/1 values")
    if not 0.0 < s < 0.5:
        raise ParameterError(f"s must lie in (0, 1/2), got {s}")
    if h <= 0:
        raise ParameterError(f"cell size must be positive, got {h}")
    win = np.asarray(window, dtype=bool)
    if win.shape != mk.shape:
        raise ParameterError(
            f"window shape {win.shape} != mask shape {mk.shape}")
    n = mk.ndim
    if n not in (1, 2):
        raise ParameterError(f"mask must be 1- or 2-dimensional, got {n}d")
    if n == 2 and mk.shape[0] != mk.shape[1]:
        raise ParameterError("2d masks must be square")
    m = mk.shape[0]
    e = mk.astype(bool)
    a = (e & win).astype(float)          # E inside the window
    bc = (~e & win).astype(float)        # complement inside
    c = (e & ~win).astype(float)         # E outside (within the grid)
    d = (~e & ~win).astype(float)        # complement outside (within grid)
    if not a.any() and not c.any():
        return 0.0
    table = _perimeter_table(n, m, h, s, subcell_q, correct_cells)

    def pair_sum(u: np.ndarray, v: np.ndarray) -> float:
        # canonical orientation keeps the value bitwise-stable when the
        # arguments arrive swapped (mask complement exchanges the classes)
        if not u.any() or not v.any():
            return 0.0
        if u.tobytes() > v.tobytes():
            u, v = v, u
        return float(np.sum(u * convolve(table, v, mode="valid")))

    terms = [pair_sum(a, bc), pair_sum(a, d), pair_sum(c, bc)]
    mass_e, mass_c = _exterior_split_masses(mk, s, h, r_cut_factor)
    terms.append(float(np.sum(a * mass_c)) * h ** n)
    terms.append(float(np.sum(bc * mass_e)) * h ** n)
    return math.fsum(terms)


# --------------------------------------------------------------------------
# serialization


def save_measure_csv(path: str, mu: DiscreteMeasure) -> None:
    """Write a measure as CSV: coordinate columns, weight, optional radius."""
    n = mu.dim if mu.count else 1
    cols = [f"x{i}" for i in range(n)] + ["weight"]
    data = [mu.atoms, mu.weights.reshape(-1, 1)]
    if mu.radii is not None:
        cols.append("radius")
        data.append(mu.radii.reshape(-1, 1))
    arr = np.hstack(data) if mu.count else np.zeros((0, len(cols)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(cols) + "\n")
        for row in arr:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_measure_csv(path: str) -> DiscreteMeasure:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        rows = [list(map(float, line.strip().split(",")))
                for line in fh if line.strip()]
    has_radius = header[-1] == "radius"
    ncoord = len(header) - 1 - (1 if has_radius else 0)
    arr = np.asarray(rows, dtype=float).reshape(-1, len(header))
    atoms = arr[:, :ncoord]
    weights = arr[:, ncoord]
    radii = arr[:, ncoord + 1] if has_radius else None
    return DiscreteMeasure.make(atoms, weights, radii=radii)


def save_mask_pgm(path: str, mask: np.ndarray) -> None:
    """Write a 0/1 mask as a plain text grey-map (maxval 1).

    1d masks are stored as a single row and load back as 1d.
    """
    mk = np.asarray(mask)
    if not np.all(np.isin(np.unique(mk), (0, 1))):
        raise ParameterError("mask must contain only 0/1 values")
    grid = mk.reshape(1, -1) if mk.ndim == 1 else mk
    if grid.ndim != 2:
        raise ParameterError("mask must be 1- or 2-dimensional")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("P2\n")
        fh.write(f"{grid.shape[1]} {grid.shape[0]}\n1\n")
        for row in grid:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def load_mask_pgm(path: str) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        tokens: list = []
        for line in fh:
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise ParameterError("expected a plain text grey-map (P2) file")
    w, ht, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 1:
        raise ParameterError(f"mask grey-maps must have maxval 1, got {maxval}")
    vals = np.asarray([int(t) for t in tokens[4:]], dtype=int)
    if vals.size != w * ht:
        raise ParameterError(
            f"expected {w * ht} mask entries, found {vals.size}")
    if not np.all(np.isin(vals, (0, 1))):
        raise ParameterError("mask must contain only 0/1 values")
    grid = vals.reshape(ht, w)
    return grid[0] if ht == 1 else grid
