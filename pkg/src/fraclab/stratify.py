"""Density-drop stratification of transition sets.

Implements the covering machinery driven by the monotone density: maximal
nets, good/bad ball classification by small-scale density against a global
ceiling, the good-tree and bad-tree constructions with their packing,
disjointness, covering, and energy-drop certificates, the alternating corona
decomposition producing a flat certified ball cover, the iterative cover
refinement that lowers the density ceiling generation by generation, and
tubular-volume measurement by lattice counting.

Conventions.  A *field sample* holds the sampled transition points of a
solved (or synthetic) field together with a density oracle theta(center, r).
All quantifiers over balls ("every transition point y in B_t(x)") run over
the sampled points.  Scales below the resolvable floor or above the
available window are clamped inside the oracle wrapper, so tree logic never
sees unresolvable scales.  All nets are greedy in deterministic input order,
making every construction reproducible bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import AffinePlane, ParameterError, plane_distance
from .energy import EnergyEvaluator


class ClassificationConsistencyError(RuntimeError):
    """A ball classified bad fails the bad-ball tube containment.

    The high-density set of a bad ball must sit inside a thin tube around an
    (n-2)-plane; when it does not, the classification parameters are
    inconsistent with the field (the ball should have been good).
    """


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class StratConfig:
    """Parameters of the stratification machinery.

    tau:        transition threshold; the transition set is {|u| <= 1-tau}.
    rho:        scale ratio between consecutive tree generations.
    eta:        density-drop parameter (bad-tree stop scale and drop size).
    eta_prime:  good-ball slack below the ceiling.
    gamma:      homogeneity scale factor for good-ball density queries.
    k_thresh:   multiple of epsilon giving the minimal resolvable ball scale.
    M:          density ceiling, measured as the sup of the density over the
                largest available window (see density_ceiling).
    """

    tau: float
    rho: float
    eta: float
    eta_prime: float
    gamma: float
    k_thresh: float
    M: float

    @staticmethod
    def make(M: float, tau: float = 0.5, rho: float = 0.05,
             eta: float = 0.02, eta_prime: float = 0.05,
             gamma: float = 0.1, k_thresh: float = 4.0) -> "StratConfig":
        if not 0.0 < tau < 1.0:
            raise ParameterError(f"tau must lie in (0,1), got {tau}")
        if not 0.0 < rho < 0.1:
            raise ParameterError(f"rho must lie in (0, 1/10), got {rho}")
        if not 0.0 < eta < 0.25:
            raise ParameterError(f"eta must lie in (0, 1/4), got {eta}")
        if not eta < rho:
            raise ParameterError(
                f"eta must be smaller than rho, got eta={eta}, rho={rho}")
        if not 0.0 < gamma < 0.25:
            raise ParameterError(f"gamma must lie in (0, 1/4), got {gamma}")
        if eta_prime <= 0.0:
            raise ParameterError(
                f"eta_prime must be positive, got {eta_prime}")
        if k_thresh < 1.0:
            raise ParameterError(f"k_thresh must be >= 1, got {k_thresh}")
        if M < 0.0:
            raise ParameterError(f"density ceiling must be >= 0, got {M}")
        return StratConfig(tau=float(tau), rho=float(rho), eta=float(eta),
                           eta_prime=float(eta_prime), gamma=float(gamma),
                           k_thresh=float(k_thresh), M=float(M))

    def with_ceiling(self, M: float) -> "StratConfig":
        return dataclasses.replace(self, M=float(M))


# --------------------------------------------------------------------------
# field samples


@dataclass
class FieldSample:
    """Sampled transition set plus a density oracle.

    points:   (P, n) all sampled points where |u| <= 1 - tau (box-wide).
    in_unit:  (P,) membership of each point in the closed unit ball; the
              covering constructions draw net centers from this subset, while
              classification quantifiers run over all sampled points.
    theta_fn: density oracle (center, r) -> float with scale clamps baked in.
    probes:   optional extra points for ceiling measurement.
    """

    points: np.ndarray
    in_unit: np.ndarray
    eps: float
    h: float
    n: int
    theta_fn: Callable[[np.ndarray, float], float]
    probes: Optional[np.ndarray] = None
    q_floor: float = 0.0
    q_ceil: float = math.inf
    _cache: dict = field(default_factory=dict, repr=False)

    def theta(self, center: np.ndarray, r: float) -> float:
        key = (center.tobytes(), float(r))
        val = self._cache.get(key)
        if val is None:
            val = float(self.theta_fn(center, float(r)))
            self._cache[key] = val
        return val

    def indices_in(self, center: np.ndarray, radius: float,
                   only_unit: bool = False) -> np.ndarray:
        d2 = np.sum((self.points - center) ** 2, axis=1)
        sel = d2 <= radius * radius * (1.0 + 1e-12)
        if only_unit:
            sel &= self.in_unit
        return np.nonzero(sel)[0]

    @property
    def unit_indices(self) -> np.ndarray:
        return np.nonzero(self.in_unit)[0]


def synthetic_sample(points: np.ndarray,
                     theta_fn: Callable[[np.ndarray, float], float],
                     eps: float, h: float,
                     probes: Optional[np.ndarray] = None) -> FieldSample:
    """Field sample over explicit points with a user-supplied density."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    in_unit = np.sqrt(np.sum(pts ** 2, axis=1)) <= 1.0 + 1e-12
    return FieldSample(points=pts, in_unit=in_unit, eps=float(eps),
                       h=float(h), n=pts.shape[1], theta_fn=theta_fn,
                       probes=None if probes is None
                       else np.asarray(probes, dtype=float))


def transition_sample(U, solver_cfg, tau: float,
                      probe_stride: Optional[int] = None) -> FieldSample:
    """Field sample of a solved extension field.

    Collects grid centers where |u| <= 1 - tau, and wraps the density
    evaluator with scale clamps: radii below 3h (unresolvable) are evaluated
    at 3h, radii beyond the extension ladder at its top.
    """
    ev = EnergyEvaluator(U, solver_cfg)
    grid = U.base.grid
    nodes = grid.points()
    u0 = U.base.values.reshape(-1)
    thr = np.abs(u0) <= 1.0 - tau
    pts = nodes[thr]
    q_floor = 3.0 * grid.h
    q_ceil = float(ev.z_max)
    if q_floor >= q_ceil:
        raise ParameterError(
            f"resolvable window empty: 3h = {q_floor:.4g} >= "
            f"extension height {q_ceil:.4g}")

    def theta_fn(center: np.ndarray, r: float) -> float:
        return ev.theta(center, min(max(r, q_floor), q_ceil))

    m = grid.shape[0]
    stride = probe_stride if probe_stride else max(1, m // 16)
    if grid.n == 1:
        probe_sel = np.zeros(m, dtype=bool)
        probe_sel[::stride] = True
    else:
        row = np.zeros(m, dtype=bool)
        row[::stride] = True
        probe_sel = np.outer(row, row)
    probes = nodes[probe_sel.reshape(-1)]
    in_unit = np.sqrt(np.sum(pts ** 2, axis=1)) <= 1.0 + 1e-12
    return FieldSample(points=pts, in_unit=in_unit,
                       eps=float(solver_cfg.epsilon), h=float(grid.h),
                       n=grid.n, theta_fn=theta_fn, probes=probes,
                       q_floor=q_floor, q_ceil=q_ceil)


def density_ceiling(sample: FieldSample, radius: Optional[float] = None
                    ) -> float:
    """Sup of the density at the largest available window scale.

    The reference scale is 2 when the sample's window allows it, otherwise
    the largest resolvable scale; the sup runs over the sampled transition
    points plus the probe lattice.
    """
    r = radius if radius is not None else min(2.0, sample.q_ceil)
    cands = [sample.points]
    if sample.probes is not None and len(sample.probes):
        cands.append(sample.probes)
    best = 0.0
    for arr in cands:
        for y in arr:
            best = max(best, sample.theta(y, r))
    return best


def calibrate_eta_prime(sample: FieldSample, cfg: StratConfig,
                        margin: float = 1e-9) -> StratConfig:
    """Enlarge eta_prime until the good-ball inequality holds everywhere.

    Measures the worst small-scale density over the transition set across
    the full ladder of classification scales and raises eta_prime to
    M - worst + margin when the configured slack is too tight.  Intended for
    clean calibration solves where every ball ought to classify good.
    """
    scales = set()
    t = 1.0
    for _ in range(60):
        scales.add(cfg.gamma * cfg.rho * t)
        scales.add(cfg.gamma * cfg.eta * t)
        t *= cfg.rho
        if cfg.gamma * t < 0.25 * max(sample.q_floor, sample.h):
            break
    worst = math.inf
    for y in sample.points[sample.in_unit]:
        for sc in scales:
            worst = min(worst, sample.theta(y, sc))
    if not math.isfinite(worst):
        return cfg
    needed = cfg.M - worst + margin
    if needed > cfg.eta_prime:
        return dataclasses.replace(cfg, eta_prime=float(needed))
    return cfg


# --------------------------------------------------------------------------
# nets and classification


def maximal_net(points: np.ndarray, spacing: float) -> np.ndarray:
    """Greedy maximal net: indices of accepted points, input order.

    A point is accepted iff its distance to every previously accepted point
    is at least ``spacing``.  The result is maximal: every input point lies
    within ``spacing`` of an accepted one.
    """
    if spacing <= 0.0:
        raise ParameterError(f"net spacing must be positive, got {spacing}")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if len(pts) == 0:
        return np.zeros(0, dtype=int)
    accepted: List[int] = []
    acc_pts = np.empty((0, pts.shape[1]))
    s2 = spacing * spacing
    for i in range(len(pts)):
        if len(accepted) == 0 or np.min(
                np.sum((acc_pts - pts[i]) ** 2, axis=1)) >= s2:
            accepted.append(i)
            acc_pts = np.vstack([acc_pts, pts[i]])
    return np.asarray(accepted, dtype=int)


def classify_ball(sample: FieldSample, cfg: StratConfig,
                  center: np.ndarray, t: float) -> str:
    """Good/bad dichotomy for the ball B_t(center).

    Good iff every sampled transition point y in the ball has density
    theta(gamma*rho*t, y) >= M - eta_prime.  The center must itself be a
    transition point for net-selected balls; the decomposition root is the
    one caller-exempt case.
    """
    if t < cfg.k_thresh * sample.eps * (1.0 - 1e-12):
        raise ParameterError(
            f"scale error: ball radius {t:.6g} below resolvable floor "
            f"k*eps = {cfg.k_thresh * sample.eps:.6g}")
    scale = cfg.gamma * cfg.rho * t
    floor = cfg.M - cfg.eta_prime
    for i in sample.indices_in(center, t):
        if sample.theta(sample.points[i], scale) < floor:
            return "bad"
    return "good"


class PlaneFit(NamedTuple):
    plane: Optional[AffinePlane]
    max_dist: float
    contained: bool


def fit_bad_plane(high_points: np.ndarray, x: np.ndarray, t: float,
                  rho: float) -> PlaneFit:
    """(n-2)-plane through the high-density set, with tube containment.

    Fits the affine plane through the points' center of mass spanned by the
    top n-2 second-moment eigenvectors, reports the maximum distance of the
    points to it, and flags containment in the rho*t tube.  An empty point
    set yields the trivial plane through x with vacuous containment.  In 1D
    the (n-2)-plane is empty: containment holds only for empty input.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = len(x)
    pts = np.asarray(high_points, dtype=float).reshape(-1, n)
    kdim = n - 2
    if len(pts) == 0:
        plane = AffinePlane.make(x, np.zeros((0, n))) if kdim >= 0 else None
        return PlaneFit(plane=plane, max_dist=0.0, contained=True)
    if kdim < 0:
        return PlaneFit(plane=None, max_dist=math.inf, contained=False)
    cm = np.mean(pts, axis=0)
    if kdim == 0:
        plane = AffinePlane.make(cm, np.zeros((0, n)))
    else:
        q = pts - cm
        mom = q.T @ q / len(pts)
        w, v = np.linalg.eigh(mom)
        dirs = v[:, ::-1][:, :kdim].T
        plane = AffinePlane.make(cm, dirs)
    dists = np.array([plane_distance(plane, p) for p in pts])
    max_dist = float(np.max(dists))
    return PlaneFit(plane=plane, max_dist=max_dist,
                    contained=max_dist <= rho * t * (1.0 + 1e-12))


def _tube_distances(fit: PlaneFit, pts: np.ndarray) -> np.ndarray:
    if fit.plane is None:
        return np.full(len(pts), math.inf)
    return np.array([plane_distance(fit.plane, p) for p in pts])


# --------------------------------------------------------------------------
# trees


class Ball(NamedTuple):
    idx: int                 # index into sample.points; -1 for the root
    center: np.ndarray
    radius: float
    kind: str                # good | bad | stop
    gen: int                 # scale index relative to the tree root


@dataclass
class TreeNode:
    center: np.ndarray
    radius: float
    kind: str
    gen: int
    children: List["TreeNode"] = field(default_factory=list)


@dataclass
class TreeResult:
    kind: str                # good | bad (the root's kind)
    root: TreeNode
    leaves: List[Ball]
    stops: List[Ball]
    certificates: dict


def _attach_generation(parents: List[TreeNode], balls: Sequence[Ball],
                       parent_radius: float) -> List[TreeNode]:
    """Create nodes for one generation, attached to nearest covering parent."""
    nodes = []
    pcenters = np.asarray([p.center for p in parents])
    for b in balls:
        d2 = np.sum((pcenters - b.center) ** 2, axis=1)
        j = int(np.argmin(d2))
        node = TreeNode(center=b.center, radius=b.radius, kind=b.kind,
                        gen=b.gen)
        parents[j].children.append(node)
        nodes.append(node)
    return nodes


def _covering_ok(points: np.ndarray, balls: Sequence[Ball]) -> bool:
    if len(points) == 0:
        return True
    if len(balls) == 0:
        return False
    covered = np.zeros(len(points), dtype=bool)
    for b in balls:
        d2 = np.sum((points - b.center) ** 2, axis=1)
        covered |= d2 <= b.radius ** 2 * (1.0 + 1e-12)
    return bool(np.all(covered))


def _fifth_disjoint(balls: Sequence[Ball]) -> bool:
    for i in range(len(balls)):
        for j in range(i + 1, len(balls)):
            lim = (balls[i].radius + balls[j].radius) / 5.0
            d = float(np.linalg.norm(balls[i].center - balls[j].center))
            if d < lim * (1.0 - 1e-12):
                return False
    return True


def build_good_tree(sample: FieldSample, cfg: StratConfig,
                    root_center: np.ndarray, root_radius: float,
                    r_min: float, root_idx: int = -1) -> TreeResult:
    """Good tree: descend through good balls, shedding bad balls as leaves.

    At each scale r_i = rho^i * root_radius a maximal 2r_i/5-net is taken of
    the unit-ball transition points inside the previous generation's good
    balls and outside every prior bad ball; net balls are classified until
    the scale drops to r_min, where the net becomes the stop set.
    """
    if root_radius <= r_min:
        raise ParameterError(
            f"good tree root radius {root_radius:.6g} must exceed "
            f"r_min = {r_min:.6g}")
    root_center = np.asarray(root_center, dtype=float).reshape(-1)
    root_node = TreeNode(center=root_center, radius=root_radius,
                         kind="good", gen=0)
    v_idx = sample.indices_in(root_center, root_radius, only_unit=True)
    v_pts = sample.points[v_idx]

    good_prev: List[Ball] = [Ball(root_idx, root_center, root_radius,
                                  "good", 0)]
    prev_nodes = [root_node]
    bad_all: List[Ball] = []
    stops: List[Ball] = []
    leaves: List[Ball] = []
    i = 0
    while good_prev:
        i += 1
        r_i = root_radius * cfg.rho ** i
        r_prev = root_radius * cfg.rho ** (i - 1)
        inside = np.zeros(len(v_idx), dtype=bool)
        for g in good_prev:
            d2 = np.sum((v_pts - g.center) ** 2, axis=1)
            inside |= d2 <= r_prev ** 2 * (1.0 + 1e-12)
        for b in bad_all:
            d2 = np.sum((v_pts - b.center) ** 2, axis=1)
            inside &= d2 > b.radius ** 2 * (1.0 + 1e-12)
        cand = np.nonzero(inside)[0]
        if len(cand) == 0:
            break
        net = cand[maximal_net(v_pts[cand], 2.0 * r_i / 5.0)]
        if r_i <= r_min:
            gen_stops = [Ball(int(v_idx[j]), v_pts[j], r_i, "stop", i)
                         for j in net]
            stops.extend(gen_stops)
            _attach_generation(prev_nodes, gen_stops, r_prev)
            break
        gen_good, gen_bad = [], []
        for j in net:
            kind = classify_ball(sample, cfg, v_pts[j], r_i)
            ball = Ball(int(v_idx[j]), v_pts[j], r_i, kind, i)
            (gen_good if kind == "good" else gen_bad).append(ball)
        bad_all.extend(gen_bad)
        leaves.extend(gen_bad)
        nodes = _attach_generation(prev_nodes, gen_good + gen_bad, r_prev)
        prev_nodes = nodes[:len(gen_good)]
        good_prev = gen_good

    marked = leaves + stops
    drop_margin = math.inf
    for b in marked:
        val = sample.theta(b.center, cfg.gamma * b.radius)
        drop_margin = min(drop_margin, val - (cfg.M - cfg.eta_prime))
    certificates = {
        "kind": "good",
        "root_radius": float(root_radius),
        "fifth_disjoint": _fifth_disjoint(marked),
        "energy_drop_margin": None if not marked else float(drop_margin),
        "energy_drop_ok": (not marked) or drop_margin >= -1e-9,
        "leaf_packing_sum": float(sum(b.radius ** (sample.n - 1)
                                      for b in leaves)),
        "stop_packing_sum": float(sum(b.radius ** (sample.n - 1)
                                      for b in stops)),
        "stop_radius_window_ok": all(
            cfg.rho * r_min < b.radius <= r_min * (1.0 + 1e-12)
            for b in stops),
        "covering_ok": _covering_ok(v_pts, marked),
    }
    certificates["leaf_packing_c"] = (
        certificates["leaf_packing_sum"] / root_radius ** (sample.n - 1))
    certificates["stop_packing_c"] = (
        certificates["stop_packing_sum"] / root_radius ** (sample.n - 1))
    return TreeResult(kind="good", root=root_node, leaves=leaves,
                      stops=stops, certificates=certificates)


def build_bad_tree(sample: FieldSample, cfg: StratConfig,
                   root_center: np.ndarray, root_radius: float,
                   r_min: float, root_idx: int = -1) -> TreeResult:
    """Bad tree: localize the high-density set in shrinking plane tubes.

    Each bad ball fits an (n-2)-plane through its high-density set (points
    with theta(2*eta*t, y) >= M - eta/2 inside the doubled ball); tube
    containment is mandatory.  Transition points off the doubled tube become
    stop balls at scale eta*t; the net inside the tube is classified into
    the next generation.  Good balls shed along the way are the leaves.
    """
    root_center = np.asarray(root_center, dtype=float).reshape(-1)
    root_node = TreeNode(center=root_center, radius=root_radius,
                         kind="bad", gen=0)
    v_idx = sample.indices_in(root_center, root_radius, only_unit=True)
    v_pts = sample.points[v_idx]

    bad_prev: List[Ball] = [Ball(root_idx, root_center, root_radius,
                                 "bad", 0)]
    prev_nodes = [root_node]
    stops: List[Ball] = []
    leaves: List[Ball] = []
    chain: List[float] = []
    i = 0
    while bad_prev:
        i += 1
        r_i = root_radius * cfg.rho ** i
        r_prev = root_radius * cfg.rho ** (i - 1)
        fits = []
        for b in bad_prev:
            near = sample.indices_in(b.center, 2.0 * r_prev)
            high = [sample.points[j] for j in near
                    if sample.theta(sample.points[j], 2.0 * cfg.eta * r_prev)
                    >= cfg.M - cfg.eta / 2.0]
            fit = fit_bad_plane(np.asarray(high).reshape(-1, sample.n),
                                b.center, r_prev, cfg.rho)
            if not fit.contained:
                raise ClassificationConsistencyError(
                    f"bad ball at {np.round(b.center, 6)} radius "
                    f"{r_prev:.6g}: high-density set reaches "
                    f"{fit.max_dist:.6g} from its plane, beyond the tube "
                    f"radius {cfg.rho * r_prev:.6g}; the ball should have "
                    "classified good")
            fits.append(fit)

        in_prev = np.zeros(len(v_idx), dtype=bool)
        in_tube = np.zeros(len(v_idx), dtype=bool)
        for b, fit in zip(bad_prev, fits):
            d2 = np.sum((v_pts - b.center) ** 2, axis=1)
            inball = d2 <= r_prev ** 2 * (1.0 + 1e-12)
            tube = _tube_distances(fit, v_pts) <= 2.0 * cfg.rho * r_prev
            in_prev |= inball
            in_tube |= inball & tube
        r_stop = cfg.eta * r_prev
        if r_i <= r_min:
            cand = np.nonzero(in_prev)[0]
            net = cand[maximal_net(v_pts[cand], 2.0 * r_stop / 5.0)]
            gen_stops = [Ball(int(v_idx[j]), v_pts[j], r_stop, "stop", i)
                         for j in net]
            stops.extend(gen_stops)
            _attach_generation(prev_nodes, gen_stops, r_prev)
            break
        off = np.nonzero(in_prev & ~in_tube)[0]
        net_off = off[maximal_net(v_pts[off], 2.0 * r_stop / 5.0)]
        gen_stops = [Ball(int(v_idx[j]), v_pts[j], r_stop, "stop", i)
                     for j in net_off]
        stops.extend(gen_stops)
        on = np.nonzero(in_tube)[0]
        net_on = on[maximal_net(v_pts[on], 2.0 * r_i / 5.0)]
        gen_good, gen_bad = [], []
        for j in net_on:
            kind = classify_ball(sample, cfg, v_pts[j], r_i)
            ball = Ball(int(v_idx[j]), v_pts[j], r_i, kind, i)
            (gen_good if kind == "good" else gen_bad).append(ball)
        leaves.extend(gen_good)
        chain.append(len(net_on) * r_i ** (sample.n - 2)
                     / root_radius ** (sample.n - 2))
        nodes = _attach_generation(
            prev_nodes, gen_stops + gen_good + gen_bad, r_prev)
        prev_nodes = nodes[len(gen_stops) + len(gen_good):]
        bad_prev = gen_bad

    c2 = 0.0
    for g, val in enumerate(chain, start=1):
        if val > 0:
            c2 = max(c2, val ** (1.0 / g) / cfg.rho)
    marked = leaves + stops
    stop_flags = []
    for b in stops:
        window_ok = cfg.eta * r_min < b.radius < r_min
        if window_ok:
            stop_flags.append(True)
            continue
        sup = -math.inf
        for j in sample.indices_in(b.center, 2.0 * b.radius):
            sup = max(sup, sample.theta(sample.points[j], 2.0 * b.radius))
        stop_flags.append(sup <= cfg.M - cfg.eta / 2.0 + 1e-9)
    leaf_sum = float(sum(b.radius ** (sample.n - 1) for b in leaves))
    certificates = {
        "kind": "bad",
        "root_radius": float(root_radius),
        "chain": [float(v) for v in chain],
        "c2_measured": float(c2),
        "contraction_ok": 2.0 * c2 * cfg.rho < 1.0,
        "leaf_packing_sum": leaf_sum,
        "leaf_packing_ok": leaf_sum <= 2.0 * max(c2, 1.0) * cfg.rho
        * root_radius ** (sample.n - 1) + 1e-12,
        "stop_packing_sum": float(sum(b.radius ** (sample.n - 1)
                                      for b in stops)),
        "stop_structure_ok": all(stop_flags),
        "covering_ok": _covering_ok(v_pts, marked),
    }
    return TreeResult(kind="bad", root=root_node, leaves=leaves,
                      stops=stops, certificates=certificates)


# --------------------------------------------------------------------------
# corona decomposition and refinement


@dataclass
class BallCover:
    balls: List[Ball]
    r_min: float
    certificates: dict


def _prune_cover(balls: List[Ball], targets: np.ndarray) -> List[Ball]:
    """Deterministic greedy subcover.

    Repeatedly keeps the ball covering the most still-uncovered target
    points (ties broken by input order) until every coverable target is
    covered.  Keeps the cover size within a constant factor of the smallest
    subcover, which makes ball counts comparable across minimal radii.
    """
    if len(targets) == 0 or len(balls) == 0:
        return []
    hits = np.stack([np.sum((targets - b.center) ** 2, axis=1)
                     <= b.radius ** 2 * (1.0 + 1e-12) for b in balls])
    covered = np.zeros(len(targets), dtype=bool)
    kept_idx: List[int] = []
    while not covered.all():
        gains = np.sum(hits & ~covered, axis=1)
        best = int(np.argmax(gains))
        if gains[best] == 0:
            break
        kept_idx.append(best)
        covered |= hits[best]
    return [balls[i] for i in sorted(kept_idx)]


def _cover_certificates(sample: FieldSample, cfg: StratConfig,
                        balls: List[Ball], r_min: float,
                        targets: np.ndarray, audits: List[dict]) -> dict:
    if len(targets):
        covered = np.zeros(len(targets), dtype=bool)
        for b in balls:
            d2 = np.sum((targets - b.center) ** 2, axis=1)
            covered |= d2 <= b.radius ** 2 * (1.0 + 1e-12)
        frac = float(np.mean(covered))
    else:
        frac = 1.0
    drop_max = -math.inf
    drop_ok = True
    for b in balls:
        if b.radius <= r_min * (1.0 + 1e-12):
            continue
        sup = -math.inf
        for j in sample.indices_in(b.center, 2.0 * b.radius):
            sup = max(sup, sample.theta(sample.points[j], 2.0 * b.radius))
        drop_max = max(drop_max, sup)
        if sup > cfg.M - cfg.eta / 2.0 + 1e-9:
            drop_ok = False
    return {
        "covered_fraction": frac,
        "packing_sum": float(sum(b.radius ** (sample.n - 1)
                                 for b in balls)),
        "n_balls": len(balls),
        "r_min": float(r_min),
        "max_energy_drop_theta": None if drop_max == -math.inf
        else float(drop_max),
        "energy_drop_ok": drop_ok,
        "tree_audits": audits,
    }


def corona_decomposition(sample: FieldSample, cfg: StratConfig,
                         r_min: float,
                         root_center: Optional[np.ndarray] = None,
                         root_radius: float = 1.0,
                         root_idx: int = -1,
                         prune: bool = True) -> BallCover:
    """Alternating tree decomposition into a certified flat ball cover.

    Starting from the root ball, good trees are grown on good roots (their
    leaves are bad balls) and bad trees on bad roots (leaves are good
    balls), alternating until no leaves remain.  The cover is the union of
    all stop balls, radii raised to at least r_min, optionally pruned to an
    irredundant subcover.  Certificates: exact covering of the sampled
    transition set, the packing sum, and the energy-drop inequality for
    every ball above the minimal radius.
    """
    if r_min < cfg.k_thresh * sample.eps * (1.0 - 1e-12):
        raise ParameterError(
            f"r_min = {r_min:.6g} is below the resolvable floor "
            f"k*eps = {cfg.k_thresh * sample.eps:.6g}")
    if r_min >= root_radius:
        raise ParameterError(
            f"r_min = {r_min:.6g} must be below the root radius "
            f"{root_radius:.6g}")
    center = (np.zeros(sample.n) if root_center is None
              else np.asarray(root_center, dtype=float).reshape(-1))
    targets = sample.points[sample.indices_in(center, root_radius,
                                              only_unit=True)]
    if len(targets) == 0:
        return BallCover(balls=[], r_min=float(r_min), certificates={
            "covered_fraction": 1.0, "packing_sum": 0.0, "n_balls": 0,
            "r_min": float(r_min), "max_energy_drop_theta": None,
            "energy_drop_ok": True, "tree_audits": []})

    root_kind = classify_ball(sample, cfg, center, root_radius)
    frontier = [Ball(root_idx, center, float(root_radius), root_kind, 0)]
    guard = int(math.ceil(math.log(r_min / root_radius)
                          / math.log(cfg.rho))) + 2
    stops_all: List[Ball] = []
    audits: List[dict] = []
    rounds = 0
    while frontier:
        rounds += 1
        if rounds > guard:
            raise RuntimeError(
                f"corona alternation failed to terminate in {guard} rounds")
        next_frontier: List[Ball] = []
        for f in frontier:
            if f.kind == "good":
                tree = build_good_tree(sample, cfg, f.center, f.radius,
                                       r_min, root_idx=f.idx)
            else:
                tree = build_bad_tree(sample, cfg, f.center, f.radius,
                                      r_min, root_idx=f.idx)
            stops_all.extend(tree.stops)
            next_frontier.extend(tree.leaves)
            audits.append(tree.certificates)
        frontier = next_frontier

    balls = [b._replace(radius=max(float(r_min), b.radius))
             for b in stops_all]
    if prune:
        balls = _prune_cover(balls, targets)
    certs = _cover_certificates(sample, cfg, balls, r_min, targets, audits)
    return BallCover(balls=balls, r_min=float(r_min), certificates=certs)


def refine_cover(sample: FieldSample, cfg: StratConfig, cover: BallCover,
                 r: float) -> BallCover:
    """Iterated corona refinement down to uniform radius r.

    Every cover ball above radius r is re-decomposed inside itself with the
    density ceiling lowered by eta/2 per generation; nonnegativity of the
    density forces all radii down to r within ceil(2M/eta)+1 generations.
    Per-generation certificates record covering, packing, the ceiling
    inequality for oversized balls, and the shrinking radius bound.
    """
    if r < cfg.k_thresh * sample.eps * (1.0 - 1e-12):
        raise ParameterError(
            f"r = {r:.6g} is below the resolvable floor "
            f"k*eps = {cfg.k_thresh * sample.eps:.6g}")
    if all(b.radius <= r * (1.0 + 1e-12) for b in cover.balls):
        return cover
    budget = int(math.ceil(2.0 * cfg.M / cfg.eta)) + 1
    targets = sample.points[sample.in_unit]
    balls = list(cover.balls)
    gen_certs = [dict(cover.certificates, generation=1)]
    gen = 1
    while any(b.radius > r * (1.0 + 1e-12) for b in balls):
        gen += 1
        if gen > budget:
            raise RuntimeError(
                f"cover refinement failed to reach radius {r:.6g} within "
                f"{budget} generations")
        ceiling = cfg.M - (gen - 1) * cfg.eta / 2.0
        cfg_i = cfg.with_ceiling(max(ceiling, 0.0))
        new_balls: List[Ball] = []
        audits: List[dict] = []
        for b in balls:
            if b.radius <= r * (1.0 + 1e-12):
                new_balls.append(b)
                continue
            sub = corona_decomposition(sample, cfg_i, r,
                                       root_center=b.center,
                                       root_radius=b.radius,
                                       root_idx=b.idx, prune=False)
            new_balls.extend(sub.balls)
            audits.append(sub.certificates)
        balls = _prune_cover(new_balls, targets)
        certs = _cover_certificates(sample, cfg_i, balls, r, targets,
                                    audits)
        sup_r = max((b.radius for b in balls), default=0.0)
        certs["generation"] = gen
        certs["sup_radius"] = float(sup_r)
        certs["radius_bound_ok"] = sup_r <= max(r, 10.0 ** (-gen)) \
            * (1.0 + 1e-12)
        certs["ceiling"] = float(cfg_i.M)
        gen_certs.append(certs)
    final = dict(gen_certs[-1])
    final["generations"] = gen_certs
    return BallCover(balls=balls, r_min=float(r), certificates=final)


# --------------------------------------------------------------------------
# tubular volume


def tubular_volume(points: np.ndarray, r: float,
                   h_c: Optional[float] = None) -> float:
    """Volume of the radius-r tubular neighborhood of a point set.

    Restricts the set to the closed unit ball, then counts lattice cells
    (default pitch r/16) whose center lies within r of the set.
    """
    if r <= 0.0:
        raise ParameterError(f"tube radius must be positive, got {r}")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    keep = np.sqrt(np.sum(pts ** 2, axis=1)) <= 1.0 + 1e-12
    pts = pts[keep]
    if len(pts) == 0:
        return 0.0
    n = pts.shape[1]
    hc = float(h_c) if h_c is not None else r / 16.0
    axes = []
    for d in range(n):
        lo = float(np.min(pts[:, d])) - r - hc
        hi = float(np.max(pts[:, d])) + r + hc
        count = int(math.ceil((hi - lo) / hc))
        axes.append(lo + hc * (0.5 + np.arange(count)))
    if n == 1:
        cells = axes[0].reshape(-1, 1)
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        cells = np.stack([xx.ravel(), yy.ravel()], axis=1)
    tree = cKDTree(pts)
    dist, _ = tree.query(cells, k=1, distance_upper_bound=r * (1.0 + 1e-12))
    return float(np.count_nonzero(dist <= r * (1.0 + 1e-12))) * hc ** n


# --------------------------------------------------------------------------
# serialization


def save_cover_csv(path: str, cover: BallCover) -> None:
    """Write a ball cover as CSV: center coords, radius, kind, generation."""
    n = len(cover.balls[0].center) if cover.balls else 1
    cols = [f"x{i}" for i in range(n)] + ["radius", "kind", "generation"]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(cols) + "\n")
        for b in cover.balls:
            coords = ",".join(f"{v:.17g}" for v in b.center)
            fh.write(f"{coords},{b.radius:.17g},{b.kind},{b.gen}\n")


def load_cover_csv(path: str) -> BallCover:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        ncoord = len(header) - 3
        balls = []
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            center = np.asarray([float(v) for v in parts[:ncoord]])
            balls.append(Ball(idx=-1, center=center,
                              radius=float(parts[ncoord]),
                              kind=parts[ncoord + 1],
                              gen=int(parts[ncoord + 2])))
    r_min = min((b.radius for b in balls), default=0.0)
    return BallCover(balls=balls, r_min=r_min, certificates={})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def save_certificates_json(path: str, certificates: dict) -> None:
    """Write a certificate summary as JSON."""
    with open(path, "w", encoding="ascii") as fh:
        json.dump(_jsonable(certificates), fh, indent=2, sort_keys=True)
        fh.write("\n")
