"""Shared primitives for the fractional Allen-Cahn laboratory.

Everything downstream (solver, energies, covers) is phrased in terms of the
types defined here: the constant pack for the fractional Laplacian of order
s in (0, 1/2), a double-well potential with its structural constants, a
uniform cell-centered grid with exterior data, immutable node fields, and
affine planes used for flatness measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate


class ParameterError(ValueError):
    """Raised when a constructor receives out-of-range parameters."""


class CalibrationError(RuntimeError):
    """Raised when a quadrature calibration cannot produce a constant."""


class DomainError(ValueError):
    """Raised when a query leaves the sampled region."""


# --------------------------------------------------------------------------
# fractional parameter pack


def kernel_normalization(n: int, s: float) -> float:
    """Mass of w -> (1 + |w|^2)^(-(n+2s)/2) over R^n, by quadrature.

    The Poisson-type extension kernel at height z is
    sigma * z^(2s) / (|x|^2 + z^2)^((n+2s)/2); substituting x = z*w shows its
    mass over the hyperplane is independent of z and equal to this integral,
    so sigma is its reciprocal.
    """
    if n == 1:
        # split at |w| = 1; the tail is mapped to [0, 1] by w = v^(-1/(2s)),
        # which absorbs the slow w^(-1-2s) decay exactly
        v1, e1 = integrate.quad(
            lambda w: 2.0 * (1.0 + w * w) ** (-(1.0 + 2.0 * s) / 2.0),
            0.0, 1.0)
        v2, e2 = integrate.quad(
            lambda v: (1.0 / s) * (1.0 + v ** (1.0 / s)) ** (-(1.0 + 2.0 * s) / 2.0),
            0.0, 1.0)
        val, err = v1 + v2, e1 + e2
    elif n == 2:
        # radial mass split at t = 1; the tail is mapped to [0, 1] by
        # t = v^(-1/(2s)), which absorbs the slow t^(-1-2s) decay exactly
        v1, e1 = integrate.quad(
            lambda t: 2.0 * math.pi * t * (1.0 + t * t) ** (-(1.0 + s)),
            0.0, 1.0)
        v2, e2 = integrate.quad(
            lambda v: (math.pi / s) * (1.0 + v ** (1.0 / s)) ** (-(1.0 + s)),
            0.0, 1.0)
        val, err = v1 + v2, e1 + e2
    else:
        raise ParameterError(f"dimension {n} not supported")
    if not np.isfinite(val) or val <= 0 or err > 1e-8 * val:
        raise CalibrationError(f"kernel normalization quadrature failed: {val}, err {err}")
    return val


@dataclass(frozen=True)
class FractionalParams:
    """Constant pack for the fractional Laplacian of order ``s``.

    Attributes
    ----------
    n : spatial dimension, 1 or 2.
    s : fractional order, in (0, 1/2).
    a : extension weight exponent, 1 - 2s.
    gamma_ns : singular-integral normalization of (-Delta)^s.
    sigma_ns : extension kernel normalization (unit mass over the hyperplane).
    d_s : Dirichlet-to-Neumann constant linking the weighted normal
        derivative of the extension to (-Delta)^s; calibrated numerically.
    """

    n: int
    s: float
    a: float
    gamma_ns: float
    sigma_ns: float
    d_s: float

    def with_ds(self, d_s: float) -> "FractionalParams":
        return replace(self, d_s=d_s)


_PARAMS_CACHE: dict = {}


def make_params(n: int, s: float, d_s: Optional[float] = None) -> FractionalParams:
    """Build the constant pack for dimension ``n`` and order ``s``.

    ``gamma_ns`` follows the Gamma-function formula
    s * 2^(2s) * pi^(-n/2) * Gamma((n+2s)/2) / Gamma(1-s); ``sigma_ns`` is
    computed so the extension kernel has unit mass on the hyperplane for
    every height, and ``d_s`` is calibrated against a test Gaussian unless
    supplied explicitly.  Results are cached per (n, s).
    """
    if n not in (1, 2):
        raise ParameterError(f"dimension must be 1 or 2, got {n}")
    if not (0.0 < s < 0.5):
        raise ParameterError(f"s must lie in (0, 1/2), got {s}")
    key = (n, float(s))
    if d_s is None and key in _PARAMS_CACHE:
        return _PARAMS_CACHE[key]
    gamma_ns = (s * (2.0 ** (2.0 * s)) * math.pi ** (-n / 2.0)
                * math.gamma((n + 2.0 * s) / 2.0) / math.gamma(1.0 - s))
    sigma_ns = 1.0 / kernel_normalization(n, s)
    p = FractionalParams(n=n, s=float(s), a=1.0 - 2.0 * s,
                         gamma_ns=gamma_ns, sigma_ns=sigma_ns,
                         d_s=float("nan"))
    if d_s is None:
        from .solver import calibrate_ds  # deferred: calibration lives with the extension code
        p = p.with_ds(calibrate_ds(p))
        _PARAMS_CACHE[key] = p
    else:
        p = p.with_ds(float(d_s))
    return p


# --------------------------------------------------------------------------
# double-well potential


@dataclass(frozen=True)
class Potential:
    """Double well with wells at -1 and +1.

    ``w``, ``dw``, ``ddw`` evaluate the well and its first two derivatives.
    ``p`` is the polynomial growth exponent of the derivative bound
    (1/c_w)(|t|^(p-1) - 1) <= |W'(t)| <= c_w (|t|^(p-1) + 1), and ``delta_w``
    is a band half-width around the wells on which the curvature stays above
    half the smaller well curvature.
    """

    w: Callable
    dw: Callable
    ddw: Callable
    p: float
    c_w: float
    delta_w: float

    @staticmethod
    def prototype(delta_w: float = 0.15) -> "Potential":
        """Quartic prototype W(t) = (1 - t^2)^2 / 4.

        The band check W''(t) >= (1/2) min{W''(1), W''(-1)} = 1 on
        |1 - |t|| <= delta_w forces delta_w <= 1 - sqrt(2/3) ~ 0.1835 for
        this well, hence the 0.15 default.
        """
        return Potential(
            w=lambda t: 0.25 * (1.0 - np.asarray(t, dtype=float) ** 2) ** 2,
            dw=lambda t: np.asarray(t, dtype=float) ** 3 - np.asarray(t, dtype=float),
            ddw=lambda t: 3.0 * np.asarray(t, dtype=float) ** 2 - 1.0,
            p=4.0, c_w=2.0, delta_w=float(delta_w))


def potential_eval(pot: Potential, t):
    """Evaluate (W, W', W'') at ``t`` (scalar or array)."""
    return pot.w(t), pot.dw(t), pot.ddw(t)


# --------------------------------------------------------------------------
# grid and fields


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered tensor grid on the box [-half_width, half_width]^n.

    ``exterior`` is the Dirichlet datum g, a callable on points outside the
    box; it must be bounded on every bounded probe set.  Node coordinates
    along each axis sit at cell centers, so every node is interior to the
    closed box and owns a cell of volume h^n.
    """

    n: int
    half_width: float
    h: float
    m: int                      # nodes per axis
    axis: np.ndarray            # cell-center coordinates, shape (m,)
    exterior: Callable

    @staticmethod
    def make(n: int, half_width: float, h: float, exterior: Callable) -> "Grid":
        if n not in (1, 2):
            raise ParameterError(f"dimension must be 1 or 2, got {n}")
        if h <= 0 or half_width <= 0:
            raise ParameterError("half_width and h must be positive")
        m = int(round(2.0 * half_width / h))
        if m < 3:
            raise ParameterError(f"grid needs at least 3 nodes per axis, got {m}")
        h_eff = 2.0 * half_width / m
        axis = -half_width + h_eff * (np.arange(m) + 0.5)
        axis.setflags(write=False)
        g = Grid(n=n, half_width=float(half_width), h=h_eff, m=m,
                 axis=axis, exterior=exterior)
        # probe the exterior datum for finiteness on a small ring
        vals = g.exterior_values(g.boundary_probe())
        if not np.all(np.isfinite(vals)):
            raise ParameterError("exterior datum is not finite on the probe ring")
        return g

    @property
    def shape(self):
        return (self.m,) * self.n

    @property
    def npoints(self) -> int:
        return self.m ** self.n

    def points(self) -> np.ndarray:
        """All node coordinates, shape (npoints, n), lexicographic order."""
        if self.n == 1:
            return self.axis.reshape(-1, 1)
        xx, yy = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def boundary_probe(self) -> np.ndarray:
        """A few points just outside the box, for sanity checks on g."""
        r = self.half_width * (1.0 + 1e-9)
        if self.n == 1:
            return np.array([[-r], [r]])
        ang = np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False)
        return np.stack([r * 1.5 * np.cos(ang), r * 1.5 * np.sin(ang)], axis=1)

    def exterior_values(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate the exterior datum on a batch of points.

        Accepts both vectorized callbacks (mapping an (Q, n) array to (Q,))
        and scalar ones (mapping one point to one value).
        """
        pts = np.asarray(pts, dtype=float)
        try:
            vals = np.asarray(self.exterior(pts), dtype=float)
            if vals.shape == (len(pts),):
                return vals
        except Exception:
            pass
        return np.asarray([float(self.exterior(p)) for p in pts], dtype=float)


@dataclass(frozen=True)
class Field:
    """Node values on a grid, with the uniform bound sup|values| recorded."""

    grid: Grid
    values: np.ndarray
    lam0: float

    @staticmethod
    def make(grid: Grid, values: np.ndarray) -> "Field":
        vals = np.asarray(values, dtype=float)
        if vals.shape != grid.shape:
            raise ParameterError(f"values shape {vals.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        return Field(grid=grid, values=vals, lam0=float(np.max(np.abs(vals))) if vals.size else 0.0)


# --------------------------------------------------------------------------
# affine planes


@dataclass(frozen=True)
class AffinePlane:
    """k-dimensional affine plane: base point plus orthonormal directions.

    ``directions`` has shape (k, n) with 0 <= k <= n - 1; k = 0 encodes a
    single point.  Orthonormality is validated to 1e-12.
    """

    base: np.ndarray
    directions: np.ndarray

    @staticmethod
    def make(base, directions) -> "AffinePlane":
        b = np.asarray(base, dtype=float).reshape(-1)
        d = np.asarray(directions, dtype=float).reshape(-1, b.size) if np.size(directions) \
            else np.zeros((0, b.size))
        if d.shape[0] > b.size - 1 and d.shape[0] != 0:
            raise ParameterError(f"plane dimension {d.shape[0]} too large for ambient {b.size}")
        if d.shape[0]:
            gram = d @ d.T
            if np.max(np.abs(gram - np.eye(d.shape[0]))) > 1e-12:
                raise ParameterError("plane directions are not orthonormal")
        b = b.copy(); b.setflags(write=False)
        d = d.copy(); d.setflags(write=False)
        return AffinePlane(base=b, directions=d)

    @property
    def dim(self) -> int:
        return self.directions.shape[0]


def plane_distance(plane: AffinePlane, y) -> np.ndarray:
    """Euclidean distance from point(s) ``y`` to the plane.

    Accepts a single point (n,) or a stack (m, n); returns a scalar array or
    a length-m vector accordingly.
    """
    pts = np.asarray(y, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    v = pts - plane.base[None, :]
    if plane.dim:
        proj = (v @ plane.directions.T) @ plane.directions
        v = v - proj
    d = np.sqrt(np.sum(v * v, axis=1))
    return d[0] if single else d
