"""Localized extension energies, densities, and monotonicity diagnostics.

The scaled energy of a half-ball B_r^+ centered on the trace plane is

    E(r, x0) = (d_s/2) * int_{B_r^+} z^a |grad U|^2  +  eps^{-2s} * int_{B_r} W(u)

with a = 1 - 2s, and the density is Theta(r, x0) = r^(2s-n) E(r, x0).  For
critical points Theta is nondecreasing in r, quantitatively: the increment
Theta(r) - Theta(rho) dominates a radial-derivative integral over the annulus
plus a weighted running integral of the potential.  This module evaluates
both sides on extension samples.

Near z = 0 the vertical derivative behaves like z^(-a) (only its
z^a-weighted limit is finite), so vertical-gradient energies are integrated
per z-interval under that model: on [z1, z2] the slope is A z^(-a) with A
fitted from the endpoint values, giving the interval energy
(1-a) (U2 - U1)^2 / (z2^(1-a) - z1^(1-a)).  The trace field u itself feeds
the first interval [0, z1].  All ball memberships are by cell center, so
radii should stay a few grid spacings above h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DomainError, Field, ParameterError
from .solver import ExtensionField, SolverConfig


@dataclass(frozen=True)
class EnergyDensity:
    """Energy of one half-ball, split into its two nonnegative parts.

    ``dirichlet`` is the weighted gradient energy of the extension over the
    half-ball, ``potential`` the scaled well mass over the flat disk, and
    ``total`` their sum.
    """

    dirichlet: float
    potential: float
    radius: float
    center: np.ndarray

    @property
    def total(self) -> float:
        return self.dirichlet + self.potential


def _check_center(grid, center) -> np.ndarray:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.shape != (grid.n,):
        raise ParameterError(f"center must have {grid.n} coordinates")
    if np.max(np.abs(c)) >= grid.half_width:
        raise DomainError("center must lie inside the box")
    return c


class EnergyEvaluator:
    """Precomputed gradient and weight tables for one extension sample.

    Building the tables once makes density curves over many radii and many
    centers cheap; the module-level functions wrap one-shot use.
    """

    def __init__(self, U: ExtensionField, cfg: SolverConfig):
        self.U = U
        self.cfg = cfg
        grid = U.base.grid
        p = cfg.params
        self.n, self.a, self.s = p.n, p.a, p.s
        self.d_s = p.d_s
        self.h = grid.h
        self.grid = grid
        self.eps_pow = cfg.epsilon ** (-2.0 * p.s)
        n, a = self.n, self.a

        z = np.asarray(U.z_levels)
        u0 = U.base.values
        stack = np.concatenate([u0[None], U.values], axis=0)  # levels 0..K

        # ---- vertical-derivative energy per z-interval (staggered) ----
        z_lo = np.concatenate([[0.0], z[:-1]])
        z_hi = z
        pw = z_hi ** (1.0 - a) - z_lo ** (1.0 - a)
        dU = np.diff(stack, axis=0)
        self.zslope_A = dU * ((1.0 - a) / pw).reshape((-1,) + (1,) * n)
        self.zint_energy = dU * self.zslope_A            # (1-a) dU^2 / pw
        # membership height of an interval: median of its z^(-a) mass
        self.zint_mid = ((z_lo ** (1.0 - a) + z_hi ** (1.0 - a)) / 2.0) ** (1.0 / (1.0 - a))

        # ---- in-plane gradients at sampling levels (trace + each z) ----
        self.xgrad = np.stack([np.gradient(stack, grid.h, axis=1 + ax, edge_order=2)
                               for ax in range(n)], axis=0)
        mids = 0.5 * (z[1:] + z[:-1])
        top = z[-1] + 0.5 * (z[-1] - z[-2]) if len(z) > 1 else 1.5 * z[-1]
        self.xcell_edges = np.concatenate([[0.0], [0.5 * z[0]], mids, [top]])
        e = self.xcell_edges
        self.xweight = (e[1:] ** (1.0 + a) - e[:-1] ** (1.0 + a)) / (1.0 + a)
        self.xlevel_z = np.concatenate([[0.0], z])

        # ---- vertical derivative collocated at sampling levels ----
        A = self.zslope_A
        A_lvl = 0.5 * (A + np.concatenate([A[1:], A[-1:]], axis=0))  # at z1..zK
        self.A_col = np.concatenate([A[:1], A_lvl], axis=0)          # + trace limit

        self.nodes = grid.points()
        self.Wu = cfg.potential.w(u0)
        self.z_max = float(e[-1])

    # -- energies ---------------------------------------------------------

    def energy(self, center, r: float) -> float:
        """Half-ball extension energy plus scaled potential at (center, r)."""
        return self.energy_density(center, r).total

    def energy_density(self, center, r: float) -> EnergyDensity:
        """The (dirichlet, potential) split of the energy at (center, r)."""
        c = _check_center(self.grid, center)
        r = float(r)
        if r <= 2.0 * self.h:
            raise ParameterError(f"radius {r} under-resolved: need r > 2h = {2 * self.h}")
        if self.z_max < r:
            raise ParameterError(
                f"extension ladder reaches z = {self.z_max:.4g} < r = {r}; "
                "rebuild the extension with a taller z ladder")
        d2 = self._plane_dist2(c).reshape(self.grid.shape)
        voln = self.h ** self.n

        e_z = 0.0
        for i, zmid in enumerate(self.zint_mid):
            mask = d2 + zmid * zmid <= r * r
            if mask.any():
                e_z += float(self.zint_energy[i][mask].sum()) * voln

        e_x = 0.0
        for l, zl in enumerate(self.xlevel_z):
            if zl * zl >= r * r:
                break
            mask = d2 + zl * zl <= r * r
            if mask.any():
                gsq = sum(self.xgrad[ax, l][mask] ** 2 for ax in range(self.n))
                # xweight integrates z^a over this level's z-cell
                e_x += float(gsq.sum()) * self.xweight[l] * voln

        e_w = float(self.Wu[d2 <= r * r].sum()) * voln
        return EnergyDensity(dirichlet=0.5 * self.d_s * (e_z + e_x),
                             potential=self.eps_pow * e_w,
                             radius=r, center=c)

    def theta(self, center, r: float) -> float:
        """Scaled energy density r^(2s-n) E(r, center)."""
        return float(r ** (2.0 * self.s - self.n) * self.energy(center, r))

    def density_curve(self, center, radii: Sequence[float]) -> np.ndarray:
        return np.asarray([self.theta(center, r) for r in radii])

    # -- monotonicity -----------------------------------------------------

    def monotonicity_residual(self, center, r_small: float, r_big: float) -> dict:
        """Quantitative density monotonicity between two radii.

        Returns lhs = Theta(r_big) - Theta(r_small), rhs = annulus
        radial-derivative term + running-potential term, and their
        difference (nonnegative for critical points up to quadrature error).
        """
        c = _check_center(self.grid, center)
        rho, r = float(r_small), float(r_big)
        if not (0.0 < rho < r):
            raise ParameterError("need 0 < r_small < r_big")
        if rho <= 2.0 * self.h:
            raise ParameterError("inner radius under-resolved")
        lhs = self.theta(c, r) - self.theta(c, rho)
        term_dir = self._directional_term(c, rho, r)
        term_pot = self._running_potential_term(c, rho, r)
        rhs = term_dir + term_pot
        return {"lhs": lhs, "rhs": rhs, "residual": lhs - rhs,
                "directional": term_dir, "potential": term_pot}

    def _directional_term(self, c, rho, r) -> float:
        """d_s * int_annulus z^a |(X-X0).grad U|^2 / |X-X0|^{n+2-2s}."""
        n, a, s = self.n, self.a, self.s
        d2 = self._plane_dist2(c)
        diff = self.nodes - c[None, :]
        voln = self.h ** self.n
        expo = (n + 2.0 - 2.0 * s) / 2.0
        total = 0.0
        for l, zl in enumerate(self.xlevel_z):
            w = self.xweight[l]
            R2 = d2 + zl * zl
            mask = (R2 > rho * rho) & (R2 <= r * r)
            if not mask.any():
                continue
            rad = np.zeros(len(self.nodes))
            for ax in range(n):
                rad += diff[:, ax] * self.xgrad[ax, l].ravel()
            if zl > 0.0:
                rad += zl ** (1.0 - a) * self.A_col[l].ravel()
            total += float(np.sum(rad[mask] ** 2 / R2[mask] ** expo)) * w * voln
        return self.d_s * total

    def _running_potential_term(self, c, rho, r) -> float:
        """(2s/eps^{2s}) int_rho^r t^{2s-n-1} (int_{B_t} W(u)) dt, exactly
        integrated against the step function of sorted cell distances."""
        s, n = self.s, self.n
        d2 = self._plane_dist2(c)
        voln = self.h ** self.n
        order = np.argsort(d2)
        dist = np.sqrt(d2[order])
        wsum = np.cumsum(self.Wu.ravel()[order]) * voln
        expo = 2.0 * s - n
        total = 0.0
        lo = rho
        idx = int(np.searchsorted(dist, rho, side="right"))
        while lo < r:
            hi = min(r, dist[idx]) if idx < len(dist) else r
            phi = wsum[idx - 1] if idx > 0 else 0.0
            if hi > lo and phi > 0.0:
                total += phi * (hi ** expo - lo ** expo) / expo
            if hi >= r:
                break
            lo = hi
            idx += 1
        return 2.0 * s * self.eps_pow * total

    def _plane_dist2(self, c) -> np.ndarray:
        diff = self.nodes - np.asarray(c, dtype=float)[None, :]
        return np.sum(diff * diff, axis=1)


# -- module-level conveniences ---------------------------------------------


def energy_density(U: ExtensionField, cfg: SolverConfig, center,
                   r: float) -> EnergyDensity:
    return EnergyEvaluator(U, cfg).energy_density(center, r)


def energy_eps(U: ExtensionField, cfg: SolverConfig, center, r: float) -> float:
    """Half-ball extension energy at one center and radius."""
    return EnergyEvaluator(U, cfg).energy(center, r)


def theta(U: ExtensionField, cfg: SolverConfig, center, r: float) -> float:
    """Scaled energy density r^(2s-n) E(r)."""
    return EnergyEvaluator(U, cfg).theta(center, r)


def density_curve(U: ExtensionField, cfg: SolverConfig, center,
                  radii: Sequence[float]) -> np.ndarray:
    return EnergyEvaluator(U, cfg).density_curve(center, radii)


def monotonicity_residual(U: ExtensionField, cfg: SolverConfig, center,
                          r_small: float, r_big: float) -> dict:
    return EnergyEvaluator(U, cfg).monotonicity_residual(center, r_small, r_big)


def potential_integral(u: Field, cfg: SolverConfig, center, r: float) -> float:
    """int_{B_r} W(u) over the trace plane, by cell-center membership."""
    grid = u.grid
    c = _check_center(grid, center)
    pts = grid.points()
    d2 = np.sum((pts - c[None, :]) ** 2, axis=1)
    return float(np.sum(cfg.potential.w(u.values.ravel()[d2 <= r * r])) * grid.h ** grid.n)


def save_density_csv(path, radii: Sequence[float], thetas: Sequence[float]) -> None:
    radii = np.asarray(radii, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    with open(path, "w") as fh:
        fh.write("# columns: r,theta\n")
        for r, t in zip(radii, thetas):
            fh.write(f"{r:.17g},{t:.17g}\n")
