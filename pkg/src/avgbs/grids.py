"""Knock-out domains, log-space grids, Dirichlet masks, and payoffs.

The pricing domain is a box of per-asset barriers in price space, optionally
cut by an up-and-out barrier on the portfolio sum.  In log coordinates the box
maps to a rectangle that the uniform grid covers exactly; the sum barrier
becomes a staircase mask.  Nodes are either INTERIOR unknowns or DIRICHLET
nodes pinned to zero (the knocked-out value).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

INTERIOR = "INTERIOR"
DIRICHLET = "DIRICHLET"


def log_transform(y: np.ndarray) -> np.ndarray:
    """Componentwise x = ln(y); prices must be strictly positive."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("log transform needs strictly positive prices")
    return np.log(y)


def exp_transform(x: np.ndarray) -> np.ndarray:
    return np.exp(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class DomainSpec:
    """Box barriers per asset, with an optional knock-out on the asset sum.

    `truncation` marks artificial wide boxes that emulate a barrier-free
    domain; comparisons against barrier-free oracles are then restricted to an
    interior core to keep truncation effects out of the measurement.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    sum_barrier: Optional[float] = None
    truncation: bool = False

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower/upper barrier lists differ in length")
        for lo, up in zip(self.lower, self.upper):
            if not (0.0 < lo < up):
                raise ValueError(f"need 0 < lower < upper, got [{lo}, {up}]")
        if self.sum_barrier is not None and self.sum_barrier <= sum(self.lower):
            raise ValueError("sum barrier leaves no interior")

    @property
    def n(self) -> int:
        return len(self.lower)

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Strict interior membership for points y of shape (..., n)."""
        y = np.asarray(y, dtype=float)
        inside = np.ones(y.shape[:-1], dtype=bool)
        for i in range(self.n):
            inside &= (y[..., i] > self.lower[i]) & (y[..., i] < self.upper[i])
        if self.sum_barrier is not None:
            inside &= y.sum(axis=-1) < self.sum_barrier
        return inside


@dataclass(frozen=True)
class Grid:
    """Uniform log-space grid with per-node INTERIOR/DIRICHLET classification."""

    axes: tuple[np.ndarray, ...]
    interior: np.ndarray  # bool, shape = tuple(len(ax) for ax in axes)
    domain: DomainSpec

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(float(ax[1] - ax[0]) for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    def interior_flat_indices(self) -> np.ndarray:
        return np.flatnonzero(self.interior.ravel())

    def coordinate_mesh(self) -> np.ndarray:
        """Node log-coordinates, shape = grid shape + (n,)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def price_mesh(self) -> np.ndarray:
        return np.exp(self.coordinate_mesh())

    def restrict(self, field: np.ndarray) -> np.ndarray:
        """Full-grid field -> vector over interior nodes."""
        if field.shape != self.shape:
            raise ValueError(f"field shape {field.shape} != grid shape {self.shape}")
        return field[self.interior]

    def embed(self, values: np.ndarray) -> np.ndarray:
        """Interior vector -> full-grid field with zeros on Dirichlet nodes."""
        if values.shape != (self.n_interior,):
            raise ValueError("interior vector length mismatch")
        field = np.zeros(self.shape)
        field[self.interior] = values
        return field

    def norm(self, values: np.ndarray, mask: np.ndarray | None = None) -> float:
        """Discrete L2 norm sqrt(sum(u^2) * cell volume) over interior nodes.

        `values` is an interior vector; `mask` (full-grid bool) restricts the
        measurement region.
        """
        if mask is None:
            sq = float(np.dot(values, values))
        else:
            keep = mask[self.interior]
            v = values[keep]
            sq = float(np.dot(v, v))
        return float(np.sqrt(sq * self.cell_volume))

    def core_mask(self, fraction: float = 0.5) -> np.ndarray:
        """Full-grid mask of the central `fraction` of each axis."""
        masks = []
        for ax in self.axes:
            lo, hi = ax[0], ax[-1]
            # nudge the band edge so nodes landing exactly on it are kept
            half = 0.5 * fraction * (hi - lo) * (1 + 1e-12)
            mid = 0.5 * (lo + hi)
            masks.append((ax >= mid - half) & (ax <= mid + half))
        out = np.ones(self.shape, dtype=bool)
        for axis, m in enumerate(masks):
            shape = [1] * self.n
            shape[axis] = len(m)
            out &= m.reshape(shape)
        return out


def build_grid(domain: DomainSpec, nodes_per_axis: Sequence[int] | int) -> Grid:
    """Uniform grid on the log image of the barrier box.

    Box faces are Dirichlet; with a sum barrier, every node whose price
    coordinates sum to the barrier or beyond is Dirichlet as well (first-order
    staircase mask).
    """
    if isinstance(nodes_per_axis, int):
        nodes_per_axis = (nodes_per_axis,) * domain.n
    if len(nodes_per_axis) != domain.n:
        raise ValueError("nodes_per_axis length must match dimension")
    if any(k < 5 for k in nodes_per_axis):
        raise ValueError("need at least 5 nodes per axis")
    axes = tuple(
        np.linspace(np.log(domain.lower[i]), np.log(domain.upper[i]), nodes_per_axis[i])
        for i in range(domain.n))
    shape = tuple(len(ax) for ax in axes)
    interior = np.ones(shape, dtype=bool)
    for axis in range(domain.n):
        sl = [slice(None)] * domain.n
        sl[axis] = 0
        interior[tuple(sl)] = False
        sl[axis] = shape[axis] - 1
        interior[tuple(sl)] = False
    if domain.sum_barrier is not None:
        mesh = np.meshgrid(*axes, indexing="ij")
        price_sum = np.sum(np.exp(np.stack(mesh, axis=-1)), axis=-1)
        interior &= price_sum < domain.sum_barrier
    if not interior.any():
        raise ValueError("degenerate domain: no interior nodes after masking")
    return Grid(axes=axes, interior=interior, domain=domain)


# ---------------------------------------------------------------------------
# Payoffs
# ---------------------------------------------------------------------------

BASKET_PUT = "BASKET_PUT"
BASKET_CALL = "BASKET_CALL"
VANILLA_PUT = "VANILLA_PUT"
GMMB = "GMMB"
CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class PayoffSpec:
    """Maturity payoff g.  Strike in price units; GMMB is the basket put."""

    kind: str
    strike: float = 0.0
    asset: int = 0
    values: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in (BASKET_PUT, BASKET_CALL, VANILLA_PUT, GMMB, CUSTOM):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind == CUSTOM and self.values is None:
            raise ValueError("CUSTOM payoff needs nodal values")
        if self.kind != CUSTOM and self.strike <= 0:
            raise ValueError("strike must be positive")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """Payoff at price points y of shape (..., n)."""
        y = np.asarray(y, dtype=float)
        if self.kind in (BASKET_PUT, GMMB):
            return np.maximum(self.strike - y.sum(axis=-1), 0.0)
        if self.kind == BASKET_CALL:
            return np.maximum(y.sum(axis=-1) - self.strike, 0.0)
        if self.kind == VANILLA_PUT:
            return np.maximum(self.strike - y[..., self.asset], 0.0)
        raise ValueError("CUSTOM payoff has no pointwise form")


def evaluate_payoff(payoff: PayoffSpec, grid: Grid) -> np.ndarray:
    """Nodal payoff on the full grid with knock-out zeros at Dirichlet nodes."""
    if payoff.kind == CUSTOM:
        vals = np.asarray(payoff.values, dtype=float)
        if vals.shape != grid.shape:
            raise ValueError(
                f"custom payoff shape {vals.shape} != grid shape {grid.shape}")
        vals = vals.copy()
    else:
        vals = payoff(grid.price_mesh())
    vals[~grid.interior] = 0.0
    return vals


def dump_grid_csv(grid: Grid, path, payoff_values: np.ndarray | None = None):
    """Write node coordinates, class, and optional payoff value as CSV."""
    mesh = grid.coordinate_mesh().reshape(-1, grid.n)
    flags = grid.interior.ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"x{i+1}" for i in range(grid.n)] + ["class"]
        if payoff_values is not None:
            header.append("payoff")
            pv = payoff_values.ravel()
        writer.writerow(header)
        for k in range(mesh.shape[0]):
            row = [f"{c:.17g}" for c in mesh[k]]
            row.append(INTERIOR if flags[k] else DIRICHLET)
            if payoff_values is not None:
                row.append(f"{pv[k]:.17g}")
            writer.writerow(row)
