"""Theta-scheme time stepping for the homogeneous parabolic problem.

The march runs in engine time t = T - tau from 0 (where the payoff is the
initial value) to T.  Steps are aligned to every coefficient breakpoint, so a
piecewise-constant model is advanced exactly as a composition of per-segment
constant solves.  Within a step, coefficients are taken at the step midpoint
for theta = 1/2 and at the right endpoint for theta = 1.  The averaged solve
reuses the identical partition, which keeps the equivalence residual free of
time-discretization mismatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from avgbs.grids import DomainSpec, Grid, PayoffSpec, build_grid, evaluate_payoff
from avgbs.operators import DiscreteOperator, OperatorCoefficients, assemble
from avgbs.schedules import MarketModel, averaged_operator_coeffs


class SolverFailure(RuntimeError):
    """Linear solver failed to reach the configured residual."""


@dataclass(frozen=True)
class SolveConfig:
    """Theta scheme settings; breakpoint alignment is always on."""

    theta: float = 0.5
    dt_target: float = 1.0 / 64
    rannacher_steps: int = 4  # implicit-Euler half-steps damping payoff kinks
    linear_tol: float = 1e-10
    store_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [1/2, 1]")
        if self.dt_target <= 0:
            raise ValueError("dt_target must be positive")
        if self.rannacher_steps < 0 or self.rannacher_steps % 2:
            raise ValueError("rannacher_steps must be a nonnegative even count")


@dataclass(frozen=True)
class ProblemSpec:
    """Domain, payoff, horizon, and spatial resolution of one pricing problem."""

    domain: DomainSpec
    payoff: PayoffSpec
    maturity: float
    nodes_per_axis: tuple[int, ...] | int
    measurement: str = "interior"  # "interior" | "core"

    def __post_init__(self):
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")
        if self.measurement not in ("interior", "core"):
            raise ValueError("measurement must be 'interior' or 'core'")

    def build_grid(self) -> Grid:
        return build_grid(self.domain, self.nodes_per_axis)

    def measurement_mask(self, grid: Grid) -> np.ndarray:
        if self.measurement == "core":
            return grid.core_mask(0.5)
        return np.ones(grid.shape, dtype=bool)


@dataclass
class SolutionField:
    """Snapshots of the evolving field plus the per-step norm history.

    Values are interior vectors; Dirichlet nodes are identically zero and are
    restored by `snapshot_full`.  Times are engine times (t = T - tau).
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    step_times: np.ndarray
    step_norms: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def snapshot_full(self, k: int = -1) -> np.ndarray:
        return self.grid.embed(self.values[k])

    def value_at_prices(self, y: Sequence[float]) -> float:
        """Multilinear interpolation of the final field at price point y."""
        x = np.log(np.asarray(y, dtype=float))
        field = self.snapshot_full()
        idx = []
        for ax_i, ax in enumerate(self.grid.axes):
            if not ax[0] <= x[ax_i] <= ax[-1]:
                raise ValueError(f"point {y} outside the grid box")
            k = min(int(np.searchsorted(ax, x[ax_i], side="right")) - 1, len(ax) - 2)
            k = max(k, 0)
            w = (x[ax_i] - ax[k]) / (ax[k + 1] - ax[k])
            idx.append((k, w))
        out = field
        for ax_i, (k, w) in enumerate(idx):
            lo = np.take(out, k, axis=0)
            hi = np.take(out, k + 1, axis=0)
            out = (1 - w) * lo + w * hi
        return float(out)


# ---------------------------------------------------------------------------
# Linear-step kernels
# ---------------------------------------------------------------------------

class _StepKernel:
    """Solves (I + theta dt A) u_next = (I - (1-theta) dt A) u repeatedly."""

    def __init__(self, op: DiscreteOperator, dt: float, theta: float, tol: float):
        n = op.matrix.shape[0]
        eye = sp.identity(n, format="csr")
        self.lhs = (eye + theta * dt * op.matrix).tocsr()
        self.rhs_mat = (eye - (1.0 - theta) * dt * op.matrix).tocsr() \
            if theta < 1.0 else eye
        self.tol = tol
        self.ndim = op.grid.n
        self._lu = None
        self._ilu = None
        if self.ndim == 1 or n <= 400:
            try:
                self._lu = spla.splu(self.lhs.tocsc())
            except RuntimeError as exc:
                raise SolverFailure(f"direct factorization failed: {exc}") from exc

    def _precondition(self):
        if self._ilu is None:
            try:
                ilu = spla.spilu(self.lhs.tocsc(), drop_tol=1e-5, fill_factor=10)
            except RuntimeError as exc:
                raise SolverFailure(f"preconditioner failed: {exc}") from exc
            self._ilu = spla.LinearOperator(self.lhs.shape, ilu.solve)
        return self._ilu

    def step(self, u: np.ndarray) -> np.ndarray:
        rhs = self.rhs_mat @ u
        rhs_norm = float(np.linalg.norm(rhs))
        if rhs_norm == 0.0:
            return np.zeros_like(u)
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            x, info = spla.bicgstab(self.lhs, rhs, x0=u, rtol=self.tol / 10,
                                    atol=0.0, maxiter=500, M=self._precondition())
            if info != 0:
                res = float(np.linalg.norm(self.lhs @ x - rhs)) / rhs_norm
                raise SolverFailure(
                    f"bicgstab did not converge (info={info}, "
                    f"relative residual {res:.3e})")
        res = float(np.linalg.norm(self.lhs @ x - rhs)) / rhs_norm
        if res > self.tol:
            raise SolverFailure(f"linear step residual {res:.3e} above "
                                f"tolerance {self.tol:.1e}")
        return x


def step_theta(u: np.ndarray, op_mid: DiscreteOperator, dt: float,
               theta: float = 0.5, tol: float = 1e-10) -> np.ndarray:
    """One theta step of du/dt + A u = 0 with the supplied frozen operator."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _StepKernel(op_mid, dt, theta, tol).step(u)


# ---------------------------------------------------------------------------
# Time marching
# ---------------------------------------------------------------------------

def build_partition(maturity: float, breakpoints: Sequence[float],
                    dt_target: float) -> np.ndarray:
    """Engine-time nodes from 0 to T, aligned to every breakpoint.

    `breakpoints` are market times; they enter mirrored through t = T - tau.
    Each inter-breakpoint segment is subdivided uniformly with dt <= target.
    """
    anchors = {0.0, maturity}
    for tau in breakpoints:
        t = maturity - tau
        if 0.0 < t < maturity:
            anchors.add(t)
    anchors = sorted(anchors)
    nodes = [0.0]
    for a, b in zip(anchors, anchors[1:]):
        k = max(1, math.ceil((b - a) / dt_target - 1e-12))
        nodes.extend(a + (b - a) * np.arange(1, k) / k)
        nodes.append(b)  # keep breakpoints exact
    return np.array(nodes)


CoeffProvider = Callable[[float, float, float], OperatorCoefficients]


def _march(grid: Grid, u0: np.ndarray, partition: np.ndarray,
           provider: CoeffProvider, config: SolveConfig) -> SolutionField:
    kernels: dict = {}
    operators: dict = {}

    def kernel_for(t0: float, t1: float, theta: float) -> _StepKernel:
        co = provider(t0, t1, theta)
        op_key = (co.a.tobytes(), co.b.tobytes(), co.q)
        if op_key not in operators:
            operators[op_key] = assemble(co, grid)
        key = op_key + (t1 - t0, theta)
        if key not in kernels:
            kernels[key] = _StepKernel(operators[op_key], t1 - t0, theta,
                                       config.linear_tol)
        return kernels[key]

    # snap requested store times onto the nearest partition node
    snap = set()
    for wanted in set(config.store_times):
        snap.add(float(partition[int(np.argmin(np.abs(partition - wanted)))]))
    u = u0.copy()
    times, values = [], []
    step_times, step_norms = [0.0], [grid.norm(u)]

    def maybe_store(t: float):
        if t in snap:
            times.append(t)
            values.append(u.copy())

    maybe_store(0.0)
    startup_left = config.rannacher_steps if config.theta < 1.0 else 0
    for t0, t1 in zip(partition, partition[1:]):
        t0, t1 = float(t0), float(t1)
        if startup_left > 0:
            mid = 0.5 * (t0 + t1)
            u = kernel_for(t0, mid, 1.0).step(u)
            u = kernel_for(mid, t1, 1.0).step(u)
            startup_left -= 2
        else:
            u = kernel_for(t0, t1, config.theta).step(u)
        step_times.append(t1)
        step_norms.append(grid.norm(u))
        maybe_store(t1)

    if not times or times[-1] != partition[-1]:
        times.append(float(partition[-1]))
        values.append(u.copy())
    return SolutionField(grid=grid, times=np.array(times),
                         values=np.array(values),
                         step_times=np.array(step_times),
                         step_norms=np.array(step_norms))


def _check_model_covers(model: MarketModel, maturity: float):
    lo, hi = model.span
    if lo > 0.0 or hi < maturity:
        raise ValueError(
            f"model schedules cover [{lo}, {hi}], need [0, {maturity}]")


def solve_time_dependent(model: MarketModel, problem: ProblemSpec,
                         config: SolveConfig) -> SolutionField:
    """March the time-dependent operator from the payoff to t = T."""
    _check_model_covers(model, problem.maturity)
    grid = problem.build_grid()
    u0 = grid.restrict(evaluate_payoff(problem.payoff, grid))
    partition = build_partition(problem.maturity, model.breakpoints,
                                config.dt_target)
    T = problem.maturity

    def provider(t0: float, t1: float, theta: float) -> OperatorCoefficients:
        t_eval = t1 if theta >= 1.0 else 0.5 * (t0 + t1)
        return OperatorCoefficients.from_model(model, T - t_eval)

    return _march(grid, u0, partition, provider, config)


def solve_averaged(model: MarketModel, problem: ProblemSpec,
                   config: SolveConfig,
                   vol_average: str = "rms") -> SolutionField:
    """March the constant averaged operator on the identical partition."""
    _check_model_covers(model, problem.maturity)
    grid = problem.build_grid()
    u0 = grid.restrict(evaluate_payoff(problem.payoff, grid))
    partition = build_partition(problem.maturity, model.breakpoints,
                                config.dt_target)
    avg = averaged_operator_coeffs(model, 0.0, problem.maturity,
                                   vol_average=vol_average)
    co = OperatorCoefficients.from_averaged(avg)

    def provider(t0: float, t1: float, theta: float) -> OperatorCoefficients:
        return co

    return _march(grid, u0, partition, provider, config)
