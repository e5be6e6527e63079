"""Spatial discretization of the elliptic operator in log coordinates.

The operator acting on u is

    A u = -sum_ij a_ij d2u/dx_i dx_j + sum_i b_i du/dx_i + q u,

with constant-in-space coefficients: a_ij = rho_ij sigma_i sigma_j / 2, drift
b_i = sigma_i^2/2 - (r - m), reaction q = r + d.  Discretization is second
order: three-point central stencils per axis, the four-corner cross stencil
for mixed derivatives, central differencing for drift.  Homogeneous Dirichlet
values are folded into the interior system by dropping masked rows/columns,
so the assembled matrix acts on interior unknowns only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from avgbs.grids import Grid
from avgbs.schedules import AveragedCoefficients, MarketModel


@dataclass(frozen=True)
class OperatorCoefficients:
    """Frozen diffusion/drift/reaction coefficients at one instant."""

    a: np.ndarray  # (n, n) diffusion, symmetric positive definite
    b: np.ndarray  # (n,) drift
    q: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("diffusion matrix must be square")
        if not np.allclose(a, a.T, atol=1e-14):
            raise ValueError("diffusion matrix must be symmetric")
        if float(np.linalg.eigvalsh(a)[0]) <= 0.0:
            raise ValueError("diffusion matrix must be positive definite")
        if np.asarray(self.b).shape != (a.shape[0],):
            raise ValueError("drift vector length mismatch")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @classmethod
    def from_model(cls, model: MarketModel, tau: float) -> "OperatorCoefficients":
        """Instantaneous coefficients at market time tau."""
        cov = model.covariance_rate(tau)
        sig2 = np.diag(cov).copy()
        r = model.r.value_at(tau)
        m = model.m.value_at(tau)
        d = model.d.value_at(tau)
        return cls(a=0.5 * cov, b=0.5 * sig2 - (r - m), q=r + d)

    @classmethod
    def from_averaged(cls, avg: AveragedCoefficients) -> "OperatorCoefficients":
        return cls(a=avg.a_bar.copy(), b=avg.b_bar.copy(), q=avg.q_bar)


@dataclass
class DiscreteOperator:
    """Sparse interior-to-interior matrix of the discretized operator."""

    matrix: sp.csr_matrix
    grid: Grid
    coeffs: OperatorCoefficients

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _second_difference(k: int, h: float) -> sp.csr_matrix:
    e = np.ones(k)
    return sp.diags([e[1:], -2 * e, e[1:]], (-1, 0, 1), format="csr") / h**2


def _first_difference(k: int, h: float) -> sp.csr_matrix:
    e = np.ones(k - 1)
    return sp.diags([-e, e], (-1, 1), format="csr") / (2 * h)


def _lift(mat: sp.spmatrix, axis: int, shape: tuple[int, ...]) -> sp.csr_matrix:
    """Kronecker-lift a 1-D operator onto the given axis of the full grid."""
    out = sp.identity(1, format="csr")
    for ax, k in enumerate(shape):
        factor = mat if ax == axis else sp.identity(k, format="csr")
        out = sp.kron(out, factor, format="csr")
    return out


def assemble(coeffs: OperatorCoefficients, grid: Grid) -> DiscreteOperator:
    """Assemble the interior system for the given coefficients on the grid."""
    if coeffs.n != grid.n:
        raise ValueError(
            f"coefficient dimension {coeffs.n} != grid dimension {grid.n}")
    shape = grid.shape
    h = grid.spacings
    full = sp.csr_matrix((int(np.prod(shape)), int(np.prod(shape))))
    for i in range(grid.n):
        full = full - coeffs.a[i, i] * _lift(_second_difference(shape[i], h[i]), i, shape)
        if coeffs.b[i] != 0.0:
            full = full + coeffs.b[i] * _lift(_first_difference(shape[i], h[i]), i, shape)
    for i in range(grid.n):
        for j in range(i + 1, grid.n):
            if coeffs.a[i, j] == 0.0:
                continue
            cross = _lift(_first_difference(shape[i], h[i]), i, shape) @ \
                _lift(_first_difference(shape[j], h[j]), j, shape)
            full = full - 2.0 * coeffs.a[i, j] * cross
    if coeffs.q != 0.0:
        full = full + coeffs.q * sp.identity(full.shape[0], format="csr")
    idx = grid.interior_flat_indices()
    interior = full.tocsr()[idx].tocsc()[:, idx].tocsr()
    return DiscreteOperator(matrix=interior, grid=grid, coeffs=coeffs)


def apply(op: DiscreteOperator, u: np.ndarray) -> np.ndarray:
    if u.shape != (op.size,):
        raise ValueError(f"vector length {u.shape} != interior size {op.size}")
    return op.matrix @ u


def spectral_norm(mat, iters: int = 100, seed: int = 0) -> float:
    """Largest singular value estimated by power iteration on M^T M."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=mat.shape[1])
    v /= np.linalg.norm(v)
    mt = mat.T
    sigma = 0.0
    for _ in range(iters):
        w = mat @ v
        v = mt @ w
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
        sigma = np.sqrt(nv)
    return float(sigma)


def commutator_norm(op1: DiscreteOperator, op2: DiscreteOperator) -> float:
    """Spectral-norm estimate of A1 A2 - A2 A1 (power iteration, 100 steps).

    Exactly zero commutators only occur for scalar multiples; operators with
    different drift/diffusion mixes fail to commute in a boundary-supported
    way, which this diagnostic quantifies.
    """
    if op1.grid is not op2.grid and op1.grid.shape != op2.grid.shape:
        raise ValueError("operators live on different grids")
    comm = op1.matrix @ op2.matrix - op2.matrix @ op1.matrix
    return spectral_norm(comm)


def monotonicity_shift(op: DiscreteOperator, tol: float = 1e-9) -> float:
    """Smallest shift c1 >= 0 making <A u, u> + c1 ||u||^2 nonnegative.

    Equals max(0, -lambda_min) of the symmetric part.  A cheap Gershgorin
    bound short-circuits the common diagonally dominant case; otherwise the
    extreme eigenvalue is computed by shift-invert Lanczos.
    """
    sym = 0.5 * (op.matrix + op.matrix.T).tocsr()
    diag = sym.diagonal()
    offdiag_abs = np.asarray(abs(sym).sum(axis=1)).ravel() - np.abs(diag)
    gersh_lo = float(np.min(diag - offdiag_abs))
    if gersh_lo >= 0.0:
        return 0.0
    if sym.shape[0] == 1:
        return max(0.0, -float(sym[0, 0]))
    sigma = gersh_lo - 1.0
    lam = spla.eigsh(sym, k=1, sigma=sigma, which="LM",
                     return_eigenvectors=False, tol=tol)
    return max(0.0, -float(lam[0]))
