"""Matrix-scale laboratory for the operator-exponential machinery.

Everything the evolution argument rests on is exercised here on dense
matrices, where monotonicity and maximality are decidable: the exponential
identity exp(-A1-A2) = exp(-A1) exp(-A2) for commuting monotone pairs (and
its failure without commutation), resolvent-based Yosida approximants with
their contraction properties, the quantitative convergence bound for flows
driven by sums of Yosida approximants, and the piecewise-constant composition
that equates a product of segment exponentials with the exponential of the
duration-weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from avgbs.operators import spectral_norm

DEFAULT_DIM = 50
DEFAULT_SPECTRUM = (1e-2, 1e2)


def _random_orthogonal(k: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(k, k)))
    return q * np.sign(np.diag(r))


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, k: int):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=k))


@dataclass(frozen=True)
class MonotoneMatrix:
    """Dense square matrix with <Av, v> >= 0 certified at construction."""

    mat: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.mat, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        sym_min = float(np.linalg.eigvalsh(0.5 * (a + a.T))[0])
        if sym_min < -1e-10 * max(1.0, float(np.abs(a).max())):
            raise ValueError(
                f"not monotone: symmetric part has eigenvalue {sym_min:.3e}")

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @property
    def is_symmetric(self) -> bool:
        scale = float(np.abs(self.mat).max()) or 1.0
        return float(np.abs(self.mat - self.mat.T).max()) <= 1e-12 * scale

    @classmethod
    def random_spd(cls, dim: int = DEFAULT_DIM, seed: int = 0,
                   spectrum: tuple[float, float] = DEFAULT_SPECTRUM):
        rng = np.random.default_rng(seed)
        q = _random_orthogonal(dim, rng)
        lam = _log_uniform(rng, *spectrum, k=dim)
        return cls(q @ np.diag(lam) @ q.T)

    @classmethod
    def random_monotone(cls, dim: int = DEFAULT_DIM, seed: int = 0,
                        spectrum: tuple[float, float] = DEFAULT_SPECTRUM):
        """Nonsymmetric monotone sample: SPD part plus antisymmetric noise."""
        rng = np.random.default_rng(seed)
        q = _random_orthogonal(dim, rng)
        spd = q @ np.diag(_log_uniform(rng, *spectrum, k=dim)) @ q.T
        skew = rng.normal(size=(dim, dim))
        skew = 0.5 * (skew - skew.T)
        return cls(spd + skew)


@dataclass(frozen=True)
class CommutingPair:
    """Two monotone matrices sharing one orthogonal eigenbasis."""

    basis: np.ndarray
    spectrum1: np.ndarray
    spectrum2: np.ndarray

    def __post_init__(self):
        if np.any(self.spectrum1 < 0) or np.any(self.spectrum2 < 0):
            raise ValueError("spectra must be nonnegative")
        defect = self.commutator_defect()
        if defect > 1e-12:
            raise ValueError(f"pair does not commute: relative defect {defect:.3e}")

    @property
    def a1(self) -> np.ndarray:
        return self.basis @ np.diag(self.spectrum1) @ self.basis.T

    @property
    def a2(self) -> np.ndarray:
        return self.basis @ np.diag(self.spectrum2) @ self.basis.T

    def commutator_defect(self) -> float:
        a1, a2 = self.a1, self.a2
        comm = a1 @ a2 - a2 @ a1
        scale = spectral_norm(a1) * spectral_norm(a2)
        return spectral_norm(comm) / scale if scale else 0.0

    @classmethod
    def random(cls, dim: int = DEFAULT_DIM, seed: int = 0,
               spectrum: tuple[float, float] = DEFAULT_SPECTRUM):
        rng = np.random.default_rng(seed)
        q = _random_orthogonal(dim, rng)
        return cls(basis=q,
                   spectrum1=_log_uniform(rng, *spectrum, k=dim),
                   spectrum2=_log_uniform(rng, *spectrum, k=dim))


# ---------------------------------------------------------------------------
# Matrix exponential
# ---------------------------------------------------------------------------

def expm_neg(a, t: float = 1.0, method: str = "auto") -> np.ndarray:
    """exp(-t a) by eigendecomposition (symmetric) or scaling-and-squaring.

    `method` forces one route; the default picks eigendecomposition whenever
    the matrix is symmetric and falls back to the Pade-13 scaling-and-squaring
    path otherwise.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    mat = a.mat if isinstance(a, MonotoneMatrix) else np.asarray(a, dtype=float)
    if method == "auto":
        symmetric = float(np.abs(mat - mat.T).max()) <= \
            1e-12 * max(1.0, float(np.abs(mat).max()))
        method = "eig" if symmetric else "pade"
    if method == "eig":
        lam, q = np.linalg.eigh(mat)
        return (q * np.exp(-t * lam)) @ q.T
    if method == "pade":
        return scipy.linalg.expm(-t * mat)
    raise ValueError(f"unknown method {method!r}")


def verify_exp_identity(pair: CommutingPair, t1: float = 1.0,
                        t2: float = 1.0) -> float:
    """Spectral-norm residual of exp(-t1 A1 - t2 A2) vs the product form."""
    a1, a2 = pair.a1, pair.a2
    combined = expm_neg(t1 * a1 + t2 * a2)
    product = expm_neg(a1, t1) @ expm_neg(a2, t2)
    return spectral_norm(combined - product)


def exp_identity_residual(a1: np.ndarray, a2: np.ndarray) -> float:
    """Same residual for arbitrary (possibly non-commuting) matrices."""
    combined = expm_neg(np.asarray(a1) + np.asarray(a2))
    product = expm_neg(a1) @ expm_neg(a2)
    return spectral_norm(combined - product)


NONCOMMUTING_WITNESS = (np.array([[1.0, 0.0], [0.0, 0.0]]),
                        np.array([[0.5, 0.5], [0.5, 0.5]]))


# ---------------------------------------------------------------------------
# Yosida approximation
# ---------------------------------------------------------------------------

def yosida(a, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Resolvent J = (I + lam A)^-1 and surrogate A_lam = (I - J)/lam."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    mat = a.mat if isinstance(a, MonotoneMatrix) else np.asarray(a, dtype=float)
    eye = np.eye(mat.shape[0])
    try:
        j = np.linalg.solve(eye + lam * mat, eye)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"I + lambda A singular (operator not monotone): {exc}") from exc
    return j, (eye - j) / lam


def flow_bound(lam: float, mu: float, t: float, a1u0_norm: float,
               a2u0_norm: float) -> float:
    """Quantitative envelope for ||u_lam(t) - u_mu(t)|| of the Yosida flows."""
    return 2.0 * np.sqrt(2.0 * (lam + mu) * t) * \
        np.sqrt(a1u0_norm**2 + a2u0_norm**2)


def yosida_flow_convergence(pair: CommutingPair, u0: np.ndarray,
                            lambdas, t: float = 1.0) -> list[dict]:
    """Check the flow-convergence bound for every lambda/mu pair.

    Each record carries (lam, mu, observed, bound, ratio); the contract is
    ratio <= 1 throughout, with the lam = mu diagonal observing exactly zero.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    a1, a2 = pair.a1, pair.a2
    a1n = float(np.linalg.norm(a1 @ u0))
    a2n = float(np.linalg.norm(a2 @ u0))
    lambdas = sorted(float(l) for l in lambdas)
    flows = {}
    for lam in lambdas:
        a1l = yosida(a1, lam)[1]
        a2l = yosida(a2, lam)[1]
        flows[lam] = expm_neg(a1l + a2l, t) @ u0
    rows = []
    for i, lam in enumerate(lambdas):
        for mu in lambdas[i:]:
            observed = float(np.linalg.norm(flows[lam] - flows[mu]))
            bound = flow_bound(lam, mu, t, a1n, a2n)
            rows.append({"lam": lam, "mu": mu, "observed": observed,
                         "bound": bound, "ratio": observed / bound})
    return rows


def yosida_rate_experiment(dim: int = 400, seed: int = 0,
                           spectrum: tuple[float, float] = (1.0, 1e5),
                           t: float = 5e-6, mu: float = 1e-7,
                           lambdas=(1e-1, 1e-2, 1e-3)) -> dict:
    """Observed convergence-rate exponent of the Yosida flows.

    Smooth data converges at O(lambda); the square-root regime of the bound
    only shows up for rough data.  This experiment prepares initial data with
    spectral components ~ eigenvalue^(-3/2) over a stiff log-spaced spectrum
    and a short horizon, for which the observed error follows sqrt(lambda)
    over the sampled decade range.
    """
    rng = np.random.default_rng(seed)
    q = _random_orthogonal(dim, rng)
    lam_spec = np.logspace(np.log10(spectrum[0]), np.log10(spectrum[1]), dim)
    pair = CommutingPair(basis=q, spectrum1=lam_spec, spectrum2=lam_spec)
    coeff = lam_spec**-1.5
    coeff /= np.linalg.norm(coeff)
    u0 = q @ coeff
    a1 = pair.a1
    ref = expm_neg(yosida(a1, mu)[1] + yosida(pair.a2, mu)[1], t) @ u0
    errors = []
    for lam in lambdas:
        ulam = expm_neg(yosida(a1, lam)[1] + yosida(pair.a2, lam)[1], t) @ u0
        errors.append(float(np.linalg.norm(ulam - ref)))
    logs = np.log(np.asarray(errors))
    slope = float(np.polyfit(np.log(np.asarray(lambdas)), logs, 1)[0])
    return {"lambdas": tuple(lambdas), "errors": tuple(errors), "slope": slope}


# ---------------------------------------------------------------------------
# Piecewise composition
# ---------------------------------------------------------------------------

def compose_piecewise(segments) -> tuple[np.ndarray, np.ndarray, float]:
    """Product of segment exponentials vs the duration-weighted-sum exponential.

    `segments` is a list of (matrix-or-MonotoneMatrix, duration).  Returns
    (product, direct, spectral-norm difference); for commuting segment
    families the two agree.  The product applies the last segment first,
    matching a march that consumes segments in time order.
    """
    if not segments:
        raise ValueError("need at least one segment")
    mats, durs = [], []
    for a, dur in segments:
        if dur <= 0:
            raise ValueError("durations must be positive")
        mats.append(a.mat if isinstance(a, MonotoneMatrix) else np.asarray(a, float))
        durs.append(float(dur))
    dim = mats[0].shape[0]
    product = np.eye(dim)
    weighted = np.zeros((dim, dim))
    for mat, dur in zip(mats, durs):
        product = expm_neg(mat, dur) @ product
        weighted += dur * mat
    direct = expm_neg(weighted)
    return product, direct, spectral_norm(product - direct)


def commuting_family(count: int, dim: int = DEFAULT_DIM, seed: int = 0,
                     spectrum: tuple[float, float] = DEFAULT_SPECTRUM):
    """Matrices sharing one eigenbasis, for composition experiments."""
    rng = np.random.default_rng(seed)
    q = _random_orthogonal(dim, rng)
    return [MonotoneMatrix(q @ np.diag(_log_uniform(rng, *spectrum, k=dim)) @ q.T)
            for _ in range(count)]
