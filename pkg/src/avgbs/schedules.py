"""Piecewise time-dependent market coefficients and their exact averages.

Coefficients (short rate, expense margin, decrement rate, volatilities,
correlations) are piecewise-constant or piecewise-linear functions of market
time, in years.  Averaging replaces them with the specific constants that make
the constant-coefficient valuation problem equivalent to the time-dependent
one: arithmetic averages for rates, root-mean-square for volatilities, and a
volatility-weighted average for correlations.  Every integral here is taken in
closed form segment by segment, so averaging carries no quadrature error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ELLIPTICITY_FLOOR = 1e-12


class EllipticityError(ValueError):
    """Covariance-rate matrix lost (uniform) positive definiteness."""


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    v_start: float
    v_end: float
    kind: str  # "const" | "linear"

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError(
                f"segment needs t_end > t_start, got [{self.t_start}, {self.t_end}]"
            )
        if self.kind not in ("const", "linear"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind == "const" and self.v_start != self.v_end:
            raise ValueError("const segment with differing endpoint values")

    def poly(self) -> tuple[float, float]:
        """Value as c0 + c1*t on this segment (ascending coefficients)."""
        slope = (self.v_end - self.v_start) / (self.t_end - self.t_start)
        return self.v_start - slope * self.t_start, slope


@dataclass(frozen=True)
class CoefficientSchedule:
    """A piecewise-constant/linear scalar function of time.

    Segments are contiguous and non-overlapping.  Evaluation at an interior
    breakpoint takes the value of the segment starting there (the schedule is
    right-continuous); `side="left"` asks instead for the value of the segment
    ending there, i.e. the left limit.
    """

    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        for prev, cur in zip(self.segments, self.segments[1:]):
            if cur.t_start != prev.t_end:
                raise ValueError(
                    f"segments not contiguous at t={prev.t_end} vs {cur.t_start}"
                )

    @property
    def span(self) -> tuple[float, float]:
        return self.segments[0].t_start, self.segments[-1].t_end

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(s.t_start for s in self.segments) + (self.span[1],)

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, value: float, span: tuple[float, float] = (0.0, 1.0)):
        return cls((Segment(span[0], span[1], value, value, "const"),))

    @classmethod
    def linear(cls, v_start: float, v_end: float, span: tuple[float, float] = (0.0, 1.0)):
        return cls((Segment(span[0], span[1], v_start, v_end, "linear"),))

    @classmethod
    def piecewise(cls, pieces: Iterable[tuple[float, float, float]]):
        """Piecewise-constant schedule from (t_start, t_end, value) triples."""
        return cls(tuple(Segment(a, b, v, v, "const") for a, b, v in pieces))

    @classmethod
    def from_records(cls, records: Sequence[dict]):
        """Parse the schedule text format used by experiment configs."""
        segs = []
        for k, rec in enumerate(records):
            try:
                a, b, kind = rec["t_start"], rec["t_end"], rec["kind"]
            except KeyError as exc:
                raise ValueError(f"schedule record {k}: missing field {exc}") from None
            if kind == "const":
                if "value" not in rec:
                    raise ValueError(f"schedule record {k}: const needs 'value'")
                segs.append(Segment(a, b, rec["value"], rec["value"], "const"))
            elif kind == "linear":
                if "v_start" not in rec or "v_end" not in rec:
                    raise ValueError(
                        f"schedule record {k}: linear needs 'v_start' and 'v_end'"
                    )
                segs.append(Segment(a, b, rec["v_start"], rec["v_end"], "linear"))
            else:
                raise ValueError(f"schedule record {k}: unknown kind {kind!r}")
        return cls(tuple(segs))

    def to_records(self) -> list[dict]:
        out = []
        for s in self.segments:
            if s.kind == "const":
                out.append({"t_start": s.t_start, "t_end": s.t_end,
                            "kind": "const", "value": s.v_start})
            else:
                out.append({"t_start": s.t_start, "t_end": s.t_end,
                            "kind": "linear", "v_start": s.v_start, "v_end": s.v_end})
        return out

    # -- evaluation ---------------------------------------------------------

    def _segment_index(self, t: float, side: str = "right") -> int:
        lo, hi = self.span
        if t < lo or t > hi:
            raise ValueError(f"t={t} outside schedule span [{lo}, {hi}]")
        starts = [s.t_start for s in self.segments]
        if side == "right":
            # last segment whose start is <= t; span end belongs to the last one
            k = int(np.searchsorted(starts, t, side="right")) - 1
            return min(k, len(self.segments) - 1)
        if side == "left":
            # segment whose half-open (t_start, t_end] interval contains t
            k = int(np.searchsorted(starts, t, side="left")) - 1
            return max(k, 0)
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    def value_at(self, t: float, side: str = "right") -> float:
        seg = self.segments[self._segment_index(t, side)]
        c0, c1 = seg.poly()
        return c0 + c1 * t

    def values_at(self, ts: np.ndarray, side: str = "right") -> np.ndarray:
        return np.array([self.value_at(float(t), side) for t in ts])

    # -- transformations ----------------------------------------------------

    def shifted(self, delta: float) -> "CoefficientSchedule":
        return CoefficientSchedule(tuple(
            Segment(s.t_start + delta, s.t_end + delta, s.v_start, s.v_end, s.kind)
            for s in self.segments))

    def reversed(self) -> "CoefficientSchedule":
        """Time-reversed schedule on the same span (t -> lo + hi - t)."""
        lo, hi = self.span
        segs = [Segment(lo + hi - s.t_end, lo + hi - s.t_start,
                        s.v_end, s.v_start, s.kind)
                for s in reversed(self.segments)]
        return CoefficientSchedule(tuple(segs))


# ---------------------------------------------------------------------------
# Exact segment-wise integration
# ---------------------------------------------------------------------------

def _merged_breaks(schedules: Sequence[CoefficientSchedule], t0: float, t1: float):
    pts = {t0, t1}
    for sch in schedules:
        for b in sch.breakpoints:
            if t0 < b < t1:
                pts.add(b)
    return sorted(pts)

def integrate_product(schedules: Sequence[CoefficientSchedule],
                      t0: float, t1: float) -> float:
    """Exact integral over [t0, t1] of the product of the given schedules.

    Each factor is linear on every merged subinterval, so the product is a
    polynomial that integrates in closed form.
    """
    if t1 <= t0:
        raise ValueError(f"invalid interval [{t0}, {t1}]")
    for sch in schedules:
        lo, hi = sch.span
        if t0 < lo or t1 > hi:
            raise ValueError(
                f"interval [{t0}, {t1}] not within schedule span [{lo}, {hi}]")
    breaks = _merged_breaks(schedules, t0, t1)
    total = 0.0
    for a, b in zip(breaks, breaks[1:]):
        mid = 0.5 * (a + b)
        poly = np.array([1.0])
        for sch in schedules:
            seg = sch.segments[sch._segment_index(mid)]
            poly = np.convolve(poly, np.array(seg.poly()))
        powers_b = b ** np.arange(1, len(poly) + 1)
        powers_a = a ** np.arange(1, len(poly) + 1)
        total += float(np.sum(poly * (powers_b - powers_a) / np.arange(1, len(poly) + 1)))
    return total


def average_scalar(schedule: CoefficientSchedule, t0: float, t1: float) -> float:
    """Arithmetic time average (1/(t1-t0)) * integral of the schedule."""
    return integrate_product([schedule], t0, t1) / (t1 - t0)


def average_vol(sigma: CoefficientSchedule, t0: float, t1: float) -> float:
    """Root-mean-square volatility average: sqrt of the time average of sigma^2."""
    _require_positive(sigma, t0, t1)
    mean_sq = integrate_product([sigma, sigma], t0, t1) / (t1 - t0)
    return math.sqrt(mean_sq)


def average_correlation(sigma_i: CoefficientSchedule, sigma_j: CoefficientSchedule,
                        rho_ij: CoefficientSchedule, t0: float, t1: float,
                        sigma_bar_i: float | None = None,
                        sigma_bar_j: float | None = None) -> float:
    """Volatility-weighted correlation average.

    Divides the integral of sigma_i*sigma_j*rho_ij by the product of the RMS
    volatility averages; intermediate averages may be supplied to avoid
    recomputation.
    """
    if sigma_bar_i is None:
        sigma_bar_i = average_vol(sigma_i, t0, t1)
    if sigma_bar_j is None:
        sigma_bar_j = average_vol(sigma_j, t0, t1)
    denom = (t1 - t0) * sigma_bar_i * sigma_bar_j
    if denom <= 0.0:
        raise ValueError("degenerate volatility: averaged vols must be positive")
    return integrate_product([sigma_i, sigma_j, rho_ij], t0, t1) / denom


def _require_positive(sigma: CoefficientSchedule, t0: float, t1: float):
    # linear profiles attain their extrema at segment endpoints
    for seg in sigma.segments:
        if seg.t_end <= t0 or seg.t_start >= t1:
            continue
        if min(seg.v_start, seg.v_end) <= 0.0:
            raise ValueError(
                f"volatility schedule not positive on [{seg.t_start}, {seg.t_end}]")


# ---------------------------------------------------------------------------
# Market model
# ---------------------------------------------------------------------------

def _as_schedule(x, span) -> CoefficientSchedule:
    if isinstance(x, CoefficientSchedule):
        return x
    return CoefficientSchedule.constant(float(x), span)


@dataclass(frozen=True)
class MarketModel:
    """Asset count plus every coefficient schedule of the market dynamics.

    `rho` is the full correlation-schedule matrix; it must be symmetric with
    unit diagonal, and the covariance-rate matrix (rho_ij * sigma_i * sigma_j)
    must stay uniformly positive definite over the whole span.  Construction
    verifies this on a dense time sample and rejects violations, which makes a
    successfully built model safe for every downstream solver.
    """

    n: int
    r: CoefficientSchedule
    m: CoefficientSchedule
    d: CoefficientSchedule
    sigma: tuple[CoefficientSchedule, ...]
    rho: tuple[tuple[CoefficientSchedule, ...], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need n >= 1 assets")
        if len(self.sigma) != self.n:
            raise ValueError(f"expected {self.n} volatility schedules")
        if len(self.rho) != self.n or any(len(row) != self.n for row in self.rho):
            raise ValueError("rho must be an n-by-n schedule matrix")
        span = self.r.span
        for sch in self._all_schedules():
            if sch.span != span:
                raise ValueError(
                    f"all schedules must share span {span}, got {sch.span}")
        for i in range(self.n):
            for seg in self.rho[i][i].segments:
                if not (seg.v_start == seg.v_end == 1.0):
                    raise ValueError(f"rho[{i}][{i}] must be identically 1")
            for j in range(i + 1, self.n):
                if self.rho[i][j].segments != self.rho[j][i].segments:
                    raise ValueError(f"rho[{i}][{j}] != rho[{j}][{i}]")
        for s in self.sigma:
            _require_positive(s, *span)
        check_uniform_ellipticity(self, span[0], span[1])

    def _all_schedules(self):
        yield self.r
        yield self.m
        yield self.d
        yield from self.sigma
        for row in self.rho:
            yield from row

    @property
    def span(self) -> tuple[float, float]:
        return self.r.span

    @property
    def breakpoints(self) -> tuple[float, ...]:
        pts = set()
        for sch in self._all_schedules():
            pts.update(sch.breakpoints)
        return tuple(sorted(pts))

    def covariance_rate(self, t: float, side: str = "right") -> np.ndarray:
        """Instantaneous matrix (rho_ij * sigma_i * sigma_j)(t)."""
        sig = np.array([s.value_at(t, side) for s in self.sigma])
        rho = np.array([[self.rho[i][j].value_at(t, side) for j in range(self.n)]
                        for i in range(self.n)])
        return rho * np.outer(sig, sig)

    @classmethod
    def build(cls, sigma, rho=None, r=0.0, m=0.0, d=0.0, span=(0.0, 1.0)):
        """Convenience constructor accepting floats or schedules per entry.

        `sigma` is a schedule/float or a sequence of them; `rho` is a constant
        correlation matrix, a schedule matrix, or None (identity).
        """
        if isinstance(sigma, (CoefficientSchedule, float, int)):
            sigma = [sigma]
        sig = tuple(_as_schedule(s, span) for s in sigma)
        n = len(sig)
        one = CoefficientSchedule.constant(1.0, span)
        if rho is None:
            rows = [[one if i == j else CoefficientSchedule.constant(0.0, span)
                     for j in range(n)] for i in range(n)]
        else:
            rows = [[one] * n for _ in range(n)]
            for i in range(n):
                for j in range(n):
                    entry = rho[i][j] if not isinstance(rho, np.ndarray) else rho[i, j]
                    rows[i][j] = one if i == j else _as_schedule(entry, span)
            # share objects across the diagonal so symmetry is exact
            for i in range(n):
                for j in range(i + 1, n):
                    rows[j][i] = rows[i][j]
        return cls(n=n, r=_as_schedule(r, span), m=_as_schedule(m, span),
                   d=_as_schedule(d, span), sigma=sig,
                   rho=tuple(tuple(row) for row in rows))


def check_uniform_ellipticity(model: MarketModel, t0: float, t1: float,
                              samples: int = 64) -> float:
    """Smallest eigenvalue of the covariance-rate matrix over [t0, t1].

    Samples every segment densely, endpoints included with one-sided values so
    jumps are seen from both sides.  Raises EllipticityError when the minimum
    drops to the floor.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples per segment")
    breaks = [b for b in _merged_breaks(list(model._all_schedules()), t0, t1)]
    c_min, t_min = math.inf, t0
    for a, b in zip(breaks, breaks[1:]):
        ts = np.linspace(a, b, samples)
        for k, t in enumerate(ts):
            side = "left" if k == len(ts) - 1 else "right"
            lam = float(np.linalg.eigvalsh(model.covariance_rate(float(t), side))[0])
            if lam < c_min:
                c_min, t_min = lam, float(t)
    if c_min <= ELLIPTICITY_FLOOR:
        raise EllipticityError(
            f"covariance-rate matrix not uniformly positive definite: "
            f"smallest eigenvalue {c_min:.3e} at t={t_min}")
    return c_min


# ---------------------------------------------------------------------------
# Averaged coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AveragedCoefficients:
    """Constant coefficients equivalent to a time-dependent model on a window.

    `sigma_bar` squares to the time average of sigma^2; `rho_bar` is the
    volatility-weighted correlation average; `a_bar`, `b_bar`, `q_bar` are the
    matching diffusion/drift/reaction coefficients of the parabolic operator in
    log coordinates.
    """

    r_bar: float
    m_bar: float
    d_bar: float
    sigma_bar: np.ndarray
    rho_bar: np.ndarray
    a_bar: np.ndarray
    b_bar: np.ndarray
    q_bar: float

    def __post_init__(self):
        n = len(self.sigma_bar)
        if self.rho_bar.shape != (n, n) or self.a_bar.shape != (n, n):
            raise ValueError("inconsistent averaged-coefficient shapes")
        if not np.allclose(self.rho_bar, self.rho_bar.T, atol=1e-14):
            raise ValueError("rho_bar must be symmetric")
        if np.any(np.abs(self.rho_bar) > 1.0 + 1e-12):
            raise ValueError("averaged correlations must lie in [-1, 1]")
        if not np.allclose(np.diag(self.rho_bar), 1.0, atol=1e-12):
            raise ValueError("rho_bar must have unit diagonal")
        if float(np.linalg.eigvalsh(self.rho_bar)[0]) < -1e-10:
            raise ValueError("rho_bar must be positive semidefinite")


def averaged_operator_coeffs(model: MarketModel, t0: float, t1: float,
                             vol_average: str = "rms") -> AveragedCoefficients:
    """Average every model coefficient over the market-time window [t0, t1].

    With `vol_average="rms"` this produces the equivalence-preserving averages
    (arithmetic for rates, RMS for vols, vol-weighted for correlations), and
    the resulting diffusion matrix equals the plain time average of the
    instantaneous one.  `vol_average="arithmetic"` deliberately substitutes the
    naive mean volatility; it exists only as a falsification control for the
    verification harness and is not equivalence-preserving.
    """
    if vol_average not in ("rms", "arithmetic"):
        raise ValueError(f"unknown vol_average {vol_average!r}")
    n = model.n
    length = t1 - t0
    r_bar = average_scalar(model.r, t0, t1)
    m_bar = average_scalar(model.m, t0, t1)
    d_bar = average_scalar(model.d, t0, t1)

    mean_sq = np.array([integrate_product([s, s], t0, t1) / length
                        for s in model.sigma])
    rms = np.sqrt(mean_sq)
    rho_bar = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            rho_bar[i, j] = rho_bar[j, i] = average_correlation(
                model.sigma[i], model.sigma[j], model.rho[i][j], t0, t1,
                sigma_bar_i=rms[i], sigma_bar_j=rms[j])

    if vol_average == "rms":
        sigma_bar = rms
        # diffusion as the direct time average of a_ij(t); the rho_bar
        # repackaging below must agree with it to working precision
        a_bar = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                a_bar[i, j] = 0.5 * integrate_product(
                    [model.sigma[i], model.sigma[j], model.rho[i][j]], t0, t1) / length
        repacked = 0.5 * rho_bar * np.outer(sigma_bar, sigma_bar)
        if not np.allclose(a_bar, repacked, rtol=1e-12, atol=1e-12):
            raise AssertionError("averaged diffusion inconsistent with "
                                 "correlation/volatility averages")
        b_bar = 0.5 * mean_sq - (r_bar - m_bar)
    else:
        sigma_bar = np.array([average_scalar(s, t0, t1) for s in model.sigma])
        a_bar = 0.5 * rho_bar * np.outer(sigma_bar, sigma_bar)
        b_bar = 0.5 * sigma_bar**2 - (r_bar - m_bar)
    q_bar = r_bar + d_bar

    return AveragedCoefficients(r_bar=r_bar, m_bar=m_bar, d_bar=d_bar,
                                sigma_bar=sigma_bar, rho_bar=rho_bar,
                                a_bar=a_bar, b_bar=np.asarray(b_bar), q_bar=q_bar)
