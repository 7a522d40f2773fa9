"""EDCA channel access: service-time moments and the per-vehicle fixed point.

Service-time distributions are described by probability generating functions
in ``z`` whose exponent is time.  Moments only need the value and the first
two derivatives at ``z = 1``, so every PGF is carried as a second-order jet
``(P(1), P'(1), P''(1))`` and composed exactly.  Exponents are expressed in
microseconds; in seconds the variance ``P'' + P' - P'^2`` would lose most of
its digits to cancellation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .config import EdcaParams, FrameParams


class EdcaError(ArithmeticError):
    pass


class ConvergenceError(EdcaError):
    def __init__(self, message: str, last: ServiceState | None, residual: float):
        super().__init__(message)
        self.last = last
        self.residual = residual


@dataclass(frozen=True)
class Jet:
    """Value, first and second derivative of a function of ``z`` at ``z = 1``."""

    f: float
    d1: float = 0.0
    d2: float = 0.0

    @classmethod
    def power(cls, c: float) -> Jet:
        """The monomial ``z**c``."""
        return cls(1.0, c, c * (c - 1.0))

    def __add__(self, other):
        if not isinstance(other, Jet):
            other = Jet(float(other))
        return Jet(self.f + other.f, self.d1 + other.d1, self.d2 + other.d2)

    __radd__ = __add__

    def __mul__(self, other):
        if not isinstance(other, Jet):
            c = float(other)
            return Jet(c * self.f, c * self.d1, c * self.d2)
        return Jet(self.f * other.f,
                   self.d1 * other.f + self.f * other.d1,
                   self.d2 * other.f + 2.0 * self.d1 * other.d1 + self.f * other.d2)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> Jet:
        out = Jet(1.0)
        for _ in range(n):
            out = out * self
        return out

    @property
    def mean(self) -> float:
        return self.d1

    @property
    def variance(self) -> float:
        return self.d2 + self.d1 - self.d1 ** 2


def transmission_time(frame: FrameParams) -> float:
    return (frame.phy_header_bits / frame.basic_rate
            + (frame.mac_header_bits + frame.payload_bits) / frame.data_rate
            + frame.propagation_delay)


def arrival_probabilities(lam0: float, lam1: float, slot: float) -> tuple[float, float]:
    """Per-slot arrival probability for Poisson AC0 and periodic AC1 traffic."""
    if lam0 < 0 or lam1 < 0:
        raise EdcaError("arrival rates must be non-negative")
    pa1 = lam1 * slot
    if pa1 > 1:
        raise EdcaError(f"AC1 rate {lam1}/s exceeds one packet per slot")
    return -math.expm1(-lam0 * slot), pa1


def busy_probabilities(sigma0: float, sigma1: float, n_tr: int, extra_slots: int):
    """Probability that a backoff slot is sensed busy, for AC0 and AC1.

    ``n_tr`` counts the tagged vehicle itself; ``extra_slots`` is how many
    more idle slots AC1 must observe than AC0.
    """
    if n_tr < 1:
        raise EdcaError("n_tr must be >= 1")
    ps0 = 1.0 - (1.0 - sigma0) ** (n_tr - 1) * (1.0 - sigma1) ** n_tr
    ps1 = 1.0 - ((1.0 - sigma0) ** n_tr * (1.0 - sigma1) ** (n_tr - 1)) ** (extra_slots + 1)
    return ps0, ps1


def _geometric(x: float, n: int) -> float:
    """sum_{k=0}^{n-1} x**k, exact at x == 1."""
    return sum(x ** k for k in range(n))


def transmission_probabilities(ps0, ps1, pa0, pa1, rho0, rho1, params: EdcaParams):
    """Per-slot transmission probabilities ``(sigma0, sigma1)``."""
    if ps0 >= 1 or ps1 >= 1:
        raise EdcaError("busy probability of 1 leaves no idle slot")
    w0, w10 = params.w0, params.w1(0)
    m, r = params.backoff_stages, params.retry_limit

    def idle(rho, pa):
        if rho >= 1:
            return 0.0
        return math.inf if pa == 0 else (1.0 - rho) / pa

    denom0 = (w0 + 1) / (2.0 * (1.0 - ps0)) + idle(rho0, pa0)
    sigma0 = 0.0 if math.isinf(denom0) else 1.0 / denom0

    attempts = _geometric(sigma0, r + 1)
    q = 1.0 - ps1
    denom1 = (attempts
              + (w10 - 1) / (2.0 * q)
              + w10 * sigma0 * _geometric(2.0 * sigma0, m) / q
              + 2.0 ** (m - 1) * w10 * sigma0 ** (m + 1) * _geometric(sigma0, r - m) / q
              + idle(rho1, pa1))
    sigma1 = 0.0 if math.isinf(denom1) else attempts / denom1
    return sigma0, sigma1


_UNIT = 1e-6  # jet exponents are in microseconds


def slot_pgf(ps: float, q: int, params: EdcaParams, t_tr: float) -> Jet:
    """One backoff slot: idle for a slot time, or frozen for a frame plus AIFS."""
    return ((1.0 - ps) * Jet.power(params.slot_time / _UNIT)
            + ps * Jet.power((t_tr + params.aifs(q)) / _UNIT))


def uniform_backoff_pgf(slot: Jet, window: int) -> Jet:
    """Backoff of a uniform number of slots in ``[0, window-1]``."""
    total, term = Jet(0.0), Jet(1.0)
    for _ in range(window):
        total = total + term
        term = term * slot
    return total * (1.0 / window)


def service_pgf(ps: float, sigma0: float, params: EdcaParams, frame: FrameParams, q: int) -> Jet:
    """Service-time PGF jet of AC ``q`` (exponent in microseconds)."""
    if not 0 <= ps < 1:
        raise EdcaError(f"busy probability {ps} outside [0, 1)")
    t_tr = transmission_time(frame)
    tr = Jet.power(t_tr / _UNIT)
    h = slot_pgf(ps, q, params, t_tr)
    if q == 0:
        return tr * uniform_backoff_pgf(h, params.w0)
    # AC1: stage r succeeds unless AC0 of the same vehicle wins the slot
    r_lim = params.retry_limit
    stages = [uniform_backoff_pgf(h, params.w1(r)) for r in range(r_lim + 1)]
    served, chain = Jet(0.0), Jet(1.0)
    for hh in range(r_lim + 1):
        chain = chain * stages[hh]
        served = served + (sigma0 ** hh) * chain
    return (1.0 - sigma0) * tr * served + (sigma0 ** (r_lim + 1)) * chain


def service_time_moments(ps: float, sigma0: float, params: EdcaParams, frame: FrameParams,
                         q: int) -> tuple[float, float]:
    """Mean and variance (s, s**2) of the MAC service time of AC ``q``."""
    p = service_pgf(ps, sigma0, params, frame, q)
    return p.mean * _UNIT, max(p.variance, 0.0) * _UNIT ** 2


@dataclass(frozen=True)
class ServiceState:
    """Fixed-point solution for one vehicle; index 0/1 is the access category."""

    n_tr: int
    ps: tuple[float, float]
    sigma: tuple[float, float]
    pa: tuple[float, float]
    rho: tuple[float, float]
    ts: tuple[float, float]
    ds: tuple[float, float]
    saturated: tuple[bool, bool] = (False, False)
    iterations: int = 0

    @property
    def c2(self) -> tuple[float, float]:
        return tuple(d / t ** 2 for d, t in zip(self.ds, self.ts))

    @property
    def mu(self) -> tuple[float, float]:
        return tuple(1.0 / t for t in self.ts)


_PS_MAX = 1.0 - 1e-12


def _solve_contention(n_tr, rho, pa, params, start=(0.0, 0.0), tol=1e-13, max_iter=10_000):
    """sigma/p_s consistency for fixed utilisations."""
    s0, s1 = start
    a = params.extra_aifs_slots

    def busy(x0, x1):
        # keep iterates off the p_s = 1 boundary, where sigma is undefined
        return tuple(min(p, _PS_MAX) for p in busy_probabilities(x0, x1, n_tr, a))

    for _ in range(max_iter):
        ps0, ps1 = busy(s0, s1)
        n0, n1 = transmission_probabilities(ps0, ps1, pa[0], pa[1], rho[0], rho[1], params)
        err = max(abs(n0 - s0), abs(n1 - s1))
        s0, s1 = n0, n1
        if err < tol:
            break
    else:
        # damped retry for oscillating contention loops
        for _ in range(max_iter):
            ps0, ps1 = busy(s0, s1)
            n0, n1 = transmission_probabilities(ps0, ps1, pa[0], pa[1], rho[0], rho[1], params)
            err = max(abs(n0 - s0), abs(n1 - s1))
            s0, s1 = 0.5 * (s0 + n0), 0.5 * (s1 + n1)
            if err < tol:
                break
        else:
            raise EdcaError(f"contention probabilities did not converge (residual {err:.3g})")
    return (s0, s1), busy(s0, s1)


def solve_fixed_point(n_tr: int, lam0: float, lam1: float, params: EdcaParams,
                      frame: FrameParams, eps: float = 1e-6, max_iter: int = 10_000,
                      rho_init: float = 0.0) -> ServiceState:
    """Iterate utilisation -> (p_s, sigma) -> service time -> utilisation.

    Uses plain substitution; if the residual fails to shrink for three
    consecutive rounds the update is damped by half.
    """
    pa = arrival_probabilities(lam0, lam1, params.slot_time)
    lam = (lam0, lam1)
    rho = (rho_init, rho_init)
    sigma = (0.0, 0.0)
    prev_err, stalls, damp = math.inf, 0, False
    last = None
    for it in range(1, max_iter + 1):
        sigma, ps = _solve_contention(n_tr, rho, pa, params, start=sigma)
        ts = tuple(service_time_moments(ps[q], sigma[0], params, frame, q)[0] for q in (0, 1))
        raw = tuple(lam[q] * ts[q] for q in (0, 1))
        new = tuple(min(v, 1.0) for v in raw)
        err = max(abs(new[q] - rho[q]) for q in (0, 1))
        last = (sigma, ps, new, ts, raw)
        if err < eps:
            rho = new
            break
        stalls = stalls + 1 if err >= prev_err else 0
        if stalls >= 3:
            damp = True
        prev_err = err
        rho = tuple(0.5 * (rho[q] + new[q]) for q in (0, 1)) if damp else new
    else:
        sigma, ps, new, ts, raw = last
        partial = ServiceState(n_tr, ps, sigma, pa, new, ts, (math.nan, math.nan))
        raise ConvergenceError(f"fixed point not reached after {max_iter} iterations",
                               partial, err)

    # final consistency pass at the converged utilisation
    sigma, ps = _solve_contention(n_tr, rho, pa, params, start=sigma)
    moments = [service_time_moments(ps[q], sigma[0], params, frame, q) for q in (0, 1)]
    ts = (moments[0][0], moments[1][0])
    ds = (moments[0][1], moments[1][1])
    saturated = tuple(lam[q] * ts[q] >= 1.0 for q in (0, 1))
    return ServiceState(n_tr, ps, sigma, pa, rho, ts, ds, saturated, it)
