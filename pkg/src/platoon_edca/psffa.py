"""Pointwise-stationary fluid-flow model of the two AC transmit queues.

The mean queue length obeys ``dL/dt = lam - mu * rho(L)`` where ``rho(L)``
inverts the stationary length/utilisation relation: Pollaczek-Khinchine for
the Poisson-fed AC0 queue (M/G/1), and a polynomial fit of the
Kramer/Langenbach-Belz approximation for the periodic AC1 queue (D/G/1).
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq


class SaturationError(ArithmeticError):
    """Utilisation at or above one: no stationary queue length."""


class KlbFitError(RuntimeError):
    pass


def pk_length(rho: float, c2: float) -> float:
    if not 0 <= rho < 1:
        raise SaturationError(f"rho={rho} has no finite M/G/1 queue length")
    return rho + rho * rho * (1.0 + c2) / (2.0 * (1.0 - rho))


def pk_invert(L: float, c2: float) -> float:
    """Utilisation giving M/G/1 mean length ``L``.

    Written as ``2L / (L + 1 + sqrt(L^2 + 2 c2 L + 1))``, the rationalised form
    of ``(L + 1 - sqrt(...)) / (1 - c2)``, so c2 = 1 needs no special case.
    """
    if L < 0:
        raise ValueError("queue length must be >= 0")
    return 2.0 * L / (L + 1.0 + math.sqrt(L * L + 2.0 * c2 * L + 1.0))


def klb_length(rho, c2: float):
    """KLB mean length of a D/G/1-type queue; vectorised over ``rho``."""
    rho = np.asarray(rho, dtype=float)
    if np.any((rho < 0) | (rho >= 1)):
        raise SaturationError("KLB length needs 0 <= rho < 1")
    if c2 <= 0:
        raise ValueError("c2 must be > 0")
    with np.errstate(divide="ignore"):
        expo = np.exp(-2.0 * (1.0 - rho) / (3.0 * rho * c2))
        out = rho + rho * rho * c2 / (2.0 * (1.0 - rho)) * expo
    out = np.where(rho == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def klb_invert_exact(L: float, c2: float) -> float:
    """Bisection-grade inversion of :func:`klb_length` (monotone in rho)."""
    if L <= 0:
        return 0.0
    hi = 1.0 - 1e-15
    if klb_length(hi, c2) <= L:
        return hi
    return brentq(lambda r: klb_length(r, c2) - L, 0.0, hi, xtol=1e-15, rtol=1e-14)


@dataclass(frozen=True)
class KlbFit:
    """Polynomial ``rho = sum a_k L^k`` fitted to the KLB relation for one c2.

    Internally the polynomial is held in the scaled variable ``L / l_max``;
    ``a_0`` is pinned to zero since an empty queue has zero utilisation.  Above
    ``l_max`` the exact KLB inversion takes over.
    """

    c2: float
    degree: int
    scaled_coef: np.ndarray  # coefficients of u**1 .. u**degree, u = L / l_max
    l_max: float
    rho_max: float
    max_residual: float

    @property
    def coefficients(self) -> np.ndarray:
        """a_0..a_n in powers of the unscaled length."""
        k = np.arange(1, self.degree + 1)
        return np.concatenate([[0.0], self.scaled_coef / self.l_max ** k])

    def __call__(self, L: float) -> float:
        if L <= 0:
            return 0.0
        if L > self.l_max:
            return klb_invert_exact(L, self.c2)
        u = L / self.l_max
        acc = 0.0
        for a in self._horner:
            acc = acc * u + a
        return min(max(acc * u, 0.0), self.rho_max)

    @property
    def _horner(self) -> tuple[float, ...]:
        cached = self.__dict__.get("_horner_cache")
        if cached is None:
            cached = tuple(float(a) for a in self.scaled_coef[::-1])
            object.__setattr__(self, "_horner_cache", cached)
        return cached


def fit_klb_polynomial(c2: float, degree: int = 6, rho_max: float = 0.9,
                       n_grid: int = 400, tol: float = 1e-3) -> KlbFit:
    """Least-squares fit of utilisation as a polynomial of KLB queue length.

    The grid mixes log- and linearly spaced utilisations in ``[1e-4, rho_max]``
    and residuals are weighted relative to ``rho`` so the light-load region,
    where the queues actually operate, is fitted to high relative accuracy.
    """
    if n_grid < 200:
        raise ValueError("fit grid needs at least 200 points")
    half = n_grid // 2
    rho = np.unique(np.concatenate([np.geomspace(1e-4, rho_max, half),
                                    np.linspace(1e-4, rho_max, n_grid - half)]))
    L = klb_length(rho, c2)
    l_max = float(L[-1])
    u = L / l_max
    basis = np.vander(u, degree + 1, increasing=True)[:, 1:]
    w = 1.0 / rho
    coef, *_ = np.linalg.lstsq(basis * w[:, None], rho * w, rcond=None)
    resid = np.abs(basis @ coef - rho)
    max_res = float(resid.max())
    if max_res >= tol:
        raise KlbFitError(f"KLB fit for c2={c2:.4g} has residual {max_res:.2e} >= {tol:g}; "
                          f"try a degree above {degree} or a smaller rho_max")
    dense = np.linspace(0.0, 1.0, 2001)
    vals = np.vander(dense, degree + 1, increasing=True)[:, 1:] @ coef
    if np.any(np.diff(vals) < -1e-12):
        raise KlbFitError(f"KLB fit for c2={c2:.4g} is not monotone; try another degree")
    return KlbFit(c2, degree, coef, l_max, rho_max, max_res)


class KlbFitCache:
    """Memoised KLB fits keyed by c2 rounded to ``quantum``.

    When the requested degree/range cannot meet the tolerance, higher degrees
    and then narrower utilisation ranges are tried; if none qualifies the
    exact numerical inversion is returned instead.
    """

    def __init__(self, degree: int = 6, rho_max: float = 0.9, quantum: float = 1e-3,
                 tol: float = 1e-3):
        self.degree = degree
        self.rho_max = rho_max
        self.quantum = quantum
        self.tol = tol
        self._fits: dict[int, KlbFit] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._fits)

    def get(self, c2: float) -> KlbFit:
        key = max(1, round(c2 / self.quantum))
        fit = self._fits.get(key)
        if fit is None:
            fit = self._build(key * self.quantum)
            with self._lock:
                fit = self._fits.setdefault(key, fit)
        return fit

    def _build(self, c2: float):
        ranges = [self.rho_max] + [r for r in (0.8, 0.7, 0.6, 0.5, 0.4, 0.3) if r < self.rho_max]
        for rho_max in ranges:
            for degree in (self.degree, self.degree + 2, self.degree + 4):
                try:
                    return fit_klb_polynomial(c2, degree, rho_max, tol=self.tol)
                except KlbFitError:
                    pass
        return ExactKlbInverter(c2)


@dataclass(frozen=True)
class ExactKlbInverter:
    c2: float

    def __call__(self, L: float) -> float:
        return klb_invert_exact(L, self.c2)


Inverter = Callable[[float], float]


def rk4_step(f: Callable[[float], float], y: float, dt: float) -> float:
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def psffa_rate(L: float, lam: float, mu: float, inverter: Inverter) -> float:
    return lam - mu * inverter(max(L, 0.0))


def psffa_step(L: float, lam: float, mu: float, inverter: Inverter, dt: float,
               substeps: int | None = None) -> tuple[float, float]:
    """Advance the fluid-flow equation over ``dt`` with frozen coefficients.

    The drain term relaxes on the time scale ``1 / mu``, far shorter than a
    typical ``dt``, and explicit RK4 is unstable once ``mu * h`` exceeds about
    2.8.  The interval is therefore split into ``substeps`` RK4 steps, by
    default enough to keep ``mu * h <= 1`` (``rho(L)`` has slope at most 1).

    Returns the new mean length (clamped at zero) and its rate of change.
    """
    if mu <= 0 or dt <= 0:
        raise ValueError("need mu > 0 and dt > 0")
    n = substeps if substeps is not None else max(1, math.ceil(mu * dt / _STABLE_MU_H))
    h = dt / n
    f = lambda y: psffa_rate(y, lam, mu, inverter)  # noqa: E731
    for _ in range(n):
        L = max(rk4_step(f, L, h), 0.0)
    return L, f(L)


_STABLE_MU_H = 1.0


def steady_state_length(lam: float, mu: float, c2: float, ac: int,
                        inverter: Inverter | None = None) -> float:
    """Stationary mean length at utilisation ``lam / mu``.

    With ``inverter`` given, solves ``mu * inverter(L) = lam`` so the result is
    an exact rest point of :func:`psffa_step` using that inverter.
    """
    rho = lam / mu
    if rho >= 1:
        raise SaturationError(f"lam/mu = {rho:.4g} >= 1: no steady state")
    if rho == 0:
        return 0.0
    L = pk_length(rho, c2) if ac == 0 else klb_length(rho, c2)
    if inverter is None:
        return float(L)
    g = lambda x: inverter(x) - rho  # noqa: E731
    hi = 2.0 * L + 1e-12
    while g(hi) < 0:
        hi *= 2.0
    return brentq(g, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
