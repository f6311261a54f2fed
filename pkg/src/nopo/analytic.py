"""Closed-form and quasi-exact steady-state results for the pump-eliminated oscillator.

Two independent routes to the stationary photon statistics are provided:

* the detailed-balance Fock distribution, built from the ratio
  ``rho_N / rho_{N-1} = (G/gamma_s) eps^2 / (gamma_p + G N)^2``, and
* the generalized-hypergeometric moment formula

      <a^+j a^j> = x^j j! Gamma(c)^2/Gamma(j+c)^2 1F2(j+1; j+c, j+c; x) / 1F2(1; c, c; x)

  with ``x = eps^2/(G gamma_s)`` and ``c = 1 + gamma_p/G``.

The linearized results around the above-threshold mean field (amplitude
squeezing and the normalized HZ1 witness of a coupled pair) live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AboveThresholdOnly, CutoffTooSmall, NoConvergence, SingularSystem
from .model import NopoParams

__all__ = [
    "FockDistribution",
    "LinearizedMoments",
    "fock_steady_diagonal",
    "default_cutoff",
    "hypergeometric_1f2",
    "log_hypergeometric_1f2",
    "analytic_moment",
    "analytic_stats",
    "g2_spontaneous",
    "linearized_q",
    "linearized_hz1",
    "linearized_hz1_closed_form",
    "SERIES_X_MAX",
]

TAIL_TOL = 1e-12
MAX_TERMS = 1_000_000
# above this x the moment formula switches to the detailed-balance recursion
SERIES_X_MAX = 1e3
_CHUNK = 4096


@dataclass(frozen=True)
class FockDistribution:
    """Stationary photon-number distribution ``probs[N]``, ``N = 0..cutoff``."""

    probs: np.ndarray

    @property
    def cutoff(self) -> int:
        return len(self.probs) - 1

    def factorial_moment(self, j: int) -> float:
        """``<N (N-1) ... (N-j+1)>``, i.e. ``<a^+j a^j>``."""
        n = np.arange(len(self.probs), dtype=float)
        w = np.ones_like(n)
        for k in range(j):
            w *= n - k
        return float(np.dot(w, self.probs))

    def mean(self) -> float:
        return self.factorial_moment(1)

    def variance(self) -> float:
        n = np.arange(len(self.probs), dtype=float)
        m = self.mean()
        return float(np.dot((n - m) ** 2, self.probs))

    def mandel_q(self) -> float:
        return self.variance() / self.mean() - 1.0


@dataclass(frozen=True)
class LinearizedMoments:
    """Steady Wigner fluctuation products of a coupled pair around the mean field."""

    sq: complex  # <da1^2>
    abs_sq: float  # <|da1|^2>
    cross: complex  # <da1 da2>
    cross_conj: complex  # <da1^* da2>


def _log_ratios(params: NopoParams, n: np.ndarray) -> np.ndarray:
    g, eps = params.big_g, params.epsilon
    return (math.log(g / params.gamma_s) + 2.0 * math.log(eps)
            - 2.0 * np.log(params.gamma_p + g * n))


def default_cutoff(params: NopoParams) -> int:
    """A cutoff that leaves the detailed-balance tail far below ``TAIL_TOL``."""
    g, eps = params.big_g, params.epsilon
    if g == 0 or eps == 0:
        return 8
    # photon number at which the ratio crosses one
    n_star = max(0.0, (eps * math.sqrt(g / params.gamma_s) - params.gamma_p) / g)
    return int(n_star + 40.0 * math.sqrt(n_star + 1.0) + 200)


def fock_steady_diagonal(params: NopoParams, cutoff: int | None = None) -> FockDistribution:
    """Detailed-balance stationary distribution of the pump-eliminated oscillator.

    Raises
    ------
    CutoffTooSmall
        If ``probs[cutoff] >= 1e-12``.
    """
    if cutoff is None:
        cutoff = default_cutoff(params)
    if params.epsilon == 0 or params.big_g == 0:
        probs = np.zeros(cutoff + 1)
        probs[0] = 1.0
        return FockDistribution(probs)
    n = np.arange(1, cutoff + 1, dtype=float)
    logp = np.concatenate(([0.0], np.cumsum(_log_ratios(params, n))))
    logp -= logp.max()
    w = np.exp(logp)
    probs = w / w.sum()
    if probs[-1] >= TAIL_TOL:
        raise CutoffTooSmall(
            f"tail mass {probs[-1]:.3e} at cutoff {cutoff} exceeds {TAIL_TOL:g}")
    return FockDistribution(probs)


def log_hypergeometric_1f2(a: float, b: float, c: float, x: float) -> tuple[float, float]:
    """``(log|F|, sign F)`` for ``F = 1F2(a; b, c; x)`` by direct series summation.

    The running sum is kept as ``s * exp(m)`` so that terms far outside the
    floating-point range are handled.  Summation stops once the terms are
    decreasing and the latest one is below ``1e-16`` of the running sum.
    """
    for v in (b, c):
        if v <= 0 and float(v).is_integer():
            raise ValueError(f"lower parameter {v} is a nonpositive integer")
    if x == 0:
        return 0.0, 1.0
    terminating = a <= 0 and float(a).is_integer()
    log_t, sgn_t = 0.0, 1.0  # current term, starting at k=0
    m, s = 0.0, 1.0
    k0 = 0
    log_abs_x, sgn_x = math.log(abs(x)), math.copysign(1.0, x)
    while k0 < MAX_TERMS:
        k = np.arange(k0, k0 + _CHUNK, dtype=float)
        num = a + k
        if terminating and np.any(num == 0):
            stop = int(np.argmax(num == 0))
            k, num = k[:stop], num[:stop]
            if len(k) == 0:
                break
        den = (b + k) * (c + k) * (k + 1.0)
        log_r = log_abs_x + np.log(np.abs(num)) - np.log(np.abs(den))
        sgn_r = sgn_x * np.sign(num) * np.sign(den)
        logs = log_t + np.cumsum(log_r)
        sgns = sgn_t * np.cumprod(sgn_r)
        top = max(m, float(logs.max()))
        s = s * math.exp(m - top) + float(np.sum(sgns * np.exp(logs - top)))
        m = top
        log_t, sgn_t = float(logs[-1]), float(sgns[-1])
        k0 += len(k)
        if terminating and len(k) < _CHUNK:
            break
        log_abs_s = m + math.log(abs(s)) if s != 0 else -math.inf
        if log_r[-1] < 0 and log_t < log_abs_s + math.log(1e-16):
            break
    else:
        raise NoConvergence(f"1F2({a}; {b}, {c}; {x}) needs more than {MAX_TERMS} terms")
    if s == 0:
        return -math.inf, 0.0
    return m + math.log(abs(s)), math.copysign(1.0, s)


def hypergeometric_1f2(a: float, b: float, c: float, x: float) -> float:
    """Generalized hypergeometric ``1F2(a; b, c; x)``; may overflow to ``inf``."""
    log_f, sgn = log_hypergeometric_1f2(a, b, c, x)
    if log_f > 709.78:
        return sgn * math.inf
    return sgn * math.exp(log_f)


def _moment_series(params: NopoParams, j: int) -> float:
    g = params.big_g
    x = params.epsilon**2 / (g * params.gamma_s)
    c = 1.0 + params.gamma_p / g
    log_pref = (j * math.log(x) + math.lgamma(j + 1) + 2 * math.lgamma(c)
                - 2 * math.lgamma(j + c))
    log_num, s_num = log_hypergeometric_1f2(j + 1, j + c, j + c, x)
    log_den, s_den = log_hypergeometric_1f2(1, c, c, x)
    return s_num * s_den * math.exp(log_pref + log_num - log_den)


def analytic_moment(params: NopoParams, order_j: int, method: str = "auto") -> float:
    """Normally ordered moment ``<a^+j a^j>`` of the stationary signal mode.

    ``method`` is ``"series"`` (hypergeometric ratio), ``"recursion"``
    (factorial moment of :func:`fock_steady_diagonal`) or ``"auto"``, which
    uses the series for ``x <= SERIES_X_MAX`` and the recursion beyond.
    """
    if order_j < 0:
        raise ValueError("order_j must be >= 0")
    if order_j == 0:
        return 1.0
    if params.epsilon == 0 or params.big_g == 0:
        return 0.0
    if method == "auto":
        x = params.epsilon**2 / (params.big_g * params.gamma_s)
        method = "series" if x <= SERIES_X_MAX else "recursion"
    if method == "series":
        return _moment_series(params, order_j)
    if method == "recursion":
        return fock_steady_diagonal(params).factorial_moment(order_j)
    raise ValueError(f"unknown method {method!r}")


def analytic_stats(params: NopoParams, method: str = "auto") -> dict:
    """Mean photon number, g2(0) and Mandel Q from the first two moments."""
    n = analytic_moment(params, 1, method)
    n2 = analytic_moment(params, 2, method)
    if n <= 0:
        return {"n_mean": n, "n2_factorial": n2, "g2": math.nan, "mandel_q": math.nan}
    return {"n_mean": n, "n2_factorial": n2, "g2": n2 / n**2, "mandel_q": n2 / n - n}


def g2_spontaneous(params: NopoParams) -> float:
    """Far-below-threshold ``g2(0) = 2 (gamma_p + G)^2 / (gamma_p + 2G)^2``."""
    gp, g = params.gamma_p, params.big_g
    return 2.0 * (gp + g) ** 2 / (gp + 2 * g) ** 2


def linearized_q(p: float) -> float:
    """Mandel Q of the linearized above-threshold amplitude noise."""
    if not p > 1:
        raise AboveThresholdOnly(f"linearized Q needs p > 1, got {p}")
    return -0.5 + 0.5 / (p - 1.0)


def linearized_hz1_closed_form(p: float, j: float) -> float:
    if not p > 1:
        raise AboveThresholdOnly(f"linearized HZ1 needs p > 1, got {p}")
    if j <= 0:
        raise ValueError("closed form needs j > 0")
    return (j - 2.0) / (4.0 * j) - 1.0 / (4.0 * (p - 1.0))


def linearized_hz1(p: float, j: float, delta: float = 1e-9):
    """Solve the 4x4 steady fluctuation system of a coupled pair.

    Returns ``(moments, hz1_normalized)`` with
    ``hz1_normalized = 1 - 2<|da1|^2> - 2<da1 da2>``.

    The matrix is singular at ``delta = 0`` (its null vector is
    ``(1, -1, 1, -1)``); the witness itself stays finite as ``delta -> 0``.
    """
    if not p > 1:
        raise AboveThresholdOnly(f"linearized HZ1 needs p > 1, got {p}")
    if j < 0 or delta < 0:
        raise ValueError("j and delta must be >= 0")
    a = 2.0 * (1.0 - 1.0 / p)
    ap = a + j + delta
    mat = np.array([
        [ap, a, -j, 0.0],
        [a, ap, 0.0, -j],
        [-j, 0.0, ap, a],
        [0.0, -j, a, ap],
    ])
    rhs = 0.5 * np.array([0.0, 2.0 + j, 0.0, -j])
    if delta == 0:
        raise SingularSystem(
            "fluctuation matrix is singular without a regularizer; pass delta > 0")
    sol = np.linalg.solve(mat, rhs)
    mom = LinearizedMoments(sq=complex(sol[0]), abs_sq=float(sol[1]),
                            cross=complex(sol[2]), cross_conj=complex(sol[3]))
    hz1n = 1.0 - 2.0 * sol[1] - 2.0 * sol[2]
    return mom, float(hz1n)
