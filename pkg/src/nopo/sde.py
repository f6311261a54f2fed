"""Euler-Maruyama (Ito) integrators for the phase-space formulations of the oscillator.

Four engines are provided:

``psde-full``
    positive-P with an explicit pump mode, variables
    ``(a_p, a_p+, a_s, a_s+)`` per node.
``tpsde``
    positive-P after adiabatic pump elimination, ``(a_s, a_s+)`` per node.
``twsde``
    truncated Wigner after pump elimination, one complex ``a_s`` per node.
``idler-psde``
    positive-P with explicit pump, signal and idler (solitary only) in either
    the ``standard`` or the ``pump-signal`` diffusion gauge.

Noise conventions: a complex increment has independent real and imaginary
parts of variance ``dt`` (``E|dW|^2 = 2 dt``); a real increment has variance
``dt``.  Positive-P engines carry no noise on the dissipative coupling
``sqrt(J)(a_1 - a_2)``; the Wigner engine adds the shared antisymmetric
increment ``+-sqrt(J/2) dW_J``.

The update rule of every engine lives in a single compiled function used both
by the one-step API (``step_*``) and by the per-trajectory integrators that
:func:`simulate` drives.  Each trajectory owns a counter-based Philox stream
keyed by ``(seed, trajectory_index)``, so ensembles are bit-reproducible for
any partitioning of trajectories across workers.
"""

from __future__ import annotations

import cmath
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numba as nb
import numpy as np

from .errors import ComplexSqrtBranch, Diverged, StepSizeWarning
from .model import NetworkConfig, NopoParams

__all__ = [
    "ENGINES",
    "TrajectoryState",
    "EffectiveGain",
    "Ensemble",
    "effective_gain",
    "step_psde_full",
    "step_tpsde",
    "step_twsde",
    "step_idler_psde",
    "step_pair",
    "simulate",
    "trajectory_rng",
    "DIVERGENCE_LIMIT",
]

ENGINES = ("psde-full", "tpsde", "twsde", "idler-psde")
DIVERGENCE_LIMIT = 1e12

# raw per-sample moment vector (complex); Wigner engines use a+ = conj(a)
K_N1, K_N1SQ, K_A1, K_A1D, K_N2, K_N2SQ, K_A2, K_A2D, K_CROSS, K_NN = range(10)
N_RAW = 10

# status codes returned by the kernels
OK, DIVERGED = 0, 1


@dataclass(frozen=True)
class TrajectoryState:
    """Phase-space amplitudes of one node of one stochastic sample.

    Unused amplitudes are ``None``.  In positive-P engines ``alpha_s`` and
    ``alpha_s_dag`` are independent variables; in the Wigner engine only
    ``alpha_s`` is used and its partner is its complex conjugate.
    """

    alpha_s: complex = 0j
    alpha_s_dag: Optional[complex] = 0j
    alpha_p: Optional[complex] = None
    alpha_p_dag: Optional[complex] = None
    alpha_i: Optional[complex] = None
    alpha_i_dag: Optional[complex] = None

    @classmethod
    def vacuum(cls, engine: str) -> "TrajectoryState":
        if engine == "psde-full":
            return cls(0j, 0j, 0j, 0j)
        if engine == "tpsde":
            return cls(0j, 0j)
        if engine == "twsde":
            return cls(0j, None)
        if engine == "idler-psde":
            return cls(0j, 0j, 0j, 0j, 0j, 0j)
        raise ValueError(f"unknown engine {engine!r}")

    @property
    def conj_s(self) -> complex:
        return np.conj(self.alpha_s) if self.alpha_s_dag is None else self.alpha_s_dag


@dataclass(frozen=True)
class EffectiveGain:
    """Pump-depleted gain coefficients of the truncated positive-P engine."""

    g_e: complex
    f_e: complex
    g_f: complex
    big_gamma_p: complex


def effective_gain(params: NopoParams, n_c: complex, epsilon: Optional[float] = None) -> EffectiveGain:
    """Gain coefficients at signal occupation ``n_c = alpha_s+ alpha_s``.

    ``Gamma_p = gamma_p + G n_c``, ``G_e = eps^2 G / Gamma_p^2``,
    ``F_e = 2 eps^2 G^2 / Gamma_p^3`` and ``G_f = eps^2 G gamma_p / Gamma_p^3``,
    which equals ``G_e - (F_e/2) n_c`` identically.
    """
    eps = params.epsilon if epsilon is None else epsilon
    gam = params.gamma_p + params.big_g * n_c
    g = params.big_g
    return EffectiveGain(
        g_e=eps**2 * g / gam**2,
        f_e=2 * eps**2 * g**2 / gam**3,
        g_f=eps**2 * g * params.gamma_p / gam**3,
        big_gamma_p=gam,
    )


# ---------------------------------------------------------------------------
# compiled update rules


@nb.njit(cache=True)
def _psde_full_update(ap, apd, a, ad, a_o, ad_o, eps, gp, gs, g, j, dt, dwc, dwcd):
    """One step of one node of the explicit-pump positive-P equations."""
    n_c = ad * a
    loss_p = gp + g * (1.0 + n_c)
    k = math.sqrt(g / 2.0)
    gain = g * apd * ap
    ap_new = ap + (-loss_p * ap + eps) * dt - k * a * dwc.conjugate()
    apd_new = apd + (-loss_p * apd + eps) * dt - k * ad * dwcd.conjugate()
    a_new = a + ((-gs + gain) * a - j * (a - a_o)) * dt + k * ap * (dwc + dwcd.conjugate())
    ad_new = ad + ((-gs + gain) * ad - j * (ad - ad_o)) * dt + k * apd * (dwcd + dwc.conjugate())
    return ap_new, apd_new, a_new, ad_new


@nb.njit(cache=True)
def _tpsde_update(a, ad, a_o, ad_o, eps, gp, gs, g, j, dt, dwc, dwr, dwrd):
    """One step of one node of the truncated positive-P equations.

    Returns the new pair and a flag set when ``Re(G_f) < 0``.
    """
    gam = gp + g * (ad * a)
    inv = 1.0 / gam
    e2g = eps * eps * g
    g_e = e2g * inv * inv
    # sqrt(G_f) and sqrt(F_e) share the factor Gamma_p^(-3/2)
    r32 = inv * cmath.sqrt(inv)
    sg = math.sqrt(e2g * gp) * r32
    sf = math.sqrt(2.0 * e2g * g) * r32
    g_f_re = (e2g * gp * inv * inv * inv).real
    drift = -gs + g_e
    a_new = a + (drift * a - j * (a - a_o)) * dt + sg * dwc + 1j * sf * a * dwr
    ad_new = ad + (drift * ad - j * (ad - ad_o)) * dt + sg * dwc.conjugate() - 1j * sf * ad * dwrd
    return a_new, ad_new, g_f_re < 0.0


@nb.njit(cache=True)
def _twsde_update(a, a_o, eps, gp, gs, g, j, dt, dwc, dwj):
    """One step of one node of the truncated Wigner equation.

    ``dwj`` is the shared coupling increment already carrying this node's sign.
    """
    gam = gp + g * (a.real * a.real + a.imag * a.imag)
    g_e = eps * eps * g / (gam * gam)
    return (a + ((-gs + g_e) * a - j * (a - a_o)) * dt
            + math.sqrt(0.5 * gs + 0.5 * g_e) * dwc + math.sqrt(0.5 * j) * dwj)


@nb.njit(cache=True)
def _idler_update(ap, apd, a, ad, ai, aid, eps, gp, gs, gi, kap, g, dt, dwc, dwcd, gauge):
    """One step of the explicit-idler positive-P equations.

    ``gauge`` 0 is the standard factorization, 1 the pump-signal gauge.
    """
    ap_new = ap + (-gp * ap + eps - kap * a * ai) * dt
    apd_new = apd + (-gp * apd + eps - kap * ad * aid) * dt
    da = (-gs * a + kap * aid * ap) * dt
    dai = (-gi * ai + kap * ad * ap) * dt
    dad = (-gs * ad + kap * ai * apd) * dt
    daid = (-gi * aid + kap * a * apd) * dt
    if gauge == 0:
        s = cmath.sqrt(0.5 * kap * ap)
        sd = cmath.sqrt(0.5 * kap * apd)
        da += s * dwc
        dai += s * dwc.conjugate()
        dad += sd * dwcd
        daid += sd * dwcd.conjugate()
    else:
        k = math.sqrt(0.5 * g)
        ki = math.sqrt(0.5 * gi)
        da += k * ap * dwc
        dai += ki * dwc.conjugate()
        dad += k * apd * dwcd
        daid += ki * dwcd.conjugate()
    return ap_new, apd_new, a + da, ad + dad, ai + dai, aid + daid


@nb.njit(cache=True)
def _cnormal(rng, sq):
    return complex(rng.standard_normal() * sq, rng.standard_normal() * sq)


@nb.njit(cache=True)
def _bad(z):
    return not (abs(z.real) < DIVERGENCE_LIMIT and abs(z.imag) < DIVERGENCE_LIMIT)


@nb.njit(cache=True)
def _record(out, row, a1, a1d, a2, a2d, pair):
    n1 = a1d * a1
    out[row, K_N1] += n1
    out[row, K_N1SQ] += n1 * n1
    out[row, K_A1] += a1
    out[row, K_A1D] += a1d
    if pair:
        n2 = a2d * a2
        out[row, K_N2] += n2
        out[row, K_N2SQ] += n2 * n2
        out[row, K_A2] += a2
        out[row, K_A2D] += a2d
        out[row, K_CROSS] += a1d * a2
        out[row, K_NN] += n1 * n2


@nb.njit(cache=True)
def _pump_at(eps_target, k, dt, ramp_time):
    t = k * dt
    if t >= ramp_time:
        return eps_target
    return eps_target * math.sqrt(t / ramp_time)


@nb.njit(cache=True)
def _sample_flags(k, avg_start, stride, ck, ck_pos):
    take = k >= avg_start and (k - avg_start) % stride == 0
    at_ck = ck_pos < ck.shape[0] and ck[ck_pos] == k
    return take, at_ck


@nb.njit(cache=True)
def _traj_tpsde(rng, init, pair, eps_t, gp, gs, g, j, dt, n_steps, ramp_time,
                avg_start, stride, ck, noise, acc, snaps):
    a1, a1d, a2, a2d = init[0], init[1], init[2], init[3]
    sq = math.sqrt(dt) * noise
    ck_pos = 0
    n_samp = 0
    n_neg = 0
    for k in range(n_steps + 1):
        take, at_ck = _sample_flags(k, avg_start, stride, ck, ck_pos)
        if take:
            _record(acc, 0, a1, a1d, a2, a2d, pair)
            n_samp += 1
        if at_ck:
            _record(snaps, ck_pos, a1, a1d, a2, a2d, pair)
            ck_pos += 1
        if k == n_steps:
            break
        eps = _pump_at(eps_t, k, dt, ramp_time)
        w1 = _cnormal(rng, sq)
        r1 = rng.standard_normal() * sq
        r1d = rng.standard_normal() * sq
        if pair:
            w2 = _cnormal(rng, sq)
            r2 = rng.standard_normal() * sq
            r2d = rng.standard_normal() * sq
            b1, b1d, f1 = _tpsde_update(a1, a1d, a2, a2d, eps, gp, gs, g, j, dt, w1, r1, r1d)
            b2, b2d, f2 = _tpsde_update(a2, a2d, a1, a1d, eps, gp, gs, g, j, dt, w2, r2, r2d)
            a1, a1d, a2, a2d = b1, b1d, b2, b2d
            n_neg += f1 + f2
        else:
            a1, a1d, f1 = _tpsde_update(a1, a1d, a1, a1d, eps, gp, gs, g, 0.0, dt, w1, r1, r1d)
            n_neg += f1
        if _bad(a1) or _bad(a1d) or _bad(a2) or _bad(a2d):
            return DIVERGED, n_samp, n_neg
    return OK, n_samp, n_neg


@nb.njit(cache=True)
def _traj_twsde(rng, init, pair, eps_t, gp, gs, g, j, dt, n_steps, ramp_time,
                avg_start, stride, ck, noise, acc, snaps):
    # symmetric-ordered vacuum fluctuations on top of the requested amplitudes
    a1 = init[0] + _cnormal(rng, 0.5 * noise)
    a2 = init[2] + _cnormal(rng, 0.5 * noise) if pair else 0j
    sq = math.sqrt(dt) * noise
    ck_pos = 0
    n_samp = 0
    for k in range(n_steps + 1):
        take, at_ck = _sample_flags(k, avg_start, stride, ck, ck_pos)
        if take:
            _record(acc, 0, a1, a1.conjugate(), a2, a2.conjugate(), pair)
            n_samp += 1
        if at_ck:
            _record(snaps, ck_pos, a1, a1.conjugate(), a2, a2.conjugate(), pair)
            ck_pos += 1
        if k == n_steps:
            break
        eps = _pump_at(eps_t, k, dt, ramp_time)
        w1 = _cnormal(rng, sq)
        if pair:
            w2 = _cnormal(rng, sq)
            wj = _cnormal(rng, sq)
            b1 = _twsde_update(a1, a2, eps, gp, gs, g, j, dt, w1, wj)
            b2 = _twsde_update(a2, a1, eps, gp, gs, g, j, dt, w2, -wj)
            a1, a2 = b1, b2
        else:
            a1 = _twsde_update(a1, a1, eps, gp, gs, g, 0.0, dt, w1, 0j)
        if _bad(a1) or _bad(a2):
            return DIVERGED, n_samp, 0
    return OK, n_samp, 0


@nb.njit(cache=True)
def _traj_psde_full(rng, init, pair, eps_t, gp, gs, g, j, dt, n_steps, ramp_time,
                    avg_start, stride, ck, noise, acc, snaps):
    # init layout: a_s1, a_s1+, a_s2, a_s2+, a_p1, a_p1+, a_p2, a_p2+
    a1, a1d, a2, a2d = init[0], init[1], init[2], init[3]
    p1, p1d, p2, p2d = init[4], init[5], init[6], init[7]
    sq = math.sqrt(dt) * noise
    ck_pos = 0
    n_samp = 0
    for k in range(n_steps + 1):
        take, at_ck = _sample_flags(k, avg_start, stride, ck, ck_pos)
        if take:
            _record(acc, 0, a1, a1d, a2, a2d, pair)
            n_samp += 1
        if at_ck:
            _record(snaps, ck_pos, a1, a1d, a2, a2d, pair)
            ck_pos += 1
        if k == n_steps:
            break
        eps = _pump_at(eps_t, k, dt, ramp_time)
        w1 = _cnormal(rng, sq)
        w1d = _cnormal(rng, sq)
        if pair:
            w2 = _cnormal(rng, sq)
            w2d = _cnormal(rng, sq)
            q1, q1d, b1, b1d = _psde_full_update(p1, p1d, a1, a1d, a2, a2d, eps, gp, gs, g, j, dt, w1, w1d)
            q2, q2d, b2, b2d = _psde_full_update(p2, p2d, a2, a2d, a1, a1d, eps, gp, gs, g, j, dt, w2, w2d)
            p1, p1d, a1, a1d, p2, p2d, a2, a2d = q1, q1d, b1, b1d, q2, q2d, b2, b2d
        else:
            p1, p1d, a1, a1d = _psde_full_update(p1, p1d, a1, a1d, a1, a1d, eps, gp, gs, g, 0.0, dt, w1, w1d)
        if (_bad(a1) or _bad(a1d) or _bad(a2) or _bad(a2d) or _bad(p1) or _bad(p1d)
                or _bad(p2) or _bad(p2d)):
            return DIVERGED, n_samp, 0
    return OK, n_samp, 0


@nb.njit(cache=True)
def _traj_idler(rng, init, gauge, eps_t, gp, gs, gi, kap, g, dt, n_steps, ramp_time,
                avg_start, stride, ck, noise, acc, snaps):
    # init layout: a_s, a_s+, a_p, a_p+, a_i, a_i+
    a, ad, ap, apd, ai, aid = init[0], init[1], init[2], init[3], init[4], init[5]
    sq = math.sqrt(dt) * noise
    ck_pos = 0
    n_samp = 0
    for k in range(n_steps + 1):
        take, at_ck = _sample_flags(k, avg_start, stride, ck, ck_pos)
        if take:
            _record(acc, 0, a, ad, 0j, 0j, False)
            n_samp += 1
        if at_ck:
            _record(snaps, ck_pos, a, ad, 0j, 0j, False)
            ck_pos += 1
        if k == n_steps:
            break
        eps = _pump_at(eps_t, k, dt, ramp_time)
        w = _cnormal(rng, sq)
        wd = _cnormal(rng, sq)
        ap, apd, a, ad, ai, aid = _idler_update(ap, apd, a, ad, ai, aid, eps, gp, gs, gi,
                                                kap, g, dt, w, wd, gauge)
        if _bad(a) or _bad(ad) or _bad(ap) or _bad(apd) or _bad(ai) or _bad(aid):
            return DIVERGED, n_samp, 0
    return OK, n_samp, 0


# ---------------------------------------------------------------------------
# one-step API


def _draw_c(rng, dt):
    s = math.sqrt(dt)
    return complex(s * rng.standard_normal(), s * rng.standard_normal())


def _draw_r(rng, dt):
    return math.sqrt(dt) * rng.standard_normal()


def _check(values):
    if any(not np.isfinite(v) or abs(v.real) >= DIVERGENCE_LIMIT or abs(v.imag) >= DIVERGENCE_LIMIT
           for v in values):
        raise Diverged("amplitude exceeded the divergence limit")


def step_psde_full(state, params, coupling_j, partner, dt, rng=None, *, noise=None,
                   epsilon=None):
    """One Euler-Maruyama step of the explicit-pump positive-P equations.

    ``partner`` is the other node's state (``None`` for a solitary node).
    ``noise`` may be ``{"dwc": ..., "dwcd": ...}`` to inject increments, or
    ``False`` to switch the noise off.
    """
    if dt * params.gamma_p > 0.05:
        warnings.warn(f"dt*gamma_p = {dt * params.gamma_p:.3g} > 0.05", StepSizeWarning,
                      stacklevel=2)
    if noise is False:
        dwc = dwcd = 0j
    elif noise is None:
        dwc, dwcd = _draw_c(rng, dt), _draw_c(rng, dt)
    else:
        dwc, dwcd = noise["dwc"], noise["dwcd"]
    other = partner if partner is not None else state
    j = coupling_j if partner is not None else 0.0
    eps = params.epsilon if epsilon is None else epsilon
    out = _psde_full_update(complex(state.alpha_p), complex(state.alpha_p_dag),
                            complex(state.alpha_s), complex(state.alpha_s_dag),
                            complex(other.alpha_s), complex(other.alpha_s_dag),
                            eps, params.gamma_p, params.gamma_s, params.big_g, j, dt,
                            complex(dwc), complex(dwcd))
    _check(out)
    return replace(state, alpha_p=out[0], alpha_p_dag=out[1], alpha_s=out[2], alpha_s_dag=out[3])


def step_tpsde(state, params, coupling_j, partner, dt, rng=None, *, noise=None, epsilon=None,
               raise_on_negative_floor=False):
    """One step of the truncated positive-P equations.

    ``noise`` may be ``{"dwc", "dwr", "dwrd"}`` or ``False``.  The returned
    state carries no flag; pass ``raise_on_negative_floor=True`` to turn a
    negative ``Re(G_f)`` into :class:`~nopo.errors.NegativeGainFloor`.
    """
    from .errors import NegativeGainFloor
    if noise is False:
        dwc, dwr, dwrd = 0j, 0.0, 0.0
    elif noise is None:
        dwc, dwr, dwrd = _draw_c(rng, dt), _draw_r(rng, dt), _draw_r(rng, dt)
    else:
        dwc, dwr, dwrd = noise["dwc"], noise["dwr"], noise["dwrd"]
    other = partner if partner is not None else state
    j = coupling_j if partner is not None else 0.0
    eps = params.epsilon if epsilon is None else epsilon
    a, ad, neg = _tpsde_update(complex(state.alpha_s), complex(state.alpha_s_dag),
                               complex(other.alpha_s), complex(other.alpha_s_dag),
                               eps, params.gamma_p, params.gamma_s, params.big_g, j, dt,
                               complex(dwc), float(dwr), float(dwrd))
    if neg and raise_on_negative_floor:
        raise NegativeGainFloor("Re(G_f) < 0")
    _check((a, ad))
    return replace(state, alpha_s=a, alpha_s_dag=ad)


def step_twsde(state, params, coupling_j, partner, dt, rng=None, *, noise=None, epsilon=None,
               node_sign=1):
    """One step of the truncated Wigner equation.

    For a pair the shared coupling increment must be the same for both nodes
    with opposite signs; use :func:`step_pair` or pass
    ``noise={"dwc": ..., "dwj": ...}`` and ``node_sign=+-1`` explicitly.
    """
    if noise is False:
        dwc, dwj = 0j, 0j
    elif noise is None:
        dwc = _draw_c(rng, dt)
        dwj = _draw_c(rng, dt) if partner is not None else 0j
    else:
        dwc, dwj = noise["dwc"], noise.get("dwj", 0j)
    other = partner if partner is not None else state
    j = coupling_j if partner is not None else 0.0
    eps = params.epsilon if epsilon is None else epsilon
    a = _twsde_update(complex(state.alpha_s), complex(other.alpha_s), eps, params.gamma_p,
                      params.gamma_s, params.big_g, j, dt, complex(dwc), node_sign * complex(dwj))
    _check((a,))
    return replace(state, alpha_s=a)


def step_idler_psde(state, params, dt, rng=None, gauge="standard", *, noise=None, epsilon=None):
    """One step of the explicit-idler positive-P equations (solitary only)."""
    if params.kappa is None or params.gamma_i is None:
        raise ValueError("idler-psde needs kappa and gamma_i")
    if gauge not in ("standard", "pump-signal"):
        raise ValueError(f"unknown gauge {gauge!r}")
    if noise is False:
        dwc = dwcd = 0j
    elif noise is None:
        dwc, dwcd = _draw_c(rng, dt), _draw_c(rng, dt)
    else:
        dwc, dwcd = noise["dwc"], noise["dwcd"]
    eps = params.epsilon if epsilon is None else epsilon
    out = _idler_update(complex(state.alpha_p), complex(state.alpha_p_dag),
                        complex(state.alpha_s), complex(state.alpha_s_dag),
                        complex(state.alpha_i), complex(state.alpha_i_dag),
                        eps, params.gamma_p, params.gamma_s, params.gamma_i, params.kappa,
                        params.big_g, dt, complex(dwc), complex(dwcd),
                        0 if gauge == "standard" else 1)
    _check(out)
    return replace(state, alpha_p=out[0], alpha_p_dag=out[1], alpha_s=out[2],
                   alpha_s_dag=out[3], alpha_i=out[4], alpha_i_dag=out[5])


def step_pair(engine, states, network: NetworkConfig, dt, rng=None, *, noise=True):
    """Advance both nodes of a pair by one step from the same old states."""
    s1, s2 = states
    p1, p2 = network.nodes
    j = network.coupling_j
    if engine == "psde-full":
        kw = {} if noise else {"noise": False}
        return (step_psde_full(s1, p1, j, s2, dt, rng, **kw),
                step_psde_full(s2, p2, j, s1, dt, rng, **kw))
    if engine == "tpsde":
        kw = {} if noise else {"noise": False}
        return (step_tpsde(s1, p1, j, s2, dt, rng, **kw),
                step_tpsde(s2, p2, j, s1, dt, rng, **kw))
    if engine == "twsde":
        if noise:
            n1 = {"dwc": _draw_c(rng, dt)}
            n2 = {"dwc": _draw_c(rng, dt)}
            n1["dwj"] = n2["dwj"] = _draw_c(rng, dt)
        else:
            n1 = n2 = False
        return (step_twsde(s1, p1, j, s2, dt, noise=n1, node_sign=1),
                step_twsde(s2, p2, j, s1, dt, noise=n2, node_sign=-1))
    raise ValueError(f"engine {engine!r} has no pair form")


# ---------------------------------------------------------------------------
# ensembles


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream of trajectory ``index`` under master ``seed``."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index) & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Ensemble:
    """Per-trajectory raw moments of a stochastic run.

    ``window`` holds, for every trajectory, the time average over the
    averaging window of the raw sample vector; ``snapshots`` holds the
    instantaneous vector at each checkpoint.  Raw vector entries are
    ``n1, n1^2, a1, a1+, n2, n2^2, a2, a2+, a1+ a2, n1 n2`` with
    ``n = a+ a`` (``|a|^2`` for Wigner ensembles).
    """

    engine: str
    representation: str  # "positive-p" | "wigner"
    n_nodes: int
    window: np.ndarray
    snapshots: np.ndarray
    checkpoint_times: np.ndarray
    n_diverged: int = 0
    n_negative_floor: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return self.window.shape[0]


def _initial_vector(engine, network, init):
    """Flatten an optional per-node TrajectoryState override into kernel layout."""
    states = init if init is not None else [TrajectoryState.vacuum(engine)] * network.n_nodes
    if isinstance(states, TrajectoryState):
        states = [states]
    s1 = states[0]
    s2 = states[1] if len(states) > 1 else TrajectoryState.vacuum(engine)
    c = lambda v: 0j if v is None else complex(v)
    if engine == "idler-psde":
        return np.array([c(s1.alpha_s), c(s1.alpha_s_dag), c(s1.alpha_p), c(s1.alpha_p_dag),
                         c(s1.alpha_i), c(s1.alpha_i_dag)])
    v = np.array([c(s1.alpha_s), c(s1.conj_s), c(s2.alpha_s), c(s2.conj_s),
                  c(s1.alpha_p), c(s1.alpha_p_dag), c(s2.alpha_p), c(s2.alpha_p_dag)])
    return v


def _run_chunk(args):
    (engine, network, seed, start, stop, dt, n_steps, ramp_time, avg_start, stride, ck,
     noise, init, gauge) = args
    p = network.nodes[0]
    pair = network.n_nodes == 2
    if pair and network.nodes[0] != network.nodes[1]:
        raise ValueError("coupled engines assume identical nodes")
    j = float(network.coupling_j)
    n = stop - start
    window = np.zeros((n, N_RAW), dtype=np.complex128)
    snaps = np.zeros((n, len(ck), N_RAW), dtype=np.complex128)
    status = np.zeros(n, dtype=np.int64)
    neg = np.zeros(n, dtype=np.int64)
    acc = np.zeros((1, N_RAW), dtype=np.complex128)
    x0 = _initial_vector(engine, network, init)
    for i in range(n):
        rng = trajectory_rng(seed, start + i)
        acc[:] = 0
        sn = snaps[i]
        if engine == "tpsde":
            st, ns, nn = _traj_tpsde(rng, x0, pair, p.epsilon, p.gamma_p, p.gamma_s, p.big_g, j,
                                     dt, n_steps, ramp_time, avg_start, stride, ck, noise, acc, sn)
        elif engine == "twsde":
            st, ns, nn = _traj_twsde(rng, x0, pair, p.epsilon, p.gamma_p, p.gamma_s, p.big_g, j,
                                     dt, n_steps, ramp_time, avg_start, stride, ck, noise, acc, sn)
        elif engine == "psde-full":
            st, ns, nn = _traj_psde_full(rng, x0, pair, p.epsilon, p.gamma_p, p.gamma_s, p.big_g,
                                         j, dt, n_steps, ramp_time, avg_start, stride, ck, noise,
                                         acc, sn)
        elif engine == "idler-psde":
            st, ns, nn = _traj_idler(rng, x0, gauge, p.epsilon, p.gamma_p, p.gamma_s, p.gamma_i,
                                     p.kappa, p.big_g, dt, n_steps, ramp_time, avg_start, stride,
                                     ck, noise, acc, sn)
        else:
            raise ValueError(f"unknown engine {engine!r}")
        status[i] = st
        neg[i] = nn
        if ns > 0:
            window[i] = acc[0] / ns
    return window, snaps, status, neg


def default_workers() -> int:
    return max(1, int(os.environ.get("NOPO_WORKERS", "1")))


def simulate(engine: str, network: NetworkConfig, *, dt: float, ramp_time: float,
             average_window: float, n_traj: int, seed: int, checkpoint_times=(),
             sample_interval: float = 0.01, workers: Optional[int] = None, chunk_size: int = 256,
             noise: bool = True, init=None, gauge: str = "standard",
             abort_on_divergence: bool = True) -> Ensemble:
    """Integrate ``n_traj`` independent trajectories from vacuum.

    The drive follows ``eps min(1, sqrt(t/ramp_time))``.  Raw moments are
    time-averaged over ``[ramp_time, ramp_time + average_window]`` sampled
    every ``sample_interval``; instantaneous values are kept at
    ``checkpoint_times``.

    Results depend only on ``seed`` and the trajectory indices, never on
    ``workers`` or ``chunk_size``.

    Any divergent trajectory raises :class:`~nopo.errors.Diverged` unless
    ``abort_on_divergence`` is false, in which case divergent trajectories
    are removed from the ensemble and counted in ``n_diverged``.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if engine == "idler-psde" and network.n_nodes != 1:
        raise ValueError("idler-psde is solitary only")
    params = network.nodes[0]
    if engine in ("psde-full", "idler-psde"):
        fastest = params.gamma_p if engine == "psde-full" else max(params.gamma_p, params.gamma_i)
        if dt * fastest > 0.05:
            warnings.warn(f"dt * rate = {dt * fastest:.3g} exceeds 0.05", StepSizeWarning,
                          stacklevel=2)
    if engine == "idler-psde" and gauge == "standard":
        warnings.warn("standard gauge uses the principal branch of sqrt(kappa a_p / 2)",
                      ComplexSqrtBranch, stacklevel=2)
    total = ramp_time + average_window
    n_steps = int(round(total / dt))
    avg_start = int(round(ramp_time / dt))
    stride = max(1, int(round(sample_interval / dt)))
    ck_times = np.asarray(sorted(checkpoint_times), dtype=float)
    ck = np.asarray(np.round(ck_times / dt), dtype=np.int64)
    if np.any(ck > n_steps) or np.any(ck < 0):
        raise ValueError("checkpoint outside the simulated interval")
    gauge_id = 0 if gauge == "standard" else 1
    nscale = 1.0 if noise else 0.0
    workers = default_workers() if workers is None else workers
    chunks = [(engine, network, seed, s, min(s + chunk_size, n_traj), dt, n_steps,
               float(ramp_time), avg_start, stride, ck, nscale, init, gauge_id)
              for s in range(0, n_traj, chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        parts = [_run_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, chunks))
    window = np.concatenate([p[0] for p in parts])
    snaps = np.concatenate([p[1] for p in parts])
    status = np.concatenate([p[2] for p in parts])
    neg = np.concatenate([p[3] for p in parts])
    n_div = int(np.sum(status == DIVERGED))
    if n_div and not abort_on_divergence:
        # rows of diverged trajectories are incomplete; they are dropped and counted
        keep = status != DIVERGED
        window, snaps, neg = window[keep], snaps[keep], neg[keep]
    ens = Ensemble(
        engine=engine,
        representation="wigner" if engine == "twsde" else "positive-p",
        n_nodes=network.n_nodes,
        window=window,
        snapshots=snaps,
        checkpoint_times=ck * dt,
        n_diverged=n_div,
        n_negative_floor=int(np.sum(neg > 0)),
        metadata={"dt": dt, "n_steps": n_steps, "avg_start": avg_start, "stride": stride,
                  "seed": seed, "gauge": gauge if engine == "idler-psde" else None},
    )
    if ens.n_diverged and abort_on_divergence:
        raise Diverged(f"{ens.n_diverged} of {n_traj} trajectories diverged",
                       count=ens.n_diverged, partial=[ens])
    return ens
