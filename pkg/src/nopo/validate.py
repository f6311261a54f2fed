"""Reduced-scale cross-engine checks behind ``nopo validate``.

Each check returns ``(name, passed, detail)``.  They take under two minutes
on one core and exercise the same comparisons as the full-scale
benchmarks with smaller ensembles, cutoffs and horizons.
"""

from __future__ import annotations

import math

from . import analytic, fock
from .model import NetworkConfig, NopoParams
from .observables import derived_stats, moments_from_ensemble
from .sde import simulate

__all__ = ["run_checks", "check_analytic", "check_fock_vs_psde", "check_fock_vs_direct"]


def _schedule(eps, ramp):
    return lambda t: eps * math.sqrt(min(1.0, max(t, 0.0) / ramp))


def check_analytic():
    """Hypergeometric series against the detailed-balance recursion."""
    worst = 0.0
    for p in (0.5, 1.0, 2.0):
        par = NopoParams.from_pump(50.0, 0.05, p)
        for j in (1, 2):
            a = analytic.analytic_moment(par, j, "series")
            b = analytic.analytic_moment(par, j, "recursion")
            worst = max(worst, abs(a - b) / abs(b))
    return "analytic series vs recursion", worst <= 1e-8, f"max rel err {worst:.2e}"


def check_fock_vs_psde(seed=0, n_traj=2000):
    """Explicit-pump positive-P pair against the pump-eliminated Fock pair.

    gamma_p = 100, G = 5, j = 4 at p = 2 (square-root ramp over 1/gamma_s),
    compared at t = 2.5 and 3 with a cutoff of 50.  The comparison avoids
    the growth phase, where the explicit pump lags the ramp by about
    1/gamma_p and the eliminated model leads by a few percent.
    """
    par = NopoParams.from_pump(100.0, 5.0, 2.0)
    net = NetworkConfig.pair(par, 4.0)
    ck = [2.5, 3.0]
    ens = simulate("psde-full", net, dt=1e-4, ramp_time=1.0, average_window=2.0, n_traj=n_traj,
                   seed=seed, checkpoint_times=ck, abort_on_divergence=False)
    evo = fock.evolve(fock.DensityMatrixPair.vacuum(50), lambda s, e: fock.rhs_pair(s, net, e),
                      5e-4, 3.0, _schedule(par.epsilon, 1.0), snapshot_times=ck)
    worst = 0.0
    for i, rec in enumerate(evo.records):
        s = derived_stats(moments_from_ensemble(ens, window=i))
        f = derived_stats(rec.moments)
        for key in ("n_mean", "hz1_normalized"):
            worst = max(worst, abs(s[key] - f[key]) / s[key + "_err"])
    ok = worst <= 3.0 and ens.n_diverged == 0
    return ("fock pair vs psde-full pair", ok,
            f"max deviation {worst:.2f} sigma, {ens.n_diverged} diverged")


def check_fock_vs_direct():
    """Pump-eliminated pair against the explicit pump-signal master equation.

    gamma_p = 50, G = 400, j = 9, p = 25 with cutoffs N_p = 2, N_s = 6 over
    a short horizon; the relative difference must stay at the percent level.
    """
    par = NopoParams.from_pump(50.0, 400.0, 25.0)
    net = NetworkConfig.pair(par, 9.0)
    ramp, t_end, dt = 0.05, 0.1, 5e-5
    ck = [0.1]
    sch = _schedule(par.epsilon, ramp)
    a = fock.evolve(fock.DensityMatrixPair.vacuum(6), lambda s, e: fock.rhs_pair(s, net, e),
                    dt, t_end, sch, snapshot_times=ck)
    b = fock.evolve(fock.DensityMatrixDirect.vacuum(2, 6), lambda s, e: fock.rhs_direct(s, net, e),
                    dt, t_end, sch, snapshot_times=ck)
    na = a.records[-1].moments.n_mean
    nb = b.records[-1].moments.n_mean
    rel = abs(na - nb) / nb
    return "fock pair vs direct pump-signal", rel <= 0.05, f"n {na:.5f} vs {nb:.5f} (rel {rel:.1e})"


def run_checks(seed=0):
    out = [check_analytic()]
    out.append(check_fock_vs_psde(seed=seed))
    out.append(check_fock_vs_direct())
    return out
