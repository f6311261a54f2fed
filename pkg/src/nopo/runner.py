"""Run plans, steady-state records and parameter sweeps.

A :class:`RunPlan` names an engine, a network and the protocol (ramp, then a
fixed averaging window).  :func:`run` turns it into a list of
:class:`ObservableRecord`; :func:`sweep` repeats it along the pump or the
coupling axis with per-point seeds derived from the master seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import fock
from .errors import ConfigError, CutoffOverflow, Diverged, DivisionByZero, NopoError, TraceDrift
from .model import NetworkConfig
from .observables import derived_stats, moments_from_ensemble
from .sde import ENGINES as SDE_ENGINES
from .sde import simulate

__all__ = [
    "ENGINES",
    "FOCK_ENGINES",
    "RunPlan",
    "ObservableRecord",
    "SweepRow",
    "run",
    "sweep",
    "point_seed",
    "step_convergence",
]

FOCK_ENGINES = ("fock-single", "fock-pair", "fock-direct")
ENGINES = SDE_ENGINES + FOCK_ENGINES

# protocol defaults, in units of 1/gamma_s
STOCHASTIC_DEFAULTS = {"ramp_time": 100.0, "average_window": 100.0, "n_traj": 90_000}
FOCK_DEFAULTS = {"ramp_time": 10.0, "average_window": 30.0}
DEFAULT_DT = {
    "psde-full": 1e-5,
    "idler-psde": 1e-5,
    "tpsde": 1e-4,
    "twsde": 1e-4,
    "fock-single": 2e-4,
    "fock-pair": 2e-4,
    "fock-direct": 2e-5,
}

STAT_KEYS = ("n_mean", "g2", "mandel_q", "hz1", "hz1_normalized")


@dataclass(frozen=True)
class RunPlan:
    """Everything needed to reproduce one run.

    Parameters
    ----------
    engine : str
        One of :data:`ENGINES`.
    network : NetworkConfig
        Node rates and coupling; the node drives are overwritten by
        ``target_p``.
    target_p : float
        Normalized pump reached at the end of the ramp.
    dt, ramp_time, average_window, n_traj : optional
        ``None`` selects the engine default.  Fock engines evaluate at
        ``ramp_time + average_window`` instead of averaging.
    cutoff_signal, cutoff_pump : int
        Fock truncations (``cutoff_pump`` only for ``fock-direct``).
    master_seed : int
        Seed of the per-trajectory random streams.
    snapshot_stride : int, optional
        Fock engines: emit a time record every this many steps.
    checkpoint_times : tuple of float
        Stochastic engines: emit instantaneous records at these times.
    """

    engine: str
    network: NetworkConfig
    target_p: float
    dt: Optional[float] = None
    ramp_time: Optional[float] = None
    average_window: Optional[float] = None
    n_traj: Optional[int] = None
    cutoff_signal: int = 30
    cutoff_pump: int = 4
    master_seed: int = 0
    snapshot_stride: Optional[int] = None
    checkpoint_times: tuple = ()
    sample_interval: float = 0.01
    gauge: str = "standard"
    workers: Optional[int] = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"unknown engine {self.engine!r}; choose from {ENGINES}")
        if not (np.isfinite(self.target_p) and self.target_p >= 0):
            raise ConfigError(f"target_p must be >= 0, got {self.target_p!r}")
        object.__setattr__(self, "checkpoint_times", tuple(float(t) for t in self.checkpoint_times))
        r = self.resolved()
        if r["dt"] <= 0 or r["ramp_time"] <= 0 or r["average_window"] < 0:
            raise ConfigError("dt and ramp_time must be positive, average_window >= 0")
        if self.stochastic and r["n_traj"] < 2:
            raise ConfigError("stochastic engines need n_traj >= 2")
        if self.engine in ("fock-single", "idler-psde") and self.network.n_nodes != 1:
            raise ConfigError(f"{self.engine} is a solitary-oscillator engine")
        if self.engine in ("fock-pair", "fock-direct") and self.network.n_nodes != 2:
            raise ConfigError(f"{self.engine} needs a two-node network")
        if self.cutoff_signal < 1 or self.cutoff_pump < 1:
            raise ConfigError("cutoffs must be >= 1")

    @property
    def stochastic(self) -> bool:
        return self.engine in SDE_ENGINES

    def resolved(self) -> dict:
        """Protocol values with engine defaults filled in."""
        dflt = STOCHASTIC_DEFAULTS if self.stochastic else FOCK_DEFAULTS
        return {
            "dt": self.dt if self.dt is not None else DEFAULT_DT[self.engine],
            "ramp_time": self.ramp_time if self.ramp_time is not None else dflt["ramp_time"],
            "average_window": (self.average_window if self.average_window is not None
                               else dflt["average_window"]),
            "n_traj": (self.n_traj if self.n_traj is not None
                       else STOCHASTIC_DEFAULTS["n_traj"]) if self.stochastic else None,
        }

    def driven_network(self) -> NetworkConfig:
        return self.network.with_pump(self.target_p)


@dataclass(frozen=True)
class ObservableRecord:
    """Derived statistics at one time (or ``"steady"``) plus diagnostics.

    ``stats`` holds ``n_mean, g2, mandel_q, hz1, hz1_normalized`` and their
    ``*_err`` companions (zero for Fock engines, NaN where undefined);
    ``diagnostics`` always carries ``n_diverged``, ``n_negative_floor``,
    ``trace_drift``, ``imag_residue`` and ``top_population``.
    """

    time: object
    stats: dict
    diagnostics: dict
    slices: Optional[dict] = None

    def row(self) -> dict:
        out = {"time": self.time}
        out.update(self.stats)
        out.update(self.diagnostics)
        return out


def _diagnostics(**kw) -> dict:
    base = {"n_diverged": 0, "n_negative_floor": 0, "trace_drift": 0.0, "imag_residue": 0.0,
            "top_population": 0.0}
    base.update(kw)
    return base


def _stats(m) -> dict:
    try:
        s = derived_stats(m)
    except DivisionByZero:
        s = {"n_mean": m.n_mean, "n_mean_err": m.n_err}
    out = {}
    for k in STAT_KEYS:
        out[k] = float(s.get(k, math.nan))
        out[k + "_err"] = float(s.get(k + "_err", math.nan))
    return out


def _stochastic_records(ens) -> list:
    diag = dict(n_diverged=ens.n_diverged, n_negative_floor=ens.n_negative_floor)
    records = []
    for i, t in enumerate(ens.checkpoint_times):
        m = moments_from_ensemble(ens, window=i)
        records.append(ObservableRecord(float(t), _stats(m),
                                        _diagnostics(imag_residue=m.imag_residue, **diag)))
    m = moments_from_ensemble(ens)
    records.append(ObservableRecord("steady", _stats(m),
                                    _diagnostics(imag_residue=m.imag_residue, **diag)))
    return records


def _run_stochastic(plan: RunPlan) -> list:
    r = plan.resolved()
    try:
        ens = simulate(plan.engine, plan.driven_network(), dt=r["dt"], ramp_time=r["ramp_time"],
                       average_window=r["average_window"], n_traj=r["n_traj"],
                       seed=plan.master_seed, checkpoint_times=plan.checkpoint_times,
                       sample_interval=plan.sample_interval, workers=plan.workers,
                       gauge=plan.gauge)
    except Diverged as exc:
        partial = []
        for ens in exc.partial:
            partial.extend(_stochastic_records(ens))
        raise Diverged(str(exc), count=exc.count, partial=partial) from exc
    return _stochastic_records(ens)


def _fock_setup(plan: RunPlan):
    net = plan.driven_network()
    if plan.engine == "fock-single":
        rho0 = fock.DensityMatrixSingle.vacuum(plan.cutoff_signal)
        rhs = lambda st, e: fock.rhs_single(st, net.nodes[0], e)
    elif plan.engine == "fock-pair":
        rho0 = fock.DensityMatrixPair.vacuum(plan.cutoff_signal)
        rhs = lambda st, e: fock.rhs_pair(st, net, e)
    else:
        rho0 = fock.DensityMatrixDirect.vacuum(plan.cutoff_pump, plan.cutoff_signal)
        rhs = lambda st, e: fock.rhs_direct(st, net, e)
    eps = net.nodes[0].epsilon
    ramp = plan.resolved()["ramp_time"]
    schedule = lambda t: eps * math.sqrt(min(1.0, max(t, 0.0) / ramp))
    return rho0, rhs, schedule


def _fock_record(t, obs, drift, top, label=None):
    # density-matrix moments are exact; errors are zero by construction
    m = obs.moments
    s = _stats(m)
    for k in STAT_KEYS:
        if not math.isnan(s[k + "_err"]):
            s[k + "_err"] = 0.0
    slices = None
    if obs.exchange_slice is not None:
        slices = {"exchange": obs.exchange_slice, "pair": obs.pair_slice}
    return ObservableRecord(label if label is not None else float(t), s,
                            _diagnostics(trace_drift=float(drift), top_population=float(top)),
                            slices)


def _run_fock(plan: RunPlan) -> list:
    r = plan.resolved()
    rho0, rhs, schedule = _fock_setup(plan)
    t_end = r["ramp_time"] + r["average_window"]

    def observe(st):
        return st.density_observables(), st.top_population(), abs(st.trace() - 1.0)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", CutoffOverflow)
            evo = fock.evolve(rho0, rhs, r["dt"], t_end, schedule,
                              snapshot_stride=plan.snapshot_stride, observe=observe)
    except TraceDrift as exc:
        ev = exc.partial
        partial = [_fock_record(t, *rec) for t, rec in zip(ev.times, ev.records)]
        raise TraceDrift(str(exc), drift=exc.drift, partial=partial) from exc
    records = [_fock_record(t, *rec) for t, rec in zip(evo.times, evo.records)]
    if not records or abs(evo.times[-1] - t_end) > 0.5 * r["dt"]:
        records.append(_fock_record(t_end, *observe(evo.final)))
    last = records[-1]
    records.append(replace(last, time="steady"))
    return records


def run(plan: RunPlan) -> list:
    """Execute ``plan``; the last record is the steady (time ``"steady"``) one.

    Raises
    ------
    Diverged, TraceDrift
        With ``partial`` holding the records produced before the failure.
    """
    if plan.stochastic:
        return _run_stochastic(plan)
    return _run_fock(plan)


def point_seed(master_seed: int, index: int) -> int:
    """Independent 63-bit seed for sweep point ``index``."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class SweepRow:
    value: float
    record: Optional[ObservableRecord]
    error: Optional[str] = None
    seed: int = 0


def _with_axis(base: RunPlan, axis: str, value: float) -> RunPlan:
    if axis == "p":
        return replace(base, target_p=float(value))
    if axis == "j":
        j = float(value) * base.network.nodes[0].gamma_s
        return replace(base, network=replace(base.network, coupling_j=j))
    raise ConfigError(f"unknown sweep axis {axis!r} (use 'p' or 'j')")


def sweep(base: RunPlan, axis: str, values) -> list:
    """Independent steady runs along ``axis`` (``"p"`` or ``"j"``, the latter in units of gamma_s).

    A failing point is recorded in its row's ``error`` and the sweep goes on.
    """
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep values must be nonempty")
    if values != sorted(values):
        raise ConfigError("sweep values must be sorted")
    rows = []
    for i, v in enumerate(values):
        seed = point_seed(base.master_seed, i)
        try:
            plan = replace(_with_axis(base, axis, v), master_seed=seed)
            rec = run(plan)[-1]
            rows.append(SweepRow(v, rec, None, seed))
        except NopoError as exc:
            rows.append(SweepRow(v, None, f"{type(exc).__name__}: {exc}", seed))
    return rows


def step_convergence(plan: RunPlan, key: str = "n_mean") -> float:
    """Shift of the steady ``key`` when ``dt`` is halved, in combined standard errors."""
    r = plan.resolved()
    a = run(plan)[-1].stats
    b = run(replace(plan, dt=r["dt"] / 2))[-1].stats
    err = math.hypot(a[key + "_err"], b[key + "_err"])
    diff = abs(a[key] - b[key])
    if err == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / err
