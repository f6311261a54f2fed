"""Photon statistics and the HZ1 witness from ensembles or density matrices.

Every estimate is reduced to a :class:`MomentSet` holding the four raw
moments ``<n>``, ``<a+^2 a^2>``, ``<a1+ a2>`` and ``<n1 n2>`` together with
the covariance of their estimators.  Ensemble covariances are computed at the
trajectory level (each trajectory's time average is one sample), which treats
the correlated samples inside a trajectory conservatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivisionByZero, EmptyEnsemble
from .sde import (K_A1, K_A1D, K_CROSS, K_N1, K_N1SQ, K_N2, K_N2SQ, K_NN, N_RAW, Ensemble,
                  TrajectoryState)

__all__ = [
    "MomentSet",
    "DensityObservables",
    "moments_from_positive_p",
    "moments_from_wigner",
    "moments_from_ensemble",
    "observables_from_density",
    "derived_stats",
    "partial_trace",
]

# parameter order of the estimator covariance
_N, _N2, _CR, _CI, _NN = range(5)


@dataclass(frozen=True)
class MomentSet:
    """Raw moments of the signal modes with estimator covariance.

    For a pair, ``n_mean`` and ``n2_factorial`` are either one node's values
    or the average over both nodes (see the ``node`` argument of the
    constructors).  ``cov`` is the 5x5 covariance of
    ``(n_mean, n2_factorial, Re cross, Im cross, cross_number)``; it is zero
    for exact density-matrix results.
    """

    n_mean: float
    n2_factorial: float
    cross_coherence: complex = 0j
    cross_number: float = 0.0
    cov: np.ndarray = field(default_factory=lambda: np.zeros((5, 5)))
    n_samples: int = 0
    imag_residue: float = 0.0

    @property
    def n_err(self) -> float:
        return math.sqrt(max(self.cov[_N, _N], 0.0))

    @property
    def n2_err(self) -> float:
        return math.sqrt(max(self.cov[_N2, _N2], 0.0))

    @property
    def cross_coherence_err(self) -> float:
        return math.sqrt(max(self.cov[_CR, _CR] + self.cov[_CI, _CI], 0.0))

    @property
    def cross_number_err(self) -> float:
        return math.sqrt(max(self.cov[_NN, _NN], 0.0))


def _raw_from_states(states, wigner: bool) -> np.ndarray:
    """Turn a list of per-trajectory states (or node pairs) into raw vectors."""
    rows = []
    for s in states:
        nodes = s if isinstance(s, (tuple, list)) else (s,)
        row = np.zeros(N_RAW, dtype=complex)
        amps = []
        for st in nodes:
            a = complex(st.alpha_s)
            ad = np.conj(a) if (wigner or st.alpha_s_dag is None) else complex(st.alpha_s_dag)
            amps.append((a, ad))
        for off, (a, ad) in zip((K_N1, K_N2), amps):
            n = ad * a
            row[off], row[off + 1], row[off + 2], row[off + 3] = n, n * n, a, ad
        if len(amps) == 2:
            row[K_CROSS] = amps[0][1] * amps[1][0]
            row[K_NN] = row[K_N1] * row[K_N2]
        rows.append(row)
    return np.array(rows), len(nodes)


def _select(ensemble, window):
    if isinstance(ensemble, Ensemble):
        raw = ensemble.window if window in (None, "steady") else ensemble.snapshots[:, int(window)]
        return raw, ensemble.n_nodes
    if len(ensemble) == 0:
        raise EmptyEnsemble("no trajectories")
    if isinstance(ensemble[0], (TrajectoryState, tuple, list)):
        return None, None
    raw = np.asarray(ensemble)
    return raw, 2 if np.any(raw[:, K_N2] != 0) else 1


def _samples(raw, n_nodes, wigner, node):
    """Per-trajectory parameter samples ``(n, n2, Re c, Im c, nn)`` and imaginary parts."""
    def node_vals(off):
        n = raw[:, off]
        n2 = raw[:, off + 1]
        if wigner:
            return n.real - 0.5, n2.real - 2.0 * n.real + 0.5, np.zeros(len(n)), np.zeros(len(n))
        return n.real, n2.real, n.imag, n2.imag

    n1, m1, in1, im1 = node_vals(K_N1)
    if n_nodes == 2:
        n2_, m2, in2, im2 = node_vals(K_N2)
        if node is None:
            n, m = 0.5 * (n1 + n2_), 0.5 * (m1 + m2)
            imag = [0.5 * (in1 + in2), 0.5 * (im1 + im2)]
        elif node == 0:
            n, m, imag = n1, m1, [in1, im1]
        else:
            n, m, imag = n2_, m2, [in2, im2]
        c = raw[:, K_CROSS]
        if wigner:
            x1, x2 = raw[:, K_N1].real, raw[:, K_N2].real
            nn = raw[:, K_NN].real - 0.5 * (x1 + x2) + 0.25
            imag_nn = np.zeros(len(nn))
        else:
            nn = raw[:, K_NN].real
            imag_nn = raw[:, K_NN].imag
        imag.append(imag_nn)
    else:
        n, m, imag = n1, m1, [in1, im1]
        c = np.zeros(len(n), dtype=complex)
        nn = np.zeros(len(n))
    theta = np.column_stack([n, m, c.real, c.imag, nn])
    return theta, imag


def _moment_set(theta, imag):
    n_s = theta.shape[0]
    if n_s == 0:
        raise EmptyEnsemble("no trajectories")
    mean = theta.mean(axis=0)
    if n_s > 1:
        cov = np.cov(theta, rowvar=False) / n_s
    else:
        cov = np.zeros((5, 5))
    # discarded imaginary parts of formally real moments, in units of their stderr
    resid = 0.0
    for k, im in zip((_N, _N2, _NN), imag):
        err = math.sqrt(max(cov[k, k], 0.0))
        mi = float(np.mean(im))
        if err > 0:
            resid = max(resid, abs(mi) / err)
        elif mi != 0:
            resid = math.inf
    return MomentSet(n_mean=float(mean[_N]), n2_factorial=float(mean[_N2]),
                     cross_coherence=complex(mean[_CR], mean[_CI]),
                     cross_number=float(mean[_NN]), cov=cov, n_samples=n_s,
                     imag_residue=resid)


def moments_from_positive_p(ensemble, window="steady", node=None) -> MomentSet:
    """Normally ordered moments as direct averages over a positive-P ensemble.

    ``ensemble`` is an :class:`~nopo.sde.Ensemble` (``window`` is ``"steady"``
    or a checkpoint index) or a list of :class:`~nopo.sde.TrajectoryState`
    (one per trajectory, or ``(node1, node2)`` tuples).
    """
    if isinstance(ensemble, Ensemble) and ensemble.representation != "positive-p":
        raise ValueError("ensemble is not a positive-P ensemble")
    raw, n_nodes = _select(ensemble, window)
    if raw is None:
        raw, n_nodes = _raw_from_states(ensemble, wigner=False)
    theta, imag = _samples(raw, n_nodes, False, node)
    return _moment_set(theta, imag)


def moments_from_wigner(ensemble, window="steady", node=None) -> MomentSet:
    """Normally ordered moments from symmetric-ordered Wigner samples.

    ``<n> = <|a|^2> - 1/2``, ``<a+^2 a^2> = <|a|^4> - 2<|a|^2> + 1/2``,
    ``<a1+ a2> = <a1^* a2>`` and ``<n1 n2> = <(|a1|^2 - 1/2)(|a2|^2 - 1/2)>``.
    """
    if isinstance(ensemble, Ensemble) and ensemble.representation != "wigner":
        raise ValueError("ensemble is not a Wigner ensemble")
    raw, n_nodes = _select(ensemble, window)
    if raw is None:
        raw, n_nodes = _raw_from_states(ensemble, wigner=True)
    theta, imag = _samples(raw, n_nodes, True, node)
    return _moment_set(theta, imag)


def moments_from_ensemble(ensemble: Ensemble, window="steady", node=None) -> MomentSet:
    if ensemble.representation == "wigner":
        return moments_from_wigner(ensemble, window, node)
    return moments_from_positive_p(ensemble, window, node)


def derived_stats(m: MomentSet) -> dict:
    """g2(0), Mandel Q and HZ1 with first-order (delta-method) standard errors.

    Raises :class:`~nopo.errors.DivisionByZero` when ``n_mean <= 0``.
    """
    n, n2 = m.n_mean, m.n2_factorial
    c = m.cross_coherence
    hz1 = abs(c) ** 2 - m.cross_number
    if n <= 0:
        raise DivisionByZero(f"n_mean = {n!r} <= 0; ratios undefined")
    grads = {
        "g2": np.array([-2.0 * n2 / n**3, 1.0 / n**2, 0, 0, 0]),
        "mandel_q": np.array([-n2 / n**2 - 1.0, 1.0 / n, 0, 0, 0]),
        "hz1": np.array([0, 0, 2 * c.real, 2 * c.imag, -1.0]),
        "hz1_normalized": np.array([-hz1 / n**2, 0, 2 * c.real / n, 2 * c.imag / n, -1.0 / n]),
    }
    out = {
        "n_mean": n, "n_mean_err": m.n_err,
        "n2_factorial": n2, "n2_factorial_err": m.n2_err,
        "g2": n2 / n**2,
        "mandel_q": n2 / n - n,
        "hz1": hz1,
        "hz1_normalized": hz1 / n,
    }
    for key, g in grads.items():
        out[key + "_err"] = math.sqrt(max(float(g @ m.cov @ g), 0.0))
    return out


@dataclass(frozen=True)
class DensityObservables:
    """Exact moments of a density matrix and, for pairs, the two coherence slices."""

    moments: MomentSet
    exchange_slice: np.ndarray | None = None  # <N,N'|rho|N',N>
    pair_slice: np.ndarray | None = None  # <N,N|rho|N',N'>


def partial_trace(rho: np.ndarray, keep: int) -> np.ndarray:
    """Reduced single-mode matrix of node ``keep`` (0 or 1) from ``rho[n1,n2,m1,m2]``."""
    if keep == 0:
        return np.einsum("abcb->ac", rho)
    return np.einsum("abad->bd", rho)


def observables_from_density(rho: np.ndarray, node=None) -> DensityObservables:
    """Exact traces against a single-mode ``rho[N, N']`` or pair ``rho[n1, n2, m1, m2]``."""
    rho = np.asarray(rho)
    if rho.ndim == 2:
        p = np.real(np.diag(rho))
        n = np.arange(len(p), dtype=float)
        mom = MomentSet(n_mean=float(n @ p), n2_factorial=float((n * (n - 1)) @ p))
        return DensityObservables(mom)
    if rho.ndim != 4:
        raise ValueError("rho must be a single-mode matrix or a pair tensor")
    c = rho.shape[0] - 1
    idx = np.arange(c + 1)
    diag = np.real(rho[idx[:, None], idx[None, :], idx[:, None], idx[None, :]])
    n = idx.astype(float)
    p1 = diag.sum(axis=1)
    p2 = diag.sum(axis=0)
    vals = [(float(n @ p1), float((n * (n - 1)) @ p1)), (float(n @ p2), float((n * (n - 1)) @ p2))]
    if node is None:
        nm, n2 = 0.5 * (vals[0][0] + vals[1][0]), 0.5 * (vals[0][1] + vals[1][1])
    else:
        nm, n2 = vals[node]
    # <a1+ a2> = sum rho[(n1, n2), (n1+1, n2-1)] sqrt(n1+1) sqrt(n2)
    cross = complex(np.sum(rho[idx[:-1, None], idx[None, 1:], idx[1:, None], idx[None, :-1]]
                           * np.sqrt(n[1:, None] * n[None, 1:])))
    nn = float(np.sum(diag * n[:, None] * n[None, :]))
    mom = MomentSet(n_mean=nm, n2_factorial=n2, cross_coherence=cross, cross_number=nn)
    ex = rho[idx[:, None], idx[None, :], idx[None, :], idx[:, None]]
    pp = rho[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
    return DensityObservables(mom, exchange_slice=np.array(ex), pair_slice=np.array(pp))
