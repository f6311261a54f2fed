"""Density-matrix evolution in the photon-number basis.

Three generators are provided:

* :func:`rhs_single` -- one oscillator with the pump adiabatically
  eliminated (gain ``G_e(M, N) = G eps^2 / [(gamma_p + G(1+M))(gamma_p + G(1+N))]``),
* :func:`rhs_pair` -- two such oscillators joined by the loss channel
  ``J = sqrt(J)(a_1 - a_2)``,
* :func:`rhs_direct` -- the full pump-signal master equation of a coupled
  pair at small cutoffs.

Every generator commutes with a global phase rotation of the signal modes,
so the difference between ket and bra signal photon numbers,
``d = (n_1 + n_2) - (m_1 + m_2)``, is conserved.  Pair and direct states are
stored sector by sector: for each retained ``d`` and each ket photon sum
``S`` a dense block is kept, and only the sectors present initially are ever
touched.  Starting from the vacuum this is the single sector ``d = 0``.

Elements that would need a photon number above the cutoff are taken as zero
in the pump-eliminated generators, so population leaks at the cutoff.  The
direct generator uses truncated ladder matrices and conserves the trace
exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba as nb
import numpy as np

from .errors import CutoffOverflow, TraceDrift
from .model import NetworkConfig, NopoParams, pump_schedule, threshold_epsilon

__all__ = [
    "DensityMatrixSingle",
    "DensityMatrixPair",
    "DensityMatrixDirect",
    "ge_table",
    "rhs_single",
    "rhs_pair",
    "rhs_direct",
    "evolve",
    "Evolution",
    "ramp_drive",
    "TRACE_TOL",
    "TRACE_TOL_DIRECT",
    "OVERFLOW_POP",
]

TRACE_TOL = 1e-6
TRACE_TOL_DIRECT = 1e-4
OVERFLOW_POP = 1e-4


def ge_table(params: NopoParams, epsilon_t: float, cutoff: int) -> np.ndarray:
    """``G_e(M, N)`` for ``M, N = 0..cutoff``."""
    d = params.gamma_p + params.big_g * (1.0 + np.arange(cutoff + 1, dtype=float))
    return params.big_g * epsilon_t**2 / np.outer(d, d)


def ramp_drive(params: NopoParams, target_p: float, ramp_time: float) -> Callable[[float], float]:
    """Drive ``eps(t) = p min(1, sqrt(t/ramp_time)) eps_thr`` as a callable."""
    eps_thr = threshold_epsilon(params)
    return lambda t: pump_schedule(target_p, t, ramp_time) * eps_thr


# ---------------------------------------------------------------------------
# single oscillator


@dataclass
class DensityMatrixSingle:
    """Signal-mode density matrix ``elems[N, N']``."""

    elems: np.ndarray

    @classmethod
    def vacuum(cls, cutoff: int) -> "DensityMatrixSingle":
        e = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
        e[0, 0] = 1.0
        return cls(e)

    @classmethod
    def from_diagonal(cls, probs) -> "DensityMatrixSingle":
        return cls(np.diag(np.asarray(probs, dtype=complex)))

    @property
    def cutoff(self) -> int:
        return self.elems.shape[0] - 1

    # flat-vector protocol used by evolve
    @property
    def data(self) -> np.ndarray:
        return self.elems.reshape(-1)

    def with_data(self, data: np.ndarray) -> "DensityMatrixSingle":
        return DensityMatrixSingle(data.reshape(self.elems.shape))

    def trace(self) -> complex:
        return complex(np.trace(self.elems))

    def hermitize(self) -> None:
        self.elems[...] = 0.5 * (self.elems + self.elems.conj().T)

    def top_population(self) -> float:
        return float(self.elems[-1, -1].real)

    def density_observables(self, node=None):
        from .observables import observables_from_density
        return observables_from_density(self.elems)


def rhs_single(rho: DensityMatrixSingle, params: NopoParams, epsilon_t: float) -> DensityMatrixSingle:
    """Pump-eliminated single-oscillator generator applied to ``rho``."""
    r = rho.elems
    c = r.shape[0] - 1
    gs = params.gamma_s
    n = np.arange(c + 1, dtype=float)
    nsum = n[:, None] + n[None, :]
    ge = ge_table(params, epsilon_t, c)
    sq = np.sqrt(np.outer(n, n))
    out = -(gs * nsum + ge * (nsum + 2.0)) * r
    out[:-1, :-1] += 2.0 * gs * sq[1:, 1:] * r[1:, 1:]
    out[1:, 1:] += 2.0 * ge[:-1, :-1] * sq[1:, 1:] * r[:-1, :-1]
    return DensityMatrixSingle(out)


# ---------------------------------------------------------------------------
# sector layout shared by the pair and direct states


def _lo(s, c):
    return max(0, s - c)


def _width(s, c):
    return min(s, c) - max(0, s - c) + 1


def _block_offsets(cutoff, sectors, inner):
    """Offsets ``off[k, S]`` (-1 if absent) and total size.

    ``inner`` is the number of entries per (ket signal index, bra signal
    index) pair, e.g. the pump dimension squared for direct states.
    """
    smax = 2 * cutoff
    off = -np.ones((len(sectors), smax + 1), dtype=np.int64)
    pos = 0
    for k, d in enumerate(sectors):
        for s in range(smax + 1):
            t = s - d
            if 0 <= t <= smax:
                off[k, s] = pos
                pos += _width(s, cutoff) * _width(t, cutoff) * inner
    return off, pos


@nb.njit(cache=True, inline="always")
def _nlo(s, c):
    return s - c if s > c else 0


@nb.njit(cache=True, inline="always")
def _nhi(s, c):
    return s if s < c else c


@nb.njit(cache=True, inline="always")
def _pair_get(x, off_k, c, d, s, n1, m1):
    """Element at ket sum ``s``, ket ``n1``, bra ``m1`` of one sector, or 0."""
    if s < 0 or s > 2 * c:
        return 0j
    t = s - d
    if t < 0 or t > 2 * c:
        return 0j
    lo_s = _nlo(s, c)
    lo_t = _nlo(t, c)
    if n1 < lo_s or n1 > _nhi(s, c) or m1 < lo_t or m1 > _nhi(t, c):
        return 0j
    w_t = _nhi(t, c) - lo_t + 1
    return x[off_k[s] + (n1 - lo_s) * w_t + (m1 - lo_t)]


@nb.njit(cache=True)
def _rhs_pair_kernel(x, out, c, sectors, off, ge1, ge2, gs, jc):
    gj = gs + jc
    sq = np.sqrt(np.arange(c + 2, dtype=np.float64))
    for k in range(sectors.shape[0]):
        d = sectors[k]
        off_k = off[k]
        for s in range(2 * c + 1):
            base = off_k[s]
            if base < 0:
                continue
            t = s - d
            lo_s = _nlo(s, c)
            w_s = _nhi(s, c) - lo_s + 1
            lo_t = _nlo(t, c)
            w_t = _nhi(t, c) - lo_t + 1
            # neighbouring blocks with one more / one fewer photon on each side
            bp = -1
            if s + 1 <= 2 * c and t + 1 <= 2 * c:
                bp = off_k[s + 1]
            lo_sp = _nlo(s + 1, c)
            lo_tp = _nlo(t + 1, c)
            w_tp = _nhi(t + 1, c) - lo_tp + 1
            bm = -1
            if s >= 1 and t >= 1:
                bm = off_k[s - 1]
            lo_sm = _nlo(s - 1, c)
            lo_tm = _nlo(t - 1, c)
            w_tm = _nhi(t - 1, c) - lo_tm + 1
            # in the d = 0 sector only ket <= bra is computed; the rest is its conjugate
            half = d == 0
            for a in range(w_s):
                n1 = lo_s + a
                n2 = s - n1
                b0 = a if half else 0
                for b in range(b0, w_t):
                    m1 = lo_t + b
                    m2 = t - m1
                    i = base + a * w_t + b
                    acc = -(gj * (n1 + n2 + m1 + m2) + ge1[n1, m1] * (n1 + m1 + 2)
                            + ge2[n2, m2] * (n2 + m2 + 2)) * x[i]
                    if bp >= 0:
                        # single-node loss (with the symmetric part of the coupling jump)
                        if n1 < c and m1 < c:
                            acc += 2.0 * gj * sq[n1 + 1] * sq[m1 + 1] * x[
                                bp + (n1 + 1 - lo_sp) * w_tp + (m1 + 1 - lo_tp)]
                        if n2 < c and m2 < c:
                            acc += 2.0 * gj * sq[n2 + 1] * sq[m2 + 1] * x[
                                bp + (n1 - lo_sp) * w_tp + (m1 - lo_tp)]
                        if jc != 0.0:
                            # cross jumps -a1 rho a2+ - a2 rho a1+
                            if n1 < c and m2 < c:
                                acc -= 2.0 * jc * sq[n1 + 1] * sq[m2 + 1] * x[
                                    bp + (n1 + 1 - lo_sp) * w_tp + (m1 - lo_tp)]
                            if n2 < c and m1 < c:
                                acc -= 2.0 * jc * sq[n2 + 1] * sq[m1 + 1] * x[
                                    bp + (n1 - lo_sp) * w_tp + (m1 + 1 - lo_tp)]
                    if bm >= 0:
                        # gain
                        if n1 > 0 and m1 > 0:
                            acc += 2.0 * ge1[n1 - 1, m1 - 1] * sq[n1] * sq[m1] * x[
                                bm + (n1 - 1 - lo_sm) * w_tm + (m1 - 1 - lo_tm)]
                        if n2 > 0 and m2 > 0:
                            acc += 2.0 * ge2[n2 - 1, m2 - 1] * sq[n2] * sq[m2] * x[
                                bm + (n1 - lo_sm) * w_tm + (m1 - lo_tm)]
                    if jc != 0.0:
                        # hopping from -J+J rho - rho J+J
                        hop = 0j
                        if n1 > 0 and n2 < c:
                            hop += sq[n1] * sq[n2 + 1] * x[i - w_t]
                        if n2 > 0 and n1 < c:
                            hop += sq[n1 + 1] * sq[n2] * x[i + w_t]
                        if m2 > 0 and m1 < c:
                            hop += sq[m1 + 1] * sq[m2] * x[i + 1]
                        if m1 > 0 and m2 < c:
                            hop += sq[m1] * sq[m2 + 1] * x[i - 1]
                        acc += jc * hop
                    if not half:
                        out[i] = acc
                    elif a == b:
                        out[i] = acc.real
                    else:
                        out[i] = acc
                        out[base + b * w_s + a] = acc.conjugate()


class _Layout:
    """Index bookkeeping for sector-packed states."""

    def __init__(self, cutoff: int, sectors, n_pump: Optional[int] = None):
        self.cutoff = int(cutoff)
        self.sectors = np.array(sorted(set(int(d) for d in sectors)), dtype=np.int64)
        self.n_pump = n_pump
        pdim = 1 if n_pump is None else (n_pump + 1) ** 2
        self.pdim = pdim
        self.off, self.size = _block_offsets(self.cutoff, self.sectors, pdim * pdim)
        self._cache = {}

    def key(self):
        return (self.cutoff, tuple(self.sectors), self.n_pump)

    def blocks(self):
        """Yield ``(k, d, S, T, lo_S, w_S, lo_T, w_T, start, shape)``."""
        c = self.cutoff
        for k, d in enumerate(self.sectors):
            for s in range(2 * c + 1):
                start = self.off[k, s]
                if start < 0:
                    continue
                t = s - d
                ws, wt = _width(s, c), _width(t, c)
                if self.n_pump is None:
                    shape = (ws, wt)
                else:
                    p = self.n_pump + 1
                    shape = (p, p, ws, p, p, wt)
                yield k, int(d), s, t, _lo(s, c), ws, _lo(t, c), wt, start, shape

    def block_view(self, data, k, s):
        for kk, d, ss, t, los, ws, lot, wt, start, shape in self.blocks():
            if kk == k and ss == s:
                return data[start:start + int(np.prod(shape))].reshape(shape)
        raise KeyError((k, s))

    def herm_partner(self) -> np.ndarray:
        """Permutation mapping each entry to the entry holding its Hermitian partner."""
        if "herm" in self._cache:
            return self._cache["herm"]
        sec_index = {int(d): k for k, d in enumerate(self.sectors)}
        perm = np.empty(self.size, dtype=np.int64)
        for k, d, s, t, los, ws, lot, wt, start, shape in self.blocks():
            if -d not in sec_index:
                raise ValueError("sector set is not closed under Hermitian conjugation")
            k2 = sec_index[-d]
            start2 = self.off[k2, t]
            n = int(np.prod(shape))
            if self.n_pump is None:
                # entry (i, j) of block (d, S) <-> entry (j, i) of block (-d, T)
                idx2 = np.arange(n).reshape(wt, ws).T
            else:
                p = self.n_pump + 1
                idx2 = np.arange(n).reshape(p, p, wt, p, p, ws).transpose(3, 4, 5, 0, 1, 2)
            perm[start:start + n] = start2 + idx2.reshape(-1)
        self._cache["herm"] = perm
        return perm

    def diag_index(self):
        """Flat indices of diagonal entries with their (n1, n2) or (p1, p2, s1, s2) labels."""
        if "diag" in self._cache:
            return self._cache["diag"]
        idx, labels = [], []
        k0 = int(np.nonzero(self.sectors == 0)[0][0]) if 0 in self.sectors else None
        if k0 is not None:
            for k, d, s, t, los, ws, lot, wt, start, shape in self.blocks():
                if k != k0:
                    continue
                n1 = los + np.arange(ws)
                if self.n_pump is None:
                    idx.append(start + np.arange(ws) * ws + np.arange(ws))
                    labels.append(np.column_stack([n1, s - n1]))
                else:
                    p = self.n_pump + 1
                    full = np.arange(int(np.prod(shape))).reshape(shape)
                    pp1, pp2, ii = np.meshgrid(np.arange(p), np.arange(p), np.arange(ws),
                                               indexing="ij")
                    idx.append(start + full[pp1, pp2, ii, pp1, pp2, ii].reshape(-1))
                    s1 = (los + ii).reshape(-1)
                    labels.append(np.column_stack([pp1.reshape(-1), pp2.reshape(-1), s1, s - s1]))
        out = (np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64),
               np.concatenate(labels) if labels else np.zeros((0, 2), dtype=np.int64))
        self._cache["diag"] = out
        return out


def _sectors_of_dense(t: np.ndarray, c: int, tol: float = 0.0):
    n = np.arange(c + 1)
    dket = n[:, None] + n[None, :]
    dmap = dket[:, :, None, None] - dket[None, None, :, :]
    present = np.unique(dmap[np.abs(t) > tol])
    return sorted(set(present.tolist()) | {0} | set((-present).tolist()))


@dataclass
class DensityMatrixPair:
    """Two-signal-mode density matrix ``rho[(n1, n2), (m1, m2)]``, stored by sector."""

    layout: _Layout
    data: np.ndarray

    @classmethod
    def vacuum(cls, cutoff: int, sectors=(0,)) -> "DensityMatrixPair":
        lay = _Layout(cutoff, sectors)
        data = np.zeros(lay.size, dtype=complex)
        k0 = int(np.nonzero(lay.sectors == 0)[0][0])
        data[lay.off[k0, 0]] = 1.0
        return cls(lay, data)

    @classmethod
    def from_dense(cls, tensor, sectors=None) -> "DensityMatrixPair":
        """Pack ``tensor[n1, n2, m1, m2]``; by default keep the sectors it occupies.

        Pass ``sectors="all"`` to keep every sector.
        """
        t = np.asarray(tensor, dtype=complex)
        c = t.shape[0] - 1
        if sectors is None:
            sectors = _sectors_of_dense(t, c)
        elif sectors == "all":
            sectors = range(-2 * c, 2 * c + 1)
        lay = _Layout(c, sectors)
        data = np.zeros(lay.size, dtype=complex)
        for k, d, s, tt, los, ws, lot, wt, start, shape in lay.blocks():
            n1 = los + np.arange(ws)
            m1 = lot + np.arange(wt)
            blk = t[n1[:, None], (s - n1)[:, None], m1[None, :], (tt - m1)[None, :]]
            data[start:start + ws * wt] = blk.reshape(-1)
        out = cls(lay, data)
        if np.max(np.abs(t - out.to_dense()), initial=0.0) > 0:
            raise ValueError("tensor has weight outside the requested sectors")
        return out

    @property
    def cutoff(self) -> int:
        return self.layout.cutoff

    def with_data(self, data) -> "DensityMatrixPair":
        return DensityMatrixPair(self.layout, data)

    def to_dense(self) -> np.ndarray:
        c = self.cutoff
        t = np.zeros((c + 1,) * 4, dtype=complex)
        for k, d, s, tt, los, ws, lot, wt, start, shape in self.layout.blocks():
            n1 = los + np.arange(ws)
            m1 = lot + np.arange(wt)
            t[n1[:, None], (s - n1)[:, None], m1[None, :], (tt - m1)[None, :]] = \
                self.data[start:start + ws * wt].reshape(ws, wt)
        return t

    def populations(self) -> np.ndarray:
        """Joint photon-number distribution ``P[n1, n2]``."""
        idx, lab = self.layout.diag_index()
        c = self.cutoff
        p = np.zeros((c + 1, c + 1))
        p[lab[:, 0], lab[:, 1]] = self.data[idx].real
        return p

    def trace(self) -> complex:
        idx, _ = self.layout.diag_index()
        return complex(np.sum(self.data[idx]))

    def hermitize(self) -> None:
        perm = self.layout.herm_partner()
        self.data[...] = 0.5 * (self.data + self.data[perm].conj())

    def top_population(self) -> float:
        p = self.populations()
        return float(max(p[-1, :].sum(), p[:, -1].sum()))

    def partial_trace(self, keep: int) -> DensityMatrixSingle:
        """Reduced matrix of node ``keep`` (0 or 1)."""
        c = self.cutoff
        out = np.zeros((c + 1, c + 1), dtype=complex)
        # reduced coherences <n|rho_1|m> need n2 = m2; any ket-bra sector d maps to n1 - m1 = d
        for k, d, s, t, los, ws, lot, wt, start, shape in self.layout.blocks():
            blk = self.data[start:start + ws * wt].reshape(ws, wt)
            n1 = los + np.arange(ws)
            m1 = lot + np.arange(wt)
            if keep == 0:
                sel = (s - n1)[:, None] == (t - m1)[None, :]
                a, b = np.nonzero(sel)
                np.add.at(out, (n1[a], m1[b]), blk[a, b])
            else:
                sel = n1[:, None] == m1[None, :]
                a, b = np.nonzero(sel)
                np.add.at(out, ((s - n1)[a], (t - m1)[b]), blk[a, b])
        return DensityMatrixSingle(out)

    def density_observables(self, node=None):
        """Exact moments plus the exchange and pair coherence slices."""
        from .observables import DensityObservables, MomentSet
        c = self.cutoff
        lay = self.layout
        p = self.populations()
        n = np.arange(c + 1, dtype=float)
        p1, p2 = p.sum(axis=1), p.sum(axis=0)
        vals = [(n @ p1, (n * (n - 1)) @ p1), (n @ p2, (n * (n - 1)) @ p2)]
        if node is None:
            nm = 0.5 * (vals[0][0] + vals[1][0])
            n2 = 0.5 * (vals[0][1] + vals[1][1])
        else:
            nm, n2 = vals[node]
        k0 = int(np.nonzero(lay.sectors == 0)[0][0])
        cross = 0j
        ex = np.zeros((c + 1, c + 1), dtype=complex)
        for k, d, s, t, los, ws, lot, wt, start, shape in lay.blocks():
            blk = self.data[start:start + ws * wt].reshape(ws, wt)
            if k != k0:
                continue
            # <a1+ a2>: ket (n1, n2), bra (n1 + 1, n2 - 1)
            n1 = los + np.arange(ws)
            j = n1 + 1 - lot
            ok = (j >= 0) & (j < wt)
            i = np.nonzero(ok)[0]
            cross += np.sum(blk[i, j[ok]] * np.sqrt((n1[ok] + 1.0) * (s - n1[ok])))
            # <N, N'| rho |N', N>: ket n1 = N, bra m1 = N' = s - N
            jj = (s - n1) - lot
            ok = (jj >= 0) & (jj < wt)
            i = np.nonzero(ok)[0]
            ex[n1[ok], s - n1[ok]] = blk[i, jj[ok]]
        pp = np.zeros((c + 1, c + 1), dtype=complex)
        sec = {int(d): k for k, d in enumerate(lay.sectors)}
        for a in range(c + 1):
            for b in range(c + 1):
                kk = sec.get(2 * (a - b))
                if kk is None or lay.off[kk, 2 * a] < 0:
                    continue
                pp[a, b] = _pair_get(self.data, lay.off[kk], c, 2 * (a - b), 2 * a, a, b)
        nn = float(np.sum(p * np.outer(n, n)))
        mom = MomentSet(n_mean=float(nm), n2_factorial=float(n2), cross_coherence=complex(cross),
                        cross_number=nn)
        return DensityObservables(mom, exchange_slice=ex, pair_slice=pp)


def rhs_pair(rho: DensityMatrixPair, network: NetworkConfig, epsilon_t: float) -> DensityMatrixPair:
    """Pump-eliminated pair generator: per-node gain and loss plus the coupling dissipator."""
    if network.n_nodes != 2:
        raise ValueError("rhs_pair needs a two-node network")
    c = rho.cutoff
    p1, p2 = network.nodes
    if p1.gamma_s != p2.gamma_s:
        raise ValueError("nodes must share gamma_s")
    ge1 = ge_table(p1, epsilon_t, c)
    ge2 = ge_table(p2, epsilon_t, c) if p2 != p1 else ge1
    out = np.empty_like(rho.data)
    _rhs_pair_kernel(rho.data, out, c, rho.layout.sectors, rho.layout.off, ge1, ge2,
                     float(p1.gamma_s), float(network.coupling_j))
    return DensityMatrixPair(rho.layout, out)


# ---------------------------------------------------------------------------
# direct pump-signal pair


@nb.njit(cache=True)
def _rhs_direct_kernel(x, out, c, npump, sectors, off, eps, gp, gs, g, jc):
    pp = npump + 1
    gj = gs + jc
    top = max(c, npump) + 2
    sq = np.sqrt(np.arange(top, dtype=np.float64))
    for k in range(sectors.shape[0]):
        d = sectors[k]
        off_k = off[k]
        for s in range(2 * c + 1):
            base = off_k[s]
            if base < 0:
                continue
            t = s - d
            lo_s = _nlo(s, c)
            lo_t = _nlo(t, c)
            w_s = _nhi(s, c) - lo_s + 1
            w_t = _nhi(t, c) - lo_t + 1
            # strides of this block, shape (pp, pp, w_s, pp, pp, w_t)
            st_q1 = pp * w_t
            st_s1 = pp * st_q1
            st_p2 = w_s * st_s1
            st_p1 = pp * st_p2
            # neighbouring blocks with one more / one fewer photon on each side
            bp = -1
            if s + 1 <= 2 * c and t + 1 <= 2 * c:
                bp = off_k[s + 1]
            lo_sp = _nlo(s + 1, c)
            lo_tp = _nlo(t + 1, c)
            hi_sp = _nhi(s + 1, c)
            hi_tp = _nhi(t + 1, c)
            w_tp = hi_tp - lo_tp + 1
            sp_q1 = pp * w_tp
            sp_s1 = pp * sp_q1
            sp_p2 = (hi_sp - lo_sp + 1) * sp_s1
            sp_p1 = pp * sp_p2
            bm = -1
            if s >= 1 and t >= 1:
                bm = off_k[s - 1]
            lo_sm = _nlo(s - 1, c)
            lo_tm = _nlo(t - 1, c)
            hi_sm = _nhi(s - 1, c)
            hi_tm = _nhi(t - 1, c)
            w_tm = hi_tm - lo_tm + 1
            sm_q1 = pp * w_tm
            sm_s1 = pp * sm_q1
            sm_p2 = (hi_sm - lo_sm + 1) * sm_s1
            sm_p1 = pp * sm_p2
            # in the d = 0 sector only ket <= bra is computed; the rest is its conjugate
            half = d == 0
            n_ket = pp * pp * w_s
            n_bra = pp * pp * w_t
            for p1 in range(pp):
                for p2 in range(pp):
                    for a in range(w_s):
                        s1 = lo_s + a
                        s2 = s - s1
                        u = (p1 * pp + p2) * w_s + a
                        for q1 in range(pp):
                            for q2 in range(pp):
                                vrow = (q1 * pp + q2) * w_t
                                if half and vrow + w_t - 1 < u:
                                    continue
                                for b in range(w_t):
                                    v = vrow + b
                                    if half and v < u:
                                        continue
                                    i = base + u * n_bra + v
                                    r1 = lo_t + b
                                    r2 = t - r1
                                    # truncated L_C^+ L_C = G n_p (n_s + 1), zero at the signal cutoff
                                    lc = 0.0
                                    if s1 < c:
                                        lc += p1 * (s1 + 1)
                                    if s2 < c:
                                        lc += p2 * (s2 + 1)
                                    if r1 < c:
                                        lc += q1 * (r1 + 1)
                                    if r2 < c:
                                        lc += q2 * (r2 + 1)
                                    acc = -(gj * (s1 + s2 + r1 + r2) + gp * (p1 + p2 + q1 + q2)
                                            + g * lc) * x[i]
                                    # drive eps (a_p+ - a_p) on both nodes, ket and bra
                                    drv = 0j
                                    if p1 > 0:
                                        drv += sq[p1] * x[i - st_p1]
                                    if p1 < npump:
                                        drv -= sq[p1 + 1] * x[i + st_p1]
                                        if q1 < npump:
                                            acc += 2.0 * gp * sq[p1 + 1] * sq[q1 + 1] * x[i + st_p1 + st_q1]
                                    if q1 < npump:
                                        drv -= sq[q1 + 1] * x[i + st_q1]
                                    if q1 > 0:
                                        drv += sq[q1] * x[i - st_q1]
                                    if p2 > 0:
                                        drv += sq[p2] * x[i - st_p2]
                                    if p2 < npump:
                                        drv -= sq[p2 + 1] * x[i + st_p2]
                                        if q2 < npump:
                                            acc += 2.0 * gp * sq[p2 + 1] * sq[q2 + 1] * x[i + st_p2 + w_t]
                                    if q2 < npump:
                                        drv -= sq[q2 + 1] * x[i + w_t]
                                    if q2 > 0:
                                        drv += sq[q2] * x[i - w_t]
                                    acc += eps * drv
                                    if bp >= 0:
                                        jp = bp + p1 * sp_p1 + p2 * sp_p2 + q1 * sp_q1 + q2 * w_tp
                                        # signal loss with the symmetric part of the coupling jump
                                        if s1 < c and r1 < c:
                                            acc += 2.0 * gj * sq[s1 + 1] * sq[r1 + 1] * x[
                                                jp + (s1 + 1 - lo_sp) * sp_s1 + (r1 + 1 - lo_tp)]
                                        if s2 < c and r2 < c:
                                            acc += 2.0 * gj * sq[s2 + 1] * sq[r2 + 1] * x[
                                                jp + (s1 - lo_sp) * sp_s1 + (r1 - lo_tp)]
                                        if jc != 0.0:
                                            # cross jumps -a1 rho a2+ - a2 rho a1+
                                            if s1 < c and r2 < c:
                                                acc -= 2.0 * jc * sq[s1 + 1] * sq[r2 + 1] * x[
                                                    jp + (s1 + 1 - lo_sp) * sp_s1 + (r1 - lo_tp)]
                                            if s2 < c and r1 < c:
                                                acc -= 2.0 * jc * sq[s2 + 1] * sq[r1 + 1] * x[
                                                    jp + (s1 - lo_sp) * sp_s1 + (r1 + 1 - lo_tp)]
                                    if bm >= 0:
                                        # down-conversion jump a_s+ a_p rho a_p+ a_s
                                        if s1 > 0 and r1 > 0 and p1 < npump and q1 < npump:
                                            acc += 2.0 * g * sq[s1] * sq[p1 + 1] * sq[r1] * sq[q1 + 1] * x[
                                                bm + (p1 + 1) * sm_p1 + p2 * sm_p2 + (s1 - 1 - lo_sm) * sm_s1
                                                + (q1 + 1) * sm_q1 + q2 * w_tm + (r1 - 1 - lo_tm)]
                                        if s2 > 0 and r2 > 0 and p2 < npump and q2 < npump:
                                            acc += 2.0 * g * sq[s2] * sq[p2 + 1] * sq[r2] * sq[q2 + 1] * x[
                                                bm + p1 * sm_p1 + (p2 + 1) * sm_p2 + (s1 - lo_sm) * sm_s1
                                                + q1 * sm_q1 + (q2 + 1) * w_tm + (r1 - lo_tm)]
                                    if jc != 0.0:
                                        # hopping from -J+J rho - rho J+J (same block)
                                        hop = 0j
                                        if s1 > 0 and s2 < c:
                                            hop += sq[s1] * sq[s2 + 1] * x[i - st_s1]
                                        if s2 > 0 and s1 < c:
                                            hop += sq[s1 + 1] * sq[s2] * x[i + st_s1]
                                        if r2 > 0 and r1 < c:
                                            hop += sq[r1 + 1] * sq[r2] * x[i + 1]
                                        if r1 > 0 and r2 < c:
                                            hop += sq[r1] * sq[r2 + 1] * x[i - 1]
                                        acc += jc * hop
                                    if not half:
                                        out[i] = acc
                                    elif u == v:
                                        out[i] = acc.real
                                    else:
                                        out[i] = acc
                                        out[base + v * n_ket + u] = acc.conjugate()


@dataclass
class DensityMatrixDirect:
    """Pump-signal density matrix of a coupled pair, stored by signal sector.

    Each block is indexed ``[p1, p2, s1, q1, q2, r1]`` with ket pumps
    ``p``, bra pumps ``q`` and node-1 signal numbers ``s1`` (ket) and
    ``r1`` (bra); node-2 signal numbers follow from the block's photon sums.
    """

    layout: _Layout
    data: np.ndarray

    @classmethod
    def vacuum(cls, n_pump: int, n_signal: int, sectors=(0,)) -> "DensityMatrixDirect":
        lay = _Layout(n_signal, sectors, n_pump=n_pump)
        data = np.zeros(lay.size, dtype=complex)
        k0 = int(np.nonzero(lay.sectors == 0)[0][0])
        data[lay.off[k0, 0]] = 1.0
        return cls(lay, data)

    @property
    def n_pump(self) -> int:
        return self.layout.n_pump

    @property
    def n_signal(self) -> int:
        return self.layout.cutoff

    def with_data(self, data) -> "DensityMatrixDirect":
        return DensityMatrixDirect(self.layout, data)

    def populations(self) -> np.ndarray:
        """Joint distribution ``P[p1, p2, s1, s2]``."""
        idx, lab = self.layout.diag_index()
        p = self.n_pump + 1
        c = self.n_signal + 1
        out = np.zeros((p, p, c, c))
        out[lab[:, 0], lab[:, 1], lab[:, 2], lab[:, 3]] = self.data[idx].real
        return out

    def trace(self) -> complex:
        idx, _ = self.layout.diag_index()
        return complex(np.sum(self.data[idx]))

    def hermitize(self) -> None:
        perm = self.layout.herm_partner()
        self.data[...] = 0.5 * (self.data + self.data[perm].conj())

    def top_population(self) -> float:
        pop = self.populations()
        return float(max(pop[-1].sum(), pop[:, -1].sum(), pop[:, :, -1].sum(), pop[:, :, :, -1].sum()))

    def pump_mean(self) -> complex:
        """``<a_p1>`` from the pump coherences."""
        lay = self.layout
        k0 = int(np.nonzero(lay.sectors == 0)[0][0])
        tot = 0j
        for k, d, s, t, los, ws, lot, wt, start, shape in lay.blocks():
            if k != k0:
                continue
            blk = self.data[start:start + int(np.prod(shape))].reshape(shape)
            p = np.arange(1, shape[0])
            # Tr(rho a_p1) = sum rho[(p1, ..), (p1 - 1, ..)] sqrt(p1)
            diag = np.einsum("abcdbc->ad", blk)
            tot += np.sum(np.sqrt(p) * diag[p, p - 1])
        return tot

    def density_observables(self, node=None):
        from .observables import DensityObservables, MomentSet
        pop = self.populations()
        sig = pop.sum(axis=(0, 1))
        n = np.arange(sig.shape[0], dtype=float)
        p1, p2 = sig.sum(axis=1), sig.sum(axis=0)
        vals = [(n @ p1, (n * (n - 1)) @ p1), (n @ p2, (n * (n - 1)) @ p2)]
        if node is None:
            nm = 0.5 * (vals[0][0] + vals[1][0])
            n2 = 0.5 * (vals[0][1] + vals[1][1])
        else:
            nm, n2 = vals[node]
        lay = self.layout
        k0 = int(np.nonzero(lay.sectors == 0)[0][0])
        cross = 0j
        for k, d, s, t, los, ws, lot, wt, start, shape in lay.blocks():
            if k != k0:
                continue
            blk = self.data[start:start + int(np.prod(shape))].reshape(shape)
            red = np.einsum("abiabj->ij", blk)  # trace over pumps
            s1 = los + np.arange(ws)
            j = s1 + 1 - lot
            ok = (j >= 0) & (j < wt)
            i = np.nonzero(ok)[0]
            cross += np.sum(red[i, j[ok]] * np.sqrt((s1[ok] + 1.0) * (s - s1[ok])))
        nn = float(np.sum(sig * np.outer(n, n)))
        return DensityObservables(MomentSet(n_mean=float(nm), n2_factorial=float(n2),
                                            cross_coherence=complex(cross), cross_number=nn))


def rhs_direct(rho: DensityMatrixDirect, network: NetworkConfig, epsilon_t: float) -> DensityMatrixDirect:
    """Full pump-signal master equation of an identical coupled pair."""
    if network.n_nodes != 2 or not network.identical:
        raise ValueError("rhs_direct needs two identical nodes")
    p = network.nodes[0]
    out = np.empty_like(rho.data)
    _rhs_direct_kernel(rho.data, out, rho.n_signal, rho.n_pump, rho.layout.sectors,
                       rho.layout.off, float(epsilon_t), float(p.gamma_p), float(p.gamma_s),
                       float(p.big_g), float(network.coupling_j))
    return DensityMatrixDirect(rho.layout, out)


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class Evolution:
    """Snapshots of an evolution: times, observables and (optionally) states."""

    times: np.ndarray
    records: list
    states: list = field(default_factory=list)
    max_trace_drift: float = 0.0
    final: object = None


def evolve(rho0, rhs: Callable, dt: float, t_end: float, schedule: Callable[[float], float], *,
           snapshot_stride: Optional[int] = None, snapshot_times=None, observe=None,
           keep_states: bool = False, trace_tol: Optional[float] = None) -> Evolution:
    """Fixed-step RK4 integration of ``d rho/dt = rhs(rho, eps(t))``.

    ``rhs`` takes ``(state, epsilon_t)`` and returns a state of the same
    kind; ``schedule`` maps time to drive.  After every step the state is
    re-symmetrized, ``rho <- (rho + rho^+)/2``, which is a non-physical
    stabilization against round-off.  Snapshots are taken every
    ``snapshot_stride`` steps and/or at the steps nearest ``snapshot_times``;
    ``observe(state)`` produces each record (default: the state's
    :class:`~nopo.observables.DensityObservables`).

    Raises
    ------
    TraceDrift
        If ``|tr rho - 1|`` exceeds ``trace_tol`` (default ``1e-6``, or
        ``1e-4`` for direct states).
    """
    if trace_tol is None:
        trace_tol = TRACE_TOL_DIRECT if isinstance(rho0, DensityMatrixDirect) else TRACE_TOL
    if observe is None:
        observe = lambda st: st.density_observables()
    n_steps = int(round(t_end / dt))
    take = set()
    if snapshot_stride:
        take.update(range(0, n_steps + 1, snapshot_stride))
    if snapshot_times is not None:
        take.update(int(round(t / dt)) for t in snapshot_times)
    if not take:
        take.add(n_steps)
    state = rho0.with_data(np.array(rho0.data, dtype=complex, copy=True))
    times, records, states = [], [], []
    drift = abs(state.trace() - 1.0)
    warned = False

    def snap(k):
        times.append(k * dt)
        records.append(observe(state))
        if keep_states:
            states.append(state.with_data(state.data.copy()))

    if 0 in take:
        snap(0)
    y = state.data
    for k in range(n_steps):
        t = k * dt
        e0, eh, e1 = schedule(t), schedule(t + 0.5 * dt), schedule(t + dt)
        k1 = rhs(state.with_data(y), e0).data
        k2 = rhs(state.with_data(y + (0.5 * dt) * k1), eh).data
        acc = k1 + 2.0 * k2
        k3 = rhs(state.with_data(y + (0.5 * dt) * k2), eh).data
        acc += 2.0 * k3
        k4 = rhs(state.with_data(y + dt * k3), e1).data
        acc += k4
        y = y + (dt / 6.0) * acc
        state = state.with_data(y)
        state.hermitize()
        y = state.data
        tr = state.trace()
        drift = max(drift, abs(tr - 1.0))
        if drift > trace_tol:
            raise TraceDrift(f"|tr rho - 1| = {drift:.3e} at t = {(k + 1) * dt:.6g}",
                             drift=drift, partial=Evolution(np.array(times), records, states,
                                                            drift, state))
        if k + 1 in take:
            if not warned and state.top_population() > OVERFLOW_POP:
                warnings.warn(f"top Fock level holds {state.top_population():.2e} > "
                              f"{OVERFLOW_POP:g}", CutoffOverflow, stacklevel=2)
                warned = True
            snap(k + 1)
    return Evolution(np.array(times), records, states, drift, state)
