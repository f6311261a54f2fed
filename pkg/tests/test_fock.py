import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from nopo.analytic import fock_steady_diagonal
from nopo.errors import TraceDrift
from nopo.fock import (DensityMatrixDirect, DensityMatrixPair, DensityMatrixSingle, _Layout,
                       _rhs_pair_kernel, evolve, ge_table, ramp_drive, rhs_direct, rhs_pair,
                       rhs_single)
from nopo.model import NetworkConfig, NopoParams
from nopo.observables import observables_from_density


def lowering(c):
    return np.diag(np.sqrt(np.arange(1, c + 1, dtype=float)), 1)


def dissipator(op, rho):
    od = op.conj().T
    return 2 * op @ rho @ od - od @ op @ rho - rho @ od @ op


def random_hermitian(dim, rng):
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = m @ m.conj().T
    h = 0.5 * (h + h.conj().T)
    return h / np.trace(h).real


def eq33_node_dense(t, params, eps, node):
    """Pump-eliminated generator acting on one node's indices, written out element by element."""
    c = t.shape[0] - 1
    ge = ge_table(params, eps, c)
    out = np.zeros_like(t)
    gs = params.gamma_s
    rng = range(c + 1)
    for n1 in rng:
        for n2 in rng:
            for m1 in rng:
                for m2 in rng:
                    n, m = (n1, m1) if node == 0 else (n2, m2)

                    def at(dn, dm):
                        if node == 0:
                            a, b = n1 + dn, m1 + dm
                            return t[a, n2, b, m2] if 0 <= a <= c and 0 <= b <= c else 0
                        a, b = n2 + dn, m2 + dm
                        return t[n1, a, m1, b] if 0 <= a <= c and 0 <= b <= c else 0

                    v = -gs * (n + m) * at(0, 0) - ge[n, m] * (n + m + 2) * at(0, 0)
                    v += 2 * gs * np.sqrt((n + 1) * (m + 1)) * at(1, 1)
                    if n > 0 and m > 0:
                        v += 2 * ge[n - 1, m - 1] * np.sqrt(n * m) * at(-1, -1)
                    out[n1, n2, m1, m2] = v
    return out


def pair_oracle(t, network, eps):
    c = t.shape[0] - 1
    d = (c + 1) ** 2
    a = lowering(c)
    eye = np.eye(c + 1)
    jop = np.sqrt(network.coupling_j) * (np.kron(a, eye) - np.kron(eye, a))
    coup = dissipator(jop, t.reshape(d, d)).reshape(t.shape)
    p1, p2 = network.nodes
    return eq33_node_dense(t, p1, eps, 0) + eq33_node_dense(t, p2, eps, 1) + coup


# --- single mode ---------------------------------------------------------------------------


def test_single_dark_vacuum_is_stationary():
    p = NopoParams(gamma_p=50, big_g=0.05)
    out = rhs_single(DensityMatrixSingle.vacuum(6), p, 0.0)
    assert np.all(out.elems == 0)


def test_single_photon_decays_at_twice_gamma_s():
    p = NopoParams(gamma_p=50, big_g=0.05)
    rho = DensityMatrixSingle.from_diagonal([0, 1, 0, 0])
    out = rhs_single(rho, p, 0.0).elems
    assert out[1, 1] == pytest.approx(-2.0)
    assert out[0, 0] == pytest.approx(2.0)


def test_single_diagonal_restriction_is_birth_death_chain():
    p = NopoParams.from_pump(50, 0.05, 2.0)
    rng = np.random.default_rng(3)
    probs = rng.random(12)
    probs /= probs.sum()
    out = rhs_single(DensityMatrixSingle.from_diagonal(probs), p, p.epsilon).elems
    assert np.max(np.abs(out - np.diag(np.diag(out)))) == 0
    n = np.arange(12)
    g = p.big_g * p.epsilon**2 / (p.gamma_p + p.big_g * (1 + n)) ** 2
    expected = -2 * n * probs - 2 * (n + 1) * g * probs
    expected[:-1] += 2 * (n[:-1] + 1) * probs[1:]
    expected[1:] += 2 * g[:-1] * n[1:] * probs[:-1]
    np.testing.assert_allclose(np.diag(out).real, expected, rtol=1e-12, atol=1e-15)


def test_detailed_balance_distribution_is_stationary():
    p = NopoParams.from_pump(50, 0.05, 2.0)
    probs = fock_steady_diagonal(p).probs
    out = rhs_single(DensityMatrixSingle.from_diagonal(probs), p, p.epsilon).elems
    assert np.max(np.abs(out)) < 1e-10 * np.max(probs) * len(probs)


def test_single_evolution_reaches_detailed_balance():
    p = NopoParams.from_pump(50, 5.0, 2.0)
    ev = evolve(DensityMatrixSingle.vacuum(60), lambda r, e: rhs_single(r, p, e), 1e-3, 40.0,
                lambda t: p.epsilon, keep_states=True)
    rho = ev.states[-1].elems
    ref = fock_steady_diagonal(p, cutoff=60).probs
    np.testing.assert_allclose(np.diag(rho).real, ref, atol=1e-6)
    off = rho - np.diag(np.diag(rho))
    assert np.max(np.abs(off)) < 1e-8


@pytest.mark.filterwarnings("ignore::nopo.errors.CutoffOverflow")
def test_identity_evolution_is_exact():
    rng = np.random.default_rng(0)
    rho = DensityMatrixSingle(random_hermitian(5, rng))
    ev = evolve(rho, lambda r, e: r.with_data(np.zeros_like(r.data)), 0.01, 1.0, lambda t: 0.0,
                keep_states=True)
    assert np.array_equal(ev.states[-1].elems, rho.elems)


def test_trace_drift_raised_when_cutoff_too_small():
    p = NopoParams.from_pump(50, 5.0, 3.0)
    with pytest.raises(TraceDrift) as err:
        evolve(DensityMatrixSingle.vacuum(4), lambda r, e: rhs_single(r, p, e), 1e-3, 5.0,
               lambda t: p.epsilon)
    assert err.value.drift > 1e-6


# --- pair ----------------------------------------------------------------------------------


@pytest.mark.parametrize("jc", [0.0, 1.3])
def test_pair_matches_dense_oracle_all_sectors(jc):
    c = 3
    params = NopoParams.from_pump(7.0, 2.0, 1.7)
    net = NetworkConfig.pair(params, jc)
    rng = np.random.default_rng(11)
    t = random_hermitian((c + 1) ** 2, rng).reshape((c + 1,) * 4)
    rho = DensityMatrixPair.from_dense(t, sectors="all")
    got = rhs_pair(rho, net, params.epsilon).to_dense()
    want = pair_oracle(t, net, params.epsilon)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_pair_uncoupled_is_tensor_sum():
    c = 4
    params = NopoParams.from_pump(7.0, 2.0, 1.5)
    rng = np.random.default_rng(5)
    r1, r2 = random_hermitian(c + 1, rng), random_hermitian(c + 1, rng)
    t = np.einsum("ac,bd->abcd", r1, r2)
    rho = DensityMatrixPair.from_dense(t, sectors="all")
    got = rhs_pair(rho, NetworkConfig.pair(params, 0.0), params.epsilon).to_dense()
    d1 = rhs_single(DensityMatrixSingle(r1), params, params.epsilon).elems
    d2 = rhs_single(DensityMatrixSingle(r2), params, params.epsilon).elems
    want = np.einsum("ac,bd->abcd", d1, r2) + np.einsum("ac,bd->abcd", r1, d2)
    np.testing.assert_allclose(got, want, atol=1e-13)


def _antisymmetric_state(c):
    t = np.zeros((c + 1,) * 4, dtype=complex)
    v = {(1, 0): 1 / np.sqrt(2), (0, 1): -1 / np.sqrt(2)}
    for (a, b), x in v.items():
        for (e, f), y in v.items():
            t[a, b, e, f] = x * y
    return t


def test_antisymmetric_photon_decays_at_four_j_under_coupling_alone():
    # gamma_s = 0 hook on the compiled kernel; reference is the dense
    # superoperator exponential restricted to photon numbers <= 2
    c, jc, tt = 2, 0.7, 0.9
    rho = DensityMatrixPair.from_dense(_antisymmetric_state(c))
    lay = rho.layout
    zero = np.zeros((c + 1, c + 1))
    out = np.empty_like(rho.data)
    _rhs_pair_kernel(rho.data, out, c, lay.sectors, lay.off, zero, zero, 0.0, jc)
    deriv = rho.with_data(out)
    assert abs(deriv.trace()) < 1e-14

    d = (c + 1) ** 2
    a = lowering(c)
    eye = np.eye(c + 1)
    jop = np.sqrt(jc) * (np.kron(a, eye) - np.kron(eye, a))
    lv = np.zeros((d * d, d * d), dtype=complex)
    for k in range(d * d):
        e = np.zeros(d * d)
        e[k] = 1
        lv[:, k] = dissipator(jop, e.reshape(d, d)).reshape(-1)
    final = (expm(lv * tt) @ _antisymmetric_state(c).reshape(-1)).reshape((c + 1,) * 4)
    pop = (final[1, 0, 1, 0] + final[0, 1, 0, 1] - final[1, 0, 0, 1] - final[0, 1, 1, 0]).real / 2
    assert pop == pytest.approx(np.exp(-4 * jc * tt), rel=1e-12)

    def kernel_rhs(r, e):
        o = np.empty_like(r.data)
        _rhs_pair_kernel(r.data, o, c, lay.sectors, lay.off, zero, zero, 0.0, jc)
        return r.with_data(o)

    ev = evolve(rho, kernel_rhs, 1e-3, tt, lambda t: 0.0, keep_states=True)
    np.testing.assert_allclose(ev.states[-1].to_dense(), final, atol=1e-10)


def test_antisymmetric_photon_with_cavity_loss():
    c, jc = 2, 0.7
    params = NopoParams(gamma_p=50, big_g=0.05)
    net = NetworkConfig.pair(params, jc)
    rho = DensityMatrixPair.from_dense(_antisymmetric_state(c))
    ev = evolve(rho, lambda r, e: rhs_pair(r, net, e), 1e-3, 0.5, lambda t: 0.0,
                keep_states=True)
    t = ev.states[-1].to_dense()
    pop = (t[1, 0, 1, 0] + t[0, 1, 0, 1] - t[1, 0, 0, 1] - t[0, 1, 1, 0]).real / 2
    assert pop == pytest.approx(np.exp(-(4 * jc + 2) * 0.5), rel=1e-9)


def test_pair_evolution_invariants():
    params = NopoParams.from_pump(50.0, 50.0, 3.0)
    net = NetworkConfig.pair(params, 4.0)
    c = 8
    ev = evolve(DensityMatrixPair.vacuum(c, sectors=range(-2 * c, 2 * c + 1)),
                lambda r, e: rhs_pair(r, net, e), 1e-3, 2.0, ramp_drive(params, 3.0, 1.0),
                snapshot_stride=500, keep_states=True, trace_tol=1e-3)
    for s in ev.states:
        t = s.to_dense()
        d = (c + 1) ** 2
        m = t.reshape(d, d)
        assert np.max(np.abs(m - m.conj().T)) < 1e-12
        assert abs(np.trace(m) - 1) < 1e-3
        assert np.min(np.diag(m).real) > -1e-10
        assert np.linalg.eigvalsh(m).min() > -1e-8
        # node exchange symmetry
        assert np.max(np.abs(t - t.transpose(1, 0, 3, 2))) < 1e-12
        # vacuum start never populates other phase sectors
        n = np.arange(c + 1)
        dmap = (n[:, None] + n[None, :])[:, :, None, None] - (n[:, None] + n[None, :])[None, None]
        assert np.max(np.abs(t[dmap != 0])) == 0
        # partial-trace consistency
        obs = observables_from_density(t, node=0).moments
        red = observables_from_density(s.partial_trace(0).elems).moments
        assert obs.n_mean == pytest.approx(red.n_mean, rel=1e-12, abs=1e-14)
        assert obs.n2_factorial == pytest.approx(red.n2_factorial, rel=1e-12, abs=1e-14)
        packed = s.density_observables()
        dense = observables_from_density(t)
        assert packed.moments.cross_coherence == pytest.approx(dense.moments.cross_coherence,
                                                               abs=1e-13)
        assert packed.moments.cross_number == pytest.approx(dense.moments.cross_number, abs=1e-12)
        np.testing.assert_allclose(packed.exchange_slice, dense.exchange_slice, atol=1e-14)
        np.testing.assert_allclose(packed.pair_slice, dense.pair_slice, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_pair_dense_roundtrip(seed, c):
    rng = np.random.default_rng(seed)
    t = random_hermitian((c + 1) ** 2, rng).reshape((c + 1,) * 4)
    rho = DensityMatrixPair.from_dense(t, sectors="all")
    assert np.array_equal(rho.to_dense(), t)
    assert rho.trace() == pytest.approx(1.0)
    before = rho.data.copy()
    rho.hermitize()
    np.testing.assert_allclose(rho.data, before, atol=1e-15)


# --- direct --------------------------------------------------------------------------------


def direct_oracle(rho, network, eps):
    """Dense Lindblad generator on the pump x signal x pump x signal space."""
    p = network.nodes[0]
    npump, ns = rho.n_pump, rho.n_signal
    ap, asig = lowering(npump), lowering(ns)
    ip, isg = np.eye(npump + 1), np.eye(ns + 1)

    def op(a_p1=None, a_s1=None, a_p2=None, a_s2=None):
        mats = [m if m is not None else i for m, i in
                zip((a_p1, a_s1, a_p2, a_s2), (ip, isg, ip, isg))]
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    dense = _direct_to_dense(rho)
    dim = dense.shape[0]
    ham = 1j * eps * (op(a_p1=ap.T) - op(a_p1=ap) + op(a_p2=ap.T) - op(a_p2=ap))
    out = -1j * (ham @ dense - dense @ ham)
    for kw in ({"a_p1": ap}, {"a_p2": ap}):
        out += p.gamma_p * dissipator(op(**kw), dense)
    for kw in ({"a_s1": asig}, {"a_s2": asig}):
        out += p.gamma_s * dissipator(op(**kw), dense)
    out += p.big_g * dissipator(op(a_p1=ap, a_s1=asig.T), dense)
    out += p.big_g * dissipator(op(a_p2=ap, a_s2=asig.T), dense)
    jop = np.sqrt(network.coupling_j) * (op(a_s1=asig) - op(a_s2=asig))
    out += dissipator(jop, dense)
    assert out.shape == (dim, dim)
    return out


def _direct_to_dense(rho):
    """Expand a packed direct state to a matrix over (p1, s1, p2, s2)."""
    lay = rho.layout
    npp, c = rho.n_pump + 1, rho.n_signal
    dim = (npp * (c + 1)) ** 2
    out = np.zeros((npp, c + 1, npp, c + 1, npp, c + 1, npp, c + 1), dtype=complex)
    for k, d, s, t, los, ws, lot, wt, start, shape in lay.blocks():
        blk = rho.data[start:start + int(np.prod(shape))].reshape(shape)
        for a in range(ws):
            s1 = los + a
            for b in range(wt):
                r1 = lot + b
                out[:, s1, :, s - s1, :, r1, :, t - r1] = blk[:, :, a, :, :, b]
    return out.reshape(dim, dim)


def _direct_from_dense(m, npump, ns, sectors):
    lay = _Layout(ns, sectors, n_pump=npump)
    npp = npump + 1
    t = m.reshape((npp, ns + 1) * 4)
    data = np.zeros(lay.size, dtype=complex)
    for k, d, s, tt, los, ws, lot, wt, start, shape in lay.blocks():
        blk = np.zeros(shape, dtype=complex)
        for a in range(ws):
            for b in range(wt):
                s1, r1 = los + a, lot + b
                blk[:, :, a, :, :, b] = t[:, s1, :, s - s1, :, r1, :, tt - r1]
        data[start:start + blk.size] = blk.reshape(-1)
    return DensityMatrixDirect(lay, data)


@pytest.mark.parametrize("jc", [0.0, 0.8])
def test_direct_matches_dense_lindblad(jc):
    npump, ns = 2, 2
    dim = ((npump + 1) * (ns + 1)) ** 2
    rng = np.random.default_rng(2)
    params = NopoParams.from_pump(3.0, 1.5, 1.2)
    net = NetworkConfig.pair(params, jc)
    m = random_hermitian(dim, rng)
    rho = _direct_from_dense(m, npump, ns, range(-2 * ns, 2 * ns + 1))
    assert np.allclose(_direct_to_dense(rho), m)
    got = _direct_to_dense(rhs_direct(rho, net, params.epsilon))
    want = direct_oracle(rho, net, params.epsilon)
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert abs(np.trace(got)) < 1e-12


def test_direct_uncoupled_pump_relaxes_to_coherent_state():
    params = NopoParams(gamma_p=2.0, big_g=0.0, epsilon=1.0)
    net = NetworkConfig.pair(params, 0.0)
    ev = evolve(DensityMatrixDirect.vacuum(8, 1), lambda r, e: rhs_direct(r, net, e), 5e-3, 6.0,
                lambda t: params.epsilon, keep_states=True)
    final = ev.states[-1]
    assert final.pump_mean() == pytest.approx(0.5, abs=1e-5)
    assert ev.records[-1].moments.n_mean == 0.0
    assert abs(final.trace() - 1) < 1e-12
