import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nopo.errors import DivisionByZero, EmptyEnsemble
from nopo.observables import (MomentSet, derived_stats, moments_from_positive_p,
                              moments_from_wigner, observables_from_density, partial_trace)
from nopo.sde import K_CROSS, K_N1, K_N1SQ, K_N2, K_N2SQ, K_NN, N_RAW, TrajectoryState


def raw_rows(a1, a1d=None, a2=None, a2d=None):
    """Raw sample vectors from amplitude arrays (conjugates by default)."""
    a1 = np.asarray(a1, dtype=complex)
    a1d = np.conj(a1) if a1d is None else np.asarray(a1d, dtype=complex)
    raw = np.zeros((len(a1), N_RAW), dtype=complex)
    n1 = a1d * a1
    raw[:, K_N1], raw[:, K_N1SQ], raw[:, K_N1 + 2], raw[:, K_N1 + 3] = n1, n1 * n1, a1, a1d
    if a2 is not None:
        a2 = np.asarray(a2, dtype=complex)
        a2d = np.conj(a2) if a2d is None else np.asarray(a2d, dtype=complex)
        n2 = a2d * a2
        raw[:, K_N2], raw[:, K_N2SQ], raw[:, K_N2 + 2], raw[:, K_N2 + 3] = n2, n2 * n2, a2, a2d
        raw[:, K_CROSS] = a1d * a2
        raw[:, K_NN] = n1 * n2
    return raw


def cgauss(rng, size, var):
    """Circular complex Gaussian with ``E|z|^2 = var``."""
    s = math.sqrt(var / 2)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def lowering(c):
    return np.diag(np.sqrt(np.arange(1, c + 1, dtype=float)), 1)


def random_density(rng, dim, rank=None):
    m = rng.standard_normal((dim, rank or dim)) + 1j * rng.standard_normal((dim, rank or dim))
    r = m @ m.conj().T
    return r / np.trace(r)


# ---------------------------------------------------------------------------
# positive-P estimators


def test_coherent_amplitude_is_poissonian():
    states = [TrajectoryState(2 + 0j, 2 + 0j)] * 5
    s = derived_stats(moments_from_positive_p(states))
    assert s["n_mean"] == 4 and s["n2_factorial"] == 16
    assert s["g2"] == 1 and s["mandel_q"] == 0
    assert s["n_mean_err"] == 0


def test_thermal_glauber_samples_bunch(rng):
    z = cgauss(rng, 200_000, 3.0)
    m = moments_from_positive_p(raw_rows(z))
    s = derived_stats(m)
    assert abs(s["n_mean"] - 3.0) <= 3 * s["n_mean_err"]
    assert abs(s["g2"] - 2.0) <= 3 * s["g2_err"]
    assert m.imag_residue < 1e-10


def test_independent_conjugate_pairs_report_imaginary_residue(rng):
    z = cgauss(rng, 1000, 1.0)
    zd = np.conj(z) * (1 + 0.5j)
    assert moments_from_positive_p(raw_rows(z, zd)).imag_residue > 3


# ---------------------------------------------------------------------------
# Wigner estimators against known Wigner functions


def test_wigner_vacuum_has_no_photons(rng):
    m = moments_from_wigner(raw_rows(cgauss(rng, 200_000, 0.5)))
    assert abs(m.n_mean) <= 3 * m.n_err
    assert abs(m.n2_factorial) <= 3 * m.n2_err


def test_wigner_coherent_state(rng):
    beta = 1.5 - 0.5j
    m = moments_from_wigner(raw_rows(beta + cgauss(rng, 200_000, 0.5)))
    s = derived_stats(m)
    assert abs(s["n_mean"] - abs(beta) ** 2) <= 3 * s["n_mean_err"]
    assert abs(s["g2"] - 1.0) <= 3 * s["g2_err"]


@pytest.mark.parametrize("n_fock", [1, 2, 5])
def test_wigner_fock_moments_from_symmetric_ordering(n_fock):
    """Rows with |a|^2 in {N, N+1} reproduce the symmetric moments of |N>.

    For a number state ``<|a|^2>_W = N + 1/2`` and ``<|a|^4>_W = N^2 + N + 1/2``,
    so the corrected factorial moment is ``N (N - 1)`` exactly.
    """
    amp = np.sqrt(np.array([n_fock, n_fock + 1] * 50, dtype=float))
    m = moments_from_wigner(raw_rows(amp))
    assert m.n_mean == pytest.approx(n_fock, abs=1e-12)
    assert m.n2_factorial == pytest.approx(n_fock * (n_fock - 1), abs=1e-12)

    # the same numbers from operator products
    c = n_fock + 3
    a = lowering(c)
    ad = a.T
    rho = np.zeros((c + 1, c + 1))
    rho[n_fock, n_fock] = 1
    sym2 = 0.5 * (ad @ a + a @ ad)
    # symmetrized a+^2 a^2: average of the six orderings
    seqs = [(ad, ad, a, a), (ad, a, ad, a), (ad, a, a, ad), (a, ad, ad, a), (a, ad, a, ad),
            (a, a, ad, ad)]
    sym4 = sum(np.linalg.multi_dot(s) for s in seqs) / 6
    assert np.trace(rho @ sym2) == pytest.approx(n_fock + 0.5)
    assert np.trace(rho @ sym4) == pytest.approx(n_fock**2 + n_fock + 0.5)


# ---------------------------------------------------------------------------
# density matrices


def test_two_photon_state_is_antibunched():
    rho = np.diag([0.0, 0.0, 1.0, 0.0])
    s = derived_stats(observables_from_density(rho).moments)
    assert (s["n_mean"], s["g2"], s["mandel_q"]) == (2.0, 0.5, -1.0)
    assert s["g2_err"] == 0


def _pair_operators(c):
    a = lowering(c)
    eye = np.eye(c + 1)
    return np.kron(a, eye), np.kron(eye, a)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_pair_moments_match_operator_traces(c, seed):
    rng = np.random.default_rng(seed)
    dim = (c + 1) ** 2
    rho = random_density(rng, dim)
    a1, a2 = _pair_operators(c)
    obs = observables_from_density(rho.reshape(c + 1, c + 1, c + 1, c + 1), node=0).moments
    tr = lambda op: np.trace(rho @ op)
    n1 = a1.T @ a1
    assert obs.cross_coherence == pytest.approx(tr(a1.T @ a2), abs=1e-12)
    assert obs.cross_number == pytest.approx(tr(n1 @ a2.T @ a2).real, abs=1e-12)
    assert obs.n_mean == pytest.approx(tr(n1).real, abs=1e-12)
    assert obs.n2_factorial == pytest.approx(tr(a1.T @ a1.T @ a1 @ a1).real, abs=1e-12)
    r4 = rho.reshape(c + 1, c + 1, c + 1, c + 1)
    np.testing.assert_allclose(np.trace(partial_trace(r4, 0) @ lowering(c).T @ lowering(c)),
                               tr(n1), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_product_states_never_witness(c, seed):
    rng = np.random.default_rng(seed)
    r1, r2 = random_density(rng, c + 1), random_density(rng, c + 1)
    rho = np.einsum("ac,bd->abcd", r1, r2)
    m = observables_from_density(rho).moments
    assert abs(m.cross_coherence) ** 2 - m.cross_number <= 1e-12


def test_entangled_exchange_state_witnesses():
    # (|1,0> + |0,1>)/sqrt 2
    psi = np.zeros((2, 2))
    psi[1, 0] = psi[0, 1] = 1 / math.sqrt(2)
    rho = np.einsum("ab,cd->abcd", psi, psi)
    s = derived_stats(observables_from_density(rho).moments)
    assert s["hz1"] == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# derived statistics


pos = st.floats(1e-3, 1e3)


@given(pos, st.floats(0, 1e4))
def test_mandel_q_identity(n, n2):
    s = derived_stats(MomentSet(n_mean=n, n2_factorial=n2))
    assert s["mandel_q"] == pytest.approx(n * (s["g2"] - 1), rel=1e-12, abs=1e-12)


@given(arrays(float, (5, 5), elements=st.floats(-1, 1)), pos, st.floats(0, 10))
def test_error_propagation_is_nonnegative(a, n, n2):
    cov = a @ a.T
    s = derived_stats(MomentSet(n_mean=n, n2_factorial=n2, cross_coherence=0.3 - 0.2j,
                                cross_number=0.1, cov=cov))
    assert all(s[k] >= 0 for k in s if k.endswith("_err"))


def test_delta_method_matches_replicate_spread(rng):
    reps, size = 400, 500
    g2s, errs = [], []
    for _ in range(reps):
        z = 1.0 + cgauss(rng, size, 0.8)
        s = derived_stats(moments_from_positive_p(raw_rows(z)))
        g2s.append(s["g2"])
        errs.append(s["g2_err"])
    assert np.std(g2s, ddof=1) == pytest.approx(np.mean(errs), rel=0.1)


def test_undefined_ratios_and_empty_input():
    with pytest.raises(DivisionByZero):
        derived_stats(MomentSet(n_mean=0.0, n2_factorial=0.0))
    with pytest.raises(EmptyEnsemble):
        moments_from_positive_p([])
    with pytest.raises(EmptyEnsemble):
        moments_from_positive_p(np.zeros((0, N_RAW), dtype=complex))
