import numpy as np
import pytest
from scipy.linalg import expm

from gaudin_rbm.ansatz import init_random, log_psi
from gaudin_rbm.errors import InvalidParameterError, NumericalError, SizeGuardError
from gaudin_rbm.model import GaudinModel, all_configurations, config_index
from gaudin_rbm.oracle import (central_operator, full_spectrum, ground_sector_check,
                               hamiltonian_matrix, polarized_amplitude_sq, rbm_fidelity,
                               rbm_state_vector, sector_basis, sector_spectrum, time_evolve,
                               total_sz_diagonal, transition_weights)

from conftest import PAPER_LEVELS


def test_single_bath_spin_levels():
    # H = 1.0 S0.S1: triplet at +1/4, singlet at -3/4
    ev = full_spectrum(GaudinModel(B=0.0, couplings=[1.0])).eigenvalues
    np.testing.assert_allclose(ev, [-0.75, 0.25, 0.25, 0.25], atol=1e-14)


def test_paper_setting_levels(paper_model):
    spec = full_spectrum(paper_model)
    np.testing.assert_allclose(spec.eigenvalues[:6], PAPER_LEVELS, atol=1e-7)
    assert ground_sector_check(paper_model, spec) == 1
    assert spec.sector_sz[0] == 2.0


def test_sector_spectra_reassemble_full(paper_model):
    spec = full_spectrum(paper_model)
    parts = np.concatenate([sector_spectrum(paper_model, k)[0] for k in range(7)])
    np.testing.assert_allclose(np.sort(parts), spec.eigenvalues, atol=1e-12)
    evals, evecs, basis = sector_spectrum(paper_model, 1)
    assert len(basis) == 6
    assert evals[0] == pytest.approx(spec.eigenvalues[0], abs=1e-12)
    # embed the sector ground state and compare with the dense one
    v = np.zeros(64)
    v[basis.indices] = evecs[:, 0]
    assert abs(v @ spec.ground_state) == pytest.approx(1.0, abs=1e-10)


def test_sector_basis_counts():
    b = sector_basis(5, 2)
    assert len(b) == 10
    assert np.all((b.configurations < 0).sum(axis=1) == 2)
    np.testing.assert_array_equal(config_index(b.configurations), b.indices)
    with pytest.raises(InvalidParameterError):
        sector_basis(3, 4)


def test_hamiltonian_commutes_with_jz(paper_model):
    H = hamiltonian_matrix(paper_model)
    Jz = np.diag(total_sz_diagonal(paper_model.n_sites))
    np.testing.assert_allclose(H @ Jz, Jz @ H, atol=1e-14)
    Hs = hamiltonian_matrix(paper_model, sparse=True)
    np.testing.assert_allclose(Hs.toarray(), H)


def test_central_operators():
    sp_, sm = central_operator(2, "+").toarray(), central_operator(2, "-").toarray()
    sx, sy, sz = (central_operator(2, k).toarray() for k in "xyz")
    np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-15)
    np.testing.assert_allclose(sp_ @ sm - sm @ sp_, 2 * sz, atol=1e-15)
    # S0^+ raises spin 0: index 0 (all down) -> index 1
    assert sp_[1, 0] == 1.0
    with pytest.raises(InvalidParameterError):
        central_operator(2, "q")


def test_size_guard():
    big = GaudinModel(B=0.1, couplings=np.full(14, 0.1))
    with pytest.raises(SizeGuardError):
        hamiltonian_matrix(big)
    with pytest.raises(SizeGuardError):
        rbm_state_vector(init_random(14, 2, 0.1, seed=0))
    # a fixed-magnetization block of the same model is still fine
    evals, _, basis = sector_spectrum(big, 1)
    assert len(basis) == 15 and np.all(np.isfinite(evals))


def test_rbm_state_vector_and_fidelity():
    p = init_random(2, seed=1)
    v = rbm_state_vector(p)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    configs = all_configurations(3)
    ref = np.exp([log_psi(p, s) for s in configs])
    ref /= np.linalg.norm(ref)
    assert abs(np.vdot(ref, v)) == pytest.approx(1.0, abs=1e-12)
    assert rbm_fidelity(p, 3.0 * v) == pytest.approx(1.0, abs=1e-12)


def test_transition_weights_sum_rule(paper_model):
    spec = full_spectrum(paper_model)
    plus, minus = transition_weights(spec)
    g = spec.ground_state
    sz0 = g @ (central_operator(6, "z") @ g)
    assert plus.sum() == pytest.approx(0.5 - sz0, abs=1e-12)
    assert minus.sum() == pytest.approx(0.5 + sz0, abs=1e-12)
    assert plus.sum() + minus.sum() == pytest.approx(1.0, abs=1e-12)
    assert minus[1] == pytest.approx(0.0609, abs=1e-4)
    assert polarized_amplitude_sq(spec) == pytest.approx(plus.max(), abs=1e-12)


def test_time_evolve_matches_expm(small_model):
    spec = full_spectrum(small_model)
    Sx = central_operator(small_model.n_sites, "x").toarray()
    H = hamiltonian_matrix(small_model)
    psi0 = spec.ground_state + 0.3 * spec.eigenvectors[:, 3]
    psi0 = psi0 / np.linalg.norm(psi0)
    t = np.linspace(0, 10, 21)
    out = time_evolve(small_model, lambda s: 0.0, psi0, t)
    ref = []
    for s in t:
        v = expm(-1j * H * s) @ psi0
        ref.append(np.vdot(v, Sx @ v).real)
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_time_evolve_checks(small_model):
    psi0 = full_spectrum(small_model).ground_state
    with pytest.raises(InvalidParameterError):
        time_evolve(small_model, lambda s: 0.0, psi0, [0.0, 1.0, 3.0])
    with pytest.raises(NumericalError):
        # one huge RK4 step per interval blows the norm up
        time_evolve(small_model, lambda s: 0.0, psi0, np.linspace(0, 200, 5), substeps=1)
