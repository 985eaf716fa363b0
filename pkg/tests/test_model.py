import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from gaudin_rbm.errors import InvalidParameterError
from gaudin_rbm.model import (GaudinModel, all_configurations, build_couplings, config_index,
                              connected_configurations, diagonal_energies, diagonal_energy,
                              flip_flop_partners, index_to_configs, total_sz)
from gaudin_rbm.oracle import hamiltonian_matrix


def test_build_couplings_examples():
    np.testing.assert_allclose(build_couplings(1, 3, 2), [0.5, 0.5 * math.exp(-0.5), 0.5 * math.exp(-1)],
                               rtol=0, atol=1e-15)
    np.testing.assert_array_equal(build_couplings(1, 1, 1), [1.0])
    c = build_couplings(1, 5, 3)
    assert c[0] == pytest.approx(1 / 3, abs=1e-16)
    assert c[4] == pytest.approx(math.exp(-4 / 3) / 3, abs=1e-16)


@pytest.mark.parametrize("A,N,N0", [(1, 0, 1), (1, -2, 1), (1, 3, 0), (1, 3, -1.0), (0, 3, 1)])
def test_build_couplings_rejects(A, N, N0):
    with pytest.raises(InvalidParameterError):
        build_couplings(A, N, N0)


def test_mixed_sign_couplings_rejected():
    with pytest.raises(InvalidParameterError):
        GaudinModel(B=0.1, couplings=[0.5, -0.2])


def test_diagonal_energy_examples():
    m1 = GaudinModel(B=0.0, couplings=[1.0])
    assert diagonal_energy([1, -1], m1) == pytest.approx(-0.25)
    assert diagonal_energy([1, 1], GaudinModel(B=2.0, couplings=[0.0])) == pytest.approx(1.0)
    assert diagonal_energy([1, 1, -1], GaudinModel(B=0.0, couplings=[1.0, 1.0])) == pytest.approx(0.0)


def test_diagonal_energy_length_mismatch():
    with pytest.raises(InvalidParameterError):
        diagonal_energy([1, -1, 1], GaudinModel(B=0.0, couplings=[1.0]))
    with pytest.raises(InvalidParameterError):
        diagonal_energy([1, 0], GaudinModel(B=0.0, couplings=[1.0]))


def test_connected_examples():
    m1 = GaudinModel(B=0.0, couplings=[1.0])
    row = connected_configurations([1, -1], m1)
    assert len(row) == 2
    np.testing.assert_array_equal(row[0].target, [1, -1])
    assert row[0].amplitude == pytest.approx(-0.25)
    np.testing.assert_array_equal(row[1].target, [-1, 1])
    assert row[1].amplitude == pytest.approx(0.5)
    assert len(connected_configurations([1, 1], m1)) == 1

    m2 = GaudinModel(B=0.0, couplings=[1.0, 1.0])
    row = connected_configurations([1, -1, -1], m2)
    assert row[0].amplitude == pytest.approx(-0.5)
    assert [list(e.target) for e in row[1:]] == [[-1, 1, -1], [-1, -1, 1]]
    assert all(e.amplitude == pytest.approx(0.5) for e in row[1:])


def test_total_sz_examples():
    assert total_sz([1, 1, 1]) == 1.5
    assert total_sz([1, -1]) == 0
    assert total_sz([-1] * 6) == -3


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.floats(-2, 2), st.lists(st.floats(0.05, 2.0), min_size=4, max_size=4))
def test_dense_from_rows_matches_oracle(N, B, cs):
    m = GaudinModel(B=B, couplings=cs[:N])
    dim = 1 << m.n_sites
    H = np.zeros((dim, dim))
    for sigma in all_configurations(m.n_sites):
        src = config_index(sigma)
        for el in connected_configurations(sigma, m):
            H[config_index(el.target), src] += el.amplitude
            if config_index(el.target) != src:
                # magnetization conservation and two-site structure
                assert total_sz(el.target) == total_sz(sigma)
                assert np.count_nonzero(el.target != sigma) == 2
                assert el.target[0] != sigma[0]
    np.testing.assert_array_equal(H, H.T)
    np.testing.assert_allclose(H, hamiltonian_matrix(m), atol=1e-15)


def test_batch_helpers_agree(paper_model):
    configs = all_configurations(paper_model.n_sites)
    np.testing.assert_allclose(diagonal_energies(configs, paper_model),
                               [diagonal_energy(s, paper_model) for s in configs])
    np.testing.assert_array_equal(index_to_configs(np.arange(64), 6), configs)
    rows, ks, targets, amps = flip_flop_partners(configs[:5], paper_model)
    for r, k, t, a in zip(rows, ks, targets, amps):
        row = connected_configurations(configs[r], paper_model)
        match = [e for e in row[1:] if np.array_equal(e.target, t)]
        assert len(match) == 1 and match[0].amplitude == pytest.approx(a)


def test_from_mapping_and_explicit_couplings():
    cfg = yaml.safe_load("N: 5\nN0: 3\nA: 3\nB: 0.35\n")
    m = GaudinModel.from_mapping(cfg)
    assert m.N == 5 and m.couplings[0] == pytest.approx(1.0)
    m2 = GaudinModel.from_mapping({"B": 0.1, "couplings": [0.3, 0.2]})
    np.testing.assert_array_equal(m2.couplings, [0.3, 0.2])
    with pytest.raises(InvalidParameterError):
        GaudinModel.from_mapping({"B": 0.1, "N": 3, "couplings": [0.3, 0.2]})
    with pytest.raises(InvalidParameterError):
        GaudinModel.from_mapping({"B": 0.1, "N": 3})


def test_polarized_energy(paper_model):
    up = np.ones(6, dtype=int)
    assert diagonal_energy(up, paper_model) == pytest.approx(paper_model.polarized_energy)
    assert len(connected_configurations(up, paper_model)) == 1
