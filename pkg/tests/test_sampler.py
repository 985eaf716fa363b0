import numpy as np
import pytest
from scipy.stats import chisquare

from gaudin_rbm.ansatz import RbmParameters, init_random
from gaudin_rbm.errors import InvalidParameterError, ProvenanceError
from gaudin_rbm.model import config_index
from gaudin_rbm.sampler import (ChainState, born_distribution, estimate_mean,
                                exact_sample_set, metropolis_chain, metropolis_transition_matrix,
                                mix_seed)

from conftest import basis_state_params


def test_zero_params_uniform_and_acceptance_one():
    p = RbmParameters(np.zeros(3), np.zeros(2), np.zeros((3, 2)))
    ss = metropolis_chain(p, 50_000, burn_in=100, seed=1, swap_prob=0.0)
    assert ss.acceptance == 1.0
    counts = np.bincount(config_index(ss.configurations), minlength=8)
    assert np.all(np.abs(counts / 50_000 - 1 / 8) < 0.01)


def test_peaked_distribution():
    p = basis_state_params([1, -1, 1], strength=10.0)
    ss = metropolis_chain(p, 5_000, burn_in=200, seed=3)
    frac = np.mean(np.all(ss.configurations == [1, -1, 1], axis=1))
    assert frac > 0.999


@pytest.mark.parametrize("swap_prob, pair_prob", [(0.0, 0.0), (0.5, 0.0), (0.9, 0.0), (0.0, 0.6),
                                                  (0.5, 0.25)])
def test_transition_matrix_stationary(swap_prob, pair_prob):
    p = init_random(3, 3, 0.6, seed=11)
    T = metropolis_transition_matrix(p, swap_prob, pair_prob)
    pi = born_distribution(p)
    np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(T >= -1e-15)
    np.testing.assert_allclose(pi @ T, pi, atol=1e-14)
    # detailed balance
    flux = pi[:, None] * T
    np.testing.assert_allclose(flux, flux.T, atol=1e-15)


@pytest.mark.parametrize("swap_prob, pair_prob", [(0.0, 0.0), (0.5, 0.0), (0.5, 0.25)])
def test_frequencies_match_born(swap_prob, pair_prob):
    p = init_random(3, 4, 0.5, seed=5)
    n = 40_000
    ss = metropolis_chain(p, n, seed=8, thin=2, swap_prob=swap_prob, pair_prob=pair_prob)
    counts = np.bincount(config_index(ss.configurations), minlength=16)
    expected = born_distribution(p) * n
    # thinned chain is only approximately independent, so be lenient on the p-value
    assert chisquare(counts, expected).pvalue > 1e-4


def test_determinism_and_seed_sensitivity():
    p = init_random(4, seed=2)
    a = metropolis_chain(p, 2000, seed=42)
    b = metropolis_chain(p, 2000, seed=42)
    c = metropolis_chain(p, 2000, seed=43)
    np.testing.assert_array_equal(a.configurations, b.configurations)
    assert not np.array_equal(a.configurations, c.configurations)
    assert mix_seed(1, 0) != mix_seed(1, 1)


def test_table_and_direct_paths_agree():
    p = init_random(3, seed=6)
    x = ChainState(4, 9).run(p, 3000, 100, use_table=True)
    y = ChainState(4, 9).run(p, 3000, 100, use_table=False)
    np.testing.assert_array_equal(x.configurations, y.configurations)


def test_multi_chain_split():
    p = init_random(2, seed=0)
    ss = metropolis_chain(p, 1001, seed=1, n_chains=4)
    assert len(ss) == 1001 and ss.meta["n_chains"] == 4


def test_invalid_arguments():
    p = init_random(2, seed=0)
    with pytest.raises(InvalidParameterError):
        metropolis_chain(p, 0)
    with pytest.raises(InvalidParameterError):
        metropolis_chain(p, 10, swap_prob=1.0)
    with pytest.raises(InvalidParameterError):
        metropolis_chain(p, 10, swap_prob=0.6, pair_prob=0.4)
    with pytest.raises(InvalidParameterError):
        metropolis_chain(p, 10, pair_prob=-0.1)
    with pytest.raises(InvalidParameterError):
        metropolis_chain(p, 10, n_chains=0)
    with pytest.raises(InvalidParameterError):
        ChainState(4, 0).run(p, 10, 0)


def test_single_site_ignores_two_site_moves():
    p = init_random(0, 2, 0.3, seed=1)
    ss = metropolis_chain(p, 200, swap_prob=0.7, pair_prob=0.2)
    assert len(ss) == 200
    T = metropolis_transition_matrix(p, 0.7, 0.2)
    np.testing.assert_allclose(born_distribution(p) @ T, born_distribution(p), atol=1e-15)


def test_pair_flips_cross_an_empty_sector():
    """Weight split between J^z = +1 and -1 of two spins, nothing in J^z = 0.

    Only single flips connect the two sectors through the empty one, so a
    flip-only chain never crosses; pair flips jump straight across.
    """
    from gaudin_rbm.ansatz import RbmParameters
    # log|Psi| = 12 (s0 s1) via one hidden unit with huge weights: favours aligned spins
    p = RbmParameters(np.zeros(2), np.zeros(1), np.full((2, 1), 6.0))
    for pair_prob, crosses in ((0.0, False), (0.25, True)):
        ss = ChainState(2, 4).run(p, 4000, 0, swap_prob=0.0, pair_prob=pair_prob)
        up = np.mean(ss.configurations.sum(axis=1) > 0)
        assert (0.4 < up < 0.6) == crosses


def test_provenance_check():
    p, q = init_random(2, seed=0), init_random(2, seed=1)
    ss = metropolis_chain(p, 10)
    ss.check_source(p)
    with pytest.raises(ProvenanceError):
        ss.check_source(q)


def test_reduced_weights():
    p = init_random(2, seed=0)
    ss = metropolis_chain(p, 500, seed=2)
    configs, w, inv = ss.reduced
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(configs[inv], ss.configurations)
    ex = exact_sample_set(p)
    assert ex.exact and ex.reduced[1].sum() == pytest.approx(1.0)


def test_estimate_mean():
    rng = np.random.default_rng(0)
    x = rng.normal(2.0, 1.0, 40_000)
    m, se = estimate_mean(x)
    assert abs(m - 2.0) < 5 * se
    # batch means never reports less than the iid error
    assert 1 / 200 * 0.98 < se < 1 / 200 * 1.5
    mc, sec = estimate_mean(x + 1j * x)
    assert sec == pytest.approx(np.sqrt(2) * se, rel=1e-9)
    assert estimate_mean([3.0]) == (3.0, 0.0)
    with pytest.raises(InvalidParameterError):
        estimate_mean([])
    # correlated series: batch means must exceed the naive error
    y = np.repeat(rng.normal(size=400), 100)
    _, se_y = estimate_mean(y)
    assert se_y > 3 * y.std() / np.sqrt(y.size)
