"""Metropolis sampling from pi(sigma) = |Psi(sigma)|^2 / sum |Psi|^2.

Each proposal is one of three moves on an ordered pair of distinct sites or
a single site, all chosen uniformly:

- exchange the two spins (probability ``swap_prob``),
- flip both spins (probability ``pair_prob``),
- flip one spin (the remainder).

A proposal is accepted with probability min(1, |Psi(sigma')/Psi(sigma)|^2).
Every move is symmetric, so the chain satisfies detailed balance.  Converged
eigenstates of H put nearly all their weight in one magnetization sector:
exchanges move within it, single flips reach the neighbouring sectors and
pair flips jump two sectors at once, past a nearly empty neighbour.
One sweep is N+1 proposals.  The first
``burn_in`` retained slots are discarded, then one configuration is kept
every ``thin`` sweeps.

Seeding: a chain's generator is ``numpy.random.default_rng(mix_seed(seed, chain))``
where ``mix_seed`` is splitmix64 applied to ``seed XOR chain``.  The compiled
kernel consumes uniforms drawn from that generator (two per proposal), so
output depends only on (parameters, seed, hyperparameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .ansatz import RbmParameters, log_abs2_batch
from .errors import InvalidParameterError, ProvenanceError
from .model import SPIN_DTYPE, all_configurations, config_index, index_to_configs

_MASK64 = (1 << 64) - 1

# above this many sites the per-call table of log|Psi|^2 is not allocated
CACHE_MAX_SITES = 16
# uniforms drawn per kernel call
CHUNK_STEPS = 1 << 18
DEFAULT_SWAP_PROB = 0.5
DEFAULT_PAIR_PROB = 0.25


def mix_seed(seed: int, index: int = 0) -> int:
    """splitmix64 finalizer of ``seed ^ index``; documented stream-splitting rule."""
    z = (int(seed) ^ int(index)) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@numba.njit(cache=True)
def _log_abs_2cosh(x, y):
    # log|2 cosh(x + iy)| without overflow
    ax = abs(x)
    e2 = math.exp(-2.0 * ax)
    arg = e2 * e2 + 2.0 * math.cos(2.0 * y) * e2
    if arg <= -1.0:
        return -math.inf
    return ax + 0.5 * math.log1p(arg)


@numba.njit(cache=True)
def _log_abs2(s, a_re, b_re, b_im, w_re, w_im):
    n = s.shape[0]
    m = b_re.shape[0]
    acc = 0.0
    for j in range(n):
        acc += a_re[j] * s[j]
    for i in range(m):
        x = b_re[i]
        y = b_im[i]
        for j in range(n):
            x += w_re[j, i] * s[j]
            y += w_im[j, i] * s[j]
        acc += _log_abs_2cosh(x, y)
    return 2.0 * acc


@numba.njit(cache=True)
def _decode_move(u, n, swap_prob, pair_prob):
    """Map one uniform to a move (i, j, exchange); j = -1 for a single flip."""
    two = swap_prob + pair_prob
    if u < two:
        k = int(u / two * (n * (n - 1)))
        if k >= n * (n - 1):
            k = n * (n - 1) - 1
        i = k // (n - 1)
        j = k % (n - 1)
        if j >= i:
            j += 1
        return i, j, u < swap_prob
    v = (u - two) / (1.0 - two)
    i = int(v * n)
    if i >= n:
        i = n - 1
    return i, -1, False


@numba.njit(cache=True)
def _metropolis_kernel(a_re, b_re, b_im, w_re, w_im, state, table, known, first_slot,
                       burn_in, thin, swap_prob, pair_prob, u_move, u_acc, out, kept):
    """Advance ``state`` in place over the slots covered by the uniforms.

    ``table``/``known`` memoize log|Psi|^2 by basis index when non-empty.
    Returns (accepted proposals, retained count after this chunk).
    """
    n = state.shape[0]
    m = b_re.shape[0]
    use_table = table.shape[0] > 0
    per_slot = thin * n
    n_slots = u_move.shape[0] // per_slot

    idx = 0
    for j in range(n):
        if state[j] > 0:
            idx |= 1 << j
    # hidden angles and per-unit log|2cosh| kept incrementally when no table
    th_re = b_re.copy()
    th_im = b_im.copy()
    for i in range(m):
        for j in range(n):
            th_re[i] += w_re[j, i] * state[j]
            th_im[i] += w_im[j, i] * state[j]
    lc = np.empty(m)
    for i in range(m):
        lc[i] = _log_abs_2cosh(th_re[i], th_im[i])
    if use_table and known[idx]:
        cur = table[idx]
    else:
        cur = _log_abs2(state, a_re, b_re, b_im, w_re, w_im)
        if use_table:
            table[idx] = cur
            known[idx] = True
    new_lc = np.empty(m)
    dre = np.empty(m)
    dim = np.empty(m)

    accepted = 0
    step = 0
    for slot in range(n_slots):
        for _ in range(per_slot):
            i1, i2, exchange = _decode_move(u_move[step], n, swap_prob, pair_prob)
            if exchange and state[i1] == state[i2]:
                # exchanging equal spins is the identity move
                step += 1
                continue
            s1 = state[i1]
            nidx = idx ^ (1 << i1)
            s2 = 0
            if i2 >= 0:
                s2 = state[i2]
                nidx ^= 1 << i2
            if use_table:
                if known[nidx]:
                    prop = table[nidx]
                else:
                    state[i1] = -s1
                    if i2 >= 0:
                        state[i2] = -s2
                    prop = _log_abs2(state, a_re, b_re, b_im, w_re, w_im)
                    state[i1] = s1
                    if i2 >= 0:
                        state[i2] = s2
                    table[nidx] = prop
                    known[nidx] = True
            else:
                prop = cur - 4.0 * a_re[i1] * s1
                if i2 >= 0:
                    prop -= 4.0 * a_re[i2] * s2
                for i in range(m):
                    dre[i] = -2.0 * w_re[i1, i] * s1
                    dim[i] = -2.0 * w_im[i1, i] * s1
                    if i2 >= 0:
                        dre[i] -= 2.0 * w_re[i2, i] * s2
                        dim[i] -= 2.0 * w_im[i2, i] * s2
                    new_lc[i] = _log_abs_2cosh(th_re[i] + dre[i], th_im[i] + dim[i])
                    prop += 2.0 * (new_lc[i] - lc[i])
            d = prop - cur
            if d >= 0.0 or u_acc[step] < math.exp(d):
                state[i1] = -s1
                if i2 >= 0:
                    state[i2] = -s2
                idx = nidx
                cur = prop
                accepted += 1
                if not use_table:
                    for i in range(m):
                        th_re[i] += dre[i]
                        th_im[i] += dim[i]
                        lc[i] = new_lc[i]
            step += 1
        if first_slot + slot >= burn_in:
            for j in range(n):
                out[kept, j] = state[j]
            kept += 1
    return accepted, kept


@dataclass
class SampleSet:
    """Configurations drawn from pi(sigma; W) for one parameter set.

    ``weights`` is None for Monte Carlo samples (uniform weights).  Exact
    summation mode lists every basis state once with weight pi(sigma).
    """

    configurations: np.ndarray
    source_params: str
    weights: np.ndarray | None = None
    acceptance: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.configurations.shape[0]

    @property
    def n_sites(self) -> int:
        return self.configurations.shape[1]

    @property
    def exact(self) -> bool:
        return self.weights is not None

    @cached_property
    def reduced(self):
        """(unique configs, probability weights, inverse map into the raw samples)."""
        if self.weights is not None:
            return self.configurations, self.weights, np.arange(len(self))
        codes = config_index(self.configurations)
        if self.n_sites <= CACHE_MAX_SITES:
            counts = np.bincount(codes, minlength=1 << self.n_sites)
            uniq = np.flatnonzero(counts)
            slot = np.empty(counts.size, dtype=np.int64)
            slot[uniq] = np.arange(uniq.size)
            return index_to_configs(uniq, self.n_sites), counts[uniq] / len(self), slot[codes]
        uniq, first, inverse, counts = np.unique(
            codes, return_index=True, return_inverse=True, return_counts=True)
        return self.configurations[first], counts / counts.sum(), inverse

    def mean(self, unique_values: np.ndarray):
        """Weighted average of per-unique-config values along axis 0."""
        _, w, _ = self.reduced
        return np.tensordot(w, unique_values, axes=(0, 0))

    def check_source(self, p: RbmParameters) -> None:
        if self.source_params != p.fingerprint:
            raise ProvenanceError(
                f"samples come from parameters {self.source_params}, not {p.fingerprint}")


class ChainState:
    """Persistent single Markov chain: current configuration plus its generator."""

    def __init__(self, n_sites: int, seed: int, chain_index: int = 0):
        self.rng = np.random.default_rng(mix_seed(seed, chain_index))
        self.current = (2 * self.rng.integers(0, 2, n_sites) - 1).astype(SPIN_DTYPE)
        self.step_count = 0
        self.n_accepted = 0
        self.last_params: str | None = None

    def run(self, p: RbmParameters, n_samples: int, burn_in: int, thin: int = 1,
            warm_skip_burn_in: bool = False, use_table: bool | None = None,
            swap_prob: float = DEFAULT_SWAP_PROB, pair_prob: float = DEFAULT_PAIR_PROB) -> SampleSet:
        """Advance the chain and return ``n_samples`` configurations.

        With ``warm_skip_burn_in`` a chain already equilibrated under the same
        parameters skips the burn-in slots.
        """
        if n_samples < 1:
            raise InvalidParameterError("n_samples must be >= 1")
        if thin < 1 or burn_in < 0:
            raise InvalidParameterError("thin must be >= 1 and burn_in >= 0")
        if p.n_visible != self.current.size:
            raise InvalidParameterError("parameter size does not match chain")
        swap_prob, pair_prob = _check_moves(swap_prob, pair_prob, self.current.size)
        if warm_skip_burn_in and self.last_params == p.fingerprint:
            burn_in = 0
        if use_table is None:
            use_table = self.current.size <= CACHE_MAX_SITES
        n = self.current.size
        out = np.empty((n_samples, n), dtype=SPIN_DTYPE)
        size = (1 << n) if use_table else 0
        table, known = np.empty(size), np.zeros(size, dtype=np.bool_)
        args = tuple(np.ascontiguousarray(x) for x in (p.a.real, p.b.real, p.b.imag,
                                                       p.w.real, p.w.imag))
        total = burn_in + n_samples
        chunk = max(1, CHUNK_STEPS // (thin * n))
        acc = kept = 0
        for first in range(0, total, chunk):
            n_steps = min(chunk, total - first) * thin * n
            u = self.rng.random((2, n_steps))
            a, kept = _metropolis_kernel(*args, self.current, table, known, first, burn_in,
                                         thin, swap_prob, pair_prob, u[0], u[1], out, kept)
            acc += a
        steps = (n_samples + burn_in) * thin * self.current.size
        self.step_count += steps
        self.n_accepted += acc
        self.last_params = p.fingerprint
        return SampleSet(out, p.fingerprint, acceptance=acc / steps,
                         meta={"n_samples": n_samples, "burn_in": burn_in, "thin": thin,
                               "swap_prob": swap_prob, "pair_prob": pair_prob})


def default_burn_in(n_samples: int) -> int:
    return n_samples // 10


def _check_moves(swap_prob: float, pair_prob: float, n_sites: int) -> tuple[float, float]:
    """Validate the move mixture; a single site only admits single flips."""
    if not (swap_prob >= 0.0 and pair_prob >= 0.0 and swap_prob + pair_prob < 1.0):
        raise InvalidParameterError(
            f"need swap_prob, pair_prob >= 0 with sum < 1, got {swap_prob}, {pair_prob}")
    if n_sites < 2:
        return 0.0, 0.0
    return float(swap_prob), float(pair_prob)


def metropolis_chain(p: RbmParameters, n_samples: int, burn_in: int | None = None,
                     thin: int = 1, seed: int = 0, n_chains: int = 1,
                     swap_prob: float = DEFAULT_SWAP_PROB,
                     pair_prob: float = DEFAULT_PAIR_PROB) -> SampleSet:
    """Draw ``n_samples`` configurations, split evenly over ``n_chains`` chains."""
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be >= 1")
    if n_chains < 1:
        raise InvalidParameterError("n_chains must be >= 1")
    counts = [n_samples // n_chains + (c < n_samples % n_chains) for c in range(n_chains)]
    parts, acc = [], []
    for c, cnt in enumerate(counts):
        if cnt == 0:
            continue
        chain = ChainState(p.n_visible, seed, c)
        b = default_burn_in(cnt) if burn_in is None else burn_in
        ss = chain.run(p, cnt, b, thin, swap_prob=swap_prob, pair_prob=pair_prob)
        parts.append(ss.configurations)
        acc.append(ss.acceptance * cnt)
    return SampleSet(np.concatenate(parts), p.fingerprint, acceptance=sum(acc) / n_samples,
                     meta={"n_samples": n_samples, "burn_in": burn_in, "thin": thin,
                           "n_chains": n_chains, "seed": seed, "swap_prob": swap_prob,
                           "pair_prob": pair_prob})


def born_distribution(p: RbmParameters) -> np.ndarray:
    """Exact pi(sigma; W) over all basis states, in basis-index order."""
    configs = all_configurations(p.n_visible)
    logw = log_abs2_batch(p, configs)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def exact_sample_set(p: RbmParameters) -> SampleSet:
    """Exact-summation stand-in for a sample set: every state weighted by pi."""
    return SampleSet(all_configurations(p.n_visible), p.fingerprint,
                     weights=born_distribution(p), meta={"exact": True})


def estimate_mean(values, n_batches: int = 32) -> tuple[complex, float]:
    """Sample mean and a batch-means standard error.

    The error is the larger of the batch-means estimate and the naive i.i.d.
    one; for complex input the real and imaginary errors add in quadrature.
    """
    x = np.asarray(values)
    n = x.size
    if n == 0:
        raise InvalidParameterError("cannot average an empty list")
    mean = x.mean()
    if n == 1:
        return mean, 0.0

    def _se(v):
        naive = v.std(ddof=1) / math.sqrt(n)
        nb = min(n_batches, n // 2)
        if nb < 2:
            return naive
        size = n // nb
        bm = v[: nb * size].reshape(nb, size).mean(axis=1)
        return max(naive, bm.std(ddof=1) / math.sqrt(nb))

    if np.iscomplexobj(x):
        return complex(mean), float(math.hypot(_se(x.real), _se(x.imag)))
    return float(mean), float(_se(x))


def metropolis_transition_matrix(p: RbmParameters, swap_prob: float = DEFAULT_SWAP_PROB,
                                 pair_prob: float = DEFAULT_PAIR_PROB) -> np.ndarray:
    """Dense single-proposal kernel T[s, s'] of the flip/exchange/pair-flip chain."""
    n = p.n_visible
    q, r = _check_moves(swap_prob, pair_prob, n)
    dim = 1 << n
    logw = log_abs2_batch(p, all_configurations(n))
    T = np.zeros((dim, dim))

    def accept(s, t):
        return math.exp(min(0.0, logw[t] - logw[s]))

    for s in range(dim):
        for j in range(n):
            t = s ^ (1 << j)
            T[s, t] += (1.0 - q - r) / n * accept(s, t)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                t = s ^ (1 << i) ^ (1 << j)
                # an exchange of unequal spins and a pair flip reach the same state
                w = r + (q if ((s >> i) & 1) != ((s >> j) & 1) else 0.0)
                if w > 0:
                    T[s, t] += w / (n * (n - 1)) * accept(s, t)
        T[s, s] = 1.0 - T[s].sum()
    return T
