"""Gaudin magnet (central-spin model) Hamiltonian and its sparse action.

    H = B S_0^z + sum_k A_k S_0 . S_k ,   S^a = sigma^a / 2,  hbar = 1

Spin configurations are arrays of +1/-1 integers of length N+1; index 0 is
the central spin.  The off-diagonal part only contains the flip-flop terms
(A_k / 2)(S_0^+ S_k^- + S_0^- S_k^+), so each basis state connects to itself
and to at most N partners obtained by flipping spin 0 together with one
antiparallel bath spin.

Basis ordering used wherever a dense vector appears: spin j maps to bit j of
the basis index and sigma = +1 maps to bit value 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import InvalidParameterError

SPIN_DTYPE = np.int8


class ConnectedElement(NamedTuple):
    target: np.ndarray
    amplitude: float


def check_configuration(sigma, n_sites: int | None = None) -> np.ndarray:
    """Validate a spin configuration and return it as an int8 array."""
    arr = np.asarray(sigma)
    if arr.ndim != 1:
        raise InvalidParameterError(f"configuration must be 1-D, got shape {arr.shape}")
    if n_sites is not None and arr.shape[0] != n_sites:
        raise InvalidParameterError(
            f"configuration has {arr.shape[0]} spins, model expects {n_sites}"
        )
    if not np.all((arr == 1) | (arr == -1)):
        raise InvalidParameterError("configuration entries must be +1 or -1")
    return arr.astype(SPIN_DTYPE, copy=False)


def config_index(configs) -> np.ndarray | int:
    """Basis index of one configuration (int) or a batch (array of int64)."""
    arr = np.asarray(configs)
    bits = (arr > 0).astype(np.int64)
    weights = np.left_shift(np.int64(1), np.arange(arr.shape[-1], dtype=np.int64))
    idx = bits @ weights
    return int(idx) if arr.ndim == 1 else idx


def index_to_configs(indices, n_sites: int) -> np.ndarray:
    """Inverse of :func:`config_index` for an array of basis indices."""
    idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    bits = (idx[:, None] >> np.arange(n_sites, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(SPIN_DTYPE)


def all_configurations(n_sites: int) -> np.ndarray:
    """Every configuration of ``n_sites`` spins, row i has basis index i."""
    return index_to_configs(np.arange(1 << n_sites), n_sites)


def build_couplings(A: float, N: int, N0: float) -> np.ndarray:
    """Exponential coupling profile A_k = (A/N0) exp(-(k-1)/N0), k = 1..N."""
    if int(N) != N or N < 1:
        raise InvalidParameterError(f"N must be a positive integer, got {N!r}")
    if not N0 > 0:
        raise InvalidParameterError(f"N0 must be positive, got {N0!r}")
    if A == 0:
        raise InvalidParameterError("coupling scale A must be non-zero")
    k = np.arange(int(N), dtype=float)
    return (A / N0) * np.exp(-k / N0)


@dataclass(frozen=True)
class GaudinModel:
    B: float
    couplings: np.ndarray = field(repr=False)
    A: float = 1.0
    N0: float = 1.0

    def __post_init__(self):
        c = np.array(self.couplings, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "couplings", c)
        nonzero = c[c != 0]
        if nonzero.size and not (np.all(nonzero > 0) or np.all(nonzero < 0)):
            raise InvalidParameterError("all couplings A_k must share one sign")

    @classmethod
    def exponential(cls, N: int, N0: float, A: float, B: float) -> "GaudinModel":
        return cls(B=float(B), couplings=build_couplings(A, N, N0), A=float(A), N0=float(N0))

    @classmethod
    def from_mapping(cls, cfg: Mapping) -> "GaudinModel":
        """Build from config keys ``N, N0, A, B`` and optional ``couplings``."""
        try:
            B = float(cfg["B"])
        except KeyError as exc:
            raise InvalidParameterError("model config needs key 'B'") from exc
        explicit = cfg.get("couplings")
        if explicit is not None:
            couplings = np.asarray(explicit, dtype=float)
            if "N" in cfg and int(cfg["N"]) != couplings.size:
                raise InvalidParameterError(
                    f"N={cfg['N']} disagrees with {couplings.size} explicit couplings"
                )
            return cls(B=B, couplings=couplings, A=float(cfg.get("A", 1.0)),
                       N0=float(cfg.get("N0", 1.0)))
        missing = [k for k in ("N", "N0", "A") if k not in cfg]
        if missing:
            raise InvalidParameterError(f"model config missing keys: {missing}")
        return cls.exponential(int(cfg["N"]), float(cfg["N0"]), float(cfg["A"]), B)

    @property
    def N(self) -> int:
        return int(self.couplings.size)

    @property
    def n_sites(self) -> int:
        return self.N + 1

    @property
    def polarized_energy(self) -> float:
        """Energy of the all-up state, an exact eigenstate: (B + sum A_k / 2) / 2."""
        return 0.5 * self.B + 0.25 * float(self.couplings.sum())

    def to_dict(self) -> dict:
        return {"B": self.B, "A": self.A, "N0": self.N0, "N": self.N,
                "couplings": [float(x) for x in self.couplings]}


def diagonal_energy(sigma, m: GaudinModel) -> float:
    """<sigma|H|sigma> = B s0/2 + sum_k A_k s0 s_k / 4."""
    s = check_configuration(sigma, m.n_sites).astype(float)
    return float(0.5 * m.B * s[0] + 0.25 * s[0] * (m.couplings @ s[1:]))


def diagonal_energies(configs: np.ndarray, m: GaudinModel) -> np.ndarray:
    """Vectorized :func:`diagonal_energy` over a (K, N+1) batch."""
    s = np.asarray(configs, dtype=float)
    return 0.5 * m.B * s[:, 0] + 0.25 * s[:, 0] * (s[:, 1:] @ m.couplings)


def connected_configurations(sigma, m: GaudinModel) -> list[ConnectedElement]:
    """Sparse row of H: the diagonal element first, then flip-flop partners by k."""
    s = check_configuration(sigma, m.n_sites)
    out = [ConnectedElement(s.copy(), diagonal_energy(s, m))]
    for k in np.flatnonzero(s[1:] == -s[0]) + 1:
        t = s.copy()
        t[0] = -t[0]
        t[k] = -t[k]
        out.append(ConnectedElement(t, 0.5 * float(m.couplings[k - 1])))
    return out


def total_sz(sigma) -> float:
    """J^z eigenvalue sum_j sigma_j / 2 of a basis state."""
    s = check_configuration(sigma)
    return 0.5 * float(s.sum(dtype=np.int64))


def flip_flop_partners(configs: np.ndarray, m: GaudinModel):
    """All flip-flop targets of a (K, N+1) batch.

    Returns ``(rows, ks, targets, amplitudes)``: source row, bath index k,
    target configurations, and matrix elements A_k/2.
    """
    s = np.asarray(configs)
    rows, cols = np.nonzero(s[:, 1:] == -s[:, :1])
    ks = cols + 1
    targets = s[rows].copy()
    targets[:, 0] = -targets[:, 0]
    targets[np.arange(rows.size), ks] *= -1
    return rows, ks, targets, 0.5 * m.couplings[cols]


def default_N0(N: int) -> float:
    """Decay scale (N+1)/2 used for the reference calculations."""
    return (N + 1) / 2.0


def spin_sequence(values: Sequence[int]) -> np.ndarray:
    """Convenience constructor: ``spin_sequence([1, -1, -1])``."""
    return check_configuration(np.asarray(values))
