"""Exact reference calculations for small systems.

Dense vectors use the basis ordering of :mod:`gaudin_rbm.model`: spin j is
bit j of the basis index, sigma = +1 is bit value 1.  So index 0 is the
all-down state and index 2**(N+1) - 1 the all-up state.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .ansatz import RbmParameters, log_psi_batch
from .errors import InvalidParameterError, NumericalError, SizeGuardError
from .model import (GaudinModel, all_configurations, config_index, diagonal_energies,
                    flip_flop_partners)

log = logging.getLogger(__name__)

MAX_SITES = 14
BASIS_CONVENTION = "index = sum_j 2^j [sigma_j = +1]; spin 0 is the central spin"


def _guard(n_sites: int, max_sites: int) -> None:
    if n_sites > max_sites:
        raise SizeGuardError(
            f"{n_sites} spins exceeds the dense limit of {max_sites}; "
            "use sector_spectrum for a fixed-magnetization block instead")


def hamiltonian_matrix(m: GaudinModel, sparse: bool = False, max_sites: int = MAX_SITES):
    """H assembled from the sparse rows (diagonal + flip-flop partners) of every basis state."""
    _guard(m.n_sites, max_sites)
    configs = all_configurations(m.n_sites)
    dim = configs.shape[0]
    rows, _, targets, amps = flip_flop_partners(configs, m)
    cols = config_index(targets)
    diag = np.arange(dim)
    H = sp.csr_matrix(
        (np.concatenate([diagonal_energies(configs, m), amps]),
         (np.concatenate([diag, rows]), np.concatenate([diag, cols]))),
        shape=(dim, dim))
    return H if sparse else H.toarray()


def central_operator(n_sites: int, kind: str) -> sp.csr_matrix:
    """S_0^kind for kind in {'+', '-', 'x', 'y', 'z'} as a sparse matrix."""
    dim = 1 << n_sites
    idx = np.arange(dim)
    up = (idx & 1).astype(bool)
    if kind == "z":
        return sp.diags(np.where(up, 0.5, -0.5)).tocsr()
    if kind == "+":
        src = idx[~up]
        return sp.csr_matrix((np.ones(src.size), (src | 1, src)), shape=(dim, dim))
    if kind == "-":
        return central_operator(n_sites, "+").T.tocsr()
    plus, minus = central_operator(n_sites, "+"), central_operator(n_sites, "-")
    if kind == "x":
        return (0.5 * (plus + minus)).tocsr()
    if kind == "y":
        return (-0.5j * (plus - minus)).tocsr()
    raise InvalidParameterError(f"unknown operator kind {kind!r}")


def total_sz_diagonal(n_sites: int) -> np.ndarray:
    """J^z for every basis index."""
    configs = all_configurations(n_sites)
    return 0.5 * configs.sum(axis=1, dtype=np.int64)


@dataclass(frozen=True)
class DenseSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sector_sz: np.ndarray
    basis: str = BASIS_CONVENTION

    @property
    def ground_state(self) -> np.ndarray:
        return self.eigenvectors[:, 0]


def full_spectrum(m: GaudinModel, max_sites: int = MAX_SITES) -> DenseSpectrum:
    """Complete eigendecomposition, eigenvalues ascending."""
    H = hamiltonian_matrix(m, max_sites=max_sites)
    evals, evecs = np.linalg.eigh(H)
    jz = total_sz_diagonal(m.n_sites)
    sector = np.abs(evecs) ** 2
    sector_sz = np.round(2.0 * (jz @ sector)) / 2.0
    return DenseSpectrum(evals, evecs, sector_sz)


@dataclass(frozen=True)
class SectorBasis:
    configurations: np.ndarray
    indices: np.ndarray
    n_down: int

    def __len__(self):
        return self.indices.size


def sector_basis(n_sites: int, n_down: int) -> SectorBasis:
    if not 0 <= n_down <= n_sites:
        raise InvalidParameterError(f"n_down must be in [0, {n_sites}], got {n_down}")
    full = (1 << n_sites) - 1
    idx = [full ^ sum(1 << j for j in down) for down in combinations(range(n_sites), n_down)]
    idx = np.sort(np.asarray(idx, dtype=np.int64))
    bits = (idx[:, None] >> np.arange(n_sites)) & 1
    return SectorBasis((2 * bits - 1).astype(np.int8), idx, n_down)


def sector_spectrum(m: GaudinModel, n_down: int):
    """Diagonalize H inside the sector with ``n_down`` down spins.

    Returns (eigenvalues, eigenvectors over the sector basis, SectorBasis).
    """
    basis = sector_basis(m.n_sites, n_down)
    pos = {int(i): k for k, i in enumerate(basis.indices)}
    dim = len(basis)
    H = np.diag(diagonal_energies(basis.configurations, m))
    rows, _, targets, amps = flip_flop_partners(basis.configurations, m)
    for r, t, a in zip(rows, config_index(targets), amps):
        H[r, pos[int(t)]] += a
    evals, evecs = np.linalg.eigh(H) if dim else (np.empty(0), np.empty((0, 0)))
    return evals, evecs, basis


def ground_sector_check(m: GaudinModel, spectrum: DenseSpectrum | None = None) -> int:
    """Number of down spins in the ground state; warns if A_k > 0 and it exceeds one."""
    spectrum = spectrum or full_spectrum(m)
    n_down = int(round(m.n_sites / 2 - spectrum.sector_sz[0]))
    if np.all(m.couplings > 0) and m.B >= 0 and n_down > 1:
        warnings.warn(f"ground state has {n_down} flipped spins, expected at most one",
                      RuntimeWarning, stacklevel=2)
    return n_down


def rbm_state_vector(p: RbmParameters, max_sites: int = MAX_SITES) -> np.ndarray:
    """Normalized dense vector of the RBM state."""
    _guard(p.n_visible, max_sites)
    lp = log_psi_batch(p, all_configurations(p.n_visible))
    v = np.exp(lp - lp.real.max())
    return v / np.linalg.norm(v)


def rbm_fidelity(p: RbmParameters, v: np.ndarray, max_sites: int = MAX_SITES) -> float:
    """|<v|psi_W>|^2 with both states normalized."""
    psi = rbm_state_vector(p, max_sites)
    v = np.asarray(v, dtype=complex)
    return float(abs(np.vdot(v, psi)) ** 2 / np.vdot(v, v).real)


def transition_weights(spectrum: DenseSpectrum, ground: int = 0):
    """|<j|S0^+|0>|^2 and |<j|S0^-|0>|^2 for every eigenstate j."""
    n_sites = int(round(math.log2(spectrum.eigenvectors.shape[0])))
    g = spectrum.eigenvectors[:, ground]
    V = spectrum.eigenvectors
    plus = np.abs(V.conj().T @ (central_operator(n_sites, "+") @ g)) ** 2
    minus = np.abs(V.conj().T @ (central_operator(n_sites, "-") @ g)) ** 2
    return plus, minus


def polarized_amplitude_sq(spectrum: DenseSpectrum) -> float:
    """|beta_0|^2: weight of the down-central, all-bath-up state in the ground state."""
    n_sites = int(round(math.log2(spectrum.eigenvectors.shape[0])))
    idx = (1 << n_sites) - 2
    return float(abs(spectrum.ground_state[idx]) ** 2)


def time_evolve(m: GaudinModel, drive: Callable[[float], float], psi0: np.ndarray,
                t_grid: np.ndarray, substeps: int | None = None, tol: float = 1e-6,
                max_refinements: int = 8, max_sites: int = MAX_SITES) -> np.ndarray:
    """<S0^x(t)> on ``t_grid`` for i dpsi/dt = (H + B_y(t) S0^y) psi, fixed-step RK4.

    Without an explicit ``substeps`` the step is halved until two successive
    trajectories agree to ``tol`` in max norm; the finer one is returned.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 2:
        raise InvalidParameterError("time grid needs at least two points")
    dt = np.diff(t_grid)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise InvalidParameterError("time grid must be uniform")
    H = hamiltonian_matrix(m, sparse=True, max_sites=max_sites).astype(complex)
    Sy = central_operator(m.n_sites, "y")
    Sx = central_operator(m.n_sites, "x")
    psi0 = np.asarray(psi0, dtype=complex)

    def run(k):
        return _rk4_trajectory(H, Sy, Sx, drive, psi0, t_grid, k)

    if substeps is not None:
        return run(substeps)
    bound = abs(m.B) / 2 + 0.75 * np.abs(m.couplings).sum()
    k = max(1, int(math.ceil(dt[0] * bound / 0.1)))
    coarse = run(k)
    for _ in range(max_refinements):
        fine = run(2 * k)
        if np.max(np.abs(fine - coarse)) < tol:
            return fine
        coarse, k = fine, 2 * k
    raise NumericalError(f"time step did not converge to {tol} after {max_refinements} halvings")


def _rk4_trajectory(H, Sy, Sx, drive, psi0, t_grid, substeps):
    h = (t_grid[1] - t_grid[0]) / substeps
    psi = psi0 / np.linalg.norm(psi0)

    def rhs(t, v):
        return -1j * (H @ v + drive(t) * (Sy @ v))

    out = np.empty(t_grid.size)
    out[0] = np.vdot(psi, Sx @ psi).real
    t = t_grid[0]
    for n in range(1, t_grid.size):
        for _ in range(substeps):
            k1 = rhs(t, psi)
            k2 = rhs(t + h / 2, psi + (h / 2) * k1)
            k3 = rhs(t + h / 2, psi + (h / 2) * k2)
            k4 = rhs(t + h, psi + h * k3)
            psi = psi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        t = t_grid[n]
        out[n] = np.vdot(psi, Sx @ psi).real
    drift = abs(np.linalg.norm(psi) - 1.0)
    if drift > 1e-6:
        raise NumericalError(f"norm drift {drift:.2e} exceeds 1e-6; reduce the step size")
    return out


def spectrum_rows(spectrum: DenseSpectrum):
    """Rows for the spectrum CSV export: (index, energy, sector_sz)."""
    for i, (e, s) in enumerate(zip(spectrum.eigenvalues, spectrum.sector_sz)):
        yield i, float(e), float(s)
