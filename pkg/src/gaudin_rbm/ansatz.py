"""Complex restricted Boltzmann machine wavefunction.

With hidden units h_i = +-1 traced out,

    log Psi(sigma) = sum_j a_j sigma_j + sum_i log(2 cosh theta_i),
    theta_i = b_i + sum_j w_ji sigma_j .

Everything is kept in the log domain.  The complex log is taken on the
principal branch, so only differences of log-amplitudes (ratios) and the
real part are meaningful.

Flat parameter order (used by the force vector, the geometric tensor and
checkpoints): ``[a_0..a_N, b_1..b_M, w_00, w_01, .., w_0M, w_10, ..]``,
i.e. a-block, b-block, then w row-major by visible index.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, InvalidParameterError
from .model import check_configuration, config_index

CHECKPOINT_VERSION = 1


def log_2cosh(z):
    """Stable principal-branch log(2 cosh z) for complex arrays."""
    z = np.asarray(z, dtype=complex)
    zz = np.where(z.real < 0, -z, z)
    return zz + np.log1p(np.exp(-2.0 * zz))


@dataclass(frozen=True, eq=False)
class RbmParameters:
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.a, dtype=complex).reshape(-1)
        b = np.array(self.b, dtype=complex).reshape(-1)
        w = np.array(self.w, dtype=complex)
        if b.size < 1:
            raise InvalidParameterError("RBM needs at least one hidden unit")
        if w.shape != (a.size, b.size):
            raise InvalidParameterError(
                f"weight matrix shape {w.shape} does not match ({a.size}, {b.size})"
            )
        for arr in (a, b, w):
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError("RBM parameters must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w", w)

    @property
    def n_visible(self) -> int:
        return self.a.size

    @property
    def n_hidden(self) -> int:
        return self.b.size

    @property
    def n_params(self) -> int:
        return self.a.size + self.b.size + self.w.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.w.ravel()])

    @classmethod
    def from_flat(cls, vec, n_visible: int, n_hidden: int) -> "RbmParameters":
        vec = np.asarray(vec, dtype=complex)
        expected = n_visible + n_hidden + n_visible * n_hidden
        if vec.size != expected:
            raise InvalidParameterError(f"flat vector has {vec.size} entries, expected {expected}")
        return cls(vec[:n_visible], vec[n_visible:n_visible + n_hidden],
                   vec[n_visible + n_hidden:].reshape(n_visible, n_hidden))

    def shifted(self, delta) -> "RbmParameters":
        """Parameters ``flat() + delta`` as a new object."""
        return RbmParameters.from_flat(self.flat() + delta, self.n_visible, self.n_hidden)

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(np.asarray([self.n_visible, self.n_hidden], dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.flat()).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class HiddenAngles:
    """theta_i for one (parameters, configuration) pair, tagged for staleness checks."""

    theta: np.ndarray
    params_fingerprint: str
    config_index: int


def _check_dims(p: RbmParameters, sigma) -> np.ndarray:
    return check_configuration(sigma, p.n_visible)


def hidden_angles(p: RbmParameters, sigma) -> HiddenAngles:
    s = _check_dims(p, sigma)
    theta = p.b + s @ p.w
    return HiddenAngles(theta, p.fingerprint, config_index(s))


def log_psi(p: RbmParameters, sigma) -> complex:
    s = _check_dims(p, sigma)
    theta = p.b + s @ p.w
    return complex(p.a @ s + log_2cosh(theta).sum())


def log_psi_batch(p: RbmParameters, configs) -> np.ndarray:
    """log Psi for each row of a (K, N+1) array; no validation, hot path."""
    s = np.asarray(configs, dtype=float)
    theta = p.b + s @ p.w
    return s @ p.a + log_2cosh(theta).sum(axis=1)


def log_abs2_batch(p: RbmParameters, configs) -> np.ndarray:
    """log |Psi|^2 per row, i.e. the unnormalized log sampling weight."""
    return 2.0 * log_psi_batch(p, configs).real


def amplitude_ratio(p: RbmParameters, angles: HiddenAngles, sigma, flips) -> complex:
    """Psi(sigma') / Psi(sigma) where sigma' flips the given sites, in O(M |flips|)."""
    s = _check_dims(p, sigma)
    if angles.params_fingerprint != p.fingerprint or angles.config_index != config_index(s):
        raise ConsistencyError("hidden angles are stale for this parameter/configuration pair")
    sites = sorted(set(int(j) for j in flips))
    if not 1 <= len(sites) <= 2 or sites[0] < 0 or sites[-1] >= s.size:
        raise InvalidParameterError(f"flip set must hold 1 or 2 valid sites, got {flips!r}")
    sv = s[sites].astype(float)
    new_theta = angles.theta - 2.0 * (sv @ p.w[sites])
    dlog = -2.0 * (p.a[sites] @ sv) + (log_2cosh(new_theta) - log_2cosh(angles.theta)).sum()
    return complex(np.exp(dlog))


def log_derivatives(p: RbmParameters, sigma) -> np.ndarray:
    """O_k = d log Psi / d W_k in the flat order (a, b, w row-major)."""
    s = _check_dims(p, sigma)
    return log_derivatives_batch(p, s[None, :])[0]


def log_derivatives_batch(p: RbmParameters, configs) -> np.ndarray:
    s = np.asarray(configs, dtype=float)
    t = np.tanh(p.b + s @ p.w)
    ow = (s[:, :, None] * t[:, None, :]).reshape(s.shape[0], -1)
    return np.concatenate([s.astype(complex), t, ow], axis=1)


def init_random(N: int, M: int | None = None, spread: float = 0.25, seed: int = 0) -> RbmParameters:
    """Gaussian initialization for N bath spins (N+1 visible units) and M hidden units.

    Real and imaginary parts of every parameter are independent N(0, spread^2).
    """
    if spread < 0:
        raise InvalidParameterError(f"init spread must be non-negative, got {spread}")
    n_vis = int(N) + 1
    M = n_vis if M is None else int(M)
    if M < 1:
        raise InvalidParameterError(f"hidden-unit count must be >= 1, got {M}")
    rng = np.random.default_rng(seed)
    n = n_vis + M + n_vis * M
    vec = spread * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return RbmParameters.from_flat(vec, n_vis, M)


# -- checkpoints -------------------------------------------------------------

def checkpoint_dict(p: RbmParameters, seed: int | None = None, metadata: dict | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "N": p.n_visible - 1,
        "M": p.n_hidden,
        "a_re": p.a.real.tolist(), "a_im": p.a.imag.tolist(),
        "b_re": p.b.real.tolist(), "b_im": p.b.imag.tolist(),
        "w_re": p.w.real.ravel().tolist(), "w_im": p.w.imag.ravel().tolist(),
        "seed": seed,
        "metadata": metadata or {},
    }


def params_from_checkpoint(doc: dict) -> RbmParameters:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidParameterError(f"unsupported checkpoint version {doc.get('version')!r}")
    n_vis, M = int(doc["N"]) + 1, int(doc["M"])
    a = np.asarray(doc["a_re"]) + 1j * np.asarray(doc["a_im"])
    b = np.asarray(doc["b_re"]) + 1j * np.asarray(doc["b_im"])
    w = (np.asarray(doc["w_re"]) + 1j * np.asarray(doc["w_im"])).reshape(n_vis, M)
    return RbmParameters(a, b, w)


def save_checkpoint(path, p: RbmParameters, seed=None, metadata=None) -> Path:
    # json writes floats with repr(), the shortest string that round-trips exactly
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(p, seed, metadata), indent=1, sort_keys=True))
    return path


def load_checkpoint(path) -> tuple[RbmParameters, dict]:
    doc = json.loads(Path(path).read_text())
    return params_from_checkpoint(doc), doc
