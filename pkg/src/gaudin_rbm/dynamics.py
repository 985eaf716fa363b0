"""Spectral function, transverse susceptibility and linear response of the central spin.

All dynamical quantities are built from a :class:`SpectrumBundle`, i.e.
excitation energies Delta_j = E_j - E_0 and squared ladder matrix elements
m_plus_sq_j = |<j|S0^+|0>|^2, m_minus_sq_j = |<j|S0^-|0>|^2.  Inserting a
complete set of eigenstates into the retarded commutator gives

    A_0(w)     = 2 pi sum_j [m_plus_sq_j d_g(w - Delta_j) - m_minus_sq_j d_g(w + Delta_j)]
    chi_xy(t)  = -1/2 sum_j (m_plus_sq_j - m_minus_sq_j) cos(Delta_j t) e^{-g t},  t >= 0

with d_g the unit-area Lorentzian of half width g.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .ansatz import RbmParameters, log_psi_batch
from .errors import ConsistencyError, InvalidParameterError
from .model import GaudinModel
from .sampler import SampleSet, estimate_mean, metropolis_chain

log = logging.getLogger(__name__)

RELATIVE_STDERR_BOUND = 1e-2
DEGENERACY_TOL = 1e-9
FFT_THRESHOLD = 4096


# -- drive --------------------------------------------------------------------

def gaussian_envelope(x, width: float):
    """Unit-area Gaussian g(x, width)."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / width) ** 2) / (math.sqrt(2.0 * math.pi) * width)


@dataclass(frozen=True)
class DrivePulse:
    B1: float
    B2: float
    t_bar: float
    tau1: float
    tau2: float
    carrier: float

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise InvalidParameterError(f"pulse widths must be positive, got {self.tau1}, {self.tau2}")

    def __call__(self, t):
        return drive_field(t, self)

    @classmethod
    def reference(cls, carrier: float, unit: float = 1.0) -> "DrivePulse":
        """The two-component test pulse, with energies in units ``unit`` = A/N0."""
        return cls(B1=5.0 * unit, B2=5.0 * unit, t_bar=200.0 / unit, tau1=100.0 / unit,
                   tau2=50.0 / unit, carrier=carrier)


def drive_field(t, pulse: DrivePulse):
    """B_y(t) = B1 g(t - t_bar, tau1) cos(carrier t) + B2 g(t - t_bar, tau2)."""
    t = np.asarray(t, dtype=float)
    x = t - pulse.t_bar
    out = (pulse.B1 * gaussian_envelope(x, pulse.tau1) * np.cos(pulse.carrier * t)
           + pulse.B2 * gaussian_envelope(x, pulse.tau2))
    return float(out) if out.ndim == 0 else out


# -- bundle ---------------------------------------------------------------------

@dataclass(frozen=True)
class PolarizedPeak:
    delta: float
    weight: float
    stderr: float = 0.0


@dataclass
class SpectrumBundle:
    """Everything the dynamics needs.  Levels are sorted by Delta, all positive.

    ``complete`` marks a bundle that holds every eigenstate (oracle bundles);
    otherwise all levels must lie at or below ``omega_max``.  The polarized
    peak is kept separately since it sits far above the cutoff.
    """

    ground_energy: float
    deltas: np.ndarray
    m_plus_sq: np.ndarray
    m_minus_sq: np.ndarray
    gamma: float
    omega_max: float
    m_plus_stderr: np.ndarray | None = None
    m_minus_stderr: np.ndarray | None = None
    delta_stderr: np.ndarray | None = None
    polarized: PolarizedPeak | None = None
    complete: bool = False
    next_delta: float | None = None
    occupations: np.ndarray | None = None
    provenance: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float).reshape(-1)
        n = self.deltas.size
        self.m_plus_sq = np.asarray(self.m_plus_sq, dtype=float).reshape(-1)
        self.m_minus_sq = np.asarray(self.m_minus_sq, dtype=float).reshape(-1)
        for name in ("m_plus_stderr", "m_minus_stderr", "delta_stderr"):
            v = getattr(self, name)
            setattr(self, name, np.zeros(n) if v is None else np.asarray(v, dtype=float).reshape(-1))
        self.validate()

    def validate(self) -> None:
        n = self.deltas.size
        for name in ("m_plus_sq", "m_minus_sq", "m_plus_stderr", "m_minus_stderr", "delta_stderr"):
            if getattr(self, name).size != n:
                raise ConsistencyError(f"{name} has {getattr(self, name).size} entries, expected {n}")
        if self.gamma < 0:
            raise InvalidParameterError(f"broadening must be non-negative, got {self.gamma}")
        if n and np.any(self.deltas <= 0):
            raise ConsistencyError("excitation energies must be positive")
        if n > 1 and np.any(np.diff(self.deltas) <= DEGENERACY_TOL):
            raise ConsistencyError("excitation energies must be strictly ascending (no degeneracies)")
        for m, s, label in ((self.m_plus_sq, self.m_plus_stderr, "plus"),
                            (self.m_minus_sq, self.m_minus_stderr, "minus")):
            bad = m < -4.0 * s - 1e-12
            if np.any(bad):
                raise ConsistencyError(
                    f"squared {label} elements {m[bad]} are negative beyond statistical error")
        if not self.complete and n:
            if self.deltas[-1] > self.omega_max:
                raise ConsistencyError(
                    f"level at {self.deltas[-1]:.6g} exceeds the cutoff {self.omega_max:.6g}")
            if self.next_delta is not None and not self.omega_max < self.next_delta:
                raise ConsistencyError("cutoff must lie below the next (excluded) level")

    @property
    def n_levels(self) -> int:
        return self.deltas.size

    def peaks(self):
        """(Delta, m_plus_sq, m_minus_sq) including the polarized peak as a plus-only level."""
        d, p, m = self.deltas, self.m_plus_sq, self.m_minus_sq
        if self.polarized is not None:
            d = np.append(d, self.polarized.delta)
            p = np.append(p, self.polarized.weight)
            m = np.append(m, 0.0)
        return d, p, m

    def truncated(self, omega_max: float) -> "SpectrumBundle":
        keep = self.deltas <= omega_max
        nxt = self.deltas[~keep][0] if np.any(~keep) else None
        return SpectrumBundle(
            self.ground_energy, self.deltas[keep], self.m_plus_sq[keep], self.m_minus_sq[keep],
            self.gamma, omega_max, self.m_plus_stderr[keep], self.m_minus_stderr[keep],
            self.delta_stderr[keep], self.polarized, False, nxt, None, list(self.provenance),
            list(self.flags))

    def with_gamma(self, gamma: float) -> "SpectrumBundle":
        out = SpectrumBundle.from_dict(self.to_dict())
        out.gamma = float(gamma)
        out.validate()
        return out

    def to_dict(self) -> dict:
        return {
            "ground_energy": float(self.ground_energy),
            "deltas": self.deltas.tolist(),
            "delta_stderr": self.delta_stderr.tolist(),
            "m_plus_sq": self.m_plus_sq.tolist(),
            "m_plus_stderr": self.m_plus_stderr.tolist(),
            "m_minus_sq": self.m_minus_sq.tolist(),
            "m_minus_stderr": self.m_minus_stderr.tolist(),
            "gamma": float(self.gamma),
            "omega_max": float(self.omega_max),
            "polarized": None if self.polarized is None else asdict(self.polarized),
            "complete": self.complete,
            "next_delta": self.next_delta,
            "occupations": None if self.occupations is None else np.asarray(self.occupations).tolist(),
            "provenance": self.provenance,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SpectrumBundle":
        pol = doc.get("polarized")
        return cls(
            ground_energy=doc["ground_energy"], deltas=doc["deltas"],
            m_plus_sq=doc["m_plus_sq"], m_minus_sq=doc["m_minus_sq"],
            gamma=doc["gamma"], omega_max=doc["omega_max"],
            m_plus_stderr=doc.get("m_plus_stderr"), m_minus_stderr=doc.get("m_minus_stderr"),
            delta_stderr=doc.get("delta_stderr"),
            polarized=None if pol is None else PolarizedPeak(**pol),
            complete=doc.get("complete", False), next_delta=doc.get("next_delta"),
            occupations=doc.get("occupations"), provenance=list(doc.get("provenance", [])),
            flags=list(doc.get("flags", [])))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "SpectrumBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- matrix-element estimators ------------------------------------------------------

@dataclass(frozen=True)
class TransitionElements:
    m_plus_sq: float
    m_minus_sq: float
    m_plus_stderr: float
    m_minus_stderr: float
    flags: tuple = ()


def _cross_terms(p_num: RbmParameters, p_den: RbmParameters, samples: SampleSet, need_up: bool):
    """Per-sample <sum_s' <s|S0^(+/-)|s'> Psi_num(s') / Psi_den(s)> under pi_den.

    S0^+ acting to the left connects s to the central-flipped s' when s_0 = +1
    (``need_up``); S0^- when s_0 = -1.  Evaluated on unique configurations.
    """
    uniq, _, inverse = samples.reduced
    hit = (uniq[:, 0] > 0) if need_up else (uniq[:, 0] < 0)
    vals = np.zeros(uniq.shape[0], dtype=complex)
    if np.any(hit):
        src = uniq[hit]
        tgt = src.copy()
        tgt[:, 0] = -tgt[:, 0]
        vals[hit] = np.exp(log_psi_batch(p_num, tgt) - log_psi_batch(p_den, src))
    if samples.exact:
        return vals
    return vals[inverse]


def _mean(samples: SampleSet, per_sample: np.ndarray):
    if samples.exact:
        return complex(samples.weights @ per_sample), 0.0
    return estimate_mean(per_sample)


def _product(x, sx, y, sy):
    value = (x * y).real
    err = math.hypot(abs(y) * sx, abs(x) * sy)
    return float(value), float(err)


def transition_elements(w0: RbmParameters, wj: RbmParameters, n_samples: int | None = None,
                        seed: int = 0, samples0: SampleSet | None = None,
                        samplesj: SampleSet | None = None,
                        stderr_bound: float = RELATIVE_STDERR_BOUND) -> TransitionElements:
    """|<j|S0^+|0>|^2 and |<j|S0^-|0>|^2 from two cross-estimates each.

    Samples can be passed in (e.g. to share the ground-state chain across
    levels or to use exact summation); otherwise ``n_samples`` are drawn.
    """
    if w0.n_visible != wj.n_visible:
        raise InvalidParameterError("parameter sets have different visible dimensions")
    if samples0 is None or samplesj is None:
        if n_samples is None:
            raise InvalidParameterError("need n_samples or both sample sets")
    if samples0 is None:
        samples0 = metropolis_chain(w0, n_samples, seed=seed)
    if samplesj is None:
        samplesj = metropolis_chain(wj, n_samples, seed=seed + 1)
    samples0.check_source(w0)
    samplesj.check_source(wj)

    # <W0|S0^-|Wj>/<W0|W0> and <Wj|S0^+|W0>/<Wj|Wj>
    a, sa = _mean(samples0, _cross_terms(wj, w0, samples0, need_up=False))
    b, sb = _mean(samplesj, _cross_terms(w0, wj, samplesj, need_up=True))
    plus, splus = _product(a, sa, b, sb)
    # <W0|S0^+|Wj>/<W0|W0> and <Wj|S0^-|W0>/<Wj|Wj>
    c, sc = _mean(samples0, _cross_terms(wj, w0, samples0, need_up=True))
    d, sd = _mean(samplesj, _cross_terms(w0, wj, samplesj, need_up=False))
    minus, sminus = _product(c, sc, d, sd)

    flags = []
    for label, v, s in (("plus", plus, splus), ("minus", minus, sminus)):
        # only elements that are resolved from zero can meaningfully miss the bound
        if abs(v) > 4.0 * s and s > stderr_bound * abs(v):
            flags.append(f"{label}: relative stderr {s / abs(v):.3g} above {stderr_bound:g}")
    for f in flags:
        warnings.warn(f, RuntimeWarning, stacklevel=2)
    return TransitionElements(plus, minus, splus, sminus, tuple(flags))


def polarized_state_index(n_sites: int) -> int:
    """Basis index of |down, up, up, ...>."""
    return (1 << n_sites) - 2


def polarized_weight(w0: RbmParameters, samples0: SampleSet) -> tuple[float, float]:
    """|beta_0|^2 = pi_0(down, up, ..., up), estimated by its sample frequency."""
    samples0.check_source(w0)
    uniq, weights, inverse = samples0.reduced
    target = (uniq[:, 0] < 0) & np.all(uniq[:, 1:] > 0, axis=1)
    if samples0.exact:
        return float(weights[target].sum()), 0.0
    hit = target[inverse].astype(float)
    mean, err = estimate_mean(hit)
    return float(mean), float(err)


# -- dynamical response -------------------------------------------------------------

def lorentzian(x, gamma: float):
    return (gamma / math.pi) / (np.asarray(x, dtype=float) ** 2 + gamma ** 2)


def spectral_function(bundle: SpectrumBundle, omega_grid) -> np.ndarray:
    """A_0(w) on the grid; negative-frequency (minus) peaks enter with negative weight."""
    if bundle.n_levels == 0 and bundle.polarized is None:
        raise InvalidParameterError("spectral function of an empty bundle")
    if not bundle.gamma > 0:
        raise InvalidParameterError("spectral function needs a positive broadening")
    w = np.asarray(omega_grid, dtype=float)
    d, p, m = bundle.peaks()
    g = bundle.gamma
    out = (lorentzian(w[:, None] - d[None, :], g) @ p
           - lorentzian(w[:, None] + d[None, :], g) @ m)
    return 2.0 * math.pi * out


def susceptibility_xy(bundle: SpectrumBundle, t) -> np.ndarray:
    """chi_xy(t), zero for t < 0."""
    t = np.asarray(t, dtype=float)
    d, p, m = bundle.peaks()
    tt = np.maximum(t, 0.0)
    out = -0.5 * (np.cos(np.multiply.outer(tt, d)) @ (p - m)) * np.exp(-bundle.gamma * tt)
    return np.where(t >= 0, out, 0.0)


def _check_uniform(t_grid) -> tuple[np.ndarray, float]:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise InvalidParameterError("time grid needs at least two points")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12) or dt[0] <= 0:
        raise InvalidParameterError("time grid must be uniform and increasing")
    if abs(t[0]) > 1e-12 * max(1.0, abs(dt[0])):
        raise InvalidParameterError("time grid must start at t = 0")
    return t, float(dt[0])


def _conv(a, b, n):
    if a.size > FFT_THRESHOLD:
        return fftconvolve(a, b)[:n]
    return np.convolve(a, b)[:n]


def convolve_response(chi: np.ndarray, drive: np.ndarray, dt: float, rule: str = "left") -> np.ndarray:
    """Discrete causal convolution of sampled chi and drive.

    ``left``: out_n = sum_{m=1}^{n} chi_m B_{n-m} dt (out_0 = 0).
    ``trapezoid``: the trapezoid rule over m = 0..n.
    """
    chi = np.asarray(chi, dtype=float)
    drive = np.asarray(drive, dtype=float)
    n = chi.size
    out = np.zeros(n)
    if n < 2:
        return out
    # sum_{m=1}^{n} chi_m B_{n-m} is entry n-1 of chi[1:] * B
    out[1:] = _conv(chi[1:], drive, n - 1) * dt
    if rule == "left":
        return out
    if rule == "trapezoid":
        out[1:] += 0.5 * dt * (chi[0] * drive[1:] - chi[1:] * drive[0])
        return out
    raise InvalidParameterError(f"unknown quadrature rule {rule!r}")


def linear_response(bundle: SpectrumBundle, pulse, t_grid, rule: str = "left") -> np.ndarray:
    """<S0^x(t_n)> = (chi_xy * B_y)(t_n) on a uniform grid starting at 0."""
    t, dt = _check_uniform(t_grid)
    drive = pulse(t) if callable(pulse) else np.asarray(pulse, dtype=float)
    return convolve_response(susceptibility_xy(bundle, t), drive, dt, rule)


def default_omega_grid(bundle: SpectrumBundle, model: GaudinModel | None = None,
                       n_points: int = 2048) -> np.ndarray:
    """Uniform grid over [-1.2 omega_max, 1.2 (B + sum A_k / 2)]."""
    if model is not None:
        top = model.B + 0.5 * float(model.couplings.sum())
    elif bundle.polarized is not None:
        top = bundle.polarized.delta
    else:
        top = bundle.omega_max
    return np.linspace(-1.2 * bundle.omega_max, 1.2 * top, n_points)


# -- bundle assembly ------------------------------------------------------------------

def merge_degenerate(deltas, plus, minus, tol: float = 1e-8):
    """Combine levels with equal Delta (within ``tol``) by summing their weights."""
    order = np.argsort(deltas, kind="stable")
    d, p, m = np.asarray(deltas)[order], np.asarray(plus)[order], np.asarray(minus)[order]
    out_d, out_p, out_m = [], [], []
    for di, pi, mi in zip(d, p, m):
        if out_d and di - out_d[-1] <= tol:
            out_p[-1] += pi
            out_m[-1] += mi
        else:
            out_d.append(di)
            out_p.append(pi)
            out_m.append(mi)
    return np.array(out_d), np.array(out_p), np.array(out_m)


def oracle_bundle(model: GaudinModel, gamma: float, omega_max: float, spectrum=None) -> SpectrumBundle:
    """Complete bundle from dense diagonalization.

    Degenerate excitations are merged (their peaks coincide, so every
    dynamical quantity is unchanged).  The exact polarized eigenstate is
    split off as the polarized peak when the ground state connects to it.
    """
    from . import oracle

    spectrum = spectrum if spectrum is not None else oracle.full_spectrum(model)
    plus, minus = oracle.transition_weights(spectrum)
    E = spectrum.eigenvalues
    deltas = E[1:] - E[0]
    plus, minus = plus[1:].copy(), minus[1:].copy()
    n_sites = model.n_sites
    pol_delta = model.polarized_energy - E[0]
    pol = None
    beta0 = oracle.polarized_amplitude_sq(spectrum)
    if beta0 > 0:
        # the all-up state is the only target of S0^+ from |down, up, ..., up>
        all_up = np.abs(spectrum.eigenvectors[(1 << n_sites) - 1, 1:]) ** 2
        j = int(np.argmax(all_up))
        if abs(deltas[j] - pol_delta) < 1e-9 and all_up[j] > 1 - 1e-9:
            pol = PolarizedPeak(float(pol_delta), float(plus[j]))
            plus[j] = 0.0
    keep = deltas > DEGENERACY_TOL
    d, p, m = merge_degenerate(deltas[keep], plus[keep], minus[keep])
    return SpectrumBundle(float(E[0]), d, p, m, gamma, omega_max, polarized=pol,
                          complete=True, provenance=[{"source": "dense"}])


def reestimate_energy(params: RbmParameters, model: GaudinModel, samples: SampleSet):
    """Energy of an RBM state and its standard error from a fresh sample set."""
    from .optimizer import local_energies

    samples.check_source(params)
    uniq, _, inverse = samples.reduced
    e_loc = local_energies(params, uniq, model)
    if samples.exact:
        return complex(samples.weights @ e_loc), 0.0
    return estimate_mean(e_loc[inverse])


def rbm_bundle(states: Sequence[RbmParameters], model: GaudinModel, gamma: float, omega_max: float,
               n_samples: int, seed: int = 0, exact: bool = False, provenance: Sequence | None = None,
               next_delta: float | None = None, stderr_bound: float = RELATIVE_STDERR_BOUND,
               n_chains: int = 1, burn_in: int | None = None, thin: int = 1,
               swap_prob: float = 0.5, pair_prob: float = 0.25) -> SpectrumBundle:
    """Bundle from RBM eigenstates (ground state first).

    Each state is sampled once with ``n_samples`` (or summed exactly); those
    samples serve both the energy re-estimate and the matrix elements.
    """
    from .sampler import exact_sample_set, mix_seed

    if len(states) < 1:
        raise InvalidParameterError("need at least the ground state")
    sets = []
    for j, p in enumerate(states):
        if exact:
            sets.append(exact_sample_set(p))
        else:
            sets.append(metropolis_chain(p, n_samples, burn_in, thin, mix_seed(seed, j), n_chains,
                                         swap_prob, pair_prob))
    energies = [reestimate_energy(p, model, s) for p, s in zip(states, sets)]
    e0, s0 = energies[0]
    deltas, dse, plus, minus, sp_, sm_, flags = [], [], [], [], [], [], []
    for j in range(1, len(states)):
        ej, sj = energies[j]
        te = transition_elements(states[0], states[j], samples0=sets[0], samplesj=sets[j],
                                 stderr_bound=stderr_bound)
        deltas.append(ej.real - e0.real)
        dse.append(math.hypot(s0, sj))
        plus.append(te.m_plus_sq)
        minus.append(te.m_minus_sq)
        sp_.append(te.m_plus_stderr)
        sm_.append(te.m_minus_stderr)
        flags.extend(f"level {j} {f}" for f in te.flags)
    w, sw = polarized_weight(states[0], sets[0])
    pol = PolarizedPeak(float(model.polarized_energy - e0.real), w, sw) if w > 0 else None
    prov = list(provenance) if provenance is not None else [
        {"level": j, "params": p.fingerprint} for j, p in enumerate(states)]
    return SpectrumBundle(float(e0.real), deltas, plus, minus, gamma, omega_max, sp_, sm_, dse,
                          polarized=pol, next_delta=next_delta, provenance=prov, flags=flags)
