"""Stochastic reconfiguration for the ground state and penalty-projected excited states.

Level n minimizes

    L_n(W) = <W|H|W>/<W|W> + sum_j beta_j |<W|W^j>|^2 / (<W|W> <W^j|W^j>)

over complex RBM parameters, with every expectation estimated on samples of
pi(sigma; W) and, for each frozen lower state, on samples of pi(sigma; W^j).
The update is W <- W - lr (S + shift I)^-1 F with F = dL/dW*.

All estimators accept either Monte Carlo sample sets or exact-summation sets
(see :func:`gaudin_rbm.sampler.exact_sample_set`); the latter make every
quantity deterministic and are used to check against dense linear algebra.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .ansatz import RbmParameters, init_random, log_derivatives_batch, log_psi_batch
from .errors import InvalidParameterError, NumericalError, OptimizationFailure
from .model import GaudinModel, check_configuration, diagonal_energies, flip_flop_partners
from .sampler import (DEFAULT_PAIR_PROB, DEFAULT_SWAP_PROB, ChainState, SampleSet, default_burn_in, estimate_mean,
                      mix_seed)

log = logging.getLogger(__name__)

IMAG_SIGMAS = 4.0


@dataclass(frozen=True)
class SrConfig:
    learning_rate: float = 0.02
    diag_shift: float = 0.01
    iterations: int = 8000
    samples: int = 5000
    runs: int = 50
    postselect_samples: int | None = None
    init_spread: float = 0.25
    hidden: int | None = None
    burn_in: int | None = None
    thin: int = 1
    swap_prob: float = DEFAULT_SWAP_PROB
    pair_prob: float = DEFAULT_PAIR_PROB

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameterError("learning_rate must be > 0")
        if self.diag_shift < 0:
            raise InvalidParameterError("diag_shift must be >= 0")
        if self.iterations < 1 or self.runs < 1 or self.samples < 1:
            raise InvalidParameterError("iterations, runs and samples must be >= 1")

    @property
    def n_postselect(self) -> int:
        return 2 * self.samples if self.postselect_samples is None else self.postselect_samples

    @property
    def n_burn_in(self) -> int:
        return default_burn_in(self.samples) if self.burn_in is None else self.burn_in


@dataclass
class PenaltySpec:
    lower_states: list[RbmParameters] = field(default_factory=list)
    coefficients: list[float] = field(default_factory=list)
    omega_max: float = 0.15

    def __post_init__(self):
        if len(self.coefficients) != len(self.lower_states):
            raise InvalidParameterError("need one penalty coefficient per lower state")
        if any(not c >= 0 for c in self.coefficients):
            raise InvalidParameterError("penalty coefficients must be non-negative")

    @classmethod
    def uniform(cls, lower_states, omega_max: float, beta: float | None = None) -> "PenaltySpec":
        """Same coefficient for every lower state, by default 2 * omega_max."""
        beta = 2.0 * omega_max if beta is None else beta
        return cls(list(lower_states), [float(beta)] * len(lower_states), float(omega_max))


@dataclass
class IterationTrace:
    loss: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    acceptance: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def append(self, loss, energy, grad_norm, acceptance):
        self.loss.append(float(loss))
        self.energy.append(complex(energy))
        self.grad_norm.append(float(grad_norm))
        self.acceptance.append(float(acceptance))

    def rows(self):
        for i, (l, e, g, a) in enumerate(zip(self.loss, self.energy, self.grad_norm, self.acceptance)):
            yield i, l, e.real, e.imag, g, a

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,loss,energy_re,energy_im,grad_norm,acceptance\n")
            for row in self.rows():
                fh.write("%d,%r,%r,%r,%r,%r\n" % row)


@dataclass
class EigenstateEstimate:
    params: RbmParameters
    energy: complex
    energy_stderr: float
    loss: float
    run_index: int
    seed: int
    level: int = 0
    loss_stderr: float = 0.0
    variance: float = 0.0
    overlaps: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"level": self.level, "run_index": self.run_index, "seed": self.seed,
                "energy": self.energy.real, "energy_im": self.energy.imag,
                "stderr": self.energy_stderr, "loss": self.loss,
                "loss_stderr": self.loss_stderr, "variance": self.variance,
                "overlaps": [float(x) for x in self.overlaps]}


# -- estimators ---------------------------------------------------------------

def local_energies(p: RbmParameters, configs: np.ndarray, m: GaudinModel,
                   log_psi_values: np.ndarray | None = None) -> np.ndarray:
    """E_local for each row of ``configs``."""
    lp = log_psi_batch(p, configs) if log_psi_values is None else log_psi_values
    e = diagonal_energies(configs, m).astype(complex)
    rows, _, targets, amps = flip_flop_partners(configs, m)
    if rows.size:
        np.add.at(e, rows, amps * np.exp(log_psi_batch(p, targets) - lp[rows]))
    return e


def local_energy(p: RbmParameters, sigma, m: GaudinModel) -> complex:
    """sum_sigma' <sigma|H|sigma'> Psi(sigma') / Psi(sigma)."""
    s = check_configuration(sigma, m.n_sites)
    return complex(local_energies(p, s[None, :], m)[0])


def _centered(samples: SampleSet, O: np.ndarray) -> np.ndarray:
    return O - samples.mean(O)


def force_vector(p: RbmParameters, samples: SampleSet, m: GaudinModel) -> np.ndarray:
    """F_i = <E_loc O_i*> - <E_loc><O_i*>."""
    samples.check_source(p)
    configs, w, _ = samples.reduced
    eloc = local_energies(p, configs, m)
    dO = _centered(samples, log_derivatives_batch(p, configs))
    return dO.conj().T @ (w * (eloc - w @ eloc))


def geometric_tensor(p: RbmParameters, samples: SampleSet) -> np.ndarray:
    """S_ik = <O_i* O_k> - <O_i*><O_k>."""
    samples.check_source(p)
    configs, w, _ = samples.reduced
    dO = _centered(samples, log_derivatives_batch(p, configs))
    return dO.conj().T @ (w[:, None] * dO)


def sr_solve(F: np.ndarray, S: np.ndarray, diag_shift: float) -> np.ndarray:
    """Solve (S + shift I) x = F by Cholesky factorization."""
    if not np.any(F):
        return np.zeros_like(F)
    Sreg = S + diag_shift * np.eye(S.shape[0])
    try:
        factor = scipy.linalg.cho_factor(Sreg, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = float(np.linalg.cond(Sreg)) if np.all(np.isfinite(Sreg)) else math.inf
        raise NumericalError(f"regularized geometric tensor is singular (cond ~ {cond:.3g})",
                             condition=cond) from exc
    diag = np.abs(np.diag(factor[0]))
    if diag.min() <= 1e-7 * diag.max():
        cond = float(np.linalg.cond(Sreg))
        raise NumericalError(f"regularized geometric tensor is singular (cond ~ {cond:.3g})",
                             condition=cond)
    return scipy.linalg.cho_solve(factor, F)


def sr_step(p: RbmParameters, F: np.ndarray, S: np.ndarray, cfg: SrConfig) -> RbmParameters:
    """W - lr (S + shift I)^-1 F."""
    x = sr_solve(F, S, cfg.diag_shift)
    return p.shifted(-cfg.learning_rate * x)


@dataclass
class LossEstimate:
    loss: complex
    energy: complex
    penalties: list
    gradient: np.ndarray | None = None
    S: np.ndarray | None = None
    energy_stderr: float = float("nan")
    loss_stderr: float = float("nan")
    penalty_stderrs: list = field(default_factory=list)
    variance: float = float("nan")


def _product_stderr(x, sx, y, sy) -> float:
    return float(math.hypot(abs(y) * sx, abs(x) * sy))


def estimate_loss(p: RbmParameters, samples: SampleSet, m: GaudinModel,
                  pen: PenaltySpec | None = None, lower_samples: Sequence[SampleSet] = (),
                  gradient: bool = True, stderr: bool = False) -> LossEstimate:
    """Loss, energy, penalty overlaps and (optionally) force and geometric tensor.

    One pass over the unique sampled configurations shared by every term.
    """
    samples.check_source(p)
    lowers = [] if pen is None else pen.lower_states
    if len(lower_samples) != len(lowers):
        raise InvalidParameterError("need one sample set per lower state")
    configs, w, inverse = samples.reduced
    lp = log_psi_batch(p, configs)
    eloc = local_energies(p, configs, m, lp)
    energy = w @ eloc
    out = LossEstimate(loss=energy, energy=energy, penalties=[])
    if gradient:
        dOc = _centered(samples, log_derivatives_batch(p, configs)).conj()
        grad = dOc.T @ (w * (eloc - energy))
    if stderr:
        energy_mc, out.energy_stderr = _raw_mean(samples, eloc, inverse)
        out.variance = float(w @ np.abs(eloc - energy) ** 2)
        loss_var = out.energy_stderr ** 2

    for pj, beta, sj in zip(lowers, pen.coefficients if pen else (), lower_samples):
        sj.check_source(pj)
        ratio = np.exp(log_psi_batch(pj, configs) - lp)          # Psi_j / Psi on own samples
        cj, wj, invj = sj.reduced
        back = np.exp(log_psi_batch(p, cj) - log_psi_batch(pj, cj))  # Psi / Psi_j on lower samples
        r_mean, b_mean = w @ ratio, wj @ back
        overlap = r_mean * b_mean
        out.penalties.append(overlap)
        out.loss = out.loss + beta * overlap
        if gradient:
            grad = grad + beta * b_mean * (dOc.T @ (w * (ratio - r_mean)))
        if stderr:
            _, sr = _raw_mean(samples, ratio, inverse)
            _, sb = _raw_mean(sj, back, invj)
            se = _product_stderr(r_mean, sr, b_mean, sb)
            out.penalty_stderrs.append(se)
            loss_var += (beta * se) ** 2
    if gradient:
        out.gradient = grad
        out.S = dOc.T @ (w[:, None] * dOc.conj())
    if stderr:
        out.loss_stderr = math.sqrt(loss_var)
    return out


def _raw_mean(samples: SampleSet, unique_values: np.ndarray, inverse: np.ndarray):
    if samples.exact:
        return samples.mean(unique_values), 0.0
    return estimate_mean(unique_values[inverse])


def _imag_is_noise(value: complex, stderr: float, scale: float) -> bool:
    return abs(value.imag) <= IMAG_SIGMAS * stderr + 1e-9 * max(1.0, scale)


def penalty_loss(p: RbmParameters, pen: PenaltySpec, samples_p: SampleSet,
                 samples_lower: Sequence[SampleSet], m: GaudinModel) -> float:
    """Real loss <E_loc> + sum_j beta_j <Psi_j/Psi> <Psi/Psi_j>_j."""
    est = estimate_loss(p, samples_p, m, pen, samples_lower, gradient=False, stderr=True)
    for val, se in zip(est.penalties, est.penalty_stderrs):
        if not _imag_is_noise(val, se, abs(val)):
            raise NumericalError(f"penalty overlap has non-zero imaginary part {val.imag:.3g} "
                                 f"(stderr {se:.3g})")
    return float(est.loss.real)


def penalty_gradient(p: RbmParameters, pen: PenaltySpec, samples_p: SampleSet,
                     samples_lower: Sequence[SampleSet], m: GaudinModel) -> np.ndarray:
    """dL/dW*: the force vector plus the cross-sampled penalty gradient."""
    return estimate_loss(p, samples_p, m, pen, samples_lower).gradient


# -- optimization runs --------------------------------------------------------

@dataclass
class RunResult:
    run_index: int
    seed: int
    params: RbmParameters | None
    trace: IterationTrace
    final: LossEstimate | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.final is not None and np.isfinite(self.final.loss.real)


def run_seed(master_seed: int, level: int, run_index: int) -> int:
    return mix_seed(master_seed, (level << 32) | run_index)


def single_run(level: int, lower_states: Sequence[RbmParameters], model: GaudinModel,
               cfg: SrConfig, pen: PenaltySpec | None, seed: int, run_index: int = 0,
               keep_trace: bool = True) -> RunResult:
    """One optimization run of ``cfg.iterations`` SR updates, then a re-estimate."""
    lower_states = list(lower_states)
    if len(lower_states) != level:
        raise InvalidParameterError(f"level {level} needs {level} lower states, got {len(lower_states)}")
    if pen is None:
        pen = PenaltySpec.uniform(lower_states, 0.15)
    n_vis = model.n_sites
    p = init_random(model.N, cfg.hidden, cfg.init_spread, seed)
    chain = ChainState(n_vis, seed, 0)
    lower_chains = [ChainState(n_vis, seed, j + 1) for j in range(level)]
    trace = IterationTrace()

    def draw(n_samples):
        s = chain.run(p, n_samples, cfg.n_burn_in, cfg.thin, swap_prob=cfg.swap_prob,
                      pair_prob=cfg.pair_prob)
        ls = [c.run(pj, n_samples, cfg.n_burn_in, cfg.thin, warm_skip_burn_in=True,
                    swap_prob=cfg.swap_prob, pair_prob=cfg.pair_prob)
              for c, pj in zip(lower_chains, lower_states)]
        return s, ls

    try:
        for _ in range(cfg.iterations):
            samples, lower_samples = draw(cfg.samples)
            est = estimate_loss(p, samples, model, pen, lower_samples)
            if not np.isfinite(est.loss) or not np.all(np.isfinite(est.gradient)):
                raise NumericalError("non-finite loss or gradient")
            step = sr_solve(est.gradient, est.S, cfg.diag_shift)
            if keep_trace:
                trace.append(est.loss.real, est.energy, np.linalg.norm(est.gradient),
                             samples.acceptance)
            p = p.shifted(-cfg.learning_rate * step)
        samples, lower_samples = draw(cfg.n_postselect)
        final = estimate_loss(p, samples, model, pen, lower_samples, gradient=False, stderr=True)
    except (NumericalError, InvalidParameterError, FloatingPointError) as exc:
        log.warning("level %d run %d failed: %s", level, run_index, exc)
        return RunResult(run_index, seed, None, trace, error=str(exc))
    if not _imag_is_noise(final.energy, final.energy_stderr, abs(final.energy)):
        log.warning("level %d run %d: Im(energy) %.3g exceeds %g stderr", level, run_index,
                    final.energy.imag, IMAG_SIGMAS)
    return RunResult(run_index, seed, p, trace, final)


def _run_task(args):
    return single_run(*args)


def postselect(results: Sequence[RunResult], level: int) -> EigenstateEstimate:
    """Lowest re-estimated loss wins; ties go to the smaller energy variance."""
    good = [r for r in results if r.ok]
    if not good:
        raise OptimizationFailure(f"all {len(results)} runs failed at level {level}",
                                  traces=[r.trace for r in results])
    best = min(good, key=lambda r: (r.final.loss.real, r.final.variance))
    f = best.final
    return EigenstateEstimate(best.params, complex(f.energy), f.energy_stderr, float(f.loss.real),
                              best.run_index, best.seed, level, f.loss_stderr, f.variance,
                              [abs(o) for o in f.penalties])


def optimize_eigenstate(level: int, lower_states: Sequence[RbmParameters], model: GaudinModel,
                        cfg: SrConfig, pen: PenaltySpec | None = None, seed: int = 0,
                        workers: int = 1) -> tuple[EigenstateEstimate, list[RunResult]]:
    """Run ``cfg.runs`` independent optimizations and postselect the best one."""
    if pen is None:
        pen = PenaltySpec.uniform(lower_states, 0.15)
    tasks = [(level, list(lower_states), model, cfg, pen, run_seed(seed, level, r), r)
             for r in range(cfg.runs)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    best = postselect(results, level)
    return best, results


def check_degeneracy(energies: Sequence[float], tol: float = 1e-4) -> list[tuple[int, int]]:
    """Pairs of levels closer than ``tol``; warns when any exist."""
    e = list(energies)
    pairs = [(i, j) for i in range(len(e)) for j in range(i + 1, len(e)) if abs(e[i] - e[j]) < tol]
    if pairs:
        warnings.warn(f"near-degenerate levels {pairs} (|dE| < {tol}); dynamics assume "
                      "non-degenerate eigenstates", RuntimeWarning, stacklevel=2)
    return pairs
