"""Command-line driver: ``gaudin-rbm <command> CONFIG [--section.key VALUE ...]``.

Commands
    ground           optimize the ground state (level 0)
    excited          optimize level n with penalties from levels 0..n-1
    spectrum         build the spectrum bundle and write the spectral function
    response         linear response to the drive pulse (plus exact RK4 when small)
    bench            runtime of one SR run vs one dense diagonalization
    ed               dense spectrum of the configured model
    validate-config  print the resolved config

Exit codes: 0 success, 2 config error, 3 missing input artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import config as config_mod
from . import dynamics, oracle
from .ansatz import load_checkpoint, save_checkpoint
from .errors import (ConfigError, ConsistencyError, MissingArtifactError, NumericalError,
                     OptimizationFailure, SizeGuardError)
from .model import GaudinModel
from .optimizer import (PenaltySpec, SrConfig, check_degeneracy, optimize_eigenstate,
                        single_run)
from .sampler import mix_seed

log = logging.getLogger("gaudin_rbm")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4
OPT_SECTIONS = ("model", "rbm", "sampler", "optimizer", "seed")
DYN_SECTIONS = OPT_SECTIONS + ("dynamics",)
BUNDLE_SEED_TAG = 0xB0DE


def git_hash(data: bytes) -> str:
    """Content hash in git's blob format."""
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def read_table(path) -> dict:
    """Columns of a CSV written by :meth:`Run.write_csv`, as float arrays (empty -> nan)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    cols = {}
    for k, name in enumerate(header):
        vals = [r[k] for r in rows]
        try:
            cols[name] = np.array([float(v) if v else np.nan for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return cols


def thread_settings() -> dict:
    keys = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")
    return {k: os.environ.get(k) for k in keys}


def model_from_config(cfg: dict) -> GaudinModel:
    m = cfg["model"]
    if m["couplings"] is not None:
        return GaudinModel(B=m["B"], couplings=m["couplings"], A=m["A"] or 1.0, N0=m["N0"] or 1.0)
    return GaudinModel.exponential(m["N"], m["N0"], m["A"], m["B"])


def sr_config(cfg: dict) -> SrConfig:
    o, s, r = cfg["optimizer"], cfg["sampler"], cfg["rbm"]
    return SrConfig(learning_rate=o["learning_rate"], diag_shift=o["diag_shift"],
                    iterations=o["iterations"], samples=s["samples"], runs=o["runs"],
                    postselect_samples=o["postselect_samples"], init_spread=r["init_spread"],
                    hidden=r["M"], burn_in=s["burn_in"], thin=s["thin"], swap_prob=s["swap_prob"],
                    pair_prob=s["pair_prob"])


class Run:
    """Output directory of one invocation; stamps provenance into each artifact."""

    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["output"]["dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.produced: dict[str, str] = {}
        self.t0 = time.perf_counter()

    def provenance(self) -> dict:
        return {"command": self.command, "config": self.cfg,
                "config_hash": config_mod.config_hash(self.cfg),
                "inputs": dict(sorted(self.inputs.items())),
                "threads": thread_settings()}

    def consume(self, path: Path) -> bytes:
        data = Path(path).read_bytes()
        self.inputs[str(Path(path).relative_to(self.out))] = git_hash(data)
        return data

    def _record(self, path: Path) -> Path:
        self.produced[str(path.relative_to(self.out))] = git_hash(path.read_bytes())
        return path

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_json(self, rel: str, doc: dict) -> Path:
        p = self.path(rel)
        doc = dict(doc, provenance=self.provenance())
        p.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return self._record(p)

    def write_csv(self, rel: str, header, rows) -> Path:
        p = self.path(rel)
        prov = self.provenance()
        with open(p, "w") as fh:
            fh.write(f"# command: {prov['command']}\n")
            fh.write(f"# config_hash: {prov['config_hash']}\n")
            fh.write(f"# config: {config_mod.canonical_json(prov['config'])}\n")
            fh.write(f"# inputs: {config_mod.canonical_json(prov['inputs'])}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join("" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating))
                                                           else str(v)) for v in row) + "\n")
        return self._record(p)

    def write_checkpoint(self, rel: str, params, seed, metadata) -> Path:
        p = self.path(rel)
        save_checkpoint(p, params, seed, dict(metadata, provenance=self.provenance()))
        return self._record(p)

    def finish(self, key: str | None = None, extra: dict | None = None) -> None:
        """Merge this invocation into manifest.json; wall time goes into ``timing``."""
        mpath = self.out / "manifest.json"
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {"invocations": {}}
        entry = {"command": self.command, "config_hash": config_mod.config_hash(self.cfg),
                 "inputs": dict(sorted(self.inputs.items())),
                 "artifacts": dict(sorted(self.produced.items())),
                 "timing": {"wall_seconds": time.perf_counter() - self.t0}}
        if extra:
            entry.update(extra)
        manifest["invocations"][key or self.command] = entry
        mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# -- optimization -----------------------------------------------------------------

def level_dir(level: int) -> str:
    return f"level_{level}"


def load_lower_states(run: Run, level: int):
    states = []
    for j in range(level):
        path = run.out / level_dir(j) / "checkpoint.json"
        if not path.exists():
            raise MissingArtifactError(f"level {level} needs the level-{j} checkpoint {path}")
        run.consume(path)
        p, doc = load_checkpoint(path)
        want = config_mod.config_hash(run.cfg, OPT_SECTIONS)
        got = doc.get("metadata", {}).get("optimization_hash")
        if got != want:
            log.warning("checkpoint %s was produced with different optimization settings", path)
        states.append(p)
    return states


def optimize_level(cfg: dict, level: int) -> int:
    run = Run(cfg, "ground" if level == 0 else "excited")
    model = model_from_config(cfg)
    lower = load_lower_states(run, level)
    sr = sr_config(cfg)
    o = cfg["optimizer"]
    pen = PenaltySpec.uniform(lower, o["omega_max"], o["beta"])
    log.info("level %d: %d runs x %d iterations, %d samples", level, sr.runs, sr.iterations, sr.samples)
    best, results = optimize_eigenstate(level, lower, model, sr, pen, cfg["seed"], o["workers"])
    d = level_dir(level)
    meta = {"level": level, "optimization_hash": config_mod.config_hash(cfg, OPT_SECTIONS)}
    run.write_checkpoint(f"{d}/checkpoint.json", best.params, best.seed, meta)
    winner = next(r for r in results if r.run_index == best.run_index)
    run.write_csv(f"{d}/trace.csv", ["iter", "loss", "energy_re", "energy_im", "grad_norm", "acceptance"],
                  winner.trace.rows())
    run.write_csv(f"{d}/runs.csv", ["run", "seed", "ok", "loss", "energy_re", "energy_im",
                                    "energy_stderr", "variance", "error"],
                  ([r.run_index, r.seed, int(r.ok),
                    *((float(r.final.loss.real), float(r.final.energy.real),
                       float(r.final.energy.imag), float(r.final.energy_stderr),
                       float(r.final.variance)) if r.ok else (None,) * 5),
                    (r.error or "").replace(",", ";")] for r in results))
    for r in results:
        if r.params is not None:
            run.write_checkpoint(f"{d}/runs/run_{r.run_index:03d}.json", r.params, r.seed,
                                 dict(meta, run_index=r.run_index))
    summary = best.summary()
    summary["chosen_run"] = best.run_index
    summary["n_failed"] = sum(not r.ok for r in results)
    summary["infidelity"] = None
    if model.n_sites <= oracle.MAX_SITES:
        spec = oracle.full_spectrum(model)
        summary["exact_energy"] = float(spec.eigenvalues[level])
        summary["infidelity"] = 1.0 - oracle.rbm_fidelity(best.params, spec.eigenvectors[:, level])
    run.write_json(f"{d}/summary.json", summary)
    run.finish(f"{run.command}_{level}")
    print(f"level {level}: E = {best.energy.real:.8f} +- {best.energy_stderr:.1e} "
          f"(run {best.run_index}, loss {best.loss:.8f})")
    return EXIT_OK


def cmd_ground(cfg, args) -> int:
    return optimize_level(cfg, 0)


def cmd_excited(cfg, args) -> int:
    if args.level < 1:
        raise ConfigError("--level must be >= 1 (use 'ground' for level 0)")
    return optimize_level(cfg, args.level)


# -- dynamics -----------------------------------------------------------------------

def discover_levels(run: Run) -> int:
    n = run.cfg["dynamics"]["levels"]
    if n is not None:
        return n + 1
    count = 0
    while (run.out / level_dir(count) / "checkpoint.json").exists():
        count += 1
    if count == 0:
        raise MissingArtifactError(f"no ground-state checkpoint in {run.out}")
    return count


def rbm_bundle(run: Run, model: GaudinModel) -> dynamics.SpectrumBundle:
    """Bundle from the level checkpoints, reusing bundle.json when its inputs match."""
    cfg = run.cfg
    dyn = cfg["dynamics"]
    n_states = discover_levels(run)
    states = []
    for j in range(n_states):
        path = run.out / level_dir(j) / "checkpoint.json"
        if not path.exists():
            raise MissingArtifactError(f"missing level-{j} checkpoint {path}")
        run.consume(path)
        states.append(load_checkpoint(path)[0])
    key = {"inputs": dict(sorted(run.inputs.items())),
           "n_samples": dyn["n_samples"], "seed": cfg["seed"], "model": cfg["model"],
           "omega_max": cfg["optimizer"]["omega_max"], "stderr_bound": dyn["stderr_bound"],
           "sampler": cfg["sampler"]}
    key_hash = hashlib.sha1(config_mod.canonical_json(key).encode()).hexdigest()
    cached = run.out / "bundle.json"
    if cached.exists():
        doc = json.loads(cached.read_text())
        if doc.get("bundle_key") == key_hash:
            log.info("reusing %s", cached)
            return dynamics.SpectrumBundle.from_dict(doc["bundle"])
    prov = [{"level": j, "checkpoint": f"{level_dir(j)}/checkpoint.json",
             "hash": run.inputs[f"{level_dir(j)}/checkpoint.json"]} for j in range(n_states)]
    bundle = dynamics.rbm_bundle(states, model, dyn["gamma"], cfg["optimizer"]["omega_max"],
                                 dyn["n_samples"], seed=mix_seed(cfg["seed"], BUNDLE_SEED_TAG),
                                 provenance=prov, stderr_bound=dyn["stderr_bound"],
                                 n_chains=cfg["sampler"]["n_chains"], thin=cfg["sampler"]["thin"],
                                 swap_prob=cfg["sampler"]["swap_prob"],
                                 pair_prob=cfg["sampler"]["pair_prob"])
    check_degeneracy([bundle.ground_energy, *(bundle.ground_energy + bundle.deltas)])
    for flag in bundle.flags:
        log.warning("%s", flag)
    run.write_json("bundle.json", {"bundle": bundle.to_dict(), "bundle_key": key_hash})
    return bundle


def get_bundle(run: Run, model: GaudinModel, use_oracle: bool):
    if use_oracle:
        return dynamics.oracle_bundle(model, run.cfg["dynamics"]["gamma"],
                                      run.cfg["optimizer"]["omega_max"])
    return rbm_bundle(run, model)


def make_pulse(cfg: dict, bundle: dynamics.SpectrumBundle) -> dynamics.DrivePulse:
    d = cfg["dynamics"]
    carrier = d["carrier"]
    if carrier is None:
        j = d["carrier_level"]
        if not 1 <= j <= bundle.n_levels:
            raise ConfigError(f"dynamics.carrier_level={j} but the bundle has {bundle.n_levels} levels")
        carrier = float(bundle.deltas[j - 1])
    return dynamics.DrivePulse(d["B1"], d["B2"], d["t_bar"], d["tau1"], d["tau2"], carrier)


def cmd_spectrum(cfg, args) -> int:
    run = Run(cfg, "spectrum")
    model = model_from_config(cfg)
    bundle = get_bundle(run, model, args.oracle).with_gamma(cfg["dynamics"]["gamma"])
    suffix = "_oracle" if args.oracle else ""
    omega = dynamics.default_omega_grid(bundle, model, cfg["dynamics"]["omega_points"])
    a0 = dynamics.spectral_function(bundle, omega)
    if args.oracle:
        run.write_json(f"bundle{suffix}.json", {"bundle": bundle.to_dict()})
    run.write_csv(f"spectral{suffix}.csv", ["omega", "A0"], zip(omega, a0))
    run.finish(f"spectrum{suffix}", {"flags": bundle.flags})
    print(f"spectrum: {bundle.n_levels} levels, E0 = {bundle.ground_energy:.8f}, "
          f"{len(bundle.flags)} flags")
    return EXIT_OK


def cmd_response(cfg, args) -> int:
    run = Run(cfg, "response")
    model = model_from_config(cfg)
    d = cfg["dynamics"]
    bundle = get_bundle(run, model, args.oracle).with_gamma(d["response_gamma"])
    pulse = make_pulse(cfg, bundle)
    n = int(round(d["t_max"] / d["dt"]))
    t = np.arange(n + 1) * d["dt"]
    sx = dynamics.linear_response(bundle, pulse, t, rule=d["quadrature"])
    stride = d["output_stride"]
    t_out, sx_out = t[::stride], sx[::stride]
    by = pulse(t_out)
    exact = [None] * t_out.size
    if d["exact_compare"] and model.n_sites <= oracle.MAX_SITES:
        ground = oracle.full_spectrum(model).ground_state
        exact = oracle.time_evolve(model, pulse, ground, t_out)
    suffix = "_oracle" if args.oracle else ""
    run.write_csv(f"response{suffix}.csv", ["t", "sx_rbm", "sx_exact", "by"],
                  zip(t_out, sx_out, exact, by))
    run.finish(f"response{suffix}", {"carrier": pulse.carrier})
    if exact[0] is not None:
        dev = np.max(np.abs(np.asarray(exact) - sx_out)) / np.max(np.abs(exact))
        print(f"response: max deviation {dev:.4f} of the exact amplitude")
    return EXIT_OK


# -- oracle and benchmark ------------------------------------------------------------

def cmd_ed(cfg, args) -> int:
    run = Run(cfg, "ed")
    model = model_from_config(cfg)
    spec = oracle.full_spectrum(model)
    n_down = oracle.ground_sector_check(model, spec)
    plus, minus = oracle.transition_weights(spec)
    run.write_csv("spectrum.csv", ["index", "energy", "sector_sz", "m_plus_sq", "m_minus_sq"],
                  ([i, e, s, float(p), float(m)] for (i, e, s), p, m
                   in zip(oracle.spectrum_rows(spec), plus, minus)))
    run.write_json("ed.json", {"ground_energy": float(spec.eigenvalues[0]),
                               "ground_n_down": n_down,
                               "polarized_weight": oracle.polarized_amplitude_sq(spec),
                               "basis": spec.basis})
    run.finish("ed")
    print(f"ed: E0 = {spec.eigenvalues[0]:.10f}, dimension {spec.eigenvalues.size}")
    return EXIT_OK


def bench_rows(cfg: dict):
    b = cfg["bench"]
    if b["n_max"] + 1 > oracle.MAX_SITES:
        raise SizeGuardError(f"bench.n_max={b['n_max']} exceeds the dense limit")
    m = cfg["model"]
    sr = SrConfig(iterations=b["iterations"], samples=b["samples"], runs=1,
                  learning_rate=cfg["optimizer"]["learning_rate"],
                  diag_shift=cfg["optimizer"]["diag_shift"], init_spread=cfg["rbm"]["init_spread"],
                  swap_prob=cfg["sampler"]["swap_prob"], pair_prob=cfg["sampler"]["pair_prob"])
    # compile the sampler kernels outside the timed region
    warm = GaudinModel.exponential(1, 1.0, 1.0, 0.1)
    single_run(0, [], warm, SrConfig(iterations=2, samples=10, runs=1), None, 0, keep_trace=False)
    for N in range(b["n_min"], b["n_max"] + 1):
        model = GaudinModel.exponential(N, m["N0"] or 1.0, m["A"] or 1.0, m["B"])
        t_rbm, t_ed = [], []
        for rep in range(b["reps"]):
            t0 = time.perf_counter()
            single_run(0, [], model, sr, None, mix_seed(cfg["seed"], rep), keep_trace=False)
            t_rbm.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            oracle.full_spectrum(model)
            t_ed.append(time.perf_counter() - t0)
        log.info("N=%d rbm %.3fs ed %.4fs", N, np.mean(t_rbm), np.mean(t_ed))
        yield N, float(np.mean(t_rbm)), float(np.mean(t_ed)), b["reps"]


def cmd_bench(cfg, args) -> int:
    run = Run(cfg, "bench")
    rows = list(bench_rows(cfg))
    run.write_csv("bench.csv", ["N", "t_rbm_mean", "t_ed_mean", "reps"], rows)
    run.finish("bench")
    for row in rows:
        print("N=%d  rbm %.4fs  ed %.4fs" % row[:3])
    return EXIT_OK


def cmd_validate(cfg, args) -> int:
    print(yaml.safe_dump(cfg, sort_keys=True), end="")
    print(f"# config_hash: {config_mod.config_hash(cfg)}")
    return EXIT_OK


COMMANDS = {
    "ground": cmd_ground,
    "excited": cmd_excited,
    "spectrum": cmd_spectrum,
    "response": cmd_response,
    "bench": cmd_bench,
    "ed": cmd_ed,
    "validate-config": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="YAML run configuration")
    common.add_argument("-v", "--verbose", action="store_true")
    config_mod.add_override_arguments(common)
    parser = argparse.ArgumentParser(prog="gaudin-rbm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "excited":
            p.add_argument("--level", type=int, required=True)
        if name in ("spectrum", "response"):
            p.add_argument("--oracle", action="store_true",
                           help="use the dense-diagonalization bundle instead of RBM checkpoints")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config, config_mod.overrides_from_args(args))
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SizeGuardError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, OptimizationFailure, ConsistencyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
