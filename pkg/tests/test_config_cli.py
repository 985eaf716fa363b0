import json
import shutil

import numpy as np
import pytest
import yaml

from gaudin_rbm import config as config_mod
from gaudin_rbm.ansatz import load_checkpoint
from gaudin_rbm.cli import main, read_table
from gaudin_rbm.errors import ConfigError

BASE = {
    "model": {"N": 2, "N0": 2.0, "A": 2.0, "B": 0.35},
    "sampler": {"samples": 300},
    "optimizer": {"iterations": 300, "runs": 2, "omega_max": 2.0, "learning_rate": 0.05},
    "dynamics": {"n_samples": 4000, "levels": 1, "carrier_level": 1, "t_max": 20.0,
                 "dt": 0.01, "output_stride": 100},
    "bench": {"n_min": 1, "n_max": 2, "samples": 50, "iterations": 3},
    "seed": 3,
}


def write_cfg(tmp_path, **changes):
    doc = json.loads(json.dumps(BASE))
    doc["output"] = {"dir": str(tmp_path / "out")}
    for dotted, value in changes.items():
        sec, _, key = dotted.partition("__")
        if key:
            doc.setdefault(sec, {})[key] = value
        elif value is None:
            doc.pop(sec, None)
        else:
            doc[sec] = value
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_resolve_defaults_and_overrides():
    raw = dict(BASE, output={"dir": "x"})
    cfg = config_mod.resolve(raw, {"optimizer.learning_rate": "0.05", "seed": 9})
    assert cfg["optimizer"]["learning_rate"] == 0.05
    assert cfg["seed"] == 9
    assert cfg["sampler"]["swap_prob"] == 0.5 and cfg["rbm"]["init_spread"] == 0.25
    assert config_mod.config_hash(cfg) == config_mod.config_hash(config_mod.resolve(
        raw, {"optimizer.learning_rate": 0.05, "seed": 9}))


@pytest.mark.parametrize("mutate, key", [
    (lambda d: d["model"].pop("B"), "model.B"),
    (lambda d: d.pop("seed"), "seed"),
    (lambda d: d["model"].update(N=2.5), "model.N"),
    (lambda d: d["optimizer"].update(typo=1), "typo"),
    (lambda d: d.update(extra={}), "extra"),
    (lambda d: d["sampler"].update(swap_prob=1.0), "swap_prob"),
    (lambda d: d["optimizer"].update(iterations=0), "optimizer.iterations"),
])
def test_resolve_errors_name_the_key(mutate, key):
    raw = json.loads(json.dumps(dict(BASE, output={"dir": "x"})))
    mutate(raw)
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config_mod.resolve(raw)


def test_explicit_couplings():
    raw = dict(BASE, output={"dir": "x"}, model={"B": 0.2, "couplings": [0.5, 0.25]})
    cfg = config_mod.resolve(raw)
    assert cfg["model"]["N"] == 2


def test_validate_config(tmp_path, capsys):
    assert main(["validate-config", str(write_cfg(tmp_path))]) == 0
    assert "config_hash" in capsys.readouterr().out


def test_exit_code_config_errors(tmp_path):
    assert main(["ground", str(write_cfg(tmp_path, model__B="abc"))]) == 2
    assert main(["ground", str(tmp_path / "missing.yaml")]) == 2
    assert main(["bench", str(write_cfg(tmp_path, bench__n_max=20))]) == 2
    assert main(["excited", str(write_cfg(tmp_path)), "--level", "0"]) == 2


def test_exit_code_missing_artifact(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["spectrum", str(cfg)]) == 3
    assert main(["excited", str(cfg), "--level", "1"]) == 3


def test_exit_code_inconsistent_bundle(tmp_path):
    """An 'excited' checkpoint that lies below the ground state is rejected with exit 4."""
    good = str(write_cfg(tmp_path))
    assert main(["ground", good]) == 0
    bad = tmp_path / "bad"
    cfg = str(write_cfg(tmp_path, optimizer__iterations=1, optimizer__runs=1))
    assert main(["ground", cfg, "--output.dir", str(bad)]) == 0
    (bad / "level_1").mkdir()
    shutil.copy(tmp_path / "out" / "level_0" / "checkpoint.json", bad / "level_1" / "checkpoint.json")
    assert main(["spectrum", cfg, "--output.dir", str(bad)]) == 4


def test_end_to_end_pipeline(tmp_path):
    cfg = str(write_cfg(tmp_path))
    out = tmp_path / "out"
    assert main(["ground", cfg]) == 0
    first, _ = load_checkpoint(out / "level_0" / "checkpoint.json")
    assert main(["excited", cfg, "--level", "1"]) == 0
    for name in ("checkpoint.json", "trace.csv", "runs.csv", "summary.json"):
        assert (out / "level_1" / name).exists()
    assert main(["spectrum", cfg]) == 0
    assert main(["spectrum", cfg, "--oracle"]) == 0
    assert main(["response", cfg]) == 0
    assert main(["ed", cfg]) == 0
    spec = read_table(out / "spectral.csv")
    assert np.all(np.isfinite(spec["A0"]))
    resp = read_table(out / "response.csv")
    assert resp["t"][0] == 0 and resp["t"].size == 21
    assert np.all(np.isfinite(resp["sx_exact"]))
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"ground_0", "excited_1", "spectrum", "response", "ed"} <= set(manifest["invocations"])
    summary = json.loads((out / "level_0" / "summary.json").read_text())
    assert summary["infidelity"] < 0.5

    # same config and seed give identical parameters (only the recorded output dir differs)
    assert main(["ground", cfg, "--output.dir", str(tmp_path / "again")]) == 0
    second, _ = load_checkpoint(tmp_path / "again" / "level_0" / "checkpoint.json")
    np.testing.assert_array_equal(first.flat(), second.flat())


def test_bench(tmp_path):
    cfg = str(write_cfg(tmp_path))
    assert main(["bench", cfg]) == 0
    rows = read_table(tmp_path / "out" / "bench.csv")
    assert list(rows["N"]) == [1, 2]
    assert np.all(rows["t_rbm_mean"] > 0) and np.all(rows["t_ed_mean"] > 0)
