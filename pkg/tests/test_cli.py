import json

import numpy as np
import pytest

import wplqng.vqe
from wplqng.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, SCHEMAS, main, read_config_file, resolve_settings
from wplqng.errors import ConfigError
from wplqng.vqe import ABLATIONS


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    return main([*argv, "--out", str(out)]), out


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def _csv(path):
    return np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")


def test_tomo_exact_dephasing_chain(tmp_path):
    rc, out = _run(tmp_path, "t", "tomo", "--exact", "--set", "param=0.25", "--set", "depths=1")
    assert rc == EXIT_OK
    row = json.loads((out / "wpl_report.json").read_text())["rows"][0]
    assert row["lambda_perp"] == pytest.approx(0.5, abs=1e-12)
    assert row["lambda_par"] == pytest.approx(1.0, abs=1e-12)
    assert (row["b"], row["R"], row["a_over_b"]) == pytest.approx((0.5, 8.0, 2.0), abs=1e-10)
    assert set(_files(out)) == {"wpl_report.json", "bootstrap.json", "wpl_report.csv", "manifest.json"}


def test_tomo_identity_channel(tmp_path):
    rc, out = _run(tmp_path, "t", "tomo", "--exact", "--set", "channel=identity", "--set", "depths=1,5")
    assert rc == EXIT_OK
    for row in json.loads((out / "wpl_report.json").read_text())["rows"]:
        assert (row["a_over_b"], row["b"], row["R"]) == pytest.approx((1.0, 1.0, 2.0), abs=1e-12)


def test_tomo_same_seed_is_byte_identical(tmp_path):
    args = ("tomo", "--set", "depths=1,5", "--set", "bootstrap_B=50", "--set", "shots=512")
    _, a = _run(tmp_path, "a", *args)
    _, b = _run(tmp_path, "b", *args)
    assert _files(a) == _files(b)


@pytest.mark.parametrize("argv", [
    ("tomo", "--set", "depths=1,5", "--set", "bootstrap_B=40", "--set", "shots=256"),
    ("vqe", "--set", "T_max=3", "--set", "shots=256"),
    ("drift", "--set", "K=4", "--set", "shots=512"),
    ("ablate", "--set", "T_max=2", "--exact", "--set", "kinds=tau_sweep,isotropic"),
])
def test_rerun_from_manifest_is_byte_identical(tmp_path, argv):
    rc, first = _run(tmp_path, "first", *argv)
    assert rc == EXIT_OK
    rc, second = _run(tmp_path, "second", "rerun", str(first / "manifest.json"))
    assert rc == EXIT_OK
    assert _files(first) == _files(second)


def test_manifest_is_written_last_with_hashes(tmp_path):
    _, out = _run(tmp_path, "t", "drift", "--set", "K=3", "--exact")
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"drift.csv", "ewma.csv"}
    assert manifest["versions"]["wplqng"]
    assert not list(out.glob("*.tmp*"))


@pytest.mark.parametrize("argv", [
    ("vqe", "--set", "eta"),
    ("vqe", "--set", "eta="),
    ("vqe", "--set", "learning_rate=0.1"),
    ("tomo", "--set", "channel=bitflip"),
    ("tomo", "--set", "param=1.5"),
    ("drift", "--set", "K=1"),
    ("vqe", "--set", "eta=-1"),
    ("ablate", "--set", "kinds=dropout"),
    ("vqe", "--config", "does/not/exist.cfg"),
])
def test_config_errors_exit_2_without_output(tmp_path, argv, capsys):
    rc, out = _run(tmp_path, "bad", *argv)
    assert rc == EXIT_CONFIG
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# drift preset\nK = 3\nshots = exact\nalpha = 0.5\n")
    rc, out = _run(tmp_path, "o", "drift", "--config", str(cfg), "--set", "alpha=0.3")
    assert rc == EXIT_OK
    settings = json.loads((out / "manifest.json").read_text())["settings"]
    assert (settings["K"], settings["shots"], settings["alpha"]) == (3, None, 0.3)


def test_config_file_syntax_error(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("K 3\n")
    with pytest.raises(ConfigError):
        read_config_file(cfg)


def test_vqe_default_manifest_constants():
    s = resolve_settings("vqe", {})
    assert (s["eta"], s["tau"], s["shots"], s["T_max"], s["seed"]) == (0.05, 1e-3, 4096, 80, 1337)
    assert (s["ab_0"], s["ab_1"], s["b_1"]) == (0.71, 0.68, 0.9)


def test_drift_default_protocol_constants():
    s = resolve_settings("drift", {})
    assert (s["K"], s["shots"], s["depth"], s["alpha"]) == (10, 4096, 5, 0.2)


def test_tomo_default_depths():
    assert resolve_settings("tomo", {})["depths"] == (1, 5, 10, 20, 50)


def test_vqe_outputs(tmp_path):
    rc, out = _run(tmp_path, "v", "vqe", "--exact", "--set", "T_max=5")
    assert rc == EXIT_OK
    names = set(_files(out))
    assert {"trace_euclid.csv", "trace_bloch_qng.csv", "trace_wpl_qng.csv", "comparison.csv", "summary.json"} <= names
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["settings"]["eta"] == 0.05 and manifest["settings"]["T_max"] == 5
    assert manifest["convention"] == "SEC5"
    assert manifest["noise_model"].startswith("dephasing")
    comp = _csv(out / "comparison.csv")
    assert comp.dtype.names == ("iter", "euclid", "bloch_qng", "wpl_qng")
    assert len(comp) == 6


def test_csv_floats_round_trip(tmp_path):
    _, out = _run(tmp_path, "v", "vqe", "--exact", "--set", "T_max=1")
    from wplqng.vqe import OptimizerConfig, default_problem, run_vqe

    tr = run_vqe(default_problem(), OptimizerConfig(kind="euclid", shots=None, T_max=1))
    col = _csv(out / "trace_euclid.csv")["exact_energy"]
    assert list(col) == tr.exact_energy


def test_ablation_kinds_and_trace_counts(tmp_path):
    assert set(SCHEMAS["ablate"]["kinds"].default.split(",")) == {"naive_inverse", "tau_sweep", "shot_sweep",
                                                                  "isotropic"}
    rc, out = _run(tmp_path, "a", "ablate", "--set", "T_max=1", "--set", "shots=128")
    assert rc == EXIT_OK
    assert {f"ablation_{k}.csv" for k in ABLATIONS} <= set(_files(out))
    labels = {k: set(_csv(out / f"ablation_{k}.csv")["label"]) for k in ABLATIONS}
    assert labels["tau_sweep"] == {"tau=0.0001", "tau=0.001", "tau=0.01"}
    assert labels["shot_sweep"] == {"shots=1024", "shots=2048", "shots=4096", "shots=8192"}
    assert labels["naive_inverse"] == {"naive", "pinv"}


def test_parallel_jobs_match_serial(tmp_path):
    args = ("ablate", "--set", "T_max=1", "--exact", "--set", "kinds=tau_sweep,isotropic")
    _, serial = _run(tmp_path, "s", *args)
    _, par = _run(tmp_path, "p", *args, "--jobs", "2")
    assert _files(serial) == _files(par)


def test_drift_exact_zero_variance(tmp_path):
    rc, out = _run(tmp_path, "d", "drift", "--exact")
    assert rc == EXIT_OK
    data = _csv(out / "drift.csv")
    assert np.ptp(data["b"]) == 0 and np.ptp(data["R"]) == 0
    assert json.loads((out / "manifest.json").read_text())["std_b"] == 0.0


def test_numeric_abort_exits_3_with_partial_trace(tmp_path, monkeypatch):
    real = wplqng.vqe.energy
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        return float("nan") if calls["n"] > 200 else real(*a, **k)

    monkeypatch.setattr(wplqng.vqe, "energy", flaky)
    rc, out = _run(tmp_path, "n", "vqe", "--exact", "--set", "T_max=20")
    assert rc == EXIT_NUMERIC
    summary = json.loads((out / "summary.json").read_text())
    assert "aborted" in {v["status"] for v in summary.values()}
    assert (out / "manifest.json").exists()


def test_numeric_abort_at_first_iteration(tmp_path, monkeypatch):
    monkeypatch.setattr(wplqng.vqe, "energy", lambda *a, **k: float("nan"))
    rc, out = _run(tmp_path, "n", "vqe", "--exact", "--set", "T_max=2")
    assert rc == EXIT_NUMERIC
    assert (out / "manifest.json").exists()
