"""Command-line surface: presets, configs, outputs, exit codes."""

import json
import os
import subprocess
import sys

import pytest

import bohmqft.cli as cli


def run_cli(args):
    return cli.main(args)


def read_manifest(out_dir):
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        return json.load(fh)


BORN_TOML = """
[scenario]
kind = "born"
seed = 5

[params]
L = 6.283185307179586
M = 1
m = 1.0
n_max = 4
g = 14.0
T = 1.0
sigma_y = 1.0
n_samples = 40
n_steps = 400

[params.state]
"0" = [0.5477225575051661, 0.0]
"1" = [0.8366600265340756, 0.0]

[check]
z_max = 4.0
gap_frac_max = 0.001
"""

TRAJECTORY_TOML = """
[scenario]
kind = "trajectory"
seed = 0

[params]
m = 1.0
ks = [[1.0], [0.0]]
weights = [[1.0, 0.0], [1.2, 0.0]]
x0 = [0.0, 4.2]
tau_span = [0.0, 5.0]

[check]
hj_tol = {hj_tol}
expect_reversals = 2
"""


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(cli.OUT_ENV_VAR, raising=False)


def test_list_presets(capsys):
    assert run_cli(["list-presets"]) == cli.EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    names = [l.split("\t")[0] for l in lines]
    assert names == list(cli.PRESETS)
    assert "fig1" in names
    for line in lines:
        assert len(line.split("\t")) == 3


def test_run_preset_writes_manifest(tmp_path):
    out = str(tmp_path / "fold")
    assert run_cli(["run", "--preset", "fold-trajectory", "--out", out]) == 0
    man = read_manifest(out)
    on_disk = sorted(f for f in os.listdir(out) if f != "manifest.json")
    assert man["outputs"] == on_disk
    assert man["outputs"] == ["events.tsv", "trajectory.tsv"]
    assert man["kind"] == "trajectory"
    assert man["name"] == "fold-trajectory"
    assert man["seed"] == 0
    assert len(man["config_hash"]) == 64
    assert int(man["config_hash"], 16) >= 0
    assert man["end_time"] >= man["start_time"]
    assert man["extras"]["n_reversals"] == 2


def test_check_subcommand_passes(tmp_path, capsys):
    out = str(tmp_path / "fig1")
    assert run_cli(["check", "--preset", "fig1", "--out", out]) == 0
    table = capsys.readouterr().out
    rows = [l for l in table.splitlines() if l and not l.startswith("#")]
    assert rows and all(r.endswith("\t1") for r in rows)
    with open(os.path.join(out, "check.tsv")) as fh:
        assert fh.read() == table
    assert "check.tsv" in read_manifest(out)["outputs"]


def test_config_run_is_deterministic(tmp_path):
    cfg = tmp_path / "born40.toml"
    cfg.write_text(BORN_TOML)
    out1, out2, out3 = (str(tmp_path / d) for d in ("a", "b", "c"))
    assert run_cli(["run", "--config", str(cfg), "--out", out1]) == 0
    assert run_cli(["run", "--config", str(cfg), "--out", out2]) == 0
    assert run_cli(["run", "--config", str(cfg), "--seed", "6",
                    "--out", out3]) == 0
    for name in ("channels.tsv", "samples.tsv"):
        b1 = open(os.path.join(out1, name), "rb").read()
        b2 = open(os.path.join(out2, name), "rb").read()
        assert b1 == b2
    m1, m2, m3 = (read_manifest(o) for o in (out1, out2, out3))
    assert m1["config_hash"] == m2["config_hash"]
    assert m1["name"] == "born40"
    # a different seed is a different scenario with different draws
    assert m3["config_hash"] != m1["config_hash"]
    s1 = open(os.path.join(out1, "samples.tsv"), "rb").read()
    s3 = open(os.path.join(out3, "samples.tsv"), "rb").read()
    assert s1 != s3


def test_malformed_toml_exits_2(tmp_path):
    cfg = tmp_path / "broken.toml"
    cfg.write_text("[scenario\nkind = ")
    out = str(tmp_path / "never")
    assert run_cli(["run", "--config", str(cfg), "--out", out]) == 2
    assert not os.path.exists(out)


def test_flag_misuse_exits_2(tmp_path):
    cfg = tmp_path / "ok.toml"
    cfg.write_text(BORN_TOML)
    assert run_cli(["run", "--preset", "nope"]) == 2
    assert run_cli(["run"]) == 2
    assert run_cli(["run", "--config", str(cfg), "--preset", "fig1"]) == 2
    assert run_cli(["run", "--config", str(tmp_path / "missing.toml")]) == 2


def test_schema_errors_exit_2(tmp_path):
    out = str(tmp_path / "x")
    bad_kind = tmp_path / "bad_kind.toml"
    bad_kind.write_text(
        '[scenario]\nkind = "frobnicate"\n\n[params]\nm = 1.0\n')
    assert run_cli(["run", "--config", str(bad_kind), "--out", out]) == 2
    no_params = tmp_path / "no_params.toml"
    no_params.write_text('[scenario]\nkind = "evolve"\n\n[params]\n')
    assert run_cli(["run", "--config", str(no_params), "--out", out]) == 2
    missing = tmp_path / "missing_keys.toml"
    missing.write_text(
        '[scenario]\nkind = "evolve"\n\n[params]\nm = 1.0\nks = [[1.0]]\n')
    assert run_cli(["run", "--config", str(missing), "--out", out]) == 2
    bad_seed = tmp_path / "bad_seed.toml"
    bad_seed.write_text(
        '[scenario]\nkind = "evolve"\nseed = -1\n\n[params]\nm = 1.0\n'
        'ks = [[1.0]]\nweights = [1.0]\n')
    assert run_cli(["run", "--config", str(bad_seed), "--out", out]) == 2


def test_incommensurate_modes_exit_2(tmp_path):
    cfg = tmp_path / "aperiodic.toml"
    # two incommensurate beat wavelengths: no common density cell exists
    cfg.write_text(
        '[scenario]\nkind = "evolve"\n\n[params]\nm = 1.0\n'
        'ks = [[0.0], [1.0], [1.4142135623730951]]\nweights = [1.0, 1.0, 1.0]\n')
    out = str(tmp_path / "aperiodic")
    assert run_cli(["run", "--config", str(cfg), "--out", out]) == 2
    # rejected before producing any output
    assert not os.path.exists(os.path.join(out, "manifest.json"))


def test_numerical_failure_exits_3_without_outputs(tmp_path):
    # g*T*gap below the packet width: channel windows overlap
    cfg = tmp_path / "weak.toml"
    cfg.write_text(BORN_TOML.replace("g = 14.0", "g = 0.5")
                            .replace("n_samples = 40", "n_samples = 8"))
    out = str(tmp_path / "weak")
    assert run_cli(["run", "--config", str(cfg), "--out", out]) == 3
    leftovers = os.listdir(out) if os.path.isdir(out) else []
    assert leftovers == []


def test_failed_check_exits_4(tmp_path, capsys):
    cfg = tmp_path / "strict.toml"
    cfg.write_text(TRAJECTORY_TOML.format(hj_tol="1e-30"))
    out = str(tmp_path / "strict")
    assert run_cli(["run", "--check", "--config", str(cfg),
                    "--out", out]) == 4
    rows = [l.split("\t") for l in capsys.readouterr().out.splitlines()
            if l and not l.startswith("#")]
    flags = {r[0]: r[2] for r in rows}
    assert flags["hj_residual"] == "0"
    assert flags["n_reversals"] == "1"
    man = read_manifest(out)
    assert "check.tsv" in man["outputs"]


def test_out_dir_precedence(tmp_path, monkeypatch):
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv(cli.OUT_ENV_VAR, str(env_dir / "run1"))
    assert run_cli(["run", "--preset", "fold-trajectory"]) == 0
    assert os.path.exists(env_dir / "run1" / "manifest.json")
    # an explicit --out wins over the environment
    flag_dir = str(tmp_path / "from_flag")
    assert run_cli(["run", "--preset", "fold-trajectory",
                    "--out", flag_dir]) == 0
    assert os.path.exists(os.path.join(flag_dir, "manifest.json"))
    assert not os.path.exists(env_dir / "run1" / "events2.tsv")


def test_config_output_dir_honored(tmp_path):
    dest = tmp_path / "from_config"
    cfg = tmp_path / "routed.toml"
    cfg.write_text(BORN_TOML.replace(
        'kind = "born"', f'kind = "born"\noutput_dir = "{dest}"'))
    assert run_cli(["run", "--config", str(cfg)]) == 0
    assert os.path.exists(dest / "manifest.json")


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "bohmqft.cli", "list-presets"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "fig1" in proc.stdout
