import configparser
import json

import pytest
from click.testing import CliRunner

from arbspec.artifacts import sha256
from arbspec.cli import main
from arbspec.config import parse_config
from arbspec.errors import ValidationError

BS_CONFIG = """
[model]
kind = BlackScholes
mu = 0.05
sigma = 0.2

[grid]
T = 1.0
n_steps = 128
refinement_levels = 3

[mc]
n_paths = 1000
master_seed = 7
nu_paths = 1000
nu_steps = 64

[tasks]
run = {tasks}

[output]
dir = {out}
"""


def _cfg(tmp_path, tasks="characteristics, deflators, strategies, classify", out="out"):
    p = tmp_path / "bs.ini"
    p.write_text(BS_CONFIG.format(tasks=tasks, out=tmp_path / out))
    return p


def test_parse_config(tmp_path):
    cfg = parse_config(_cfg(tmp_path).read_text())
    assert cfg.model.kind == "BlackScholes" and cfg.model.sigma == 0.2
    assert cfg.settings.n_steps == 128 and cfg.settings.levels == 3
    assert cfg.tasks == ("characteristics", "deflators", "strategies", "classify")


@pytest.mark.parametrize("text", [
    "[model]\nkind = Nope\n[tasks]\nrun = classify\n",
    "[model]\nkind = BlackScholes\nrho = 1\n[tasks]\nrun = classify\n",
    "[model]\nkind = BlackScholes\n[tasks]\nrun = fly\n",
    "[model]\nkind = BlackScholes\n[grid]\nn_steps = many\n[tasks]\nrun = classify\n",
    "[model]\nkind = BlackScholes\n[extra]\n[tasks]\nrun = classify\n",
    "[model]\nkind = BlackScholes\n[grid]\nrefinement_levels = 2\n[tasks]\nrun = classify\n",
    "not an ini",
])
def test_invalid_configs(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_empty_tasks(tmp_path):
    with pytest.raises(ValidationError):
        parse_config(_cfg(tmp_path, tasks="").read_text())
    res = CliRunner().invoke(main, ["run", str(_cfg(tmp_path, tasks=""))])
    assert res.exit_code == 2
    assert json.loads(res.stderr)["type"] == "ValidationError"


def test_too_few_paths(tmp_path):
    p = _cfg(tmp_path)
    p.write_text(p.read_text().replace("n_paths = 1000", "n_paths = 10"))
    with pytest.raises(ValidationError):
        parse_config(p.read_text())
    assert CliRunner().invoke(main, ["reproduce", "-m", "BlackScholes", "--n-paths", "10"]).exit_code == 2


def test_classify_only(tmp_path):
    res = CliRunner().invoke(main, ["run", str(_cfg(tmp_path, tasks="classify"))])
    assert res.exit_code == 0, res.output
    row = [line for line in res.stdout.splitlines() if line.startswith("BlackScholes")][0]
    assert row.split()[-4:] == ["holds"] * 4


def test_run_deterministic_and_manifest(tmp_path):
    runner = CliRunner()
    cfg = _cfg(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert runner.invoke(main, ["run", str(cfg), "-o", str(a)]).exit_code == 0
    assert runner.invoke(main, ["run", str(cfg), "-o", str(b)]).exit_code == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert "spectrum.csv" in csvs and "khat_quantiles.csv" in csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    man = configparser.ConfigParser(interpolation=None)
    man.optionxform = str
    man.read(a / "manifest.ini")
    outputs = {p.name for p in a.iterdir() if p.name != "manifest.ini"}
    assert set(man["files"]) == outputs
    for name, digest in man["files"].items():
        assert sha256(a / name) == digest
    assert man["manifest"]["master_seed"] == "7"
    res = runner.invoke(main, ["run", str(a / "manifest.ini"), "-o", str(c)])
    assert res.exit_code == 0, res.output
    for name in outputs:
        assert (a / name).read_bytes() == (c / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    runner = CliRunner()
    cfg = _cfg(tmp_path, tasks="deflators")
    runner.invoke(main, ["run", str(cfg), "-o", str(tmp_path / "a")])
    runner.invoke(main, ["run", str(cfg), "-o", str(tmp_path / "b"), "--seed", "8"])
    assert ((tmp_path / "a" / "deflator_verdicts.csv").read_bytes()
            != (tmp_path / "b" / "deflator_verdicts.csv").read_bytes())


def test_task_filter(tmp_path):
    res = CliRunner().invoke(main, ["run", str(_cfg(tmp_path)), "-t", "characteristics",
                                    "-o", str(tmp_path / "f")])
    assert res.exit_code == 0
    assert not (tmp_path / "f" / "spectrum.csv").exists()
    assert (tmp_path / "f" / "khat_quantiles.csv").exists()


def test_reproduce_single_model(tmp_path):
    res = CliRunner().invoke(main, ["reproduce", "-m", "BlackScholes", "-o", str(tmp_path)])
    assert res.exit_code == 0, res.output
    rows = [line for line in res.stdout.splitlines() if "holds" in line or "fails" in line]
    assert len(rows) == 1
    assert (tmp_path / "spectrum.csv").exists() and (tmp_path / "manifest.ini").exists()


def test_reproduce_unknown_model():
    assert CliRunner().invoke(main, ["reproduce", "-m", "Nope"]).exit_code == 2


def test_integral_test_command():
    assert CliRunner().invoke(main, ["integral-test", "--", "-1"]).stdout.strip() == "strict_local"
    assert CliRunner().invoke(main, ["integral-test", "0"]).stdout.strip() == "true_martingale_candidate"


def test_version():
    res = CliRunner().invoke(main, ["--version"])
    assert res.exit_code == 0 and "0.1.0" in res.stdout
