import json

import pytest

from gibbsroute.cli import main
from gibbsroute.config import ConfigError, parse_config

BASE = """
[model]
lambda = 3.0
gamma = 0.5
k_max = 2
[grid]
deltas = ["1/9", "1/3"]
[mcmc]
steps = 500
thin = 50
[run]
seeds = 2
[free_energy]
lambdas = [20, 40, 80]
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text(BASE)
    return p


def _run(args, capsys):
    code = main(args)
    return code, capsys.readouterr().err


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    code, err = _run(["solve", "--config", str(missing)], capsys)
    rec = json.loads(err.strip().splitlines()[-1])
    assert code == 2 and rec["error"] == "config" and rec["path"] == str(missing)


@pytest.mark.parametrize("text,key", [("model.bogus = 1\n", "model.bogus"),
                                      ("model.k_max = 0\n", None),
                                      ("[mcmc]\nsampler = 'hmc'\n", "mcmc.sampler")])
def test_invalid_config(tmp_path, capsys, text, key):
    p = tmp_path / "bad.toml"
    p.write_text(text)
    code, err = _run(["solve", "--config", str(p)], capsys)
    rec = json.loads(err)
    assert code == 2 and rec["path"] == str(p)
    if key:
        assert rec["key"] == key


def test_malformed_toml():
    with pytest.raises(ConfigError):
        parse_config("model = = 1", "x.toml")


@pytest.mark.parametrize("cmd", ["sample", "mcmc", "anneal", "solve", "functionals", "count-check",
                                 "free-energy", "distance"])
def test_commands_are_deterministic(cfg_file, tmp_path, cmd, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([cmd, "--config", str(cfg_file), "--out", str(a)]) == 0
    assert main([cmd, "--config", str(cfg_file), "--out", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files and files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
        first = (a / name).read_text().splitlines()[0]
        assert "config_hash" in first


def test_free_energy_rows(cfg_file, tmp_path):
    assert main(["free-energy", "--config", str(cfg_file), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "free_energy.csv").read_text().splitlines()
    assert len(lines) == 2 + 3 * 2


def test_hash_tracks_config(cfg_file, tmp_path):
    main(["sample", "--config", str(cfg_file), "--out", str(tmp_path / "a")])
    main(["sample", "--config", str(cfg_file), "--out", str(tmp_path / "b"), "--seed", "7"])
    ha = (tmp_path / "a" / "points.csv").read_text().splitlines()[0]
    hb = (tmp_path / "b" / "points.csv").read_text().splitlines()[0]
    assert ha != hb


def test_budget_refusal(tmp_path, capsys):
    p = tmp_path / "big.toml"
    p.write_text(BASE.replace("lambda = 3.0", "lambda = 30.0") + "[budget]\nenumeration = 1000\n")
    code, err = _run(["count-check", "--config", str(p), "--out", str(tmp_path / "o")], capsys)
    assert code == 3 and json.loads(err)["error"] == "budget"


def test_strict_nonconvergence(tmp_path, capsys):
    p = tmp_path / "nc.toml"
    p.write_text(BASE.replace("gamma = 0.5", "gamma = 0.5\nbeta = 0.5") + "[solver]\nmax_iter = 2\n")
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "lax")]) == 0
    code, err = _run(["solve", "--config", str(p), "--out", str(tmp_path / "o"), "--strict"], capsys)
    assert code == 4 and json.loads(err)["error"] == "nonconvergence"


def test_free_energy_needs_beta_zero(tmp_path, capsys):
    p = tmp_path / "b.toml"
    p.write_text(BASE.replace("gamma = 0.5", "gamma = 0.5\nbeta = 0.1"))
    code, err = _run(["free-energy", "--config", str(p), "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and json.loads(err)["key"] == "model.beta"


def test_tabulated_density(tmp_path):
    p = tmp_path / "tab.toml"
    p.write_text(BASE + '[density]\nkind = "tabulated"\ndelta = "1/3"\ncells = [0.2, 0.5, 0.3]\n')
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
