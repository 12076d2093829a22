import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncsa.cli import audit, main, run
from asyncsa.config import ExperimentConfig
from asyncsa.errors import ConfigError
from asyncsa.mdp import random_model, value_iteration

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name, tmp_path, **override):
    d = json.loads((CONFIGS / name).read_text())
    d["out_dir"] = str(tmp_path / name.removesuffix(".json"))
    d.update(override)
    return d


def write(tmp_path, d, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return str(path)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_round_trip(name):
    cfg = ExperimentConfig.load(CONFIGS / name)
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


@settings(max_examples=30)
@given(st.lists(st.integers(0, 2 ** 64 - 1), min_size=1, max_size=4), st.integers(1, 10 ** 6),
       st.floats(0.51, 1.0), st.floats(1e-3, 0.3))
def test_config_round_trip_property(seeds, n, p, eps):
    cfg = ExperimentConfig(kind="mdp-learn", seeds=seeds, n_steps=n, model={"random": {"n_states": 2, "n_actions": 2,
                           "beta": 0.5, "seed": 0}}, epsilon=eps, schedule={"kind": "power", "p": 1.0, "q": 0.0},
                           fast_schedule={"kind": "power", "p": min(p, 0.99), "q": 0.0})
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_one_state_mdp_reaches_two(tmp_path):
    code, summary = run(ExperimentConfig.from_dict(load("one_state_mdp.json", tmp_path)))
    assert code == 0
    assert summary["n_ok"] == 3
    for seed in (0, 1, 2):
        diag = json.loads((tmp_path / "one_state_mdp" / f"diagnostics_seed{seed}.json").read_text())
        assert diag["diagnostics"]["final_Q"][0][0] == pytest.approx(2.0, abs=0.02)


def test_reducible_audit_exits_nonzero(tmp_path, capsys):
    code = main(["audit", "--config", str(CONFIGS / "audit_reducible.json")])
    assert code != 0
    out = capsys.readouterr().out
    assert "A4(b)" in out
    assert "reducible" in out


def test_mdp_audit_reports_eta():
    report = audit(ExperimentConfig.load(CONFIGS / "audit_mdp.json"))
    assert report["violated"] == []
    item = report["items"]["A4/B4 scheduling chain"]
    assert item["status"] == "verified"
    assert 0 < item["eta_hat"] < 1
    assert report["items"]["A2 step sizes"]["status"] == "verified"
    assert report["items"]["B6 fast equilibrium"]["contraction_constant"] == 0.8


def strip_time(summary):
    return {k: v for k, v in summary.items() if k != "created"}


@pytest.mark.parametrize("name,override", [
    ("mdp_learn.json", {"seeds": [3], "n_steps": 3000}),
    ("single_sa.json", {"seeds": [1, 2], "n_steps": 2000}),
    ("two_timescale.json", {"seeds": [5], "n_steps": 2000}),
    ("di_flow.json", {}),
])
def test_run_is_deterministic(tmp_path, name, override):
    a = load(name, tmp_path / "a", **override)
    b = dict(a, out_dir=str(tmp_path / "b"))
    _, sa = run(ExperimentConfig.from_dict(a))
    _, sb = run(ExperimentConfig.from_dict(b))
    assert strip_time(sa) == strip_time(sb)
    assert sa["file_hashes"] and all(sa["file_hashes"].values())
    for seed, files in sa["file_hashes"].items():
        for fname in files:
            assert (Path(a["out_dir"]) / fname).read_bytes() == (Path(b["out_dir"]) / fname).read_bytes()


def test_seed_and_out_flags(tmp_path, capsys):
    cfg = write(tmp_path, load("single_sa.json", tmp_path, n_steps=500))
    out = tmp_path / "override"
    assert main(["run", "--config", cfg, "--seed", "9", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [9]
    assert (out / "trajectory_seed9.csv").exists()
    assert json.loads((out / "metadata_seed9.json").read_text())["seed"] == 9


def test_invalid_config_exits_2(tmp_path, capsys):
    bad = load("two_timescale.json", tmp_path)
    bad["schedule"], bad["fast_schedule"] = bad["fast_schedule"], bad["schedule"]
    assert main(["run", "--config", write(tmp_path, bad)]) == 2
    assert "(B2)(c)" in capsys.readouterr().err
    assert main(["run", "--config", write(tmp_path, {"kind": "single-sa", "colour": 1}, "x.json")]) == 2
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "mdp-learn", "seeds": [0]})


def test_oracle_subcommand(tmp_path, capsys):
    model = random_model(3, 2, 0.8, seed=0)
    path = tmp_path / "model.json"
    model.save(path)
    pol = tmp_path / "pol.json"
    pol.write_text(json.dumps([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]))
    assert main(["oracle", "--model", str(path), "--policy", str(pol)]) == 0
    out = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(out["V_star"], value_iteration(model).V, atol=1e-12)
    Q, V = np.array(out["Q_pi"]), np.array(out["V_pi"])
    np.testing.assert_allclose((np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]) * Q).sum(axis=1), V, atol=1e-9)
