import json

import pytest

from matchkit import cli
from matchkit import estimate as est
from matchkit.core import dump_json, economy_to_dict
from matchkit.fixtures import da_ttc_economy, no_priority_economy


@pytest.fixture
def files(tmp_path):
    econ = tmp_path / "fig_da_ttc.json"
    econ.write_text(dump_json(economy_to_dict(da_ttc_economy())))
    weak = tmp_path / "weak.json"
    weak.write_text(dump_json(economy_to_dict(no_priority_economy())))
    return tmp_path, econ, weak


def test_run_and_audit(files, capsys):
    tmp, econ, _ = files
    out = tmp / "m.json"
    assert cli.main(["run", "--mechanism", "da", "--economy", str(econ), "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == {"1": "a", "2": "b", "3": "c"}
    manifest = json.loads((tmp / "m.json.manifest.json").read_text())
    assert manifest["command"] == "run" and manifest["inputs"]["economy"]["sha256"]
    assert cli.main(["audit", "--economy", str(econ), "--matching", str(out), "--check", "stability"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["violations"] == []


def test_run_to_stdout(files, capsys):
    _, econ, _ = files
    assert cli.main(["run", "--mechanism", "ttc", "--economy", str(econ)]) == 0
    assert json.loads(capsys.readouterr().out) == {"1": "b", "2": "a", "3": "c"}


def test_seed_required_for_stochastic_commands(files):
    tmp, _, weak = files
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--mechanism", "da", "--economy", str(weak), "--out", str(tmp / "x.json")])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["simulate", "--experiment", "ttc-rsd", "--out", str(tmp / "x.csv")])
    assert info.value.code == 2


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2


def test_validation_failures_exit_1(files, capsys):
    tmp, econ, _ = files
    bad = tmp / "bad.json"
    d = economy_to_dict(da_ttc_economy())
    d["schools"][0]["capacity"] = 0
    bad.write_text(json.dumps(d))
    assert cli.main(["run", "--mechanism", "da", "--economy", str(bad)]) == 1
    assert "capacity[a]" in capsys.readouterr().err
    assert cli.main(["run", "--mechanism", "da", "--economy", str(tmp / "missing.json")]) == 1
    garbage = tmp / "g.json"
    garbage.write_text("{not json")
    assert cli.main(["run", "--mechanism", "da", "--economy", str(garbage)]) == 1
    over = tmp / "over.json"
    over.write_text(json.dumps({"1": "a", "2": "a", "3": "c"}))
    assert cli.main(["audit", "--economy", str(econ), "--matching", str(over)]) == 1


def test_hausman_layout_mismatch_exit_1(tmp_path, capsys):
    mk = est.simulate_choice_data(300, [0.0, 0.4, -0.2], [1.0], seed=0)
    good = est.fit(mk.data, est.STABILITY).to_dict()
    bad = {"names": ["delta[b]", "beta[x1]"], "theta": [0.0, 0.0], "cov": [[1, 0], [0, 1]]}
    data = tmp_path / "fits.json"
    data.write_text(json.dumps({"fits": {"stability": good, "wtt": bad}}))
    out = tmp_path / "h.csv"
    assert cli.main(["estimate", "--mode", "hausman", "--data", str(data), "--out", str(out)]) == 1
    assert "layout" in capsys.readouterr().err
    assert not out.exists()


def test_estimate_tables(tmp_path):
    mk = est.simulate_choice_data(500, [0.0, 0.4, -0.2], [1.0], seed=0)
    data = tmp_path / "cd.json"
    data.write_text(json.dumps(mk.data.to_dict()))
    for mode in ("wtt", "stability"):
        out = tmp_path / f"{mode}.csv"
        assert cli.main(["estimate", "--mode", mode, "--data", str(data), "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "param,estimate,se"
        assert [l.split(",")[0] for l in lines[1:]] == mk.truth.names
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"iters": 80, "burn_in": 20}))
    out = tmp_path / "gibbs.csv"
    assert cli.main(["estimate", "--mode", "gibbs", "--data", str(data), "--config", str(cfg), "--seed", "1", "--out", str(out)]) == 0
    assert out.read_text().startswith("param,estimate,se\n")


def test_simulate_experiments(tmp_path, files):
    _, econ, _ = files
    (tmp_path / "game.json").write_text(json.dumps({"t1": 2, "t2": 1.5}))
    out = tmp_path / "game.csv"
    assert cli.main(["simulate", "--experiment", "game", "--config", str(tmp_path / "game.json"), "--out", str(out)]) == 0
    assert "gamma,0.714285714285" in out.read_text()
    cfg = tmp_path / "eu.json"
    econ_path = tmp_path / "card.json"
    from matchkit.fixtures import cardinal_economy

    econ_path.write_text(dump_json(economy_to_dict(cardinal_economy())))
    cfg.write_text(json.dumps({"economy": "card.json", "mechanism": "da"}))
    out = tmp_path / "eu.csv"
    assert cli.main(["simulate", "--experiment", "eu", "--config", str(cfg), "--seed", "0", "--out", str(out)]) == 0
    assert "5/3" in out.read_text()


def test_partial_files_never_left(tmp_path, monkeypatch):
    target = tmp_path / "out.csv"
    target.write_text("old\n")

    def bad_replace(src, dst):
        raise OSError("disk gone")

    monkeypatch.setattr(cli.os, "replace", bad_replace)
    with pytest.raises(OSError):
        cli.atomic_write(target, "new\n")
    monkeypatch.undo()
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]
