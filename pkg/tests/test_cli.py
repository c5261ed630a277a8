import json

from rdpoison import __version__
from rdpoison.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from rdpoison.envs import CYCLE_REWARD, EnvironmentSpec


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _bodies(out_dir):
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.name != "manifest.json"}


def test_table2_artifacts_and_manifest(tmp_path, capsys):
    code, out, _ = _run(capsys, "plan", "--experiment", "table2", "--out", str(tmp_path / "a"), "--seed", "3")
    assert code == EXIT_OK and "artifacts written" in out
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["version"] == __version__
    assert len(manifest["config_sha256"]) == 64 and manifest["experiment"] == "table2"
    assert set(manifest["files"]) == set(_bodies(tmp_path / "a"))


def test_reruns_are_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert _run(capsys, "attack", "--out", str(tmp_path / d))[0] == EXIT_OK
    assert _bodies(tmp_path / "a") == _bodies(tmp_path / "b")
    ma, mb = (json.loads((tmp_path / d / "manifest.json").read_text()) for d in "ab")
    ma.pop("timestamp"), mb.pop("timestamp")
    ma["config"].pop("output_dir"), mb["config"].pop("output_dir")
    assert ma == mb


def test_curve_with_coarse_budgets(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"budgets": {"start": 0, "stop": 0.8, "step": 0.05}}))
    code, _, _ = _run(capsys, "curve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--grid-step", "0.01")
    assert code == EXIT_OK
    lines = next(p for p in (tmp_path / "o").iterdir() if p.suffix == ".csv").read_text().splitlines()
    assert lines[0].startswith("B,p1,p2,regret") and len(lines) == 18


def test_json_format(tmp_path, capsys):
    assert _run(capsys, "fano", "--out", str(tmp_path), "--format", "json")[0] == EXIT_OK
    assert not list(tmp_path.glob("*.csv"))
    for p in tmp_path.glob("*.json"):
        json.loads(p.read_text())


def test_identity_channel_certificate(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"channel": {"likelihood": [[1, 0], [0, 1]]}}))
    code, out, _ = _run(capsys, "fano", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == EXIT_OK
    docs = [json.loads(p.read_text()) for p in (tmp_path / "o").glob("*.json") if p.name != "manifest.json"]
    assert any(d.get("pe_map") == 0.0 or d.get("certificate", {}).get("pe_map") == 0.0 for d in docs)


def test_config_errors_report_field_paths(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"experiment": "budget_regret", "params": {"grid_step": -1}}))
    code, _, err = _run(capsys, "run", "--config", str(cfg))
    assert code == EXIT_CONFIG and "params.grid_step" in err
    cfg.write_text("{not json")
    assert _run(capsys, "run", "--config", str(cfg))[0] == EXIT_CONFIG
    assert _run(capsys, "run", "--config", str(tmp_path / "missing.json"))[0] == EXIT_CONFIG
    cfg.write_text(json.dumps({"experiment": "table2"}))
    assert _run(capsys, "qlearn", "--config", str(cfg))[0] == EXIT_CONFIG


def test_experiment_errors_exit_nonzero(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"prior": [0.2, 0.2]}))
    code, _, err = _run(capsys, "plan", "--experiment", "table2", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == EXIT_FAIL and "error" in err


def test_env_dump(tmp_path, capsys):
    code, out, _ = _run(capsys, "env", "dump", "three_state_cycle")
    assert code == EXIT_OK
    env = EnvironmentSpec.from_dict(json.loads(out))
    assert env.mdp.num_states == 3
    assert _run(capsys, "env", "dump", "block_world", "--alpha", "1.0", "--out", str(tmp_path))[0] == EXIT_OK
    assert (tmp_path / "block_world.json").exists()


def test_verify_filter(capsys):
    code, out, _ = _run(capsys, "verify", "--filter", "fano")
    assert code == EXIT_OK
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert lines and all(l.startswith("PASS") for l in lines)


def test_verify_fault_injection(tmp_path, capsys):
    bad = CYCLE_REWARD.copy()
    bad[2, 2] = 0.05
    cfg = tmp_path / "faults.json"
    cfg.write_text(json.dumps({"thm51": {"reward": bad.tolist()}}))
    code, out, _ = _run(capsys, "verify", "--filter", "thm51", "table2", "--config", str(cfg))
    assert code == EXIT_FAIL
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert any(l.startswith("FAIL") for l in lines)
    assert all(l.startswith("PASS") for l in lines if "table2" in l)
    cfg.write_text(json.dumps({"nope": {}}))
    assert _run(capsys, "verify", "--config", str(cfg))[0] == EXIT_CONFIG


def test_verify_all_non_simulation_groups(capsys):
    code, out, _ = _run(capsys, "verify", "--filter", "table2", "thm51", "attack", "fano", "budget", "surface", "env")
    assert code == EXIT_OK, out
