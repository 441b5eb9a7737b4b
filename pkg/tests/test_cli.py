from __future__ import annotations

import json

import pytest

from taskforge.cli import main

SMALL_RENDER = "[render]\nn_points = 64\nsamples_per_camera = 64\n"


def write_cfg(tmp_path, body=""):
    path = tmp_path / "run.toml"
    path.write_text(f'output_dir = "{tmp_path / "out"}"\n{body}\n{SMALL_RENDER}')
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "task", "gen", "--family", "juggling")[0] == 2
    assert run(capsys, "task", "gen", "--family", "lifting", "--seed", "-1")[0] == 2
    assert run(capsys, "--help")[0] == 0


def test_config_errors_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "pipeline", "run", "--config", str(tmp_path / "missing.toml"))
    assert code == 2 and "config error" in err
    bad = tmp_path / "bad.toml"
    bad.write_text("workers = 0\n")
    assert run(capsys, "pipeline", "run", "--config", str(bad))[0] == 2
    assert run(capsys, "agent", "run", "--task", str(tmp_path / "nope.json"), "--output-dir", str(tmp_path / "o"))[0] == 2


def test_no_credential_flags(capsys):
    assert run(capsys, "pipeline", "run", "--api-key", "x")[0] == 2


def test_task_agent_collect_replay_flow(tmp_path, capsys, no_network):
    cfg = write_cfg(tmp_path)
    code, out, _ = run(capsys, "task", "gen", "--config", cfg, "--family", "lifting", "--seed", "3")
    assert code == 0
    task_path = json.loads(out)["path"]
    code, out, _ = run(capsys, "agent", "run", "--config", cfg, "--task", task_path, "--episodes", "3")
    assert code == 0 and json.loads(out)["success_rate"] == 1.0
    code, out, _ = run(capsys, "collect", "--config", cfg, "--task", task_path, "--n-target", "2")
    info = json.loads(out)
    assert code == 0 and info["succeeded"] == 2
    for mode in ("state", "action"):
        code, out, _ = run(capsys, "replay", "--config", cfg, "--task", task_path, "--trajs", info["path"], "--mode", mode)
        assert code == 0 and json.loads(out)["frames"] > 0
    produced = {p.name for p in tmp_path.iterdir()}
    assert produced == {"run.toml", "out"}


def test_collect_cap_exhaustion_exits_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "agent = \"synthetic\"\nsynthetic_success_rate = 0.0\nattempt_cap = 3")
    _, out, _ = run(capsys, "task", "gen", "--config", cfg, "--family", "pushing")
    code, _, err = run(capsys, "collect", "--config", cfg, "--task", json.loads(out)["path"])
    assert code == 1 and "stage collection" in err and "AttemptCapExhausted" in err


def test_db_build_and_query(tmp_path, capsys, no_network):
    cfg = write_cfg(tmp_path)
    code, _, err = run(capsys, "db", "query", "--config", cfg, "red cube")
    assert code == 2 and "db build" in err
    assert run(capsys, "db", "build", "--config", cfg)[0] == 0
    code, out, _ = run(capsys, "db", "query", "--config", cfg, "red cube", "-k", "2")
    hits = json.loads(out)
    assert code == 0 and len(hits) == 2 and hits[0]["score"] >= hits[1]["score"]


def test_pipeline_run_export_and_metrics(tmp_path, capsys, no_network):
    cfg = write_cfg(tmp_path, 'agent = "synthetic"\nsynthetic_success_rate = 0.5\nn_target = 2\nfamilies = ["lifting", "pushing"]')
    code, out, _ = run(capsys, "pipeline", "run", "--config", cfg, "--workers", "2")
    assert code == 0 and json.loads(out)["tasks"]["builtin_reach"]["rendered"] == 2
    run_dir = str(tmp_path / "out")
    code, out, _ = run(capsys, "export-dataset", run_dir)
    assert code == 0 and json.loads(out)["index"].endswith("dataset_index.jsonl")
    code, out, _ = run(capsys, "metrics", "throughput", run_dir)
    assert code == 0 and "demos_per_hour" in json.loads(out)


def test_pipeline_run_task_error_exits_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, 'agent = "synthetic"\nsynthetic_success_rate = 0.0\nattempt_cap = 2\nfamilies = ["lifting"]')
    code, out, err = run(capsys, "pipeline", "run", "--config", cfg)
    assert code == 1 and "stage collection" in err
    assert (tmp_path / "out" / "manifest.json").exists()


def test_metrics_bleu_and_solved(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("pick up the red cube\npick up the red cube\n\npick up the red cube\n")
    code, out, _ = run(capsys, "metrics", "bleu", str(corpus))
    assert code == 0 and out.strip() == "1"
    corpus.write_text("only one line\n")
    assert run(capsys, "metrics", "bleu", str(corpus))[0] == 1
    res = tmp_path / "r.jsonl"
    res.write_text('{"family": "lifting", "rate": 0.5}\n{"family": "lifting", "rate": 0.0}\n')
    code, out, _ = run(capsys, "metrics", "solved", str(res))
    assert code == 0 and json.loads(out)["overall"]["fraction"] == pytest.approx(0.5)


def test_external_provider_needs_env_endpoint(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("ANYTASK_PROVIDER_ENDPOINT", raising=False)
    cfg = write_cfg(tmp_path)
    code, _, err = run(capsys, "task", "gen", "--config", cfg, "--family", "lifting", "--provider", "external")
    assert code == 2 and "ANYTASK_PROVIDER_ENDPOINT" in err
