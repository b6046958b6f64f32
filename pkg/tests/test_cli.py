from __future__ import annotations

import json

import pytest

from comind.cli import build_backends, build_sandbox, main
from comind.config import RunConfig, config_digest, load_config
from comind.engine import run_episode
from comind.protocol import write_trace_file
from fixtures import bee_train_fixture, episode_config
from tracegen import random_trace

import random


def _run_bee_episode(tmp_path):
    question, images, backends, sandbox, _ = bee_train_fixture()
    return run_episode(question, images, episode_config(), backends, sandbox, tmp_path / "ws")


# --- validate ------------------------------------------------------------


def test_validate_clean_trace_exits_zero(tmp_path, capsys):
    result = _run_bee_episode(tmp_path)
    code = main(["validate", str(tmp_path / "ws" / "trace.jsonl")])
    out = capsys.readouterr().out
    assert code == 0
    assert "OK: no violations" in out
    assert f"events: {len(result.trace.events)}" in out


def test_validate_bad_trace_exits_one(tmp_path, capsys):
    rng = random.Random(1)
    trace = random_trace(rng)
    # Corrupt it: drop the leading decision.
    trace.events = trace.events[1:]
    for i, ev in enumerate(trace.events):
        ev.seq = i
    path = tmp_path / "bad.jsonl"
    write_trace_file(trace, path)
    code = main(["validate", str(path)])
    out = capsys.readouterr().out
    assert code == 1
    assert "VIOLATION" in out


# --- stats ------------------------------------------------------------------


def test_stats_over_run_directory(tmp_path, capsys):
    _run_bee_episode(tmp_path)
    code = main(["stats", str(tmp_path)])
    assert code == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["n_traces"] == 1
    assert stats["invoked_pct"]["convergent"] == 100.0
    assert stats["invoked_pct"]["spatial"] == 0.0
    assert stats["multi_pct"] == 100.0


def test_stats_empty_dir_errors(tmp_path, capsys):
    code = main(["stats", str(tmp_path)])
    assert code == 1


# --- config ----------------------------------------------------------------------


def test_load_config_round_trip(tmp_path):
    config_obj = {
        "endpoint": "https://example.test/v1/chat/completions",
        "model": "test-model",
        "api_key_env": "TEST_KEY",
        "sampling": {"meta": {"max_tokens": 8192}, "gate": {"temperature": 0.0}},
        "max_steps": 6,
        "sandbox_command": ["python3", "-m", "sandbox_shim"],
        "workspace_root": str(tmp_path / "ws"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_obj))
    config = load_config(path)
    assert config.model == "test-model"
    assert config.max_steps == 6
    assert config.sampling.meta.max_tokens == 8192
    assert config.sampling.meta.temperature == 0.7
    assert config.sampling.gate.temperature == 0.0
    assert config.sampling.mindset.max_tokens == 32768
    assert config.image_endpoint == config.endpoint


def test_config_digest_excludes_volatile_fields(tmp_path):
    a = RunConfig(workspace_root=str(tmp_path / "a"))
    b = RunConfig(workspace_root=str(tmp_path / "b"))
    assert config_digest(a) == config_digest(b)
    c = RunConfig(max_steps=3)
    assert config_digest(a) != config_digest(c)


def test_build_backends_and_sandbox():
    config = RunConfig(sandbox_command=["python3", "-m", "sandbox_shim"])
    backends = build_backends(config)
    assert backends.meta is backends.mindset is backends.gate
    assert backends.image is not None
    sandbox = build_sandbox(config)
    assert sandbox.command == ["python3", "-m", "sandbox_shim"]


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
