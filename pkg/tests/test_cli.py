"""Command-line entry points end to end."""

from __future__ import annotations

import json
import subprocess
import sys
import time
import urllib.request
from pathlib import Path

from avos.cli import load_config_file, main


def _gen(tmp_path: Path, name: str, seed: int = 0) -> Path:
    out = tmp_path / name
    code = main(
        [
            "gen-scenes", "--seed", str(seed), "--easy", "2", "--medium", "1",
            "--hard", "1", "--out", str(out),
        ]
    )
    assert code == 0
    return out


def test_gen_scenes_deterministic(tmp_path, capsys):
    a = _gen(tmp_path, "a")
    b = _gen(tmp_path, "b")
    assert (a / "suite.tasks.json").read_bytes() == (b / "suite.tasks.json").read_bytes()
    for scene_file in sorted((a / "scenes").glob("*.scene.json")):
        twin = b / "scenes" / scene_file.name
        assert scene_file.read_bytes() == twin.read_bytes()


def test_run_suite_and_eval_roundtrip(tmp_path, capsys):
    data = _gen(tmp_path, "data")
    records = tmp_path / "records"
    code = main(
        [
            "run-suite", "--tasks", str(data / "suite.tasks.json"), "--agent", "re",
            "--episodes", "3", "--seed", "5", "--out", str(records), "--quiet",
            "--max-steps", "15",
        ]
    )
    assert code == 0
    files = sorted(records.glob("*.episode.jsonl"))
    assert len(files) == 3
    assert (records / "suite_result.json").exists()

    capsys.readouterr()  # drop generation chatter
    code = main(
        [
            "eval", "--records", str(records), "--tasks", str(data / "suite.tasks.json"),
            "--format", "csv",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("split,SR,MSS,SPL,NE")


def test_run_suite_byte_identical(tmp_path):
    data = _gen(tmp_path, "data")
    args = [
        "run-suite", "--tasks", str(data / "suite.tasks.json"), "--agent", "re",
        "--episodes", "2", "--seed", "9", "--quiet", "--max-steps", "10",
    ]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    for f1 in sorted((tmp_path / "r1").glob("*.episode.jsonl")):
        f2 = tmp_path / "r2" / f1.name
        assert f1.read_bytes() == f2.read_bytes()


def test_eval_empty_records_dir_errors(tmp_path, capsys):
    data = _gen(tmp_path, "data")
    empty = tmp_path / "none"
    empty.mkdir()
    code = main(
        ["eval", "--records", str(empty), "--tasks", str(data / "suite.tasks.json")]
    )
    assert code == 2
    assert "no episode" in capsys.readouterr().err


def test_missing_file_usage_error(capsys):
    code = main(["run-suite", "--tasks", "/nonexistent/t.json", "--quiet"])
    assert code == 2


def test_config_file_defaults(tmp_path):
    cfg = tmp_path / "avos.toml"
    cfg.write_text(
        "[defaults]\ntheta = 0.25\nstep_size = 4.0\n\n[server]\nport = 9111\n\n"
        "[oracle]\nmode = \"scripted\"\n"
    )
    values = load_config_file(cfg)
    assert values["theta"] == 0.25
    assert values["step_size"] == 4.0
    assert values["server_port"] == 9111
    assert values["oracle_mode"] == "scripted"
    assert load_config_file(None) == {}


def test_serve_smoke_binds_port(tmp_path):
    data = _gen(tmp_path, "data")
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "avos.cli", "serve", "--tasks",
            str(data / "suite.tasks.json"), "--sessions", str(tmp_path / "sessions"),
            "--port", "0",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        line = proc.stdout.readline().strip()
        assert line.startswith("serving on http://")
        url = line.split("serving on ", 1)[1]
        deadline = time.monotonic() + 10
        tasks = None
        while time.monotonic() < deadline:
            try:
                with urllib.request.urlopen(f"{url}/tasks", timeout=2) as resp:
                    tasks = json.loads(resp.read())
                break
            except OSError:
                time.sleep(0.2)
        assert tasks and tasks[0]["task_id"]
    finally:
        proc.terminate()
        proc.wait(timeout=10)
