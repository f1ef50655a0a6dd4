import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from coenv.agents import CODEGEN_SCHEMA, ScriptedCodeGen, ScriptedPlanner, _METHOD, encode_response, encode_script
from coenv.cli import main
from coenv.tasks import task_names

RUN = ["run", "--task", "cube_stacking", "--trials", "2", "--seed", "4"]


def _out(capsys):
    return json.loads(capsys.readouterr().out)


@pytest.fixture
def scripted_run(tmp_path, capsys):
    assert main(RUN + ["--out", str(tmp_path)]) == 0
    capsys.readouterr()
    return tmp_path


def test_tasks_list(capsys):
    assert main(["tasks", "list"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == list(task_names())


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["run", "--task", "cube_stacking", "--trials", "0"],
                                  ["run", "--task", "cube_stacking", "--mode", "batch"],
                                  ["run", "--task", "cube_stacking", "--planner", "oracle"]])
def test_usage_errors(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv[:1] == ["run"] else [])) == 2


def test_unknown_task_hint(tmp_path, capsys):
    assert main(["run", "--task", "juggling", "--out", str(tmp_path)]) == 2
    assert "tasks list" in capsys.readouterr().err


def test_run_writes_session_and_kb(scripted_run):
    stats = json.loads((scripted_run / "session.json").read_text())
    assert stats["episodes_collected"] == 2 and stats["successes"] == 2
    assert len((scripted_run / "kb.ndjson").read_text().splitlines()) == 2


def test_replay_kb_and_episode(scripted_run, capsys):
    assert main(["replay", "--episode", str(scripted_run / "kb.ndjson")]) == 0
    assert all(r["match"] for r in _out(capsys)["records"])
    ep = sorted((scripted_run / "episodes").glob("*.ndjson"))[0]
    assert main(["replay", "--episode", str(ep)]) == 0
    assert _out(capsys)["match"] is True


def test_replay_missing_file(tmp_path, capsys):
    assert main(["replay", "--episode", str(tmp_path / "nope")]) == 2


def test_validate_and_export(scripted_run, tmp_path, capsys):
    assert main(["validate", "--trajectory", str(scripted_run / "kb.ndjson")]) == 0
    out = _out(capsys)
    assert [r["safe"] for r in out["results"]] == [True, True]
    dest = tmp_path / "wp.json"
    assert main(["export", "--kb", str(scripted_run / "kb.ndjson"), "--goal", "cube_stacking",
                 "--out", str(dest)]) == 0
    doc = json.loads(dest.read_text())
    assert doc["meta"]["record_id"] == 2 and doc["safe"] is True
    assert set(doc["agents"]) == {"0", "1"}


def test_export_without_demonstrations(scripted_run, capsys):
    assert main(["export", "--kb", str(scripted_run / "kb.ndjson"), "--goal", "nothing"]) == 1


def test_export_bad_format(scripted_run, capsys):
    assert main(["export", "--kb", str(scripted_run / "kb.ndjson"), "--goal", "cube_stacking",
                 "--format", "csv"]) == 2


def test_fuse(tmp_path, capsys):
    ident = {"translation": [0.0, 0.0, 0.0], "rotation": [1.0, 0.0, 0.0, 0.0]}
    shifted = {"translation": [1.0, 0.0, 0.0], "rotation": [1.0, 0.0, 0.0, 0.0]}
    (tmp_path / "ext.json").write_text(json.dumps({"cameras": {"c0": ident, "c1": shifted}}))
    views = [{"camera_id": "c0", "object_id": "box", "pose_in_camera": {"translation": [0.5, 0.2, 0.0],
                                                                       "rotation": [1.0, 0.0, 0.0, 0.0]}},
             {"camera_id": "c1", "object_id": "box", "pose_in_camera": {"translation": [-0.5, 0.2, 0.0],
                                                                       "rotation": [1.0, 0.0, 0.0, 0.0]}}]
    (tmp_path / "views.json").write_text(json.dumps({"views": views}))
    assert main(["fuse", "--views", str(tmp_path / "views.json"), "--extrinsics", str(tmp_path / "ext.json")]) == 0
    box = _out(capsys)["objects"]["box"]
    assert box["pose"]["translation"] == pytest.approx([0.5, 0.2, 0.0])
    assert box["views_used"] == 2


def test_fuse_malformed(tmp_path, capsys):
    (tmp_path / "ext.json").write_text("{}")
    (tmp_path / "views.json").write_text(json.dumps({"views": [{"camera_id": "c0"}]}))
    assert main(["fuse", "--views", str(tmp_path / "views.json"), "--extrinsics", str(tmp_path / "ext.json")]) == 2


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iterative": {"M_max": 2}}))
    assert main(RUN + ["--mode", "iterative", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 0
    cfg.write_text(json.dumps({"iterative": {"M_max": "many"}}))
    assert main(RUN + ["--out", str(tmp_path / "p"), "--config", str(cfg)]) == 2


def test_wire_without_url(monkeypatch, tmp_path, capsys):
    monkeypatch.delenv("COENV_PLANNER_URL", raising=False)
    assert main(RUN + ["--planner", "wire", "--out", str(tmp_path)]) == 3


def test_wire_unreachable(tmp_path, capsys):
    assert main(RUN + ["--planner", "wire:http://127.0.0.1:9/", "--out", str(tmp_path)]) == 3


class _Service(BaseHTTPRequestHandler):
    """Planner service backed by the scripted agents."""

    def do_POST(self):
        req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if req["schema"] == CODEGEN_SCHEMA:
            body = encode_script(ScriptedCodeGen("cube_stacking").generate(req))
        else:
            agent = ScriptedPlanner("cube_stacking")
            body = json.dumps({"text": encode_response(req["call"], getattr(agent, _METHOD[req["call"]])(req))})
        data = body.encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def service():
    srv = HTTPServer(("127.0.0.1", 0), _Service)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}/"
    srv.shutdown()
    srv.server_close()


@pytest.mark.parametrize("mode", ["interactive", "iterative"])
def test_wire_round_trip(service, mode, monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("COENV_PLANNER_URL", service)
    assert main(RUN + ["--mode", mode, "--planner", "wire", "--out", str(tmp_path)]) == 0
    stats = _out(capsys)
    assert stats["episodes_collected"] == 2
    assert stats["bytes_sent"] > 0 and stats["bytes_received"] > 0
