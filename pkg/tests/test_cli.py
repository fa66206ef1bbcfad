import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import pytest

from cfaudit.cli import EXIT_CONFIG, EXIT_DATA, EXIT_SERVICE, build_parser, main
from conftest import FIXTURES, FakeRewriteService


def run(tmp_path, *args, seed=3, profile="bordeaux"):
    return main(["--seed", str(seed), "--profile", profile, "--out-dir", str(tmp_path), *args])


def synth(tmp_path, n=1500, delta=0.03):
    assert run(tmp_path, "synth", "--n-pairs", str(n), "--delta", str(delta), "--epsilon", "0.05") == 0
    return tmp_path / "preds.jsonl"


def test_every_subcommand_is_registered():
    names = set(build_parser()._subparsers._group_actions[0].choices)
    assert {"filter", "pairs", "predict", "audit", "stratify", "synth", "project", "compare", "report"} <= names


def test_synth_audit_stratify_report_pipeline(tmp_path, capsys):
    preds = synth(tmp_path)
    truth = json.loads((tmp_path / "truth.json").read_text())["truth"]
    assert run(tmp_path, "audit", "--preds", str(preds), "--iterations", "200", "--markdown") == 0
    out = capsys.readouterr().out
    assert "Pairwise Disagreement Rate (PDR)" in out
    audit = json.loads((tmp_path / "audit.json").read_text())
    full = next(r for r in audit["reports"] if r["condition"] == "full")["metrics"]
    assert full["nmdf"]["lower"] <= full["nmdf"]["point"] <= full["nmdf"]["upper"]
    assert abs(full["nmdf"]["point"] - truth["nmdf"]) < 0.03
    assert (tmp_path / "audit.md").exists()

    assert run(tmp_path, "stratify", "--preds", str(preds), "--markdown") == 0
    strata = json.loads((tmp_path / "strata.json").read_text())["strata"]
    assert sum(sum(s["counts"][k] for k in "abcd") for s in strata) == 1500

    assert run(tmp_path, "report", "--audit", str(tmp_path / "audit.json"), "--strata",
               str(tmp_path / "strata.json")) == 0
    for name in ("report.json", "report.md", "plot_data.json", "manifest.json"):
        assert (tmp_path / name).exists(), name
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert [s["stage"] for s in manifest["stages"]] == ["synth", "audit", "stratify", "report"]


def test_predict_with_table_binding_reproduces_labels(tmp_path):
    preds = synth(tmp_path, n=300)
    (tmp_path / "binding.toml").write_text('[binding]\nkind = "table"\ntable_path = "preds.jsonl"\n')
    assert run(tmp_path, "predict", "--pairs", str(tmp_path / "pairs.jsonl"), "--binding",
               str(tmp_path / "binding.toml"), "--out", "replayed.jsonl") == 0
    key = lambda r: (r["pair_id"], r["condition"], r["role"], r["label"])
    original = sorted(map(key, map(json.loads, preds.read_text().splitlines())))
    replayed = sorted(map(key, map(json.loads, (tmp_path / "replayed.jsonl").read_text().splitlines())))
    assert original == replayed


def test_filter_and_split(tmp_path, capsys):
    src = FIXTURES / "clean_fr.jsonl"
    assert run(tmp_path, "filter", "--input", str(src), "--split", "0.5") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["kept"] == 20 and summary["rejected"] == 0
    lines = lambda name: (tmp_path / name).read_text().splitlines()
    assert len(lines("train.jsonl")) + len(lines("test.jsonl")) == 20


def test_project(tmp_path, capsys):
    assert run(tmp_path, "project", "--visits", "20.9e6", "--share", "0.5", "--differential", "0.021") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["raw"] == 219450.0 and out["rounded"] == 220000.0


def test_compare_two_audits(tmp_path, capsys):
    preds = synth(tmp_path)
    for name, seed in (("a.json", 1), ("b.json", 2)):
        assert main(["--seed", str(seed), "--out-dir", str(tmp_path), "audit", "--preds", str(preds),
                     "--iterations", "100", "--out", name]) == 0
    capsys.readouterr()
    assert run(tmp_path, "compare", "--a", str(tmp_path / "a.json"), "--b", str(tmp_path / "b.json"),
               "--labels", "first,second") == 0
    rows = json.loads((tmp_path / "comparison.json").read_text())["rows"]
    assert all(r["delta"] == 0 for r in rows)
    assert all(r["status"] == "overlap" for r in rows)


class _Handler(BaseHTTPRequestHandler):
    fake: FakeRewriteService

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        reply = self.fake(httpx.Request("POST", "http://local/v1", content=body))
        data = reply.content
        self.send_response(reply.status_code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def local_service():
    fake = FakeRewriteService("fr")
    handler = type("Handler", (_Handler,), {"fake": fake})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions", fake
    server.shutdown()


def test_pairs_against_local_endpoint(tmp_path, local_service, capsys):
    url, fake = local_service
    assert run(tmp_path, "pairs", "--input", str(FIXTURES / "clean_fr.jsonl"), "--endpoint", url,
               "--model", "test") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pairs"] == 20 and fake.calls == 20
    pair = json.loads((tmp_path / "pairs.jsonl").read_text().splitlines()[0])
    assert pair["original"]["sex"] != pair["counterfactual"]["sex"]
    # a second run resumes from the checkpoint and sends nothing
    assert run(tmp_path, "pairs", "--input", str(FIXTURES / "clean_fr.jsonl"), "--endpoint", url,
               "--model", "test") == 0
    assert fake.calls == 20


def _closed_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_exit_codes(tmp_path, capsys):
    src = str(FIXTURES / "clean_en.jsonl")
    url = f"http://127.0.0.1:{_closed_port()}/v1/chat/completions"
    assert run(tmp_path, "pairs", "--input", src, "--endpoint", url, "--retries", "1", "--timeout", "1") == EXIT_SERVICE
    assert run(tmp_path, "pairs", "--input", src) == EXIT_CONFIG
    assert run(tmp_path, "audit", "--preds", str(tmp_path / "missing.jsonl")) == EXIT_DATA
    (tmp_path / "bad.jsonl").write_text('{"pair_id": "x", "condition": "full"}\n')
    assert run(tmp_path, "audit", "--preds", str(tmp_path / "bad.jsonl")) == EXIT_DATA
    assert run(tmp_path, "report", "--audit", str(tmp_path / "missing.json")) == EXIT_DATA
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["audit"])
    assert exc.value.code == 2


def test_same_seed_gives_identical_report(tmp_path):
    outputs = []
    for d in ("one", "two"):
        out = tmp_path / d
        assert main(["--seed", "11", "--out-dir", str(out), "synth", "--n-pairs", "800", "--delta", "0.05"]) == 0
        assert main(["--seed", "11", "--out-dir", str(out), "audit", "--preds", str(out / "preds.jsonl"),
                     "--iterations", "150"]) == 0
        assert main(["--seed", "11", "--out-dir", str(out), "report", "--audit", str(out / "audit.json")]) == 0
        outputs.append((out / "report.json").read_bytes())
    assert outputs[0] == outputs[1]
