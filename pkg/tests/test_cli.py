import json
import subprocess
import sys

import numpy as np
import pytest

from pseudo2real.manifest import UtteranceRecord, write_manifest
from pseudo2real.tensor_store import TensorMap, read_archive, write_archive

from cli_cases import SMALL_CONFIG, run_cli, run_workflow


@pytest.fixture(scope="module")
def workflow_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("wf")
    return run_workflow(root / "t1", 1), run_workflow(root / "t8", 8), root


def test_workflow_succeeds(workflow_runs):
    (results, files), _, _ = workflow_runs
    for name, (code, out, err) in results.items():
        assert code == 0, (name, err)
        if name == "toy-decode":
            assert all(json.loads(line)["id"] for line in out.splitlines())
        else:
            json.loads(out)
    assert "data/tau.tva" in files and "clusters/cluster_3.jsonl" in files


def test_threads_do_not_change_outputs(workflow_runs):
    (r1, f1), (r8, f8), _ = workflow_runs
    assert f1 == f8
    assert {k: v[1] for k, v in r1.items()} == {k: v[1] for k, v in r8.items()}


def test_precomputed_and_command_backends_agree(workflow_runs):
    (results, _), _, _ = workflow_runs
    assert json.loads(results["search-hyp-dir"][1]) == json.loads(results["search-cmd"][1])


def test_diff_cli_matches_emitted_vector(workflow_runs):
    (_, files), _, root = workflow_runs
    assert files["tau.tva"] == files["data/tau.tva"]
    avg = read_archive(root / "t1" / "avg.tva")
    assert avg == read_archive(root / "t1" / "tau.tva")


def test_filter_conf_reports_on_stderr(workflow_runs):
    (results, _), _, _ = workflow_runs
    info = json.loads(results["filter-conf"][2])
    assert info["level"] == "Q2" and info["kept"] == 24


def write_pair(tmp_path):
    write_archive(tmp_path / "b.tva", TensorMap({"w": [1.0, 2.0]}))
    write_archive(tmp_path / "t.tva", TensorMap({"w": [2.0, -1.0]}))


def test_apply_happy_path(tmp_path):
    write_pair(tmp_path)
    code, out, _ = run_cli(["apply", "--base", "b.tva", "--vector", "t.tva", "--lambda", "0.5", "--out", "c.tva"], tmp_path)
    assert code == 0
    assert read_archive(tmp_path / "c.tva")["w"].tolist() == [2.0, 1.5]
    assert json.loads(out)["out"] == "c.tva"


def test_apply_negative_needs_flag(tmp_path):
    write_pair(tmp_path)
    argv = ["apply", "--base", "b.tva", "--vector", "t.tva", "--lambda", "-1", "--out", "c.tva"]
    code, _, err = run_cli(argv, tmp_path)
    assert code == 2 and json.loads(err)["error"] == "negative_lambda"
    assert run_cli(argv + ["--allow-negative"], tmp_path)[0] == 0


def test_apply_overflow_is_computation_error(tmp_path):
    write_archive(tmp_path / "b.tva", TensorMap({"w": [3e38]}))
    code, _, err = run_cli(["apply", "--base", "b.tva", "--vector", "b.tva", "--lambda", "1", "--out", "c.tva"], tmp_path)
    assert code == 3
    assert json.loads(err)["index"] == 0


def test_diff_incompatible(tmp_path):
    write_archive(tmp_path / "a.tva", TensorMap({"w": [1.0]}))
    write_archive(tmp_path / "b.tva", TensorMap({"w": [1.0, 2.0]}))
    code, _, err = run_cli(["diff", "--minuend", "a.tva", "--subtrahend", "b.tva", "--out", "t.tva"], tmp_path)
    assert code == 2 and json.loads(err)["error"] == "incompatible"


def test_bad_archive_is_data_error(tmp_path):
    (tmp_path / "x.tva").write_bytes(b"nope")
    code, _, err = run_cli(["stats", "x.tva"], tmp_path)
    assert code == 2 and json.loads(err)["error"] == "bad_magic"
    assert run_cli(["stats", "missing.tva"], tmp_path)[0] == 2


def test_wer_disjoint_ids(tmp_path):
    write_manifest(tmp_path / "r.jsonl", [UtteranceRecord("a", reference="x")])
    write_manifest(tmp_path / "h.jsonl", [UtteranceRecord("b", hypothesis="x")])
    code, _, err = run_cli(["wer", "--ref", "r.jsonl", "--hyp", "h.jsonl"], tmp_path)
    assert code == 2 and json.loads(err)["error"] == "unmatched_ids"


def test_wer_raw_mode(tmp_path):
    write_manifest(tmp_path / "r.jsonl", [UtteranceRecord("a", reference="Hello there")])
    write_manifest(tmp_path / "h.jsonl", [UtteranceRecord("a", hypothesis="hello there")])
    assert json.loads(run_cli(["wer", "--ref", "r.jsonl", "--hyp", "h.jsonl"], tmp_path)[1])["corpus_wer"] == 0.0
    raw = json.loads(run_cli(["wer", "--ref", "r.jsonl", "--hyp", "h.jsonl", "--no-normalize"], tmp_path)[1])
    assert raw["corpus_wer"] == 0.5


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["cluster", "--embeddings", "e.jsonl", "--k", "0", "--seed", "1", "--out", "a.json"],
        ["cluster", "--embeddings", "e.jsonl", "--k", "2", "--out", "a.json"],
        ["apply", "--base", "b.tva"],
        ["--threads", "0", "stats", "x.tva"],
        ["toy", "run", "--out", "r.json"],
        ["filter-conf", "--manifest", "m.jsonl", "--level", "Q5", "--out", "k.jsonl"],
    ],
)
def test_usage_errors(tmp_path, argv):
    code, _, err = run_cli(argv, tmp_path)
    assert code == 1
    assert "usage" in err


def test_help_at_every_level(tmp_path):
    for argv in (["--help"], ["toy", "--help"], ["toy", "run", "--help"], ["cluster", "split", "--help"]):
        with pytest.raises(SystemExit) as e:
            run_cli(argv, tmp_path)
        assert e.value.code == 0


def test_filter_conf_missing_confidences(tmp_path):
    write_manifest(tmp_path / "m.jsonl", [UtteranceRecord("a", hypothesis="x")])
    code, _, err = run_cli(["filter-conf", "--manifest", "m.jsonl", "--level", "Q1", "--out", "k.jsonl"], tmp_path)
    assert code == 2 and json.loads(err)["error"] == "missing_confidence"


def test_search_lambda_missing_hypotheses(tmp_path):
    write_pair(tmp_path)
    write_manifest(tmp_path / "dev.jsonl", [UtteranceRecord("a", reference="x")])
    (tmp_path / "hyps").mkdir()
    write_manifest(tmp_path / "hyps" / "hyp_0.1.jsonl", [UtteranceRecord("a", hypothesis="x")])
    code, _, err = run_cli(
        ["search-lambda", "--base", "b.tva", "--vector", "t.tva", "--dev", "dev.jsonl", "--hyp-dir", "hyps", "--grid", "0.1,0.2"],
        tmp_path,
    )
    assert code == 4
    payload = json.loads(err)
    assert payload["failed_lambda"] == 0.2 and payload["partial"] == [{"lambda": 0.1, "wer": 0.0}]


def test_search_lambda_failing_command(tmp_path):
    write_pair(tmp_path)
    write_manifest(tmp_path / "dev.jsonl", [UtteranceRecord("a", reference="x")])
    code, _, err = run_cli(
        ["search-lambda", "--base", "b.tva", "--vector", "t.tva", "--dev", "dev.jsonl", "--cmd", f"{sys.executable} -c 'raise SystemExit(5)'"],
        tmp_path,
    )
    assert code == 4 and json.loads(err)["cause"] == "backend_exit"


def test_cluster_split_unknown_id(tmp_path):
    (tmp_path / "e.jsonl").write_text("\n".join(json.dumps({"id": f"u{i}", "embedding": [float(i)]}) for i in range(4)))
    assert run_cli(["cluster", "--embeddings", "e.jsonl", "--k", "2", "--seed", "3", "--out", "a.json"], tmp_path)[0] == 0
    write_manifest(tmp_path / "m.jsonl", [UtteranceRecord("zzz")])
    code, _, err = run_cli(["cluster", "split", "--assign", "a.json", "--manifest", "m.jsonl", "--out-dir", "o"], tmp_path)
    assert code == 2 and json.loads(err)["error"] == "unknown_id"


def test_quiet_silences_summary_not_errors(tmp_path):
    write_pair(tmp_path)
    code, out, _ = run_cli(["--quiet", "apply", "--base", "b.tva", "--vector", "t.tva", "--lambda", "0.5", "--out", "c.tva"], tmp_path)
    assert code == 0 and out == ""
    code, _, err = run_cli(["--quiet", "stats", "nope.tva"], tmp_path)
    assert code == 2 and json.loads(err)["error"] == "io"


def test_toy_seed_from_flag_or_config(tmp_path):
    cfg = {"world": dict(SMALL_CONFIG["world"]), "experiment": {"steps": 5, "pretrain_steps": 5}}
    del cfg["world"]["master_seed"]
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert run_cli(["toy", "run", "--config", "c.json", "--seeds", "1", "--out", "r.json"], tmp_path)[0] == 1
    assert run_cli(["toy", "run", "--config", "c.json", "--seed", "4", "--seeds", "1", "--out", "r.json"], tmp_path)[0] == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["reports"][0]["master_seed"] == 4


def test_toy_bad_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"world": {"vocab_size": 1, "master_seed": 0}}))
    assert run_cli(["toy", "run", "--config", "c.json", "--out", "r.json"], tmp_path)[0] == 2
    (tmp_path / "c.json").write_text("{not json")
    assert run_cli(["toy", "run", "--config", "c.json", "--seed", "1", "--out", "r.json"], tmp_path)[0] == 2


def test_toy_decode_bad_frames(tmp_path):
    write_archive(tmp_path / "m.tva", TensorMap({"W": np.zeros((3, 2)), "b": np.zeros(3)}))
    write_manifest(tmp_path / "refs.jsonl", [UtteranceRecord("a", reference="w0")])
    (tmp_path / "f.jsonl").write_text(json.dumps({"id": "a", "frames": [[1.0, 2.0, 3.0]]}) + "\n")
    code, _, err = run_cli(["toy", "decode", "--checkpoint", "m.tva", "--frames", "f.jsonl", "--manifest", "refs.jsonl"], tmp_path)
    assert code == 2 and json.loads(err)["error"] == "bad_frames"
    (tmp_path / "f.jsonl").write_text(json.dumps({"id": "a", "frames": [[1.0, 2.0]]}) + "\n")
    code, out, _ = run_cli(["toy", "decode", "--checkpoint", "m.tva", "--frames", "f.jsonl", "--manifest", "refs.jsonl"], tmp_path)
    assert code == 0 and json.loads(out)["hypothesis"] == "w0"


def test_entry_point_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pseudo2real", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("p2r ")
    proc = subprocess.run([sys.executable, "-m", "pseudo2real", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 1
