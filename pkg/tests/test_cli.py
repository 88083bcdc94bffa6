"""Command-line subcommands, output formats and error classes."""
import json

import numpy as np
import pytest

from skelnas.cli import main
from skelnas.space import Candidate, desk_space, serialize_candidate


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def containers(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--output", str(d), "--split", "--videos-per-class", "4", "--frames", "150",
                 "--seed", "3"]) == 0
    return d


def _desk_candidate(path, **picks):
    sp = desk_space()
    sel = [0] * len(sp)
    for name, idx in picks.items():
        sel[[g.name for g in sp.groups].index(name)] = idx
    path.write_text(serialize_candidate(Candidate(sp, tuple(sel))))
    return path


@pytest.fixture(scope="module")
def trained(containers, tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    cand = _desk_candidate(d / "cand.json")
    code = main(["train", "--candidate", str(cand), "--train", str(containers / "train.jsonl"),
                 "--val", str(containers / "val.jsonl"), "--epochs", "1", "--output", str(d / "w.npz"),
                 "--report", str(d / "report.json")])
    assert code == 0
    return d


class TestInfo:
    def test_cardinality(self, capsys):
        code, out, _ = run(capsys, "space", "--cardinality")
        assert code == 0 and out.strip() == "36733201920000"

    def test_space_listing(self, capsys):
        code, out, _ = run(capsys, "space", "--space", "desk")
        assert code == 0 and "6 groups" in out and "fixed" in out

    def test_space_json(self, capsys):
        code, out, _ = run(capsys, "space", "--json")
        assert code == 0 and len(json.loads(out)["groups"]) == 25

    def test_inspect(self, capsys):
        code, out, _ = run(capsys, "inspect", "--candidate", "best_choice")
        assert code == 0
        assert "total parameters" in out and "total MACs" in out
        assert "0.621 M parameters, 0.909 G MACs" in out

    def test_inspect_json(self, capsys):
        code, out, _ = run(capsys, "inspect", "--json")
        doc = json.loads(out)
        assert code == 0 and doc["params"] == sum(layer["params"] for layer in doc["layers"])


class TestData:
    def test_synth_split(self, containers):
        for name in ("train", "val", "test"):
            assert (containers / f"{name}.jsonl").exists()

    def test_features(self, containers, tmp_path, capsys):
        out = tmp_path / "f.npz"
        code, text, _ = run(capsys, "features", "--input", str(containers / "train.jsonl"), "--output", str(out))
        assert code == 0 and "windows" in text
        with np.load(out) as z:
            assert z["P"].shape[1:] == (4, 150, 29) and z["B"].shape[1] == 2

    def test_malformed_container(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"schema": "skelnas.video/1", "video_id": "x"}\n')
        code, _, err = run(capsys, "features", "--input", str(bad), "--output", str(tmp_path / "o.npz"))
        assert code == 1 and err.startswith("error: SCHEMA_ERROR:")
        assert len(err.strip().splitlines()) == 1


class TestTrainEval:
    def test_report(self, trained):
        rep = json.loads((trained / "report.json").read_text())
        assert rep["epochs_run"] == 1 and "seconds" in rep

    def test_eval_uses_stored_candidate(self, trained, containers, capsys):
        code, out, _ = run(capsys, "eval", "--weights", str(trained / "w.npz"),
                           "--data", str(containers / "test.jsonl"))
        doc = json.loads(out)
        assert code == 0 and doc["videos"] == 2 and 0 <= doc["video_auc"] <= 1

    def test_eval_mismatch(self, trained, containers, tmp_path, capsys):
        other = _desk_candidate(tmp_path / "other.json", **{"Temporal window input": 2})
        code, _, err = run(capsys, "eval", "--weights", str(trained / "w.npz"), "--candidate", str(other),
                           "--data", str(containers / "test.jsonl"))
        assert code == 1 and err.startswith("error: MODEL_MISMATCH:")


class TestErrors:
    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, "space", "--colour")
        assert code == 2 and err.startswith("error: USAGE:")

    def test_missing_subcommand(self, capsys):
        code, _, _ = run(capsys)
        assert code == 2

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "inspect", "--candidate", str(tmp_path / "nope.json"))
        assert code == 1 and err.startswith("error: NOT_FOUND:")

    def test_bad_config(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"workers": 0}))
        code, _, err = run(capsys, "search", "--config", str(cfg))
        assert code == 2 and err.startswith("error: CONFIG_ERROR:")

    def test_resume_needs_output(self, capsys):
        code, _, err = run(capsys, "search", "--desk", "--resume")
        assert code == 2 and "USAGE" in err

    def test_unknown_option_in_candidate(self, capsys, tmp_path):
        p = tmp_path / "c.json"
        doc = json.loads(serialize_candidate(Candidate(desk_space(), (0,) * 6)))
        doc["selections"]["Attention layer"] = "Global"
        p.write_text(json.dumps(doc))
        code, _, err = run(capsys, "inspect", "--candidate", str(p))
        assert code == 1 and err.startswith("error: SCHEMA_ERROR:")
