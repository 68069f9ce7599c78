import hashlib
import json

import pytest

from ovstad.cli import main
from ovstad.pipeline import load_model, parameter_digest, read_jsonl, write_jsonl


def run(*argv):
    return main([str(a) for a in argv])


def digest_tree(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("gen-synthetic", "--out", data, "--per-class", 2, "--seed", 3) == 0
    assert run("convert-hcstvg", "--input", data / "tubes.jsonl", "--output", root / "pairs.jsonl") == 0
    assert run("build-split", "--classes", data / "classes.json", "--output", root / "split.json") == 0
    assert run("train", "--stage", "align", "--preset", "desk", "--iters", 2, "--batch", 4, "--data", data,
               "--pairs", root / "pairs.jsonl", "--output", root / "align.ovsk") == 0
    return root


def test_gen_synthetic_is_idempotent(ws, tmp_path):
    assert run("gen-synthetic", "--out", tmp_path, "--per-class", 2, "--seed", 3) == 0
    assert digest_tree(tmp_path) == digest_tree(ws / "data")
    assert run("gen-synthetic", "--out", tmp_path / "other", "--per-class", 2, "--seed", 4) == 0
    assert digest_tree(tmp_path / "other") != digest_tree(ws / "data")


def test_gen_synthetic_outputs(ws, tmp_path):
    classes = json.loads((ws / "data" / "classes.json").read_text())
    assert len(classes) == 8 and {c["type"] for c in classes} == {"horizontal", "vertical"}
    props = list(read_jsonl(ws / "data" / "proposals.jsonl"))
    assert props and {"video_id", "frame_index", "x1", "y1", "x2", "y2"} <= set(props[0])
    assert run("gen-synthetic", "--out", tmp_path, "--per-class", 0) == 0
    assert list(read_jsonl(tmp_path / "gt.jsonl")) == []


def test_split_and_stats(ws, capsys):
    split = json.loads((ws / "split.json").read_text())
    assert len(split["base"]) == 6 and len(split["novel"]) == 2
    assert run("stats", "--pairs", ws / "pairs.jsonl", "--output", ws / "stats.json") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == json.loads((ws / "stats.json").read_text())
    assert doc["pair_count"] == len(list(read_jsonl(ws / "pairs.jsonl")))
    assert doc["avg_boxes_per_sentence_rounded"] == round(doc["avg_boxes_per_sentence"], 1)


@pytest.mark.identity
def test_train_zero_iterations_is_identity(ws, tmp_path):
    assert run("train", "--stage", "align", "--preset", "desk", "--iters", 0, "--batch", 4, "--data", ws / "data",
               "--pairs", ws / "pairs.jsonl", "--init", ws / "align.ovsk", "--output", tmp_path / "out.ovsk") == 0
    before, _ = load_model(ws / "align.ovsk")
    after, _ = load_model(tmp_path / "out.ovsk")
    assert parameter_digest(after) == parameter_digest(before)


def _metrics(path):
    rows = list(read_jsonl(path))
    for r in rows:
        r.pop("wall_time", None)
    return rows


def test_train_is_idempotent_apart_from_wall_time(ws, tmp_path):
    args = ["train", "--stage", "align", "--preset", "desk", "--iters", 2, "--batch", 4, "--data", ws / "data",
            "--pairs", ws / "pairs.jsonl", "--seed", 5]
    assert run(*args, "--output", tmp_path / "a.ovsk", "--metrics", tmp_path / "a.jsonl") == 0
    assert run(*args, "--output", tmp_path / "b.ovsk", "--metrics", tmp_path / "b.jsonl") == 0
    assert (tmp_path / "a.ovsk").read_bytes() == (tmp_path / "b.ovsk").read_bytes()
    assert _metrics(tmp_path / "a.jsonl") == _metrics(tmp_path / "b.jsonl")


def test_command_line_beats_config_file(ws, tmp_path):
    conf = tmp_path / "run.cfg"
    conf.write_text(f"# desk alignment\nstage=align\npreset=desk\niters=3\nlr=2e-4\nbatch=4\n"
                    f"data={ws / 'data'}\npairs={ws / 'pairs.jsonl'}\n")
    assert run("train", "--config", conf, "--iters", 1, "--output", tmp_path / "c.ovsk",
               "--metrics", tmp_path / "c.jsonl") == 0
    rows = list(read_jsonl(tmp_path / "c.jsonl"))
    assert rows[0]["config"]["iterations"] == 1
    assert rows[0]["config"]["learning_rate"] == 2e-4
    assert [r["iteration"] for r in rows[1:]] == [1]


def test_finetune_detect_eval_chain(ws, tmp_path):
    assert run("train", "--stage", "finetune", "--preset", "desk", "--iters", 1, "--batch", 4,
               "--data", ws / "data", "--split", ws / "split.json", "--gt", ws / "data" / "gt.jsonl",
               "--init", ws / "align.ovsk", "--output", tmp_path / "ft.ovsk") == 0
    assert run("detect", "--model", tmp_path / "ft.ovsk", "--data", ws / "data", "--proposals",
               ws / "data" / "proposals.jsonl", "--split", ws / "split.json", "--output", tmp_path / "d.jsonl") == 0
    dets = list(read_jsonl(tmp_path / "d.jsonl"))
    n_props = len(list(read_jsonl(ws / "data" / "proposals.jsonl")))
    assert len(dets) == 8 * n_props
    assert run("eval", "--dets", tmp_path / "d.jsonl", "--gt", ws / "data" / "gt.jsonl",
               "--split", ws / "split.json", "--output", tmp_path / "r.json", "--pr-csv", tmp_path / "pr.csv") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert 0.0 <= report["map"]["all"] <= 1.0
    assert (tmp_path / "pr.csv").read_text().startswith("class_id,name,rank,score,precision,recall")


def test_detect_with_custom_prompts(ws, tmp_path):
    assert run("detect", "--model", ws / "align.ovsk", "--data", ws / "data", "--proposals",
               ws / "data" / "proposals.jsonl", "--prompts", "moves left slow,moves up fast",
               "--output", tmp_path / "d.jsonl") == 0
    assert {d["class_id"] for d in read_jsonl(tmp_path / "d.jsonl")} == {0, 1}


@pytest.mark.identity
def test_eval_perfect_detections(ws, tmp_path, capsys):
    perfect = [dict(video_id=g["video_id"], frame_index=g["frame_index"], box=g["box"], class_id=c, score=1.0)
               for g in read_jsonl(ws / "data" / "gt.jsonl") for c in g["class_ids"]]
    write_jsonl(tmp_path / "d.jsonl", perfect)
    assert run("eval", "--dets", tmp_path / "d.jsonl", "--gt", ws / "data" / "gt.jsonl",
               "--split", ws / "split.json") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["map"] == {"all": 1.0, "base": 1.0, "novel": 1.0}


def test_sweep_beta_table(ws, tmp_path):
    assert run("sweep-beta", "--model", ws / "align.ovsk", "--data", ws / "data", "--proposals",
               ws / "data" / "proposals.jsonl", "--gt", ws / "data" / "gt.jsonl", "--split", ws / "split.json",
               "--values", "0,0.3,1", "--output", tmp_path / "s.csv", "--reports-dir", tmp_path / "rep") == 0
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "beta,map_base,map_novel,map_all"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "0.3", "1"]
    assert sorted(p.name for p in (tmp_path / "rep").iterdir()) == ["beta_0.3.json", "beta_0.json", "beta_1.json"]
    rep = json.loads((tmp_path / "rep" / "beta_0.3.json").read_text())
    assert lines[2].split(",")[3] == f"{100 * rep['map']['all']:.2f}"


def test_commands_leave_inputs_untouched(ws, tmp_path):
    before = digest_tree(ws / "data")
    split = (ws / "split.json").read_bytes()
    run("detect", "--model", ws / "align.ovsk", "--data", ws / "data", "--proposals",
        ws / "data" / "proposals.jsonl", "--split", ws / "split.json", "--output", tmp_path / "d.jsonl")
    run("eval", "--dets", tmp_path / "d.jsonl", "--gt", ws / "data" / "gt.jsonl", "--split", ws / "split.json")
    assert digest_tree(ws / "data") == before and (ws / "split.json").read_bytes() == split


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["eval", "--bogus"],
    ["eval", "--gt", "g.jsonl"],
    ["gen-synthetic", "--out", "x", "--per-class", "-1"],
    ["gen-synthetic", "--out", "x", "--classes", "moves sideways"],
    ["train", "--stage", "pretrain"],
    ["detect", "--model", "m", "--data", "d", "--proposals", "p", "--output", "o", "--beta", "1.5"],
    ["sweep-beta", "--model", "m", "--data", "d", "--proposals", "p", "--gt", "g", "--split", "s",
     "--output", "o", "--values", "0,abc"],
])
def test_usage_and_config_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_thread_setting_exits_2(ws, monkeypatch):
    monkeypatch.setenv("OVSK_THREADS", "lots")
    assert run("stats", "--pairs", ws / "pairs.jsonl") == 2
    monkeypatch.setenv("OVSK_THREADS", "1")
    assert run("stats", "--pairs", ws / "pairs.jsonl", "--threads", 0) == 2


def test_bad_config_file_exits_2(ws, tmp_path):
    conf = tmp_path / "run.cfg"
    conf.write_text("stage align\n")
    assert run("train", "--config", conf, "--output", tmp_path / "x.ovsk") == 2
    conf.write_text("stage=align\nbatch=1\n")
    assert run("train", "--config", conf, "--output", tmp_path / "x.ovsk") == 2


def test_data_errors_exit_1(ws, tmp_path):
    assert run("stats", "--pairs", tmp_path / "missing.jsonl") == 1
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    assert run("convert-vidstg", "--input", tmp_path / "bad.jsonl", "--output", tmp_path / "o.jsonl") == 1
    assert run("eval", "--dets", tmp_path / "bad.jsonl", "--gt", ws / "data" / "gt.jsonl",
               "--split", ws / "split.json") == 1
    (tmp_path / "junk.ovsk").write_bytes(b"not a checkpoint")
    assert run("detect", "--model", tmp_path / "junk.ovsk", "--data", ws / "data", "--proposals",
               ws / "data" / "proposals.jsonl", "--split", ws / "split.json", "--output", tmp_path / "d.jsonl") == 1


def test_finetune_drops_clips_with_novel_actors(ws, tmp_path):
    # every clip that contains a novel-class actor is dropped before training
    assert run("train", "--stage", "finetune", "--preset", "desk", "--iters", 1, "--batch", 2,
               "--data", ws / "data", "--split", ws / "split.json", "--gt", ws / "data" / "gt.jsonl",
               "--init", ws / "align.ovsk", "--output", tmp_path / "ft.ovsk", "--metrics", tmp_path / "m.jsonl") == 0
    rows = list(read_jsonl(tmp_path / "m.jsonl"))[1:]
    assert [r["iteration"] for r in rows] == [1] and rows[0]["used"] > 0


def test_help_lists_every_command(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for name in ("convert-hcstvg", "convert-vidstg", "stats", "gen-synthetic", "build-split", "train", "detect",
                 "eval", "sweep-beta"):
        assert name in out
