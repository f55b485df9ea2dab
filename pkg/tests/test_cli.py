import json
import os

import pytest

from oracles import tree_digests
from vqanon.cli import main
from vqanon.corpus import desk_corpus_dir
from vqanon.evaluation import TrialScores, write_trials


def test_make_corpus_reproduces_bundle(tmp_path):
    assert main(["make-corpus", str(tmp_path / "c")]) == 0
    assert tree_digests(tmp_path / "c") == tree_digests(desk_corpus_dir())


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["anonymize", "a", "b", "c", "d", "e", "--system", "4"])
    assert err.value.code == 1
    assert main(["evaluate", "--trials", "nokey"]) == 1
    assert "NAME=VALUE" in capsys.readouterr().err


def test_data_errors(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["features", str(tmp_path / "empty"), str(tmp_path / "o")]) == 2
    assert "no input audio" in capsys.readouterr().err
    assert main(["build-pool", str(tmp_path / "nothing"), str(tmp_path), str(tmp_path / "p.pool")]) == 2
    bad = tmp_path / "cfg.json"
    bad.write_text('{"bogus": 1}')
    assert main(["make-corpus", str(tmp_path / "c"), "--config", str(bad)]) == 2
    assert main(["make-corpus", str(tmp_path / "c"), "--config", str(tmp_path / "absent.json")]) == 2


def test_end_to_end(tmp_path, corpus_copy, monkeypatch, capsys):
    monkeypatch.setenv("VQANON_RUN_DIR", str(tmp_path / "runs"))
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({"encoder": {"channels": 32}, "generator": {"base_channels": 32},
                               "training": {"batch_size": 2, "segment_frames": 8, "disc_width_divisor": 16,
                                            "max_steps": 2, "checkpoint_every": 1}}))
    common = ["--config", str(cfg), "--seed", "5"]
    feats, pool = tmp_path / "feats", tmp_path / "p.pool"
    assert main(["features", str(corpus_copy / "train"), str(feats)] + common) == 0
    assert main(["build-pool", str(feats), str(corpus_copy / "xvectors"), str(pool)]) == 0
    assert main(["train", str(feats), "--xvector-dir", str(corpus_copy / "xvectors")] + common) == 0
    run = tmp_path / "runs" / "train"
    assert json.load(open(run / "config.json"))["seed"] == 5
    ckpt = run / "ckpt_00000002.ckpt"
    assert ckpt.exists()
    out = tmp_path / "anon"
    small = ["anonymize", str(feats), str(corpus_copy / "xvectors"), str(pool), str(ckpt), str(out), "--system", "1"]
    assert main(small) == 2
    assert "pool exhausted" in capsys.readouterr().err
    args = ["anonymize", str(feats), str(corpus_copy / "xvectors"), str(corpus_copy / "pool.pool"), str(ckpt), str(out),
            "--system", "2"] + common
    assert main(args) == 0
    assert len([p for p in os.listdir(out) if p.endswith(".wav")]) == 4
    assert main(args[:4] + [str(tmp_path / "missing.ckpt")] + args[5:]) == 2

    write_trials(tmp_path / "s.trials", TrialScores(["a", "b"], [0.9, 0.1], ["target", "nontarget"]))
    capsys.readouterr()
    assert main(["evaluate", "--trials", f"S1={tmp_path / 's.trials'}", "--wer", "S1=4.5"]) == 0
    text = capsys.readouterr().out
    assert "UAR: absent" in text and "*0.00 (1)" in text and "*4.50 (1)" in text
    assert (tmp_path / "runs" / "eval" / "metrics.json").exists()
