import os
import subprocess

import numpy as np
import pytest

import relprobe as rp


def test_synth_and_stats():
    c = rp.synth(n_train=40, n_val=10, n_test=10, seed=3)
    assert len(c) == 60
    stats = rp.corpus_stats(c)
    assert stats["train"] == 40
    assert all(rp.validate_sentence(s) == [] for s in c.train)
    again = rp.read_corpus_jsonl(c.to_jsonl())
    assert again.train == c.train


def test_masking_and_errors():
    s = rp.Sentence()
    s.id = "fig1"
    s.tokens = ["Aerolineas", "bought", "Austral"]
    s.pos = ["NNP", "VBD", "NNP"]
    s.ner = ["ORGANIZATION", "O", "ORGANIZATION"]
    s.dep_head = [2, 0, 2]
    s.dep_label = ["nsubj", "ROOT", "dobj"]
    s.head = (0, 0)
    s.tail = (2, 2)
    s.relation = "org:subsidiaries"
    assert rp.mask_entities(s).tokens == ["SUBJ-ORGANIZATION", "bought", "OBJ-ORGANIZATION"]
    s.ner = s.ner[:2]
    assert rp.validate_sentence(s) == ["annotation length mismatch: ner"]
    with pytest.raises(rp.RelprobeError):
        rp.load_corpus("/nonexistent/corpus.jsonl")


def test_tree_ops():
    r = rp.sdp([2, 0, 2], (0, 0), (2, 2))
    assert r["path"] == [0, 1, 2] and r["lca"] == 1 and r["depth"] == 1
    assert rp.prune([2, 0, 2, 3, 2], (0, 0), (3, 3), 0) == [0, 1, 2, 3]
    assert rp.tree_depth([0, 1, 2]) == 2


def test_metrics():
    r = rp.micro_f1(["A", "neg", "neg", "A"], ["A", "A", "neg", "B"], "neg")
    assert (r["p"], r["r"]) == (0.5, 1 / 3)
    assert r["f1"] == pytest.approx(0.4)


def test_baseline_probe_and_numpy_roundtrip():
    c = rp.synth(n_train=300, n_val=60, n_test=60, seed=5)
    reps = rp.baseline_reps("argdist", c)
    task = rp.build_task("ArgDist", c)
    res = rp.train_probe(reps, task, grid=[0.0, 0.01])
    assert res.test_accuracy >= 0.99
    arr = reps.to_numpy()
    assert arr.shape == (len(c), 1)
    copy = rp.RepMatrix(reps.ids, arr)
    assert copy.hash() == reps.hash()
    assert np.array_equal(copy.to_numpy(), arr)


def test_train_extract():
    c = rp.synth(n_train=64, n_val=16, n_test=16, seed=11)
    model, history, best_epoch, best_f1 = rp.train(c, encoder="cnn", epochs=3, seed=1)
    assert len(history) == 3 and 1 <= best_epoch <= 3
    reps = model.extract(c, split="test")
    assert len(reps) == 16 and reps.dim == model.rep_dim


def test_run_cli_and_binary():
    code, out, err = rp.run_cli(["nosuch"])
    assert code == 2 and err.startswith("error:")
    code, out, _ = rp.run_cli(["gradcheck", "--ops"])
    assert code == 0 and "FAIL" not in out
    cli = os.environ.get("RELPROBE_CLI")
    if cli:
        proc = subprocess.run([cli, "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "suite" in proc.stdout
