"""End-to-end smoke tests for the python bindings."""

import math

import pytest

import metaperser as mp


def test_score_worked_example():
    gold = [[0], [0], [1], [0, 1]]
    preds = [[0], [1], [1], [0]]
    m = mp.score(preds, gold, classes=2)
    assert math.isclose(m["maF1"], 0.65, abs_tol=1e-12)
    assert math.isclose(m["miF1"], 6.0 / 9.0, abs_tol=1e-12)
    assert math.isclose(m["UA"], 0.625, abs_tol=1e-12)


def test_threshold_rule():
    assert mp.threshold([1.0 / 9.0] * 9) == list(range(9))
    probs = [0.5, 0.2, 0.1, 0.05, 0.05, 0.04, 0.03, 0.02, 0.01]
    assert mp.threshold(probs) == [0, 1]


def test_class_weights_frozen_pair():
    w = mp.class_weights([10, 100], beta=0.99)
    assert math.isclose(w[0], 1.7378842808161673, rel_tol=1e-12)
    assert math.isclose(w[1], 0.26211571918383267, rel_tol=1e-12)


def test_emotion_vocabulary_order():
    names = mp.emotion_names()
    assert names[0] == "frustrated"
    assert names[-1] == "happy"
    assert len(names) == 9


def test_unknown_config_key_rejected():
    with pytest.raises(mp.ConfigError):
        mp.pretrain({"shotz": 3})


SMALL = {
    "hidden": 8,
    "synth_annotators": 4,
    "synth_samples": 120,
    "shots": 8,
    "query": 16,
    "seeds": 2,
    "shot_sweep": "8",
    "pretrain_epochs": 3,
    "outer_steps": 15,
    "val_interval": 15,
    "methods": "meta,entire-zero,random",
    "seed": 7,
}


def test_pipeline_runs_and_is_deterministic(tmp_path):
    base = mp.pretrain(SMALL)
    model = mp.meta_train(SMALL, init=base)
    assert model.has_rates

    path = str(tmp_path / "meta.mpck")
    model.save(path)
    loaded = mp.Model.load(path)
    assert loaded.has_rates
    assert loaded.config_digest == model.config_digest

    rows_a = mp.evaluate(SMALL, meta_model=model, base_model=base)
    rows_b = mp.evaluate(SMALL, meta_model=loaded, base_model=base)
    assert len(rows_a) == 3 * 2  # methods x seeds
    for a, b in zip(rows_a, rows_b):
        assert a == b

    methods = {r["method"] for r in rows_a}
    assert methods == {"meta", "entire-zero", "random"}
    for r in rows_a:
        for key in ("maF1", "miF1", "UA"):
            assert 0.0 <= r[key] <= 1.0


def test_synth_writes_loadable_files(tmp_path):
    manifest, store = mp.synth(SMALL, str(tmp_path))
    cfg = dict(SMALL)
    cfg["manifest"] = manifest
    cfg["embeddings"] = store
    base = mp.pretrain(cfg)
    rows = mp.evaluate(
        {**cfg, "methods": "entire-zero"}, base_model=base
    )
    assert len(rows) == 2
