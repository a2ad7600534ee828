import json

import numpy as np
import pytest

from armour import armw
from armour.attention import AttentionVariant
from armour.toy_train import (
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_SEED,
    ToyTask,
    TrainingError,
    entanglement_probe,
    make_dataset,
    train,
)

SMALL = ToyTask(train_size=64, eval_size=40)


def test_dataset_is_seeded():
    a = make_dataset(ToyTask(seed=3))
    b = make_dataset(ToyTask(seed=3))
    c = make_dataset(ToyTask(seed=4))
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()
    assert a[0].tobytes() != c[0].tobytes()


def test_clean_samples_hold_exactly_one_complete_pair():
    task = ToyTask(label_noise=0.0, train_size=300, eval_size=100)
    tx, ty, ex, ey = make_dataset(task)
    assert tx.shape == (300, task.seq_len) and ex.shape == (100, task.seq_len)
    assert tx.min() >= 0 and tx.max() < task.vocab
    for xs, ys in ((tx, ty), (ex, ey)):
        for seq, label in zip(xs, ys):
            complete = [c for c in range(task.classes) if 2 * c in seq and 2 * c + 1 in seq]
            assert complete == [label]
            counts = np.bincount(seq, minlength=task.vocab)[: 2 * task.classes]
            assert counts.max() == 2  # distractor halves tie the pair on raw counts
    assert np.bincount(ey).tolist() == [25, 25, 25, 25]


def test_label_noise_rate():
    clean = make_dataset(ToyTask(label_noise=0.0, train_size=4000))
    noisy = make_dataset(ToyTask(label_noise=0.1, train_size=4000))
    # same generator stream up to the flips, so the token sequences agree
    assert np.array_equal(clean[0], noisy[0])
    assert 0.08 < (clean[1] != noisy[1]).mean() < 0.12


def test_untrained_model_is_at_chance():
    rec = train("regular", epochs=0)
    chance = 1 / ToyTask().classes
    assert abs(rec.final_accuracy - chance) <= 0.05
    assert rec.initial_loss == pytest.approx(np.log(4), abs=1e-12)


@pytest.mark.parametrize("variant", ["regular", "armour"])
def test_seeded_runs_are_identical(variant):
    a = train(variant, SMALL, epochs=2, seed=5)
    b = train(variant, SMALL, epochs=2, seed=5)
    assert a.to_dict(include_wall=False) == b.to_dict(include_wall=False)
    for k in a.weights:
        assert a.weights[k].tobytes() == b.weights[k].tobytes()


def test_armour_has_fewer_parameters():
    reg = train("regular", SMALL, epochs=0)
    arm = train("armour", SMALL, epochs=0)
    d = 32
    assert reg.param_count - arm.param_count == 2 * (d * d + d)


def test_divergence_names_epoch():
    with pytest.raises(TrainingError, match=r"diverged in epoch [12]$"):
        train("regular", SMALL, epochs=2, lr=1e4)


def test_record_save(tmp_path):
    rec = train("armour", SMALL, epochs=1)
    weights_path = rec.save(tmp_path / "run.json")
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["variant"] == "armour"
    assert meta["weights"] == "run.armw"
    assert len(meta["history"]) == 2
    named = armw.load(weights_path)
    assert "layer0.w_v" not in named and "layer0.w_q" in named
    for k, v in rec.weights.items():
        assert named[k].tobytes() == v.tobytes()


def test_entanglement_probe_rows():
    reg = train("regular", SMALL, epochs=0, seed=1)
    arm = train("armour", SMALL, epochs=0, seed=1)
    report = entanglement_probe(reg, arm)
    assert [r.pair for r in report.rows] == ["regular:wq_wk", "regular:wq_wv", "armour:wq_wk"]
    for r in report.rows:
        assert 0.0 <= r.fraction_below <= 1.0
        assert r.element_count == 32 * 32


def test_entanglement_sanity_on_identical_init():
    # both records start from the same draws, so Q/K rows compare identical init
    reg = train("regular", SMALL, epochs=0, seed=2)
    assert entanglement_probe(reg, reg).rows[0].fraction_below == \
        entanglement_probe(reg, reg).rows[2].fraction_below


@pytest.mark.slow
def test_default_budget_matches_calibration(default_runs, toy_calibration):
    assert toy_calibration["epochs"] == DEFAULT_EPOCHS
    assert toy_calibration["lr"] == DEFAULT_LR
    assert toy_calibration["seed"] == DEFAULT_SEED
    for variant, rec in default_runs.items():
        frozen = toy_calibration["runs"][variant]
        assert rec.param_count == frozen["param_count"]
        assert rec.final_loss == pytest.approx(frozen["final_eval_loss"], abs=1e-6)
        assert rec.final_accuracy == pytest.approx(frozen["final_eval_accuracy"], abs=1e-6)


@pytest.mark.slow
def test_default_budget_learns(default_runs):
    reg, arm = default_runs["regular"], default_runs["armour"]
    assert reg.final_accuracy >= 0.95
    for rec in (reg, arm):
        assert rec.final_loss < rec.initial_loss
        assert all(np.isfinite(h.eval_loss) for h in rec.history)
    assert abs(arm.final_loss - reg.final_loss) / reg.final_loss <= 0.10
