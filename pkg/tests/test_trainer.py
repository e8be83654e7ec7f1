import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beam import diffcore as dc
from beam.eeg_io import Label, View
from beam.encoder import EncoderConfig
from beam.preprocess import Sample
from beam.trainer import (EMPATHY_ARMS, MODULE_ARMS, Arm, Confusion, LeakageError, Model, RunReport, SeedResult,
                          TrainConfig, ablate, ablation_table, check_no_leakage, confusion, cross_entropy,
                          evaluate, load_model, majority_baseline, pair_views, save_trained, split_sizes,
                          stratified_batches, subject_split, subject_vote, total_loss, train)

TINY = EncoderConfig(patch_len=200, d_model=8, n_layers=1, n_heads=2, d_ff=16, max_channels=4, max_patches=4)


def tiny_config(**kw):
    base = dict(encoder=TINY, epochs=2, seeds=(1, 2), batch_size=16)
    base.update(kw)
    return TrainConfig(**base)


def samples(view, n, subject="s", label=Label.LOW):
    return [Sample(view, subject, np.zeros((1, 4)), label, 0, i) for i in range(n)]


# -- splits ---------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(3, 80), st.integers(0, 10_000))
def test_split_is_disjoint_and_complete(n, seed):
    ids = [f"s{i:02d}" for i in range(n)]
    labels = {s: i % 2 for i, s in enumerate(ids)}
    train_ids, val_ids, test_ids = subject_split(ids, (0.7, 0.2, 0.1), seed, labels)
    assert sorted(train_ids + val_ids + test_ids) == ids
    assert len(test_ids) >= 1 and len(val_ids) >= 1
    assert (len(train_ids), len(val_ids), len(test_ids)) == split_sizes(n, (0.7, 0.2, 0.1))


def test_split_sizes_largest_remainder():
    assert split_sizes(57, (0.7, 0.2, 0.1)) == (40, 11, 6)
    assert split_sizes(20, (0.7, 0.2, 0.1)) == (14, 4, 2)
    assert split_sizes(3, (0.7, 0.2, 0.1)) == (1, 1, 1)
    with pytest.raises(ValueError):
        split_sizes(2, (0.7, 0.2, 0.1))


def test_split_is_stratified():
    ids = [f"s{i:02d}" for i in range(20)]
    labels = {s: int(i < 10) for i, s in enumerate(ids)}
    for seed in range(5):
        _, val_ids, test_ids = subject_split(ids, (0.7, 0.2, 0.1), seed, labels)
        assert sum(labels[s] for s in test_ids) == 1
        assert sum(labels[s] for s in val_ids) == 2


def test_split_depends_on_seed():
    ids = [f"s{i:02d}" for i in range(30)]
    assert subject_split(ids, (0.7, 0.2, 0.1), 1) != subject_split(ids, (0.7, 0.2, 0.1), 2)
    assert subject_split(ids, (0.7, 0.2, 0.1), 1) == subject_split(ids, (0.7, 0.2, 0.1), 1)


def test_leakage_check():
    check_no_leakage(["a"], ["b"], ["c"])
    with pytest.raises(LeakageError):
        check_no_leakage(["a", "b"], ["b"], ["c"])


# -- pairing ---------------------------------------------------------------------------

def test_pair_views_cycles_em():
    pairs = pair_views(samples(View.TOM, 65), samples(View.EM, 43))
    assert len(pairs) == 65
    assert [p[1].window_index for p in pairs[40:46]] == [40, 41, 42, 0, 1, 2]


def test_pair_views_identity_and_errors():
    pairs = pair_views(samples(View.TOM, 3), samples(View.EM, 3))
    assert [(a.window_index, b.window_index) for a, b in pairs] == [(0, 0), (1, 1), (2, 2)]
    with pytest.raises(ValueError):
        pair_views(samples(View.TOM, 2, "a"), samples(View.EM, 2, "b"))
    with pytest.raises(ValueError):
        pair_views([], samples(View.EM, 2))


# -- losses ------------------------------------------------------------------------------

def test_cross_entropy_value():
    logits = dc.Tensor(np.array([[0.0, 0.0], [2.0, 0.0]]))
    expected = (np.log(2) + np.log(1 + np.exp(-2.0))) / 2
    assert cross_entropy(logits, [1, 0]).item() == pytest.approx(expected, abs=1e-6)


def _frozen_terms(rng, cfg):
    z_t, z_e = dc.Tensor(rng.normal(size=(4, 8))), dc.Tensor(rng.normal(size=(4, 8)))
    rep = dc.Tensor(rng.normal(size=(4, 12)))
    logits = dc.Tensor(rng.normal(size=(4, 2)))
    return total_loss(logits, [0, 0, 1, 1], z_t, z_e, rep, cfg, np.array([1, 0, 3, 2]))


def test_loss_linearity_in_weights(rng):
    state = rng.bit_generator.state
    base_loss, parts = _frozen_terms(rng, tiny_config())
    for name, key in (("lambda_fusion", "fusion"), ("lambda_contrast", "contrast")):
        rng.bit_generator.state = state
        doubled, _ = _frozen_terms(rng, tiny_config(**{name: 2.0}))
        assert doubled.item() - base_loss.item() == pytest.approx(parts[key], rel=1e-6)


def test_disabled_terms_absent(rng):
    cfg = tiny_config(arm=Arm("tom+em", contrast=False, fusion=False))
    loss, parts = _frozen_terms(rng, cfg)
    assert set(parts) == {"ce", "total"} and loss.item() == pytest.approx(parts["ce"])


def test_arm_validation():
    with pytest.raises(ValueError):
        Arm("em", contrast=False, fusion=True)
    with pytest.raises(ValueError):
        Arm("both")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=3)


# -- batching and metrics ----------------------------------------------------------------

def test_stratified_batches_cover_once_with_two_per_class(rng):
    labels = np.array([0] * 30 + [1] * 10)
    batches = stratified_batches(labels, 8, rng)
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(40))
    for b in batches:
        assert np.sum(labels[b] == 0) >= 2 and np.sum(labels[b] == 1) >= 2


def test_stratified_batches_reject_tiny_class(rng):
    with pytest.raises(ValueError):
        stratified_batches(np.array([0, 0, 0, 1]), 4, rng)


def test_confusion_metrics():
    c = confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert c == Confusion(tp=2, fn=1, tn=1, fp=1)
    assert (c.accuracy, c.sensitivity, c.specificity) == pytest.approx((0.6, 2 / 3, 0.5))


def test_confusion_single_class_reports_zero(caplog):
    c = confusion([1, 1], [1, 1])
    assert c.specificity == 0.0 and c.sensitivity == 1.0
    assert "no LOW examples" in caplog.text
    with pytest.raises(ValueError):
        confusion([], [])


def test_subject_vote():
    c = subject_vote([1, 1, 0, 0, 0, 1], [1, 1, 1, 0, 0, 0], ["a", "a", "a", "b", "b", "b"])
    assert c == Confusion(tp=1, fn=0, tn=1, fp=0)


def test_report_uses_population_std():
    r = RunReport("x", [SeedResult(1, Confusion(1, 0, 1, 0), Confusion(1, 0, 1, 0)),
                        SeedResult(2, Confusion(0, 1, 1, 0), Confusion(0, 1, 1, 0))])
    mean, std = r.aggregate()["accuracy"]
    assert (mean, std) == pytest.approx((0.75, 0.25))
    assert r.formatted()["accuracy"] == "0.750±0.250"
    assert all(json.loads(line) for line in r.lines())


# -- training -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(small_cohort):
    return train(Arm(), small_cohort, tiny_config())


def test_training_reduces_loss(trained):
    runs, _ = trained
    for run in runs:
        assert run.history[-1] < run.history[0]


def test_training_is_deterministic(small_cohort, trained):
    _, report = trained
    _, again = train(Arm(), small_cohort, tiny_config())
    assert again.text() == report.text()


def test_report_records_splits_without_leakage(trained):
    runs, report = trained
    for run in runs:
        split = run.result.split
        check_no_leakage(split["train"], split["val"], split["test"])
    records = [json.loads(line) for line in report.lines()]
    assert {r["record"] for r in records} == {"seed", "aggregate"}
    assert all(r["leakage_free"] for r in records if r["record"] == "seed" and r["level"] == "sample")


def test_checkpoint_reload_reproduces_evaluation(tmp_path, small_cohort, trained):
    runs, _ = trained
    run = runs[0]
    save_trained(run, tmp_path / "seed.ckpt")
    model, meta = load_model(tmp_path / "seed.ckpt")
    test_ids = meta["split"]["test"]
    a = evaluate(run.model, small_cohort, test_ids).text()
    b = evaluate(model, small_cohort, test_ids).text()
    assert a == b
    assert json.loads(a.splitlines()[0])["accuracy"] == run.result.sample.accuracy


@pytest.mark.parametrize("arm", [Arm("em", True, False), Arm("tom", False, False), Arm("tom+em", False, True)])
def test_other_arms_train(small_cohort, arm):
    _, report = train(arm, small_cohort, tiny_config(epochs=1, seeds=(3,)))
    assert report.arm == arm.name and len(report.seeds) == 1


def test_separate_encoders_and_projection(small_cohort):
    cfg = tiny_config(epochs=1, seeds=(1,), shared_encoder=False, fusion_projection=True)
    runs, _ = train(Arm(), small_cohort, cfg)
    names = set(runs[0].model.params)
    assert {"fusion.com", "fusion.sep"} <= names
    assert any(n.startswith("tom.encoder.") for n in names) and any(n.startswith("em.encoder.") for n in names)


def test_augmented_samples_never_scored(small_cohort):
    data = {sid: list(v) for sid, v in small_cohort.items()}
    sid = sorted(data)[0]
    marked = dataclasses.replace(data[sid][0], meta={"augmented": 0})
    data[sid].append(marked)
    model = Model.init(tiny_config(), np.random.default_rng(0))
    report = evaluate(model, data, [sid])
    assert report.seeds[0].sample.total == len(small_cohort[sid]) - 43  # ToM/EM pairs: one per ToM window


def test_majority_baseline(small_cohort):
    report = majority_baseline(small_cohort, tiny_config(seeds=(1, 2, 3)))
    for r in report.seeds:
        assert r.sample.tp + r.sample.fp == 0 or r.sample.tn + r.sample.fn == 0


def test_ablation_layout(small_cohort, monkeypatch):
    import beam.trainer as trainer_mod

    calls = []
    real_train = trainer_mod.train

    def counting_train(arm, data, cfg):
        calls.append(arm)
        return real_train(arm, data, cfg)

    monkeypatch.setattr(trainer_mod, "train", counting_train)
    rows, baseline = ablate(small_cohort, tiny_config(epochs=1, seeds=(1,)))
    assert [r.arm for r in rows] == list(EMPATHY_ARMS) + list(MODULE_ARMS)
    assert len(calls) == len(set(EMPATHY_ARMS) | set(MODULE_ARMS)) == 8
    table = ablation_table(rows, baseline)
    assert table.count("±") >= 3 * 10
    assert "Majority class" in table


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported(small_cohort):
    from beam.trainer import TrainingDiverged

    with pytest.raises(TrainingDiverged):
        train(Arm(), small_cohort, tiny_config(epochs=1, seeds=(1,), learning_rate=1e300))


def test_majority_on_balanced_set_is_half():
    c = confusion([1] * 6, [1, 1, 1, 0, 0, 0])
    assert c.accuracy == 0.5 and c.specificity == 0.0 and c.sensitivity == 1.0
