"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see only the
verdict lines.  Criteria 6 and 7 train real models and take minutes on one
core.
"""
import json
import math
import time

import numpy as np
import pytest

from beam import diffcore as dc
from beam.augment import AugmentConfig, augment_sample, istft, stft
from beam.cli import run
from beam.contrast import ContrastBatch, info_nce
from beam.eeg_io import EventClip, Label, Recording, View
from beam.encoder import EncoderConfig
from beam.fusion import fusion_loss
from beam.gradcheck import run_suite
from beam.preprocess import PreprocessConfig, Sample, bandpass, common_average_reference, preprocess_recording, segment
from beam.synthgen import SynthConfig, generate_recording
from beam.trainer import Arm, TrainConfig, subject_labels, subject_split, train
from conftest import build_cohort

TINY_FLAGS = ["--patch-len", "200", "--d-model", "8", "--layers", "1", "--heads", "2", "--d-ff", "16"]


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail, elapsed=None):
        timing = f" ({elapsed:.1f}s)" if elapsed is not None else ""
        with capsys.disabled():
            print(f"\n[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}{timing}")
        return ok
    return emit


def test_criterion_1_loss_oracles(verdict):
    t0 = time.perf_counter()
    eps = 1e-8

    def z(com, sep):
        return dc.Tensor(np.array(com + sep, dtype=np.float64))

    got = {
        "fusion ideal": (fusion_loss(z([1, 0], [1, 0]), z([1, 0], [0, 1])).item(), 0.0),
        "fusion orthogonal common": (fusion_loss(z([1, 0], [1, 0]), z([0, 1], [1, 0])).item(), 1 / (1 + eps)),
        "fusion opposed specific": (fusion_loss(z([1, 0], [1, 0]), z([1, 0], [-1, 0])).item(), 1 / (2 + eps)),
        "nce identical": (info_nce(ContrastBatch(dc.Tensor(np.array([[1.0, 0.0], [1.0, 0.0]])), [0, 0], [1, 0]),
                                   tau=1.0).item(), math.log(2)),
        "nce orthogonal": (info_nce(ContrastBatch(dc.Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])), [0, 0], [1, 0]),
                                    tau=0.5).item(), math.log(math.e ** 2 + 1)),
    }
    elapsed = time.perf_counter() - t0
    worst = max(abs(a - b) for a, b in got.values())
    ok = worst <= 1e-5 and elapsed < 1.0
    verdict(1, ok, f"max |error| {worst:.2e} over {len(got)} hand values", elapsed)
    assert ok


def test_criterion_2_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = run_suite(points=25, seed=0)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_error for r in results if r.name != "encoder")
    enc = next(r for r in results if r.name == "encoder")
    ok = not failed and elapsed < 30
    verdict(2, ok, f"{len(results)} checks, worst primitive/loss {worst:.1e} (<1e-4), "
                   f"encoder {enc.max_error:.1e} (<1e-3), failed {failed}", elapsed)
    assert ok


def test_criterion_3_segmentation_law(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        w = int(rng.integers(1, 200))
        s = int(rng.integers(1, 100))
        t = int(rng.integers(w, 2000))
        rec = Recording("s", 1.0, ["a"], np.zeros((1, t), dtype=np.float32), [EventClip(View.TOM, 0, t)], 1)
        n = len(segment(rec, PreprocessConfig(window_seconds=w, stride_seconds=s)))
        mismatches += n != (t - w) // s + 1
    cfg = SynthConfig(n_subjects=1, channels=32, sample_rate_hz=1000.0)
    samples = preprocess_recording(generate_recording(cfg, 0, Label.LOW, 1), PreprocessConfig())
    tom = sum(x.view is View.TOM for x in samples)
    em = sum(x.view is View.EM for x in samples)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and (tom, em) == (65, 43) and elapsed < 5
    verdict(3, ok, f"{mismatches} mismatches in 1000 triples; default-protocol subject ToM={tom} EM={em}", elapsed)
    assert ok


def test_criterion_4_augmentation_round_trip(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 800))
    recon = np.stack([istft(stft(ch, 256, 128), 256, 128, ch.size) for ch in x])
    interior = slice(128, -128)
    rel = np.linalg.norm(recon[:, interior] - x[:, interior]) / np.linalg.norm(x[:, interior])

    s = Sample(View.EM, "sub-003", x, Label.HIGH, 2, 5, {"origin": "test"})
    before = (s.view, s.subject_id, s.label, s.clip_index, s.window_index, dict(s.meta), s.data.copy())
    cfg = AugmentConfig(rng_seed=11)
    a, b = augment_sample(s, cfg, 4), augment_sample(s, cfg, 4)
    deterministic = np.array_equal(a.data, b.data)
    unchanged_input = (s.view, s.subject_id, s.label, s.clip_index, s.window_index, s.meta) == before[:6] \
        and np.array_equal(s.data, before[6])
    meta_kept = (a.view, a.subject_id, a.label, a.clip_index, a.window_index) == before[:5] \
        and a.meta["origin"] == "test" and a.data.shape == x.shape
    elapsed = time.perf_counter() - t0
    ok = rel <= 1e-6 and deterministic and unchanged_input and meta_kept and elapsed < 5
    verdict(4, ok, f"round-trip relative error {rel:.1e}; deterministic={deterministic}; "
                   f"metadata kept={meta_kept}; input untouched={unchanged_input}", elapsed)
    assert ok


def test_criterion_5_filter_behavior(verdict):
    t0 = time.perf_counter()
    fs = 1000.0
    t = np.arange(int(20 * fs)) / fs
    edge = int(fs)

    def amplitude(freq):
        rec = Recording("s", fs, ["a"], np.sin(2 * np.pi * freq * t)[None], [], 1)
        return float(np.max(np.abs(bandpass(rec, 0.1, 75.0).data[0, edge:-edge])))

    pass_gain = amplitude(50.0)
    stop_db = 20 * math.log10(amplitude(200.0))
    rng = np.random.default_rng(3)
    # unit scale, as produced by the synthetic generator; float32 storage
    # bounds the residual mean at roughly 1e-7 times the amplitude
    rec = Recording("s", 200.0, list("abcdefgh"), rng.normal(size=(8, 2000)), [], 1)
    once = common_average_reference(rec)
    twice = common_average_reference(once)
    idem = float(np.max(np.abs(twice.data - once.data)))
    mean = float(np.max(np.abs(once.data.mean(axis=0))))
    elapsed = time.perf_counter() - t0
    ok = abs(pass_gain - 1) <= 0.05 and stop_db <= -20 and idem <= 1e-6 and mean <= 1e-6 and elapsed < 5
    verdict(5, ok, f"50 Hz gain {pass_gain:.4f}; 200 Hz {stop_db:.1f} dB; CAR idempotence {idem:.1e}, "
                   f"channel mean {mean:.1e}", elapsed)
    assert ok


LEARN_CONFIG = TrainConfig(encoder=EncoderConfig(max_channels=8))


@pytest.mark.slow
def test_criterion_6_learnability(verdict):
    t0 = time.perf_counter()
    results = {}
    for effect in (3.0, 0.0):
        data = build_cohort(n_subjects=20, channels=8, effect=effect, rate=1000.0)
        _, report = train(Arm("tom+em", contrast=True, fusion=True), data, LEARN_CONFIG)
        results[effect] = report.aggregate()["accuracy"]
    elapsed = time.perf_counter() - t0
    (sep_mean, sep_std), (null_mean, null_std) = results[3.0], results[0.0]
    separable_ok = sep_mean >= 0.90
    null_ok = abs(null_mean - 0.5) <= 0.1
    ok = separable_ok and null_ok and elapsed < 600
    verdict(6, ok, f"separable {sep_mean:.3f}±{sep_std:.3f} (need >=0.90: {'ok' if separable_ok else 'no'}); "
                   f"null {null_mean:.3f}±{null_std:.3f} (need 0.5±0.1: {'ok' if null_ok else 'no'}); "
                   f"budget 600s", elapsed)
    assert ok


@pytest.mark.slow
def test_criterion_7_ablation_harness(verdict, tmp_path):
    t0 = time.perf_counter()
    raw, pre, out = tmp_path / "raw", tmp_path / "pre", tmp_path / "tables"
    quiet = ["--log-level", "ERROR"]
    assert run(["synth", "--subjects", "10", "--channels", "4", "--rate", "200", "--effect", "3",
                "--out", str(raw), *quiet]) == 0
    assert run(["preprocess", "--in", str(raw), "--out", str(pre), *quiet]) == 0
    code = run(["ablate", "--data", str(pre), "--out", str(out), "--epochs", "2", "--seeds", "1,2,3,4,5",
                *TINY_FLAGS, *quiet])
    elapsed = time.perf_counter() - t0

    records = [json.loads(line) for line in (out / "ablation.jsonl").read_text(encoding="utf-8").splitlines()]
    arms = [r for r in records if r["record"] == "arm"]
    tables = [r["table"] for r in arms]
    counts = (tables.count("empathy_components"), tables.count("network_modules"))
    aggregates = {r["arm"]: r for r in records if r["record"] == "aggregate" and r["level"] == "sample"}
    every_arm_has_five = all(aggregates.get(a["arm"], {}).get("n_seeds") == 5 for a in arms)

    from beam.preprocess import read_sample_dataset
    labels = subject_labels(read_sample_dataset(pre))
    leak_free = True
    for r in records:
        if r["record"] == "seed" and r["level"] == "sample" and r["arm"] != "majority-baseline":
            train_ids, val_ids, test_ids = subject_split(sorted(labels), (0.7, 0.2, 0.1), r["seed"], labels)
            leak_free &= r["leakage_free"] and r["test_subjects"] == test_ids \
                and not set(test_ids) & (set(train_ids) | set(val_ids))
    table = (out / "ablation.md").read_text(encoding="utf-8")
    rows = [line for line in table.splitlines() if line.startswith("| ") and "±" in line]
    ok = code == 0 and counts == (6, 4) and every_arm_has_five and leak_free and len(rows) == 11 and elapsed < 2700
    verdict(7, ok, f"arms {counts[0]}+{counts[1]}, mean±std over 5 seeds={every_arm_has_five}, "
                   f"leakage-free={leak_free}, table rows {len(rows)} (10 arms + baseline)", elapsed)
    assert ok


def test_criterion_8_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    raw, pre = tmp_path / "raw", tmp_path / "pre"
    quiet = ["--log-level", "ERROR"]
    run(["synth", "--subjects", "6", "--channels", "4", "--rate", "200", "--effect", "3", "--out", str(raw), *quiet])
    run(["preprocess", "--in", str(raw), "--out", str(pre), *quiet])
    outs = []
    for name in ("a", "b"):
        assert run(["train", "--data", str(pre), "--arm", "tom+em", "--fusion", "--contrast", "--seeds", "1,2",
                    "--epochs", "2", "--threads", "1", "--out", str(tmp_path / name), *TINY_FLAGS, *quiet]) == 0
        outs.append(tmp_path / name)
    same_report = (outs[0] / "report.jsonl").read_bytes() == (outs[1] / "report.jsonl").read_bytes()
    same_ckpt = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in ("seed-1.ckpt", "seed-2.ckpt"))
    elapsed = time.perf_counter() - t0
    ok = same_report and same_ckpt
    verdict(8, ok, f"RunReport byte-identical={same_report}; checkpoints byte-identical={same_ckpt}", elapsed)
    assert ok
