import hashlib

import numpy as np
import pytest

from beam.eeg_io import Label, View, median_split, read_dataset
from beam.preprocess import PreprocessConfig, cohort_labels
from beam.synthgen import (SynthConfig, assign_classes, band_power, check_clip_plan, classify_auc, generate,
                           generate_recording, pink_noise, separability, threshold_auc, verify)

SMALL = dict(channels=4, sample_rate_hz=200.0)


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_generation_is_deterministic(tmp_path):
    cfg = SynthConfig(n_subjects=4, **SMALL)
    generate(cfg, tmp_path / "a")
    generate(cfg, tmp_path / "b", threads=2)
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_median_split_reproduces_classes():
    for n in (2, 5, 10, 57):
        labels, scores = assign_classes(SynthConfig(n_subjects=n, **SMALL))
        assert median_split(scores) == labels
        assert sum(lab is Label.HIGH for lab in labels) == n // 2


def test_default_clip_plan_counts():
    counts = check_clip_plan(SynthConfig(), PreprocessConfig())
    assert counts == {View.TOM: 65, View.EM: 43}


def test_short_clip_plan_rejected():
    with pytest.raises(ValueError):
        check_clip_plan(SynthConfig(tom_clip_seconds=(3.0,)), PreprocessConfig())


def test_pink_noise_spectrum_slopes_down(rng):
    x = pink_noise(rng, 1, 2 ** 16)[0]
    spec = np.abs(np.fft.rfft(x)) ** 2
    low, high = spec[10:100].mean(), spec[1000:10000].mean()
    assert low > 10 * high
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0, rel=1e-6)


def test_alpha_effect_raises_band_power():
    cfg = SynthConfig(n_subjects=2, class_effect=3.0, **SMALL)
    hi = generate_recording(cfg, 0, Label.HIGH, 4)
    lo = generate_recording(cfg, 1, Label.LOW, 1)
    ch = cfg.signal_channels()[0]
    assert band_power(hi.data[ch], 200.0) > 3 * band_power(lo.data[ch], 200.0)


def test_threshold_auc_oracle():
    assert threshold_auc([1, 2, 3, 4], [0, 0, 1, 1]) == pytest.approx(1.0)
    assert threshold_auc([4, 3, 2, 1], [0, 0, 1, 1]) == pytest.approx(0.0)
    assert threshold_auc([1, 1, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.5)


@pytest.mark.parametrize("effect, status", [(3.0, "separable"), (0.0, "chance")])
def test_separability_survives_preprocessing(effect, status):
    cfg = SynthConfig(n_subjects=10, class_effect=effect, **SMALL)
    labels, scores = assign_classes(cfg)
    recs = [generate_recording(cfg, i, labels[i], scores[i]) for i in range(10)]
    sep = separability(recs, labels, PreprocessConfig())
    assert classify_auc(sep["auc_preprocessed"]) == status
    if effect:
        assert abs(sep["auc_raw"] - sep["auc_preprocessed"]) <= 0.05


def test_verify_reports(tmp_path):
    generate(SynthConfig(n_subjects=6, class_effect=3.0, **SMALL), tmp_path / "ok")
    report = verify(tmp_path / "ok")
    assert report["ok"], report["failures"]
    assert report["checks"]["separability"]["status"] == "separable"
    assert report["checks"]["class_balance"] == {"high": 3, "low": 3}

    generate(SynthConfig(n_subjects=6, class_effect=0.0, **SMALL), tmp_path / "null")
    report = verify(tmp_path / "null")
    assert report["ok"] and report["checks"]["separability"]["status"] in ("chance", "weak")

    payload = tmp_path / "ok" / "sub-001.eeg"
    payload.write_bytes(payload.read_bytes()[:-8])
    report = verify(tmp_path / "ok")
    assert not report["ok"]
    assert any(f.startswith("format") for f in report["failures"])


def test_cohort_round_trip_labels(tmp_path):
    cfg = SynthConfig(n_subjects=4, **SMALL)
    generate(cfg, tmp_path)
    labels = cohort_labels(read_dataset(tmp_path))
    assert list(labels.values()) == assign_classes(cfg)[0]
