import numpy as np
import pytest

from beam.preprocess import PreprocessConfig, cohort_labels, preprocess_recording
from beam.synthgen import SynthConfig, assign_classes, generate_recording


def build_cohort(n_subjects=8, channels=4, effect=3.0, rate=200.0, seed=42, **kw):
    """In-memory preprocessed cohort: {subject_id: [Sample, ...]}."""
    cfg = SynthConfig(n_subjects=n_subjects, channels=channels, sample_rate_hz=rate, class_effect=effect,
                      rng_seed=seed, **kw)
    labels, scores = assign_classes(cfg)
    recs = [generate_recording(cfg, i, labels[i], scores[i]) for i in range(n_subjects)]
    by_subject = cohort_labels(recs)
    pre = PreprocessConfig()
    return {r.subject_id: preprocess_recording(r, pre, by_subject[r.subject_id]) for r in recs}


@pytest.fixture(scope="session")
def small_cohort():
    return build_cohort()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
