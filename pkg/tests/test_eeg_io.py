import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beam.eeg_io import (EventClip, FormatError, Label, Recording, View, median_split, read_dataset,
                         read_manifest, read_recording, write_manifest, write_recording)


def make_recording(rng, c=3, t=500, willingness=2):
    clips = [EventClip(View.TOM, 0, 200), EventClip(View.EM, 250, 500)]
    return Recording("sub-001", 1000.0, [f"ch{i}" for i in range(c)], rng.normal(size=(c, t)), clips, willingness)


def test_round_trip(tmp_path, rng):
    rec = make_recording(rng)
    write_recording(rec, tmp_path / "sub-001")
    back = read_recording(tmp_path / "sub-001")
    np.testing.assert_array_equal(back.data, rec.data)
    assert back.clips == rec.clips
    assert (back.subject_id, back.sample_rate_hz, back.willingness) == ("sub-001", 1000.0, 2)
    assert back.channels == rec.channels


def test_payload_is_little_endian_float32(tmp_path, rng):
    rec = make_recording(rng, c=2, t=500)
    write_recording(rec, tmp_path / "r")
    raw = np.frombuffer((tmp_path / "r.eeg").read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw.reshape(2, 500), rec.data)


def test_truncated_payload_rejected(tmp_path, rng):
    write_recording(make_recording(rng), tmp_path / "r")
    payload = tmp_path / "r.eeg"
    payload.write_bytes(payload.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_recording(tmp_path / "r")


def test_missing_sidecar_rejected(tmp_path, rng):
    write_recording(make_recording(rng), tmp_path / "r")
    (tmp_path / "r.json").unlink()
    with pytest.raises(FormatError):
        read_recording(tmp_path / "r")


def test_clip_outside_recording_rejected(rng):
    rec = make_recording(rng)
    with pytest.raises(ValueError):
        rec.replace(clips=[EventClip(View.EM, 400, 900)]).validate()
    with pytest.raises(ValueError):
        EventClip(View.EM, 10, 10)


def test_unknown_view_rejected():
    with pytest.raises(FormatError):
        View.parse("XX")
    assert View.parse("tom") is View.TOM


def test_willingness_out_of_range(rng):
    with pytest.raises(ValueError):
        make_recording(rng, willingness=5).validate()


def test_manifest_and_dataset(tmp_path, rng):
    rec = make_recording(rng)
    write_recording(rec, tmp_path / rec.subject_id)
    write_manifest(tmp_path, [rec.subject_id])
    assert read_manifest(tmp_path) == ["sub-001"]
    assert [r.subject_id for r in read_dataset(tmp_path)] == ["sub-001"]


def test_median_split_ties_go_low():
    assert median_split([1, 2, 3, 4]) == [Label.LOW, Label.LOW, Label.HIGH, Label.HIGH]
    assert median_split([2, 2, 2, 3]) == [Label.LOW, Label.LOW, Label.LOW, Label.HIGH]


def test_median_split_single_class_warns(caplog):
    assert median_split([3, 3, 3]) == [Label.LOW] * 3
    assert "single class" in caplog.text


@given(st.lists(st.integers(1, 4), min_size=1, max_size=60))
def test_median_split_is_threshold_rule(scores):
    labels = median_split(scores)
    med = float(np.median(scores))
    assert all((lab is Label.HIGH) == (s > med) for s, lab in zip(scores, labels))
