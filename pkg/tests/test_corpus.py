import numpy as np
import pytest

from eventfoley.corpus import (
    FeatureCache,
    LabeledClip,
    SynthSpec,
    batches,
    event_frame,
    load_directory,
    make_synth_corpus,
    random_spec,
    split,
    synth_clip,
    write_corpus,
)
from eventfoley.features import extract_rms
from eventfoley.wavio import Waveform, write_wav


def test_zero_events_is_silent():
    clip = synth_clip(SynthSpec("impulsive"), 8000, 1.0)
    assert np.all(extract_rms(clip.waveform).values < 1e-6)


def test_single_impulse_peak_position():
    clip = synth_clip(SynthSpec("impulsive", (0.5,), (0.5,), seed=3), 8000, 1.0)
    rms = extract_rms(clip.waveform).values
    assert abs(int(np.argmax(rms)) - event_frame(0.5, 8000)) <= 2


def test_same_seed_same_samples():
    spec = SynthSpec("repeated", (0.2, 0.6), (0.4, 0.3), carrier="sine", seed=7)
    assert np.array_equal(synth_clip(spec).waveform.samples, synth_clip(spec).waveform.samples)


def test_events_outside_duration_rejected():
    with pytest.raises(ValueError):
        synth_clip(SynthSpec("impulsive", (1.2,)), 8000, 1.0)
    with pytest.raises(ValueError):
        synth_clip(SynthSpec("bogus", (0.2,)), 8000, 1.0)


@pytest.mark.parametrize("archetype, carrier", [("impulsive", "noise"), ("repeated", "sine"),
                                                ("stationary", "noise"), ("repeated", "chirp")])
def test_random_spec_peaks_match_events(archetype, carrier):
    """Every event has a local RMS maximum within two frames of its position (100 random specs in total)."""
    rng = np.random.default_rng(hash(archetype + carrier) % 2**32)
    for k in range(25):
        spec = random_spec(archetype, carrier, 1.0, rng, seed=k)
        rms = extract_rms(synth_clip(spec).waveform).values
        for e in spec.events:
            f = event_frame(e, 8000)
            lo, hi = max(f - 2, 0), min(f + 3, len(rms))
            peak = lo + int(np.argmax(rms[lo:hi]))
            left = rms[max(peak - 3, 0):peak]
            right = rms[peak + 1:peak + 4]
            assert np.all(left <= rms[peak]) and np.all(right <= rms[peak]), (spec, e)


def test_toy_corpus_shape_and_determinism():
    a = make_synth_corpus(4, seed=1)
    b = make_synth_corpus(4, seed=1)
    assert len(a) == 12 and [c.class_name for c in a[::4]] == ["GunShot", "Footstep", "Rain"]
    assert all(np.array_equal(x.waveform.samples, y.waveform.samples) for x, y in zip(a, b))
    assert all(len(c.waveform) == 8000 and c.waveform.sample_rate == 8000 for c in a)


def test_load_directory_seven_classes(tmp_path):
    names = ["DogBark", "Footstep", "GunShot", "Keyboard", "MovingMotorVehicle", "Rain", "Sneeze_Cough"]
    for name in names:
        (tmp_path / name).mkdir()
        write_wav(Waveform(np.zeros(800), 8000), tmp_path / name / "a.wav")
    load = load_directory(tmp_path)
    assert load.class_names == sorted(names) and len({c.class_id for c in load}) == 7
    # duplicate file names across classes are both kept, with distinct ids
    assert len(load) == 7 and len({c.source for c in load}) == 7


def test_load_directory_empty_and_bad_files(tmp_path):
    load = load_directory(tmp_path)
    assert len(load) == 0 and load.warnings
    (tmp_path / "A").mkdir()
    (tmp_path / "B").mkdir()
    (tmp_path / "A" / "broken.wav").write_bytes(b"not a wav")
    write_wav(Waveform(np.zeros(100), 8000), tmp_path / "A" / "ok.wav")
    load = load_directory(tmp_path)
    assert len(load) == 1 and len(load.errors) == 1 and "broken.wav" in load.errors[0]
    assert any("'B'" in w for w in load.warnings)


def test_load_directory_format_validation(tmp_path):
    (tmp_path / "A").mkdir()
    write_wav(Waveform(np.zeros(8000), 8000), tmp_path / "A" / "good.wav")
    write_wav(Waveform(np.zeros(7999), 8000), tmp_path / "A" / "short.wav")
    load = load_directory(tmp_path, expected_rate=8000, expected_len=8000)
    assert len(load) == 1 and "short.wav" in load.errors[0]


def test_write_and_reload_corpus_with_manifest(tmp_path):
    clips = make_synth_corpus(2, seed=0)
    root = write_corpus(clips, tmp_path / "c")
    by_folder = load_directory(root)
    by_manifest = load_directory(root, manifest=root / "manifest.csv")
    assert len(by_folder) == len(by_manifest) == 6
    assert [c.source for c in by_folder] == [c.source for c in by_manifest]
    assert by_folder.class_names == ["Footstep", "GunShot", "Rain"]


def fake_clips(per_class, classes=3):
    return [LabeledClip(Waveform(np.full(600, i / 1000.0), 8000), c, f"c{c}", f"clip{c}-{i}")
            for c in range(classes) for i in range(per_class)]


def test_split_ninety_five_five():
    clips = fake_clips(100)
    train, val = split(clips, 0.05, 0)
    for c in range(3):
        assert sum(x.class_id == c for x in train) == 95
        assert sum(x.class_id == c for x in val) == 5
    keys = [x.key for x in train + val]
    assert sorted(keys) == sorted(x.key for x in clips) and len(set(keys)) == len(keys)
    assert [x.key for x in split(clips, 0.05, 0)[1]] == [x.key for x in val]


def test_split_small_classes():
    train, val = split(fake_clips(2, classes=1), 0.5, 0)
    assert len(train) == 1 and len(val) == 1
    train, val = split(fake_clips(1, classes=2), 0.5, 0)
    assert len(train) == 2 and not val
    with pytest.raises(ValueError):
        split(fake_clips(2), 1.0, 0)


def test_batch_sizes_and_order():
    clips = fake_clips(10, classes=1)
    sizes = [len(b[0]) for b in batches(clips, 4, np.random.default_rng(0))]
    assert sizes == [4, 4, 2]
    first = [b[0][:, 0].tolist() for b in batches(clips, 4, np.random.default_rng(5))]
    again = [b[0][:, 0].tolist() for b in batches(clips, 4, np.random.default_rng(5))]
    assert first == again
    with pytest.raises(ValueError):
        next(batches(clips, 0, np.random.default_rng(0)))


def test_batch_features_match_extraction_and_are_cached():
    clips = make_synth_corpus(3, seed=2)
    cache = FeatureCache()
    for x0, cls, feat in batches(clips, 4, np.random.default_rng(0), cache):
        for row, f in zip(x0, feat):
            np.testing.assert_array_equal(f, extract_rms(Waveform(row, 8000)).values)
    assert len(cache) == len(clips)
    list(batches(clips, 4, np.random.default_rng(1), cache))
    assert len(cache) == len(clips)
