import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eventfoley.features import (
    EventFeature,
    SignalTooShortError,
    block_pool,
    decode_feature,
    encode_feature,
    extract_power,
    extract_rms,
    frame_count,
    read_feature_csv,
    scale_gain,
    write_feature_csv,
)
from eventfoley.wavio import Waveform


def brute_rms(x, window, hop):
    out = []
    i = 0
    while i * hop + window <= len(x):
        seg = x[i * hop : i * hop + window]
        out.append(np.sqrt(sum(v * v for v in seg) / window))
        i += 1
    return np.array(out)


def test_constant_signal():
    f = extract_rms(Waveform(np.full(1000, 0.5), 8000), 64, 16)
    np.testing.assert_allclose(f.values, 0.5, rtol=0, atol=1e-15)


def test_alternating_hand_case():
    f = extract_rms(Waveform(np.array([1, 0, 1, 0, 1, 0.0]), 8000), 2, 2)
    np.testing.assert_allclose(f.values, [np.sqrt(0.5)] * 3, atol=1e-15)


def test_four_second_clip_frame_count():
    f = extract_rms(Waveform(np.zeros(88200), 22050))
    assert (f.window, f.hop) == (512, 128)
    assert f.frame_count == 686 == (88200 - 512) // 128 + 1


def test_matches_brute_force():
    x = np.random.default_rng(3).normal(size=777)
    np.testing.assert_allclose(extract_rms(Waveform(x, 8000), 50, 7).values, brute_rms(x, 50, 7), atol=1e-12)


def test_too_short():
    with pytest.raises(SignalTooShortError):
        extract_rms(Waveform(np.zeros(100), 8000), 512, 128)


def test_power():
    w = Waveform(np.full(600, 0.5), 8000)
    np.testing.assert_allclose(extract_power(w).values, 0.25, atol=1e-15)
    assert np.all(extract_power(Waveform(np.zeros(600), 8000)).values == 0)
    x = Waveform(np.random.default_rng(0).normal(size=3000), 8000)
    np.testing.assert_allclose(extract_power(x).values, extract_rms(x).values ** 2, rtol=0, atol=1e-12)


def test_gain():
    f = EventFeature(np.array([1.0, 0.5]), 512, 128, 8000)
    assert np.array_equal(scale_gain(f, 1.0).values, f.values)
    g = scale_gain(f, 0.1)
    np.testing.assert_allclose(g.values, [0.1, 0.05])
    assert (g.window, g.hop, g.source_rate) == (512, 128, 8000)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            scale_gain(f, bad)


def test_gain_reduced_by_ten_scenario():
    x = Waveform(np.random.default_rng(1).normal(size=4000) * 0.3, 8000)
    original = extract_rms(x)
    np.testing.assert_allclose(scale_gain(original, 0.1).values, extract_rms(Waveform(x.samples * 0.1, 8000)).values,
                               rtol=1e-12)


def test_block_pool_examples():
    assert list(block_pool(np.array([1.0, 2, 3, 4]), 2)) == [2, 4]
    assert list(block_pool(np.array([3.0, 9, 1]), 1)) == [9]
    values = np.random.default_rng(0).uniform(size=686)
    pooled = block_pool(values, 49)
    np.testing.assert_array_equal(pooled, values.reshape(49, 14).max(axis=1))


def test_block_pool_pads_with_last_value():
    # 5 values into 2 blocks of 3: [1, 5, 2] and [0, 0.5, 0.5(pad)]
    np.testing.assert_array_equal(block_pool(np.array([1.0, 5, 2, 0, 0.5]), 2), [5, 0.5])
    with pytest.raises(ValueError):
        block_pool(np.array([1.0, 2.0]), 3)


def test_serialization_round_trip(tmp_path):
    f = EventFeature(np.abs(np.random.default_rng(0).normal(size=59)), 512, 128)
    back = decode_feature(encode_feature(f))
    assert (back.window, back.hop, back.frame_count) == (512, 128, 59)
    np.testing.assert_array_equal(back.values, f.values.astype(np.float32))
    assert len(encode_feature(f)) == 16 + 4 * 59
    p = tmp_path / "f.csv"
    write_feature_csv(f, p)
    np.testing.assert_array_equal(read_feature_csv(p).values, f.values)


signals = arrays(np.float64, st.integers(16, 300), elements=st.floats(-1, 1, allow_nan=False))


@settings(max_examples=80, deadline=None)
@given(signals, st.floats(-4, 4, allow_nan=False), st.integers(1, 16), st.integers(1, 9))
def test_scale_equivariance_and_bound(x, a, window, hop):
    base = extract_rms(Waveform(x, 8000), window, hop).values
    scaled = extract_rms(Waveform(a * x, 8000), window, hop).values
    np.testing.assert_allclose(scaled, abs(a) * base, rtol=0, atol=1e-9)
    assert np.all(base <= np.max(np.abs(x)) + 1e-12)
    assert len(base) == frame_count(len(x), window, hop)
    power = extract_power(Waveform(x, 8000), window, hop).values
    np.testing.assert_allclose(power, base ** 2, rtol=0, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 10, allow_nan=False)), st.data())
def test_block_pool_permutation_and_monotonicity(values, data):
    n = data.draw(st.integers(1, len(values)))
    pooled = block_pool(values, n)
    block = -(-len(values) // n)
    # permuting inside a block leaves the result unchanged, unless the block holds the
    # last value and padding repeats it into the next block
    j = data.draw(st.integers(0, n - 1))
    lo, hi = j * block, min((j + 1) * block, len(values))
    if hi - lo > 1:
        perm = values.copy()
        perm[lo:hi] = perm[lo:hi][::-1]
        if hi < len(values) or n * block == len(values):
            np.testing.assert_array_equal(block_pool(perm, n), pooled)
    # raising any sample never lowers any pooled value
    k = data.draw(st.integers(0, len(values) - 1))
    bumped = values.copy()
    bumped[k] += data.draw(st.floats(0, 5))
    assert np.all(block_pool(bumped, n) >= pooled)
