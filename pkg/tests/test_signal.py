import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from radarpinn.fdtd import WaveRecordSet
from radarpinn.signal import (
    CompositeTraceSet,
    DegenerateInputError,
    FrequencySweep,
    chain_segments,
    concat_traces,
    estimate_shift,
    normalize,
    preprocess_manifest,
    preprocess_sweep,
    squared_abs,
    to_frequency_domain,
    to_time_domain,
    write_sweep_csv,
)

BAND = np.linspace(2e9, 4e9, 201)  # 10 MHz steps


def delayed_sweep(taus, freqs=BAND):
    s21 = np.array([np.exp(-2j * np.pi * freqs * tau) for tau in taus])
    return FrequencySweep(freqs, s21, tuple(0.1 * (i + 1) for i in range(len(taus))))


def pulse_segment(xs, peaks, n=200, dt=1e-10, tags=("ifft",)):
    # compact triangles, so no energy is lost when a shift pushes samples off the record
    t = np.arange(n)
    traces = [np.maximum(0.0, 1 - np.abs(t - p) / 6.0) * (1 + 0.1 * i) for i, p in enumerate(peaks)]
    return CompositeTraceSet(dt, np.array(traces), tuple(xs), tags)


def test_sweep_validation():
    with pytest.raises(ValueError):
        FrequencySweep([1e9, 2e9, 2.5e9], np.ones((1, 3)), (0.1,))
    with pytest.raises(ValueError):
        FrequencySweep([1e9], np.ones((1, 1)), (0.1,))
    with pytest.raises(ValueError):
        FrequencySweep(BAND, np.ones((2, BAND.size)), (0.1,))
    assert FrequencySweep(BAND, np.ones((1, BAND.size)), (0.1,)).df == pytest.approx(1e7)


def test_rectangular_band_peaks_at_zero_and_is_symmetric():
    sweep = FrequencySweep(BAND, np.ones((1, BAND.size)), (0.0,))
    traces, dt = to_time_domain(sweep)
    tr = traces[0]
    n = tr.size
    assert n >= 2 * BAND.size and n & (n - 1) == 0
    assert dt == pytest.approx(1 / (n * 1e7))
    assert np.argmax(np.abs(tr)) == 0
    np.testing.assert_allclose(tr[1:], tr[1:][::-1], atol=1e-12 * np.abs(tr).max())


def test_output_is_real_hermitian_transform():
    rng = np.random.default_rng(0)
    s21 = rng.normal(size=(2, BAND.size)) + 1j * rng.normal(size=(2, BAND.size))
    sweep = FrequencySweep(BAND, s21, (0.1, 0.2))
    traces, dt = to_time_domain(sweep)
    n = traces.shape[1]
    # independent construction: explicit two-sided spectrum and a complex inverse DFT
    k0 = int(round(BAND[0] / 1e7))
    full = np.zeros((2, n), dtype=complex)
    full[:, k0 : k0 + BAND.size] = s21
    full[:, n - k0 - BAND.size + 1 : n - k0 + 1] = np.conj(s21[:, ::-1])
    ref = np.fft.ifft(full, axis=1)
    assert np.abs(ref.imag).max() < 1e-12 * np.abs(ref.real).max()
    np.testing.assert_allclose(traces, ref.real, atol=1e-12 * np.abs(ref).max())


def test_round_trip():
    rng = np.random.default_rng(1)
    s21 = rng.normal(size=(3, BAND.size)) + 1j * rng.normal(size=(3, BAND.size))
    sweep = FrequencySweep(BAND, s21, (0.1, 0.2, 0.3))
    traces, dt = to_time_domain(sweep)
    back = to_frequency_domain(traces, dt, BAND)
    assert np.abs(back - s21).max() / np.abs(s21).max() < 1e-9


@pytest.mark.parametrize("tau", [1e-9, 0.37e-9, 2.5e-9])
def test_shift_theorem(tau):
    traces, dt = to_time_domain(delayed_sweep([tau]))
    peak = np.argmax(np.abs(traces[0])) * dt
    assert abs(peak - tau) <= dt / 2


def test_normalize_examples():
    np.testing.assert_array_equal(normalize([0, 2, -4]), [0, 0.5, -1])
    once = normalize([0.3, -0.1, 0.2])
    np.testing.assert_array_equal(normalize(once), once)
    with pytest.raises(DegenerateInputError):
        normalize([0.0, 0.0])


def test_squared_abs_examples():
    np.testing.assert_array_equal(squared_abs([-1, 0.5]), [1, 0.25])
    np.testing.assert_array_equal(squared_abs(np.zeros(4)), np.zeros(4))


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(arrays(float, st.integers(1, 50), elements=finite))
def test_normalize_then_square_bounded(tr):
    if not np.any(tr):
        return
    n = normalize(tr)
    assert np.max(np.abs(n)) == pytest.approx(1.0)
    np.testing.assert_array_equal(normalize(n), n)
    sq = squared_abs(n)
    assert np.all(sq >= 0) and np.all(sq <= 1.0)


def test_concat_identical_and_shifted():
    a = pulse_segment((0.1, 0.2, 0.4), (40, 60, 90))
    same = concat_traces(a, pulse_segment((0.4, 0.5), (90, 110)), 0.4)
    assert same.processing_tags[-1] == "concat(overlap=0.4,shift=0)"
    assert same.rx_positions == (0.1, 0.2, 0.4, 0.5)

    b = pulse_segment((0.4, 0.5, 0.6), (93, 113, 140))
    merged = concat_traces(a, b, 0.4)
    assert merged.processing_tags[-1] == "concat(overlap=0.4,shift=3)"
    assert merged.rx_positions == (0.1, 0.2, 0.4, 0.5, 0.6)
    # the overlap keeps segment a's copy
    np.testing.assert_array_equal(merged.traces[2], a.traces[2])
    assert np.argmax(merged.traces[3]) == 110
    assert np.argmax(merged.traces[4]) == 137


def test_estimate_shift_falls_back_on_ambiguous_peaks():
    t = np.arange(300)
    twin = np.exp(-0.5 * ((t - 80) / 3) ** 2) + 0.98 * np.exp(-0.5 * ((t - 200) / 3) ** 2)
    moved = np.roll(twin, 7)
    assert estimate_shift(twin, moved) == 7


def test_concat_errors():
    a = pulse_segment((0.1, 0.2), (40, 60))
    with pytest.raises(ValueError, match="not present"):
        concat_traces(a, pulse_segment((0.3, 0.4), (40, 60)), 0.3)
    with pytest.raises(ValueError, match="dt"):
        concat_traces(a, pulse_segment((0.2, 0.4), (40, 60), dt=2e-10), 0.2)


def test_three_segment_chain_is_associative():
    a = pulse_segment((0.1, 0.2, 0.4), (30, 45, 70))
    b = pulse_segment((0.4, 0.5, 0.7), (74, 90, 120))
    c = pulse_segment((0.7, 0.8, 0.9), (118, 130, 150))
    left = concat_traces(concat_traces(a, b, 0.4), c, 0.7)
    right = concat_traces(a, concat_traces(b, c, 0.7), 0.4)
    assert left.rx_positions == right.rx_positions
    np.testing.assert_array_equal(left.traces, right.traces)
    chained = chain_segments([a, b, c])
    np.testing.assert_array_equal(chained.traces, left.traces)


def test_stage_order_and_tags():
    sweep = delayed_sweep([1e-9, 2e-9])
    out = preprocess_sweep(sweep)
    assert out.processing_tags == ("ifft", "normalize", "squared_abs")
    assert np.all(out.traces >= 0) and np.all(out.traces <= 1)
    partial = preprocess_sweep(sweep, ("ifft", "normalize"))
    assert partial.processing_tags == ("ifft", "normalize")
    assert np.isclose(np.abs(partial.traces).max(axis=1), 1).all()
    assert preprocess_sweep(sweep, hann=True).processing_tags[0] == "ifft+hann"
    for bad in ((), ("normalize",), ("ifft", "squared_abs")):
        with pytest.raises(ValueError):
            preprocess_sweep(sweep, bad)


def test_manifest_to_trace_csv(tmp_path):
    groups = []
    for g, (taus, xs) in enumerate((([1e-9, 1.5e-9], [0.1, 0.3]), ([2e-9, 2.6e-9], [0.3, 0.5]))):
        rx = []
        for tau, x in zip(taus, xs):
            name = f"tx{g}_rx{x}.csv"
            write_sweep_csv(tmp_path / name, BAND, np.exp(-2j * np.pi * BAND * tau))
            rx.append({"file": name, "position": x})
        groups.append({"tx": f"Tx-{g + 1}", "receivers": rx})
    (tmp_path / "manifest.json").write_text(json.dumps({"groups": groups}))

    out = preprocess_manifest(tmp_path / "manifest.json")
    assert out.rx_positions == (0.1, 0.3, 0.5)
    assert out.processing_tags[:3] == ("ifft", "normalize", "squared_abs")
    assert out.processing_tags[3].startswith("concat(overlap=0.3,")
    dt = out.dt
    # group 2 is re-timed so its 0.3 m receiver lines up with group 1's (1.5 ns)
    peaks = [np.argmax(tr) * dt for tr in out.traces]
    assert abs(peaks[1] - 1.5e-9) <= dt / 2
    # three peak picks, each within half a sample, enter this comparison
    assert abs(peaks[2] - (2.6e-9 - 0.5e-9)) <= 1.5 * dt

    rec = out.to_records()
    path, _ = rec.save(tmp_path / "composite.csv")
    back = WaveRecordSet.load(path)
    np.testing.assert_array_equal(back.traces, out.traces)
    assert back.meta["processing_tags"] == list(out.processing_tags)
