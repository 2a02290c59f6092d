"""Frequency-sweep to composite time-trace preprocessing for measured radar data.

The chain mirrors the usual bench workflow: inverse FFT of each receiver's
S21 sweep, peak normalisation, squared magnitude, then stitching of the
receiver groups lit by successive transmitters via a shared receiver.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .fdtd import WaveRecordSet

UNIFORM_RTOL = 1e-6
# Extra zero padding of the spectrum; resolves the band's carrier well enough
# that the dominant |sample| sits on the envelope peak rather than a side cycle.
DEFAULT_PAD = 4
AMBIGUOUS_PEAK_FRACTION = 0.05


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencySweep:
    freqs: np.ndarray
    s21: np.ndarray  # (n_rx, n_freq) complex
    rx_positions: tuple[float, ...]

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        s21 = np.array(self.s21, dtype=complex, ndmin=2)
        if freqs.ndim != 1 or freqs.size < 2:
            raise ValueError("a sweep needs at least two frequency points")
        step = np.diff(freqs)
        if np.any(step <= 0) or not np.allclose(step, step[0], rtol=UNIFORM_RTOL, atol=0):
            raise ValueError("frequency grid must be uniform and increasing")
        if s21.shape != (len(self.rx_positions), freqs.size):
            raise ValueError(
                f"s21 shape {s21.shape} != ({len(self.rx_positions)}, {freqs.size})"
            )
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "s21", s21)
        object.__setattr__(self, "rx_positions", tuple(float(x) for x in self.rx_positions))

    @property
    def df(self) -> float:
        return float((self.freqs[-1] - self.freqs[0]) / (self.freqs.size - 1))


@dataclass(frozen=True)
class CompositeTraceSet:
    dt: float
    traces: np.ndarray
    rx_positions: tuple[float, ...]
    processing_tags: tuple[str, ...] = ()

    def __post_init__(self):
        traces = np.array(self.traces, dtype=float, ndmin=2)
        if traces.shape[0] != len(self.rx_positions):
            raise ValueError("one trace per receiver position required")
        object.__setattr__(self, "traces", traces)
        object.__setattr__(self, "rx_positions", tuple(float(x) for x in self.rx_positions))
        object.__setattr__(self, "processing_tags", tuple(self.processing_tags))

    def map(self, fn, tag: str) -> "CompositeTraceSet":
        return replace(
            self,
            traces=np.array([fn(tr) for tr in self.traces]),
            processing_tags=self.processing_tags + (tag,),
        )

    def to_records(self) -> WaveRecordSet:
        return WaveRecordSet(
            self.rx_positions,
            self.dt,
            self.traces,
            None,
            {"processing_tags": list(self.processing_tags)},
        )


def _band_bins(sweep: FrequencySweep, pad: int = DEFAULT_PAD) -> tuple[int, int]:
    k0 = int(round(sweep.freqs[0] / sweep.df))
    if abs(k0 * sweep.df - sweep.freqs[0]) > 1e-3 * sweep.df:
        raise ValueError("band start is not on the frequency grid multiple of df")
    n_fft = 1
    while n_fft < 2 * pad * (k0 + sweep.freqs.size):
        n_fft *= 2
    return k0, n_fft


def to_time_domain(
    sweep: FrequencySweep, hann: bool = False, pad: int = DEFAULT_PAD
) -> tuple[np.ndarray, float]:
    """Real time traces from band-limited S21 via a Hermitian inverse DFT.

    The measured band is placed at its absolute bins in an otherwise zero
    one-sided spectrum of power-of-two length ``N >= 2 * pad * (k0 + n_freq)``;
    ``dt = 1 / (N * df)``.
    """
    if pad < 1:
        raise ValueError("pad must be at least 1")
    k0, n_fft = _band_bins(sweep, pad)
    spec = np.zeros((len(sweep.rx_positions), n_fft // 2 + 1), dtype=complex)
    band = sweep.s21 * (np.hanning(sweep.freqs.size) if hann else 1.0)
    spec[:, k0 : k0 + sweep.freqs.size] = band
    traces = np.fft.irfft(spec, n=n_fft, axis=1)
    return traces, 1.0 / (n_fft * sweep.df)


def to_frequency_domain(traces: np.ndarray, dt: float, freqs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_time_domain`: sample the DFT of ``traces`` at ``freqs``."""
    traces = np.atleast_2d(traces)
    n_fft = traces.shape[1]
    df = 1.0 / (n_fft * dt)
    bins = np.rint(np.asarray(freqs) / df).astype(int)
    return np.fft.rfft(traces, axis=1)[:, bins]


def normalize(trace) -> np.ndarray:
    trace = np.asarray(trace, dtype=float)
    peak = np.max(np.abs(trace)) if trace.size else 0.0
    if not peak > 0:
        raise DegenerateInputError("cannot normalise an all-zero trace")
    return trace / peak


def squared_abs(trace) -> np.ndarray:
    trace = np.asarray(trace)
    return (np.abs(trace) ** 2).astype(float)


def _dominant_peak(trace: np.ndarray) -> tuple[int, bool]:
    """Index of the largest |sample| and whether a distant rival comes within 5 %."""
    mag = np.abs(trace)
    i = int(np.argmax(mag))
    rival = mag.copy()
    # The main lobe itself is not a rival: mask until the magnitude has fallen by half.
    lo, hi = i, i
    while lo > 0 and rival[lo - 1] > 0.5 * mag[i]:
        lo -= 1
    while hi < len(mag) - 1 and rival[hi + 1] > 0.5 * mag[i]:
        hi += 1
    rival[lo : hi + 1] = 0.0
    return i, bool(rival.max() >= (1 - AMBIGUOUS_PEAK_FRACTION) * mag[i])


def estimate_shift(reference: np.ndarray, other: np.ndarray) -> int:
    """Samples by which ``other`` lags ``reference``."""
    ia, amb_a = _dominant_peak(reference)
    ib, amb_b = _dominant_peak(other)
    if not (amb_a or amb_b):
        return ib - ia
    xc = np.correlate(other, reference, mode="full")
    return int(np.argmax(xc)) - (len(reference) - 1)


def _shift(trace: np.ndarray, lag: int) -> np.ndarray:
    """Delay ``trace`` by ``lag`` samples (advance if negative), zero filled."""
    out = np.zeros_like(trace)
    if lag >= 0:
        out[lag:] = trace[: len(trace) - lag]
    else:
        out[:lag] = trace[-lag:]
    return out


def concat_traces(
    segment_a: CompositeTraceSet, segment_b: CompositeTraceSet, overlap_rx: float
) -> CompositeTraceSet:
    """Merge two receiver groups, aligning ``segment_b`` on the shared receiver.

    ``segment_b`` is moved in time so its copy of the overlap receiver peaks
    when ``segment_a``'s does; ``segment_a``'s copy of that trace is kept.
    """
    if not np.isclose(segment_a.dt, segment_b.dt, rtol=1e-9, atol=0):
        raise ValueError(f"dt mismatch: {segment_a.dt} vs {segment_b.dt}")
    if segment_a.traces.shape[1] != segment_b.traces.shape[1]:
        raise ValueError("segments must have equal trace lengths")
    ia = _find(segment_a.rx_positions, overlap_rx)
    ib = _find(segment_b.rx_positions, overlap_rx)
    lag = estimate_shift(segment_a.traces[ia], segment_b.traces[ib])

    merged = {x: tr for x, tr in zip(segment_a.rx_positions, segment_a.traces)}
    for j, (x, tr) in enumerate(zip(segment_b.rx_positions, segment_b.traces)):
        if j == ib:
            continue
        merged.setdefault(x, _shift(tr, -lag))
    xs = sorted(merged)
    tags = segment_a.processing_tags + (f"concat(overlap={overlap_rx!r},shift={lag})",)
    return CompositeTraceSet(segment_a.dt, np.array([merged[x] for x in xs]), tuple(xs), tags)


def _find(positions: Sequence[float], x: float) -> int:
    for i, p in enumerate(positions):
        if np.isclose(p, x, rtol=0, atol=1e-9):
            return i
    raise ValueError(f"overlap receiver at {x} m not present in segment {positions}")


def preprocess_sweep(
    sweep: FrequencySweep, stages: Sequence[str] = ("ifft", "normalize", "squared_abs"), hann: bool = False
) -> CompositeTraceSet:
    """Run the per-receiver stages in their fixed order, stopping after the last requested."""
    order = ("ifft", "normalize", "squared_abs")
    if tuple(stages) != order[: len(stages)] or not stages:
        raise ValueError(f"stages must be a non-empty prefix of {order}")
    traces, dt = to_time_domain(sweep, hann=hann)
    out = CompositeTraceSet(dt, traces, sweep.rx_positions, ("ifft" + ("+hann" if hann else ""),))
    if "normalize" in stages:
        out = out.map(normalize, "normalize")
    if "squared_abs" in stages:
        out = out.map(squared_abs, "squared_abs")
    return out


def chain_segments(segments: Sequence[CompositeTraceSet], overlaps: Sequence[float] | None = None):
    """Concatenate transmitter groups left to right through their shared receivers."""
    if not segments:
        raise ValueError("no segments to concatenate")
    out = segments[0]
    for i, seg in enumerate(segments[1:]):
        if overlaps is not None:
            shared = overlaps[i]
        else:
            common = [x for x in seg.rx_positions if any(np.isclose(x, y, atol=1e-9) for y in out.rx_positions)]
            if len(common) != 1:
                raise ValueError(f"segment {i + 1} shares {len(common)} receivers with the chain; need 1")
            shared = common[0]
        out = concat_traces(out, seg, shared)
    return out


# -- files -------------------------------------------------------------------------


def read_sweep_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``freq_hz, re, im`` rows; a non-numeric first row is treated as a header."""
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    data = np.array([[float(v) for v in r[:3]] for r in rows if r], dtype=float)
    return data[:, 0], data[:, 1] + 1j * data[:, 2]


def write_sweep_csv(path: str | Path, freqs, s21) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "re", "im"])
        for f, s in zip(freqs, s21):
            w.writerow([repr(float(f)), repr(float(np.real(s))), repr(float(np.imag(s)))])


@dataclass
class Manifest:
    """Transmitter groups of receiver files; positions in metres.

    JSON layout::

        {"groups": [{"tx": "Tx-1", "receivers": [{"file": "rx1.csv", "position": 0.1}, ...]}, ...],
         "overlaps": [0.4, 0.7]}

    ``overlaps`` is optional and inferred from shared positions when absent.
    """

    groups: list[dict]
    overlaps: list[float] | None = None
    root: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        data = json.loads(path.read_text())
        return cls(data["groups"], data.get("overlaps"), path.parent)

    def sweeps(self) -> list[FrequencySweep]:
        out = []
        for group in self.groups:
            freqs, rows, xs = None, [], []
            for rx in group["receivers"]:
                f, s = read_sweep_csv(self.root / rx["file"])
                if freqs is not None and not np.allclose(f, freqs, rtol=1e-9, atol=0):
                    raise ValueError(f"receiver {rx['file']} uses a different frequency grid")
                freqs = f
                rows.append(s)
                xs.append(float(rx["position"]))
            out.append(FrequencySweep(freqs, np.array(rows), tuple(xs)))
        return out


def preprocess_manifest(
    path: str | Path, stages: Sequence[str] = ("ifft", "normalize", "squared_abs"), hann: bool = False
) -> CompositeTraceSet:
    manifest = Manifest.load(path)
    segments = [preprocess_sweep(s, stages, hann) for s in manifest.sweeps()]
    return chain_segments(segments, manifest.overlaps)
