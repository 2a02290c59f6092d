"""One-dimensional Yee-grid FDTD solver for lossless, non-magnetic layered media.

E lives on the integer nodes ``x_min + i*dx`` and H on the half nodes between
them. The source is injected additively into one E node and both ends carry a
first-order Mur absorbing boundary.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .domain import (
    C0,
    EPS0,
    MU0,
    DomainError,
    LayeredProfile,
    SpatialDomain,
    TimeDomain,
    eval_layered,
    wave_speed,
)

# Nominal FDTD step (s); the source carrier phase is defined against it.
REFERENCE_DT = 1.991e-11
# c0 * dt / dx may land one ulp above 1 when dx is derived from dt.
_COURANT_SLACK = 1e-12


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class SourceSpec:
    """Sine-times-Gaussian excitation, parameterised per time-step index."""

    scale: float = 20.0
    amplitude: float = 2.0
    freq: float = 0.5e9
    dt: float = REFERENCE_DT
    a: float = 20.0
    b: float = 8.0

    def __post_init__(self):
        if not (self.freq > 0 and self.dt > 0 and self.b > 0):
            raise ValueError("source freq, dt and b must be positive")

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "amplitude": self.amplitude,
            "freq": self.freq,
            "dt": self.dt,
            "a": self.a,
            "b": self.b,
        }


def source_sample(k, spec: SourceSpec = SourceSpec()):
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ValueError("time-step index must be non-negative")
    s = (
        spec.scale
        * np.sin(spec.amplitude * math.pi * spec.freq * spec.dt * k)
        * np.exp(-0.5 * ((k - spec.a) / spec.b) ** 2)
    )
    return float(s) if s.ndim == 0 else s


def check_cfl(dx: float, dt: float, min_eps_r: float = 1.0) -> float:
    """Courant number in the fastest medium; raises if the leapfrog would be unstable."""
    if not (dx > 0 and dt > 0):
        raise ValueError("dx and dt must be positive")
    courant = wave_speed(min_eps_r) * dt / dx
    if courant > 1.0 + _COURANT_SLACK:
        raise StabilityError(
            f"Courant number {courant:.6g} > 1 for dx={dx:.6g} m, dt={dt:.6g} s "
            f"(min eps_r {min_eps_r})"
        )
    return courant


@dataclass
class FieldState:
    e: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        if len(self.h) != len(self.e) - 1:
            raise ValueError("H must have one fewer sample than E on the staggered grid")

    @classmethod
    def zeros(cls, nx: int) -> "FieldState":
        return cls(np.zeros(nx), np.zeros(nx - 1))


@dataclass(frozen=True)
class WaveRecordSet:
    """E-field time series recorded at a set of receivers.

    ``traces[i, n]`` is the field at ``rx_positions[i]`` at time ``n * dt``.
    """

    rx_positions: tuple[float, ...]
    dt: float
    traces: np.ndarray = field(repr=False)
    source_position: float | None = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rx_positions", tuple(float(x) for x in self.rx_positions))
        traces = np.array(self.traces, dtype=float, ndmin=2)
        if traces.shape[0] != len(self.rx_positions):
            raise ValueError(
                f"{traces.shape[0]} traces for {len(self.rx_positions)} receiver positions"
            )
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        traces.flags.writeable = False
        object.__setattr__(self, "traces", traces)

    @property
    def nt(self) -> int:
        return self.traces.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    def select(self, indices: Sequence[int]) -> "WaveRecordSet":
        idx = list(indices)
        return replace(
            self,
            rx_positions=tuple(self.rx_positions[i] for i in idx),
            traces=self.traces[idx],
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t_s"] + [f"rx_{x!r}" for x in self.rx_positions])
        for n, t in enumerate(self.times):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in self.traces[:, n]])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "rx_positions": list(self.rx_positions),
            "dt": self.dt,
            "source_position": self.source_position,
            **self.meta,
        }

    def save(self, csv_path: str | Path) -> tuple[Path, Path]:
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv())
        side = csv_path.with_suffix(".json")
        side.write_text(json.dumps(self.sidecar(), indent=2))
        return csv_path, side

    @classmethod
    def from_csv(cls, text: str, sidecar: dict | None = None) -> "WaveRecordSet":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if not header or header[0].strip() != "t_s":
            raise ValueError("trace CSV must start with a t_s column")
        positions = [float(h.strip()[3:]) for h in header[1:]]
        data = np.array([[float(v) for v in row] for row in body], dtype=float)
        if data.shape[0] < 1:
            raise ValueError("trace CSV has no samples")
        times = data[:, 0]
        dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
        meta = dict(sidecar or {})
        if "dt" in meta:
            dt = float(meta.pop("dt"))
        if "rx_positions" in meta:
            positions = [float(x) for x in meta.pop("rx_positions")]
        src = meta.pop("source_position", None)
        return cls(tuple(positions), dt, data[:, 1:].T, src, meta)

    @classmethod
    def load(cls, csv_path: str | Path) -> "WaveRecordSet":
        csv_path = Path(csv_path)
        side = csv_path.with_suffix(".json")
        sidecar = json.loads(side.read_text()) if side.exists() else None
        return cls.from_csv(csv_path.read_text(), sidecar)


def snap_to_grid(domain: SpatialDomain, x: float, *, interior: bool = False) -> int:
    if not domain.x_min <= x <= domain.x_max:
        raise DomainError(f"position {x} m outside [{domain.x_min}, {domain.x_max}]")
    i = int(round((x - domain.x_min) / domain.dx))
    i = min(i, domain.nx - 1)
    if interior and not 0 < i < domain.nx - 1:
        raise DomainError(f"position {x} m snaps onto a boundary node")
    return i


def material_grid(profile: LayeredProfile, domain: SpatialDomain) -> np.ndarray:
    xs = np.clip(domain.grid, domain.x_min, domain.x_max)
    if domain.x_min < profile.x_min or domain.x_max > profile.x_max:
        raise DomainError("profile does not cover the simulation domain")
    return np.asarray(eval_layered(profile, xs), dtype=float)


def march(
    profile: LayeredProfile,
    source: SourceSpec,
    source_x: float,
    domain: SpatialDomain,
    time: TimeDomain,
) -> Iterator[FieldState]:
    """Yield the field after each of ``time.nt`` leapfrog steps (same object, updated in place)."""
    eps_r = material_grid(profile, domain)
    dx, dt, nx = domain.dx, time.dt, domain.nx
    check_cfl(dx, dt, float(eps_r.min()))
    src = snap_to_grid(domain, source_x, interior=True)

    ch = dt / (MU0 * dx)
    ce = dt / (EPS0 * eps_r[1:-1] * dx)
    v_left, v_right = wave_speed(eps_r[0]), wave_speed(eps_r[-1])
    mur_left = (v_left * dt - dx) / (v_left * dt + dx)
    mur_right = (v_right * dt - dx) / (v_right * dt + dx)
    drive = source_sample(np.arange(time.nt), source)

    state = FieldState.zeros(nx)
    e, h = state.e, state.h
    for n in range(time.nt):
        h += ch * (e[1:] - e[:-1])
        e0, e1, en, en1 = e[0], e[1], e[-1], e[-2]
        e[1:-1] += ce * (h[1:] - h[:-1])
        e[src] += drive[n]
        e[0] = e1 + mur_left * (e[1] - e0)
        e[-1] = en1 + mur_right * (e[-2] - en)
        yield state


def field_energy(state: FieldState, eps_r: np.ndarray, dx: float) -> float:
    """Electromagnetic energy per unit area, ``sum(eps E^2 + mu0 H^2) * dx / 2``."""
    return 0.5 * dx * float(np.sum(EPS0 * eps_r * state.e**2) + np.sum(MU0 * state.h**2))


def simulate(
    profile: LayeredProfile,
    source: SourceSpec,
    source_x: float,
    domain: SpatialDomain,
    time: TimeDomain,
    rx_positions: Sequence[float],
) -> WaveRecordSet:
    """Record E at each receiver (snapped to the nearest node) after every step."""
    rx = np.array([snap_to_grid(domain, x) for x in rx_positions], dtype=int)
    traces = np.empty((len(rx), time.nt))
    for n, state in enumerate(march(profile, source, source_x, domain, time)):
        traces[:, n] = state.e[rx]

    src = snap_to_grid(domain, source_x, interior=True)
    meta = {
        "source": source.to_dict(),
        "profile": profile.to_dict(),
        "domain": domain.to_dict(),
        "time": time.to_dict(),
    }
    snapped = tuple(float(domain.x_min + i * domain.dx) for i in rx)
    return WaveRecordSet(snapped, time.dt, traces, float(domain.x_min + src * domain.dx), meta)


def default_grid(x_min: float, x_max: float, t_max: float, dt: float = REFERENCE_DT):
    """Spatial/temporal grids at Courant number 1 in vacuum."""
    domain = SpatialDomain(x_min, x_max, C0 * dt)
    return domain, TimeDomain(dt, int(math.ceil(t_max / dt)) + 1)
