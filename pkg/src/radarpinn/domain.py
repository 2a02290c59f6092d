"""Physical constants, grids and permittivity profiles shared by every module."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when a value falls outside the physical or spatial domain."""


@dataclass(frozen=True)
class PhysicalConstants:
    eps0: float = 8.854e-12
    mu0: float = 4.0 * math.pi * 1e-7

    @property
    def c0(self) -> float:
        return 1.0 / math.sqrt(self.mu0 * self.eps0)


CONSTANTS = PhysicalConstants()
EPS0 = CONSTANTS.eps0
MU0 = CONSTANTS.mu0
C0 = CONSTANTS.c0


@dataclass(frozen=True)
class SpatialDomain:
    x_min: float
    x_max: float
    dx: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise DomainError(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")
        if not self.dx > 0:
            raise DomainError(f"dx must be positive, got {self.dx}")

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.dx)) + 1

    @property
    def grid(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx)

    def contains(self, x) -> np.ndarray | bool:
        return (np.asarray(x) >= self.x_min) & (np.asarray(x) <= self.x_max)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "dx": self.dx}


@dataclass(frozen=True)
class TimeDomain:
    dt: float
    nt: int

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.nt < 1:
            raise DomainError(f"nt must be at least 1, got {self.nt}")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "nt": self.nt}


@dataclass(frozen=True)
class LayeredProfile:
    """Piecewise-constant relative permittivity over ``[x_min, x_max]``.

    ``boundaries`` holds the L-1 interior interfaces of an L-layer medium.
    A point sitting exactly on an interface belongs to the layer on its right.
    """

    boundaries: tuple[float, ...]
    eps_r: tuple[float, ...]
    x_min: float
    x_max: float
    floor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(float(b) for b in self.boundaries))
        object.__setattr__(self, "eps_r", tuple(float(e) for e in self.eps_r))
        if len(self.eps_r) != len(self.boundaries) + 1:
            raise DomainError(
                f"{len(self.eps_r)} layers need {len(self.eps_r) - 1} boundaries, "
                f"got {len(self.boundaries)}"
            )
        if not self.x_max > self.x_min:
            raise DomainError("profile extent is empty")
        edges = (self.x_min, *self.boundaries, self.x_max)
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise DomainError(
                f"boundaries {self.boundaries} must increase strictly inside "
                f"({self.x_min}, {self.x_max})"
            )
        if any(not (e >= self.floor and e > 0) or not math.isfinite(e) for e in self.eps_r):
            raise DomainError(
                f"layer permittivities must be finite and >= {self.floor}, got {self.eps_r}"
            )

    @property
    def n_layers(self) -> int:
        return len(self.eps_r)

    def layer_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any((x < self.x_min) | (x > self.x_max)) or np.any(np.isnan(x)):
            raise DomainError(f"x outside profile extent [{self.x_min}, {self.x_max}]")
        return np.searchsorted(np.asarray(self.boundaries), x, side="right")

    def to_dict(self) -> dict:
        out = {
            "boundaries": list(self.boundaries),
            "eps_r": list(self.eps_r),
            "x_min": self.x_min,
            "x_max": self.x_max,
        }
        if self.floor != 1.0:
            out["floor"] = self.floor
        return out


@dataclass(frozen=True)
class SampledProfile:
    xs: np.ndarray = field(repr=False)
    eps_r: np.ndarray = field(repr=False)

    def __post_init__(self):
        xs = np.array(self.xs, dtype=float)
        eps = np.array(self.eps_r, dtype=float)
        if xs.shape != eps.shape or xs.ndim != 1:
            raise DomainError("xs and eps_r must be 1-D arrays of equal length")
        if not np.all(eps > 0):
            raise DomainError("sampled permittivity must be strictly positive")
        xs.flags.writeable = False
        eps.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "eps_r", eps)

    def to_dict(self) -> dict:
        return {"xs": self.xs.tolist(), "eps_r": self.eps_r.tolist()}

    def __eq__(self, other):
        if not isinstance(other, SampledProfile):
            return NotImplemented
        return np.array_equal(self.xs, other.xs) and np.array_equal(self.eps_r, other.eps_r)

    __hash__ = None


def eval_layered(profile: LayeredProfile, x):
    """Relative permittivity at ``x`` (scalar or array)."""
    idx = profile.layer_index(x)
    values = np.asarray(profile.eps_r)[idx]
    return float(values) if values.ndim == 0 else values


def wave_speed(eps_r):
    """Phase velocity ``c0 / sqrt(eps_r)`` in m/s for a non-magnetic, lossless medium."""
    eps = np.asarray(eps_r, dtype=float)
    if np.any(~(eps > 0)):
        raise DomainError(f"eps_r must be positive, got {eps_r}")
    v = C0 / np.sqrt(eps)
    return float(v) if v.ndim == 0 else v


def to_sampled(profile: LayeredProfile, xs: Sequence[float]) -> SampledProfile:
    return SampledProfile(np.asarray(xs, dtype=float), eval_layered(profile, np.asarray(xs, dtype=float)))


def to_layered(
    sampled: SampledProfile, boundaries: Sequence[float], x_min: float, x_max: float
) -> LayeredProfile:
    """Collapse samples onto known layers, taking the most frequent value per layer."""
    skeleton = LayeredProfile(tuple(boundaries), (1.0,) * (len(boundaries) + 1), x_min, x_max)
    idx = skeleton.layer_index(sampled.xs)
    eps = []
    for layer in range(skeleton.n_layers):
        vals = sampled.eps_r[idx == layer]
        if vals.size == 0:
            raise DomainError(f"no samples fall inside layer {layer}")
        uniq, counts = np.unique(vals, return_counts=True)
        eps.append(float(uniq[np.argmax(counts)]))
    return LayeredProfile(tuple(boundaries), tuple(eps), x_min, x_max)


def profile_from_dict(data: dict[str, Any]) -> LayeredProfile | SampledProfile:
    if "xs" in data:
        return SampledProfile(np.asarray(data["xs"], float), np.asarray(data["eps_r"], float))
    try:
        return LayeredProfile(
            tuple(data["boundaries"]),
            tuple(data["eps_r"]),
            data["x_min"],
            data["x_max"],
            data.get("floor", 1.0),
        )
    except KeyError as exc:
        raise DomainError(f"profile object missing key {exc}") from None


def dump_profile(profile: LayeredProfile | SampledProfile) -> str:
    return json.dumps(profile.to_dict())


def load_profile(text: str) -> LayeredProfile | SampledProfile:
    return profile_from_dict(json.loads(text))
