"""Synthetic ground truth: accelerometer gait traces, movement paths and
noisy GPS fixes.

The gait model is deliberately minimal: walking puts a periodic signal on the
vertical (z) axis, so one sinusoid period is one step. Everything downstream
(step counting accuracy, payloads, track ingestion) is measured against the
known truth produced here. All randomness flows from explicit seeds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .geo import offset_by_meters

GPS_ERROR_CAP_M = 10.0   # receiver-grade bound: fixes are never worse than this
FIFO_DEPTH = 32          # accelerometer FIFO interrupt depth


class AccelSample(NamedTuple):
    """One 3-axis accelerometer reading, acceleration in units of g."""

    t_ms: float
    x_g: float
    y_g: float
    z_g: float


@dataclass(frozen=True)
class GaitProfile:
    """Parameters of the synthetic walking signal on the z axis."""

    step_frequency_hz: float = 2.0
    amplitude_g: float = 0.5
    noise_sigma_g: float = 0.05
    bias_g: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.step_frequency_hz <= 3.0:
            raise ValueError("step_frequency_hz must be in (0, 3]")
        if self.amplitude_g <= 0:
            raise ValueError("amplitude_g must be positive")
        if self.noise_sigma_g < 0:
            raise ValueError("noise_sigma_g must be non-negative")


#: Profile used by the accuracy experiment and the default scenario. The
#: 2 steps/s cadence is a normal walk and, sampled at 6 Hz, reproduces the
#: expected error band of the step counter; sigma is a calibration knob.
DEFAULT_GAIT = GaitProfile()


@dataclass
class AccelTrace:
    """A gait trace as parallel arrays, iterable as AccelSample rows."""

    t_ms: np.ndarray
    x_g: np.ndarray
    y_g: np.ndarray
    z_g: np.ndarray

    def __len__(self) -> int:
        return len(self.t_ms)

    def __iter__(self) -> Iterator[AccelSample]:
        for i in range(len(self.t_ms)):
            yield AccelSample(float(self.t_ms[i]), float(self.x_g[i]),
                              float(self.y_g[i]), float(self.z_g[i]))

    def sample(self, i: int) -> AccelSample:
        return AccelSample(float(self.t_ms[i]), float(self.x_g[i]),
                           float(self.y_g[i]), float(self.z_g[i]))

    @classmethod
    def from_samples(cls, samples: Iterable[AccelSample]) -> "AccelTrace":
        rows = list(samples)
        return cls(
            t_ms=np.array([s.t_ms for s in rows], dtype=float),
            x_g=np.array([s.x_g for s in rows], dtype=float),
            y_g=np.array([s.y_g for s in rows], dtype=float),
            z_g=np.array([s.z_g for s in rows], dtype=float),
        )


@dataclass
class FifoBatch:
    """One full accelerometer FIFO read: exactly 32 consecutive samples."""

    t_ms: np.ndarray
    x_g: np.ndarray
    y_g: np.ndarray
    z_g: np.ndarray

    def __post_init__(self) -> None:
        if len(self.z_g) != FIFO_DEPTH:
            raise ValueError(f"FIFO batch must hold exactly {FIFO_DEPTH} samples")

    @property
    def samples(self) -> tuple[AccelSample, ...]:
        return tuple(AccelSample(float(self.t_ms[i]), float(self.x_g[i]),
                                 float(self.y_g[i]), float(self.z_g[i]))
                     for i in range(FIFO_DEPTH))

    @property
    def start_ms(self) -> float:
        return float(self.t_ms[0])

    @classmethod
    def from_z(cls, z: Sequence[float], t0_ms: float = 0.0, fs_hz: float = 6.0) -> "FifoBatch":
        """Build a batch from z values alone (x, y zeroed); test convenience."""
        z_arr = np.asarray(z, dtype=float)
        t = t0_ms + np.arange(len(z_arr)) * 1000.0 / fs_hz
        zero = np.zeros_like(z_arr)
        return cls(t_ms=t, x_g=zero, y_g=zero.copy(), z_g=z_arr)


def generate_gait(profile: GaitProfile, duration_ms: float, fs_hz: float,
                  seed: int | np.random.SeedSequence) -> tuple[AccelTrace, int]:
    """Generate a gait trace and the exact number of whole steps it contains.

    z(t) = bias + amplitude * sin(2*pi*f_step*t) + N(0, sigma^2); x and y are
    independent noise around zero. Samples sit at i/fs so the spacing is
    exactly 1000/fs ms. Identical seed, identical trace.
    """
    if fs_hz <= 0:
        raise ValueError("fs_hz must be positive")
    if duration_ms <= 0:
        raise ValueError("duration_ms must be positive")
    rng = np.random.default_rng(seed)
    n = int(duration_ms * fs_hz / 1000.0)
    t_s = np.arange(n) / fs_hz
    t_ms = np.arange(n) * 1000.0 / fs_hz
    z = profile.bias_g + profile.amplitude_g * np.sin(
        2 * math.pi * profile.step_frequency_hz * t_s)
    x = np.zeros(n)
    y = np.zeros(n)
    if profile.noise_sigma_g > 0:
        z = z + rng.normal(0.0, profile.noise_sigma_g, n)
        x = rng.normal(0.0, profile.noise_sigma_g, n)
        y = rng.normal(0.0, profile.noise_sigma_g, n)
    true_steps = math.floor(profile.step_frequency_hz * duration_ms / 1000.0)
    return AccelTrace(t_ms=t_ms, x_g=x, y_g=y, z_g=z), true_steps


def fill_fifo(trace: AccelTrace | Iterable[AccelSample]) -> list[FifoBatch]:
    """Cut a trace into consecutive non-overlapping 32-sample FIFO batches.

    A trailing remainder shorter than the FIFO depth is discarded, matching a
    hardware FIFO that only interrupts when full.
    """
    if not isinstance(trace, AccelTrace):
        trace = AccelTrace.from_samples(trace)
    n_batches = len(trace) // FIFO_DEPTH
    batches = []
    for b in range(n_batches):
        lo, hi = b * FIFO_DEPTH, (b + 1) * FIFO_DEPTH
        batches.append(FifoBatch(t_ms=trace.t_ms[lo:hi], x_g=trace.x_g[lo:hi],
                                 y_g=trace.y_g[lo:hi], z_g=trace.z_g[lo:hi]))
    return batches


@dataclass(frozen=True)
class MovementPath:
    """Piecewise-linear ground-truth path: ordered (lat, lon, t_ms) waypoints."""

    waypoints: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("path needs at least one waypoint")
        times = [w[2] for w in self.waypoints]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    @property
    def t_start_ms(self) -> float:
        return self.waypoints[0][2]

    @property
    def t_end_ms(self) -> float:
        return self.waypoints[-1][2]


def position_at(path: MovementPath, t_ms: float) -> tuple[float, float]:
    """True position at a time, linearly interpolated between waypoints."""
    wps = path.waypoints
    if t_ms < wps[0][2] or t_ms > wps[-1][2]:
        raise ValueError(f"t_ms={t_ms} outside path time range "
                         f"[{wps[0][2]}, {wps[-1][2]}]")
    for (lat1, lon1, t1), (lat2, lon2, t2) in zip(wps, wps[1:]):
        if t_ms <= t2:
            frac = (t_ms - t1) / (t2 - t1)
            return lat1 + frac * (lat2 - lat1), lon1 + frac * (lon2 - lon1)
    return wps[-1][0], wps[-1][1]


@dataclass(frozen=True)
class GpsFix:
    t_ms: float
    lat_deg: float
    lon_deg: float
    valid: bool
    error_m: float


def sample_gps(true_lat: float, true_lon: float, t_ms: float = 0.0,
               error_sigma_m: float = 4.0, seed: int | np.random.Generator = 0) -> GpsFix:
    """Displace the true position by a 2-D Gaussian error truncated at 10 m.

    The radial error of an isotropic 2-D Gaussian is Rayleigh(sigma); drawing
    from the Rayleigh inverse CDF restricted to [0, cap] gives the truncated
    distribution without a rejection loop. Angle is uniform. Conversion to
    degrees uses equirectangular scaling at the true latitude.
    """
    if error_sigma_m < 0:
        raise ValueError("error_sigma_m must be non-negative")
    if error_sigma_m == 0:
        return GpsFix(t_ms=t_ms, lat_deg=true_lat, lon_deg=true_lon,
                      valid=True, error_m=0.0)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random()
    cap_mass = 1.0 - math.exp(-GPS_ERROR_CAP_M ** 2 / (2 * error_sigma_m ** 2))
    r = error_sigma_m * math.sqrt(-2.0 * math.log(1.0 - u * cap_mass))
    theta = rng.random() * 2 * math.pi
    lat, lon = offset_by_meters(true_lat, true_lon,
                                north_m=r * math.cos(theta),
                                east_m=r * math.sin(theta))
    return GpsFix(t_ms=t_ms, lat_deg=lat, lon_deg=lon, valid=True, error_m=r)


def write_trace_csv(trace: AccelTrace | Iterable[AccelSample], out: IO[str]) -> None:
    """Dump a trace as CSV with header t_ms,x_g,y_g,z_g."""
    writer = csv.writer(out)
    writer.writerow(["t_ms", "x_g", "y_g", "z_g"])
    rows = trace if isinstance(trace, AccelTrace) else iter(trace)
    for s in rows:
        writer.writerow([repr(s.t_ms), repr(s.x_g), repr(s.y_g), repr(s.z_g)])
