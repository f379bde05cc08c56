"""Breathing analysis on top of tracked marker poses.

A session projects each detected marker center onto a fixed reference
direction (captured once at start), producing a scalar displacement curve.
From that curve we estimate the breathing period, find breath-hold windows
stable enough to gate treatment, and flag sudden motion that should
interrupt it.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .detect import MarkerPose


class EmptyStreamError(ValueError):
    """Raised when fewer than two samples are available."""


class NonMonotoneTimeError(ValueError):
    """Raised when timestamps fail to increase strictly."""


class NoPeriodicityError(RuntimeError):
    """Raised when the autocorrelation shows no credible repeat."""


class BreathSignal:
    """Time series of (t_s, displacement_mm), strictly increasing in time.

    A single writer may append while readers take snapshots; reads copy the
    underlying storage so a snapshot never mutates under the caller.
    """

    def __init__(self, samples: Iterable[tuple[float, float]] = ()) -> None:
        self._times: list[float] = []
        self._values: list[float] = []
        self._lock = threading.Lock()
        for t, d in samples:
            self.append(t, d)

    def append(self, t_s: float, displacement_mm: float) -> None:
        t_s = float(t_s)
        displacement_mm = float(displacement_mm)
        if not (math.isfinite(t_s) and math.isfinite(displacement_mm)):
            raise ValueError("samples must be finite")
        with self._lock:
            if self._times and t_s <= self._times[-1]:
                raise NonMonotoneTimeError(
                    f"timestamp {t_s} not after {self._times[-1]}")
            self._times.append(t_s)
            self._values.append(displacement_mm)

    def __len__(self) -> int:
        with self._lock:
            return len(self._times)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Snapshot of (times, displacements) as fresh arrays."""
        with self._lock:
            return np.array(self._times), np.array(self._values)

    @property
    def samples(self) -> list[tuple[float, float]]:
        with self._lock:
            return list(zip(self._times, self._values))


@dataclass(frozen=True)
class GateInterval:
    """A stretch of signal flat enough to treat within."""

    start_s: float
    end_s: float
    mean_level_mm: float

    def __post_init__(self) -> None:
        if not self.end_s > self.start_s:
            raise ValueError("gate must have end > start")

    def to_json_dict(self) -> dict:
        return {"start_s": self.start_s, "end_s": self.end_s,
                "mean_level_mm": self.mean_level_mm}


@dataclass(frozen=True)
class AlarmEvent:
    t_s: float
    displacement_mm: float

    def to_json_dict(self) -> dict:
        return {"t_s": self.t_s, "displacement_mm": self.displacement_mm}


def extract_signal(poses: Sequence[MarkerPose],
                   reference_normal: np.ndarray) -> BreathSignal:
    """Project marker centers onto a fixed direction, relative to the first.

    The reference direction is normalised here, so any non-zero vector works.
    """
    if len(poses) < 2:
        raise EmptyStreamError("need at least two poses")
    normal = np.asarray(reference_normal, dtype=float).reshape(3)
    norm = float(np.linalg.norm(normal))
    if norm == 0.0 or not np.all(np.isfinite(normal)):
        raise ValueError("reference_normal must be a non-zero finite vector")
    normal = normal / norm

    origin = poses[0].center.as_array()
    signal = BreathSignal()
    for pose in poses:
        disp = float((pose.center.as_array() - origin) @ normal)
        signal.append(pose.timestamp_s, disp)
    return signal


def estimate_period(signal: BreathSignal) -> float:
    """Dominant repeat time of the signal, in seconds.

    Autocorrelation of the mean-removed curve, normalised per lag by the
    energy of the two overlapping segments so the estimate stays near 1
    for a clean repeat no matter how short the record is.  (A plain
    normalisation shrinks linearly with overlap, which would drag the
    repeat peak of a two-period record to exactly the quality threshold.)
    The first positive-correlation region past the central lobe must peak
    at 0.5 or better; a parabola through the three surrounding lags then
    refines the answer below the sample spacing.  Assumes roughly uniform
    sampling.
    """
    times, values = signal.arrays()
    if len(times) < 4:
        raise EmptyStreamError("signal too short for period estimation")
    dt = float(np.mean(np.diff(times)))
    x = values - values.mean()
    power = float(x @ x)
    if power <= 0.0:
        raise NoPeriodicityError("signal is constant")

    n = len(x)
    raw = np.correlate(x, x, mode="full")[n - 1:]
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    lags = np.arange(n)
    head_energy = csum[n - lags]          # first n-k samples
    tail_energy = csum[n] - csum[lags]    # last n-k samples
    min_overlap = max(4, n // 8)
    usable = (n - lags) >= min_overlap
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(usable & (head_energy > 0.0) & (tail_energy > 0.0),
                       raw / np.sqrt(head_energy * tail_energy), -np.inf)

    # Step past the central lobe: first usable lag with negative correlation.
    below = np.nonzero(usable & (rho < 0.0))[0]
    if len(below) == 0:
        raise NoPeriodicityError("autocorrelation never leaves the main lobe")
    start = int(below[0])
    positive = np.nonzero(rho[start:] > 0.0)[0]
    if len(positive) == 0:
        raise NoPeriodicityError("no repeat structure past the main lobe")
    first = start + int(positive[0])
    closing = np.nonzero(rho[first:] < 0.0)[0]
    last = first + (int(closing[0]) if len(closing) else int(np.sum(usable)) - first)

    # The repeat estimate is the best lag within that first region; later
    # regions sit at period multiples and must not win ties.
    k = first + int(np.argmax(rho[first:last]))
    if rho[k] < 0.5:
        raise NoPeriodicityError(
            f"best repeat correlation {rho[k]:.3f} below 0.5")

    # Parabolic refinement around the peak.
    if 1 <= k < n - 1 and np.isfinite(rho[k - 1]) and np.isfinite(rho[k + 1]):
        y0, y1, y2 = rho[k - 1], rho[k], rho[k + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = 0.0 if denom == 0.0 else 0.5 * (y0 - y2) / denom
        shift = float(np.clip(shift, -0.5, 0.5))
    else:
        shift = 0.0
    return (k + shift) * dt


def detect_breath_hold(signal: BreathSignal, amplitude_tol_mm: float,
                       min_duration_s: float) -> list[GateInterval]:
    """Maximal intervals where every sliding window of the signal is flat.

    A window spans min_duration_s; it is flat when no sample strays more
    than amplitude_tol_mm from the window mean.  Overlapping flat windows
    merge into one gate.
    """
    if amplitude_tol_mm <= 0.0:
        raise ValueError("amplitude_tol_mm must be positive")
    if min_duration_s <= 0.0:
        raise ValueError("min_duration_s must be positive")
    times, values = signal.arrays()
    n = len(times)

    flat_spans: list[tuple[float, float]] = []
    j = 0
    for i in range(n):
        if j < i:
            j = i
        while j < n and times[j] - times[i] < min_duration_s:
            j += 1
        if j >= n:
            break
        window = values[i:j + 1]
        if np.max(np.abs(window - window.mean())) <= amplitude_tol_mm:
            flat_spans.append((float(times[i]), float(times[j])))

    gates: list[GateInterval] = []
    for start, end in flat_spans:
        if gates and start <= gates[-1].end_s:
            start = gates[-1].start_s
            end = max(end, gates[-1].end_s)
            gates.pop()
        sel = (times >= start) & (times <= end)
        gates.append(GateInterval(start, end, float(values[sel].mean())))
    return gates


def motion_alarm(signal: BreathSignal, threshold_mm: float,
                 baseline_window_s: float = 2.0) -> list[AlarmEvent]:
    """Flag sudden departures from the recent baseline.

    The baseline at each sample is the median displacement over the
    preceding baseline_window_s.  An alarm fires on the first sample whose
    deviation from baseline exceeds the threshold, then stays quiet until
    the signal comes back within the threshold.
    """
    if threshold_mm <= 0.0:
        raise ValueError("threshold_mm must be positive")
    times, values = signal.arrays()
    events: list[AlarmEvent] = []
    armed = True
    lo = 0
    for i in range(len(times)):
        while times[lo] < times[i] - baseline_window_s:
            lo += 1
        prior = values[lo:i]
        baseline = float(np.median(prior)) if len(prior) else float(values[i])
        deviation = abs(float(values[i]) - baseline)
        if armed and deviation > threshold_mm:
            events.append(AlarmEvent(float(times[i]), float(values[i])))
            armed = False
        elif not armed and deviation <= threshold_mm:
            armed = True
    return events


def write_signal_csv(path, signal: BreathSignal) -> None:
    times, values = signal.arrays()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "displacement_mm"])
        for t, d in zip(times, values):
            writer.writerow([f"{t:.6f}", f"{d:.6f}"])


def read_signal_csv(path) -> BreathSignal:
    signal = BreathSignal()
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t_s", "displacement_mm"]:
            raise ValueError(f"unexpected CSV header: {header!r}")
        for row in reader:
            if row:
                signal.append(float(row[0]), float(row[1]))
    return signal
