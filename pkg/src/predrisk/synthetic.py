"""Synthetic highway traffic for tests, demos and the overfit check."""
from __future__ import annotations

import numpy as np

from .data import STEP, RawRecording, Sample, extract_windows, make_sample
from .planning import quintic_lateral
from .scene import LaneGeometry, Track

SYNTHETIC_LANES = LaneGeometry((2.0, 6.0, 10.0), lane_width=4.0)
DIMS = (5.21, 2.04)


def _lane_change(t, t_start, duration, y_from, y_to):
    """Quintic lateral manoeuvre between two lane centres: (y, vy, ay)."""
    c = quintic_lateral(y_from, 0.0, 0.0, y_to, duration)
    s = np.clip(t - t_start, 0.0, duration)
    y = np.polynomial.polynomial.polyval(s, c)
    inside = (t > t_start) & (t < t_start + duration)
    vy = np.where(inside, np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(c)), 0.0)
    ay = np.where(inside, np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(c, 2)), 0.0)
    return y, vy, ay


def synthetic_recording(n_vehicles: int = 12, duration: float = 20.0, seed: int = 0,
                        lanes: LaneGeometry = SYNTHETIC_LANES, lane_change_prob: float = 0.3,
                        dt: float = STEP) -> RawRecording:
    """Vehicles on a straight multi-lane road with smooth speed variation.

    Vehicles are spread over the lanes at 25-45 m gaps. Each one cruises at
    20-30 m/s with a slow sinusoidal speed change; some change lanes once.
    """
    rng = np.random.default_rng(seed)
    t = np.round(np.arange(0.0, duration + dt / 2, dt), 10)
    centers = lanes.lane_centers
    heads = [0.0] * len(centers)
    tracks = []
    for vid in range(1, n_vehicles + 1):
        lane = int(rng.integers(len(centers)))
        x0 = heads[lane]
        heads[lane] += float(rng.uniform(25.0, 45.0))
        v0 = float(rng.uniform(20.0, 30.0))
        amp = float(rng.uniform(0.0, 1.5))
        omega = float(rng.uniform(0.15, 0.5))
        phase = float(rng.uniform(0.0, 2 * np.pi))
        vx = v0 + amp * np.sin(omega * t + phase)
        ax = amp * omega * np.cos(omega * t + phase)
        x = x0 + v0 * t - (amp / omega) * (np.cos(omega * t + phase) - np.cos(phase))
        y = np.full_like(t, centers[lane])
        vy = np.zeros_like(t)
        ay = np.zeros_like(t)
        if rng.random() < lane_change_prob:
            target = lane + (1 if lane == 0 else -1 if lane == len(centers) - 1 else int(rng.choice([-1, 1])))
            y, vy, ay = _lane_change(t, float(rng.uniform(2.0, duration - 6.0)),
                                     float(rng.uniform(3.0, 5.0)), centers[lane], centers[target])
        data = np.column_stack([t, x, y, vx, vy, ax, ay])
        tracks.append(Track(vid, DIMS[0], DIMS[1], data))
    return RawRecording("synthetic", tracks, native_rate=int(round(1 / dt)), lanes={1: lanes})


def interaction_samples(n: int = 32, seed: int = 0, n_vehicles: int = 12,
                        duration: float = 20.0) -> list[Sample]:
    """The first ``n`` windows cut from :func:`synthetic_recording`."""
    samples = extract_windows(synthetic_recording(n_vehicles, duration, seed))
    if len(samples) < n:
        raise ValueError(f"only {len(samples)} synthetic samples available, asked for {n}")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(samples), size=n, replace=False))
    return [samples[k] for k in pick]


def kinematic_track(vehicle_id=1, x0: float = 0.0, y0: float = 2.0, v=(25.0, 0.0), a=(0.0, 0.0),
                    t_end: float = 8.0, dt: float = STEP) -> Track:
    """Exact constant-acceleration motion sampled every ``dt``."""
    t = np.round(np.arange(0.0, t_end + dt / 2, dt), 10)
    x = x0 + v[0] * t + 0.5 * a[0] * t**2
    y = y0 + v[1] * t + 0.5 * a[1] * t**2
    data = np.column_stack([t, x, y, v[0] + a[0] * t, v[1] + a[1] * t,
                            np.full_like(t, a[0]), np.full_like(t, a[1])])
    return Track(vehicle_id, DIMS[0], DIMS[1], data)


def kinematic_sample(v=(25.0, 0.0), a=(0.0, 0.0), x0: float = 0.0, y0: float = 2.0,
                     t0: float = 3.0) -> Sample:
    """Lone-vehicle sample whose future follows constant acceleration exactly."""
    tr = kinematic_track(1, x0, y0, v, a, t_end=t0 + 5.0)
    return make_sample(f"kinematic:{t0:.1f}", tr, [], SYNTHETIC_LANES, t0)
