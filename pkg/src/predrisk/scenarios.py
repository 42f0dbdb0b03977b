"""Highway test scenarios, their file format, and end-to-end risk assessment.

A scenario file is a CSV of vehicle states preceded by ``# key = value``
header lines::

    # scenario = car_following
    # lane_centers = 2, 6, 14.4, 18.4
    # lane_width = 4
    # t0 = 3
    # av_id = av
    vehicle_id,t,x,y,vx,vy,ax,ay,length,width
    av,0.0,-75.0,2.0,25.0,0.0,0.0,0.0,5.21,2.04
    ...
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FUTURE_LEN, HISTORY_LEN, STEP, make_sample, resample
from .errors import InsufficientData, InvalidParameter, MissingVehicle, ParseError
from .model import Predictor, baseline_predict
from .planning import quintic_lateral, spline_from_prediction
from .risk import RiskMap, RiskParams, risk_map
from .scene import LaneGeometry, MotionState, Track

SCENARIO_LANES = LaneGeometry((2.0, 6.0, 14.4, 18.4), lane_width=4.0)
DIMS = (5.21, 2.04)
COLUMNS = ("vehicle_id", "t", "x", "y", "vx", "vy", "ax", "ay", "length", "width")
HISTORY_SPAN = (HISTORY_LEN - 1) * STEP


@dataclass
class Scenario:
    name: str
    lanes: LaneGeometry
    t0: float
    av_id: str
    tracks: list[Track] = field(default_factory=list)

    def track(self, vehicle_id) -> Track:
        for tr in self.tracks:
            if str(tr.vehicle_id) == str(vehicle_id):
                return tr
        raise MissingVehicle(vehicle_id)

    @property
    def object_vehicles(self) -> list[Track]:
        return [tr for tr in self.tracks if str(tr.vehicle_id) != str(self.av_id)]


def _state(track: Track, t: float) -> MotionState:
    st = track.state_at(t)
    if st is None:
        raise InsufficientData(f"vehicle {track.vehicle_id!r} has no state at t0={t}")
    return st


# fixtures


def _straight(vid, x_t0, y, v, t0, t_end, dims=DIMS) -> Track:
    t = np.round(np.arange(0.0, t_end + STEP / 2, STEP), 10)
    x = x_t0 + v * (t - t0)
    z = np.zeros_like(t)
    return Track(vid, dims[0], dims[1], np.column_stack([t, x, np.full_like(t, y), np.full_like(t, v), z, z, z]))


def car_following(t0: float = 3.0, t_end: float = 8.0) -> Scenario:
    """Ego follows a slower leader in lane 1 while a faster car runs ahead in lane 2."""
    tracks = [
        _straight("av", 0.0, 2.0, 25.0, t0, t_end),
        _straight("ov1", 90.0, 2.0, 20.0, t0, t_end),
        _straight("ov2", 150.0, 6.0, 32.0, t0, t_end),
    ]
    return Scenario("car_following", SCENARIO_LANES, t0, "av", tracks)


def cut_in(t0: float = 3.0, t_end: float = 8.0) -> Scenario:
    """A car in lane 2 starts merging into the ego lane one second before t0."""
    av = _straight("av", 0.0, 2.0, 25.0, t0, t_end)
    t = av.times
    v = 22.0
    x = 30.0 + v * (t - t0)
    start, dur = t0 - 1.0, 4.0
    c = quintic_lateral(6.0, 0.0, 0.0, 2.0, dur)
    s = np.clip(t - start, 0.0, dur)
    P = np.polynomial.polynomial
    inside = (t > start) & (t < start + dur)
    y = P.polyval(s, c)
    vy = np.where(inside, P.polyval(s, P.polyder(c)), 0.0)
    ay = np.where(inside, P.polyval(s, P.polyder(c, 2)), 0.0)
    ov = Track("ov1", DIMS[0], DIMS[1],
               np.column_stack([t, x, y, np.full_like(t, v), vy, np.zeros_like(t), ay]))
    return Scenario("cut_in", SCENARIO_LANES, t0, "av", [av, ov])


def empty_road(t0: float = 3.0, t_end: float = 8.0) -> Scenario:
    return Scenario("empty_road", SCENARIO_LANES, t0, "av", [_straight("av", 0.0, 2.0, 25.0, t0, t_end)])


SCENARIOS = {"car_following": car_following, "cut_in": cut_in, "empty_road": empty_road}


# file format


def write_scenario(scenario: Scenario, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# scenario = {scenario.name}\n")
        fh.write("# lane_centers = " + ", ".join(f"{c:g}" for c in scenario.lanes.lane_centers) + "\n")
        fh.write(f"# lane_width = {scenario.lanes.lane_width:g}\n")
        fh.write(f"# t0 = {scenario.t0:g}\n")
        fh.write(f"# av_id = {scenario.av_id}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for tr in scenario.tracks:
            for row in tr.data:
                w.writerow([tr.vehicle_id] + [repr(float(v)) for v in row]
                           + [repr(tr.length), repr(tr.width)])


def read_scenario(path) -> Scenario:
    """Parse a scenario file; tracks not on the 0.2 s grid are decimated to it."""
    header, rows = {}, {}
    dims = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body_start = None
    for n, line in enumerate(lines, 1):
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if not sep:
                raise ParseError("header lines must read '# key = value'", n)
            header[key.strip()] = value.strip()
        elif line.strip():
            body_start = n
            break
    if body_start is None:
        raise ParseError("no vehicle rows")
    reader = csv.reader(lines[body_start - 1 :])
    cols = next(reader)
    if tuple(c.strip() for c in cols) != COLUMNS:
        raise ParseError(f"expected columns {','.join(COLUMNS)}", body_start)
    for n, rec in enumerate(reader, body_start + 1):
        if not rec:
            continue
        if len(rec) != len(COLUMNS):
            raise ParseError(f"expected {len(COLUMNS)} fields, got {len(rec)}", n)
        try:
            vals = [float(v) for v in rec[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), n) from exc
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", n)
        vid = rec[0].strip()
        rows.setdefault(vid, []).append(vals[:7])
        dims[vid] = (vals[7], vals[8])
    try:
        centers = tuple(float(v) for v in header["lane_centers"].split(","))
        lanes = LaneGeometry(centers, float(header.get("lane_width", 3.75)))
        t0 = float(header["t0"])
        av_id = header["av_id"]
    except KeyError as exc:
        raise ParseError(f"missing header key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}") from exc
    tracks = []
    for vid, data in rows.items():
        arr = np.array(sorted(data), dtype=float)
        tr = Track(vid, dims[vid][0], dims[vid][1], arr)
        if tr.dt is not None and abs(tr.dt - STEP) > 1e-9:
            tr = resample(tr, STEP)
        tracks.append(tr)
    return Scenario(header.get("scenario", Path(path).stem), lanes, t0, av_id, tracks)


# assessment


@dataclass
class OvAssessment:
    ov_id: str
    predicted: np.ndarray  # (25, 2) mean positions
    truth: np.ndarray | None  # (25, 2) when the file extends past t0 + 5 s


@dataclass
class Assessment:
    scenario: str
    risk_map: RiskMap
    ovs: list[OvAssessment]
    predictor: str

    def summary(self) -> dict:
        rm = self.risk_map
        end = rm.at_horizon_end()
        return {
            "scenario": self.scenario,
            "predictor": self.predictor,
            "t0": rm.t0,
            "shape": list(rm.shape),
            "max_risk": float(rm.risk.max()) if rm.risk.size else 0.0,
            "horizon_end_risk": {
                f"{y:g}": {f"{a:g}": float(end[i, j]) for i, a in enumerate(rm.a_x)}
                for j, y in enumerate(rm.targets)
            },
            "ttc": rm.header()["ttc"],
        }

    def overlay_rows(self) -> list[list]:
        """(ov_id, step, t, pred_x, pred_y, true_x, true_y) for every OV with truth."""
        out = []
        for ov in self.ovs:
            if ov.truth is None:
                continue
            for k in range(FUTURE_LEN):
                t = self.risk_map.t0 + (k + 1) * STEP
                out.append([ov.ov_id, k + 1, round(t, 10), *ov.predicted[k], *ov.truth[k]])
        return out


def assess(scenario: Scenario, predictor="cv", params: RiskParams | None = None,
           a_x_grid: Sequence[float] | None = None,
           lateral_targets: Sequence[float] | None = None) -> Assessment:
    """Predict every OV, spline the means and score the ego candidate grid.

    ``predictor`` is a :class:`Predictor` or one of the baselines ``"cv"``,
    ``"ca"``. Each OV needs 3 s of history before t0.
    """
    t0 = scenario.t0
    av = _state(scenario.track(scenario.av_id), t0)
    splines, ovs = {}, []
    for tr in scenario.object_vehicles:
        if tr.index_at(t0 - HISTORY_SPAN) is None or tr.index_at(t0) is None:
            raise InsufficientData(f"vehicle {tr.vehicle_id!r} lacks 3 s of history before t0={t0}")
        has_truth = tr.index_at(t0 + FUTURE_LEN * STEP) is not None
        others = [o for o in scenario.tracks if o is not tr]
        sample = make_sample(f"{scenario.name}:{tr.vehicle_id}", tr, others, scenario.lanes, t0,
                             future=has_truth)
        if isinstance(predictor, Predictor):
            means = predictor.predict(sample).mu
        else:
            means = baseline_predict(sample, predictor)
        state = _state(tr, t0)
        splines[str(tr.vehicle_id)] = spline_from_prediction(state, means)
        ovs.append(OvAssessment(str(tr.vehicle_id), means, sample.ov_future if has_truth else None))
    dims = {str(tr.vehicle_id): (tr.length, tr.width) for tr in scenario.object_vehicles}
    av_track = scenario.track(scenario.av_id)
    rm = risk_map(av, splines, scenario.lanes, params, a_x_grid, lateral_targets,
                  av_dims=(av_track.length, av_track.width), ov_dims=dims, scenario_id=scenario.name)
    name = "csp-gan-lstm" if isinstance(predictor, Predictor) else str(predictor)
    return Assessment(scenario.name, rm, ovs, name)
