"""Collision metrics between ego candidates and object vehicles, and the fused risk map.

Box tests follow the separating-axis theorem: two oriented rectangles are
disjoint iff their projections are disjoint on one of the four edge
normals. All metrics are evaluated on a uniform grid of times since t0.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import GridError, InvalidAxis, InvalidParameter
from .model import GaussianTrajectory
from .planning import (
    HORIZON,
    CandidateTrajectory,
    SplineTrajectory,
    candidates,
    default_ax_grid,
    sample_poses,
    spline_from_prediction,
)
from .scene import LaneGeometry, MotionState, Obb

VEHICLE_DIMS = (5.21, 2.04)
ROAD_AXES = ((1.0, 0.0), (0.0, 1.0))


@dataclass(frozen=True)
class RiskParams:
    sigma1: float = 2.04
    sigma2: float = 2.04
    sigma3: float = 45.0
    sigma4: float = 1.6
    w_ttc: float = 0.6
    w_mdm: float = 0.4
    check_step: float = 0.05
    squared_ttc: bool = False

    def __post_init__(self):
        if min(self.sigma1, self.sigma2, self.sigma3, self.sigma4) <= 0:
            raise InvalidParameter("risk sigmas must be positive")
        if self.w_ttc < 0 or self.w_mdm < 0 or abs(self.w_ttc + self.w_mdm - 1.0) > 1e-12:
            raise InvalidParameter("w_ttc and w_mdm must be non-negative and sum to 1")
        if not self.check_step > 0:
            raise InvalidParameter("check_step must be positive")

    def time_grid(self, tf: float = HORIZON) -> np.ndarray:
        n = int(round(tf / self.check_step))
        if n <= 0 or abs(n * self.check_step - tf) > 1e-9:
            raise InvalidParameter(f"check_step {self.check_step} does not divide tf {tf}")
        return np.round(np.linspace(0.0, tf, n + 1), 12)


# box geometry


def _extent(half_l, half_w, ex, ey, axis):
    """Half-length of a box's projection onto ``axis`` (broadcasting)."""
    return half_l * np.abs(np.sum(ex * axis, -1)) + half_w * np.abs(np.sum(ey * axis, -1))


def _frames(heading):
    c, s = np.cos(heading), np.sin(heading)
    return np.stack([c, s], -1), np.stack([-s, c], -1)


def projection_gaps(ca, ha, dims_a, cb, hb, dims_b, axes) -> np.ndarray:
    """Signed projection gaps ``|T·L| - r_a - r_b`` for boxes over time.

    ``ca``, ``cb`` are ``(N, 2)`` centres and ``ha``, ``hb`` ``(N,)``
    headings; ``axes`` is ``(N, K, 2)`` or ``(K, 2)``. Returns ``(N, K)``.
    """
    ca, cb = np.atleast_2d(ca), np.atleast_2d(cb)
    axes = np.asarray(axes, float)
    if axes.ndim == 2:
        axes = np.broadcast_to(axes, (ca.shape[0],) + axes.shape)
    exa, eya = _frames(np.asarray(ha, float))
    exb, eyb = _frames(np.asarray(hb, float))
    T = (cb - ca)[:, None, :]
    ra = _extent(0.5 * dims_a[0], 0.5 * dims_a[1], exa[:, None], eya[:, None], axes)
    rb = _extent(0.5 * dims_b[0], 0.5 * dims_b[1], exb[:, None], eyb[:, None], axes)
    return np.abs(np.sum(T * axes, -1)) - ra - rb


def _edge_axes(ha, hb) -> np.ndarray:
    exa, eya = _frames(np.asarray(ha, float))
    exb, eyb = _frames(np.asarray(hb, float))
    return np.stack([exa, eya, exb, eyb], -2)


def _box_args(a: Obb):
    return np.asarray(a.center, float), a.heading, (2 * a.half_length, 2 * a.half_width)


def _pair_gaps(a: Obb, b: Obb, axes) -> np.ndarray:
    ca, ha, da = _box_args(a)
    cb, hb, db = _box_args(b)
    return projection_gaps(ca, [ha], da, cb, [hb], db, axes)[0]


def sat_overlap(a: Obb, b: Obb) -> bool:
    """True unless some edge axis separates the boxes (touching counts as overlap)."""
    gaps = _pair_gaps(a, b, _edge_axes([a.heading], [b.heading])[0])
    return bool(np.all(gaps <= 0.0))


def distance_margin(a: Obb, b: Obb, axis) -> float:
    """Projection gap along a unit ``axis``, clamped at zero."""
    L = np.asarray(axis, float)
    if L.shape != (2,) or not abs(math.hypot(*L) - 1.0) <= 1e-9:
        raise InvalidAxis(f"axis must be a unit 2-vector, got {axis}")
    return float(max(0.0, _pair_gaps(a, b, L[None])[0]))


def mdm(a: Obb, b: Obb, road_axes=ROAD_AXES) -> tuple[float, float, float]:
    """(min margin over the four edge axes, margin along road x, margin along road y)."""
    edge = np.maximum(_pair_gaps(a, b, _edge_axes([a.heading], [b.heading])[0]), 0.0)
    road = np.maximum(_pair_gaps(a, b, np.asarray(road_axes, float)), 0.0)
    return float(edge.min()), float(road[0]), float(road[1])


# time-continuous metrics


@dataclass(frozen=True)
class PairMetrics:
    times: np.ndarray
    overlap: np.ndarray
    mdm: np.ndarray
    mdm_x: np.ndarray
    mdm_y: np.ndarray


def pair_metrics(av, ov, av_dims=VEHICLE_DIMS, ov_dims=VEHICLE_DIMS, params: RiskParams | None = None,
                 road_axes=ROAD_AXES) -> PairMetrics:
    """Overlap flags and distance margins of the two trajectories on the check grid."""
    params = params or RiskParams()
    tf = av.tf
    if abs(av.t0 - ov.t0) > 1e-9 or ov.tf < tf - 1e-9:
        raise GridError("the OV trajectory must cover the ego horizon from the same t0")
    tau = params.time_grid(tf)
    pa, pb = sample_poses(av, tau), sample_poses(ov, tau)
    edge = projection_gaps(pa[:, :2], pa[:, 2], av_dims, pb[:, :2], pb[:, 2], ov_dims,
                           _edge_axes(pa[:, 2], pb[:, 2]))
    road = projection_gaps(pa[:, :2], pa[:, 2], av_dims, pb[:, :2], pb[:, 2], ov_dims,
                           np.asarray(road_axes, float))
    overlap = np.all(edge <= 0.0, axis=1)
    edge, road = np.maximum(edge, 0.0), np.maximum(road, 0.0)
    return PairMetrics(tau, overlap, edge.min(axis=1), road[:, 0], road[:, 1])


def ttc_from_overlap(times: np.ndarray, overlap: np.ndarray) -> float:
    hit = np.flatnonzero(overlap)
    return float(times[hit[0]]) if hit.size else float(times[-1])


def ttc(av, ov, av_dims=VEHICLE_DIMS, ov_dims=VEHICLE_DIMS, params: RiskParams | None = None) -> float:
    """Earliest grid time (since t0) at which the boxes overlap, else the horizon."""
    m = pair_metrics(av, ov, av_dims, ov_dims, params)
    return ttc_from_overlap(m.times, m.overlap)


def risk_value(ttc_s, tau, mdm_x, mdm_y, params: RiskParams | None = None):
    """Fused temporal and spatial risk; broadcasts over array inputs."""
    p = params or RiskParams()
    ttc_s, tau = np.asarray(ttc_s, float), np.asarray(tau, float)
    mdm_x, mdm_y = np.asarray(mdm_x, float), np.asarray(mdm_y, float)
    lead = ttc_s**2 if p.squared_ttc else ttc_s
    temporal = np.exp(-lead / (2 * p.sigma1**2)) * np.exp(-((tau - ttc_s) ** 2) / (2 * p.sigma2**2))
    spatial = np.exp(-(mdm_x**2) / (2 * p.sigma3**2)) * np.exp(-(mdm_y**2) / (2 * p.sigma4**2))
    out = p.w_ttc * temporal + p.w_mdm * spatial
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RiskProfile:
    ov_id: object
    ttc: float
    times: np.ndarray
    risk: np.ndarray
    mdm_x: np.ndarray
    mdm_y: np.ndarray


def pair_risk(av, ov, av_dims=VEHICLE_DIMS, ov_dims=VEHICLE_DIMS, params: RiskParams | None = None,
              ov_id=None) -> RiskProfile:
    params = params or RiskParams()
    m = pair_metrics(av, ov, av_dims, ov_dims, params)
    t_c = ttc_from_overlap(m.times, m.overlap)
    risk = np.clip(risk_value(t_c, m.times, m.mdm_x, m.mdm_y, params), 0.0, 1.0)
    return RiskProfile(ov_id, t_c, m.times, risk, m.mdm_x, m.mdm_y)


def aggregate_risk(profiles: Sequence[RiskProfile], times=None) -> np.ndarray:
    """Probabilistic union ``1 - Π(1 - r_i)`` per time step.

    With no profiles, ``times`` fixes the grid and the result is all zero.
    """
    if not profiles:
        if times is None:
            raise GridError("need a time grid when there are no profiles")
        return np.zeros(len(times))
    grid = profiles[0].times if times is None else np.asarray(times, float)
    keep = np.ones(len(grid))
    for p in profiles:
        if p.times.shape != grid.shape or not np.allclose(p.times, grid, rtol=0, atol=1e-12):
            raise GridError(f"profile for {p.ov_id!r} is on a different time grid")
        keep = keep * (1.0 - p.risk)
    return 1.0 - keep


# risk map


@dataclass
class RiskMap:
    a_x: np.ndarray
    targets: np.ndarray
    times: np.ndarray
    risk: np.ndarray  # (len(a_x), len(targets), len(times))
    t0: float
    params: RiskParams
    ov_ids: list = field(default_factory=list)
    ttc: np.ndarray | None = None  # (len(a_x), len(targets), len(ov_ids))
    scenario_id: str = ""

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.risk.shape

    def at_horizon_end(self) -> np.ndarray:
        return self.risk[..., -1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a_x", "lateral_target", "t", "risk"])
        for i, a in enumerate(self.a_x):
            for j, y in enumerate(self.targets):
                for k, t in enumerate(self.times):
                    w.writerow([f"{a:g}", f"{y:g}", f"{t:.2f}", repr(float(self.risk[i, j, k]))])
        return buf.getvalue()

    def header(self) -> dict:
        ttc = {}
        if self.ttc is not None:
            for n, ov in enumerate(self.ov_ids):
                ttc[str(ov)] = [[float(v) for v in row] for row in self.ttc[..., n]]
        return {
            "scenario_id": self.scenario_id,
            "t0": self.t0,
            "params": asdict(self.params),
            "a_x": [float(a) for a in self.a_x],
            "lateral_targets": [float(y) for y in self.targets],
            "n_times": len(self.times),
            "ov_ids": [str(o) for o in self.ov_ids],
            "ttc": ttc,
        }

    def header_json(self) -> str:
        return json.dumps(self.header(), sort_keys=True, indent=1) + "\n"


def ov_spline(prediction, state: MotionState | None = None) -> SplineTrajectory:
    """Object-vehicle trajectory from a spline or from a predicted mean sequence."""
    if isinstance(prediction, SplineTrajectory):
        return prediction
    if isinstance(prediction, GaussianTrajectory):
        if state is None:
            raise InvalidParameter("a Gaussian prediction needs the OV's current state")
        return spline_from_prediction(state, prediction.mu, prediction.dt)
    raise InvalidParameter(f"unsupported OV prediction {type(prediction).__name__}")


def risk_map(
    av: MotionState,
    ovs: Mapping[object, object],
    lanes: LaneGeometry | None = None,
    params: RiskParams | None = None,
    a_x_grid: Sequence[float] | None = None,
    lateral_targets: Sequence[float] | None = None,
    tf: float = HORIZON,
    av_dims=VEHICLE_DIMS,
    ov_dims: Mapping[object, tuple[float, float]] | None = None,
    ov_states: Mapping[object, MotionState] | None = None,
    scenario_id: str = "",
) -> RiskMap:
    """Aggregated risk over every (a_x, lateral target) ego candidate.

    ``ovs`` maps OV ids to a :class:`SplineTrajectory` or to a
    :class:`GaussianTrajectory` (then ``ov_states`` supplies the current
    state so the mean path can be splined from it).
    """
    params = params or RiskParams()
    grid = default_ax_grid() if a_x_grid is None else np.asarray(a_x_grid, float)
    cands = candidates(av, grid, lateral_targets, tf, lanes)
    targets = sorted({c.y_target for c in cands}, key=[c.y_target for c in cands].index)
    splines = {k: ov_spline(v, (ov_states or {}).get(k)) for k, v in ovs.items()}
    dims = dict(ov_dims or {})
    times = params.time_grid(tf)
    ids = list(splines)
    risk = np.zeros((len(grid), len(targets), len(times)))
    ttcs = np.full((len(grid), len(targets), len(ids)), float(tf))
    for n, cand in enumerate(cands):
        i, j = divmod(n, len(targets))
        profiles = [
            pair_risk(cand, splines[k], av_dims, dims.get(k, VEHICLE_DIMS), params, k) for k in ids
        ]
        risk[i, j] = aggregate_risk(profiles, times)
        ttcs[i, j] = [p.ttc for p in profiles]
    return RiskMap(grid, np.array(targets), times, risk, av.t, params, ids, ttcs, scenario_id)
