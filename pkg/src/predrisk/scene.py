"""Vehicles, lanes, the 4x3 local traffic context and oriented boxes.

Coordinates are road-aligned: ``x`` runs along the direction of travel and
``y`` is the lateral offset. Lane "left" means toward decreasing lane index
(the first entry of ``LaneGeometry.lane_centers``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidParameter, InvalidPose, MissingVehicle

STATE_FIELDS = ("t", "x", "y", "vx", "vy", "ax", "ay")

ROWS = ("front_front", "front", "alongside", "behind")
COLUMNS = ("left", "center", "right")
OV_CELL = (2, 1)
# 11 SV slots in row-major order, skipping the OV cell
SV_SLOTS = tuple((r, c) for r in range(4) for c in range(3) if (r, c) != OV_CELL)

MIN_HEADING_SPEED = 0.1


def slot_name(cell: tuple[int, int]) -> str:
    r, c = cell
    return f"{COLUMNS[c]}_{ROWS[r]}"


@dataclass(frozen=True)
class MotionState:
    t: float
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0

    def __post_init__(self):
        for name in STATE_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameter(f"MotionState.{name} is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in STATE_FIELDS])


class Track:
    """A vehicle's state history at a uniform time step.

    States are held as an ``(N, 7)`` read-only array with columns
    ``t, x, y, vx, vy, ax, ay``; ``states`` materialises them as
    :class:`MotionState` objects on demand.
    """

    __slots__ = ("vehicle_id", "length", "width", "direction", "_data")

    def __init__(self, vehicle_id, length: float, width: float, data, direction: int = 1):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[1] != 7:
            raise InvalidParameter(f"track data must be (N, 7), got {arr.shape}")
        if not (length > 0 and width > 0):
            raise InvalidParameter("track length and width must be positive")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameter(f"track {vehicle_id} has non-finite states")
        if len(arr) > 1:
            steps = np.diff(arr[:, 0])
            if np.any(steps <= 0) or np.ptp(steps) > 2e-9:
                raise InvalidParameter(f"track {vehicle_id} is not uniformly sampled")
        arr.setflags(write=False)
        self.vehicle_id = vehicle_id
        self.length = float(length)
        self.width = float(width)
        self.direction = int(direction)
        self._data = arr

    @classmethod
    def from_states(cls, vehicle_id, length, width, states: Iterable[MotionState], direction=1):
        rows = [s.as_array() for s in states]
        return cls(vehicle_id, length, width, np.array(rows).reshape(-1, 7), direction)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def states(self) -> tuple[MotionState, ...]:
        return tuple(MotionState(*row) for row in self._data)

    @property
    def times(self) -> np.ndarray:
        return self._data[:, 0]

    @property
    def dt(self) -> float | None:
        if len(self._data) < 2:
            return None
        return float((self._data[-1, 0] - self._data[0, 0]) / (len(self._data) - 1))

    @property
    def t_start(self) -> float:
        return float(self._data[0, 0])

    @property
    def t_end(self) -> float:
        return float(self._data[-1, 0])

    def __len__(self):
        return len(self._data)

    def index_at(self, t: float, tol: float = 1e-6) -> int | None:
        """Index of the state at time ``t``, or None when not sampled."""
        if len(self._data) == 0:
            return None
        dt = self.dt
        if dt is None:
            return 0 if abs(self._data[0, 0] - t) <= tol else None
        k = int(round((t - self._data[0, 0]) / dt))
        if 0 <= k < len(self._data) and abs(self._data[k, 0] - t) <= tol:
            return k
        return None

    def state_at(self, t: float) -> MotionState | None:
        k = self.index_at(t)
        return None if k is None else MotionState(*self._data[k])

    def with_data(self, data) -> "Track":
        return Track(self.vehicle_id, self.length, self.width, data, self.direction)

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (
            self.vehicle_id == other.vehicle_id
            and self.length == other.length
            and self.width == other.width
            and self.direction == other.direction
            and np.array_equal(self._data, other._data)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Track(id={self.vehicle_id!r}, n={len(self)}, "
            f"t=[{self.t_start:.2f}, {self.t_end:.2f}])"
        )


@dataclass(frozen=True)
class LaneGeometry:
    lane_centers: tuple[float, ...]
    lane_width: float = 3.75
    longitudinal_axis: tuple[float, float] = (1.0, 0.0)
    lateral_axis: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        centers = tuple(float(c) for c in self.lane_centers)
        object.__setattr__(self, "lane_centers", centers)
        d = np.diff(centers)
        if len(centers) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise InvalidParameter("lane_centers must be strictly monotone")
        if not self.lane_width > 0:
            raise InvalidParameter("lane_width must be positive")
        ex = np.asarray(self.longitudinal_axis, float)
        ey = np.asarray(self.lateral_axis, float)
        if (
            abs(np.linalg.norm(ex) - 1) > 1e-9
            or abs(np.linalg.norm(ey) - 1) > 1e-9
            or abs(ex @ ey) > 1e-9
        ):
            raise InvalidParameter("lane axes must be orthonormal")

    def lane_index(self, y: float) -> int | None:
        """Index of the lane containing lateral position ``y``, None if off-map."""
        if not self.lane_centers:
            return None
        centers = np.asarray(self.lane_centers)
        k = int(np.argmin(np.abs(centers - y)))
        if abs(centers[k] - y) <= 0.5 * self.lane_width + 1e-9:
            return k
        return None


@dataclass(frozen=True)
class ContextGrid:
    """Occupancy of the 4x3 neighbourhood around one object vehicle.

    ``cells[r][c]`` holds a vehicle id or None; row order is
    front-front, front, alongside, behind and column order left, center,
    right. The object vehicle always sits at ``OV_CELL``.
    """

    cells: tuple[tuple[object, ...], ...]
    t: float = 0.0
    tracks: Mapping[object, Track] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(self.cells) != 4 or any(len(row) != 3 for row in self.cells):
            raise InvalidParameter("context grid must be 4 x 3")
        if self.cells[OV_CELL[0]][OV_CELL[1]] is None:
            raise InvalidParameter("the OV cell must be occupied")
        ids = [v for row in self.cells for v in row if v is not None]
        if len(ids) != len(set(ids)):
            raise InvalidParameter("a vehicle occupies more than one cell")

    @property
    def ov_id(self):
        return self.cells[OV_CELL[0]][OV_CELL[1]]

    def occupant(self, cell: tuple[int, int]):
        return self.cells[cell[0]][cell[1]]

    def sv_slots(self) -> dict[tuple[int, int], object]:
        """Occupied SV slots mapped to vehicle ids."""
        return {s: self.occupant(s) for s in SV_SLOTS if self.occupant(s) is not None}

    def occupancy(self) -> np.ndarray:
        return np.array([[v is not None for v in row] for row in self.cells])


def _rank_lane(dxs: list[tuple[float, object]], center: bool, band: float) -> dict[int, object]:
    """Row assignment for the vehicles of one lane, keyed by row index."""
    out: dict[int, object] = {}
    ahead = sorted((d, v) for d, v in dxs if d >= band or (center and d > 0))
    behind = sorted(((-d, v) for d, v in dxs if d <= -band or (center and d < 0)))
    if not center:
        beside = sorted((abs(d), v) for d, v in dxs if -band < d < band)
        if beside:
            out[2] = beside[0][1]
    if ahead:
        out[1] = ahead[0][1]
    if len(ahead) > 1:
        out[0] = ahead[1][1]
    if behind:
        out[3] = behind[0][1]
    return out


def assign_context_grid(
    frame: Iterable[Track],
    ov_id,
    lanes: LaneGeometry,
    t: float,
    window: float = 90.0,
    alongside_band: float = 5.21,
) -> ContextGrid:
    """Place the OV and up to 11 neighbours into the 4x3 context grid.

    Neighbours are bucketed by lane offset (-1, 0, +1 relative to the OV's
    lane) and, within a lane, by longitudinal rank: nearest and second
    nearest ahead, nearest behind, and (side lanes only) the nearest one
    within ``alongside_band`` metres of the OV. Vehicles further than
    ``window`` metres away longitudinally are ignored.
    """
    tracks = {tr.vehicle_id: tr for tr in frame}
    if ov_id not in tracks:
        raise MissingVehicle(f"vehicle {ov_id!r} not in frame")
    states = {}
    for vid, tr in tracks.items():
        s = tr.state_at(t)
        if s is None:
            raise InvalidParameter(f"vehicle {vid!r} has no state at t={t}")
        states[vid] = s
    ov = states[ov_id]
    ov_lane = lanes.lane_index(ov.y)
    if ov_lane is None:
        raise InvalidParameter(f"OV {ov_id!r} is off the lane map (y={ov.y:.2f})")

    per_lane: dict[int, list[tuple[float, object]]] = {-1: [], 0: [], 1: []}
    for vid, s in states.items():
        if vid == ov_id:
            continue
        lane = lanes.lane_index(s.y)
        if lane is None:
            warnings.warn(f"vehicle {vid!r} is off the lane map; skipped", stacklevel=2)
            continue
        offset = lane - ov_lane
        dx = s.x - ov.x
        if offset in per_lane and abs(dx) <= window:
            per_lane[offset].append((dx, vid))

    cells = [[None] * 3 for _ in range(4)]
    cells[OV_CELL[0]][OV_CELL[1]] = ov_id
    for offset, dxs in per_lane.items():
        col = offset + 1
        for row, vid in _rank_lane(dxs, offset == 0, alongside_band).items():
            cells[row][col] = vid
    return ContextGrid(tuple(tuple(r) for r in cells), t=t, tracks=tracks)


@dataclass(frozen=True)
class Obb:
    center: tuple[float, float]
    heading: float
    half_length: float
    half_width: float

    def __post_init__(self):
        if not (self.half_length > 0 and self.half_width > 0):
            raise InvalidParameter("Obb half extents must be positive")
        if not math.isfinite(self.heading):
            raise InvalidPose("Obb heading is not finite")

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit vectors along the box length and width."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([c, s]), np.array([-s, c])

    def corners(self) -> np.ndarray:
        ex, ey = self.axes
        ctr = np.asarray(self.center, float)
        lx, wy = self.half_length * ex, self.half_width * ey
        return np.array([ctr + lx + wy, ctr - lx + wy, ctr - lx - wy, ctr + lx - wy])

    def contains(self, points) -> np.ndarray:
        """Point membership (closed box) for an ``(N, 2)`` array."""
        ex, ey = self.axes
        d = np.atleast_2d(points) - np.asarray(self.center)
        return (np.abs(d @ ex) <= self.half_length) & (np.abs(d @ ey) <= self.half_width)


def heading_from_velocity(vx, vy, road_axis=(1.0, 0.0), min_speed=MIN_HEADING_SPEED) -> float:
    """Heading of the velocity tangent, or of the road axis when nearly stopped."""
    if math.hypot(vx, vy) < min_speed:
        return math.atan2(road_axis[1], road_axis[0])
    return math.atan2(vy, vx)


def obb_at(pose: Sequence[float], dims: Sequence[float], velocity=None, road_axis=(1.0, 0.0)) -> Obb:
    """Box of size ``dims = (length, width)`` centred at ``pose = (x, y, heading)``.

    If ``velocity`` is given the heading is taken from it (with the
    low-speed fallback to ``road_axis``) and the pose heading is ignored.
    """
    x, y = float(pose[0]), float(pose[1])
    heading = float(pose[2]) if len(pose) > 2 and pose[2] is not None else None
    if velocity is not None:
        heading = heading_from_velocity(velocity[0], velocity[1], road_axis)
    if heading is None:
        heading = math.atan2(road_axis[1], road_axis[0])
    if not all(math.isfinite(v) for v in (x, y, heading)):
        raise InvalidPose(f"non-finite pose {(x, y, heading)}")
    length, width = dims
    if not (length > 0 and width > 0):
        raise InvalidParameter("dims must be positive")
    return Obb((x, y), heading, 0.5 * length, 0.5 * width)
