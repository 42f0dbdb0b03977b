import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predrisk.errors import InvalidParameter, InvalidPose, MissingVehicle
from predrisk.scene import (
    OV_CELL,
    SV_SLOTS,
    ContextGrid,
    LaneGeometry,
    MotionState,
    Obb,
    Track,
    assign_context_grid,
    heading_from_velocity,
    obb_at,
    slot_name,
)
from predrisk.synthetic import kinematic_track

LANES = LaneGeometry((2.0, 6.0, 10.0), lane_width=4.0)


def parked(vid, x, y, t_end=1.0):
    t = np.round(np.arange(0.0, t_end + 0.1, 0.2), 10)
    data = np.column_stack([t, np.full_like(t, x), np.full_like(t, y)] + [np.zeros_like(t)] * 4)
    return Track(vid, 4.5, 1.8, data)


def test_track_is_immutable_and_indexed():
    tr = kinematic_track(7, v=(20.0, 0.0), t_end=2.0)
    assert len(tr) == 11
    assert tr.dt == pytest.approx(0.2)
    with pytest.raises(ValueError):
        tr.data[0, 1] = 1.0
    assert tr.index_at(1.0) == 5
    assert tr.index_at(1.1) is None
    assert tr.state_at(1.0).x == pytest.approx(20.0)
    assert tr.state_at(9.0) is None


def test_track_validation():
    good = kinematic_track(1, t_end=1.0).data
    with pytest.raises(InvalidParameter):
        Track(1, 4.0, 2.0, good[:, :6])
    with pytest.raises(InvalidParameter):
        Track(1, 0.0, 2.0, good)
    bad = good.copy()
    bad[2, 0] += 0.05
    with pytest.raises(InvalidParameter):
        Track(1, 4.0, 2.0, bad)
    bad = good.copy()
    bad[1, 3] = np.nan
    with pytest.raises(InvalidParameter):
        Track(1, 4.0, 2.0, bad)


def test_track_round_trips_through_states():
    tr = kinematic_track(3, a=(1.0, 0.2), t_end=1.0)
    assert Track.from_states(3, tr.length, tr.width, tr.states) == tr


def test_motion_state_rejects_nan():
    with pytest.raises(InvalidParameter):
        MotionState(0.0, math.nan, 0.0)


def test_lane_index():
    assert LANES.lane_index(2.0) == 0
    assert LANES.lane_index(7.9) == 1
    assert LANES.lane_index(12.0) == 2
    assert LANES.lane_index(12.5) is None
    assert LANES.lane_index(-0.5) is None


def test_lane_geometry_validation():
    with pytest.raises(InvalidParameter):
        LaneGeometry((2.0, 1.0, 3.0))
    with pytest.raises(InvalidParameter):
        LaneGeometry((2.0,), lane_width=0.0)
    with pytest.raises(InvalidParameter):
        LaneGeometry((2.0,), longitudinal_axis=(1.0, 1.0))


def test_slots_exclude_ov_cell():
    assert len(SV_SLOTS) == 11
    assert OV_CELL not in SV_SLOTS
    assert slot_name((0, 0)) == "left_front_front"
    assert slot_name((3, 2)) == "right_behind"


def test_context_grid_full_neighbourhood():
    frame = [
        parked("ov", 0, 6),
        parked("c_f", 20, 6), parked("c_ff", 45, 6), parked("c_b", -15, 6),
        parked("l_f", 12, 2), parked("l_ff", 30, 2), parked("l_a", 1.0, 2), parked("l_b", -25, 2),
        parked("r_f", 8, 10), parked("r_a", -2.0, 10), parked("r_b", -9, 10),
        parked("far", 200, 6),
    ]
    g = assign_context_grid(frame, "ov", LANES, 0.0)
    assert g.ov_id == "ov"
    assert g.cells == (
        ("l_ff", "c_ff", None),
        ("l_f", "c_f", "r_f"),
        ("l_a", "ov", "r_a"),
        ("l_b", "c_b", "r_b"),
    )
    assert len(g.sv_slots()) == 10
    assert g.occupancy().sum() == 11


def test_context_grid_center_lane_has_no_alongside():
    frame = [parked("ov", 0, 6), parked("close", 2.0, 6), parked("behind", -1.0, 6)]
    g = assign_context_grid(frame, "ov", LANES, 0.0)
    assert g.occupant((1, 1)) == "close"
    assert g.occupant((3, 1)) == "behind"


def test_context_grid_skips_off_map_vehicle():
    frame = [parked("ov", 0, 6), parked("shoulder", 5, 20)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g = assign_context_grid(frame, "ov", LANES, 0.0)
    assert g.sv_slots() == {}
    assert caught


def test_context_grid_errors():
    with pytest.raises(MissingVehicle):
        assign_context_grid([parked("a", 0, 2)], "b", LANES, 0.0)
    with pytest.raises(InvalidParameter):
        assign_context_grid([parked("a", 0, 30)], "a", LANES, 0.0)
    with pytest.raises(InvalidParameter):
        ContextGrid(((None,) * 3,) * 4)


def test_obb_corners_and_contains():
    box = Obb((1.0, 2.0), math.pi / 2, 2.0, 1.0)
    xs, ys = box.corners().T
    assert xs.min() == pytest.approx(0.0) and xs.max() == pytest.approx(2.0)
    assert ys.min() == pytest.approx(0.0) and ys.max() == pytest.approx(4.0)
    assert box.contains([[1.0, 3.9], [1.9, 2.0], [1.5, 4.5]]).tolist() == [True, True, False]


def test_obb_validation():
    with pytest.raises(InvalidParameter):
        Obb((0, 0), 0.0, 0.0, 1.0)
    with pytest.raises(InvalidPose):
        obb_at((0.0, math.inf, 0.0), (4.0, 2.0))


def test_heading_falls_back_to_road_axis_when_stopped():
    assert heading_from_velocity(0.01, 0.05) == 0.0
    assert heading_from_velocity(0.0, 0.05, road_axis=(0.0, 1.0)) == pytest.approx(math.pi / 2)
    assert heading_from_velocity(1.0, 1.0) == pytest.approx(math.pi / 4)
    assert obb_at((0, 0, 1.0), (4, 2), velocity=(3.0, 0.0)).heading == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-math.pi, math.pi),
       st.floats(0.5, 6), st.floats(0.5, 3))
def test_obb_contains_its_corners_and_center(x, y, h, length, width):
    box = obb_at((x, y, h), (length, width))
    shrink = box.center + 0.999 * (box.corners() - np.asarray(box.center))
    assert box.contains(shrink).all()
    assert box.contains([box.center]).all()
    ex, ey = box.axes
    assert abs(ex @ ey) < 1e-12
