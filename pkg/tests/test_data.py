import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predrisk.data import (
    FEET,
    NGSIM_COLUMNS,
    RawRecording,
    Sample,
    SplitManifest,
    butterworth_lowpass,
    extract_windows,
    make_sample,
    parse_highd,
    parse_ngsim,
    preprocess,
    read_samples,
    resample,
    split_dataset,
    write_highd,
    write_ngsim,
    write_samples,
)
from predrisk.errors import (
    FormatError,
    InsufficientData,
    InvalidParameter,
    InvalidValue,
    ParseError,
    ResampleError,
)
from predrisk.scene import LaneGeometry, Track
from predrisk.synthetic import SYNTHETIC_LANES, kinematic_track, synthetic_recording


def first_order_gain(f, fc, fs):
    """|H| of the bilinear-transformed first-order Butterworth at frequency f."""
    k = math.tan(math.pi * fc / fs)
    z1 = np.exp(-2j * math.pi * f / fs)
    return abs(k * (1 + z1) / ((1 + k) + (k - 1) * z1))


def amplitude_at(x, f, fs):
    t = np.arange(len(x)) / fs
    basis = np.column_stack([np.sin(2 * math.pi * f * t), np.cos(2 * math.pi * f * t)])
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return float(np.hypot(*coef))


# filtering


@pytest.mark.parametrize("zero_phase", [True, False])
def test_butterworth_keeps_dc(zero_phase):
    x = np.full(200, 3.25)
    assert np.max(np.abs(butterworth_lowpass(x, 1.0, 10.0, zero_phase) - 3.25)) < 1e-9


def test_butterworth_attenuates_cutoff_to_half_power():
    fs, fc = 10.0, 1.0
    t = np.arange(0, 200, 1 / fs)
    y = butterworth_lowpass(np.sin(2 * math.pi * fc * t), fc, fs, zero_phase=False)
    measured = amplitude_at(y[200:], fc, fs)
    assert first_order_gain(fc, fc, fs) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert abs(measured - 0.7071) < 0.02
    assert measured == pytest.approx(first_order_gain(fc, fc, fs), abs=1e-6)


def test_zero_phase_squares_the_gain():
    fs = 10.0
    t = np.arange(0, 200, 1 / fs)
    y = butterworth_lowpass(np.sin(2 * math.pi * 0.5 * t), 1.0, fs)
    assert amplitude_at(y[200:-200], 0.5, fs) == pytest.approx(first_order_gain(0.5, 1.0, fs) ** 2, abs=1e-4)


def test_butterworth_rejects_bad_rates():
    with pytest.raises(InvalidParameter):
        butterworth_lowpass(np.ones(10), fc=6.0, fs=10.0)
    with pytest.raises(InvalidParameter):
        butterworth_lowpass(np.ones(1))


# resampling


def test_resample_ngsim_rate_keeps_every_second_state():
    tr = kinematic_track(1, v=(20.0, 0.0), t_end=3.0, dt=0.1)
    out = resample(tr, 0.2)
    assert len(out) == 16
    assert np.allclose(out.data[:, 1:], tr.data[::2, 1:])
    assert out.dt == pytest.approx(0.2)


def test_resample_highd_rate_and_phase():
    tr = kinematic_track(1, t_end=2.0, dt=0.04)
    shifted = tr.with_data(np.column_stack([tr.times + 0.12, tr.data[:, 1:]]))
    out = resample(shifted, 0.2)
    assert out.t_start == pytest.approx(0.2)
    assert np.allclose(np.diff(out.times), 0.2)


def test_resample_requires_integer_ratio():
    tr = kinematic_track(1, t_end=2.0, dt=0.15)
    with pytest.raises(ResampleError):
        resample(tr, 0.2)


def test_preprocess_filters_ngsim_only():
    noisy = kinematic_track(1, t_end=10.0, dt=0.1)
    data = noisy.data.copy()
    data[::2, 2] += 0.3
    noisy = noisy.with_data(data)
    lanes = {1: SYNTHETIC_LANES}
    ng = preprocess(RawRecording("ngsim", [noisy], 10, lanes))
    raw = resample(noisy)
    assert not np.allclose(ng.tracks[0].data[:, 2], raw.data[:, 2])
    hd = preprocess(RawRecording("highd", [kinematic_track(1, t_end=4.0, dt=0.04)], 25, lanes))
    assert np.allclose(hd.tracks[0].data, resample(kinematic_track(1, t_end=4.0, dt=0.04)).data)


# parsers


def ngsim_recording():
    tracks = [
        kinematic_track(1, x0=10.0, y0=2.0, v=(20.0, 0.0), a=(0.5, 0.0), t_end=3.0, dt=0.1),
        kinematic_track(2, x0=40.0, y0=5.6, v=(18.0, 0.0), t_end=3.0, dt=0.1),
    ]
    return RawRecording("ngsim", tracks, 10, {1: LaneGeometry((2.0, 5.6), lane_width=12 * FEET)})


def test_ngsim_round_trip(tmp_path):
    rec = ngsim_recording()
    write_ngsim(rec, tmp_path / "trajectories.csv")
    back = parse_ngsim(tmp_path / "trajectories.csv")
    assert back.source == "ngsim" and back.native_rate == 10
    assert len(back.tracks) == 2
    for a, b in zip(rec.tracks, back.tracks):
        assert a.vehicle_id == b.vehicle_id
        assert a.length == pytest.approx(b.length, abs=1e-12)
        cols = [0, 1, 2, 3, 5]  # t, x, y, vx, ax survive exactly; vy, ay are differentiated
        assert np.allclose(a.data[:, cols], b.data[:, cols], rtol=0, atol=1e-9)
        assert np.allclose(b.data[:, 4], 0.0, atol=1e-9)
    assert back.lanes[1].lane_centers == pytest.approx((2.0, 5.6))


def test_ngsim_whitespace_format(tmp_path):
    rows = []
    for k in range(5):
        f = [1, 100 + k, 5, 0, 6.0, 100.0 + 4 * k, 0, 0, 15, 6, 2, 40.0, 0.0, 1, 0, 0, 0, 0]
        rows.append(" ".join(str(v) for v in f))
    (tmp_path / "raw.txt").write_text("\n".join(rows) + "\n")
    rec = parse_ngsim(tmp_path / "raw.txt")
    tr = rec.tracks[0]
    assert tr.state_at(10.0).x == pytest.approx(100.0 * FEET)
    assert tr.state_at(10.0).vx == pytest.approx(40.0 * FEET)
    assert tr.width == pytest.approx(6 * FEET)


def test_ngsim_frame_gap_splits_track(tmp_path):
    rec = ngsim_recording()
    data = rec.tracks[1].data
    gapped = rec.tracks[1].with_data(data[:10])
    tail = Track(2, 4.5, 1.8, data[15:])
    write_ngsim(RawRecording("ngsim", [gapped, tail], 10, rec.lanes), tmp_path / "g.csv")
    back = parse_ngsim(tmp_path / "g.csv")
    assert [len(t) for t in back.tracks] == [10, len(data) - 15]


def test_ngsim_errors_carry_line_numbers(tmp_path):
    header = ",".join(NGSIM_COLUMNS)
    good = "1,100,5,0,6.0,100.0,0,0,15,6,2,40.0,0.0,1,0,0,0,0"
    (tmp_path / "bad.csv").write_text(f"{header}\n{good}\n1,101,5,0,abc,1,0,0,15,6,2,40,0,1,0,0,0,0\n")
    with pytest.raises(ParseError, match="line 3"):
        parse_ngsim(tmp_path / "bad.csv")
    (tmp_path / "inf.csv").write_text(f"{header}\n{good}\n1,101,5,0,inf,1,0,0,15,6,2,40,0,1,0,0,0,0\n")
    with pytest.raises(InvalidValue):
        parse_ngsim(tmp_path / "inf.csv")
    (tmp_path / "short.csv").write_text("Vehicle_ID,Frame_ID\n1,2\n")
    with pytest.raises(ParseError):
        parse_ngsim(tmp_path / "short.csv")


def highd_recording():
    lower = LaneGeometry((14.0, 18.0), lane_width=4.0)
    upper = LaneGeometry((-6.0, -2.0), lane_width=4.0)
    east = kinematic_track(1, x0=10.0, y0=14.0, v=(30.0, 0.0), t_end=2.0, dt=0.04)
    west_data = kinematic_track(2, x0=-400.0, y0=-6.0, v=(25.0, 0.0), a=(0.3, 0.0), t_end=2.0, dt=0.04).data
    west = Track(2, 4.8, 1.9, west_data, direction=-1)
    return RawRecording("highd", [east, west], 25, {1: lower, -1: upper})


def test_highd_round_trip(tmp_path):
    rec = highd_recording()
    write_highd(rec, tmp_path / "01_tracks.csv", tmp_path / "01_recordingMeta.csv")
    back = parse_highd(tmp_path / "01_tracks.csv", tmp_path / "01_recordingMeta.csv")
    assert [t.direction for t in back.tracks] == [1, -1]
    for a, b in zip(rec.tracks, back.tracks):
        assert np.allclose(a.data, b.data, rtol=0, atol=1e-9)
    assert back.lanes[1].lane_centers == pytest.approx((14.0, 18.0))
    assert back.lanes[-1].lane_centers == pytest.approx((-6.0, -2.0))


def test_highd_reversed_vehicle_moves_forward(tmp_path):
    rec = highd_recording()
    write_highd(rec, tmp_path / "t.csv", tmp_path / "m.csv")
    raw_vx = [float(line.split(",")[6]) for line in (tmp_path / "t.csv").read_text().splitlines()[1:]
              if line.split(",")[1] == "2"]
    assert all(v < 0 for v in raw_vx)
    west = parse_highd(tmp_path / "t.csv", tmp_path / "m.csv").tracks[1]
    assert np.all(west.data[:, 3] > 0)
    assert np.all(np.diff(west.data[:, 1]) > 0)


def test_highd_rejects_wrong_frame_rate(tmp_path):
    rec = highd_recording()
    write_highd(rec, tmp_path / "t.csv", tmp_path / "m.csv")
    text = (tmp_path / "m.csv").read_text().replace(",25,", ",30,")
    (tmp_path / "m.csv").write_text(text)
    with pytest.raises(FormatError):
        parse_highd(tmp_path / "t.csv", tmp_path / "m.csv")


# windows and samples


@pytest.mark.parametrize("duration", [8.0, 8.8, 9.0, 12.4, 20.0])
def test_window_count_matches_formula(duration):
    rec = RawRecording("synthetic", [kinematic_track(1, t_end=duration)], 5, {1: SYNTHETIC_LANES})
    assert len(extract_windows(rec)) == math.floor((duration - 8) / 1) + 1


def test_short_track_has_no_windows():
    rec = RawRecording("synthetic", [kinematic_track(1, t_end=7.8)], 5, {1: SYNTHETIC_LANES})
    assert extract_windows(rec) == []


def test_sample_layout():
    ov = kinematic_track("ov", x0=0.0, y0=6.0, v=(25.0, 0.0), t_end=8.0)
    lead = kinematic_track("lead", x0=30.0, y0=6.0, v=(24.0, 0.0), t_end=8.0)
    s = make_sample("s", ov, [lead], SYNTHETIC_LANES, 3.0)
    assert s.ov_history.shape == (16, 6)
    assert s.ov_future.shape == (25, 2)
    assert s.ov_history[-1, 0] == pytest.approx(75.0)
    assert s.ov_future[0, 0] == pytest.approx(80.0)
    assert s.ov_future[-1, 0] == pytest.approx(200.0)
    h = s.sv_histories[(1, 1)]
    assert h.shape == (16, 12)
    assert np.allclose(h[:, 6:], h[:, :6] - s.ov_history)


def test_sample_needs_history_and_future():
    ov = kinematic_track("ov", t_end=8.0)
    with pytest.raises(InsufficientData):
        make_sample("s", ov, [], SYNTHETIC_LANES, 2.8)
    with pytest.raises(InsufficientData):
        make_sample("s", ov, [], SYNTHETIC_LANES, 3.2)
    assert len(make_sample("s", ov, [], SYNTHETIC_LANES, 7.0, future=False).ov_future) == 0


def test_neighbour_without_full_history_is_ignored():
    ov = kinematic_track("ov", x0=0.0, y0=6.0, t_end=8.0)
    late = Track("late", 5.0, 2.0, kinematic_track("late", x0=20.0, y0=6.0, t_end=8.0).data[5:])
    s = make_sample("s", ov, [late], SYNTHETIC_LANES, 3.0)
    assert s.sv_histories == {}


def test_sample_json_round_trip(tmp_path):
    samples = extract_windows(synthetic_recording(6, 12.0, seed=3))
    write_samples(tmp_path / "s.jsonl", samples)
    back = read_samples(tmp_path / "s.jsonl")
    assert len(back) == len(samples)
    for a, b in zip(samples, back):
        assert a.sample_id == b.sample_id and a.grid.cells == b.grid.cells
        assert np.array_equal(a.ov_history, b.ov_history)
        assert a.sv_histories.keys() == b.sv_histories.keys()
        assert np.array_equal(a.ov_future, b.ov_future)
    assert isinstance(back[0], Sample)


# splits


def test_split_fractions_and_disjointness():
    ids = [f"s{k}" for k in range(1000)]
    m = split_dataset(ids, seed=5)
    assert (len(m.train), len(m.val), len(m.test)) == (700, 100, 200)
    assert set(m.train) | set(m.val) | set(m.test) == set(ids)
    assert not (set(m.train) & set(m.val) or set(m.train) & set(m.test) or set(m.val) & set(m.test))


def test_split_is_byte_reproducible():
    ids = [f"s{k}" for k in range(57)]
    a, b = split_dataset(ids, 11).to_json(), split_dataset(ids, 11).to_json()
    assert a.encode() == b.encode()
    assert split_dataset(ids, 12).to_json() != a
    assert SplitManifest.from_json(a) == split_dataset(ids, 11)


def test_split_errors():
    with pytest.raises(InsufficientData):
        split_dataset(["a", "b"], 0)
    with pytest.raises(InvalidParameter):
        split_dataset(["a"] * 20, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 400), st.integers(0, 2**31 - 1))
def test_split_partitions_any_id_set(n, seed):
    ids = [str(k) for k in range(n)]
    m = split_dataset(ids, seed)
    assert sorted(m.train + m.val + m.test) == sorted(ids)
    assert abs(len(m.train) - 0.7 * n) <= 1
