"""NGSIM / highD ingestion, filtering, resampling and sample windowing."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from .errors import (
    FormatError,
    InsufficientData,
    InvalidParameter,
    InvalidValue,
    ParseError,
    ResampleError,
)
from .scene import (
    SV_SLOTS,
    ContextGrid,
    LaneGeometry,
    Track,
    assign_context_grid,
)

logger = logging.getLogger(__name__)

FEET = 0.3048
STEP = 0.2
HISTORY_LEN = 16
FUTURE_LEN = 25
MAX_ABS_VALUE = 1e7

NGSIM_COLUMNS = (
    "Vehicle_ID", "Frame_ID", "Total_Frames", "Global_Time", "Local_X", "Local_Y",
    "Global_X", "Global_Y", "v_Length", "v_Width", "v_Class", "v_Vel", "v_Acc",
    "Lane_ID", "Preceding", "Following", "Space_Headway", "Time_Headway",
)
HIGHD_TRACK_COLUMNS = (
    "frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity",
    "xAcceleration", "yAcceleration", "laneId",
)
NATIVE_RATES = {"ngsim": 10, "highd": 25, "synthetic": 5}


@dataclass(frozen=True)
class RawRecording:
    source: str
    tracks: tuple[Track, ...]
    native_rate: float
    lanes: dict = field(default_factory=dict)  # direction -> LaneGeometry
    path: str = ""

    def __post_init__(self):
        if self.source not in NATIVE_RATES:
            raise InvalidParameter(f"unknown source {self.source!r}")
        object.__setattr__(self, "tracks", tuple(self.tracks))


# NGSIM


def _num(value: str, line: int, column: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise ParseError(f"column {column}: {value!r} is not a number", line) from None
    if not math.isfinite(v) or abs(v) > MAX_ABS_VALUE:
        raise InvalidValue(f"line {line}: column {column} value {value!r} out of range")
    return v


def _ngsim_rows(path: Path):
    with open(path, newline="") as fh:
        comma = "," in fh.readline()
        fh.seek(0)
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            fields = next(csv.reader([raw])) if comma else raw.split()
            yield lineno, [f.strip() for f in fields]


def parse_ngsim(path) -> RawRecording:
    """Parse an NGSIM US-101 / I-80 trajectory file (CSV with header or raw txt).

    Positions, speeds and accelerations are converted from feet to metres.
    ``Local_Y`` becomes the longitudinal ``x`` and ``Local_X`` the lateral
    ``y``; lateral velocity and acceleration are differentiated from ``y``.
    Frame gaps split a vehicle into several tracks.
    """
    path = Path(path)
    index = {name: k for k, name in enumerate(NGSIM_COLUMNS)}
    per_vehicle: dict[int, list] = defaultdict(list)
    lane_y: dict[int, list] = defaultdict(list)
    dims: dict[int, tuple[float, float]] = {}
    for lineno, fields in _ngsim_rows(path):
        if lineno == 1 and fields and fields[0] == NGSIM_COLUMNS[0]:
            index = {name: fields.index(name) for name in NGSIM_COLUMNS if name in fields}
            missing = {"Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "v_Length",
                       "v_Width", "v_Vel", "v_Acc", "Lane_ID"} - set(index)
            if missing:
                raise ParseError(f"missing columns {sorted(missing)}", lineno)
            continue
        if len(fields) < len(index):
            raise ParseError(f"expected {len(index)} fields, got {len(fields)}", lineno)

        def get(col):
            return _num(fields[index[col]], lineno, col)

        vid = int(get("Vehicle_ID"))
        frame = int(get("Frame_ID"))
        y_lat = get("Local_X") * FEET
        row = (frame, get("Local_Y") * FEET, y_lat, get("v_Vel") * FEET, get("v_Acc") * FEET)
        per_vehicle[vid].append(row)
        dims.setdefault(vid, (get("v_Length") * FEET, get("v_Width") * FEET))
        lane_y[int(get("Lane_ID"))].append(y_lat)

    tracks = []
    for vid in sorted(per_vehicle):
        rows = sorted(per_vehicle[vid])
        frames = np.array([r[0] for r in rows])
        if np.any(np.diff(frames) == 0):
            raise ParseError(f"vehicle {vid} has duplicate frames")
        breaks = np.nonzero(np.diff(frames) != 1)[0] + 1
        for seg in np.split(np.arange(len(rows)), breaks):
            arr = np.array([rows[k] for k in seg], dtype=float)
            t = arr[:, 0] * 0.1
            y = arr[:, 2]
            if len(seg) > 1:
                vy = np.gradient(y, 0.1)
                ay = np.gradient(vy, 0.1)
            else:
                vy = ay = np.zeros(1)
            data = np.column_stack([t, arr[:, 1], y, arr[:, 3], vy, arr[:, 4], ay])
            length, width = dims[vid]
            tracks.append(Track(vid, length, width, data))

    lanes = {}
    if lane_y:
        ids = sorted(lane_y)
        centers = [float(np.mean(lane_y[i])) for i in ids]
        if not np.all(np.diff(centers) > 0):
            centers = sorted(set(round(c, 9) for c in centers))
        lanes[1] = LaneGeometry(tuple(centers), lane_width=12 * FEET)
    return RawRecording("ngsim", tracks, NATIVE_RATES["ngsim"], lanes, str(path))


def _f(v) -> str:
    return repr(float(v))


def write_ngsim(recording: RawRecording, path):
    """Write tracks in the NGSIM CSV layout (inverse of :func:`parse_ngsim`
    for every column except the differentiated lateral motion)."""
    geom = recording.lanes.get(1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NGSIM_COLUMNS)
        for tr in recording.tracks:
            for t, x, y, vx, _vy, ax, _ay in tr.data:
                lane = (geom.lane_index(y) if geom else None)
                lane = 0 if lane is None else lane + 1
                frame = int(round(t / 0.1))
                w.writerow([
                    tr.vehicle_id, frame, len(tr), frame * 100, _f(y / FEET), _f(x / FEET),
                    0, 0, _f(tr.length / FEET), _f(tr.width / FEET), 2,
                    _f(vx / FEET), _f(ax / FEET), lane, 0, 0, 0, 0,
                ])


# highD


def _markings(text: str) -> list[float]:
    return [float(v) for v in str(text).split(";") if v.strip()]


def _lanes_from_markings(marks: Sequence[float], sign: float) -> LaneGeometry | None:
    if len(marks) < 2:
        return None
    marks = sorted(marks)
    centers = [sign * 0.5 * (a + b) for a, b in zip(marks[:-1], marks[1:])]
    if sign < 0:
        centers = centers[::-1]
    return LaneGeometry(tuple(centers), lane_width=float(np.mean(np.diff(marks))))


def parse_highd(tracks_path, meta_path) -> RawRecording:
    """Parse one highD recording (``XX_tracks.csv`` + ``XX_recordingMeta.csv``).

    Box corner coordinates become centres. Vehicles driving toward
    negative ``x`` are rotated by 180 degrees so that every track moves in
    increasing ``x``; their ``direction`` is -1.
    """
    with open(meta_path, newline="") as fh:
        metas = list(csv.DictReader(fh))
    if len(metas) != 1:
        raise FormatError(f"{meta_path}: expected one recording row, got {len(metas)}")
    meta = metas[0]
    try:
        rate = float(meta["frameRate"])
    except (KeyError, ValueError):
        raise FormatError(f"{meta_path}: missing or invalid frameRate") from None
    if rate != NATIVE_RATES["highd"]:
        raise FormatError(f"{meta_path}: frame rate {rate} != 25")

    per_vehicle: dict[int, list] = defaultdict(list)
    dims = {}
    with open(tracks_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty tracks file", 1)
        header = [h.strip() for h in header]
        missing = set(HIGHD_TRACK_COLUMNS[:10]) - set(header)
        if missing:
            raise ParseError(f"missing columns {sorted(missing)}", 1)
        col = {name: header.index(name) for name in HIGHD_TRACK_COLUMNS if name in header}
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(fields)}", lineno)

            def get(name):
                return _num(fields[col[name]], lineno, name)

            vid = int(get("id"))
            bw, bh = get("width"), get("height")
            per_vehicle[vid].append((
                int(get("frame")), get("x") + 0.5 * bw, get("y") + 0.5 * bh,
                get("xVelocity"), get("yVelocity"), get("xAcceleration"), get("yAcceleration"),
            ))
            dims.setdefault(vid, (bw, bh))

    tracks = []
    for vid in sorted(per_vehicle):
        rows = np.array(sorted(per_vehicle[vid]), dtype=float)
        sign = -1.0 if np.mean(rows[:, 3]) < 0 else 1.0
        frames = rows[:, 0].astype(int)
        if np.any(np.diff(frames) == 0):
            raise ParseError(f"vehicle {vid} has duplicate frames")
        breaks = np.nonzero(np.diff(frames) != 1)[0] + 1
        for seg in np.split(np.arange(len(rows)), breaks):
            r = rows[seg]
            data = np.column_stack([r[:, 0] / rate, sign * r[:, 1:]])
            tracks.append(Track(vid, dims[vid][0], dims[vid][1], data, int(sign)))

    lanes = {}
    upper = _lanes_from_markings(_markings(meta.get("upperLaneMarkings", "")), -1.0)
    lower = _lanes_from_markings(_markings(meta.get("lowerLaneMarkings", "")), 1.0)
    if upper:
        lanes[-1] = upper
    if lower:
        lanes[1] = lower
    return RawRecording("highd", tracks, rate, lanes, str(tracks_path))


def write_highd(recording: RawRecording, tracks_path, meta_path, recording_id: int = 1):
    """Write a recording in the highD layout; inverse of :func:`parse_highd`."""
    rate = NATIVE_RATES["highd"]
    with open(tracks_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HIGHD_TRACK_COLUMNS)
        for tr in recording.tracks:
            s = float(tr.direction)
            for t, x, y, vx, vy, ax, ay in tr.data:
                xc, yc = s * x, s * y
                w.writerow([
                    int(round(t * rate)), tr.vehicle_id,
                    _f(xc - 0.5 * tr.length), _f(yc - 0.5 * tr.width),
                    _f(tr.length), _f(tr.width),
                    _f(s * vx), _f(s * vy), _f(s * ax), _f(s * ay), 0,
                ])

    def marks(geom: LaneGeometry | None, sign: float) -> str:
        if geom is None:
            return ""
        c = sorted(sign * v for v in geom.lane_centers)
        half = 0.5 * geom.lane_width
        edges = [c[0] - half] + [0.5 * (a + b) for a, b in zip(c[:-1], c[1:])] + [c[-1] + half]
        return ";".join(_f(e) for e in edges)

    with open(meta_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "frameRate", "upperLaneMarkings", "lowerLaneMarkings"])
        w.writerow([
            recording_id, rate,
            marks(recording.lanes.get(-1), -1.0), marks(recording.lanes.get(1), 1.0),
        ])


# filtering and resampling


def butterworth_lowpass(series, fc: float = 1.0, fs: float = 10.0, zero_phase: bool = True):
    """First-order Butterworth low-pass (bilinear transform).

    With ``zero_phase`` the filter runs forward then backward; otherwise a
    single causal pass starting from the steady state of the first sample.
    """
    if not (fc > 0 and fs > 0):
        raise InvalidParameter("fc and fs must be positive")
    if not fs > 2 * fc:
        raise InvalidParameter(f"fs={fs} must exceed 2*fc={2 * fc}")
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise InvalidParameter("series must be 1-D with at least 2 samples")
    b, a = signal.butter(1, fc, btype="low", fs=fs)
    if zero_phase:
        return signal.filtfilt(b, a, x, padlen=min(6, len(x) - 1))
    zi = signal.lfilter_zi(b, a) * x[0]
    return signal.lfilter(b, a, x, zi=zi)[0]


def filter_track(track: Track, fc: float = 1.0, fs: float | None = None) -> Track:
    """Low-pass the six kinematic columns of a track independently."""
    if len(track) < 2:
        return track
    fs = fs if fs is not None else 1.0 / track.dt
    data = np.array(track.data)
    for k in range(1, 7):
        data[:, k] = butterworth_lowpass(data[:, k], fc, fs)
    return track.with_data(data)


def resample(track: Track, dt: float = STEP) -> Track:
    """Decimate to step ``dt`` keeping the states whose time is a multiple of ``dt``."""
    native = track.dt
    if native is None:
        k = 1
    else:
        ratio = dt / native
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > 1e-6:
            raise ResampleError(f"step {dt} is not a multiple of the native step {native}")
    phase = track.times / dt
    on_grid = np.nonzero(np.abs(phase - np.round(phase)) < 1e-6)[0]
    if len(on_grid) == 0:
        raise ResampleError(f"no state of track {track.vehicle_id} falls on the {dt} s grid")
    data = np.array(track.data[on_grid[0]::k])
    data[:, 0] = np.round(data[:, 0] / dt) * dt
    return track.with_data(data)


def preprocess(recording: RawRecording, fc: float = 1.0, dt: float = STEP) -> RawRecording:
    """Filter (NGSIM only) and resample every track of a recording."""
    tracks = []
    for tr in recording.tracks:
        if recording.source == "ngsim":
            tr = filter_track(tr, fc, recording.native_rate)
        tracks.append(resample(tr, dt))
    return RawRecording(recording.source, tracks, recording.native_rate, recording.lanes,
                        recording.path)


# samples


@dataclass(frozen=True)
class Sample:
    """One prediction example centred at ``t0``.

    ``ov_history`` is ``(16, 6)`` with columns x, y, vx, vy, ax, ay from
    ``t0 - 3 s`` to ``t0``; each ``sv_histories[slot]`` is ``(16, 12)``: the
    six absolute columns followed by the same six minus the OV's.
    ``ov_future`` holds the 25 OV positions from ``t0 + 0.2 s`` to ``t0 + 5 s``.
    """

    sample_id: str
    ov_id: object
    t0: float
    ov_history: np.ndarray
    sv_histories: dict
    ov_future: np.ndarray
    grid: ContextGrid

    def to_json(self) -> dict:
        return {
            "id": self.sample_id,
            "ov_id": self.ov_id,
            "t0": self.t0,
            "grid": [list(row) for row in self.grid.cells],
            "ov_history": self.ov_history.tolist(),
            "sv_histories": {
                f"{r},{c}": h.tolist() for (r, c), h in sorted(self.sv_histories.items())
            },
            "ov_future": self.ov_future.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Sample":
        sv = {}
        for key, h in obj["sv_histories"].items():
            r, c = (int(v) for v in key.split(","))
            sv[(r, c)] = np.array(h, dtype=float).reshape(HISTORY_LEN, 12)
        cells = tuple(tuple(row) for row in obj["grid"])
        return cls(
            obj["id"], obj["ov_id"], float(obj["t0"]),
            np.array(obj["ov_history"], dtype=float).reshape(HISTORY_LEN, 6),
            sv, np.array(obj["ov_future"], dtype=float).reshape(-1, 2),
            ContextGrid(cells, t=float(obj["t0"])),
        )


def make_sample(sample_id, ov: Track, neighbours: Iterable[Track], lanes: LaneGeometry,
                t0: float, window: float = 90.0, future: bool = True,
                dt: float = STEP) -> Sample:
    """Cut one sample at ``t0`` from tracks already on the ``dt`` grid."""
    k0 = ov.index_at(t0)
    if k0 is None or k0 < HISTORY_LEN - 1:
        raise InsufficientData(f"vehicle {ov.vehicle_id!r} lacks 3 s of history at t0={t0}")
    hist = ov.data[k0 - HISTORY_LEN + 1 : k0 + 1, 1:]
    if future:
        fut = ov.data[k0 + 1 : k0 + 1 + FUTURE_LEN, 1:3]
        if len(fut) != FUTURE_LEN:
            raise InsufficientData(f"vehicle {ov.vehicle_id!r} lacks 5 s of future at t0={t0}")
    else:
        fut = np.zeros((0, 2))
    t_first = t0 - (HISTORY_LEN - 1) * dt
    frame = [ov]
    for tr in neighbours:
        if tr.vehicle_id == ov.vehicle_id:
            continue
        if tr.index_at(t_first) is not None and tr.index_at(t0) is not None:
            frame.append(tr)
    grid = assign_context_grid(frame, ov.vehicle_id, lanes, t0, window=window)
    svs = {}
    for slot, vid in grid.sv_slots().items():
        tr = grid.tracks[vid]
        k = tr.index_at(t0)
        absolute = tr.data[k - HISTORY_LEN + 1 : k + 1, 1:]
        svs[slot] = np.hstack([absolute, absolute - hist])
    return Sample(
        str(sample_id), ov.vehicle_id, float(t0), np.array(hist), svs, np.array(fut),
        ContextGrid(grid.cells, t=t0),
    )


def extract_windows(recording: RawRecording, th: float = 3.0, tf: float = 5.0,
                    stride: float = 1.0, window: float = 90.0, dt: float = STEP) -> list[Sample]:
    """Slide an ``th + tf`` window over every track and cut samples.

    Windows start at the track's first state and advance by ``stride``.
    Neighbours must be present over the whole history to enter the grid.
    """
    span = th + tf
    out = []
    for direction in sorted({tr.direction for tr in recording.tracks}):
        lanes = recording.lanes.get(direction)
        group = [tr for tr in recording.tracks if tr.direction == direction]
        if lanes is None:
            logger.warning("no lane geometry for direction %s; skipped", direction)
            continue
        starts = np.array([tr.t_start for tr in group])
        ends = np.array([tr.t_end for tr in group])
        for ov in group:
            if ov.dt is not None and abs(ov.dt - dt) > 1e-6:
                raise ResampleError(f"track {ov.vehicle_id!r} is not on the {dt} s grid")
            n = int(math.floor((ov.t_end - ov.t_start - span) / stride + 1e-9)) + 1
            for w in range(max(n, 0)):
                t0 = round(ov.t_start + w * stride + th, 9)
                alive = np.nonzero((starts <= t0 - th + 1e-6) & (ends >= t0 - 1e-6))[0]
                sid = f"{recording.source}:{ov.vehicle_id}:{t0:.1f}"
                try:
                    s = make_sample(sid, ov, [group[i] for i in alive], lanes, t0, window, dt=dt)
                except InvalidParameter as exc:
                    logger.warning("sample %s skipped: %s", sid, exc)
                    continue
                out.append(s)
    return out


@dataclass(frozen=True)
class SplitManifest:
    seed: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def to_json(self) -> str:
        doc = {"seed": self.seed, "train": list(self.train), "val": list(self.val),
               "test": list(self.test)}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        doc = json.loads(text)
        return cls(int(doc["seed"]), tuple(doc["train"]), tuple(doc["val"]), tuple(doc["test"]))


def split_dataset(samples: Sequence, seed: int, fractions=(0.7, 0.1, 0.2)) -> SplitManifest:
    """Shuffle sample ids with ``seed`` and cut them 70/10/20."""
    ids = [s.sample_id if isinstance(s, Sample) else str(s) for s in samples]
    if len(ids) < 10:
        raise InsufficientData(f"need at least 10 samples to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise InvalidParameter("sample ids are not unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_val = int(round(fractions[1] * len(ids)))
    perm = [ids[k] for k in order]
    return SplitManifest(
        int(seed), tuple(perm[:n_train]), tuple(perm[n_train : n_train + n_val]),
        tuple(perm[n_train + n_val :]),
    )


def write_samples(path, samples: Iterable[Sample]):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def read_samples(path) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return [Sample.from_json(json.loads(line)) for line in fh if line.strip()]


def write_sample_store(out_dir, samples: Sequence[Sample], manifest: SplitManifest,
                       meta: dict | None = None) -> Path:
    """Write ``train/val/test.jsonl`` and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {s.sample_id: s for s in samples}
    for name in ("train", "val", "test"):
        write_samples(out / f"{name}.jsonl", (by_id[i] for i in getattr(manifest, name)))
    doc = json.loads(manifest.to_json())
    doc["counts"] = {n: len(getattr(manifest, n)) for n in ("train", "val", "test")}
    doc.update(meta or {})
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return out
