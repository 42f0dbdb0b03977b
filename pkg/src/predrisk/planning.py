"""Ego candidate trajectories and piecewise-cubic object-vehicle trajectories."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidHorizon, InvalidParameter, OutOfHorizon, SplineError
from .scene import MIN_HEADING_SPEED, LaneGeometry, MotionState

AX_RANGE = (-5.0, 5.0)
HORIZON = 5.0
TIME_TOL = 1e-9


def _check_horizon(tf: float):
    if not (math.isfinite(tf) and tf > 0):
        raise InvalidHorizon(f"horizon must be positive, got {tf}")


def quintic_lateral(y0: float, vy0: float, ay0: float, yf: float, tf: float = HORIZON) -> np.ndarray:
    """Coefficients ``c0..c5`` of y(τ) = Σ c_k τ^k with zero end velocity and acceleration.

    τ is time since the start of the horizon. The six boundary conditions
    are assembled as a 6×6 system and solved directly.
    """
    _check_horizon(tf)
    T = float(tf)
    A = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, T, T**2, T**3, T**4, T**5],
        [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
        [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3],
    ], dtype=float)
    b = np.array([y0, vy0, ay0, yf, 0.0, 0.0], dtype=float)
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise InvalidHorizon(f"singular quintic system for tf={tf}") from exc


def _poly_eval(c: np.ndarray, tau, der: int = 0):
    c = np.polynomial.polynomial.polyder(c, der) if der else c
    return np.polynomial.polynomial.polyval(tau, c)


@dataclass(frozen=True)
class CandidateTrajectory:
    """Constant longitudinal acceleration plus a quintic lateral profile.

    Longitudinal speed is floored at zero: a braking candidate stops and
    stays put instead of reversing.
    """

    a_x: float
    y_target: float
    coeffs: np.ndarray
    x0: float
    vx0: float
    y0: float
    vy0: float
    ay0: float
    tf: float = HORIZON
    t0: float = 0.0

    @property
    def t_end(self) -> float:
        return self.t0 + self.tf

    def longitudinal(self, tau):
        """(x, vx, ax) at times ``tau`` since t0, with the no-reversing floor."""
        tau = np.asarray(tau, float)
        v0, a = self.vx0, self.a_x
        v = v0 + a * tau
        x = self.x0 + v0 * tau + 0.5 * a * tau**2
        acc = np.full_like(tau, a)
        if a < 0 and v0 > 0:
            stop = -v0 / a
            after = tau >= stop
            x = np.where(after, self.x0 + 0.5 * v0 * stop, x)
            v = np.where(after, 0.0, v)
            acc = np.where(after, 0.0, acc)
        elif v0 <= 0 and a <= 0:
            x = np.full_like(tau, self.x0)
            v = np.zeros_like(tau)
            acc = np.zeros_like(tau)
        elif v0 < 0:  # accelerating from a reversing state: held until speed turns positive
            start = -v0 / a
            before = tau < start
            x = np.where(before, self.x0, self.x0 + 0.5 * a * (tau - start) ** 2)
            v = np.where(before, 0.0, a * (tau - start))
            acc = np.where(before, 0.0, acc)
        return x, v, acc

    def sample(self, tau) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised (x, y, vx, vy) at offsets ``tau`` from t0."""
        tau = np.asarray(tau, float)
        x, vx, _ = self.longitudinal(tau)
        y = _poly_eval(self.coeffs, tau)
        vy = _poly_eval(self.coeffs, tau, 1)
        return x, y, vx, vy

    def lateral_residuals(self) -> np.ndarray:
        """Signed errors of the six lateral boundary conditions."""
        c, T = self.coeffs, self.tf
        return np.array([
            _poly_eval(c, 0.0) - self.y0,
            _poly_eval(c, 0.0, 1) - self.vy0,
            _poly_eval(c, 0.0, 2) - self.ay0,
            _poly_eval(c, T) - self.y_target,
            _poly_eval(c, T, 1),
            _poly_eval(c, T, 2),
        ])


def default_ax_grid(step: float = 0.5) -> np.ndarray:
    if step <= 0:
        raise InvalidParameter("a_x grid step must be positive")
    n = int(round((AX_RANGE[1] - AX_RANGE[0]) / step))
    return np.round(np.linspace(AX_RANGE[0], AX_RANGE[1], n + 1), 10)


def reachable_targets(y: float, lanes: LaneGeometry) -> list[float]:
    """Centers of the current lane and its immediate neighbours.

    A neighbour more than 1.5 lane widths away (across a median) is not
    reachable.
    """
    idx = lanes.lane_index(y)
    if idx is None:
        raise InvalidParameter(f"lateral position {y} is not on the lane map")
    centers = lanes.lane_centers
    here = centers[idx]
    return [
        float(centers[k]) for k in (idx - 1, idx, idx + 1)
        if 0 <= k < len(centers) and abs(centers[k] - here) <= 1.5 * lanes.lane_width + 1e-9
    ]


def candidates(
    av: MotionState,
    a_x_grid: Sequence[float] | None = None,
    lateral_targets: Sequence[float] | None = None,
    tf: float = HORIZON,
    lanes: LaneGeometry | None = None,
) -> list[CandidateTrajectory]:
    """Cartesian product of accelerations and lateral targets, a_x-major.

    Without explicit targets, the current and adjacent lane centers of
    ``lanes`` are used. Explicit targets off the lane map are skipped with
    a warning.
    """
    _check_horizon(tf)
    grid = default_ax_grid() if a_x_grid is None else np.asarray(a_x_grid, float)
    if np.any(grid < AX_RANGE[0] - 1e-12) or np.any(grid > AX_RANGE[1] + 1e-12):
        raise InvalidParameter(f"a_x values must lie in {list(AX_RANGE)}")
    if lateral_targets is None:
        if lanes is None:
            raise InvalidParameter("need lateral_targets or lanes")
        targets = reachable_targets(av.y, lanes)
    else:
        targets = []
        for y in lateral_targets:
            if lanes is not None and lanes.lane_index(y) is None:
                warnings.warn(f"lateral target {y} is off the lane map; skipped", stacklevel=2)
                continue
            targets.append(float(y))
    out = []
    for a in grid:
        for yf in targets:
            c = quintic_lateral(av.y, av.vy, av.ay, yf, tf)
            out.append(CandidateTrajectory(float(a), yf, c, av.x, av.vx, av.y, av.vy, av.ay, tf, av.t))
    return out


@dataclass(frozen=True)
class SplineTrajectory:
    """Piecewise cubics on uniform knots; ``coeffs[k, axis] = (a, b, c, d)`` in local time."""

    t0: float
    dt: float
    coeffs: np.ndarray  # (n, 2, 4)
    v0: tuple[float, float] = (0.0, 0.0)
    a0: tuple[float, float] = (0.0, 0.0)

    @property
    def n_segments(self) -> int:
        return self.coeffs.shape[0]

    @property
    def tf(self) -> float:
        return self.n_segments * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + self.tf

    @property
    def knots(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_segments + 1)

    def _locate(self, tau):
        k = np.clip(np.floor(tau / self.dt + 1e-12).astype(int), 0, self.n_segments - 1)
        return k, tau - k * self.dt

    def segment_eval(self, k: int, s, der: int = 0) -> np.ndarray:
        """Value (or derivative) of segment ``k`` at local time ``s``, both axes."""
        return np.array([_poly_eval(self.coeffs[k, ax], s, der) for ax in range(2)])

    def sample(self, tau, der: int = 0) -> np.ndarray:
        """``(len(tau), 2)`` values of the ``der``-th derivative at offsets from t0."""
        tau = np.atleast_1d(np.asarray(tau, float))
        k, s = self._locate(tau)
        c = self.coeffs[k]  # (m, 2, 4)
        s = s[:, None]
        if der == 0:
            return c[..., 0] + s * (c[..., 1] + s * (c[..., 2] + s * c[..., 3]))
        if der == 1:
            return c[..., 1] + s * (2 * c[..., 2] + 3 * s * c[..., 3])
        if der == 2:
            return 2 * c[..., 2] + 6 * s * c[..., 3]
        raise InvalidParameter("derivative order must be 0, 1 or 2")

    def knot_residuals(self) -> np.ndarray:
        """Max |jump| of value, first and second derivative over interior knots."""
        res = np.zeros(3)
        for k in range(1, self.n_segments):
            for der in range(3):
                left = self.segment_eval(k - 1, self.dt, der)
                right = self.segment_eval(k, 0.0, der)
                res[der] = max(res[der], float(np.max(np.abs(left - right))))
        return res


SPLINE_MODES = ("start_clamped", "initial_value")


def _spline_system(n: int, h: float, mode: str) -> np.ndarray:
    A = np.zeros((4 * n, 4 * n))
    row = 0
    for k in range(n):
        j = 4 * k
        A[row, j] = 1.0  # s_k(0) = p_k
        A[row + 1, j : j + 4] = [1.0, h, h**2, h**3]  # s_k(h) = p_{k+1}
        row += 2
    for k in range(1, n):
        i, j = 4 * (k - 1), 4 * k
        A[row, i : i + 4] = [0.0, 1.0, 2 * h, 3 * h**2]
        A[row, j + 1] = -1.0
        A[row + 1, i : i + 4] = [0.0, 0.0, 2.0, 6 * h]
        A[row + 1, j + 2] = -2.0
        row += 2
    A[row, 1] = 1.0  # s_0'(0) = v0
    row += 1
    if mode == "initial_value":
        A[row, 2] = 2.0  # s_0''(0) = a0
    else:  # not-a-knot at the last interior knot
        A[row, 4 * (n - 2) + 3] = 1.0
        A[row, 4 * (n - 1) + 3] = -1.0
    return A


def spline_fit(
    points,
    v0=(0.0, 0.0),
    a0=(0.0, 0.0),
    dt: float = 0.2,
    t0: float = 0.0,
    mode: str = "start_clamped",
) -> SplineTrajectory:
    """Fit C² piecewise cubics through ``points`` (``(n+1, 2)``, uniform ``dt``).

    Each segment interpolates both of its end points and interior knots
    carry C¹ and C² continuity. That leaves two conditions:

    ``"start_clamped"`` (default)
        initial velocity ``v0`` at t0 and not-a-knot at the final interior
        knot. Well conditioned and reproduces cubics exactly.
    ``"initial_value"``
        initial velocity ``v0`` and acceleration ``a0`` both at t0. The
        system then behaves like a forward recurrence whose round-off grows
        by roughly 3.7x per segment, so it is only usable for short
        sequences.
    """
    if mode not in SPLINE_MODES:
        raise InvalidParameter(f"mode must be one of {SPLINE_MODES}")
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise InvalidParameter("points must be an (n+1, 2) array with n >= 2")
    if not (dt > 0 and np.all(np.isfinite(pts))):
        raise InvalidParameter("dt must be positive and points finite")
    n = len(pts) - 1
    A = _spline_system(n, dt, mode)
    rhs = np.zeros((4 * n, 2))
    rhs[0 : 2 * n : 2] = pts[:-1]
    rhs[1 : 2 * n : 2] = pts[1:]
    rhs[4 * n - 2] = v0
    if mode == "initial_value":
        rhs[4 * n - 1] = a0
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SplineError("singular spline system") from exc
    if not np.all(np.isfinite(sol)):
        raise SplineError("spline solve produced non-finite coefficients")
    coeffs = sol.reshape(n, 4, 2).transpose(0, 2, 1)
    return SplineTrajectory(float(t0), float(dt), coeffs,
                            tuple(map(float, v0)), tuple(map(float, a0)))


def spline_from_prediction(state: MotionState, means, dt: float = 0.2,
                           mode: str = "start_clamped") -> SplineTrajectory:
    """Spline through the current position followed by predicted mean positions."""
    pts = np.vstack([[state.x, state.y], np.asarray(means, float)])
    return spline_fit(pts, (state.vx, state.vy), (state.ax, state.ay), dt, state.t, mode)


def _heading(vx, vy, road_heading: float = 0.0):
    vx, vy = np.asarray(vx, float), np.asarray(vy, float)
    return np.where(np.hypot(vx, vy) < MIN_HEADING_SPEED, road_heading, np.arctan2(vy, vx))


def sample_poses(traj, tau) -> np.ndarray:
    """``(len(tau), 3)`` array of (x, y, heading) at offsets from t0."""
    tau = np.atleast_1d(np.asarray(tau, float))
    if isinstance(traj, CandidateTrajectory):
        x, y, vx, vy = traj.sample(tau)
    else:
        p, v = traj.sample(tau), traj.sample(tau, 1)
        x, y, vx, vy = p[:, 0], p[:, 1], v[:, 0], v[:, 1]
    return np.column_stack([x, y, _heading(vx, vy)])


def eval_pose(traj, t: float) -> tuple[float, float, float]:
    """(x, y, heading) at absolute time ``t`` within the trajectory horizon."""
    if not (traj.t0 - TIME_TOL <= t <= traj.t_end + TIME_TOL):
        raise OutOfHorizon(f"t={t} outside [{traj.t0}, {traj.t_end}]")
    tau = min(max(t - traj.t0, 0.0), traj.tf)
    x, y, h = sample_poses(traj, [tau])[0]
    return float(x), float(y), float(h)


def trajectory_csv(traj, step: float = 0.05) -> str:
    """CSV dump (t, x, y, heading) on a uniform grid, for plotting."""
    n = int(round(traj.tf / step))
    tau = np.linspace(0.0, traj.tf, n + 1)
    poses = sample_poses(traj, tau)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "y", "heading"])
    for t, (x, y, h) in zip(traj.t0 + tau, poses):
        w.writerow([f"{t:.6f}", f"{x:.6f}", f"{y:.6f}", f"{h:.6f}"])
    return buf.getvalue()
