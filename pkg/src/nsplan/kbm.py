"""Differentiable kinematic bicycle model.

State layout is ``[x, y, v, psi]`` and control layout ``[a, delta]``.  The
array functions accept arbitrary leading batch axes, so one call can roll
out every planning mode of every sample.  Gradients are carried forward
through the RK2 recurrence as tangents with respect to
``(a_0..a_{H-1}, delta_0..delta_{H-1}, v0)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

X, Y, V, PSI = range(4)


@dataclass(frozen=True)
class KbmParams:
    wheelbase: float = 2.7
    dt: float = 0.5
    horizon: int = 6
    a_max: float = 4.0
    delta_max: float = 0.6
    residual_scale: float = 0.5  # lambda: bound on the residual offset per axis

    def __post_init__(self):
        if self.wheelbase <= 0 or self.dt <= 0 or self.horizon <= 0:
            raise ValueError("wheelbase, dt and horizon must be positive")
        if not 0 < self.delta_max < math.pi / 2:
            raise ValueError("delta_max must lie in (0, pi/2)")

    @property
    def max_curvature(self) -> float:
        return math.tan(self.delta_max) / self.wheelbase

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.horizon + 1)


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    v: float = 0.0
    psi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.psi], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(a) for a in arr))


@dataclass
class Trajectory:
    """H timestamped waypoints; ``origin`` is the state at time ``t0``."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    origin: VehicleState = field(default_factory=VehicleState)
    t0: float = 0.0

    @classmethod
    def from_states(cls, states: np.ndarray, dt: float, origin: VehicleState, t0: float = 0.0) -> "Trajectory":
        states = np.asarray(states, dtype=float)
        t = t0 + dt * np.arange(1, len(states) + 1)
        return cls(t, states[:, X].copy(), states[:, Y].copy(), states[:, V].copy(), states[:, PSI].copy(), origin, t0)

    @property
    def horizons(self) -> np.ndarray:
        return self.t - self.t0

    @property
    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=-1)

    @property
    def states(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.v, self.psi], axis=-1)

    def __len__(self) -> int:
        return len(self.t)

    def to_dict(self) -> dict:
        return {
            "origin": [self.origin.x, self.origin.y, self.origin.v, self.origin.psi],
            "t0": self.t0, "t": self.t.tolist(), "x": self.x.tolist(), "y": self.y.tolist(),
            "v": self.v.tolist(), "psi": self.psi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("t", "x", "y", "v", "psi")),
                   origin=VehicleState(*d["origin"]), t0=float(d.get("t0", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "y", "v", "psi"])
        for row in zip(self.t, self.x, self.y, self.v, self.psi):
            w.writerow([repr(float(c)) for c in row])
        return buf.getvalue()


@dataclass
class Jacobians:
    """Sensitivities of waypoint positions; axis 1 indexes (x, y)."""

    accel: np.ndarray  # (H, 2, H): d pos_k / d a_j
    steer: np.ndarray  # (H, 2, H): d pos_k / d delta_j
    v0: np.ndarray     # (H, 2)


def wrap_angle(psi):
    """Wrap to (-pi, pi]."""
    w = np.remainder(np.asarray(psi, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w <= -np.pi, w + 2 * np.pi, w)


def bound_controls(raw, p: KbmParams) -> np.ndarray:
    """Map unbounded head outputs ``[..., 2]`` to ``a_max*tanh``, ``delta_max*tanh``."""
    raw = np.asarray(raw, dtype=float)
    return np.stack([p.a_max * np.tanh(raw[..., 0]), p.delta_max * np.tanh(raw[..., 1])], axis=-1)


def derivative(s, c, p: KbmParams) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    v, psi = s[..., V], s[..., PSI]
    return np.stack([
        v * np.cos(psi),
        v * np.sin(psi),
        c[..., 0],
        v * np.tan(c[..., 1]) / p.wheelbase,
    ], axis=-1)


def _state_jac(s, c, L):
    """d f / d state, shape (..., 4, 4)."""
    v, psi = s[..., V], s[..., PSI]
    J = np.zeros(s.shape + (4,))
    J[..., X, V] = np.cos(psi)
    J[..., X, PSI] = -v * np.sin(psi)
    J[..., Y, V] = np.sin(psi)
    J[..., Y, PSI] = v * np.cos(psi)
    J[..., PSI, V] = np.tan(c[..., 1]) / L
    return J


def _control_jac(s, c, L):
    """d f / d control, shape (..., 4, 2)."""
    J = np.zeros(s.shape[:-1] + (4, 2))
    J[..., V, 0] = 1.0
    J[..., PSI, 1] = s[..., V] / (L * np.cos(c[..., 1]) ** 2)
    return J


def _step(s, c, p: KbmParams, tan_s=None, tan_c=None):
    """One midpoint step; optionally pushes tangents ``(..., 4, P)`` along."""
    dt, L = p.dt, p.wheelbase
    k1 = derivative(s, c, p)
    mid = s + 0.5 * dt * k1
    mid_clamped = mid[..., V] < 0
    mid[..., V] = np.maximum(mid[..., V], 0.0)
    k2 = derivative(mid, c, p)
    new = s + dt * k2
    clamped = new[..., V] < 0
    new[..., V] = np.maximum(new[..., V], 0.0)
    new[..., PSI] = wrap_angle(new[..., PSI])
    if tan_s is None:
        return new, None

    k1_t = _state_jac(s, c, L) @ tan_s + _control_jac(s, c, L) @ tan_c
    mid_t = tan_s + 0.5 * dt * k1_t
    mid_t[..., V, :] *= ~mid_clamped[..., None]
    k2_t = _state_jac(mid, c, L) @ mid_t + _control_jac(mid, c, L) @ tan_c
    new_t = tan_s + dt * k2_t
    new_t[..., V, :] *= ~clamped[..., None]
    return new, new_t


def rk2_step(s: VehicleState, c, p: KbmParams) -> VehicleState:
    """Midpoint RK2 with the control held over the step; v clamped at 0, psi wrapped."""
    new, _ = _step(s.as_array(), np.asarray(c, dtype=float), p)
    return VehicleState.from_array(new)


def rollout_arrays(s0, controls, p: KbmParams, grad: bool = False):
    """Batched rollout.

    ``s0`` is ``(..., 4)`` and ``controls`` ``(..., H, 2)``.  Returns states
    ``(..., H, 4)`` and, with ``grad``, tangents ``(..., H, 4, 2H+1)``
    ordered ``(a_0..a_{H-1}, delta_0..delta_{H-1}, v0)``.
    """
    s = np.array(s0, dtype=float)
    controls = np.asarray(controls, dtype=float)
    H = controls.shape[-2]
    batch = s.shape[:-1]
    states = np.empty(batch + (H, 4))
    tangents = None
    tan_s = None
    if grad:
        P = 2 * H + 1
        tangents = np.empty(batch + (H, 4, P))
        tan_s = np.zeros(batch + (4, P))
        tan_s[..., V, 2 * H] = 1.0
    for k in range(H):
        c = controls[..., k, :]
        tan_c = None
        if grad:
            tan_c = np.zeros(batch + (2, P))
            tan_c[..., 0, k] = 1.0
            tan_c[..., 1, H + k] = 1.0
        s, tan_s = _step(s, c, p, tan_s, tan_c)
        states[..., k, :] = s
        if grad:
            tangents[..., k, :, :] = tan_s
    return states, tangents


def _check_len(controls, p: KbmParams) -> np.ndarray:
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (p.horizon, 2):
        raise ValueError(f"controls must have shape ({p.horizon}, 2), got {controls.shape}")
    return controls


def rollout(s0: VehicleState, controls, p: KbmParams) -> Trajectory:
    controls = _check_len(controls, p)
    states, _ = rollout_arrays(s0.as_array(), controls, p)
    return Trajectory.from_states(states, p.dt, s0)


def rollout_with_gradients(s0: VehicleState, controls, p: KbmParams) -> tuple[Trajectory, Jacobians]:
    controls = _check_len(controls, p)
    H = p.horizon
    states, tan = rollout_arrays(s0.as_array(), controls, p, grad=True)
    pos = tan[:, :2, :]
    jac = Jacobians(accel=pos[:, :, :H].copy(), steer=pos[:, :, H:2 * H].copy(), v0=pos[:, :, 2 * H].copy())
    return Trajectory.from_states(states, p.dt, s0), jac


def implied_curvature(traj: Trajectory, tol: float = 1e-9) -> np.ndarray:
    """|heading change| / chord length between consecutive waypoints (origin included)."""
    o = traj.origin
    xs = np.concatenate([[o.x], traj.x])
    ys = np.concatenate([[o.y], traj.y])
    psis = np.concatenate([[o.psi], traj.psi])
    chord = np.hypot(np.diff(xs), np.diff(ys))
    dpsi = np.abs(wrap_angle(np.diff(psis)))
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(chord > tol, dpsi / np.maximum(chord, tol), np.where(dpsi > tol, np.inf, 0.0))
    return kappa


def is_feasible(traj: Trajectory, p: KbmParams, tol: float = 1e-6) -> bool:
    kappa = implied_curvature(traj)
    speeds = np.concatenate([[traj.origin.v], traj.v])
    accel = np.abs(np.diff(speeds)) / p.dt
    return bool(np.all(kappa <= p.max_curvature + tol) and np.all(accel <= p.a_max + tol))
