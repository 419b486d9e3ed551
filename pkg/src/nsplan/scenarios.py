"""Parametric driving scenarios with scripted agents and a rule-following expert.

World frame: the road runs along ``+x`` with lane centres at
``y = k * lane_width``.  Each scenario carries a pre-simulated ego log.  The
expert plan for frame ``i`` is simply the logged states ``i+1 .. i+H``, and
the open-loop evaluation never feeds a plan back into the world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conditioning import speed_target, ConditioningConfig
from .kbm import KbmParams, Trajectory, VehicleState, is_feasible, rk2_step, wrap_angle
from .predicates import (
    Action, Attribute, Category, EgoFacts, HISTORY_WINDOW, Nav, ObjectFact, RelPos,
    SceneFacts, Speed, compute_ttc, parse_facts, serialize_facts,
)
from .rules import ArbitrationConfig, TemplateGenerator, decide

TEMPLATES = ("empty_road", "lead_vehicle", "pedestrian_crossing", "lane_change", "intersection_turn")

EGO_LENGTH = 4.0
EGO_WIDTH = 1.8
SENSOR_RANGE = 60.0
CORRIDOR_MARGIN = 0.3
CONFLICT_HORIZON = 8.0


class UnknownTemplate(ValueError):
    pass


class InfeasibleExpert(ValueError):
    pass


# ---------------------------------------------------------------------------
# world


@dataclass(frozen=True)
class Agent:
    """Constant-heading mover; optionally brakes at ``decel`` from ``brake_t`` on."""

    id: int
    category: Category
    x0: float
    y0: float
    heading: float
    speed: float
    length: float
    width: float
    decel: float = 0.0
    brake_t: float = 0.0
    appear_t: float = 0.0

    def speed_at(self, t: float) -> float:
        if self.decel <= 0 or t <= self.brake_t:
            return self.speed
        return max(self.speed - self.decel * (t - self.brake_t), 0.0)

    def travelled(self, t: float) -> float:
        if self.decel <= 0 or t <= self.brake_t:
            return self.speed * t
        s = self.speed * self.brake_t
        tb = t - self.brake_t
        t_stop = self.speed / self.decel
        if tb >= t_stop:
            return s + self.speed * t_stop / 2
        return s + self.speed * tb - 0.5 * self.decel * tb * tb

    def pose(self, t: float) -> tuple[float, float, float]:
        d = self.travelled(t)
        return self.x0 + d * math.cos(self.heading), self.y0 + d * math.sin(self.heading), self.heading

    def box(self, t: float) -> tuple[float, float, float, float, float]:
        x, y, h = self.pose(t)
        return x, y, h, self.length, self.width


@dataclass(frozen=True)
class Route:
    """Dense reference polyline for the ego lane centre."""

    points: np.ndarray
    turn_end_x: float = math.inf  # past this x the nav command reverts to straight

    @classmethod
    def straight(cls, x_from=-50.0, x_to=400.0) -> "Route":
        xs = np.arange(x_from, x_to, 0.5)
        return cls(np.stack([xs, np.zeros_like(xs)], axis=1))

    @classmethod
    def left_turn(cls, x_turn: float, radius: float) -> "Route":
        xs = np.arange(-50.0, x_turn, 0.5)
        seg1 = np.stack([xs, np.zeros_like(xs)], axis=1)
        ang = np.linspace(-math.pi / 2, 0.0, max(int(radius * math.pi / 2 / 0.5), 8), endpoint=False)
        seg2 = np.stack([x_turn + radius * np.cos(ang), radius + radius * np.sin(ang)], axis=1)
        ys = np.arange(radius, radius + 300.0, 0.5)
        seg3 = np.stack([np.full_like(ys, x_turn + radius), ys], axis=1)
        return cls(np.concatenate([seg1, seg2, seg3]), turn_end_x=x_turn + radius - 0.5)

    def lookahead(self, x: float, y: float, dist: float, offset: float) -> np.ndarray:
        pts = self.points
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        normal = np.stack([-seg[:, 1], seg[:, 0]], axis=1) / seg_len[:, None]
        shifted = pts[:-1] + offset * normal
        i = int(np.argmin(np.hypot(shifted[:, 0] - x, shifted[:, 1] - y)))
        cum = np.cumsum(seg_len[i:])
        j = i + int(np.searchsorted(cum, dist))
        j = min(j, len(shifted) - 1)
        return shifted[j]


@dataclass
class Scenario:
    id: str
    template: str
    params: dict
    seed: int
    nav: Nav
    agents: list[Agent]
    route: Route
    p: KbmParams
    duration: float = 4.0
    lane_width: float = 3.5
    # (frame index, agent id) -> ttc reported in the facts instead of the computed one
    ttc_overrides: dict = field(default_factory=dict)
    log: np.ndarray = None        # (N + H + 1, 4) ego states at dt spacing
    log_lanes: list = None
    log_decisions: list = None

    @property
    def n_frames(self) -> int:
        return int(round(self.duration / self.p.dt))

    def frame_time(self, i: int) -> float:
        return i * self.p.dt

    def ego_state(self, i: int) -> VehicleState:
        return VehicleState.from_array(self.log[i])

    def expert(self, i: int) -> Trajectory:
        """Logged future of frame ``i`` in world coordinates."""
        H = self.p.horizon
        return Trajectory.from_states(self.log[i + 1:i + 1 + H], self.p.dt, self.ego_state(i), self.frame_time(i))

    def nav_at(self, state: VehicleState) -> Nav:
        if self.nav != Nav.STRAIGHT and state.x >= self.route.turn_end_x:
            return Nav.STRAIGHT
        return self.nav

    def facts(self, i: int) -> SceneFacts:
        return extract_facts(self, i)


def _ego_frame(state: VehicleState, x: float, y: float) -> tuple[float, float]:
    """(longitudinal, lateral-left) coordinates of a world point."""
    dx, dy = x - state.x, y - state.y
    c, s = math.cos(state.psi), math.sin(state.psi)
    return c * dx + s * dy, -s * dx + c * dy


def _half_extent(length: float, width: float, rel_heading: float) -> tuple[float, float]:
    c, s = abs(math.cos(rel_heading)), abs(math.sin(rel_heading))
    return c * length / 2 + s * width / 2, s * length / 2 + c * width / 2


def _rel_pos(lon: float, lat: float, half_lane: float) -> RelPos:
    """Front means ahead inside the ego lane; the rest is binned by bearing."""
    if lon > 0 and abs(lat) < half_lane:
        return RelPos.FRONT
    bearing = math.degrees(math.atan2(lat, lon))
    if 0 <= bearing <= 70:
        return RelPos.FRONT_LEFT
    if -70 <= bearing < 0:
        return RelPos.FRONT_RIGHT
    if 70 < bearing <= 110:
        return RelPos.LEFT
    if -110 <= bearing < -70:
        return RelPos.RIGHT
    return RelPos.REAR


def conflict_gap(state: VehicleState, agent: Agent, t: float):
    """Bumper gap and closing speed when ``agent`` will sit in the ego corridor on arrival.

    Returns ``(gap, closing)`` or ``None`` when the agent is behind, opening,
    or laterally clear at the predicted arrival time.
    """
    ax, ay, ah = agent.pose(t)
    lon, lat = _ego_frame(state, ax, ay)
    if lon <= 0:
        return None
    rel_h = ah - state.psi
    v_a = agent.speed_at(t)
    v_lon = v_a * math.cos(rel_h)
    v_lat = v_a * math.sin(rel_h)
    ext_lon, ext_lat = _half_extent(agent.length, agent.width, rel_h)
    gap = max(lon - EGO_LENGTH / 2 - ext_lon, 0.0)
    closing = state.v - v_lon
    half = EGO_WIDTH / 2 + ext_lat + CORRIDOR_MARGIN
    if closing <= 1e-6:
        # not closing, but a same-lane lead still constrains following distance
        return (gap, closing) if abs(lat) < half else None
    # window in which the ego body overlaps the agent longitudinally
    t_in = gap / closing
    t_out = (gap + EGO_LENGTH + 2 * ext_lon) / closing
    # window in which the agent sits inside the ego corridor
    if abs(v_lat) < 1e-6:
        if abs(lat) >= half:
            return None
        c_in, c_out = 0.0, math.inf
    else:
        c_in, c_out = sorted(((-half - lat) / v_lat, (half - lat) / v_lat))
    if max(t_in, c_in) < min(t_out, c_out) and c_out > 0 and t_in < CONFLICT_HORIZON:
        return gap, closing
    return None


def extract_facts(scn: Scenario, i: int) -> SceneFacts:
    """Scene facts for frame ``i``, quantised through the canonical text form."""
    t = scn.frame_time(i)
    state = scn.ego_state(i)
    hist = tuple(float(v) for v in scn.log[max(0, i - HISTORY_WINDOW):i, 2])
    ego = EgoFacts(
        speed=max(state.v, 0.0), heading=float(wrap_angle(state.psi)), nav=scn.nav_at(state),
        lane_id=scn.log_lanes[i] if scn.log_lanes else 0, history_speeds=hist,
    )
    objects = []
    for a in scn.agents:
        if t < a.appear_t:
            continue
        ax, ay, ah = a.pose(t)
        lon, lat = _ego_frame(state, ax, ay)
        centre = math.hypot(lon, lat)
        if centre > SENSOR_RANGE:
            continue
        rel_h = float(wrap_angle(ah - state.psi))
        v_a = a.speed_at(t)
        if v_a < 0.2:
            attr = Attribute.STATIONARY
        elif a.category in (Category.PEDESTRIAN, Category.CYCLIST) and abs(v_a * math.sin(rel_h)) > 0.5:
            attr = Attribute.CROSSING
        else:
            attr = Attribute.MOVING
        conflict = conflict_gap(state, a, t)
        ttc = math.inf
        if conflict is not None:
            ttc = compute_ttc(conflict[0], conflict[1])
        ttc = scn.ttc_overrides.get((i, a.id), ttc)
        objects.append(ObjectFact(
            id=a.id, category=a.category, distance=max(centre - EGO_LENGTH / 2, 0.0), speed=v_a,
            heading=rel_h, relative_pos=_rel_pos(lon, lat, scn.lane_width / 2), attribute=attr, ttc=max(ttc, 1e-3),
        ))
    facts = SceneFacts(ego=ego, objects=tuple(objects), frame_id=f"{scn.id}-f{i:02d}")
    return parse_facts(serialize_facts(facts))


# ---------------------------------------------------------------------------
# expert driver


def _expert_control(scn: Scenario, state: VehicleState, t: float, facts: SceneFacts,
                    target_lane: int, hold_until: float, arb: ArbitrationConfig, cond: ConditioningConfig):
    p = scn.p
    decision, _ = decide(facts, TemplateGenerator(arb), arb)
    if decision.speed == Speed.ZERO:
        # once told to stop, stay stopped for a full planning horizon
        hold_until = max(hold_until, t + p.horizon * p.dt)
    v_t = 0.0 if t < hold_until else speed_target(decision.speed, state.v, cond)
    a = 1.2 * (v_t - state.v)
    if v_t == 0.0 and state.v < 1.0:
        a = -state.v / p.dt  # creep to an exact standstill
    if decision.action == Action.EMERGENCY_STOP:
        a = -p.a_max
    # stay behind anything that will occupy the corridor
    for ag in scn.agents:
        if t < ag.appear_t:
            continue
        c = conflict_gap(state, ag, t)
        if c is None:
            continue
        gap, closing = c
        lead_v = state.v - closing
        desired = 4.0 + 1.5 * state.v
        s_star = desired + state.v * closing / (2 * math.sqrt(2.0 * 3.0))
        a_idm = 2.0 * (1 - (state.v / max(v_t, state.v, 1.0)) ** 4 - (s_star / max(gap, 0.1)) ** 2)
        if lead_v < 0.5:
            # brake to a standstill before a (near-)stationary conflict
            stop_room = max(gap - 3.0, 0.05)
            a_idm = min(a_idm, -state.v ** 2 / (2 * stop_room))
        a = min(a, a_idm)
    a = float(np.clip(a, -p.a_max, p.a_max))
    if state.v <= 1e-9 and a < 0:
        a = 0.0

    if decision.action in (Action.CHANGE_LANE_LEFT, Action.CHANGE_LANE_RIGHT):
        step = 1 if decision.action == Action.CHANGE_LANE_LEFT else -1
        nearest_lane = int(round(_lateral_offset(scn, state) / scn.lane_width))
        if target_lane == nearest_lane:
            target_lane += step
    look = max(6.0, 1.2 * state.v)
    tx, ty = scn.route.lookahead(state.x, state.y, look, target_lane * scn.lane_width)
    alpha = math.atan2(ty - state.y, tx - state.x) - state.psi
    alpha = float(wrap_angle(alpha))
    dist = math.hypot(tx - state.x, ty - state.y)
    delta = math.atan2(2 * p.wheelbase * math.sin(alpha), max(dist, 1e-3))
    delta = float(np.clip(delta, -p.delta_max, p.delta_max))
    return (a, delta), target_lane, hold_until, decision


def _lateral_offset(scn: Scenario, state: VehicleState) -> float:
    pts = scn.route.points
    i = int(np.argmin(np.hypot(pts[:, 0] - state.x, pts[:, 1] - state.y)))
    j = min(i + 1, len(pts) - 1)
    tx, ty = pts[j] - pts[max(j - 1, 0)]
    n = math.hypot(tx, ty)
    return (-(ty / n) * (state.x - pts[i, 0]) + (tx / n) * (state.y - pts[i, 1]))


def simulate_log(scn: Scenario, arb: ArbitrationConfig | None = None, cond: ConditioningConfig | None = None) -> Scenario:
    arb = arb or ArbitrationConfig()
    cond = cond or ConditioningConfig()
    p = scn.p
    steps = scn.n_frames + p.horizon
    state = VehicleState.from_array(scn.log[0])
    states = [state.as_array()]
    lanes = [0]
    decisions = []
    target_lane = 0
    hold_until = -math.inf
    for i in range(steps):
        scn.log = np.array(states + [states[-1]] * (steps + 1 - len(states)))
        scn.log_lanes = lanes + [lanes[-1]] * (steps + 1 - len(lanes))
        facts = extract_facts(scn, i)
        control, target_lane, hold_until, dec = _expert_control(
            scn, state, scn.frame_time(i), facts, target_lane, hold_until, arb, cond)
        decisions.append(dec)
        state = rk2_step(state, control, p)
        states.append(state.as_array())
        lanes.append(target_lane)
    scn.log = np.array(states)
    scn.log_lanes = lanes
    scn.log_decisions = decisions
    full = Trajectory.from_states(scn.log[1:], p.dt, VehicleState.from_array(scn.log[0]))
    if not is_feasible(full, p):
        raise InfeasibleExpert(f"{scn.id}: expert log violates kinematic bounds")
    return scn


# ---------------------------------------------------------------------------
# templates


def _pick(params: dict, key: str, rng: np.random.Generator, lo: float, hi: float) -> float:
    if key in params:
        return float(params[key])
    return float(rng.uniform(lo, hi))


def build_scenario(template: str, params: dict | None = None, seed: int = 0,
                   p: KbmParams | None = None, duration: float = 4.0) -> Scenario:
    """Deterministic in ``(template, params, seed)``; unspecified params are drawn from the seed."""
    if template not in TEMPLATES:
        raise UnknownTemplate(f"unknown scenario template {template!r}; expected one of {TEMPLATES}")
    params = dict(params or {})
    p = p or KbmParams()
    rng = np.random.default_rng([TEMPLATES.index(template), seed])
    agents: list[Agent] = []
    overrides = {}
    route = Route.straight()
    nav = Nav.STRAIGHT

    if template == "empty_road":
        v0 = _pick(params, "v0", rng, 4.0, 12.0)
    elif template == "lead_vehicle":
        v0 = _pick(params, "v0", rng, 6.0, 12.0)
        gap = _pick(params, "gap", rng, 8.0, 25.0)
        lead_v = _pick(params, "lead_speed", rng, 0.3 * v0, 0.9 * v0)
        decel = _pick(params, "lead_decel", rng, 0.0, 3.0)
        brake_t = _pick(params, "brake_t", rng, 0.0, 2.0)
        agents.append(Agent(1, Category.VEHICLE, EGO_LENGTH / 2 + gap + 2.25, 0.0, 0.0, lead_v, 4.5, 1.9, decel, brake_t))
    elif template == "pedestrian_crossing":
        v0 = _pick(params, "v0", rng, 5.0, 10.0)
        min_gap = v0 ** 2 / (2 * 3.0) + 2.0
        gap = _pick(params, "gap", rng, min_gap, min_gap + 10.0)
        walk = _pick(params, "walk_speed", rng, 0.8, 1.6)
        lateral = _pick(params, "lateral", rng, -3.5, -0.5)
        lon = math.sqrt(max((gap + EGO_LENGTH / 2) ** 2 - lateral ** 2, 0.0))
        agents.append(Agent(1, Category.PEDESTRIAN, lon, lateral, math.pi / 2, walk, 0.6, 0.6))
        if "ttc" in params:
            overrides[(0, 1)] = float(params["ttc"])
    elif template == "lane_change":
        v0 = _pick(params, "v0", rng, 6.0, 12.0)
        gap = _pick(params, "gap", rng, 25.0, 45.0)
        agents.append(Agent(1, Category.BARRIER, EGO_LENGTH / 2 + gap + 2.25, 0.0, 0.0, 0.0, 4.5, 2.0))
        if params.get("oncoming", rng.uniform() < 0.3):
            agents.append(Agent(2, Category.VEHICLE, 120.0, 7.0, math.pi, 8.0, 4.5, 1.9))
    else:  # intersection_turn
        v0 = _pick(params, "v0", rng, 4.0, 8.0)
        x_turn = _pick(params, "turn_at", rng, 12.0, 22.0)
        radius = _pick(params, "radius", rng, 9.0, 12.0)
        route = Route.left_turn(x_turn, radius)
        nav = Nav.LEFT
    scn_id = f"{template}-{seed:04d}"
    scn = Scenario(scn_id, template, params, seed, nav, agents, route, p, duration, ttc_overrides=overrides)
    scn.log = np.array([[0.0, 0.0, v0, 0.0]])
    return simulate_log(scn)


def case_study_scenario(p: KbmParams | None = None) -> Scenario:
    """Ego at 6.9 m/s, a pedestrian 4.5 m ahead clearing the lane, reported TTC 0.89 s."""
    return build_scenario(
        "pedestrian_crossing",
        {"v0": 6.9, "gap": 4.5, "ttc": 0.89, "lateral": 0.3, "walk_speed": 1.2},
        seed=0, p=p,
    )


# ---------------------------------------------------------------------------
# geometry and metrics


def obb_corners(cx, cy, yaw, length, width) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def obb_overlap(a, b) -> bool:
    """Separating-axis test on two oriented rectangles ``(cx, cy, yaw, length, width)``.

    Strict convention: touching edges do not count as an overlap.
    """
    ca, cb = obb_corners(*a), obb_corners(*b)
    for yaw in (a[2], b[2]):
        for axis in ((math.cos(yaw), math.sin(yaw)), (-math.sin(yaw), math.cos(yaw))):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True


def collision_metric(pred: Trajectory, scn: Scenario, t: float | None = None) -> bool:
    """Whether the ego box along ``pred`` overlaps any agent at any waypoint time."""
    for k in range(len(pred)):
        tk = float(pred.t[k])
        ego = (pred.x[k], pred.y[k], pred.psi[k], EGO_LENGTH, EGO_WIDTH)
        for ag in scn.agents:
            if obb_overlap(ego, ag.box(tk)):
                return True
    return False


class HorizonMismatch(ValueError):
    pass


class InsufficientFrames(ValueError):
    pass


HORIZONS = (1.0, 2.0, 3.0)


def _horizon_index(traj: Trajectory, h: float) -> int:
    k = int(np.argmin(np.abs(traj.horizons - h)))
    return k


def l2_metric(pred: Trajectory, expert: Trajectory) -> dict:
    """Euclidean error at the waypoints nearest 1, 2 and 3 s, plus their mean."""
    if len(pred) != len(expert) or not np.allclose(pred.t, expert.t, atol=1e-9):
        raise HorizonMismatch("prediction and expert timestamps differ")
    dist = np.hypot(pred.x - expert.x, pred.y - expert.y)
    out = {f"{int(h)}s": float(dist[_horizon_index(pred, h)]) for h in HORIZONS}
    out["avg"] = float(np.mean([out["1s"], out["2s"], out["3s"]]))
    return out


def tpc_pair(prev: Trajectory, nxt: Trajectory) -> dict:
    """RMS deviation of time-aligned waypoints, bucketed by ``prev``'s horizon into (0,1], (1,2], (2,3]."""
    pairs = []
    for k, tk in enumerate(prev.t):
        j = np.flatnonzero(np.abs(nxt.t - tk) < 1e-6)
        if len(j):
            d = math.hypot(prev.x[k] - nxt.x[j[0]], prev.y[k] - nxt.y[j[0]])
            pairs.append((tk - prev.t0, d))
    if not pairs:
        raise HorizonMismatch("plans share no timestamps")
    out = {}
    lo = 0.0
    for h in HORIZONS:
        ds = [d for hz, d in pairs if lo + 1e-9 < hz <= h + 1e-9]
        out[f"{int(h)}s"] = float(math.sqrt(np.mean(np.square(ds)))) if ds else 0.0
        lo = h
    return out


def tpc_metric(plans) -> dict:
    plans = list(plans)
    if len(plans) < 2:
        raise InsufficientFrames("TPC needs at least two consecutive plans")
    per = [tpc_pair(a, b) for a, b in zip(plans, plans[1:])]
    out = {k: float(np.mean([r[k] for r in per])) for k in ("1s", "2s", "3s")}
    out["avg"] = float(np.mean([out["1s"], out["2s"], out["3s"]]))
    return out


def to_world(traj: Trajectory, pose: VehicleState, t0: float, ego_heading: float) -> Trajectory:
    """Map an ego-local plan into world coordinates at time ``t0``."""
    rot = pose.psi - ego_heading
    c, s = math.cos(rot), math.sin(rot)
    x = pose.x + c * traj.x - s * traj.y
    y = pose.y + s * traj.x + c * traj.y
    origin = VehicleState(pose.x, pose.y, traj.origin.v, pose.psi)
    return Trajectory(traj.horizons + t0, x, y, traj.v.copy(), wrap_angle(traj.psi + rot), origin, t0)


def expert_local(scn: Scenario, i: int, ego_heading: float) -> np.ndarray:
    """Expert positions for frame ``i`` in the ego-local planning frame, ``(H, 2)``."""
    pose = scn.ego_state(i)
    exp = scn.expert(i)
    rot = ego_heading - pose.psi
    c, s = math.cos(rot), math.sin(rot)
    dx, dy = exp.x - pose.x, exp.y - pose.y
    return np.stack([c * dx - s * dy, s * dx + c * dy], axis=1)


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class ScenarioSpec:
    template: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def build(self, p: KbmParams | None = None) -> Scenario:
        return build_scenario(self.template, self.params, self.seed, p)


def close_pedestrian_specs(n: int, seed: int) -> list[ScenarioSpec]:
    """Pedestrians already inside the braking envelope, reported TTC = gap / v0."""
    rng = np.random.default_rng([99, seed])
    out = []
    for k in range(n):
        v0 = float(rng.uniform(5.5, 8.0))
        gap = float(rng.uniform(3.5, 6.0))
        out.append(ScenarioSpec("pedestrian_crossing", {
            "v0": round(v0, 2), "gap": round(gap, 2), "ttc": round(gap / v0, 2),
            "lateral": round(float(rng.uniform(0.25, 0.6)), 2), "walk_speed": round(float(rng.uniform(1.0, 1.4)), 2),
        }, seed=1000 + k))
    return out


def named_suite(name: str, seed: int = 0) -> list[ScenarioSpec]:
    """Built-in suites: ``default`` (4 per template), ``yield`` (50 pedestrian/lead), ``train``."""
    if name == "default":
        return [ScenarioSpec(t, {}, seed * 1000 + k) for t in TEMPLATES for k in range(4)]
    if name == "yield":
        return [ScenarioSpec(("pedestrian_crossing", "lead_vehicle")[k % 2], {}, seed * 1000 + 500 + k) for k in range(50)]
    if name == "train":
        specs = [ScenarioSpec(t, {}, seed * 1000 + 200 + k) for t in TEMPLATES for k in range(10)]
        return specs + close_pedestrian_specs(10, seed)
    raise UnknownTemplate(f"unknown suite {name!r}")


def build_suite(specs, p: KbmParams | None = None) -> list[Scenario]:
    return [s.build(p) for s in specs]
