"""Decision conditioning: embeddings, velocity bias, control head, losses.

Planning happens in an ego-local frame with the vehicle at the origin facing
``+y`` (heading pi/2), so ``x`` is the lateral axis and ``y`` the
longitudinal one.  The residual loss penalises the lateral axis 10x harder.

Everything is plain numpy.  :func:`loss_and_grad` runs the forward pass and
a hand-written backward pass; the KBM part of the chain rule uses the
forward-mode tangents from :mod:`nsplan.kbm`.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .kbm import KbmParams, Trajectory, VehicleState, bound_controls, rollout_arrays, wrap_angle
from .predicates import Action, Attribute, Category, FinalDecision, Nav, RelPos, SceneFacts, Speed

ACTIONS = list(Action)
SPEEDS = list(Speed)
NAVS = list(Nav)
EGO_HEADING = math.pi / 2
N_FEATURES = 12
CHECKPOINT_VERSION = 1
# fixed output scales that keep plain gradient descent stable at the default step;
# waypoints are ~100x more sensitive to steering than to acceleration
ACCEL_OUTPUT_SCALE = 0.5
STEER_OUTPUT_SCALE = 0.1

DEFAULT_SPEED_TARGETS = {"zero": 0.0, "creep": 1.5, "slow": 3.0, "normal": 8.0, "fast": 12.0}


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConditioningConfig:
    d_model: int = 256
    modes: int = 18
    hidden: int = 64
    b_max: float = 3.0
    g_scale_init: float = 0.29
    speed_targets: dict = field(default_factory=lambda: dict(DEFAULT_SPEED_TARGETS))
    w_imitation: float = 1.0
    w_y: float = 0.1  # anisotropic residual weight on the longitudinal axis; lateral gets 10x
    w_smoothing: float = 0.05
    w_classification: float = 0.1
    w_mode: float = 0.1
    winner_takes_all: bool = False  # imitate with every candidate of the nav group, or only the closest
    seed: int = 0

    def __post_init__(self):
        if self.modes % len(NAVS):
            raise ValueError(f"modes must be a multiple of {len(NAVS)}")
        if self.b_max <= 0:
            raise ValueError("b_max must be positive")

    @property
    def candidates(self) -> int:
        return self.modes // len(NAVS)


# ---------------------------------------------------------------------------
# weights


TRAINABLE = ("action_table", "speed_table", "W1", "b1", "W2", "b2", "Wc", "bc", "g_scale")
FROZEN = ("encoder", "mode_embedding")


@dataclass
class PlannerWeights:
    action_table: np.ndarray
    speed_table: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wc: np.ndarray
    bc: np.ndarray
    g_scale: np.ndarray
    # stand-in perception: fixed projection of scene features plus per-mode anchors
    encoder: np.ndarray
    mode_embedding: np.ndarray

    @classmethod
    def init(cls, cfg: ConditioningConfig, p: KbmParams, seed: int | None = None) -> "PlannerWeights":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        D, Hd, H = cfg.d_model, cfg.hidden, p.horizon
        return cls(
            action_table=rng.normal(0, 0.1, (len(ACTIONS), D)),
            speed_table=rng.normal(0, 0.1, (len(SPEEDS), D)),
            W1=rng.normal(0, 1 / math.sqrt(D), (D, Hd)),
            b1=np.zeros(Hd),
            W2=rng.normal(0, 0.1 / math.sqrt(Hd), (Hd, 4 * H + 1)),
            b2=np.zeros(4 * H + 1),
            Wc=rng.normal(0, 0.01, (D, len(ACTIONS))),
            bc=np.zeros(len(ACTIONS)),
            g_scale=np.array(cfg.g_scale_init),
            encoder=rng.normal(0, 1 / math.sqrt(N_FEATURES), (N_FEATURES, D)) * 2.0,
            mode_embedding=rng.normal(0, 0.5, (cfg.modes, D)),
        )

    @classmethod
    def zeros(cls, cfg: ConditioningConfig, p: KbmParams) -> "PlannerWeights":
        w = cls.init(cfg, p)
        for name in TRAINABLE:
            setattr(w, name, np.zeros_like(getattr(w, name)))
        return w

    def copy(self) -> "PlannerWeights":
        return PlannerWeights(**{k: np.array(v, copy=True) for k, v in self.arrays().items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in TRAINABLE + FROZEN}

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in TRAINABLE}

    def validate(self, cfg: ConditioningConfig, p: KbmParams) -> None:
        D, H = cfg.d_model, p.horizon
        expected = {
            "action_table": (len(ACTIONS), D), "speed_table": (len(SPEEDS), D),
            "W1": (D, cfg.hidden), "b1": (cfg.hidden,), "W2": (cfg.hidden, 4 * H + 1), "b2": (4 * H + 1,),
            "Wc": (D, len(ACTIONS)), "bc": (len(ACTIONS),), "g_scale": (),
            "encoder": (N_FEATURES, D), "mode_embedding": (cfg.modes, D),
        }
        for name, shape in expected.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {got}")

    def digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for k, v in self.arrays().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def save_checkpoint(path, weights: PlannerWeights, config: dict) -> None:
    """Write a versioned ``.npz`` holding all arrays plus the producing config as JSON."""
    meta = json.dumps({"version": CHECKPOINT_VERSION, "config": config}, sort_keys=True)
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(meta), **weights.arrays())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path, cfg: ConditioningConfig | None = None, p: KbmParams | None = None):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        w = PlannerWeights(**{k: np.array(data[k], dtype=float) for k in TRAINABLE + FROZEN})
    if cfg is not None and p is not None:
        w.validate(cfg, p)
    return w, meta["config"]


# ---------------------------------------------------------------------------
# query construction and the two conditioning paths


def scene_features(facts: SceneFacts) -> np.ndarray:
    """Fixed-length feature vector read from the (canonical) facts."""
    phi = np.zeros(N_FEATURES)
    ego = facts.ego
    phi[0] = ego.speed / 10.0
    phi[1 + NAVS.index(ego.nav)] = 1.0
    ahead = [o for o in facts.objects
             if o.relative_pos == RelPos.FRONT or (o.relative_pos in (RelPos.FRONT_LEFT, RelPos.FRONT_RIGHT) and math.isfinite(o.ttc))]
    if ahead:
        o = min(ahead, key=lambda o: (o.ttc, o.distance, o.id))
        phi[4] = 1.0
        phi[5] = min(o.distance / 20.0, 2.0)
        phi[6] = o.speed / 10.0
        phi[7] = min(1.0 / o.ttc, 4.0) / 4.0 if math.isfinite(o.ttc) else 0.0
        phi[8] = float(o.category in (Category.PEDESTRIAN, Category.CYCLIST))
        phi[9] = float(o.category == Category.VEHICLE)
        phi[10] = float(o.attribute == Attribute.CROSSING)
    else:
        phi[5] = 2.0
    if ego.history_speeds:
        phi[11] = (ego.speed - ego.history_speeds[0]) / 5.0
    return phi


def planning_query(features, weights: PlannerWeights) -> np.ndarray:
    """Query tensor ``(..., M, D)`` from features ``(..., F)``."""
    base = np.asarray(features) @ weights.encoder
    return base[..., None, :] + weights.mode_embedding


def embed_decision(dec: FinalDecision, weights: PlannerWeights) -> np.ndarray:
    return weights.action_table[ACTIONS.index(dec.action)] + weights.speed_table[SPEEDS.index(dec.speed)]


def condition_query(q, d) -> np.ndarray:
    """Add the decision vector to every mode row: ``Q'[b, 0, m, :] = Q[b, 0, m, :] + d``."""
    q = np.asarray(q, dtype=float)
    d = np.asarray(d, dtype=float)
    if q.ndim < 2 or d.shape[-1] != q.shape[-1]:
        raise ShapeMismatch(f"query {q.shape} and decision vector {d.shape} are incompatible")
    if d.ndim > 1:
        lead = d.shape[:-1]
        if q.shape[:len(lead)] != lead:
            raise ShapeMismatch(f"query {q.shape} and decision vector {d.shape} are incompatible")
        d = d.reshape(lead + (1,) * (q.ndim - 1 - len(lead)) + d.shape[-1:])
    if not np.all(np.isfinite(q)):
        raise ValueError("query has non-finite entries")
    return q + d


def speed_target(speed: Speed, v0: float, cfg: ConditioningConfig) -> float:
    if speed == Speed.CURRENT:
        return float(v0)
    return float(cfg.speed_targets[speed.value])


def velocity_bias(dec: FinalDecision, v0: float, cfg: ConditioningConfig, g_scale: float | None = None) -> float:
    """``clamp(g * (target - v0), -b_max, b_max)``."""
    if v0 < 0:
        raise ValueError("v0 must be >= 0")
    g = cfg.g_scale_init if g_scale is None else float(g_scale)
    raw = g * (speed_target(dec.speed, v0, cfg) - v0)
    return float(np.clip(raw, -cfg.b_max, cfg.b_max))


def biased_speed(v0: float, b_v: float) -> float:
    return max(v0 + b_v, 0.0)


@dataclass
class HeadOutput:
    controls: np.ndarray      # (..., M, H, 2) bounded (a, delta)
    raw_controls: np.ndarray  # (..., M, H, 2) before tanh bounding
    residual: np.ndarray      # (..., M, H, 2) raw (dx, dy)
    scores: np.ndarray        # (..., M)
    hidden: np.ndarray        # (..., M, hidden)


def predict_controls(q_cond, weights: PlannerWeights, p: KbmParams) -> HeadOutput:
    """Two affine layers with a tanh in between, applied to every mode row."""
    H = p.horizon
    hid = np.tanh(np.asarray(q_cond) @ weights.W1 + weights.b1)
    out = hid @ weights.W2 + weights.b2
    raw = np.stack([ACCEL_OUTPUT_SCALE * out[..., 0:H], STEER_OUTPUT_SCALE * out[..., H:2 * H]], axis=-1)
    residual = out[..., 2 * H:4 * H].reshape(out.shape[:-1] + (H, 2))
    return HeadOutput(bound_controls(raw, p), raw, residual, out[..., 4 * H], hid)


def action_logits(q_cond, weights: PlannerWeights) -> np.ndarray:
    return np.asarray(q_cond).mean(axis=-2) @ weights.Wc + weights.bc


def select_mode(scores, nav: Nav, cfg: ConditioningConfig) -> int:
    """Argmax score within the navigation command's candidate group; lowest index on ties."""
    c = cfg.candidates
    lo = NAVS.index(Nav(nav)) * c
    return lo + int(np.argmax(np.asarray(scores)[lo:lo + c]))


def _offset_within(base, off, lam):
    """``base + off`` with the rounded difference from ``base`` kept inside ``lam``."""
    out = base + off
    for _ in range(4):
        over = np.abs(out - base) > lam
        if not over.any():
            break
        out[over] = np.nextafter(out[over], base[over])
    return out


def combine(tau_physics: Trajectory, residual, lam: float) -> Trajectory:
    """Offset positions by ``lam * tanh(residual)`` and re-derive speed and heading."""
    residual = np.asarray(residual, dtype=float)
    if residual.shape != (len(tau_physics), 2):
        raise ShapeMismatch(f"residual shape {residual.shape} does not match horizon {len(tau_physics)}")
    off = lam * np.tanh(residual)
    x = _offset_within(tau_physics.x, off[:, 0], lam)
    y = _offset_within(tau_physics.y, off[:, 1], lam)
    if not np.any(off):
        return Trajectory(tau_physics.t.copy(), x, y, tau_physics.v.copy(), tau_physics.psi.copy(),
                          tau_physics.origin, tau_physics.t0)
    # A plain backward difference reports the interval-average speed, half a
    # step late; instead add the finite-difference change the offsets cause.
    o = tau_physics.origin
    dt = np.diff(np.concatenate([[tau_physics.t0], tau_physics.t]))
    dpx = np.diff(np.concatenate([[o.x], tau_physics.x]))
    dpy = np.diff(np.concatenate([[o.y], tau_physics.y]))
    dfx = np.diff(np.concatenate([[o.x], x]))
    dfy = np.diff(np.concatenate([[o.y], y]))
    v = np.maximum(tau_physics.v + (np.hypot(dfx, dfy) - np.hypot(dpx, dpy)) / dt, 0.0)
    psi = tau_physics.psi.copy()
    turn = (np.hypot(dfx, dfy) > 1e-9) & (np.hypot(dpx, dpy) > 1e-9)
    psi[turn] += wrap_angle(np.arctan2(dfy, dfx) - np.arctan2(dpy, dpx))[turn]
    return Trajectory(tau_physics.t.copy(), x, y, v, wrap_angle(psi), o, tau_physics.t0)


# ---------------------------------------------------------------------------
# losses (each with its gradient)


def anisotropic_residual_loss(r, w_y: float) -> float:
    r = np.asarray(r, dtype=float)
    return float(np.sum(10.0 * w_y * r[..., 0] ** 2 + w_y * r[..., 1] ** 2))


def anisotropic_residual_grad(r, w_y: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.stack([20.0 * w_y * r[..., 0], 2.0 * w_y * r[..., 1]], axis=-1)


def control_smoothing_loss(c) -> float:
    c = np.asarray(c, dtype=float)
    if c.shape[-2] < 2:
        raise ValueError("smoothing needs at least two control steps")
    return float(np.sum(np.diff(c, axis=-2) ** 2))


def control_smoothing_grad(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    d = np.diff(c, axis=-2)
    g = np.zeros_like(c)
    g[..., 1:, :] += 2 * d
    g[..., :-1, :] -= 2 * d
    return g


def _log_softmax(z):
    z = np.asarray(z, dtype=float)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def action_classification_loss(logits, dec: FinalDecision | Action) -> float:
    action = dec.action if isinstance(dec, FinalDecision) else Action(dec)
    return float(-_log_softmax(logits)[ACTIONS.index(action)])


def action_classification_grad(logits, dec: FinalDecision | Action) -> np.ndarray:
    action = dec.action if isinstance(dec, FinalDecision) else Action(dec)
    g = np.exp(_log_softmax(logits))
    g[ACTIONS.index(action)] -= 1.0
    return g


# ---------------------------------------------------------------------------
# batched training objective


@dataclass
class Batch:
    """Training frames in ego-local coordinates.

    ``speed_idx`` may reference ``current``; ``action_idx``/``speed_idx`` are
    the decision fed to both conditioning paths and the classification target.
    """

    features: np.ndarray     # (B, F)
    v0: np.ndarray           # (B,)
    nav_idx: np.ndarray      # (B,)
    action_idx: np.ndarray   # (B,)
    speed_idx: np.ndarray    # (B,)
    expert: np.ndarray       # (B, H, 2)

    def __len__(self) -> int:
        return len(self.v0)


@dataclass
class LossReport:
    imitation_l2: float
    anisotropic_residual: float
    control_smoothing: float
    action_classification: float
    mode_classification: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def _targets(batch: Batch, cfg: ConditioningConfig) -> np.ndarray:
    table = np.array([np.nan if s == Speed.CURRENT else cfg.speed_targets[s.value] for s in SPEEDS])
    t = table[batch.speed_idx]
    return np.where(np.isnan(t), batch.v0, t)


def loss_and_grad(weights: PlannerWeights, batch: Batch, cfg: ConditioningConfig, p: KbmParams,
                  need_grad: bool = True):
    """Total loss over a batch and its gradient for every trainable array.

    Every candidate mode of a frame's navigation group imitates the expert
    (only the closest one with ``winner_takes_all``); the mode score is
    trained towards the closest candidate.  The other losses average over
    the candidates.
    """
    B, H, c = len(batch), p.horizon, cfg.candidates
    lam = p.residual_scale
    bidx = np.arange(B)

    mode_idx = batch.nav_idx[:, None] * c + np.arange(c)[None, :]          # (B, c)
    base = batch.features @ weights.encoder                                 # (B, D)
    d = weights.action_table[batch.action_idx] + weights.speed_table[batch.speed_idx]  # (B, D)
    qg = (base + d)[:, None, :] + weights.mode_embedding[mode_idx]          # (B, c, D)
    head = predict_controls(qg, weights, p)

    target = _targets(batch, cfg)
    g = float(weights.g_scale)
    bv_raw = g * (target - batch.v0)
    bv = np.clip(bv_raw, -cfg.b_max, cfg.b_max)
    v0p_raw = batch.v0 + bv
    v0p = np.maximum(v0p_raw, 0.0)

    s0 = np.zeros((B, c, 4))
    s0[..., 2] = v0p[:, None]
    s0[..., 3] = EGO_HEADING
    states, tan = rollout_arrays(s0, head.controls, p, grad=need_grad)
    final = states[..., :2] + lam * np.tanh(head.residual)                 # (B, c, H, 2)

    err = np.sum((final - batch.expert[:, None]) ** 2, axis=(-1, -2)) / H  # (B, c)
    win = np.argmin(err, axis=1)
    l_im = float(np.mean(err[bidx, win])) if cfg.winner_takes_all else float(np.mean(err))

    w_y = cfg.w_y
    l_an = float(np.sum(10 * w_y * head.residual[..., 0] ** 2 + w_y * head.residual[..., 1] ** 2)) / (B * c)
    l_sm = float(np.sum(np.diff(head.controls, axis=-2) ** 2)) / (B * c)

    pooled = base + d + weights.mode_embedding.mean(axis=0)                 # mean over all M modes
    logits = pooled @ weights.Wc + weights.bc
    logp_a = _log_softmax(logits)
    l_cls = float(-np.mean(logp_a[bidx, batch.action_idx]))
    logp_m = _log_softmax(head.scores)
    l_mode = float(-np.mean(logp_m[bidx, win]))

    total = (cfg.w_imitation * l_im + l_an + cfg.w_smoothing * l_sm
             + cfg.w_classification * l_cls + cfg.w_mode * l_mode)
    report = LossReport(l_im, l_an, l_sm, l_cls, l_mode, total)
    if not need_grad:
        return report, None

    # d total / d final positions
    d_final = np.zeros_like(final)
    if cfg.winner_takes_all:
        d_final[bidx, win] = cfg.w_imitation * 2.0 * (final[bidx, win] - batch.expert) / (H * B)
    else:
        d_final = cfg.w_imitation * 2.0 * (final - batch.expert[:, None]) / (H * B * c)
    # residual path
    d_res = d_final * lam * (1 - np.tanh(head.residual) ** 2)
    d_res += anisotropic_residual_grad(head.residual, w_y) / (B * c)
    # physics path via forward-mode tangents: (B, c, H, 2) x (B, c, H, 2, P)
    d_par = np.matmul(d_final.reshape(B, c, 1, 2 * H), tan[..., :2, :].reshape(B, c, 2 * H, -1))[:, :, 0]
    d_ctrl = np.stack([d_par[..., :H], d_par[..., H:2 * H]], axis=-1)      # (B, c, H, 2)
    d_ctrl += cfg.w_smoothing * control_smoothing_grad(head.controls) / (B * c)
    d_v0p = d_par[..., 2 * H].sum(axis=1)                                  # (B,)
    d_raw = d_ctrl * np.stack([ACCEL_OUTPUT_SCALE * p.a_max * (1 - np.tanh(head.raw_controls[..., 0]) ** 2),
                               STEER_OUTPUT_SCALE * p.delta_max * (1 - np.tanh(head.raw_controls[..., 1]) ** 2)], axis=-1)

    d_bv = d_v0p * (v0p_raw > 0)
    d_g = float(np.sum(d_bv * (np.abs(bv_raw) < cfg.b_max) * (target - batch.v0)))

    d_scores = np.exp(logp_m)
    d_scores[bidx, win] -= 1.0
    d_scores *= cfg.w_mode / B

    d_out = np.concatenate([d_raw[..., 0], d_raw[..., 1], d_res.reshape(B, c, 2 * H), d_scores[..., None]], axis=-1)
    grads = {}
    grads["W2"] = head.hidden.reshape(B * c, -1).T @ d_out.reshape(B * c, -1)
    grads["b2"] = d_out.sum(axis=(0, 1))
    d_hid = d_out @ weights.W2.T
    d_z = d_hid * (1 - head.hidden ** 2)
    grads["W1"] = qg.reshape(B * c, -1).T @ d_z.reshape(B * c, -1)
    grads["b1"] = d_z.sum(axis=(0, 1))
    d_qg = d_z @ weights.W1.T                                              # (B, c, D)

    d_logits = np.exp(logp_a)
    d_logits[bidx, batch.action_idx] -= 1.0
    d_logits *= cfg.w_classification / B
    grads["Wc"] = pooled.T @ d_logits
    grads["bc"] = d_logits.sum(axis=0)
    d_d = d_qg.sum(axis=1) + d_logits @ weights.Wc.T                        # (B, D)

    grads["action_table"] = np.zeros_like(weights.action_table)
    np.add.at(grads["action_table"], batch.action_idx, d_d)
    grads["speed_table"] = np.zeros_like(weights.speed_table)
    np.add.at(grads["speed_table"], batch.speed_idx, d_d)
    grads["g_scale"] = np.array(d_g)
    return report, grads


# ---------------------------------------------------------------------------
# single-frame planning


@dataclass
class Plan:
    decision: FinalDecision
    d_offset_norm: float
    b_v: float
    v0_prime: float
    mode: int
    controls: np.ndarray      # (H, 2)
    residual_raw: np.ndarray  # (H, 2)
    tau_physics: Trajectory
    tau_final: Trajectory

    @property
    def residual_bounded(self) -> np.ndarray:
        return self.tau_final.positions - self.tau_physics.positions


def plan_frame(facts: SceneFacts, decision: FinalDecision, weights: PlannerWeights,
               cfg: ConditioningConfig, p: KbmParams, use_residual: bool = True) -> Plan:
    """Condition, predict, roll out and combine for one frame in the ego-local frame."""
    v0 = facts.ego.speed
    q = planning_query(scene_features(facts), weights)
    d = embed_decision(decision, weights)
    qc = condition_query(q, d)
    head = predict_controls(qc, weights, p)
    m = select_mode(head.scores, facts.ego.nav, cfg)
    b_v = velocity_bias(decision, v0, cfg, float(weights.g_scale))
    v0p = biased_speed(v0, b_v)
    origin = VehicleState(0.0, 0.0, v0p, EGO_HEADING)
    states, _ = rollout_arrays(origin.as_array(), head.controls[m], p)
    tau_phys = Trajectory.from_states(states, p.dt, origin)
    residual = head.residual[m] if use_residual else np.zeros((p.horizon, 2))
    tau_final = combine(tau_phys, residual, p.residual_scale)
    return Plan(decision, float(np.linalg.norm(d)), b_v, v0p, m, head.controls[m], residual, tau_phys, tau_final)
