"""Per-frame pipeline, open-loop evaluation and replayable reasoning traces."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .conditioning import (
    EGO_HEADING, ConditioningConfig, PlannerWeights, plan_frame,
)
from .kbm import KbmParams, Trajectory, VehicleState
from .predicates import Action, FinalDecision, RuleType, Speed, parse_facts, serialize_facts
from .rules import (
    ArbitrationConfig, GeneratorFailure, ReplayGenerator, RuleGenerator, TemplateGenerator, decide,
    suggestion_from_dict,
)
from .scenarios import (
    EGO_LENGTH, EGO_WIDTH, Scenario, collision_metric, l2_metric, obb_overlap, to_world, tpc_pair,
)

TRACE_VERSION = 1
ABLATIONS = ("no-asp", "no-kbm-residual", "no-smoothing", "no-axioms")
BYPASS_DECISION = FinalDecision(Action.KEEP_LANE, Speed.CURRENT, RuleType.EFFICIENCY, "bypass")
METRICS_HEADER = "scenario,l2_1s,l2_2s,l2_3s,l2_avg,col_rate,tpc_1s,tpc_2s,tpc_3s,tpc_avg"


class FrameNotFound(KeyError):
    pass


class ReplayMismatch(AssertionError):
    pass


class PipelineError(RuntimeError):
    """Wraps a module error with the scenario and frame it came from."""


@dataclass(frozen=True)
class Ablation:
    no_asp: bool = False
    no_kbm_residual: bool = False
    no_axioms: bool = False

    @classmethod
    def from_flags(cls, flags) -> "Ablation":
        flags = set(flags or ())
        unknown = flags - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
        return cls("no-asp" in flags, "no-kbm-residual" in flags, "no-axioms" in flags)

    def flags(self) -> list[str]:
        out = []
        if self.no_asp:
            out.append("no-asp")
        if self.no_kbm_residual:
            out.append("no-kbm-residual")
        if self.no_axioms:
            out.append("no-axioms")
        return out


@dataclass
class Pipeline:
    weights: PlannerWeights
    kbm: KbmParams = field(default_factory=KbmParams)
    cond: ConditioningConfig = field(default_factory=ConditioningConfig)
    arb: ArbitrationConfig = field(default_factory=ArbitrationConfig)
    generator: RuleGenerator | None = None
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        if self.generator is None:
            self.generator = TemplateGenerator(self.arb)


@dataclass
class MetricsReport:
    l2_at: dict
    collision_rate: float
    tpc_at: dict
    frames: int

    def row(self, name: str) -> str:
        vals = [self.l2_at["1s"], self.l2_at["2s"], self.l2_at["3s"], self.l2_at["avg"], self.collision_rate,
                self.tpc_at["1s"], self.tpc_at["2s"], self.tpc_at["3s"], self.tpc_at["avg"]]
        return ",".join([name] + [f"{v:.6f}" for v in vals])

    def to_dict(self) -> dict:
        return asdict(self)


def _agent_boxes(scn: Scenario, times) -> list:
    return [[list(a.box(float(t))) for a in scn.agents] for t in times]


def _collides(traj: Trajectory, boxes) -> bool:
    for k in range(len(traj)):
        ego = (traj.x[k], traj.y[k], traj.psi[k], EGO_LENGTH, EGO_WIDTH)
        if any(obb_overlap(ego, b) for b in boxes[k]):
            return True
    return False


def _run_core(facts_text: str, pose: VehicleState, t0: float, generator, pipe: Pipeline, weights: PlannerWeights):
    """The replayable part of a frame: facts text and ego pose in, every stage out."""
    facts = parse_facts(facts_text)
    ab = pipe.ablation
    if ab.no_asp:
        decision = BYPASS_DECISION
        dtrace = None
    else:
        decision, dtrace = decide(facts, generator, pipe.arb, use_axioms=not ab.no_axioms)
    plan = plan_frame(facts, decision, weights, pipe.cond, pipe.kbm, use_residual=not ab.no_kbm_residual)
    world = to_world(plan.tau_final, pose, t0, EGO_HEADING)
    rec = {
        "facts": facts_text,
        "reasoning": dtrace.to_dict() if dtrace else {"bypassed": True, "decision": {
            "action": decision.action.value, "speed": decision.speed.value,
            "tier": decision.tier.value, "winner": decision.winning_suggestion}},
        "d_offset_norm": plan.d_offset_norm,
        "b_v": plan.b_v,
        "v0_prime": plan.v0_prime,
        "mode": plan.mode,
        "controls": plan.controls.tolist(),
        "residual_raw": plan.residual_raw.tolist(),
        "residual_bounded": plan.residual_bounded.tolist(),
        "tau_physics": plan.tau_physics.to_dict(),
        "tau_final": plan.tau_final.to_dict(),
        "tau_world": world.to_dict(),
    }
    return world, plan, rec


def run_frame(scn: Scenario, i: int, pipe: Pipeline) -> tuple[Trajectory, dict]:
    """Facts, decision, conditioning, rollout and combination for frame ``i`` of ``scn``."""
    if not 0 <= i < scn.n_frames:
        raise FrameNotFound(f"{scn.id}: frame {i} outside [0, {scn.n_frames})")
    try:
        facts = scn.facts(i)
        text = serialize_facts(facts)
        pose = scn.ego_state(i)
        t0 = scn.frame_time(i)
        world, plan, rec = _run_core(text, pose, t0, pipe.generator, pipe, pipe.weights)
    except Exception as exc:
        raise PipelineError(f"{scn.id} frame {i}: {type(exc).__name__}: {exc}") from exc
    boxes = _agent_boxes(scn, world.t)
    header = {
        "version": TRACE_VERSION,
        "scenario": scn.id,
        "frame": i,
        "frame_id": facts.frame_id,
        "t0": t0,
        "ego_pose": [pose.x, pose.y, pose.v, pose.psi],
        "ablation": pipe.ablation.flags(),
        "weights_digest": pipe.weights.digest(),
    }
    rec = {**header, **rec, "agent_boxes": boxes, "collided": _collides(world, boxes)}
    return world, rec


def trace_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, allow_nan=True)


def replay_frame(rec: dict, pipe: Pipeline) -> dict:
    """Re-execute a recorded frame from its own inputs; generator output is taken from the record."""
    if rec.get("weights_digest") != pipe.weights.digest():
        raise ReplayMismatch("trace was recorded with different weights")
    reasoning = rec["reasoning"]
    gen = ReplayGenerator(suggestion_from_dict(d) for d in reasoning.get("generated", []))
    if reasoning.get("generator_error"):
        gen = _FailingGenerator(reasoning["generator_error"])
    ab = Ablation.from_flags(rec.get("ablation", []))
    replay_pipe = Pipeline(pipe.weights, pipe.kbm, pipe.cond, pipe.arb, gen, ab)
    pose = VehicleState(*rec["ego_pose"])
    world, _, core = _run_core(rec["facts"], pose, rec["t0"], gen, replay_pipe, pipe.weights)
    out = {k: rec[k] for k in ("version", "scenario", "frame", "frame_id", "t0", "ego_pose", "ablation",
                               "weights_digest", "agent_boxes")}
    out.update(core)
    out["collided"] = _collides(world, rec["agent_boxes"])
    return out


class _FailingGenerator:
    def __init__(self, message: str):
        self.message = message

    def generate(self, facts):
        raise GeneratorFailure(self.message)


def diff_records(a: dict, b: dict, prefix: str = "") -> list[str]:
    """Paths at which two JSON-like records differ."""
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            if k not in a or k not in b:
                out.append(f"{prefix}{k}: missing on one side")
            else:
                out.extend(diff_records(a[k], b[k], f"{prefix}{k}."))
        return out
    if isinstance(a, list) and isinstance(b, list) and len(a) == len(b):
        out = []
        for i, (x, y) in enumerate(zip(a, b)):
            out.extend(diff_records(x, y, f"{prefix}{i}."))
        return out
    if trace_line(a) != trace_line(b):
        return [f"{prefix.rstrip('.')}: {a!r} != {b!r}"]
    return []


# ---------------------------------------------------------------------------
# evaluation


def _report(l2s: list[dict], cols: list[bool], tpcs: list[dict]) -> MetricsReport:
    keys = ("1s", "2s", "3s")
    l2 = {k: float(np.mean([r[k] for r in l2s])) for k in keys}
    l2["avg"] = float(np.mean([l2[k] for k in keys]))
    tpc = {k: float(np.mean([r[k] for r in tpcs])) if tpcs else 0.0 for k in keys}
    tpc["avg"] = float(np.mean([tpc[k] for k in keys]))
    return MetricsReport(l2, float(np.mean(cols)), tpc, len(cols))


@dataclass
class ScenarioResult:
    scenario: str
    report: MetricsReport
    plans: list
    l2: list
    collided: list
    tpc: list
    traces: list  # one JSON line per frame


def evaluate_scenario(scn: Scenario, plan_fn: Callable[[Scenario, int], tuple[Trajectory, dict | None]]) -> ScenarioResult:
    plans, recs, l2s, cols = [], [], [], []
    for i in range(scn.n_frames):
        world, rec = plan_fn(scn, i)
        plans.append(world)
        l2s.append(l2_metric(world, scn.expert(i)))
        cols.append(rec["collided"] if rec is not None else collision_metric(world, scn))
        if rec is not None:
            recs.append(trace_line(rec))
    tpcs = [tpc_pair(a, b) for a, b in zip(plans, plans[1:])]
    return ScenarioResult(scn.id, _report(l2s, cols, tpcs), plans, l2s, cols, tpcs, recs)


def evaluate(suite, pipe: Pipeline | None = None, plan_fn=None) -> tuple[MetricsReport, list[ScenarioResult]]:
    """Aggregate metrics over every frame of every scenario.

    With ``plan_fn`` the planner is replaced by an arbitrary per-frame
    predictor, e.g. the expert itself.  Results come back sorted by scenario id.
    """
    suite = list(suite)
    if not suite:
        raise ValueError("evaluation suite is empty")
    if plan_fn is None:
        if pipe is None:
            raise ValueError("need a pipeline or a plan function")
        plan_fn = lambda scn, i: run_frame(scn, i, pipe)  # noqa: E731
    results = []
    for scn in suite:
        try:
            results.append(evaluate_scenario(scn, plan_fn))
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"{scn.id}: {type(exc).__name__}: {exc}") from exc
    results.sort(key=lambda r: r.scenario)
    report = _report([x for r in results for x in r.l2], [x for r in results for x in r.collided],
                     [x for r in results for x in r.tpc])
    return report, results


def expert_plan(scn: Scenario, i: int):
    return scn.expert(i), None


def metrics_csv(report: MetricsReport, results: list[ScenarioResult]) -> str:
    lines = [METRICS_HEADER]
    lines += [r.report.row(r.scenario) for r in results]
    lines.append(report.row("ALL"))
    return "\n".join(lines) + "\n"


def scenario_collision_rate(results: list[ScenarioResult]) -> float:
    """Fraction of scenarios with at least one colliding frame."""
    return float(np.mean([any(r.collided) for r in results]))


# ---------------------------------------------------------------------------
# trace rendering


def load_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def render_frame(rec: dict) -> str:
    """Human-readable reasoning chain: facts, suggestions, decision, control parameters, waypoints."""
    out = [f"== {rec['scenario']} frame {rec['frame']} (t0={rec['t0']:.2f}s, weights {rec['weights_digest'][:12]}) =="]
    if rec.get("ablation"):
        out.append(f"ablations: {', '.join(rec['ablation'])}")
    out.append("-- layer 1: facts")
    out += ["  " + line for line in rec["facts"].rstrip("\n").splitlines()]
    r = rec["reasoning"]
    out.append("-- layer 2: rules and arbitration")
    if r.get("bypassed"):
        out.append("  rule engine bypassed")
    else:
        if r.get("generator_error"):
            out.append(f"  generator failed: {r['generator_error']}")
        for s in r["suggestions"]:
            mark = "*" if s["provenance"] == r["decision"]["winner"] else " "
            out.append(f" {mark} [{s['type']:<10}] {s['action']}/{s['speed']}  <- {s['provenance']}")
    d = r["decision"]
    out.append(f"  decision: {d['action']}/{d['speed']} (tier {d['tier']}, winner {d['winner']})")
    out.append("-- layer 3: control parameters and trajectory")
    out.append(f"  |d| = {rec['d_offset_norm']:.4f}  b_v = {rec['b_v']:+.3f} m/s  v0' = {rec['v0_prime']:.3f} m/s  mode {rec['mode']}")
    tp, tf = rec["tau_physics"], rec["tau_final"]
    out.append("     t     a      delta   phys(x, y)        final(x, y)       v_final")
    for k, (a, dl) in enumerate(rec["controls"]):
        out.append(f"  {tf['t'][k]:4.1f} {a:+6.2f} {dl:+7.3f}  ({tp['x'][k]:+6.2f}, {tp['y'][k]:6.2f})  "
                   f"({tf['x'][k]:+6.2f}, {tf['y'][k]:6.2f})  {tf['v'][k]:6.2f}")
    out.append(f"  collided: {rec['collided']}")
    return "\n".join(out)

