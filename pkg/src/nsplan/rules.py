"""Suggestion generation and tiered arbitration.

Arbitration works on ground suggestions only: the highest non-empty tier
wins, and a fixed key breaks ties inside a tier.  Safety axioms are
re-evaluated on every frame, while generator output may come from a cache
or an external endpoint.
"""

from __future__ import annotations

import logging
import math
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .predicates import (
    Action, Attribute, Category, FinalDecision, Nav, PredicateError, RelPos,
    RuleType, SceneFacts, Speed, Suggestion, parse_suggestions, serialize_facts,
    serialize_suggestions,
)

log = logging.getLogger(__name__)

SPEED_RANK = {Speed.ZERO: 0.0, Speed.CREEP: 1.0, Speed.SLOW: 2.0, Speed.NORMAL: 3.0, Speed.FAST: 4.0}

# emergency_stop > yield > nudge_* > change_lane_* > turn_* > keep_lane
ACTION_SEVERITY = {
    Action.EMERGENCY_STOP: 0,
    Action.YIELD: 1,
    Action.NUDGE_LEFT: 2, Action.NUDGE_RIGHT: 2,
    Action.CHANGE_LANE_LEFT: 3, Action.CHANGE_LANE_RIGHT: 3,
    Action.TURN_LEFT: 4, Action.TURN_RIGHT: 4,
    Action.KEEP_LANE: 5,
}

DEFAULT_SUGGESTION = Suggestion(Action.KEEP_LANE, Speed.CURRENT, RuleType.EFFICIENCY, "default")


class EmptyInputError(ValueError):
    pass


class GeneratorFailure(RuntimeError):
    pass


class RuleGenerator(Protocol):
    def generate(self, facts: SceneFacts) -> list[Suggestion]: ...


@dataclass(frozen=True)
class ArbitrationConfig:
    ttc_emergency_s: float = 0.5
    ttc_safety_s: float = 1.5
    # target speeds in m/s used to place ``current`` in the speed order
    speed_targets: dict = field(default_factory=lambda: {
        "zero": 0.0, "creep": 1.5, "slow": 3.0, "normal": 8.0, "fast": 12.0,
    })

    def __post_init__(self):
        if not self.ttc_emergency_s < self.ttc_safety_s:
            raise ValueError("ttc_emergency_s must be < ttc_safety_s")

    @property
    def tier_order(self) -> list[RuleType]:
        return list(RuleType)


# ---------------------------------------------------------------------------
# safety axioms


@dataclass(frozen=True)
class SafetyAxiom:
    name: str
    guard: Callable[[SceneFacts, ArbitrationConfig], bool]
    emits: Suggestion


SAFETY_AXIOMS = (
    SafetyAxiom(
        "emergency_braking",
        lambda f, cfg: f.min_ttc < cfg.ttc_emergency_s,
        Suggestion(Action.EMERGENCY_STOP, Speed.ZERO, RuleType.EMERGENCY, "axiom:emergency_braking"),
    ),
    SafetyAxiom(
        "safe_following",
        lambda f, cfg: cfg.ttc_emergency_s <= f.min_ttc < cfg.ttc_safety_s,
        Suggestion(Action.YIELD, Speed.ZERO, RuleType.SAFETY, "axiom:safe_following"),
    ),
)


def apply_axioms(facts: SceneFacts, cfg: ArbitrationConfig) -> list[Suggestion]:
    return [ax.emits for ax in SAFETY_AXIOMS if ax.guard(facts, cfg)]


# ---------------------------------------------------------------------------
# template generator (deterministic stand-in for an LLM rule extractor)

HAZARD_CLASSES = ("none", "pedestrian", "vehicle", "other")
TTC_BUCKETS = ("critical", "near", "far")
SPEED_BUCKETS = ("low", "mid", "high")

_AHEAD = (RelPos.FRONT, RelPos.FRONT_LEFT, RelPos.FRONT_RIGHT)


def _hazard_key(facts: SceneFacts, cfg: ArbitrationConfig) -> tuple[str, str]:
    ahead = [o for o in facts.objects if o.relative_pos in _AHEAD and (o.relative_pos == RelPos.FRONT or math.isfinite(o.ttc))]
    if not ahead:
        return "none", "far"
    nearest = min(ahead, key=lambda o: (o.ttc, o.distance, o.id))
    if nearest.category == Category.PEDESTRIAN or nearest.category == Category.CYCLIST:
        cls = "pedestrian"
    elif nearest.category == Category.VEHICLE:
        cls = "vehicle"
    else:
        cls = "other"
    if nearest.ttc < cfg.ttc_safety_s:
        bucket = "critical"
    elif nearest.ttc < 4.0 or (nearest.attribute == Attribute.CROSSING and nearest.distance < 15.0):
        bucket = "near"
    else:
        bucket = "far"
    return cls, bucket


def _speed_bucket(v: float) -> str:
    return "low" if v < 3.0 else "mid" if v < 10.0 else "high"


def template_rules(nav: Nav, hazard: str, ttc_bucket: str, speed_bucket: str) -> list[tuple[Action, Speed, RuleType, str]]:
    """The generator's template table; pure in its four keys.

    A critical pedestrian gets a full stop; critical vehicles and obstacles
    only slow down and leave the stop to the safety axioms.
    """
    rules = []
    if nav == Nav.LEFT:
        rules.append((Action.TURN_LEFT, Speed.SLOW, RuleType.LEGAL, "nav_turn_left"))
    elif nav == Nav.RIGHT:
        rules.append((Action.TURN_RIGHT, Speed.SLOW, RuleType.LEGAL, "nav_turn_right"))
    else:
        rules.append((Action.KEEP_LANE, Speed.NORMAL, RuleType.EFFICIENCY, "nav_cruise"))

    if hazard == "pedestrian":
        if ttc_bucket == "critical":
            rules.append((Action.YIELD, Speed.ZERO, RuleType.SAFETY, "pedestrian_conflict"))
        elif ttc_bucket == "near":
            rules.append((Action.YIELD, Speed.CREEP, RuleType.LEGAL, "pedestrian_right_of_way"))
        else:
            rules.append((Action.KEEP_LANE, Speed.SLOW, RuleType.COMFORT, "pedestrian_caution"))
    elif hazard == "vehicle":
        if ttc_bucket == "critical":
            rules.append((Action.KEEP_LANE, Speed.SLOW, RuleType.SAFETY, "vehicle_conflict"))
        elif ttc_bucket == "near":
            rules.append((Action.KEEP_LANE, Speed.SLOW, RuleType.SAFETY, "vehicle_headway"))
        else:
            rules.append((Action.KEEP_LANE, Speed.CURRENT, RuleType.COMFORT, "follow_lead"))
    elif hazard == "other":
        if ttc_bucket == "critical":
            rules.append((Action.YIELD, Speed.SLOW, RuleType.SAFETY, "obstacle_conflict"))
        else:
            rules.append((Action.CHANGE_LANE_LEFT, Speed.CURRENT, RuleType.SAFETY, "obstacle_bypass"))

    if speed_bucket == "high":
        rules.append((Action.KEEP_LANE, Speed.NORMAL, RuleType.COMFORT, "comfort_speed"))
    elif speed_bucket == "mid":
        rules.append((Action.KEEP_LANE, Speed.CURRENT, RuleType.EFFICIENCY, "hold_speed"))
    elif hazard == "none":
        rules.append((Action.KEEP_LANE, Speed.NORMAL, RuleType.EFFICIENCY, "resume_progress"))
    rules.append((Action.KEEP_LANE, Speed.CURRENT, RuleType.EFFICIENCY, "keep_progress"))
    return rules


class TemplateGenerator:
    """Fixed template table keyed on nav command, nearest hazard and ego speed."""

    name = "template"

    def __init__(self, cfg: ArbitrationConfig | None = None):
        self.cfg = cfg or ArbitrationConfig()

    def generate(self, facts: SceneFacts) -> list[Suggestion]:
        hazard, bucket = _hazard_key(facts, self.cfg)
        rows = template_rules(facts.ego.nav, hazard, bucket, _speed_bucket(facts.ego.speed))
        return [Suggestion(a, s, t, f"template:{name}") for a, s, t, name in rows]


def template_generate(facts: SceneFacts, cfg: ArbitrationConfig | None = None) -> list[Suggestion]:
    return TemplateGenerator(cfg).generate(facts)


class CachedGenerator:
    """Reads pre-computed generator responses from ``<dir>/<frame_id>.lp``."""

    name = "cache"

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, frame_id: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in frame_id)
        return self.directory / f"{safe}.lp"

    def generate(self, facts: SceneFacts) -> list[Suggestion]:
        path = self.path_for(facts.frame_id)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise GeneratorFailure(f"no cached response for frame {facts.frame_id!r}: {exc}") from exc
        return validate_response(text, f"cache:{path.name}")

    def store(self, facts: SceneFacts, suggestions) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.path_for(facts.frame_id)
        path.write_text(serialize_suggestions(suggestions), encoding="utf-8")
        return path


def render_request(facts: SceneFacts) -> str:
    """Request body for an external generator: metadata header + canonical facts."""
    return f"% frame_id: {facts.frame_id}\n% nav: {facts.ego.nav}\n" + serialize_facts(facts)


def validate_response(text: str, provenance: str) -> list[Suggestion]:
    """Keep each response line that parses against the closed vocabulary; drop the rest."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        try:
            parsed = parse_suggestions(stripped)
        except PredicateError as exc:
            log.warning("discarding generator line %d (%s): %s", lineno, provenance, exc)
            continue
        out.extend(Suggestion(s.action, s.speed, s.rule_type, f"{provenance}#{lineno}") for s in parsed)
    return out


class HttpGenerator:
    """POSTs the rendered request as text/plain and validates the text reply."""

    name = "http"

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def generate(self, facts: SceneFacts) -> list[Suggestion]:
        body = render_request(facts).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, method="POST",
            headers={"Content-Type": "text/plain; charset=utf-8"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                text = resp.read().decode("utf-8")
        except Exception as exc:  # any transport failure is a generator failure
            raise GeneratorFailure(f"POST {self.url} failed: {exc}") from exc
        return validate_response(text, f"http:{facts.frame_id}")


# ---------------------------------------------------------------------------
# arbitration


def _resolved_speed(s: Speed, v0: float, cfg: ArbitrationConfig) -> float:
    if s == Speed.CURRENT:
        return v0
    return cfg.speed_targets[s.value]


def tie_break_key(s: Suggestion, v0: float, cfg: ArbitrationConfig):
    return (
        s.rule_type.priority,
        _resolved_speed(s.speed, v0, cfg),
        SPEED_RANK.get(s.speed, 5.0),  # ``current`` after an equal named level
        ACTION_SEVERITY[s.action],
        s.action.value,
        s.provenance,
    )


def arbitrate(suggestions, cfg: ArbitrationConfig | None = None, v0: float = 0.0) -> FinalDecision:
    """Pick the unique winner: strongest tier, then slower target, then more severe action."""
    cfg = cfg or ArbitrationConfig()
    suggestions = list(suggestions)
    if not suggestions:
        raise EmptyInputError("arbitrate needs at least one suggestion")
    best = min(suggestions, key=lambda s: tie_break_key(s, v0, cfg))
    return FinalDecision(best.action, best.speed, best.rule_type, best.provenance)


def suggestion_to_dict(s: Suggestion) -> dict:
    return {"action": s.action.value, "speed": s.speed.value, "type": s.rule_type.value, "provenance": s.provenance}


def suggestion_from_dict(d: dict) -> Suggestion:
    return Suggestion(Action(d["action"]), Speed(d["speed"]), RuleType(d["type"]), d.get("provenance", ""))


@dataclass
class DecisionTrace:
    suggestions: list[Suggestion]
    fired_axioms: list[str]
    decision: FinalDecision
    generator_error: str | None = None
    generator_output: list[Suggestion] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "suggestions": [suggestion_to_dict(s) for s in self.suggestions],
            "fired_axioms": list(self.fired_axioms),
            "generated": [suggestion_to_dict(s) for s in self.generator_output],
            "generator_text": serialize_suggestions(self.generator_output),
            "generator_error": self.generator_error,
            "decision": {
                "action": self.decision.action.value,
                "speed": self.decision.speed.value,
                "tier": self.decision.tier.value,
                "winner": self.decision.winning_suggestion,
            },
        }


def decide(facts: SceneFacts, gen: RuleGenerator | None, cfg: ArbitrationConfig | None = None,
           use_axioms: bool = True) -> tuple[FinalDecision, DecisionTrace]:
    """Arbitrate axioms, generator output and the default suggestion for one frame.

    A failing generator is logged and skipped; the frame is then decided by
    the axioms and the default alone.
    """
    cfg = cfg or ArbitrationConfig()
    axioms = apply_axioms(facts, cfg) if use_axioms else []
    generated: list[Suggestion] = []
    error = None
    if gen is not None:
        try:
            generated = list(gen.generate(facts))
        except GeneratorFailure as exc:
            error = str(exc)
            log.warning("generator failed on %s, falling back to axioms: %s", facts.frame_id, exc)
    pool = axioms + generated + [DEFAULT_SUGGESTION]
    decision = arbitrate(pool, cfg, facts.ego.speed)
    trace = DecisionTrace(pool, [s.provenance for s in axioms], decision, error, generated)
    return decision, trace


class ReplayGenerator:
    """Returns a fixed suggestion list; used to replay a recorded frame."""

    name = "replay"

    def __init__(self, suggestions):
        self.suggestions = list(suggestions)

    def generate(self, facts: SceneFacts) -> list[Suggestion]:
        return list(self.suggestions)


def make_generator(spec: str, cfg: ArbitrationConfig | None = None):
    """Build a generator from ``template``, ``cache:<dir>`` or ``http:<url>``."""
    if spec == "template":
        return TemplateGenerator(cfg)
    if spec.startswith("cache:"):
        return CachedGenerator(spec[len("cache:"):])
    if spec.startswith("http:"):
        url = spec[len("http:"):]
        if not url.startswith(("http://", "https://")):
            url = "http:" + url
        return HttpGenerator(url)
    raise ValueError(f"unknown generator {spec!r}")
