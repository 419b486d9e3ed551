"""Symbolic vocabulary, scene facts, and the predicate text format.

The text format is a small answer-set-programming surface syntax::

    % comment
    frame("pedestrian_crossing-0000-f00").
    ego(6.9, 0, straight).
    lane(0).
    history(0, 7.1).
    object(3, pedestrian, 4.5, 1.2, 1.57, front, crossing, 0.89).
    suggestion(yield, zero, safety).

Arguments are numbers, lowercase atoms, or double-quoted strings.  The atom
``inf`` stands for an infinite time-to-collision.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

__all__ = [
    "Action", "Speed", "Nav", "RuleType", "Category", "RelPos", "Attribute",
    "ObjectFact", "EgoFacts", "SceneFacts", "Suggestion", "FinalDecision",
    "PredicateError", "PredicateSyntaxError", "VocabularyError", "FactValueError",
    "DuplicateIdError", "UnknownPredicateError",
    "parse_facts", "parse_suggestions", "serialize_facts", "serialize_suggestions",
    "compute_ttc", "quantize", "vocabulary_triples", "HISTORY_WINDOW",
]

HISTORY_WINDOW = 8
TTC_EPS = 1e-6


class _Atom(str, Enum):
    def __str__(self) -> str:
        return self.value


class Action(_Atom):
    KEEP_LANE = "keep_lane"
    CHANGE_LANE_LEFT = "change_lane_left"
    CHANGE_LANE_RIGHT = "change_lane_right"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    NUDGE_LEFT = "nudge_left"
    NUDGE_RIGHT = "nudge_right"
    YIELD = "yield"
    EMERGENCY_STOP = "emergency_stop"


class Speed(_Atom):
    CURRENT = "current"
    ZERO = "zero"
    CREEP = "creep"
    SLOW = "slow"
    NORMAL = "normal"
    FAST = "fast"


class Nav(_Atom):
    LEFT = "left"
    RIGHT = "right"
    STRAIGHT = "straight"


class RuleType(_Atom):
    """Arbitration tiers; ``priority`` is 0 for the strongest tier."""

    EMERGENCY = "emergency"
    SAFETY = "safety"
    LEGAL = "legal"
    COMFORT = "comfort"
    EFFICIENCY = "efficiency"

    @property
    def priority(self) -> int:
        return _TIER_ORDER.index(self)


_TIER_ORDER = list(RuleType)


class Category(_Atom):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"
    CYCLIST = "cyclist"
    BARRIER = "barrier"


class RelPos(_Atom):
    FRONT = "front"
    FRONT_LEFT = "front_left"
    FRONT_RIGHT = "front_right"
    LEFT = "left"
    RIGHT = "right"
    REAR = "rear"


class Attribute(_Atom):
    MOVING = "moving"
    STATIONARY = "stationary"
    CROSSING = "crossing"


def vocabulary_triples() -> set[tuple[Action, Speed, Nav]]:
    """Every (action, target speed, navigation) combination the vocabulary admits."""
    return {(a, s, n) for a in Action for s in Speed for n in Nav}


# ---------------------------------------------------------------------------
# errors


class PredicateError(ValueError):
    """Base for every structured failure raised while reading predicate text."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{where}{message}")


class PredicateSyntaxError(PredicateError):
    def __init__(self, line: int, col: int, expected: str, found: str = ""):
        self.expected = expected
        self.found = found
        msg = f"expected {expected}" + (f", found {found!r}" if found else "")
        super().__init__(msg, line, col)


class VocabularyError(PredicateError):
    def __init__(self, atom: str, slot: str, line: int = 0, col: int = 0):
        self.atom = atom
        self.slot = slot
        super().__init__(f"{atom!r} is not a valid {slot}", line, col)


class FactValueError(PredicateError):
    """A numeric argument is outside its physical domain."""


class DuplicateIdError(PredicateError):
    def __init__(self, obj_id: int, line: int = 0, col: int = 0):
        self.obj_id = obj_id
        super().__init__(f"duplicate object id {obj_id}", line, col)


class UnknownPredicateError(PredicateError):
    def __init__(self, name: str, arity: int, line: int = 0, col: int = 0):
        self.name = name
        self.arity = arity
        super().__init__(f"unknown predicate {name}/{arity}", line, col)


# ---------------------------------------------------------------------------
# data model


def quantize(x: float) -> float:
    """Round to the 6 significant digits used by the canonical text form."""
    if math.isinf(x):
        return x
    return float(f"{x:.6g}")


def _wrap_heading(psi: float) -> float:
    # (-pi, pi]
    w = math.remainder(psi, 2 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class ObjectFact:
    id: int
    category: Category
    distance: float
    speed: float
    heading: float
    relative_pos: RelPos
    attribute: Attribute
    ttc: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "relative_pos", RelPos(self.relative_pos))
        object.__setattr__(self, "attribute", Attribute(self.attribute))
        if not isinstance(self.id, int) or self.id < 0:
            raise FactValueError(f"object id must be a non-negative integer, got {self.id!r}")
        for name in ("distance", "speed", "heading", "ttc"):
            v = float(getattr(self, name))
            if math.isnan(v):
                raise FactValueError(f"object {name} is NaN")
            object.__setattr__(self, name, quantize(v))
        if self.distance < 0 or math.isinf(self.distance):
            raise FactValueError(f"distance must be finite and >= 0, got {self.distance}")
        if self.speed < 0 or math.isinf(self.speed):
            raise FactValueError(f"speed must be finite and >= 0, got {self.speed}")
        if not (-math.pi < self.heading <= math.pi):
            raise FactValueError(f"heading must lie in (-pi, pi], got {self.heading}")
        if self.ttc <= 0:
            raise FactValueError(f"ttc must be > 0 or inf, got {self.ttc}")


@dataclass(frozen=True)
class EgoFacts:
    speed: float
    heading: float = 0.0
    nav: Nav = Nav.STRAIGHT
    lane_id: int = 0
    history_speeds: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nav", Nav(self.nav))
        for name in ("speed", "heading"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise FactValueError(f"ego {name} must be finite, got {v}")
            object.__setattr__(self, name, quantize(v))
        if self.speed < 0:
            raise FactValueError(f"ego speed must be >= 0, got {self.speed}")
        hist = tuple(quantize(float(h)) for h in self.history_speeds)
        if len(hist) > HISTORY_WINDOW:
            raise FactValueError(f"history holds {len(hist)} speeds, window is {HISTORY_WINDOW}")
        if any(not math.isfinite(h) or h < 0 for h in hist):
            raise FactValueError("history speeds must be finite and >= 0")
        object.__setattr__(self, "history_speeds", hist)


@dataclass(frozen=True)
class SceneFacts:
    ego: EgoFacts
    objects: tuple[ObjectFact, ...] = ()
    frame_id: str = ""

    def __post_init__(self):
        objs = tuple(self.objects)
        seen = set()
        for o in objs:
            if o.id in seen:
                raise DuplicateIdError(o.id)
            seen.add(o.id)
        object.__setattr__(self, "objects", objs)

    @property
    def min_ttc(self) -> float:
        return min((o.ttc for o in self.objects), default=math.inf)


@dataclass(frozen=True)
class Suggestion:
    action: Action
    speed: Speed
    rule_type: RuleType
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "speed", Speed(self.speed))
        object.__setattr__(self, "rule_type", RuleType(self.rule_type))

    def text(self) -> str:
        return f"suggestion({self.action}, {self.speed}, {self.rule_type})."


@dataclass(frozen=True)
class FinalDecision:
    action: Action
    speed: Speed
    tier: RuleType
    winning_suggestion: str = ""

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "speed", Speed(self.speed))
        object.__setattr__(self, "tier", RuleType(self.tier))

    def text(self) -> str:
        return f"final_decision({self.action}, {self.speed})."


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>%[^\n]*)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<atom>[a-z][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<punct>[(),.])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


@dataclass
class _Term:
    name: str
    args: list[_Tok] = field(default_factory=list)
    line: int = 0
    col: int = 0


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise PredicateSyntaxError(line, col, "a token", text[pos])
        kind = m.lastgroup
        chunk = m.group()
        if kind == "number" and pos + len(chunk) < n and (text[pos + len(chunk)].isalnum() or text[pos + len(chunk)] == "_"):
            raise PredicateSyntaxError(line, col, "a number", chunk + text[pos + len(chunk)])
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, chunk, line, col))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


def _parse_terms(text: str | bytes) -> list[_Term]:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PredicateSyntaxError(1, exc.start + 1, "UTF-8 text") from None
    toks = _tokenize(text)
    terms: list[_Term] = []
    i = 0

    def expect(kind: str, value: str | None = None) -> _Tok:
        nonlocal i
        tok = toks[i]
        if tok.kind != kind or (value is not None and tok.text != value):
            want = repr(value) if value is not None else kind
            raise PredicateSyntaxError(tok.line, tok.col, want, tok.text or "end of input")
        i += 1
        return tok

    while toks[i].kind != "eof":
        head = expect("atom")
        term = _Term(head.text, line=head.line, col=head.col)
        if toks[i].kind == "punct" and toks[i].text == "(":
            i += 1
            while True:
                tok = toks[i]
                if tok.kind not in ("number", "atom", "string"):
                    raise PredicateSyntaxError(tok.line, tok.col, "an argument", tok.text or "end of input")
                term.args.append(tok)
                i += 1
                if toks[i].kind == "punct" and toks[i].text == ",":
                    i += 1
                    continue
                expect("punct", ")")
                break
        expect("punct", ".")
        terms.append(term)
    return terms


def _number(tok: _Tok, slot: str, allow_inf: bool = False) -> float:
    if tok.kind == "number":
        v = float(tok.text)
        if math.isinf(v):
            raise FactValueError(f"{slot} overflows", tok.line, tok.col)
        return v
    if allow_inf and tok.kind == "atom" and tok.text == "inf":
        return math.inf
    raise PredicateSyntaxError(tok.line, tok.col, f"a number for {slot}", tok.text)


def _integer(tok: _Tok, slot: str) -> int:
    if tok.kind != "number" or not re.fullmatch(r"[+-]?\d+", tok.text):
        raise PredicateSyntaxError(tok.line, tok.col, f"an integer for {slot}", tok.text)
    return int(tok.text)


def _enum(tok: _Tok, enum_cls, slot: str):
    if tok.kind != "atom":
        raise PredicateSyntaxError(tok.line, tok.col, f"an atom for {slot}", tok.text)
    try:
        return enum_cls(tok.text)
    except ValueError:
        raise VocabularyError(tok.text, slot, tok.line, tok.col) from None


def _text(tok: _Tok) -> str:
    if tok.kind == "string":
        return re.sub(r"\\(.)", lambda m: _UNESCAPE.get(m.group(1), m.group(1)), tok.text[1:-1])
    return tok.text


def _check_arity(term: _Term, arity: int) -> None:
    if len(term.args) != arity:
        raise UnknownPredicateError(term.name, len(term.args), term.line, term.col)


def _field_error(exc: FactValueError, term: _Term) -> FactValueError:
    if exc.line:
        return exc
    return FactValueError(str(exc), term.line, term.col)


def parse_facts(text: str | bytes) -> SceneFacts:
    """Parse a facts document into :class:`SceneFacts`.

    Exactly one ``ego/3`` predicate is required.  Any predicate outside
    ``frame/1``, ``ego/3``, ``lane/1``, ``history/2`` and ``object/8`` raises
    :class:`UnknownPredicateError`.
    """
    ego_args = None
    frame_id = ""
    lane_id = 0
    history: dict[int, float] = {}
    objects: list[ObjectFact] = []
    seen_ids: set[int] = set()
    for term in _parse_terms(text):
        a = term.args
        try:
            if term.name == "ego":
                _check_arity(term, 3)
                if ego_args is not None:
                    raise PredicateError("ego/3 given twice", term.line, term.col)
                ego_args = (_number(a[0], "ego speed"), _number(a[1], "ego heading"), _enum(a[2], Nav, "Nav"))
            elif term.name == "frame":
                _check_arity(term, 1)
                frame_id = _text(a[0])
            elif term.name == "lane":
                _check_arity(term, 1)
                lane_id = _integer(a[0], "lane id")
            elif term.name == "history":
                _check_arity(term, 2)
                idx = _integer(a[0], "history index")
                if idx in history or idx < 0:
                    raise FactValueError(f"bad history index {idx}", term.line, term.col)
                history[idx] = _number(a[1], "history speed")
            elif term.name == "object":
                _check_arity(term, 8)
                obj_id = _integer(a[0], "object id")
                if obj_id in seen_ids:
                    raise DuplicateIdError(obj_id, term.line, term.col)
                seen_ids.add(obj_id)
                objects.append(ObjectFact(
                    id=obj_id,
                    category=_enum(a[1], Category, "Category"),
                    distance=_number(a[2], "distance"),
                    speed=_number(a[3], "speed"),
                    heading=_number(a[4], "heading"),
                    relative_pos=_enum(a[5], RelPos, "RelPos"),
                    attribute=_enum(a[6], Attribute, "Attribute"),
                    ttc=_number(a[7], "ttc", allow_inf=True),
                ))
            else:
                raise UnknownPredicateError(term.name, len(a), term.line, term.col)
        except FactValueError as exc:
            raise _field_error(exc, term) from None
    if ego_args is None:
        raise PredicateError("missing ego/3 predicate", 1, 1)
    if sorted(history) != list(range(len(history))):
        raise FactValueError("history indices must be 0..n-1", 1, 1)
    try:
        ego = EgoFacts(
            speed=ego_args[0], heading=ego_args[1], nav=ego_args[2], lane_id=lane_id,
            history_speeds=tuple(history[k] for k in sorted(history)),
        )
    except FactValueError as exc:
        raise FactValueError(str(exc), 1, 1) from None
    return SceneFacts(ego=ego, objects=tuple(objects), frame_id=frame_id)


def parse_suggestions(text: str | bytes, provenance: str = "") -> list[Suggestion]:
    """Parse ``suggestion(Action, TargetSpeed, Type).`` lines.

    Each suggestion gets ``provenance`` suffixed with its 1-based position,
    e.g. ``"template#2"``.
    """
    out = []
    for n, term in enumerate(_parse_terms(text), start=1):
        if term.name != "suggestion" or len(term.args) != 3:
            raise UnknownPredicateError(term.name, len(term.args), term.line, term.col)
        a = term.args
        out.append(Suggestion(
            _enum(a[0], Action, "Action"),
            _enum(a[1], Speed, "TargetSpeed"),
            _enum(a[2], RuleType, "Type"),
            f"{provenance}#{n}" if provenance else f"#{n}",
        ))
    return out


# ---------------------------------------------------------------------------
# serialization


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    s = f"{x:.6g}"
    return "0" if s == "-0" else s


_UNESCAPE = {"n": "\n", "r": "\r"}


def _quote(s: str) -> str:
    s = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r")
    return '"' + s + '"'


def serialize_facts(f: SceneFacts) -> str:
    """Canonical text: fixed predicate and field order, one predicate per line."""
    lines = []
    if f.frame_id:
        lines.append(f"frame({_quote(f.frame_id)}).")
    e = f.ego
    lines.append(f"ego({_fmt(e.speed)}, {_fmt(e.heading)}, {e.nav}).")
    if e.lane_id != 0:
        lines.append(f"lane({e.lane_id}).")
    for k, h in enumerate(e.history_speeds):
        lines.append(f"history({k}, {_fmt(h)}).")
    for o in f.objects:
        lines.append(
            f"object({o.id}, {o.category}, {_fmt(o.distance)}, {_fmt(o.speed)}, "
            f"{_fmt(o.heading)}, {o.relative_pos}, {o.attribute}, {_fmt(o.ttc)})."
        )
    return "\n".join(lines) + "\n"


def serialize_suggestions(suggestions) -> str:
    return "".join(s.text() + "\n" for s in suggestions)


def compute_ttc(distance: float, closing_speed: float, eps: float = TTC_EPS) -> float:
    """Constant-closing-speed time to collision; ``inf`` when not closing."""
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    if closing_speed > eps:
        return distance / closing_speed
    return math.inf
