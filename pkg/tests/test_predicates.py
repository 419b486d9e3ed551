import math

import pytest
from hypothesis import given, settings, strategies as st

from nsplan.predicates import (
    Action, Attribute, Category, DuplicateIdError, EgoFacts, FactValueError, Nav, ObjectFact,
    PredicateError, PredicateSyntaxError, RelPos, RuleType, SceneFacts, Speed, Suggestion,
    UnknownPredicateError, VocabularyError, compute_ttc, parse_facts, parse_suggestions,
    serialize_facts, vocabulary_triples,
)

CASE_TEXT = "ego(6.9, 0.0, straight). object(3, pedestrian, 4.5, 1.2, 1.57, front, crossing, 0.89)."


def test_vocabulary_sizes():
    assert len(Action) == 9 and len(Speed) == 6 and len(Nav) == 3 and len(RuleType) == 5
    assert len(vocabulary_triples()) == 162


def test_tier_order():
    order = sorted(RuleType, key=lambda r: r.priority)
    assert [r.value for r in order] == ["emergency", "safety", "legal", "comfort", "efficiency"]


def test_parse_case_study_facts():
    f = parse_facts(CASE_TEXT)
    assert f.ego.speed == 6.9 and f.ego.nav == Nav.STRAIGHT
    (o,) = f.objects
    assert (o.id, o.category, o.distance, o.ttc) == (3, Category.PEDESTRIAN, 4.5, 0.89)


def test_parse_empty_scene():
    f = parse_facts("ego(0.0, 0.0, straight).")
    assert f.ego.speed == 0 and f.objects == ()


def test_duplicate_id():
    text = ("ego(5, 0, straight). object(1, vehicle, 10, 5, 0, front, moving, 0.89)."
            " object(1, vehicle, 12, 5, 0, front, moving, 2).")
    with pytest.raises(DuplicateIdError) as exc:
        parse_facts(text)
    assert exc.value.obj_id == 1


def test_duplicate_id_in_constructor():
    o = ObjectFact(1, Category.VEHICLE, 10, 5, 0, RelPos.FRONT, Attribute.MOVING)
    with pytest.raises(DuplicateIdError):
        SceneFacts(EgoFacts(5.0), (o, o))


def test_syntax_error_has_position():
    with pytest.raises(PredicateSyntaxError) as exc:
        parse_facts("ego(6.9, 0.0, straight).\nobject(3, pedestrian 4.5).")
    assert exc.value.line == 2 and exc.value.col > 1
    assert exc.value.expected


def test_unknown_predicate_reported():
    with pytest.raises(UnknownPredicateError):
        parse_facts("ego(1, 0, straight). weather(rain).")


def test_missing_ego():
    with pytest.raises(PredicateError):
        parse_facts("object(1, vehicle, 10, 5, 0, front, moving, inf).")


@pytest.mark.parametrize("text, slot", [
    ("ego(1, 0, up).", "Nav"),
    ("ego(1, 0, left). object(1, dragon, 10, 5, 0, front, moving, inf).", "Category"),
])
def test_vocabulary_error(text, slot):
    with pytest.raises(VocabularyError) as exc:
        parse_facts(text)
    assert exc.value.slot == slot


@pytest.mark.parametrize("text", [
    "ego(-1, 0, straight).",
    "ego(1, 0, straight). object(1, vehicle, -2, 5, 0, front, moving, inf).",
    "ego(1, 0, straight). object(1, vehicle, 2, 5, 4, front, moving, inf).",
    "ego(1, 0, straight). object(1, vehicle, 2, 5, 0, front, moving, 0).",
])
def test_value_errors(text):
    with pytest.raises(FactValueError):
        parse_facts(text)


def test_comments_and_inf():
    f = parse_facts("% scene\nego(3, 0, left). % trailing\nobject(0, barrier, 20, 0, 0, front, stationary, inf).")
    assert math.isinf(f.objects[0].ttc)


def test_suggestions():
    (s,) = parse_suggestions("suggestion(yield, zero, safety).")
    assert (s.action, s.speed, s.rule_type) == (Action.YIELD, Speed.ZERO, RuleType.SAFETY)
    (s,) = parse_suggestions("suggestion(keep_lane, current, efficiency).")
    assert (s.action, s.speed, s.rule_type) == (Action.KEEP_LANE, Speed.CURRENT, RuleType.EFFICIENCY)


def test_suggestion_vocabulary():
    with pytest.raises(VocabularyError) as exc:
        parse_suggestions("suggestion(swerve, zero, safety).")
    assert exc.value.atom == "swerve" and exc.value.slot == "Action"


def test_suggestion_provenance_numbering():
    out = parse_suggestions("suggestion(yield, zero, safety).\nsuggestion(keep_lane, slow, comfort).", "llm")
    assert [s.provenance for s in out] == ["llm#1", "llm#2"]


def test_serialize_case_study():
    f = parse_facts(CASE_TEXT)
    assert serialize_facts(f) == (
        "ego(6.9, 0, straight).\n"
        "object(3, pedestrian, 4.5, 1.2, 1.57, front, crossing, 0.89).\n"
    )


def test_serialize_empty_is_single_line():
    assert serialize_facts(SceneFacts(EgoFacts(8.0))) == "ego(8, 0, straight).\n"


def test_ttc():
    assert compute_ttc(10, 5) == 2.0
    assert math.isinf(compute_ttc(4.5, 0))
    assert compute_ttc(4.45, 5.0) == pytest.approx(0.89, abs=1e-12)
    with pytest.raises(ValueError):
        compute_ttc(-1, 2)


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 30))
def test_ttc_monotone_in_distance(d1, d2, v):
    if d1 < d2:
        assert compute_ttc(d1, v) < compute_ttc(d2, v)


def test_bytes_input_and_bad_utf8():
    assert parse_facts(b"ego(1, 0, straight).").ego.speed == 1
    with pytest.raises(PredicateError):
        parse_facts(b"ego(1, 0, straight). \xff\xfe")


# ---------------------------------------------------------------------------
# round trip


finite = dict(allow_nan=False, allow_infinity=False)
objects = st.builds(
    ObjectFact,
    id=st.integers(0, 10_000),
    category=st.sampled_from(Category),
    distance=st.floats(0, 500, **finite),
    speed=st.floats(0, 60, **finite),
    heading=st.floats(-3.14159, math.pi, **finite),
    relative_pos=st.sampled_from(RelPos),
    attribute=st.sampled_from(Attribute),
    ttc=st.one_of(st.just(math.inf), st.floats(1e-3, 1e4, **finite)),
)
egos = st.builds(
    EgoFacts,
    speed=st.floats(0, 60, **finite),
    heading=st.floats(-10, 10, **finite),
    nav=st.sampled_from(Nav),
    lane_id=st.integers(-5, 5),
    history_speeds=st.lists(st.floats(0, 60, **finite), max_size=8).map(tuple),
)
scenes = st.builds(
    SceneFacts,
    ego=egos,
    objects=st.lists(objects, max_size=6, unique_by=lambda o: o.id).map(tuple),
    frame_id=st.text(st.characters(codec="utf-8", exclude_categories=("Cs",)), max_size=12),
)


@settings(max_examples=500)
@given(scenes)
def test_round_trip(f):
    text = serialize_facts(f)
    assert parse_facts(text) == f
    assert serialize_facts(parse_facts(text)) == text


@given(st.lists(st.tuples(st.sampled_from(Action), st.sampled_from(Speed), st.sampled_from(RuleType)), max_size=8))
def test_suggestion_round_trip(triples):
    sugg = [Suggestion(a, s, r) for a, s, r in triples]
    text = "".join(s.text() + "\n" for s in sugg)
    back = parse_suggestions(text)
    assert [(s.action, s.speed, s.rule_type) for s in back] == triples


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_parser_total_on_bytes(data):
    for fn in (parse_facts, parse_suggestions):
        try:
            fn(data)
        except PredicateError as exc:
            assert exc.line >= 0 and exc.col >= 0
