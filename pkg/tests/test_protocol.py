from __future__ import annotations

import random

import pytest

from comind.protocol import (
    BodyContainsOwnTag,
    StreamParser,
    TagKind,
    Trace,
    extract_image_refs,
    internalize_check,
    make_event,
    parse_text,
    read_trace_file,
    render_event,
    render_events,
    validate_trace,
    write_trace_file,
)
from tracegen import (
    random_body,
    random_partition,
    random_trace,
    reference_accepts,
    reference_image_refs,
)


# --- streaming feed -------------------------------------------------------


def test_feed_single_call_event():
    text = "<call_algorithmic>Compute $3.5 \\times 696{,}340$.</call_algorithmic>"
    events, violations, _ = parse_text(text)
    assert violations == []
    assert len(events) == 1
    assert events[0].kind is TagKind.CALL_ALGORITHMIC
    assert events[0].body == "Compute $3.5 \\times 696{,}340$."


def test_feed_empty_input_changes_nothing():
    parser = StreamParser()
    assert parser.feed("") == []
    assert parser.open_kind is None
    assert parser.pending == ""
    assert parser.violations == []


def test_feed_tag_split_across_chunks():
    parser = StreamParser()
    assert parser.feed("<insi") == []
    events = parser.feed("ght>done</insight>")
    assert [(e.kind, e.body) for e in events] == [(TagKind.INSIGHT, "done")]


def test_feed_all_split_points_match_whole_parse():
    text = "<insight>done</insight><call_spatial>draw [IMG_001]</call_spatial>"
    whole = [(e.kind, e.body) for e in parse_text(text)[0]]
    for cut in range(len(text) + 1):
        parser = StreamParser()
        events = parser.feed(text[:cut]) + parser.feed(text[cut:])
        assert [(e.kind, e.body) for e in events] == whole, f"split at {cut}"


def test_filler_is_retained_not_eventized():
    events, violations, parser = parse_text("noise <insight>x</insight> trailing")
    assert len(events) == 1
    assert violations == []
    assert parser.filler_text == "noise  trailing"


def test_unknown_angle_constructs_are_filler_or_body():
    events, violations, parser = parse_text(
        '<divergent_result><branch id="A">alpha</branch></divergent_result>'
    )
    assert violations == []
    assert len(events) == 1
    assert events[0].body == '<branch id="A">alpha</branch>'
    assert parser.filler_text == ""


def test_nested_different_kind_truncates_and_reports():
    events, violations, _ = parse_text("<insight>abc<call_algorithmic>2+2</call_algorithmic>")
    assert [v.rule for v in violations] == ["nested_tag"]
    assert [(e.kind, e.body) for e in events] == [
        (TagKind.INSIGHT, "abc"),
        (TagKind.CALL_ALGORITHMIC, "2+2"),
    ]


def test_nested_same_kind_is_literal_first_close_wins():
    events, violations, _ = parse_text("<insight>a<insight>b</insight>")
    assert violations == []
    assert [(e.kind, e.body) for e in events] == [(TagKind.INSIGHT, "a<insight>b")]


def test_mismatched_close_is_filler_violation():
    events, violations, parser = parse_text("before</insight>after")
    assert [v.rule for v in violations] == ["mismatched_close"]
    assert events == []
    assert parser.filler_text == "before</insight>after"


def test_foreign_close_inside_body_is_literal():
    events, violations, _ = parse_text("<insight>a</call_spatial>b</insight>")
    assert violations == []
    assert [(e.kind, e.body) for e in events] == [(TagKind.INSIGHT, "a</call_spatial>b")]


def test_case_sensitive_tags():
    # Only <Answer> is capitalized; other spellings are noise.
    events, _, _ = parse_text("<ANSWER>x</ANSWER><Answer>y</Answer>")
    assert [(e.kind, e.body) for e in events] == [(TagKind.ANSWER, "y")]


def test_result_events_get_engine_injected_origin():
    events, _, _ = parse_text("<algorithmic_result>70</algorithmic_result><insight>i</insight>")
    assert events[0].origin == "engine_injected"
    assert events[1].origin == "model_emitted"


def test_incomplete_open_tag_stays_pending():
    parser = StreamParser()
    parser.feed("<call_spa")
    assert parser.pending == "<call_spa"
    assert parser.open_kind is None
    events = parser.feed("tial>body")
    assert events == []
    assert parser.open_kind is TagKind.CALL_SPATIAL
    assert parser.partial_body == "body"


# --- extract_image_refs ----------------------------------------------------


def test_extract_refs_basic():
    assert extract_image_refs("Generated [GEN_001]. The visualization shows...") == ["GEN_001"]


def test_extract_refs_none():
    assert extract_image_refs("no images here") == []


def test_extract_refs_order_and_dedupe():
    assert extract_image_refs("[IMG_001] then [GEN_002] then [IMG_001]") == [
        "IMG_001",
        "GEN_002",
    ]


def test_extract_refs_rejects_near_misses():
    assert extract_image_refs("IMG_12 IMGX_001 xIMG_001 IMG_0012 GEN_01") == []


@pytest.mark.parametrize("seed", range(6))
def test_extract_refs_matches_reference_scan(seed):
    rng = random.Random(1000 + seed)
    fragments = []
    for _ in range(200):
        roll = rng.random()
        if roll < 0.3:
            fragments.append(f"IMG_{rng.randint(0, 2000)}")
        elif roll < 0.5:
            fragments.append(f"GEN_{rng.randint(0, 999):03d}")
        elif roll < 0.6:
            fragments.append(rng.choice(["xIMG_001", "IMGX_002", "_GEN_003", "IMG_04"]))
        else:
            fragments.append(random_body(rng))
        fragments.append(rng.choice([" ", ", ", "] [", "\n", ""]))
    text = "".join(fragments)
    assert extract_image_refs(text) == reference_image_refs(text)


# --- validate_trace ---------------------------------------------------------


def _fig_style_trace() -> Trace:
    seq = iter(range(100))
    events = [
        make_event(next(seq), TagKind.COGNITIVE_DECISION, "plan spatial, convergent, algorithmic"),
        make_event(next(seq), TagKind.CALL_SPATIAL, "Generate a human body proportion diagram."),
        make_event(next(seq), TagKind.SPATIAL_RESULT, "Generated [GEN_001]. Arm is 3.5 heads."),
        make_event(next(seq), TagKind.INSIGHT, "arm length is 3.5 head sizes"),
        make_event(next(seq), TagKind.CALL_CONVERGENT, "radius or diameter?"),
        make_event(next(seq), TagKind.CONVERGENT_RESULT, "radius; 696,340 km"),
        make_event(next(seq), TagKind.INSIGHT, "use the radius"),
        make_event(next(seq), TagKind.CALL_ALGORITHMIC, "Compute 3.5 x 696,340."),
        make_event(next(seq), TagKind.ALGORITHMIC_RESULT, "2,437,190 km"),
        make_event(next(seq), TagKind.INSIGHT, "done"),
        make_event(next(seq), TagKind.ANSWER, "2,437,190 km"),
    ]
    return Trace(question="sun arms", events=events, terminated=True)


def test_validate_accepts_full_grammatical_trace():
    assert validate_trace(_fig_style_trace()) == []


def test_validate_missing_leading_decision():
    trace = Trace(
        question="q",
        events=[
            make_event(0, TagKind.CALL_CONVERGENT, "x"),
            make_event(1, TagKind.CONVERGENT_RESULT, "y"),
            make_event(2, TagKind.INSIGHT, "z"),
        ],
        terminated=False,
    )
    violations = validate_trace(trace)
    assert [str(v).split(":")[0] for v in violations] == ["missing_leading_decision@0"]


def test_validate_call_without_result():
    trace = Trace(
        question="q",
        events=[
            make_event(0, TagKind.COGNITIVE_DECISION, "plan"),
            make_event(1, TagKind.CALL_DIVERGENT, "explore"),
            make_event(2, TagKind.CALL_ALGORITHMIC, "compute"),
        ],
        terminated=False,
    )
    violations = validate_trace(trace)
    assert any(v.rule == "missing_result" and v.seq == 1 for v in violations)


def test_validate_immediate_answer_is_grammatical():
    trace = Trace("q", [make_event(0, TagKind.ANSWER, "42")], terminated=True)
    assert validate_trace(trace) == []


def test_validate_result_then_answer_needs_insight():
    trace = Trace(
        question="q",
        events=[
            make_event(0, TagKind.COGNITIVE_DECISION, "plan"),
            make_event(1, TagKind.CALL_ALGORITHMIC, "x"),
            make_event(2, TagKind.ALGORITHMIC_RESULT, "y"),
            make_event(3, TagKind.ANSWER, "y"),
        ],
        terminated=True,
    )
    assert any(v.rule == "missing_insight" for v in validate_trace(trace))


def test_validate_decision_must_follow_insight():
    trace = Trace(
        question="q",
        events=[
            make_event(0, TagKind.COGNITIVE_DECISION, "plan"),
            make_event(1, TagKind.CALL_ALGORITHMIC, "x"),
            make_event(2, TagKind.ALGORITHMIC_RESULT, "y"),
            make_event(3, TagKind.COGNITIVE_DECISION, "replan"),
        ],
        terminated=False,
    )
    assert any(v.rule == "decision_before_insight" for v in validate_trace(trace))


def test_validate_seq_and_origin_checks():
    ev = make_event(5, TagKind.COGNITIVE_DECISION, "plan")
    trace = Trace("q", [ev], terminated=False)
    assert any(v.rule == "seq_gap" for v in validate_trace(trace))
    bad = make_event(0, TagKind.ALGORITHMIC_RESULT, "r", origin="model_emitted")
    trace2 = Trace(
        "q",
        [
            make_event(0, TagKind.COGNITIVE_DECISION, "plan"),
            make_event(1, TagKind.CALL_ALGORITHMIC, "c"),
            bad,
        ],
        terminated=False,
    )
    trace2.events[2].seq = 2
    assert any(v.rule == "wrong_origin" for v in validate_trace(trace2))


def test_validate_unterminated_answer_flagged():
    trace = Trace("q", [make_event(0, TagKind.ANSWER, "42")], terminated=False)
    assert any(v.rule == "answer_without_termination" for v in validate_trace(trace))


@pytest.mark.parametrize("seed", range(8))
def test_validate_agrees_with_reference_acceptor_on_random_sequences(seed):
    rng = random.Random(2000 + seed)
    kinds = list(TagKind)
    for _ in range(300):
        if rng.random() < 0.5:
            trace = random_trace(rng, terminated=rng.random() < 0.8)
        else:
            n = rng.randint(0, 8)
            events = [make_event(i, rng.choice(kinds), random_body(rng)) for i in range(n)]
            trace = Trace("q", events, terminated=rng.random() < 0.5)
        clean = validate_trace(trace) == []
        assert clean == reference_accepts(trace), (
            f"disagreement on {[e.kind.value for e in trace.events]} "
            f"terminated={trace.terminated}"
        )


def test_internalize_check_subset_of_validator():
    rng = random.Random(7)
    for _ in range(100):
        trace = random_trace(rng)
        assert internalize_check(trace) == []
    bad = Trace(
        "q",
        [
            make_event(0, TagKind.COGNITIVE_DECISION, "p"),
            make_event(1, TagKind.CALL_SPATIAL, "c"),
            make_event(2, TagKind.SPATIAL_RESULT, "r"),
            make_event(3, TagKind.CALL_SPATIAL, "c2"),
        ],
        terminated=False,
    )
    rules = {v.rule for v in internalize_check(bad)}
    assert rules == {"missing_insight"}


# --- render_event ------------------------------------------------------------


def test_render_insight():
    assert render_event(make_event(0, TagKind.INSIGHT, "Done.")) == "<insight>Done.</insight>"


def test_render_answer_capitalized():
    assert render_event(make_event(0, TagKind.ANSWER, "240 km")) == "<Answer>240 km</Answer>"


def test_render_rejects_body_with_own_tag():
    with pytest.raises(BodyContainsOwnTag):
        render_event(make_event(0, TagKind.INSIGHT, "sneaky </insight> text"))
    with pytest.raises(BodyContainsOwnTag):
        render_event(make_event(0, TagKind.INSIGHT, "sneaky <insight> text"))


def test_render_events_lenient_breaks_own_tags():
    ev = make_event(0, TagKind.INSIGHT, "x</insight>y")
    out = render_events([ev], strict=False)
    assert out.startswith("<insight>") and out.endswith("</insight>")
    assert out.count("</insight>") == 1


def test_render_parse_round_trip_random_events():
    rng = random.Random(42)
    for _ in range(300):
        kind = rng.choice(list(TagKind))
        ev = make_event(0, kind, random_body(rng))
        events, violations, _ = parse_text(render_event(ev))
        assert violations == []
        assert [(e.kind, e.body) for e in events] == [(ev.kind, ev.body)]


# --- whole-trace properties ---------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_trace_round_trip_and_streaming_equivalence(seed):
    rng = random.Random(3000 + seed)
    for _ in range(60):
        trace = random_trace(rng)
        text = render_events(trace.events, sep=rng.choice(["", "\n", "\n\n", " filler "]))
        whole = [(e.kind, e.body) for e in parse_text(text)[0]]
        assert whole == [(e.kind, e.body) for e in trace.events]
        for _ in range(3):
            parser = StreamParser()
            chunked = []
            for chunk in random_partition(rng, text):
                chunked.extend(parser.feed(chunk))
            assert [(e.kind, e.body) for e in chunked] == whole


# --- trace file round trip -----------------------------------------------------


def test_trace_file_round_trip(tmp_path):
    trace = _fig_style_trace()
    path = tmp_path / "trace.jsonl"
    write_trace_file(trace, path, config_digest="abc123", image_ids=["IMG_001"])
    loaded, header = read_trace_file(path)
    assert header == {"question": "sun arms", "config_digest": "abc123", "images": ["IMG_001"]}
    assert loaded.terminated is True
    assert [(e.seq, e.kind, e.body, e.origin) for e in loaded.events] == [
        (e.seq, e.kind, e.body, e.origin) for e in trace.events
    ]
    assert [e.image_refs for e in loaded.events] == [e.image_refs for e in trace.events]
