"""Control-tag protocol: tag grammar, streaming parser, validator, renderer.

A reasoning episode is a flat stream of tagged segments.  The meta model
emits ``<cognitive_decision>``, ``<call_*>``, ``<insight>`` and ``<Answer>``
segments; the engine injects ``<*_result>`` segments.  This module owns the
concrete tag spellings, an incremental parser that tolerates chunk
boundaries splitting tags, a grammar validator that reports (never raises),
and the canonical renderer used to rebuild the transcript.

Tags are matched case-sensitively.  Unknown angle-bracket constructs (for
example ``<branch id="A">`` inside a divergent result) are plain text at
this layer; the divergent executor owns branch markup.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable


class TagKind(str, Enum):
    COGNITIVE_DECISION = "cognitive_decision"
    CALL_ALGORITHMIC = "call_algorithmic"
    CALL_CONVERGENT = "call_convergent"
    CALL_DIVERGENT = "call_divergent"
    CALL_SPATIAL = "call_spatial"
    ALGORITHMIC_RESULT = "algorithmic_result"
    CONVERGENT_RESULT = "convergent_result"
    DIVERGENT_RESULT = "divergent_result"
    SPATIAL_RESULT = "spatial_result"
    INSIGHT = "insight"
    ANSWER = "answer"


# The answer tag is the one capitalized spelling in the protocol.
_TAG_NAMES: dict[TagKind, str] = {
    kind: ("Answer" if kind is TagKind.ANSWER else kind.value) for kind in TagKind
}

CALL_KINDS = frozenset(
    {
        TagKind.CALL_ALGORITHMIC,
        TagKind.CALL_CONVERGENT,
        TagKind.CALL_DIVERGENT,
        TagKind.CALL_SPATIAL,
    }
)
RESULT_KINDS = frozenset(
    {
        TagKind.ALGORITHMIC_RESULT,
        TagKind.CONVERGENT_RESULT,
        TagKind.DIVERGENT_RESULT,
        TagKind.SPATIAL_RESULT,
    }
)

RESULT_FOR_CALL: dict[TagKind, TagKind] = {
    TagKind.CALL_ALGORITHMIC: TagKind.ALGORITHMIC_RESULT,
    TagKind.CALL_CONVERGENT: TagKind.CONVERGENT_RESULT,
    TagKind.CALL_DIVERGENT: TagKind.DIVERGENT_RESULT,
    TagKind.CALL_SPATIAL: TagKind.SPATIAL_RESULT,
}
CALL_FOR_RESULT = {result: call for call, result in RESULT_FOR_CALL.items()}

# Short mindset names, keyed by call kind (used for stats and prompts).
MINDSET_NAMES: dict[TagKind, str] = {
    TagKind.CALL_ALGORITHMIC: "algorithmic",
    TagKind.CALL_CONVERGENT: "convergent",
    TagKind.CALL_DIVERGENT: "divergent",
    TagKind.CALL_SPATIAL: "spatial",
}

MODEL_EMITTED = "model_emitted"
ENGINE_INJECTED = "engine_injected"


def open_tag(kind: TagKind) -> str:
    return f"<{_TAG_NAMES[kind]}>"


def close_tag(kind: TagKind) -> str:
    return f"</{_TAG_NAMES[kind]}>"


# Lookup of every concrete tag string.  No tag string is a prefix of
# another (all end at their first '>'), so matching is unambiguous.
_TAG_TABLE: dict[str, tuple[TagKind, bool]] = {}
for _kind in TagKind:
    _TAG_TABLE[open_tag(_kind)] = (_kind, False)
    _TAG_TABLE[close_tag(_kind)] = (_kind, True)
_MAX_TAG_LEN = max(len(text) for text in _TAG_TABLE)


# Identifier pattern for registered image artifacts: IMG_/GEN_ plus exactly
# three digits, not embedded in a longer identifier or number.
IMAGE_REF_PATTERN = re.compile(r"(?<![A-Za-z0-9_])(?:IMG|GEN)_[0-9]{3}(?![0-9])")


def extract_image_refs(body: str) -> list[str]:
    """Return artifact ids referenced in ``body``, first-occurrence order, deduped."""
    seen: list[str] = []
    for match in IMAGE_REF_PATTERN.finditer(body):
        ref = match.group(0)
        if ref not in seen:
            seen.append(ref)
    return seen


@dataclass
class TraceEvent:
    seq: int
    kind: TagKind
    body: str
    image_refs: list[str] = field(default_factory=list)
    origin: str = MODEL_EMITTED


def default_origin(kind: TagKind) -> str:
    return ENGINE_INJECTED if kind in RESULT_KINDS else MODEL_EMITTED


def make_event(seq: int, kind: TagKind, body: str, origin: str | None = None) -> TraceEvent:
    """Build an event with derived image refs and the origin implied by its kind."""
    return TraceEvent(
        seq=seq,
        kind=kind,
        body=body,
        image_refs=extract_image_refs(body),
        origin=origin if origin is not None else default_origin(kind),
    )


@dataclass
class Trace:
    question: str
    events: list[TraceEvent] = field(default_factory=list)
    terminated: bool = False

    def call_events(self) -> list[TraceEvent]:
        return [ev for ev in self.events if ev.kind in CALL_KINDS]

    def mindsets_invoked(self) -> list[str]:
        """Distinct mindset names called at least once, in first-call order."""
        names: list[str] = []
        for ev in self.call_events():
            name = MINDSET_NAMES[ev.kind]
            if name not in names:
                names.append(name)
        return names


@dataclass
class Violation:
    rule: str
    seq: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.rule}@{self.seq}" + (f": {self.detail}" if self.detail else "")


class BodyContainsOwnTag(ValueError):
    """An event body embeds its own opening or closing tag string."""


def render_event(event: TraceEvent) -> str:
    """Serialize one event as ``<kind>body</kind>`` with the exact tag spelling."""
    opening, closing = open_tag(event.kind), close_tag(event.kind)
    if opening in event.body or closing in event.body:
        raise BodyContainsOwnTag(
            f"body of {event.kind.value} event at seq {event.seq} contains its own tag"
        )
    return f"{opening}{event.body}{closing}"


def render_events(events: Iterable[TraceEvent], sep: str = "\n\n", strict: bool = True) -> str:
    """Join rendered events.  Non-strict mode space-breaks embedded own tags
    instead of raising, for transcript rebuilding from untrusted bodies."""
    parts = []
    for ev in events:
        try:
            parts.append(render_event(ev))
        except BodyContainsOwnTag:
            if strict:
                raise
            body = ev.body.replace(open_tag(ev.kind), f"< {_TAG_NAMES[ev.kind]}>")
            body = body.replace(close_tag(ev.kind), f"</ {_TAG_NAMES[ev.kind]}>")
            parts.append(f"{open_tag(ev.kind)}{body}{close_tag(ev.kind)}")
    return sep.join(parts)


class StreamParser:
    """Incremental recognizer for the tag protocol.

    ``feed`` may be called with arbitrarily chunked input; an event is
    emitted exactly when its closing tag has been fully consumed.  Text
    outside recognized tag pairs is retained as filler (auditable, no
    events).  The parser is total: malformed input produces violation
    records, never exceptions.
    """

    def __init__(self) -> None:
        self._buf = ""
        self._open: TagKind | None = None
        self._body: list[str] = []
        self._filler: list[str] = []
        self._next_seq = 0
        self.violations: list[Violation] = []

    @property
    def open_kind(self) -> TagKind | None:
        return self._open

    @property
    def partial_body(self) -> str:
        """Body accumulated so far for an unclosed tag."""
        return "".join(self._body)

    @property
    def pending(self) -> str:
        """Unconsumed tail that may still become a tag."""
        return self._buf

    @property
    def filler_text(self) -> str:
        return "".join(self._filler)

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def allocate_seq(self) -> int:
        """Reserve the next ordinal for an externally constructed event
        that shares this stream's numbering (engine-injected results)."""
        seq = self._next_seq
        self._next_seq += 1
        return seq

    def feed(self, chunk: str) -> list[TraceEvent]:
        events: list[TraceEvent] = []
        buf = self._buf + chunk
        pos = 0
        n = len(buf)
        while pos < n:
            lt = buf.find("<", pos)
            if lt == -1:
                self._emit_text(buf[pos:])
                pos = n
                break
            if lt > pos:
                self._emit_text(buf[pos:lt])
                pos = lt
            verdict, kind, is_close, length = self._classify_at(buf, pos)
            if verdict == "hold":
                break
            if verdict == "literal":
                self._emit_text("<")
                pos += 1
                continue
            assert kind is not None
            self._handle_tag(kind, is_close, events)
            pos += length
        self._buf = buf[pos:]
        return events

    def _classify_at(self, buf: str, pos: int) -> tuple[str, TagKind | None, bool, int]:
        # A known tag contains exactly one '>', at its end; so if the first
        # '>' after pos does not terminate a known tag, nothing starting at
        # pos can be one.
        gt = buf.find(">", pos + 1, pos + _MAX_TAG_LEN + 1)
        if gt == -1:
            tail = buf[pos:]
            if len(tail) <= _MAX_TAG_LEN and any(t.startswith(tail) for t in _TAG_TABLE):
                return ("hold", None, False, 0)
            return ("literal", None, False, 0)
        candidate = buf[pos : gt + 1]
        hit = _TAG_TABLE.get(candidate)
        if hit is None:
            return ("literal", None, False, 0)
        kind, is_close = hit
        return ("tag", kind, is_close, len(candidate))

    def _emit_text(self, text: str) -> None:
        if not text:
            return
        if self._open is None:
            self._filler.append(text)
        else:
            self._body.append(text)

    def _handle_tag(self, kind: TagKind, is_close: bool, events: list[TraceEvent]) -> None:
        if self._open is None:
            if is_close:
                self.violations.append(
                    Violation(
                        "mismatched_close",
                        self._next_seq,
                        f"{close_tag(kind)} with no open tag",
                    )
                )
                self._filler.append(close_tag(kind))
            else:
                self._open = kind
                self._body = []
            return
        if is_close and kind is self._open:
            events.append(self._finish_event())
        elif not is_close and kind is self._open:
            # Same-kind nesting unsupported: the inner opener is body text
            # and the first closing tag wins.
            self._body.append(open_tag(kind))
        elif not is_close:
            self.violations.append(
                Violation(
                    "nested_tag",
                    self._next_seq,
                    f"{open_tag(kind)} inside unclosed {open_tag(self._open)}",
                )
            )
            events.append(self._finish_event())
            self._open = kind
            self._body = []
        else:
            # Foreign closing tag inside a body is plain text.
            self._body.append(close_tag(kind))

    def _finish_event(self) -> TraceEvent:
        assert self._open is not None
        event = make_event(self._next_seq, self._open, "".join(self._body))
        self._next_seq += 1
        self._open = None
        self._body = []
        return event


def parse_text(text: str) -> tuple[list[TraceEvent], list[Violation], StreamParser]:
    """Whole-string parse; returns events, violations, and the final state."""
    parser = StreamParser()
    events = parser.feed(text)
    return events, parser.violations, parser


# --- grammar validation -------------------------------------------------

_START, _READY, _IN_CALL, _AFTER_RESULT, _AFTER_INSIGHT, _DONE = (
    "start",
    "ready",
    "in_call",
    "after_result",
    "after_insight",
    "done",
)


def validate_trace(trace: Trace) -> list[Violation]:
    """Check every trace invariant; empty list iff the trace is well formed.

    Violations are data: callers decide severity.  A non-terminated trace
    may end mid-pattern (truncation is not a violation).
    """
    violations: list[Violation] = []

    for idx, ev in enumerate(trace.events):
        if ev.seq != idx:
            violations.append(Violation("seq_gap", idx, f"seq {ev.seq} at position {idx}"))
        expected = default_origin(ev.kind)
        if ev.origin != expected:
            violations.append(
                Violation("wrong_origin", idx, f"{ev.kind.value} has origin {ev.origin}")
            )
        if ev.image_refs != extract_image_refs(ev.body):
            violations.append(Violation("image_refs_mismatch", idx, ""))
        if open_tag(ev.kind) in ev.body or close_tag(ev.kind) in ev.body:
            violations.append(Violation("body_contains_own_tag", idx, ev.kind.value))

    state = _START
    pending_call: TagKind | None = None
    pending_call_seq = -1
    first_answer_seq: int | None = None

    def resync(kind: TagKind) -> str:
        nonlocal pending_call, pending_call_seq
        if kind in CALL_KINDS:
            pending_call = kind
            return _IN_CALL
        if kind in RESULT_KINDS:
            return _AFTER_RESULT
        if kind is TagKind.COGNITIVE_DECISION:
            return _READY
        if kind is TagKind.INSIGHT:
            return _AFTER_INSIGHT
        return _DONE

    for idx, ev in enumerate(trace.events):
        kind = ev.kind
        if kind is TagKind.ANSWER and first_answer_seq is None:
            first_answer_seq = idx

        if state == _DONE:
            violations.append(Violation("event_after_answer", idx, kind.value))
            state = resync(kind)
            continue

        if state == _IN_CALL:
            if kind in RESULT_KINDS and CALL_FOR_RESULT[kind] is pending_call:
                pending_call = None
                state = _AFTER_RESULT
                continue
            violations.append(
                Violation(
                    "missing_result",
                    pending_call_seq,
                    f"{pending_call.value if pending_call else '?'} not followed by its result",
                )
            )
            pending_call = None
            state = resync(kind)
            if kind in CALL_KINDS:
                pending_call_seq = idx
            continue

        if state == _START:
            if kind is TagKind.COGNITIVE_DECISION:
                state = _READY
            elif kind is TagKind.ANSWER:
                # Relaxation: an immediate answer with zero calls is a valid
                # (degenerate) trace.
                state = _DONE
            else:
                violations.append(Violation("missing_leading_decision", idx, kind.value))
                state = resync(kind)
                if kind in CALL_KINDS:
                    pending_call_seq = idx
            continue

        if state == _READY:
            if kind in CALL_KINDS:
                pending_call, pending_call_seq, state = kind, idx, _IN_CALL
            elif kind is TagKind.ANSWER:
                state = _DONE
            elif kind is TagKind.COGNITIVE_DECISION:
                violations.append(Violation("unexpected_decision", idx, "decision after decision"))
            elif kind is TagKind.INSIGHT:
                violations.append(Violation("unexpected_insight", idx, "insight without result"))
                state = _AFTER_INSIGHT
            else:
                violations.append(Violation("unexpected_result", idx, kind.value))
                state = _AFTER_RESULT
            continue

        if state == _AFTER_RESULT:
            if kind is TagKind.INSIGHT:
                state = _AFTER_INSIGHT
            elif kind is TagKind.COGNITIVE_DECISION:
                violations.append(
                    Violation("decision_before_insight", idx, "result must be internalized first")
                )
                state = _READY
            elif kind in CALL_KINDS:
                violations.append(Violation("missing_insight", idx, f"call {kind.value}"))
                pending_call, pending_call_seq, state = kind, idx, _IN_CALL
            elif kind is TagKind.ANSWER:
                violations.append(Violation("missing_insight", idx, "answer"))
                state = _DONE
            else:
                violations.append(Violation("unexpected_result", idx, kind.value))
            continue

        # state == _AFTER_INSIGHT
        if kind in CALL_KINDS:
            pending_call, pending_call_seq, state = kind, idx, _IN_CALL
        elif kind is TagKind.ANSWER:
            state = _DONE
        elif kind is TagKind.COGNITIVE_DECISION:
            state = _READY
        elif kind is TagKind.INSIGHT:
            violations.append(Violation("extra_insight", idx, "more than one insight"))
        else:
            violations.append(Violation("unexpected_result", idx, kind.value))
            state = _AFTER_RESULT

    last = len(trace.events) - 1
    if trace.terminated:
        if state != _DONE or (trace.events and trace.events[-1].kind is not TagKind.ANSWER):
            violations.append(Violation("terminated_without_answer", max(last, 0), ""))
        if not trace.events:
            violations.append(Violation("terminated_without_answer", 0, "empty trace"))
    elif first_answer_seq is not None:
        violations.append(Violation("answer_without_termination", first_answer_seq, ""))

    return violations


_INSIGHT_RULES = frozenset({"missing_insight", "decision_before_insight", "extra_insight"})


def internalize_check(trace: Trace) -> list[Violation]:
    """Result-must-be-internalized subset of ``validate_trace``."""
    return [v for v in validate_trace(trace) if v.rule in _INSIGHT_RULES]


# --- trace file format ---------------------------------------------------
#
# JSONL: line 1 is a header object {"question", "config_digest", "images"},
# then one object per event {"seq", "kind", "body", "image_refs", "origin"}.


def _event_to_json(ev: TraceEvent) -> str:
    obj = {
        "seq": ev.seq,
        "kind": ev.kind.value,
        "body": ev.body,
        "image_refs": ev.image_refs,
        "origin": ev.origin,
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


class TraceWriter:
    """Incremental trace persistence: header first, one line per event."""

    def __init__(self, path: Path | str, question: str, config_digest: str, image_ids: list[str]):
        self.path = Path(path)
        self._fh: IO[str] = self.path.open("w", encoding="utf-8")
        header = {"question": question, "config_digest": config_digest, "images": image_ids}
        self._fh.write(json.dumps(header, ensure_ascii=False, separators=(",", ":")) + "\n")
        self._fh.flush()

    def write_event(self, ev: TraceEvent) -> None:
        self._fh.write(_event_to_json(ev) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def write_trace_file(
    trace: Trace, path: Path | str, config_digest: str = "", image_ids: list[str] | None = None
) -> None:
    with TraceWriter(path, trace.question, config_digest, image_ids or []) as writer:
        for ev in trace.events:
            writer.write_event(ev)


def read_trace_file(path: Path | str) -> tuple[Trace, dict]:
    """Load a persisted trace; termination is implied by a final answer event."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"empty trace file: {path}")
    header = json.loads(lines[0])
    events = []
    for line in lines[1:]:
        if not line.strip():
            continue
        obj = json.loads(line)
        events.append(
            TraceEvent(
                seq=obj["seq"],
                kind=TagKind(obj["kind"]),
                body=obj["body"],
                image_refs=list(obj["image_refs"]),
                origin=obj["origin"],
            )
        )
    terminated = bool(events) and events[-1].kind is TagKind.ANSWER
    return Trace(question=header["question"], events=events, terminated=terminated), header
