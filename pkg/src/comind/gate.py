"""Bidirectional context gate between the orchestrator and the executors.

The input gate asks a model to extract the minimal context and image set a
call needs; the output gate asks it to distill a verbose execution record
into the one result the main chain should internalize.  Both degrade
gracefully: a malformed reply or backend failure falls back to passthrough
behavior and flags the episode as degraded, never aborting it.

Information-density ratios are measured in characters (a tokenizer-free
proxy): rho_in = len(extracted context) / len(serialized history) and
rho_out = len(summary) / len(raw output).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import prompts
from .backend import BackendError, ChatMessage, SamplingParams
from .protocol import CALL_KINDS, TagKind, Trace, extract_image_refs, render_events
from .registry import ImageArtifact

FALLBACK_SUMMARY_CHARS = 1000


@dataclass
class GateDecision:
    context_text: str
    inject_images: list[str] = field(default_factory=list)
    rho_in: float = 0.0
    degraded: str | None = None


@dataclass
class OutputSummary:
    text: str
    mentioned_artifacts: list[str] = field(default_factory=list)
    rho_out: float = 0.0
    degraded: str | None = None


@dataclass
class DensityReport:
    rho_in: float
    rho_out: float


def serialize_history(trace: Trace) -> str:
    """The orchestrator-visible transcript: rendered events, in order."""
    return render_events(trace.events, sep="\n\n", strict=False)


def describe_artifacts(artifacts: list[ImageArtifact]) -> str:
    if not artifacts:
        return "(none)"
    return "\n".join(f"[{a.id}] {a.note}".rstrip() for a in artifacts)


def scan_json_object(text: str) -> dict | None:
    """First balanced {...} object in text, tolerating surrounding prose."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            c = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                    except ValueError:
                        break
                    return obj if isinstance(obj, dict) else None
        start = text.find("{", start + 1)
    return None


def _density_in(context_text: str, history_text: str) -> float:
    return len(context_text) / max(1, len(history_text))


def input_gate(
    history: Trace,
    call: str,
    mindset: TagKind,
    available_images: list[ImageArtifact],
    backend,
    params: SamplingParams | None = None,
) -> GateDecision:
    """Extract (relevant context, images to inject) for one mindset call."""
    if not call.strip():
        raise ValueError("call must be non-empty")
    if mindset not in CALL_KINDS:
        raise ValueError(f"not a call kind: {mindset}")
    params = params or SamplingParams()
    history_text = serialize_history(history)
    prompt = prompts.render_input_gate(
        call=call,
        history=history_text,
        available_images=describe_artifacts(available_images),
        target=prompts.INPUT_GATE_TARGETS[mindset],
    )
    registered = [a.id for a in available_images]

    failure = ""
    for _ in range(2):  # initial attempt plus one malformed-JSON retry
        try:
            completion = backend.complete([ChatMessage.text("user", prompt)], params)
        except BackendError as exc:
            failure = f"backend error: {exc}"
            break
        obj = scan_json_object(completion.text)
        if obj is None or not isinstance(obj.get("context_text"), str):
            failure = "malformed gate JSON"
            continue
        raw_images = obj.get("inject_images", [])
        if not isinstance(raw_images, list):
            raw_images = []
        images = _filter_images([str(x) for x in raw_images], registered)
        context = obj["context_text"]
        return GateDecision(
            context_text=context,
            inject_images=images,
            rho_in=_density_in(context, history_text),
        )

    # Passthrough fallback: the full history and any ids named in the call.
    images = _filter_images(extract_image_refs(call), registered)
    return GateDecision(
        context_text=history_text,
        inject_images=images,
        rho_in=_density_in(history_text, history_text),
        degraded=f"input_gate_fallback: {failure}",
    )


def _filter_images(candidates: list[str], registered: list[str]) -> list[str]:
    seen: list[str] = []
    for candidate in candidates:
        if candidate in registered and candidate not in seen:
            seen.append(candidate)
    return seen


def output_gate(
    raw,
    call: str,
    backend,
    params: SamplingParams | None = None,
) -> OutputSummary:
    """Distill a mindset's raw output into the summary injected upstream."""
    params = params or SamplingParams()
    raw_text = raw.trace_text
    new_images = list(raw.new_images)

    if not raw_text.strip() and not new_images:
        return OutputSummary(
            text="(no output)",
            mentioned_artifacts=[],
            rho_out=0.0,
            degraded="empty_mindset_output",
        )

    prompt = prompts.render_output_gate(
        call=call,
        record=raw_text,
        artifacts=describe_artifacts(new_images),
    )
    degraded = None
    try:
        completion = backend.complete([ChatMessage.text("user", prompt)], params)
        text = completion.text.strip()
        if not text:
            degraded = "output_gate_empty_reply"
            text = _fallback_summary(raw_text, new_images)
    except BackendError as exc:
        degraded = f"output_gate_fallback: {exc}"
        text = _fallback_summary(raw_text, new_images)

    # Generated artifact identifiers survive gating even if the model drops
    # them; the main chain must be able to reference every new artifact.
    for artifact in new_images:
        if artifact.id not in text:
            text = (text + " " if text else "") + f"Generated [{artifact.id}]."

    return OutputSummary(
        text=text,
        mentioned_artifacts=extract_image_refs(text),
        rho_out=len(text) / max(1, len(raw_text)),
        degraded=degraded,
    )


def _fallback_summary(raw_text: str, new_images: list[ImageArtifact]) -> str:
    text = raw_text[:FALLBACK_SUMMARY_CHARS]
    if new_images:
        listing = ", ".join(f"[{a.id}]" for a in new_images)
        text = (text + "\n" if text else "") + f"Artifacts: {listing}"
    return text


def aggregate_density(reports: list[DensityReport]) -> dict:
    """Mean/min/max per direction over one episode's gated calls."""
    if not reports:
        raise ValueError("aggregate_density needs at least one gated call")
    rho_in = [r.rho_in for r in reports]
    rho_out = [r.rho_out for r in reports]
    return {
        "rho_in": {"mean": sum(rho_in) / len(rho_in), "min": min(rho_in), "max": max(rho_in)},
        "rho_out": {"mean": sum(rho_out) / len(rho_out), "min": min(rho_out), "max": max(rho_out)},
    }


def density_report(episode_result) -> dict:
    """Aggregate density statistics for a finished episode."""
    return aggregate_density(episode_result.density_reports)
