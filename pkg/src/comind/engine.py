"""The meta-agent episode loop.

One episode is a sequential state machine: build the meta conversation
(system prompt, question with input images, the rendered transcript so
far), complete with stop sequences set to the four closing call tags plus
the closing answer tag, classify the new segment, and either route a call
through the gates and its executor, terminate on an answer, or recover
from protocol drift.  Stop-sequence interception is what keeps the meta
model from writing result blocks itself: generation is cut at the end of
every call instruction, and the engine injects the gated result.

Results are injected as ``<*_result>`` events with engine origin; the
model is expected to internalize each with an ``<insight>`` before its
next call, and the validator tracks that rule live.  The trace file is
persisted incrementally, one line per event, alongside a ``gates.jsonl``
sidecar holding the per-call density measurements.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .backend import (
    BackendError,
    ChatMessage,
    Completion,
    ImagePart,
    SamplingParams,
    TextPart,
    Usage,
)
from .config import RoleSampling, RunConfig, config_digest
from .gate import DensityReport, aggregate_density, input_gate, output_gate
from .mindsets import (
    MindsetOutput,
    run_algorithmic,
    run_convergent,
    run_divergent,
    run_spatial,
)
from .protocol import (
    CALL_KINDS,
    MINDSET_NAMES,
    RESULT_FOR_CALL,
    StreamParser,
    TagKind,
    Trace,
    TraceEvent,
    TraceWriter,
    Violation,
    close_tag,
    internalize_check,
    make_event,
    open_tag,
    parse_text,
    render_events,
    validate_trace,
)
from .registry import ArtifactRegistry
from .sandbox import SandboxUnavailable

META_STOP_SEQUENCES: tuple[str, ...] = (
    close_tag(TagKind.CALL_ALGORITHMIC),
    close_tag(TagKind.CALL_CONVERGENT),
    close_tag(TagKind.CALL_DIVERGENT),
    close_tag(TagKind.CALL_SPATIAL),
    close_tag(TagKind.ANSWER),
)

TRACE_FILE = "trace.jsonl"
GATE_LOG_FILE = "gates.jsonl"


@dataclass
class EpisodeConfig:
    max_steps: int = 12
    n_max_repairs: int = 2
    branch_min: int = 2
    branch_max: int = 5
    sampling: RoleSampling = field(default_factory=RoleSampling)
    sandbox_timeout_s: float = 30.0
    force_answer_on_budget: bool = True
    digest: str = ""

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "EpisodeConfig":
        return cls(
            max_steps=config.max_steps,
            sampling=config.sampling,
            sandbox_timeout_s=config.sandbox_timeout_s,
            digest=config_digest(config),
        )


@dataclass
class BackendSet:
    meta: object
    mindset: object
    gate: object
    image: object = None

    @classmethod
    def single(cls, chat_backend, image_backend=None) -> "BackendSet":
        return cls(meta=chat_backend, mindset=chat_backend, gate=chat_backend, image=image_backend)


@dataclass
class EpisodeState:
    question: str
    input_image_ids: list[str] = field(default_factory=list)
    trace: Trace = None  # type: ignore[assignment]
    t: int = 0
    usage: Usage = field(default_factory=Usage)
    degraded_flags: list[str] = field(default_factory=list)


@dataclass
class EpisodeResult:
    answer: str | None
    trace: Trace
    usage: Usage
    invocations: dict[str, int]
    density_reports: list[DensityReport]
    degraded_flags: list[str]
    violations: list[Violation]
    wall_time_ms: int
    workspace: Path
    fatal: str | None = None

    @property
    def density(self) -> dict | None:
        if not self.density_reports:
            return None
        return aggregate_density(self.density_reports)


@dataclass
class MetaAction:
    kind: str  # "call" | "answer" | "drift"
    tag: TagKind | None = None
    body: str | None = None
    truncated: bool = False


def next_action(segment: str) -> MetaAction:
    """Classify one meta completion by its last completed or stop-truncated
    tag.  A trailing unclosed call/answer tag is the stop-truncation case;
    its closing tag must be reconstructed by the caller."""
    events, _, parser = parse_text(segment)
    open_kind = parser.open_kind
    if open_kind is not None and (open_kind in CALL_KINDS or open_kind is TagKind.ANSWER):
        body = parser.partial_body + parser.pending
        kind = "answer" if open_kind is TagKind.ANSWER else "call"
        return MetaAction(kind=kind, tag=open_kind, body=body, truncated=True)
    if events:
        last = events[-1]
        if last.kind in CALL_KINDS:
            return MetaAction(kind="call", tag=last.kind, body=last.body, truncated=False)
        if last.kind is TagKind.ANSWER:
            return MetaAction(kind="answer", tag=last.kind, body=last.body, truncated=False)
    return MetaAction(kind="drift")


class _MeteredBackend:
    """Forwarding wrapper that accumulates usage into the episode total."""

    def __init__(self, inner, usage: Usage, lock: threading.Lock) -> None:
        self._inner = inner
        self._usage = usage
        self._lock = lock

    def complete(self, messages: list[ChatMessage], params: SamplingParams) -> Completion:
        completion = self._inner.complete(messages, params)
        with self._lock:
            self._usage.add(completion.usage)
        return completion


def _sanitize_result_body(body: str, kind: TagKind) -> str:
    # A gated summary must stay renderable as a single result block.
    return body.replace(open_tag(kind), "").replace(close_tag(kind), "")


class EpisodeRunner:
    def __init__(
        self,
        question: str,
        input_images: list[bytes],
        config: EpisodeConfig,
        backends: BackendSet,
        sandbox,
        workspace: Path | str,
    ) -> None:
        if not question.strip():
            raise ValueError("question must be non-empty")
        self.config = config
        self.backends = backends
        self.sandbox = sandbox
        self.workspace = Path(workspace)
        self.registry = ArtifactRegistry(self.workspace)
        for index, data in enumerate(input_images, start=1):
            self.registry.register_input(data, note=f"input image {index}")
        self.state = EpisodeState(
            question=question,
            input_image_ids=[a.id for a in self.registry.list_available()],
            trace=Trace(question=question, events=[], terminated=False),
        )
        self._parser = StreamParser()
        self._usage_lock = threading.Lock()
        self._meta = _MeteredBackend(backends.meta, self.state.usage, self._usage_lock)
        self._mindset = _MeteredBackend(backends.mindset, self.state.usage, self._usage_lock)
        self._gate = _MeteredBackend(backends.gate, self.state.usage, self._usage_lock)
        self.density_reports: list[DensityReport] = []
        self.live_violations: list[Violation] = []
        self._writer: TraceWriter | None = None
        self._gate_log = None

    # -- conversation assembly ------------------------------------------

    def _meta_messages(self, nudge: bool) -> list[ChatMessage]:
        parts: list = [TextPart(self.state.question)]
        for artifact in self.registry.list_available():
            if artifact.source == "input":
                parts.append(ImagePart(artifact.id, self.registry.resolve_bytes(artifact.id)))
        messages = [
            ChatMessage.text("system", prompts.META_SYSTEM_PROMPT),
            ChatMessage(role="user", parts=parts),
        ]
        if self.state.trace.events:
            transcript = render_events(self.state.trace.events, sep="\n\n", strict=False)
            messages.append(ChatMessage.text("assistant", transcript))
        if nudge:
            messages.append(ChatMessage.text("user", prompts.META_NUDGE))
        return messages

    # -- event plumbing ----------------------------------------------------

    def _feed(self, text: str) -> list[TraceEvent]:
        events = self._parser.feed(text)
        for event in events:
            self.state.trace.events.append(event)
            if self._writer is not None:
                self._writer.write_event(event)
        return events

    def _inject_result(self, call_kind: TagKind, summary_text: str) -> TraceEvent:
        result_kind = RESULT_FOR_CALL[call_kind]
        event = make_event(
            self._parser.allocate_seq(),
            result_kind,
            _sanitize_result_body(summary_text, result_kind),
        )
        self.state.trace.events.append(event)
        if self._writer is not None:
            self._writer.write_event(event)
        return event

    def _log_gate(self, call_event: TraceEvent, report: DensityReport, extra: dict) -> None:
        if self._gate_log is None:
            return
        record = {
            "call_seq": call_event.seq,
            "mindset": MINDSET_NAMES[call_event.kind],
            "rho_in": report.rho_in,
            "rho_out": report.rho_out,
        }
        record.update(extra)
        self._gate_log.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
        self._gate_log.flush()

    # -- call routing ------------------------------------------------------

    def _resolve_inject(self, decision) -> list[tuple[str, bytes]]:
        return [(i, self.registry.resolve_bytes(i)) for i in decision.inject_images]

    def _run_mindset(self, call_kind: TagKind, call_body: str, decision, step: int) -> MindsetOutput:
        workdir = self.workspace / f"step_{step:03d}_{MINDSET_NAMES[call_kind]}"
        mindset_params = self.config.sampling.mindset
        if call_kind is TagKind.CALL_ALGORITHMIC:
            return run_algorithmic(
                call_body,
                decision,
                self._mindset,
                self.sandbox,
                workdir=workdir,
                params=mindset_params,
                images=self._resolve_inject(decision),
                timeout_s=self.config.sandbox_timeout_s,
                n_max=self.config.n_max_repairs,
            )
        if call_kind is TagKind.CALL_CONVERGENT:
            return run_convergent(
                call_body,
                decision,
                self._mindset,
                params=mindset_params,
                images=self._resolve_inject(decision),
            )
        if call_kind is TagKind.CALL_DIVERGENT:
            return run_divergent(
                call_body,
                decision,
                self._mindset,
                params=mindset_params,
                images=self._resolve_inject(decision),
                min_branches=self.config.branch_min,
                max_branches=self.config.branch_max,
            )
        call_event_seq = self.state.trace.events[-1].seq
        return run_spatial(
            call_body,
            decision,
            self.backends.image,
            self.sandbox,
            self.registry,
            workdir=workdir,
            seq=call_event_seq,
            timeout_s=self.config.sandbox_timeout_s,
        )

    def _handle_call(self, action: MetaAction) -> None:
        call_event = self.state.trace.events[-1]
        assert call_event.kind in CALL_KINDS
        history = Trace(self.state.question, self.state.trace.events[:-1], False)
        decision = input_gate(
            history,
            action.body or "",
            action.tag,
            self.registry.list_available(),
            self._gate,
            params=self.config.sampling.gate,
        )
        if decision.degraded:
            self.state.degraded_flags.append(decision.degraded)

        output = self._run_mindset(action.tag, action.body or "", decision, self.state.t)

        summary = output_gate(output, action.body or "", self._gate, params=self.config.sampling.gate)
        if summary.degraded:
            self.state.degraded_flags.append(summary.degraded)

        report = DensityReport(rho_in=decision.rho_in, rho_out=summary.rho_out)
        self.density_reports.append(report)
        self._log_gate(
            call_event,
            report,
            {
                "context_chars": len(decision.context_text),
                "summary_chars": len(summary.text),
                "raw_chars": len(output.trace_text),
                "degraded": bool(decision.degraded or summary.degraded),
            },
        )
        self._inject_result(action.tag, summary.text)

    # -- terminal paths -------------------------------------------------------

    def _force_answer(self) -> str | None:
        messages = self._meta_messages(nudge=False)
        messages.append(ChatMessage.text("user", prompts.FORCE_ANSWER_INSTRUCTION))
        params = self.config.sampling.meta.with_stops(META_STOP_SEQUENCES)
        try:
            completion = self._meta.complete(messages, params)
        except BackendError as exc:
            self.state.degraded_flags.append(f"force_answer_failed: {exc}")
            return None
        action = next_action(completion.text)
        if action.kind == "answer":
            full = completion.text + (close_tag(TagKind.ANSWER) if action.truncated else "")
            self._feed(full)
            self.state.trace.terminated = True
            return (action.body or "").strip()
        self._feed(completion.text)
        self.state.degraded_flags.append("force_answer_no_answer")
        return None

    # -- main loop ---------------------------------------------------------------

    def run(self) -> EpisodeResult:
        start = time.monotonic()
        answer: str | None = None
        fatal: str | None = None
        nudged = False
        nudge_pending = False
        meta_params = self.config.sampling.meta.with_stops(META_STOP_SEQUENCES)

        self._writer = TraceWriter(
            self.workspace / TRACE_FILE,
            self.state.question,
            self.config.digest,
            self.state.input_image_ids,
        )
        self._gate_log = (self.workspace / GATE_LOG_FILE).open("w", encoding="utf-8")
        try:
            while True:
                try:
                    completion = self._meta.complete(self._meta_messages(nudge_pending), meta_params)
                except BackendError as exc:
                    fatal = f"meta backend failure: {exc}"
                    break
                nudge_pending = False
                action = next_action(completion.text)

                if action.kind == "call":
                    full = completion.text + (close_tag(action.tag) if action.truncated else "")
                    self._feed(full)
                    try:
                        self._handle_call(action)
                    except SandboxUnavailable as exc:
                        # Executors normally absorb this; a leak here still
                        # must not kill the episode.
                        self._inject_result(action.tag, f"(execution unavailable: {exc})")
                        self.state.degraded_flags.append(f"sandbox_unavailable: {exc}")
                    self.state.t += 1
                    self._merge_live_violations()
                    if self.state.t >= self.config.max_steps:
                        if self.config.force_answer_on_budget:
                            answer = self._force_answer()
                        break
                    continue

                if action.kind == "answer":
                    full = completion.text + (close_tag(TagKind.ANSWER) if action.truncated else "")
                    self._feed(full)
                    self.state.trace.terminated = True
                    answer = (action.body or "").strip()
                    break

                # Protocol drift: one corrective nudge, then force-answer.
                self._feed(completion.text)
                if not nudged:
                    nudged = True
                    nudge_pending = True
                    self.state.degraded_flags.append("meta_drift_nudged")
                    continue
                answer = self._force_answer()
                break
        finally:
            if self._writer is not None:
                self._writer.close()
            if self._gate_log is not None:
                self._gate_log.close()

        invocations = {name: 0 for name in MINDSET_NAMES.values()}
        for event in self.state.trace.call_events():
            invocations[MINDSET_NAMES[event.kind]] += 1

        return EpisodeResult(
            answer=answer,
            trace=self.state.trace,
            usage=self.state.usage,
            invocations=invocations,
            density_reports=self.density_reports,
            degraded_flags=self.state.degraded_flags,
            violations=validate_trace(self.state.trace),
            wall_time_ms=int((time.monotonic() - start) * 1000),
            workspace=self.workspace,
            fatal=fatal,
        )

    def _merge_live_violations(self) -> None:
        seen = {(v.rule, v.seq) for v in self.live_violations}
        for violation in internalize_check(self.state.trace):
            if (violation.rule, violation.seq) not in seen:
                self.live_violations.append(violation)


def run_episode(
    question: str,
    input_images: list[bytes],
    config: EpisodeConfig,
    backends: BackendSet,
    sandbox,
    workspace: Path | str,
) -> EpisodeResult:
    """Run one full episode in a fresh workspace; input images are
    registered as IMG_### before the loop starts."""
    runner = EpisodeRunner(question, input_images, config, backends, sandbox, workspace)
    return runner.run()


def force_answer(runner: EpisodeRunner) -> str | None:
    """One additional meta call demanding a final answer."""
    return runner._force_answer()
