"""The four mindset executors.

Each maps (call instruction, gated context) to a unified output: a raw
reasoning trace or execution log plus any newly generated image artifacts.
Executors never raise on model or tool failure; the failure is recorded in
the trace text so the orchestrator can read it and re-plan.

Algorithmic runs a generate-execute-repair loop with at most two bounded
repair attempts (three executions total).  Divergent generates 2-5 labeled
solution branches and explores each in a parallel model call, returning all
explorations so path selection stays with the orchestrator.  Spatial turns
instructions into images, either directly or by executing returned plotting
code in the sandbox with figure capture.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
import re

from . import prompts
from .backend import (
    BackendError,
    ChatMessage,
    GenerationFailed,
    ImageGenRequest,
    ImagePart,
    SamplingParams,
    TextPart,
    UnsupportedReference,
    extract_fenced_block,
)
from .registry import ImageArtifact, RegistryError
from .sandbox import STATUS_OK, ExecResult, SandboxUnavailable

N_MAX_REPAIRS = 2
MIN_BRANCHES = 2
MAX_BRANCHES = 5


@dataclass
class CodeAttempt:
    index: int
    code: str
    status: str  # ok | error | timeout
    stdout: str = ""
    error_type: str | None = None
    error_message: str | None = None

    @property
    def error_text(self) -> str:
        if self.status == "timeout":
            return "Timeout: execution exceeded the time limit"
        if self.error_type:
            return f"{self.error_type}: {self.error_message or ''}".rstrip(": ")
        return self.error_message or ""


@dataclass
class BranchRecord:
    id: str
    description: str
    exploration: str = ""


@dataclass
class MindsetOutput:
    trace_text: str
    new_images: list[ImageArtifact] = field(default_factory=list)
    executions: int = 0
    branches: list[BranchRecord] | None = None
    attempts: list[CodeAttempt] = field(default_factory=list)


def _user_message(text: str, images: list[tuple[str, bytes]] | None) -> ChatMessage:
    parts: list = [TextPart(text)]
    for image_id, data in images or []:
        parts.append(ImagePart(image_id=image_id, data=data))
    return ChatMessage(role="user", parts=parts)


# --- code extraction ---------------------------------------------------------

_CODE_KEYWORDS = frozenset(
    "import from def class return print for while if elif else try except "
    "finally with pass break continue assert raise yield lambda global del".split()
)
_CODE_TAIL_CHARS = tuple(":()[]{},+-*/%=")


def _looks_like_code_line(line: str) -> bool:
    stripped = line.strip()
    first = stripped.split(None, 1)[0] if stripped.split() else ""
    if first.rstrip(":(") in _CODE_KEYWORDS:
        return True
    if "=" in stripped:
        return True
    return stripped.endswith(_CODE_TAIL_CHARS)


def extract_code_block(completion: str) -> str | None:
    """First fenced block's interior; without fences, the whole completion
    when at least 80% of its non-blank lines resemble code, else None."""
    fenced = extract_fenced_block(completion)
    if fenced is not None:
        return fenced
    lines = [line for line in completion.splitlines() if line.strip()]
    if not lines:
        return None
    code_like = sum(1 for line in lines if _looks_like_code_line(line))
    if code_like / len(lines) >= 0.8:
        return completion.strip("\n")
    return None


# --- algorithmic ----------------------------------------------------------------


def _attempt_from_exec(index: int, code: str, result: ExecResult) -> CodeAttempt:
    return CodeAttempt(
        index=index,
        code=code,
        status=result.status,
        stdout=result.stdout,
        error_type=result.error_type,
        error_message=result.error_message,
    )


def _format_attempts(attempts: list[CodeAttempt], notes: list[str]) -> str:
    blocks = []
    for attempt in attempts:
        outcome = f"ok\n{attempt.stdout}".rstrip() if attempt.status == STATUS_OK else attempt.error_text
        blocks.append(f"[attempt {attempt.index}]\n{attempt.code}\n[outcome {attempt.index}] {outcome}")
    blocks.extend(notes)
    if attempts:
        last = attempts[-1]
        if last.status == STATUS_OK:
            blocks.append(f"final stdout:\n{last.stdout}".rstrip())
        else:
            blocks.append(f"final error: {last.error_text}")
    return "\n\n".join(blocks)


def run_algorithmic(
    call: str,
    gated,
    backend,
    sandbox,
    *,
    workdir: Path | str,
    params: SamplingParams | None = None,
    images: list[tuple[str, bytes]] | None = None,
    timeout_s: float = 30.0,
    n_max: int = N_MAX_REPAIRS,
) -> MindsetOutput:
    """Generate code for the call, execute it, repair on error at most
    ``n_max`` times; the final outcome is the last stdout or the last error."""
    if not call.strip():
        raise ValueError("call must be non-empty")
    params = params or SamplingParams()
    workdir = Path(workdir)
    instruction = prompts.compose_instruction(call, gated.context_text)
    try:
        completion = backend.complete(
            [_user_message(prompts.render_code_generation(instruction), images)], params
        )
    except BackendError as exc:
        return MindsetOutput(trace_text=f"code generation failed: {exc}")
    code = extract_code_block(completion.text)
    if code is None:
        return MindsetOutput(
            trace_text="model produced no executable code.\n" + completion.text
        )

    attempts: list[CodeAttempt] = []
    notes: list[str] = []
    for index in range(n_max + 1):
        try:
            result = sandbox.execute(
                code, workdir=workdir / f"attempt_{index}", timeout_s=timeout_s
            )
        except SandboxUnavailable as exc:
            notes.append(f"sandbox unavailable: {exc}")
            return MindsetOutput(
                trace_text=_format_attempts(attempts, notes),
                executions=len(attempts),
                attempts=attempts,
            )
        attempts.append(_attempt_from_exec(index, code, result))
        if result.status == STATUS_OK or index >= n_max:
            break
        try:
            fix = backend.complete(
                [_user_message(prompts.render_code_fix(code, result.error_text), None)], params
            )
        except BackendError as exc:
            notes.append(f"repair failed: {exc}")
            break
        new_code = extract_code_block(fix.text)
        if new_code is None:
            notes.append("repair produced no executable code")
            break
        code = new_code

    return MindsetOutput(
        trace_text=_format_attempts(attempts, notes),
        executions=len(attempts),
        attempts=attempts,
    )


# --- convergent -------------------------------------------------------------------


def run_convergent(
    call: str,
    gated,
    backend,
    *,
    params: SamplingParams | None = None,
    images: list[tuple[str, bytes]] | None = None,
) -> MindsetOutput:
    """One deep reasoning pass over the call plus its gated context."""
    if not call.strip():
        raise ValueError("call must be non-empty")
    params = params or SamplingParams()
    user_text = prompts.compose_instruction(call, gated.context_text)
    messages = [
        ChatMessage.text("system", prompts.CONVERGENT_SYSTEM_PROMPT),
        _user_message(user_text, images),
    ]
    try:
        completion = backend.complete(messages, params)
    except BackendError as exc:
        return MindsetOutput(trace_text=f"convergent reasoning failed: {exc}")
    return MindsetOutput(trace_text=completion.text)


# --- divergent --------------------------------------------------------------------

_BRANCH_RE = re.compile(r'<branch\s+id="([^"]{0,8})"\s*>(.*?)</branch>', re.S)
_BRANCH_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def parse_branches(text: str) -> list[BranchRecord]:
    """Extract ``<branch id="X">`` blocks; ids are kept when they are unique
    single letters, otherwise relabeled A, B, C... in parse order."""
    records = [
        BranchRecord(id=m.group(1).strip(), description=m.group(2).strip())
        for m in _BRANCH_RE.finditer(text)
    ]
    ids = [r.id for r in records]
    clean = all(len(i) == 1 and "A" <= i <= "Z" for i in ids) and len(set(ids)) == len(ids)
    if not clean:
        for position, record in enumerate(records):
            record.id = _BRANCH_LETTERS[position % len(_BRANCH_LETTERS)]
    return records


def run_divergent(
    call: str,
    gated,
    backend,
    *,
    params: SamplingParams | None = None,
    images: list[tuple[str, bytes]] | None = None,
    min_branches: int = MIN_BRANCHES,
    max_branches: int = MAX_BRANCHES,
) -> MindsetOutput:
    """Two phases: generate labeled solution branches, then explore each in
    an independent, concurrently issued model call.  All explorations are
    returned; selecting among them is the orchestrator's job."""
    if not call.strip():
        raise ValueError("call must be non-empty")
    params = params or SamplingParams()
    instruction = prompts.compose_instruction(call, gated.context_text)
    prompt = prompts.render_branch_generation(instruction)

    def generate() -> list[BranchRecord]:
        completion = backend.complete([_user_message(prompt, images)], params)
        return parse_branches(completion.text)

    try:
        branches = generate()
    except BackendError as exc:
        return MindsetOutput(trace_text=f"branch generation failed: {exc}", branches=[])
    if len(branches) < min_branches:
        try:
            retry = generate()
        except BackendError:
            retry = []
        if len(retry) >= len(branches):
            branches = retry
    if not branches:
        return MindsetOutput(
            trace_text="branch generation produced no branches after retry",
            branches=[],
        )
    branches = sorted(branches[:max_branches], key=lambda b: b.id)

    def explore(branch: BranchRecord) -> str:
        exploration_prompt = prompts.render_branch_exploration(call, branch.description)
        try:
            return backend.complete([_user_message(exploration_prompt, None)], params).text
        except BackendError as exc:
            return f"(exploration failed: {exc})"

    with ThreadPoolExecutor(max_workers=len(branches)) as pool:
        futures = [(branch, pool.submit(explore, branch)) for branch in branches]
        for branch, future in futures:
            branch.exploration = future.result()

    header = "\n".join(f"[branch {b.id}] {b.description}" for b in branches)
    body = "\n\n".join(f"[exploration {b.id}]\n{b.exploration}" for b in branches)
    return MindsetOutput(trace_text=f"{header}\n\n{body}", branches=branches)


# --- spatial ----------------------------------------------------------------------


def run_spatial(
    call: str,
    gated,
    image_backend,
    sandbox,
    registry,
    *,
    workdir: Path | str,
    seq: int,
    timeout_s: float = 30.0,
) -> MindsetOutput:
    """Route the gated instruction to the image backend.  A direct image is
    registered as a new artifact; returned plotting code is executed in the
    sandbox with figure capture (one repair attempt), and every captured
    figure is registered.  Failures are recorded, never raised."""
    if not call.strip():
        raise ValueError("call must be non-empty")
    workdir = Path(workdir)
    instruction = prompts.compose_instruction(call, gated.context_text)
    references = []
    for image_id in gated.inject_images:
        try:
            references.append(registry.resolve_bytes(image_id))
        except RegistryError:
            pass  # gate filtering guarantees registration; stay total anyway
    try:
        result = image_backend.generate_image(ImageGenRequest(instruction, references))
    except (GenerationFailed, UnsupportedReference) as exc:
        return MindsetOutput(trace_text=f"image generation failed: {exc}")

    if result.image is not None:
        artifact = registry.register_generated(result.image, note=call.strip()[:120], seq=seq)
        text = f"Generated [{artifact.id}]."
        if result.notes.strip():
            text += f" {result.notes.strip()}"
        return MindsetOutput(trace_text=text, new_images=[artifact])

    if result.code is not None:
        return _code_to_image(
            call, result.code, image_backend, sandbox, registry,
            workdir=workdir, seq=seq, timeout_s=timeout_s,
        )

    notes = result.notes.strip()
    return MindsetOutput(
        trace_text="image backend returned neither an image nor code."
        + (f" {notes}" if notes else "")
    )


def _code_to_image(
    call: str,
    code: str,
    image_backend,
    sandbox,
    registry,
    *,
    workdir: Path,
    seq: int,
    timeout_s: float,
) -> MindsetOutput:
    executions = 0
    exec_dir = workdir / "attempt_0"
    try:
        result = sandbox.execute(code, workdir=exec_dir, timeout_s=timeout_s, capture_figures=True)
        executions = 1
        if result.status != STATUS_OK:
            fixed = _request_code_fix(image_backend, code, result.error_text)
            if fixed is not None:
                exec_dir = workdir / "attempt_1"
                result = sandbox.execute(
                    fixed, workdir=exec_dir, timeout_s=timeout_s, capture_figures=True
                )
                executions = 2
    except SandboxUnavailable as exc:
        return MindsetOutput(
            trace_text=f"figure code could not be executed: {exc}", executions=executions
        )

    if result.status != STATUS_OK:
        return MindsetOutput(
            trace_text=f"code-to-image execution failed: {result.error_text}",
            executions=executions,
        )

    artifacts = []
    for rel_path in sorted(result.produced_files):
        file_path = exec_dir / rel_path
        if not file_path.exists():
            continue
        try:
            artifacts.append(
                registry.register_generated(file_path.read_bytes(), note=f"figure {rel_path}", seq=seq)
            )
        except RegistryError:
            continue
    if not artifacts:
        return MindsetOutput(
            trace_text="figure code ran but produced no images", executions=executions
        )
    ids = " ".join(f"[{a.id}]" for a in artifacts)
    stdout = result.stdout.strip()
    text = f"Generated {ids} from executed code."
    if stdout:
        text += f"\n{stdout}"
    return MindsetOutput(trace_text=text, new_images=artifacts, executions=executions)


def _request_code_fix(image_backend, code: str, error_text: str) -> str | None:
    fix_prompt = prompts.render_code_fix(code, error_text)
    try:
        result = image_backend.generate_image(ImageGenRequest(fix_prompt, []))
    except (GenerationFailed, UnsupportedReference):
        return None
    return result.code
