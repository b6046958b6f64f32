"""comind: a mindset-orchestration reasoning engine.

A meta-agent plans in a tagged transcript, dispatches sub-tasks to four
specialist executors (algorithmic, convergent, divergent, spatial) through
a bidirectional context gate, internalizes each gated result, and answers.
Includes a streaming protocol parser, deterministic scripted backends, an
image-artifact registry, a sandbox client, and a benchmark harness.
"""

from .backend import (
    BackendError,
    ChatMessage,
    Completion,
    SamplingParams,
    ScriptedBackend,
    ScriptedImageBackend,
    Usage,
)
from .config import RunConfig, config_digest, load_config
from .engine import BackendSet, EpisodeConfig, EpisodeResult, run_episode
from .gate import GateDecision, OutputSummary, input_gate, output_gate
from .harness import BenchmarkItem, RunReport, invocation_stats, load_dataset, run_method, score
from .mindsets import MindsetOutput, run_algorithmic, run_convergent, run_divergent, run_spatial
from .protocol import (
    StreamParser,
    TagKind,
    Trace,
    TraceEvent,
    Violation,
    extract_image_refs,
    parse_text,
    read_trace_file,
    render_event,
    validate_trace,
    write_trace_file,
)
from .registry import ArtifactRegistry, ImageArtifact
from .sandbox import ExecResult, StubSandbox, SubprocessSandbox

__version__ = "0.1.0"

__all__ = [
    "ArtifactRegistry",
    "BackendError",
    "BackendSet",
    "BenchmarkItem",
    "ChatMessage",
    "Completion",
    "EpisodeConfig",
    "EpisodeResult",
    "ExecResult",
    "GateDecision",
    "ImageArtifact",
    "MindsetOutput",
    "OutputSummary",
    "RunConfig",
    "RunReport",
    "SamplingParams",
    "ScriptedBackend",
    "ScriptedImageBackend",
    "StreamParser",
    "StubSandbox",
    "SubprocessSandbox",
    "TagKind",
    "Trace",
    "TraceEvent",
    "Usage",
    "Violation",
    "config_digest",
    "extract_image_refs",
    "input_gate",
    "invocation_stats",
    "load_config",
    "load_dataset",
    "output_gate",
    "parse_text",
    "read_trace_file",
    "render_event",
    "run_algorithmic",
    "run_convergent",
    "run_divergent",
    "run_episode",
    "run_method",
    "run_spatial",
    "score",
    "validate_trace",
    "write_trace_file",
]
