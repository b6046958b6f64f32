"""Run configuration: file loading, per-role sampling, and the stable digest
recorded in trace headers.

The config file is JSON.  Documented keys:

    endpoint        chat-completions URL
    model           model name sent in the payload
    api_key_env     name of the environment variable holding the API key
    image_endpoint  image-generation URL (defaults to endpoint)
    image_model     image-generation model (defaults to model)
    sampling        {"meta": {...}, "mindset": {...}, "gate": {...}} with
                    temperature / top_p / max_tokens per role
    max_steps       mindset-call budget per episode
    retries         transport retry attempts
    sandbox_command argv used to spawn the execution shim
    sandbox_timeout_s  per-execution limit
    workspace_root  directory for per-episode workspaces
    numeric_rel_tol optional scoring tolerance override
    workers         default parallel items for dataset runs
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backend import SamplingParams

DEFAULT_MAX_STEPS = 12
DEFAULT_SANDBOX_TIMEOUT_S = 30.0


@dataclass
class RoleSampling:
    meta: SamplingParams = field(default_factory=SamplingParams)
    mindset: SamplingParams = field(default_factory=SamplingParams)
    gate: SamplingParams = field(default_factory=SamplingParams)


@dataclass
class RunConfig:
    endpoint: str = "https://openrouter.ai/api/v1/chat/completions"
    model: str = "qwen/qwen3-vl-32b-instruct"
    api_key_env: str = "OPENROUTER_API_KEY"
    image_endpoint: str = ""
    image_model: str = ""
    sampling: RoleSampling = field(default_factory=RoleSampling)
    max_steps: int = DEFAULT_MAX_STEPS
    retries: int = 3
    sandbox_command: list[str] = field(default_factory=lambda: ["python3", "-m", "sandbox_shim"])
    sandbox_timeout_s: float = DEFAULT_SANDBOX_TIMEOUT_S
    workspace_root: str = "workspaces"
    numeric_rel_tol: float | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.image_endpoint:
            self.image_endpoint = self.endpoint
        if not self.image_model:
            self.image_model = self.model


def _params_from(obj: dict, base: SamplingParams) -> SamplingParams:
    return SamplingParams(
        temperature=obj.get("temperature", base.temperature),
        top_p=obj.get("top_p", base.top_p),
        max_tokens=obj.get("max_tokens", base.max_tokens),
    )


def load_config(path: Path | str) -> RunConfig:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    sampling_obj = obj.get("sampling", {})
    base = SamplingParams()
    sampling = RoleSampling(
        meta=_params_from(sampling_obj.get("meta", {}), base),
        mindset=_params_from(sampling_obj.get("mindset", {}), base),
        gate=_params_from(sampling_obj.get("gate", {}), base),
    )
    return RunConfig(
        endpoint=obj.get("endpoint", RunConfig.endpoint),
        model=obj.get("model", RunConfig.model),
        api_key_env=obj.get("api_key_env", RunConfig.api_key_env),
        image_endpoint=obj.get("image_endpoint", ""),
        image_model=obj.get("image_model", ""),
        sampling=sampling,
        max_steps=obj.get("max_steps", DEFAULT_MAX_STEPS),
        retries=obj.get("retries", 3),
        sandbox_command=list(obj.get("sandbox_command", ["python3", "-m", "sandbox_shim"])),
        sandbox_timeout_s=float(obj.get("sandbox_timeout_s", DEFAULT_SANDBOX_TIMEOUT_S)),
        workspace_root=obj.get("workspace_root", "workspaces"),
        numeric_rel_tol=obj.get("numeric_rel_tol"),
        workers=int(obj.get("workers", 1)),
    )


def _params_digest_fields(params: SamplingParams) -> dict:
    return {
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    }


def config_digest(config: RunConfig, max_steps: int | None = None) -> str:
    """Digest of the behavior-relevant fields only; volatile paths and key
    names are excluded so identical runs in different directories produce
    identical trace headers."""
    payload = {
        "model": config.model,
        "endpoint": config.endpoint,
        "image_model": config.image_model,
        "sampling": {
            "meta": _params_digest_fields(config.sampling.meta),
            "mindset": _params_digest_fields(config.sampling.mindset),
            "gate": _params_digest_fields(config.sampling.gate),
        },
        "max_steps": max_steps if max_steps is not None else config.max_steps,
        "sandbox_timeout_s": config.sandbox_timeout_s,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
