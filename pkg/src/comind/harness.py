"""Dataset loading, answer scoring, method runners and run reports.

Datasets are JSONL, one item per line with keys: id, question, gold,
answer_type (exact | numeric | choice), optional images (paths relative to
the dataset file) and numeric_rel_tol.  Scoring is total: every prediction
comes back correct or incorrect, unparseable predictions score false and
are flagged, and a run never aborts on a single bad item.

Three methods share the runner: the orchestrated engine, plus two
single-call baselines (a bare question-answer template and a think-step-
by-step variant).
"""

from __future__ import annotations

import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backend import ChatMessage, SamplingParams
from .config import RunConfig
from .engine import BackendSet, EpisodeConfig, run_episode
from .prompts import COT_TEMPLATE, DIRECT_TEMPLATE
from .protocol import MINDSET_NAMES

ANSWER_TYPES = ("exact", "numeric", "choice")
CHOICE_LETTERS = ("A", "B", "C", "D", "E")
METHODS = ("com", "direct", "cot")


class SchemaError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingImageFile(ValueError):
    pass


@dataclass
class BenchmarkItem:
    id: str
    question: str
    gold: str
    answer_type: str
    images: list[str] = field(default_factory=list)
    numeric_rel_tol: float = 1e-6


def load_dataset(path: Path | str) -> list[BenchmarkItem]:
    path = Path(path)
    items: list[BenchmarkItem] = []
    seen_ids: set[str] = set()
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise SchemaError(line_no, f"invalid JSON: {exc}")
        for key in ("id", "question", "gold", "answer_type"):
            if key not in obj:
                raise SchemaError(line_no, f"missing required key '{key}'")
        answer_type = obj["answer_type"]
        if answer_type not in ANSWER_TYPES:
            raise SchemaError(line_no, f"unknown answer_type '{answer_type}'")
        gold = str(obj["gold"])
        if answer_type == "choice" and gold.upper() not in CHOICE_LETTERS:
            raise SchemaError(line_no, f"choice gold must be one of A-E, got '{gold}'")
        if answer_type == "numeric":
            try:
                float(gold.replace(",", ""))
            except ValueError:
                raise SchemaError(line_no, f"numeric gold does not parse: '{gold}'")
        item_id = str(obj["id"])
        if item_id in seen_ids:
            raise SchemaError(line_no, f"duplicate item id '{item_id}'")
        seen_ids.add(item_id)
        images = []
        for image in obj.get("images", []):
            resolved = (path.parent / image).resolve()
            if not resolved.exists():
                raise MissingImageFile(f"line {line_no}: image not found: {image}")
            images.append(str(resolved))
        items.append(
            BenchmarkItem(
                id=item_id,
                question=str(obj["question"]),
                gold=gold,
                answer_type=answer_type,
                images=images,
                numeric_rel_tol=float(obj.get("numeric_rel_tol", 1e-6)),
            )
        )
    return items


def save_dataset(items: list[BenchmarkItem], path: Path | str) -> None:
    lines = []
    for item in items:
        obj = {
            "id": item.id,
            "question": item.question,
            "gold": item.gold,
            "answer_type": item.answer_type,
            "images": item.images,
            "numeric_rel_tol": item.numeric_rel_tol,
        }
        lines.append(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- scoring ------------------------------------------------------------------

# Thousands-separated numbers first so "2,437,190" is one match, then
# decimals and integers, each with an optional exponent.
_NUMBER_RE = re.compile(
    r"[-+]?\d{1,3}(?:,\d{3})+(?:\.\d+)?(?:[eE][-+]?\d+)?"
    r"|[-+]?\d*\.\d+(?:[eE][-+]?\d+)?"
    r"|[-+]?\d+(?:[eE][-+]?\d+)?"
)


def extract_last_number(text: str) -> float | None:
    matches = _NUMBER_RE.findall(text)
    if not matches:
        return None
    try:
        return float(matches[-1].replace(",", ""))
    except ValueError:
        return None


def extract_choice(text: str) -> str | None:
    stripped = text.strip()
    if re.fullmatch(r"[a-e]", stripped):
        return stripped.upper()
    match = re.search(r"\b([A-E])\b", text)
    return match.group(1) if match else None


def score_detail(pred: str, item: BenchmarkItem) -> tuple[bool, str | None]:
    """Score one prediction; the flag names why an unparseable prediction
    was counted wrong."""
    if item.answer_type == "exact":
        return pred.strip().lower() == item.gold.strip().lower(), None
    if item.answer_type == "numeric":
        value = extract_last_number(pred)
        if value is None:
            return False, "unparseable_prediction"
        gold = float(item.gold.replace(",", ""))
        if gold == 0.0:
            return value == 0.0, None
        return math.isclose(value, gold, rel_tol=item.numeric_rel_tol, abs_tol=0.0), None
    if item.answer_type == "choice":
        letter = extract_choice(pred)
        if letter is None:
            return False, "unparseable_prediction"
        return letter == item.gold.upper(), None
    raise ValueError(f"unknown answer_type: {item.answer_type}")


def score(pred: str, item: BenchmarkItem) -> bool:
    return score_detail(pred, item)[0]


# --- run reports -----------------------------------------------------------------


@dataclass
class ItemResult:
    item_id: str
    correct: bool
    prediction: str
    tokens: int
    wall_time_ms: int
    mindsets: list[str] = field(default_factory=list)
    flagged: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "correct": self.correct,
            "prediction": self.prediction,
            "tokens": self.tokens,
            "wall_time_ms": self.wall_time_ms,
            "mindsets": self.mindsets,
            "flagged": self.flagged,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ItemResult":
        return cls(
            item_id=obj["item_id"],
            correct=obj["correct"],
            prediction=obj["prediction"],
            tokens=obj["tokens"],
            wall_time_ms=obj["wall_time_ms"],
            mindsets=list(obj.get("mindsets", [])),
            flagged=obj.get("flagged"),
            error=obj.get("error"),
        )


def recompute_aggregates(rows: list[ItemResult]) -> dict:
    """All report aggregates, derived from per-item rows and nothing else."""
    n = len(rows)
    if n == 0:
        return {"pass_at_1": 0.0, "mean_tokens": 0.0, "invoked_pct": {}, "multi_pct": 0.0, "n_items": 0}
    invoked = {name: 0 for name in MINDSET_NAMES.values()}
    multi = 0
    for row in rows:
        distinct = set(row.mindsets)
        for name in distinct:
            if name in invoked:
                invoked[name] += 1
        if len(distinct) >= 2:
            multi += 1
    return {
        "pass_at_1": sum(1 for r in rows if r.correct) / n,
        "mean_tokens": sum(r.tokens for r in rows) / n,
        "invoked_pct": {name: 100.0 * count / n for name, count in invoked.items()},
        "multi_pct": 100.0 * multi / n,
        "n_items": n,
    }


@dataclass
class RunReport:
    method: str
    items: list[ItemResult]

    @property
    def aggregates(self) -> dict:
        return recompute_aggregates(self.items)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "aggregates": self.aggregates,
            "items": [row.to_dict() for row in self.items],
        }

    def write(self, path: Path | str) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def read(cls, path: Path | str) -> "RunReport":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(method=obj["method"], items=[ItemResult.from_dict(r) for r in obj["items"]])


def invocation_stats(traces) -> dict:
    """Invoked-at-least-once percentage per mindset plus the share of traces
    calling two or more distinct mindsets."""
    traces = list(traces)
    if not traces:
        raise ValueError("invocation_stats needs at least one trace")
    n = len(traces)
    counts = {name: 0 for name in MINDSET_NAMES.values()}
    multi = 0
    for trace in traces:
        distinct = set(trace.mindsets_invoked())
        for name in distinct:
            counts[name] += 1
        if len(distinct) >= 2:
            multi += 1
    return {
        "n_traces": n,
        "invoked_pct": {name: 100.0 * count / n for name, count in counts.items()},
        "multi_pct": 100.0 * multi / n,
    }


# --- method runners ----------------------------------------------------------------


def _baseline_prompt(method: str, question: str) -> str:
    template = DIRECT_TEMPLATE if method == "direct" else COT_TEMPLATE
    return template.format(question=question)


def _run_baseline_item(method: str, item: BenchmarkItem, backend, params: SamplingParams,
                       out_dir: Path) -> ItemResult:
    start = time.monotonic()
    prompt = _baseline_prompt(method, item.question)
    completion = backend.complete([ChatMessage.text("user", prompt)], params)
    prediction = completion.text
    item_dir = out_dir / item.id
    item_dir.mkdir(parents=True, exist_ok=True)
    (item_dir / "completion.txt").write_text(prediction, encoding="utf-8")
    correct, flagged = score_detail(prediction, item)
    return ItemResult(
        item_id=item.id,
        correct=correct,
        prediction=prediction,
        tokens=completion.usage.total,
        wall_time_ms=int((time.monotonic() - start) * 1000),
        flagged=flagged,
    )


def _run_com_item(item: BenchmarkItem, config: RunConfig, backends: BackendSet, sandbox,
                  out_dir: Path) -> ItemResult:
    images = [Path(p).read_bytes() for p in item.images]
    episode_config = EpisodeConfig.from_run_config(config)
    result = run_episode(
        item.question, images, episode_config, backends, sandbox, out_dir / item.id
    )
    prediction = result.answer or ""
    correct, flagged = score_detail(prediction, item)
    if result.answer is None:
        flagged = flagged or "no_answer"
    return ItemResult(
        item_id=item.id,
        correct=correct,
        prediction=prediction,
        tokens=result.usage.total,
        wall_time_ms=result.wall_time_ms,
        mindsets=result.trace.mindsets_invoked(),
        flagged=flagged,
        error=result.fatal,
    )


def run_method(
    method: str,
    dataset: list[BenchmarkItem],
    config: RunConfig,
    backends: BackendSet,
    out_dir: Path | str,
    sandbox=None,
    workers: int = 1,
) -> RunReport:
    """Run a method over a dataset; per-item failures are recorded and the
    run continues.  Items execute concurrently up to ``workers``; rows are
    assembled order-independently and sorted by item id."""
    if method not in METHODS:
        raise ValueError(f"unknown method: {method}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    effective = list(dataset)
    if config.numeric_rel_tol is not None:
        effective = [
            BenchmarkItem(
                id=i.id, question=i.question, gold=i.gold, answer_type=i.answer_type,
                images=i.images, numeric_rel_tol=config.numeric_rel_tol,
            )
            for i in effective
        ]

    def one(item: BenchmarkItem) -> ItemResult:
        try:
            if method == "com":
                return _run_com_item(item, config, backends, sandbox, out_dir)
            return _run_baseline_item(method, item, backends.meta, config.sampling.meta, out_dir)
        except Exception as exc:  # per-item isolation: record, keep going
            return ItemResult(
                item_id=item.id,
                correct=False,
                prediction="",
                tokens=0,
                wall_time_ms=0,
                error=f"{type(exc).__name__}: {exc}",
            )

    if workers <= 1:
        rows = [one(item) for item in effective]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, effective))

    report = RunReport(method=method, items=sorted(rows, key=lambda r: r.item_id))
    report.write(out_dir / "report.json")
    return report
