"""Two-stage LLM classification of comment validity and addressing."""

from __future__ import annotations

import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Iterable, Optional, Protocol, Sequence

from .errors import BackendFormatError, BackendUnavailable
from .reconstruct import CommentContext

STAGE1_LABELS = ("None", "General", "Valid")
STAGE2_LABELS = ("Valid-Uncertain", "Valid-Unaddressed", "Valid-Partially", "Valid-Fully")
FORMAT_RETRIES = 2
REMINDER = "\n\nRespond only with the JSON payload block, nothing else."


@dataclass(frozen=True)
class ValidityLabel:
    value: str
    items: tuple[str, ...] = ()

    def __post_init__(self):
        if self.value not in STAGE1_LABELS:
            raise ValueError(f"unknown validity label {self.value!r}")
        if (self.value == "Valid") != bool(self.items):
            raise ValueError("items must be nonempty exactly when the label is Valid")


@dataclass(frozen=True)
class AddressingLabel:
    value: str

    def __post_init__(self):
        if self.value not in STAGE2_LABELS:
            raise ValueError(f"unknown addressing label {self.value!r}")


@dataclass(frozen=True)
class BackendSpec:
    name: str
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    max_runs: int = 5

    def __post_init__(self):
        if self.temperature != 0:
            raise ValueError("temperature must be 0 for evaluation parity")
        if self.max_runs < 1:
            raise ValueError("max_runs must be positive")


class Backend(Protocol):
    name: str

    def complete(self, prompt: str, *, stage: int, key: str, run: int) -> str: ...


def render_payload(label: str, items: Sequence[str] = ()) -> str:
    body = {"label": label}
    if items:
        body["items"] = list(items)
    return "```json\n" + json.dumps(body) + "\n```"


class MockBackend:
    """Deterministic backend scripted by context key.

    ``script`` maps a context key (or ``"*"`` for a fallback) to
    ``{"stage1": [...], "stage2": [...]}``, one entry per run. An entry is a
    label string, ``{"label": ..., "items": [...]}``, or ``{"raw": text}`` for a
    verbatim response. Runs beyond the scripted ones repeat the last entry.
    """

    def __init__(self, script: dict, name: str = "mock"):
        self.script = script
        self.name = name
        self.calls: list[tuple[str, int, int]] = []

    @classmethod
    def from_file(cls, path: str | Path, name: str = "mock") -> "MockBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), name)

    def complete(self, prompt: str, *, stage: int, key: str, run: int) -> str:
        self.calls.append((key, stage, run))
        entry = self.script.get(key, self.script.get("*"))
        if entry is None:
            raise BackendUnavailable(f"mock has no script for {key!r}")
        seq = entry.get(f"stage{stage}") or []
        if not seq:
            raise BackendUnavailable(f"mock has no stage{stage} script for {key!r}")
        item = seq[min(run, len(seq) - 1)]
        if isinstance(item, str):
            return render_payload(item, ["scripted item"] if item == "Valid" else ())
        if "raw" in item:
            return item["raw"]
        return render_payload(item["label"], item.get("items", ()))

    def stage_calls(self, stage: int) -> int:
        return sum(1 for _, s, _ in self.calls if s == stage)


class HTTPBackend:
    """POSTs {model, temperature, prompt}; the response body holds the payload block."""

    def __init__(self, spec: BackendSpec, timeout: float = 120.0):
        self.spec = spec
        self.name = spec.name
        self.timeout = timeout

    def complete(self, prompt: str, *, stage: int, key: str, run: int) -> str:
        import requests

        try:
            r = requests.post(self.spec.endpoint, json={
                "model": self.spec.model, "temperature": self.spec.temperature, "prompt": prompt,
            }, timeout=self.timeout)
            r.raise_for_status()
        except requests.RequestException as exc:
            raise BackendUnavailable(f"{self.name}: {exc}") from exc
        return r.text


_FENCED = re.compile(r"```[ \t]*(?:json)?[ \t]*\n(.*?)```", re.S | re.I)


def _payload_objects(text: str):
    for m in _FENCED.finditer(text):
        try:
            yield json.loads(m.group(1))
        except ValueError:
            continue
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        yield obj


def parse_llm_payload(text: str, allowed: Sequence[str] = STAGE1_LABELS + STAGE2_LABELS) -> tuple[str, list[str]]:
    """Label and trimmed items from the first JSON payload in a response."""
    for obj in _payload_objects(text or ""):
        if not isinstance(obj, dict) or "label" not in obj:
            continue
        label = str(obj["label"]).strip()
        if label not in allowed:
            raise BackendFormatError(f"label {label!r} not in {list(allowed)}")
        raw_items = obj.get("items") or []
        if not isinstance(raw_items, list):
            raise BackendFormatError("items must be a list")
        items = [str(i).strip() for i in raw_items if str(i).strip()]
        return label, items
    raise BackendFormatError("no payload block in response")


# ---------------------------------------------------------------- prompts

def load_template(path: Optional[str | Path], stage: int) -> Template:
    if path:
        return Template(Path(path).read_text(encoding="utf-8"))
    return Template((resources.files("reviewpulse") / "prompts" / f"stage{stage}.txt").read_text(encoding="utf-8"))


def render_reviewed(context: CommentContext) -> str:
    blocks = []
    for r in context.reviewed:
        blocks.append(f"File: {r.path} (lines {r.line_range[0]}-{r.line_range[1]})\n{r.render()}")
    return "\n\n".join(blocks)


def stage1_prompt(context: CommentContext, template: Optional[Template] = None) -> str:
    t = template or load_template(None, 1)
    return t.safe_substitute(comment=context.comment.body, reviewed_diff=render_reviewed(context))


def stage2_prompt(context: CommentContext, items: Sequence[str], template: Optional[Template] = None) -> str:
    t = template or load_template(None, 2)
    sub = context.subsequent
    return t.safe_substitute(
        comment=context.comment.body,
        reviewed_diff=render_reviewed(context),
        subsequent_diff=sub.render() or "(no textual changes)",
        subsequent_category=f"{sub.category}, final path {sub.final_path}",
        items="\n".join(f"{i + 1}. {it}" for i, it in enumerate(items)),
    )


def _ask(backend: Backend, prompt: str, *, stage: int, key: str, run: int, allowed: Sequence[str],
         retries: int = FORMAT_RETRIES) -> tuple[str, list[str]]:
    last: Optional[BackendFormatError] = None
    for attempt in range(retries + 1):
        text = backend.complete(prompt if attempt == 0 else prompt + REMINDER, stage=stage, key=key, run=run)
        try:
            label, items = parse_llm_payload(text, allowed)
            if stage == 1 and label == "Valid" and not items:
                raise BackendFormatError("Valid label without items")
            return label, items
        except BackendFormatError as exc:
            last = exc
    raise BackendFormatError(f"{backend.name} stage{stage} run {run} for {key}: {last}")


def classify_validity(context: CommentContext, backend: Backend, *, run: int = 0,
                      template: Optional[Template] = None) -> ValidityLabel:
    label, items = _ask(backend, stage1_prompt(context, template), stage=1, key=context.key, run=run,
                        allowed=STAGE1_LABELS)
    return ValidityLabel(label, tuple(items) if label == "Valid" else ())


def classify_addressing(context: CommentContext, items: Sequence[str], backend: Backend, *, run: int = 0,
                        template: Optional[Template] = None) -> AddressingLabel:
    label, _ = _ask(backend, stage2_prompt(context, items, template), stage=2, key=context.key, run=run,
                    allowed=STAGE2_LABELS)
    return AddressingLabel(label)


# ---------------------------------------------------------------- voting

@dataclass(frozen=True)
class VoteResult:
    runs: tuple[str, ...]
    final: str
    agreement: float

    def to_dict(self) -> dict:
        return {"runs": list(self.runs), "final": self.final, "agreement": self.agreement}

    @classmethod
    def from_dict(cls, d: dict) -> "VoteResult":
        return cls(tuple(d["runs"]), d["final"], d["agreement"])


def vote(labels: Sequence[str], order: Sequence[str]) -> VoteResult:
    """Majority label; ties go to the label earliest in ``order`` (the conservative one)."""
    if not labels:
        raise ValueError("no runs to vote over")
    counts = Counter(labels)
    top = max(counts.values())
    final = min((l for l, n in counts.items() if n == top), key=list(order).index)
    return VoteResult(tuple(labels), final, counts[final] / len(labels))


@dataclass
class TwoStageResult:
    key: str
    stage1: VoteResult
    items: tuple[str, ...] = ()
    stage2: Optional[VoteResult] = None
    short_circuited: bool = False
    final: str = ""

    @property
    def result(self) -> VoteResult:
        """Vote of the stage that decided the final label, expressed in six-class labels."""
        if self.stage2 is not None:
            return self.stage2
        if self.short_circuited:
            return VoteResult(self.stage1.runs, self.final, self.stage1.agreement)
        return self.stage1

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "final": self.final,
            "stage1": self.stage1.to_dict(),
            "items": list(self.items),
            "stage2": self.stage2.to_dict() if self.stage2 else None,
            "short_circuited": self.short_circuited,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TwoStageResult":
        return cls(d["key"], VoteResult.from_dict(d["stage1"]), tuple(d.get("items", ())),
                   VoteResult.from_dict(d["stage2"]) if d.get("stage2") else None,
                   bool(d.get("short_circuited")), d["final"])


def _with_provenance(exc: Exception, stage: int, run: int, key: str) -> Exception:
    return type(exc)(f"stage{stage} run {run} [{key}]: {exc}")


def run_two_stage(context: CommentContext, stage1_backend: Backend, stage2_backend: Backend, runs: int = 5, *,
                  templates: tuple[Optional[Template], Optional[Template]] = (None, None)) -> TwoStageResult:
    """Stage-1 vote; stop unless Valid; Valid+Unchanged short-circuits to Valid-Unaddressed."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    t1 = templates[0] or load_template(None, 1)
    t2 = templates[1] or load_template(None, 2)
    labels1: list[ValidityLabel] = []
    for i in range(runs):
        try:
            labels1.append(classify_validity(context, stage1_backend, run=i, template=t1))
        except (BackendFormatError, BackendUnavailable) as exc:
            raise _with_provenance(exc, 1, i, context.key) from exc
    v1 = vote([l.value for l in labels1], STAGE1_LABELS)
    result = TwoStageResult(context.key, v1)
    if v1.final != "Valid":
        result.final = v1.final
        return result
    result.items = next(l.items for l in labels1 if l.value == "Valid")
    if context.subsequent.category == "Unchanged":
        result.short_circuited = True
        result.final = "Valid-Unaddressed"
        return result
    labels2 = []
    for i in range(runs):
        try:
            labels2.append(classify_addressing(context, result.items, stage2_backend, run=i, template=t2).value)
        except (BackendFormatError, BackendUnavailable) as exc:
            raise _with_provenance(exc, 2, i, context.key) from exc
    result.stage2 = vote(labels2, STAGE2_LABELS)
    result.final = result.stage2.final
    return result


def classify_all(contexts: Iterable[CommentContext], stage1_backend: Backend, stage2_backend: Backend,
                 runs: int = 5, *, parallelism: int = 1,
                 templates: tuple[Optional[Template], Optional[Template]] = (None, None)) -> list[TwoStageResult]:
    """Classify contexts independently; output order follows input order."""
    contexts = list(contexts)
    t = (templates[0] or load_template(None, 1), templates[1] or load_template(None, 2))
    fn = lambda c: run_two_stage(c, stage1_backend, stage2_backend, runs, templates=t)  # noqa: E731
    if parallelism <= 1:
        return [fn(c) for c in contexts]
    with ThreadPoolExecutor(parallelism) as pool:
        return list(pool.map(fn, contexts))

