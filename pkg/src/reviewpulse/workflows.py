"""Workflow mining: find watched review actions, trigger modes, and configuration."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .records import WorkflowFile

log = logging.getLogger(__name__)

CATEGORIES = (
    "Task Triggers & Modes",
    "Input Settings",
    "LLM Service Settings",
    "LLM Selection",
    "LLM Hyperparameters",
    "Prompt Customization",
    "Prompt Context Augmentation",
    "Output Settings",
    "Others",
)
GRANULARITIES = ("pr", "file", "hunk")


class TriggerMode(str, Enum):
    AUTO = "auto"
    MANUAL = "manual"


@dataclass(frozen=True)
class ActionSpec:
    id: int
    action: str
    granularity: str
    comment_kind: str  # inline | general


@dataclass
class ActionSchema:
    action: str
    categories: dict[str, str] = field(default_factory=dict)
    required: frozenset = frozenset()


@dataclass(frozen=True)
class ActionReference:
    path: str
    action: str
    version_ref: str
    job_id: str
    step_index: int
    doc_index: int = 0
    params: dict = field(default_factory=dict, hash=False)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "action": self.action,
            "version_ref": self.version_ref,
            "job_id": self.job_id,
            "step_index": self.step_index,
            "doc_index": self.doc_index,
            "params": dict(sorted(self.params.items())),
        }


@dataclass
class ConfigSnapshot:
    parameters: dict[str, str]
    category_of: dict[str, str]
    unknown: set[str]

    def counts(self) -> Counter:
        return Counter(self.category_of.values())


@dataclass
class ConfigEvolution:
    commit_count: int
    span_days: float
    changed_categories: Counter
    trigger_changed: bool
    version_ref_changed: bool

    def to_dict(self) -> dict:
        return {
            "commit_count": self.commit_count,
            "span_days": self.span_days,
            "changed_categories": dict(sorted(self.changed_categories.items())),
            "trigger_changed": self.trigger_changed,
            "version_ref_changed": self.version_ref_changed,
        }


# ---------------------------------------------------------------- data files

def _default_dir() -> Path:
    return Path(str(resources.files("reviewpulse") / "config" / "actions"))


def _kv_lines(text: str):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"expected 'key = value', got {raw!r}")
        yield key.strip(), value.strip()


def load_watch_list(path: Optional[str | Path] = None) -> list[ActionSpec]:
    """Parse ``id = owner/repo | granularity | comment-kind`` lines."""
    path = Path(path) if path else _default_dir() / "watchlist.txt"
    specs = []
    for key, value in _kv_lines(path.read_text(encoding="utf-8")):
        action, granularity, kind = (p.strip() for p in value.split("|"))
        if granularity not in GRANULARITIES or kind not in ("inline", "general"):
            raise ValueError(f"bad watch-list entry for {action}")
        specs.append(ActionSpec(int(key), action, granularity, kind))
    return sorted(specs, key=lambda s: s.id)


def schema_filename(action: str) -> str:
    return action.replace("/", "__") + ".txt"


def load_schema(action: str, directory: Optional[str | Path] = None) -> ActionSchema:
    """Parameter -> category map for one action; missing file gives an empty schema."""
    p = Path(directory or _default_dir()) / schema_filename(action)
    schema = ActionSchema(action)
    if not p.exists():
        log.warning("no schema file for %s", action)
        return schema
    required = set()
    for key, value in _kv_lines(p.read_text(encoding="utf-8")):
        if key == "required":
            required.update(v.strip() for v in value.split(",") if v.strip())
            continue
        if value not in CATEGORIES:
            raise ValueError(f"{p.name}: unknown category {value!r} for {key}")
        schema.categories[key] = value
    schema.required = frozenset(required)
    return schema


# ---------------------------------------------------------------- parsing

def _normalize(node):
    # PyYAML reads the bare key `on` as boolean True.
    if isinstance(node, dict):
        return {("on" if k is True else str(k)): _normalize(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_normalize(v) for v in node]
    return node


def parse_documents(content: str) -> list[dict]:
    docs = [_normalize(d) for d in yaml.safe_load_all(content)]
    return [d for d in docs if isinstance(d, dict)]


def _split_uses(uses: str) -> Optional[tuple[str, str]]:
    if uses.startswith(("./", "docker://")) or "@" not in uses:
        return None
    name, _, ref = uses.partition("@")
    parts = name.split("/")
    if len(parts) < 2:
        return None
    return f"{parts[0]}/{parts[1]}", ref


def _stringify(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return "" if value is None else str(value)


def _iter_steps(docs: list[dict]):
    for di, doc in enumerate(docs):
        jobs = doc.get("jobs")
        if not isinstance(jobs, dict):
            continue
        for job_id, job in jobs.items():
            if not isinstance(job, dict):
                continue
            for si, step in enumerate(job.get("steps") or []):
                if isinstance(step, dict):
                    yield di, doc, job_id, job, si, step


def scan_workflows(files: Iterable[WorkflowFile], watch_list: Iterable) -> list[ActionReference]:
    """References to watched actions in uncommented YAML."""
    wanted = {}
    for w in watch_list:
        name = w.action if isinstance(w, ActionSpec) else str(w)
        wanted[name.lower()] = name
    refs = []
    for f in files:
        try:
            docs = parse_documents(f.content)
        except yaml.YAMLError as exc:
            log.warning("skipping unparseable workflow %s: %s", f.path, exc)
            continue
        for di, _doc, job_id, _job, si, step in _iter_steps(docs):
            uses = step.get("uses")
            if not isinstance(uses, str):
                continue
            split = _split_uses(uses.strip())
            if split is None or split[0].lower() not in wanted:
                continue
            params = {}
            for section in ("env", "with"):
                block = step.get(section)
                if isinstance(block, dict):
                    params.update({str(k): _stringify(v) for k, v in block.items()})
            refs.append(ActionReference(f.path, wanted[split[0].lower()], split[1], str(job_id), si, di, params))
    return refs


def _locate(file: WorkflowFile, ref: ActionReference):
    docs = parse_documents(file.content)
    doc = docs[ref.doc_index]
    job = doc["jobs"][ref.job_id]
    step = job["steps"][ref.step_index]
    return doc, job, step


def derive_trigger_mode(file: WorkflowFile, ref: ActionReference) -> TriggerMode:
    """Manual iff an ``if`` gates the step, its job, or the whole workflow."""
    doc, job, step = _locate(file, ref)
    gated = any("if" in node and node["if"] not in (None, "") for node in (step, job, doc))
    return TriggerMode.MANUAL if gated else TriggerMode.AUTO


def categorize_params(params: dict, schema: ActionSchema | dict) -> ConfigSnapshot:
    if isinstance(schema, dict):
        schema = ActionSchema("", dict(schema))
    kept = {k: v for k, v in params.items() if k not in schema.required}
    category_of = {k: schema.categories[k] for k in kept if k in schema.categories}
    unknown = {k for k in kept if k not in schema.categories}
    return ConfigSnapshot(dict(kept), category_of, unknown)


def llm_family(snapshot: ConfigSnapshot) -> Optional[str]:
    """Map an explicitly configured model to GPT-4 / GPT-3.5; None when unknown."""
    for name in sorted(snapshot.category_of):
        if snapshot.category_of[name] != "LLM Selection":
            continue
        value = snapshot.parameters[name].lower().replace(" ", "")
        if "gpt-4" in value or "gpt4" in value:
            return "GPT-4"
        if "gpt-3.5" in value or "gpt-35" in value or "gpt3.5" in value:
            return "GPT-3.5"
    return None


def _trigger_signature(file: WorkflowFile, ref: Optional[ActionReference]):
    docs = parse_documents(file.content)
    ons = [d.get("on") for d in docs]
    ifs = None
    if ref is not None:
        doc, job, step = _locate(file, ref)
        ifs = (doc.get("if"), job.get("if"), step.get("if"))
    return repr(ons), repr(ifs)


def config_evolution(history: list[WorkflowFile], schema: ActionSchema | dict, action: Optional[str] = None) -> ConfigEvolution:
    """Compare the first and last configuration of a workflow file."""
    if not history:
        raise ValueError("history must be nonempty")
    if isinstance(schema, dict):
        schema = ActionSchema(action or "", dict(schema))
    action = action or schema.action
    first, last = history[0], history[-1]

    def ref_of(f):
        refs = scan_workflows([f], [action]) if action else []
        return refs[0] if refs else None

    r0, r1 = ref_of(first), ref_of(last)
    s0 = categorize_params(r0.params if r0 else {}, schema)
    s1 = categorize_params(r1.params if r1 else {}, schema)
    changed = Counter()
    for name in sorted(set(s0.parameters) | set(s1.parameters)):
        if s0.parameters.get(name) != s1.parameters.get(name):
            cat = s1.category_of.get(name) or s0.category_of.get(name)
            if cat:
                changed[cat] += 1
    span = (last.committed_at - first.committed_at).total_seconds() / 86400.0
    return ConfigEvolution(
        commit_count=len(history),
        span_days=span,
        changed_categories=changed,
        trigger_changed=_trigger_signature(first, r0) != _trigger_signature(last, r1),
        version_ref_changed=(r0.version_ref if r0 else None) != (r1.version_ref if r1 else None),
    )


def attribute_repository(refs: list[ActionReference]) -> tuple[Optional[str], bool]:
    """Return (action, ambiguous) for one repository's references.

    A repository is ambiguous when it references several watched actions,
    or one action from several workflow files.
    """
    if not refs:
        return None, False
    actions = {r.action for r in refs}
    paths = {r.path for r in refs}
    if len(actions) > 1 or len(paths) > 1:
        return None, True
    return refs[0].action, False
