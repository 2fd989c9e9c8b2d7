"""Stage orchestration.

Each stage reads only the persisted output of its predecessors from the run
directory and writes its own line-oriented artifacts there:

    discover     census.jsonl
    collect      comments.jsonl, prs.jsonl, timelines.jsonl
    filter       retained.jsonl, filter_report.json
    reconstruct  reconstructions.jsonl, dataset.jsonl, filter_report.json (final)
    classify     labels.jsonl
    evaluate     evaluation.json
    features     repo_stats.jsonl, topic_model.txt, features.csv, autospearman.json
    explain      forest.txt, shap.csv, model.json
    report       report.md, report.json, report_*.csv
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

import numpy as np

from . import ingest
from .addressing import HTTPBackend, BackendSpec, MockBackend, TwoStageResult, classify_all, load_template
from .comments import activation_window, build_dataset, filter_comments, is_bot_login, make_detector
from .errors import (ApproximationError, CompareError, HunkParseError, ReconstructionError, SliceError, SplitError,
                     StageError, UnsupportedContent)
from .features import (autospearman, extract_features, feature_groups, feature_names, read_matrix_csv,
                       write_matrix_csv)
from .forest import (Forest, ForestParams, explain_many, feature_report, shap_csv, split_train_test,
                     train_forest)
from .lda import TopicModel, tokenize, train_lda
from .metrics import confusion, evaluate, macro_f1, overall_accuracy
from .records import (PullRequestRecord, RawComment, RepoRef, RepoStats, format_ts, parse_ts)
from .reconstruct import (PREAMBLE, CommentContext, ContextStats, Reconstruction, build_rename_map,
                          changes_from_patch, nearest_preceding_commit, reconstruct_file_level, reviewed_from_hunk,
                          split_general_comment, subsequent_change, with_body)
from .workflows import (ActionSpec, attribute_repository, categorize_params, config_evolution, derive_trigger_mode,
                        llm_family, load_schema, load_watch_list, scan_workflows)

log = logging.getLogger(__name__)

STAGES = ("discover", "collect", "filter", "reconstruct", "classify", "evaluate", "features", "explain", "report")
ADDRESSED = ("Valid-Partially", "Valid-Fully")
BINARY_LABELS = ("Valid-Unaddressed",) + ADDRESSED


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    """Run settings, read from a ``key = value`` text file.

    Relative paths resolve against the config file's directory.
    """

    base_dir: Path = Path(".")
    watch_list: Optional[Path] = None
    schemas: Optional[Path] = None
    repos: list[str] = field(default_factory=list)
    census: Optional[Path] = None
    maturity_threshold: int = 50
    fixtures: Optional[Path] = None
    mode: str = "replay"
    out: Path = Path("run")
    stage1_backend: str = ""
    stage2_backend: str = ""
    stage1_template: Optional[Path] = None
    stage2_template: Optional[Path] = None
    runs: int = 5
    golden: Optional[Path] = None
    language_detector: str = "builtin"
    seed: int = 42
    lda_topics: int = 6
    lda_iterations: int = 1000
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_leaf: int = 1
    train_fraction: float = 0.8
    correlation_threshold: float = 0.7
    parallelism: int = 1

    _PATHS = ("watch_list", "schemas", "census", "fixtures", "out", "stage1_template", "stage2_template", "golden")

    def __post_init__(self):
        if self.maturity_threshold < 1:
            raise ValueError("maturity_threshold must be at least 1")
        if self.mode not in ("replay", "record", "live"):
            raise ValueError(f"unknown fixture mode {self.mode!r}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")

    @classmethod
    def parse(cls, text: str, base_dir: Path | str = ".") -> "RunConfig":
        base = Path(base_dir)
        kwargs: dict[str, Any] = {"base_dir": base}
        types = {f.name: f.type for f in fields(cls)}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types or key == "base_dir":
                raise ValueError(f"config line {n}: unknown or malformed entry {raw!r}")
            kwargs[key] = cls._coerce(key, value, base)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        p = Path(path)
        return cls.parse(p.read_text(encoding="utf-8"), p.parent)

    @classmethod
    def _coerce(cls, key: str, value: str, base: Path):
        if key in cls._PATHS:
            return (base / value) if value else None
        if key == "repos":
            return [r.strip() for r in value.split(",") if r.strip()]
        if key == "max_depth":
            return None if value.lower() in ("", "none") else int(value)
        if key in ("train_fraction", "correlation_threshold"):
            return float(value)
        if key in ("maturity_threshold", "runs", "seed", "lda_topics", "lda_iterations", "n_trees", "min_leaf",
                   "parallelism"):
            return int(value)
        return value

    def provenance(self) -> dict:
        return {"seed": self.seed, "runs": self.runs, "maturity_threshold": self.maturity_threshold,
                "lda_topics": self.lda_topics, "lda_iterations": self.lda_iterations, "n_trees": self.n_trees,
                "max_depth": self.max_depth, "min_leaf": self.min_leaf, "train_fraction": self.train_fraction,
                "correlation_threshold": self.correlation_threshold}


# ---------------------------------------------------------------- persistence

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(_dump(r) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise FileNotFoundError(f"{path.name} missing; run the preceding stage first")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(l) for l in fh if l.strip()]


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n", encoding="utf-8",
                    newline="\n")


def read_json(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"{path.name} missing; run the preceding stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


# ---------------------------------------------------------------- context

class Run:
    """A config plus lazily opened session, watch list and schemas."""

    def __init__(self, config: RunConfig, session: Optional[ingest.Session] = None):
        self.config = config
        self.out = Path(config.out)
        self._session = session
        self.watch = load_watch_list(config.watch_list)
        self.by_action = {s.action: s for s in self.watch}
        self.by_id = {s.id: s for s in self.watch}

    @property
    def session(self) -> ingest.Session:
        if self._session is None:
            if self.config.fixtures is None:
                raise ValueError("no fixture directory configured")
            store = ingest.FixtureStore(self.config.fixtures, self.config.mode)
            self._session = ingest.open_session(os.environ.get(ingest.TOKEN_ENV), store,
                                                parallelism=self.config.parallelism)
        return self._session

    def schema(self, action: str):
        return load_schema(action, self.config.schemas)

    def path(self, name: str) -> Path:
        return self.out / name

    def notice(self, text: str) -> None:
        log.warning(text)
        notes = self.path("notices.txt")
        existing = notes.read_text(encoding="utf-8").splitlines() if notes.exists() else []
        if text not in existing:
            write_text(notes, "\n".join(existing + [text]) + "\n")


def _staged(name: str):
    def wrap(fn: Callable):
        def inner(run: Run, *a, **kw):
            try:
                return fn(run, *a, **kw)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        inner.stage = name
        return inner
    return wrap


# ---------------------------------------------------------------- discover

def _latest_workflows(session, repo: RepoRef) -> dict[str, list]:
    return {p: ingest.fetch_workflow_history(session, repo, p) for p in ingest.list_workflow_files(session, repo)}


def census_entry(run: Run, repo_name: str) -> dict:
    """Attribution, maturity and configuration facts for one repository."""
    session = run.session
    repo = RepoRef.parse(repo_name)
    histories = _latest_workflows(session, repo)
    latest = [h[-1] for h in histories.values() if h]
    refs = scan_workflows(latest, run.watch)
    action, ambiguous = attribute_repository(refs)
    entry = {"repo": repo.full_name, "action": action, "action_id": run.by_action[action].id if action else None,
             "ambiguous": ambiguous, "pr_count": ingest.count_prs(session, repo), "workflow_path": None,
             "references": [r.to_dict() for r in refs], "trigger": None, "llm": None, "customized": [],
             "evolution": None}
    if action:
        ref = refs[0]
        wf = next(f for f in latest if f.path == ref.path)
        schema = run.schema(action)
        snap = categorize_params(ref.params, schema)
        entry.update(workflow_path=ref.path, trigger=derive_trigger_mode(wf, ref).value, llm=llm_family(snap),
                     customized=sorted(set(snap.category_of.values())),
                     evolution=config_evolution(histories[ref.path], schema, action).to_dict())
    return entry


@_staged("discover")
def stage_discover(run: Run) -> list[dict]:
    cfg = run.config
    if cfg.census is not None:
        census = read_jsonl(cfg.census)
    else:
        census = run.session.map(lambda r: census_entry(run, r), sorted(cfg.repos))
    census = sorted(census, key=lambda e: e["repo"])
    write_jsonl(run.path("census.jsonl"), census)
    return census


def adoption_summary(census: Iterable[dict], watch: list[ActionSpec], threshold: int = 50,
                     comments: Iterable[dict] = ()) -> dict:
    """Per-action total/mature repositories and observed review activity."""
    census = list(census)
    activity: dict[str, dict] = {}
    for rec in comments:
        if rec["group"] != "action":
            continue
        c = rec["comment"]
        a = activity.setdefault(rec["action"], {"repos": set(), "prs": set(), "comments": 0})
        a["repos"].add(c["repo"])
        a["prs"].add((c["repo"], c["pr"]))
        a["comments"] += 1
    rows = []
    for spec in watch:
        mine = [e for e in census if e.get("action") == spec.action and not e.get("ambiguous")]
        act = activity.get(spec.action, {"repos": set(), "prs": set(), "comments": 0})
        rows.append({"id": spec.id, "action": spec.action, "granularity": spec.granularity,
                     "general": spec.comment_kind == "general", "total": len(mine),
                     "mature": sum(1 for e in mine if e["pr_count"] >= threshold),
                     "repos": len(act["repos"]), "prs": len(act["prs"]), "comments": act["comments"]})
    return {"threshold": threshold, "ambiguous": sum(1 for e in census if e.get("ambiguous")), "rows": rows}


# ---------------------------------------------------------------- collect

_QUERY_OF = {"inline": "inline_by_actions", "general": "general_by_actions"}


def _timeline(session, repo: RepoRef, pr: int) -> dict:
    entries = []
    for kind in ("inline", "general"):
        for c in ingest.fetch_comments(session, repo, pr, kind):
            entries.append([format_ts(c.created_at), c.id, len(c.body)])
    return {"repo": repo.full_name, "pr": pr, "entries": sorted(entries)}


@_staged("collect")
def stage_collect(run: Run) -> dict:
    """Action comments from mature attributed repositories, plus human inline comments."""
    session = run.session
    census = read_jsonl(run.path("census.jsonl"))
    threshold = run.config.maturity_threshold
    records: list[dict] = []
    prs: dict[tuple, PullRequestRecord] = {}
    for entry in census:
        if not entry.get("action") or entry.get("ambiguous") or entry["pr_count"] < threshold:
            continue
        spec = run.by_action[entry["action"]]
        repo = RepoRef.parse(entry["repo"])
        numbers = ingest.search_prs(session, repo, _QUERY_OF[spec.comment_kind])
        fetched = session.map(lambda n: ingest.fetch_comments(session, repo, n, spec.comment_kind), numbers)
        action_comments = [c for batch in fetched for c in batch if c.author_login == ingest.ACTIONS_BOT]
        for c in action_comments:
            records.append({"group": "action", "action": spec.action, "action_id": spec.id,
                            "granularity": spec.granularity, "comment": c.to_dict()})
        for n in sorted({c.pr for c in action_comments}):
            prs[(repo.full_name, n)] = ingest.fetch_pull(session, repo, n)
        if spec.granularity == "pr" or not action_comments:
            continue
        lo, hi = activation_window(action_comments)[repo.full_name]
        for n in ingest.list_closed_pulls(session, repo):
            pr = prs.get((repo.full_name, n)) or ingest.fetch_pull(session, repo, n)
            if not pr.merged or pr.created_at > hi or pr.merged_at < lo:
                continue
            humans = [c for c in ingest.fetch_comments(session, repo, n, "inline")
                      if c.author_login != ingest.ACTIONS_BOT and lo <= c.created_at <= hi]
            if humans:
                prs[(repo.full_name, n)] = pr
            for c in humans:
                records.append({"group": "human", "action": None, "action_id": None, "granularity": "hunk",
                                "comment": c.to_dict()})
    records.sort(key=lambda r: (r["comment"]["repo"], r["comment"]["pr"], r["comment"]["created_at"],
                                r["comment"]["id"], r["group"]))
    keys = sorted(prs)
    timelines = session.map(lambda k: _timeline(session, RepoRef.parse(k[0]), k[1]), keys)
    write_jsonl(run.path("comments.jsonl"), records)
    write_jsonl(run.path("prs.jsonl"), [prs[k].to_dict() for k in keys])
    write_jsonl(run.path("timelines.jsonl"), timelines)
    return {"comments": len(records), "prs": len(keys)}


# ---------------------------------------------------------------- filter

def _load_prs(run: Run) -> dict[tuple, PullRequestRecord]:
    return {(d["repo"], d["number"]): PullRequestRecord.from_dict(d) for d in read_jsonl(run.path("prs.jsonl"))}


def _analysable(records: list[dict]) -> tuple[list[dict], list[dict]]:
    """PR-level action comments are out of scope for addressing analysis."""
    action = [r for r in records if r["group"] == "action" and r["granularity"] != "pr"]
    human = [r for r in records if r["group"] == "human"]
    return action, human


def _run_filters(run: Run, records: list[dict], unsupported: Iterable[int] = ()) -> tuple[list[dict], dict]:
    prs = _load_prs(run)
    detector = make_detector(run.config.language_detector)
    action, human = _analysable(records)
    kept_ids: set[int] = set()
    reports = {}
    for group, rows, is_human in (("action", action, False), ("human", human, True)):
        kept, report = filter_comments((RawComment.from_dict(r["comment"]) for r in rows), prs, detector,
                                       human=is_human, unsupported=unsupported)
        kept_ids |= {c.id for c in kept}
        reports[group] = report.to_dict()
    retained = [r for r in action + human if r["comment"]["id"] in kept_ids]
    return retained, reports


@_staged("filter")
def stage_filter(run: Run) -> dict:
    records = read_jsonl(run.path("comments.jsonl"))
    retained, reports = _run_filters(run, records)
    write_jsonl(run.path("retained.jsonl"), retained)
    write_json(run.path("filter_report.json"), reports)
    return reports


# ---------------------------------------------------------------- reconstruct

class _Cache(dict):
    def get_or(self, key, fn):
        if key not in self:
            self[key] = fn()
        return self[key]


def _line_count(text: Optional[str]) -> int:
    return len(text.splitlines()) if text else 0


class Reconstructor:
    """Builds comment contexts and the facts later turned into features."""

    def __init__(self, run: Run):
        self.run = run
        self.session = run.session
        self.prs = _load_prs(run)
        self.timelines = {(t["repo"], t["pr"]): t["entries"] for t in read_jsonl(run.path("timelines.jsonl"))}
        self.census = {e["repo"]: e for e in read_jsonl(run.path("census.jsonl"))}
        self.cache = _Cache()

    # -- shared lookups
    def compare(self, repo: RepoRef, base: str, head: str):
        return self.cache.get_or(("cmp", repo.full_name, base, head),
                                 lambda: ingest.compare_commits(self.session, repo, base, head))

    def rename_map(self, repo: RepoRef, pr: PullRequestRecord) -> dict:
        return self.cache.get_or(("ren", repo.full_name, pr.number),
                                 lambda: build_rename_map(self.compare(repo, pr.base_commit, pr.merge_commit)))

    def workflow_at(self, repo: RepoRef, when) -> tuple[Optional[str], Optional[str]]:
        entry = self.census.get(repo.full_name) or {}
        path, action = entry.get("workflow_path"), entry.get("action")
        if not path or not action:
            return None, None
        history = self.cache.get_or(("wf", repo.full_name, path),
                                    lambda: ingest.fetch_workflow_history(self.session, repo, path))
        if not history:
            return None, None
        older = [f for f in history if f.committed_at <= when]
        wf = older[-1] if older else history[0]
        refs = scan_workflows([wf], [action])
        if not refs:
            return None, None
        snap = categorize_params(refs[0].params, self.run.schema(action))
        return derive_trigger_mode(wf, refs[0]).value, llm_family(snap)

    def stats(self, repo: RepoRef, pr: PullRequestRecord, comment: RawComment, sha: str,
              source: str) -> ContextStats:
        commit, _ = self.cache.get_or(("commit", repo.full_name, sha),
                                      lambda: ingest.fetch_commit(self.session, repo, sha))
        login = commit.author_login
        anon = login is None
        bot = not anon and (commit.author_type == "Bot" or is_bot_login(login))
        prior = 0
        if not (anon or bot):
            prior = self.cache.get_or(("prior", repo.full_name, login, sha),
                                      lambda: ingest.count_author_commits(self.session, repo, login,
                                                                          commit.committed_at))
        files = []
        for f in self.compare(repo, pr.base_commit, sha):
            base_path = f.previous_path or f.path
            text = None if f.status == "added" else ingest.fetch_file_at(self.session, repo, base_path,
                                                                         pr.base_commit)
            files.append({"path": f.path, "additions": f.additions, "deletions": f.deletions,
                          "base_lines": _line_count(text)})
        entries = self.timelines.get((repo.full_name, pr.number), [])
        ts = format_ts(comment.created_at)
        before = [e for e in entries if (e[0], e[1]) < (ts, comment.id)]
        trigger = llm = None
        if source != "human":
            trigger, llm = self.workflow_at(repo, comment.created_at)
        return ContextStats(author_login=login, author_is_bot=bot, author_is_anon=anon, author_prior_commits=prior,
                            commit_files=files, timeline_index=len(before) + 1,
                            prior_comment_len=sum(e[2] for e in before), trigger=trigger, llm=llm)

    # -- per comment
    def contexts(self, rec: dict) -> list[Reconstruction]:
        c = RawComment.from_dict(rec["comment"])
        repo = RepoRef.parse(c.repo)
        pr = self.prs[(c.repo, c.pr)]
        if rec["group"] == "human":
            source, action_id = "human", None
        else:
            source = "file_action" if rec["granularity"] == "file" else "hunk_action"
            action_id = rec["action_id"]
        try:
            if c.kind == "general":
                return self._general(c, repo, pr, source, action_id)
            if source == "file_action":
                reviewed = reconstruct_file_level(c, pr, self.session, repo)
                if reviewed is None:
                    return [Reconstruction(c.id, "inconsistent", reason="diff_hunk matched neither strategy")]
            else:
                reviewed = [reviewed_from_hunk(c)]
            sha = c.inline_meta.original_commit_id
            return [self._context(str(c.id), c, repo, pr, source, action_id, reviewed, sha)]
        except UnsupportedContent as exc:
            return [Reconstruction(c.id, "unsupported", reason=str(exc))]
        except (SliceError, HunkParseError, ApproximationError, ReconstructionError, CompareError) as exc:
            return [Reconstruction(c.id, "error", reason=f"{type(exc).__name__}: {exc}")]

    def _context(self, key, c, repo, pr, source, action_id, reviewed, sha) -> Reconstruction:
        path = reviewed[0].path
        sub = subsequent_change(self.session, repo, path, sha, pr.merge_commit, self.rename_map(repo, pr))
        ctx = CommentContext(key, c, source, action_id, list(reviewed), sub, pr,
                             self.stats(repo, pr, c, sha, source))
        return Reconstruction(c.id, "ok", ctx)

    def _general(self, c, repo, pr, source, action_id) -> list[Reconstruction]:
        commits = self.cache.get_or(("commits", repo.full_name, pr.number),
                                    lambda: ingest.fetch_pr_commits(self.session, repo, pr.number))
        sha = nearest_preceding_commit(commits, c.created_at)
        files = {f.path: f for f in self.compare(repo, pr.base_commit, sha)}
        out = []
        for i, (path, text) in enumerate(split_general_comment(c.body)):
            f = files.get(path)
            if path == PREAMBLE or f is None or not f.patch:
                out.append(Reconstruction(c.id, "path_unmatched", reason=path))
                continue
            reviewed = changes_from_patch(path, sha, f.patch, "B")
            if not reviewed:
                out.append(Reconstruction(c.id, "path_unmatched", reason=path))
                continue
            out.append(self._context(f"{c.id}:{i}", with_body(c, text), repo, pr, source, action_id, reviewed, sha))
        return out


@_staged("reconstruct")
def stage_reconstruct(run: Run) -> dict:
    retained = read_jsonl(run.path("retained.jsonl"))
    rc = Reconstructor(run)
    outcomes = [r for rec in retained for r in rc.contexts(rec)]
    unsupported = sorted({r.comment_id for r in outcomes if r.status == "unsupported"})
    dataset = build_dataset([RawComment.from_dict(r["comment"]) for r in retained
                             if r["comment"]["id"] not in unsupported], outcomes)
    _, reports = _run_filters(run, read_jsonl(run.path("comments.jsonl")), unsupported)
    write_jsonl(run.path("reconstructions.jsonl"),
                [{"comment_id": r.comment_id, "status": r.status, "reason": r.reason,
                  "key": r.context.key if r.context else None} for r in outcomes])
    write_jsonl(run.path("dataset.jsonl"), [c.to_dict() for c in dataset])
    write_json(run.path("filter_report.json"), reports)
    return {"contexts": len(dataset), "outcomes": len(outcomes)}


def load_dataset(run: Run) -> list[CommentContext]:
    return [CommentContext.from_dict(d) for d in read_jsonl(run.path("dataset.jsonl"))]


# ---------------------------------------------------------------- classify

def make_backend(spec: str, base_dir: Path, name: str):
    """``mock:PATH`` for a scripted backend or ``http:ENDPOINT|MODEL`` for a live one."""
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        p = Path(rest)
        return MockBackend.from_file(p if p.is_absolute() else base_dir / p, name)
    if kind == "http":
        endpoint, _, model = rest.rpartition("|")
        return HTTPBackend(BackendSpec(name, endpoint, model))
    raise ValueError(f"unknown backend spec {spec!r}")


@_staged("classify")
def stage_classify(run: Run) -> list[TwoStageResult]:
    cfg = run.config
    contexts = load_dataset(run)
    b1 = make_backend(cfg.stage1_backend, cfg.base_dir, "stage1")
    b2 = make_backend(cfg.stage2_backend or cfg.stage1_backend, cfg.base_dir, "stage2")
    templates = (load_template(cfg.stage1_template, 1), load_template(cfg.stage2_template, 2))
    results = classify_all(contexts, b1, b2, cfg.runs, parallelism=cfg.parallelism, templates=templates)
    write_jsonl(run.path("labels.jsonl"), [r.to_dict() for r in results])
    return results


def load_labels(run: Run) -> dict[str, TwoStageResult]:
    return {d["key"]: TwoStageResult.from_dict(d) for d in read_jsonl(run.path("labels.jsonl"))}


# ---------------------------------------------------------------- evaluate

SOURCE_TITLES = {"file_action": "File-level Action", "hunk_action": "Hunk-level Action", "human": "Human"}


@_staged("evaluate")
def stage_evaluate(run: Run) -> dict:
    """OA and kappa per source and scheme against golden labels."""
    cfg = run.config
    if cfg.golden is None:
        result = {"notice": "no golden labels configured", "sources": {}}
        write_json(run.path("evaluation.json"), result)
        return result
    gold = {d["key"]: d["label"] for d in read_jsonl(cfg.golden)}
    labels = load_labels(run)
    source_of = {c.key: c.source for c in load_dataset(run)}
    keys = sorted(k for k in gold if k in labels and k in source_of)
    sources = {}
    for src in SOURCE_TITLES:
        ks = [k for k in keys if source_of[k] == src]
        if ks:
            sources[src] = evaluate([gold[k] for k in ks], [labels[k].final for k in ks])
    result = {"n": len(keys), "missing": sorted(k for k in gold if k not in labels), "sources": sources}
    write_json(run.path("evaluation.json"), result)
    return result


# ---------------------------------------------------------------- features

def binary_rows(contexts: list[CommentContext], labels: dict[str, TwoStageResult]) -> list[tuple]:
    """(context, addressed) for valid comments with a definitive addressing label."""
    return [(c, labels[c.key].final in ADDRESSED) for c in contexts
            if c.key in labels and labels[c.key].final in BINARY_LABELS]


@_staged("features")
def stage_features(run: Run) -> dict:
    cfg = run.config
    rows = binary_rows(load_dataset(run), load_labels(run))
    names = feature_names(cfg.lda_topics)
    for stale in ("features.csv", "autospearman.json", "topic_model.txt", "repo_stats.jsonl"):
        if run.path(stale).exists():
            run.path(stale).unlink()
    if not rows:
        run.notice("features skipped: no valid comments with a definitive addressing label")
        return {"rows": 0}
    repos = sorted({c.comment.repo for c, _ in rows})
    stats = dict(zip(repos, run.session.map(lambda r: ingest.fetch_repo_stats(run.session, RepoRef.parse(r)),
                                            repos)))
    corpus = [tokenize(c.comment.body) for c, _ in rows]
    if not any(corpus):
        raise ValueError("topic corpus has an empty vocabulary")
    model = train_lda(corpus, cfg.lda_topics, iterations=cfg.lda_iterations, seed=cfg.seed)
    vectors = [extract_features(c, stats[c.comment.repo], None, model) for c, _ in rows]
    for v, (c, addressed) in zip(vectors, rows):
        v.values["target"] = int(addressed)
    X = np.array([v.row(names) for v in vectors])
    if len(rows) >= 2:
        pruning = autospearman(X, names, cfg.correlation_threshold).to_dict()
    else:
        run.notice("correlation pruning skipped: fewer than two rows")
        pruning = {"retained": names, "removed": []}
    write_jsonl(run.path("repo_stats.jsonl"), [stats[r].to_dict() for r in repos])
    write_text(run.path("topic_model.txt"), model.to_text())
    write_text(run.path("features.csv"), write_matrix_csv(vectors, names, extra=("target",)))
    write_json(run.path("autospearman.json"), pruning)
    return {"rows": len(rows), "retained": len(pruning["retained"])}


def load_features(run: Run) -> tuple[list[str], np.ndarray, list[str], np.ndarray]:
    keys, header, M = read_matrix_csv(run.path("features.csv").read_text(encoding="utf-8"))
    y = M[:, 0].astype(np.int64)
    return keys, y, header[1:], M[:, 1:]


# ---------------------------------------------------------------- explain

@_staged("explain")
def stage_explain(run: Run) -> dict:
    cfg = run.config
    model_path = run.path("model.json")
    for stale in ("forest.txt", "shap.csv", "model.json"):
        if run.path(stale).exists():
            run.path(stale).unlink()
    if not run.path("features.csv").exists():
        run.notice("model stage skipped: no valid comments")
        return {"skipped": True}
    keys, y, names, X = load_features(run)
    retained = read_json(run.path("autospearman.json"))["retained"]
    cols = [names.index(n) for n in retained]
    X = X[:, cols]
    try:
        tr, te = split_train_test(y, cfg.train_fraction, cfg.seed)
    except SplitError as exc:
        run.notice(f"model stage skipped: {exc}")
        return {"skipped": True}
    params = ForestParams(seed=cfg.seed, n_trees=cfg.n_trees, max_depth=cfg.max_depth, min_leaf=cfg.min_leaf)
    forest = train_forest(X[tr], y[tr], params, cfg.parallelism)
    pred = forest.classify(X[te])
    m = confusion([int(v) for v in y[te]], [int(v) for v in pred], [0, 1])
    explanations = explain_many(forest, X[te], cfg.parallelism)
    groups = {g: [n for n in members if n in retained] for g, members in feature_groups(cfg.lda_topics).items()}
    report = feature_report(explanations, X[te], retained, groups)
    write_text(run.path("forest.txt"), forest.to_text())
    write_text(run.path("shap.csv"), shap_csv([keys[i] for i in te], explanations, retained))
    result = {
        "params": {**{k: getattr(params, k) for k in ("seed", "n_trees", "max_depth", "min_leaf", "bootstrap")},
                   "features_per_split": params.resolved_m(len(retained))},
        "n_train": len(tr), "n_test": len(te), "features": retained,
        "accuracy": overall_accuracy(m), "macro_f1": macro_f1(m),
        "report": report.to_dict(),
    }
    write_json(model_path, result)
    return result


# ---------------------------------------------------------------- all

def stage_function(name: str) -> Callable:
    return {"discover": stage_discover, "collect": stage_collect, "filter": stage_filter,
            "reconstruct": stage_reconstruct, "classify": stage_classify, "evaluate": stage_evaluate,
            "features": stage_features, "explain": stage_explain}[name]


def run_pipeline(config: RunConfig, session: Optional[ingest.Session] = None, formats=("markdown", "csv", "json")):
    """collect through report; every intermediate dataset persists in the run directory."""
    from .report import build_bundle, emit_report

    run = Run(config, session)
    if run.path("notices.txt").exists():
        run.path("notices.txt").unlink()
    for name in STAGES[:-1]:
        stage_function(name)(run)
    bundle = build_bundle(run)
    for fmt in formats:
        emit_report(bundle, fmt, run.out)
    return bundle
