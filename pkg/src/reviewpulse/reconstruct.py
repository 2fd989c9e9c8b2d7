"""Rebuild the code a comment reviewed and categorize what changed afterwards."""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, Optional, Sequence

from .errors import ApproximationError, HunkParseError, ReconstructionError, SliceError
from .records import (
    CommitRecord,
    FileDiff,
    PullRequestRecord,
    RawComment,
    RepoRef,
    format_ts,
    parse_ts,
)

HEADER_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
ORIGINS = {" ": "context", "+": "added", "-": "removed"}
PREAMBLE = "(preamble)"

CATEGORIES = ("Modified", "RenamedModified", "RenamedOnly", "Deleted", "Unchanged")


@dataclass(frozen=True)
class DiffLine:
    origin: str  # context | added | removed
    text: str
    old_no: Optional[int] = None
    new_no: Optional[int] = None

    @property
    def prefix(self) -> str:
        return {"context": " ", "added": "+", "removed": "-"}[self.origin]

    def render(self) -> str:
        return self.prefix + self.text


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: tuple[DiffLine, ...]


def parse_hunk_header(line: str) -> tuple[int, int, int, int]:
    m = HEADER_RE.match(line)
    if not m:
        raise HunkParseError(f"malformed hunk header: {line!r}")
    a, b, c, d = m.groups()
    return int(a), int(b if b is not None else 1), int(c), int(d if d is not None else 1)


def _number(header: str, body: Iterable[str]) -> Hunk:
    old_start, old_len, new_start, new_len = parse_hunk_header(header)
    old_no, new_no = old_start, new_start
    lines = []
    for raw in body:
        if raw.startswith("\\"):  # "\ No newline at end of file"
            continue
        origin = ORIGINS.get(raw[:1], "context")
        text = raw[1:] if raw[:1] in ORIGINS else raw
        if origin == "context":
            lines.append(DiffLine(origin, text, old_no, new_no))
            old_no += 1
            new_no += 1
        elif origin == "added":
            lines.append(DiffLine(origin, text, None, new_no))
            new_no += 1
        else:
            lines.append(DiffLine(origin, text, old_no, None))
            old_no += 1
    return Hunk(old_start, old_len, new_start, new_len, tuple(lines))


def parse_patch(patch: str) -> list[Hunk]:
    """Split unified-diff text into numbered hunks."""
    hunks = []
    header, body = None, []
    for raw in patch.replace("\r\n", "\n").split("\n"):
        if raw.startswith("@@"):
            if header is not None:
                hunks.append(_number(header, body))
            header, body = raw, []
        elif header is not None:
            body.append(raw)
        elif raw.startswith(("diff ", "index ", "--- ", "+++ ")) or not raw:
            continue
        else:
            raise HunkParseError("patch text before first hunk header")
    if header is not None:
        if body and body[-1] == "":
            body.pop()
        hunks.append(_number(header, body))
    return hunks


def parse_hunk(diff_hunk: str) -> Hunk:
    text = diff_hunk.replace("\r\n", "\n")
    if not text.startswith("@@"):
        raise HunkParseError("diff hunk must begin with an @@ header")
    hunks = parse_patch(text)
    if len(hunks) != 1:
        raise HunkParseError(f"expected one hunk, found {len(hunks)}")
    return hunks[0]


@dataclass(frozen=True)
class ReviewedChange:
    path: str
    reviewed_commit: str
    line_range: tuple[int, int]
    lines: tuple[DiffLine, ...]
    strategy: Optional[str] = None

    def __post_init__(self):
        if self.line_range[0] > self.line_range[1]:
            raise ValueError("line_range start exceeds end")
        if not self.lines:
            raise ValueError("reviewed change has no lines")

    @property
    def added(self) -> int:
        return sum(1 for l in self.lines if l.origin == "added")

    @property
    def deleted(self) -> int:
        return sum(1 for l in self.lines if l.origin == "removed")

    def render(self) -> str:
        return "\n".join(l.render() for l in self.lines)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "reviewed_commit": self.reviewed_commit,
            "line_range": list(self.line_range),
            "strategy": self.strategy,
            "lines": [l.render() for l in self.lines],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewedChange":
        lines = tuple(DiffLine(ORIGINS[s[:1]], s[1:]) for s in d["lines"])
        return cls(d["path"], d["reviewed_commit"], tuple(d["line_range"]), lines, d.get("strategy"))


def slice_hunk(diff_hunk: str, start: Optional[int], end: int) -> list[DiffLine]:
    """Lines of the hunk covering new-file lines [start, end].

    Without ``start`` the three lines preceding ``end`` are included, clipped
    to the hunk's first new-file line.
    """
    hunk = parse_hunk(diff_hunk)
    index = {l.new_no: i for i, l in enumerate(hunk.lines) if l.new_no is not None}
    if end not in index:
        raise SliceError(f"line {end} outside hunk starting at {hunk.new_start}")
    lo = start if start is not None else max(hunk.new_start, end - 3)
    if lo > end or lo not in index:
        raise SliceError(f"start line {lo} outside hunk range ending at {end}")
    return list(hunk.lines[index[lo]: index[end] + 1])


def reviewed_from_hunk(comment: RawComment) -> ReviewedChange:
    meta = comment.inline_meta
    lines = slice_hunk(meta.diff_hunk, meta.original_start_line, meta.original_line)
    lo = meta.original_start_line if meta.original_start_line is not None else next(
        l.new_no for l in lines if l.new_no is not None)
    return ReviewedChange(meta.path, meta.original_commit_id, (lo, meta.original_line), tuple(lines))


def _norm(lines: Sequence[DiffLine]) -> list[str]:
    return [l.render().rstrip() for l in lines]


def contains_block(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    """Contiguous subsequence test."""
    n = len(needle)
    if n == 0:
        return False
    return any(list(haystack[i:i + n]) == list(needle) for i in range(len(haystack) - n + 1))


def hunk_matches_patch(diff_hunk: str, patch: Optional[str]) -> bool:
    if not patch:
        return False
    needle = _norm(parse_hunk(diff_hunk).lines)
    return any(contains_block(_norm(h.lines), needle) for h in parse_patch(patch))


def changes_from_patch(path: str, commit: str, patch: str, strategy: Optional[str] = None) -> list[ReviewedChange]:
    """One ReviewedChange per hunk of a file patch."""
    out = []
    for h in parse_patch(patch):
        if not h.lines:
            continue
        news = [l.new_no for l in h.lines if l.new_no is not None]
        rng = (min(news), max(news)) if news else (h.new_start, h.new_start)
        out.append(ReviewedChange(path, commit, rng, h.lines, strategy))
    return out


def _patch_for(files: list[FileDiff], path: str) -> Optional[str]:
    for f in files:
        if f.path == path:
            return f.patch
    return None


def reconstruct_file_level(comment: RawComment, pr: PullRequestRecord, session, repo: Optional[RepoRef] = None
                           ) -> Optional[list[ReviewedChange]]:
    """Reviewed changes for a file-level action comment, or None if inconsistent.

    Strategy A takes the file's diff in the reviewed commit itself; strategy B
    the cumulative base..reviewed comparison. The comment's hunk must appear
    as a contiguous block in one of them.
    """
    from .ingest import compare_commits, fetch_commit

    repo = repo or RepoRef.parse(comment.repo)
    meta = comment.inline_meta
    sha = meta.original_commit_id
    _, files_a = fetch_commit(session, repo, sha)
    patch_a = _patch_for(files_a, meta.path)
    if hunk_matches_patch(meta.diff_hunk, patch_a):
        return changes_from_patch(meta.path, sha, patch_a, "A")
    patch_b = _patch_for(compare_commits(session, repo, pr.base_commit, sha), meta.path)
    if hunk_matches_patch(meta.diff_hunk, patch_b):
        return changes_from_patch(meta.path, sha, patch_b, "B")
    return None


_PATH_TOKEN = re.compile(r"^(?:[\w@.+-]+/)*[\w@+-][\w@.+-]*\.[A-Za-z0-9]{1,10}$")


def _heading_path(line: str) -> Optional[str]:
    s = line.strip()
    s = re.sub(r"^(?:#{1,6}\s+|[-*]\s+|\d+\.\s+)", "", s)
    s = s.strip("*_` ").rstrip(":").strip("*_` ")
    for prefix in ("File: ", "file: ", "📄 "):
        if s.startswith(prefix):
            s = s[len(prefix):].strip("*_` ")
    return s if _PATH_TOKEN.match(s) else None


def split_general_comment(body: str) -> list[tuple[str, str]]:
    """Split a multi-file general comment into (path, text) segments."""
    if not body.strip():
        return []
    segments: list[tuple[str, list[str]]] = [(PREAMBLE, [])]
    for line in body.replace("\r\n", "\n").split("\n"):
        path = _heading_path(line)
        if path is not None:
            segments.append((path, []))
        else:
            segments[-1][1].append(line)
    out = []
    for path, lines in segments:
        text = "\n".join(lines).strip()
        if path == PREAMBLE and not text:
            continue
        out.append((path, text))
    return out


def nearest_preceding_commit(commits: Iterable, created_at: datetime) -> str:
    """Latest commit whose time is <= the comment's creation time."""
    best = None
    for c in commits:
        sha, when = (c.sha, c.committed_at) if isinstance(c, CommitRecord) else (c[0], c[1])
        when = parse_ts(when) if not isinstance(when, (int, float)) else when
        if when <= created_at and (best is None or when >= best[1]):
            best = (sha, when)
    if best is None:
        raise ApproximationError("no commit precedes the comment")
    return best[0]


# ---------------------------------------------------------------- text diff

@dataclass(frozen=True)
class LineEdit:
    tag: str  # insert | delete | replace
    a_start: int
    a_end: int
    new_lines: tuple[str, ...]
    old_lines: tuple[str, ...] = ()

    @property
    def added(self) -> int:
        return len(self.new_lines)

    @property
    def deleted(self) -> int:
        return self.a_end - self.a_start

    def to_list(self) -> list:
        return [self.tag, self.a_start, self.a_end, list(self.new_lines), list(self.old_lines)]

    @classmethod
    def from_list(cls, v: list) -> "LineEdit":
        return cls(v[0], int(v[1]), int(v[2]), tuple(v[3]), tuple(v[4]) if len(v) > 4 else ())


def _lines(text: str) -> list[str]:
    return text.splitlines(keepends=True)


def text_diff(a: str, b: str) -> list[LineEdit]:
    """Line-level edit script turning ``a`` into ``b``."""
    al, bl = _lines(a), _lines(b)
    sm = difflib.SequenceMatcher(None, al, bl, autojunk=False)
    return [LineEdit(tag, i1, i2, tuple(bl[j1:j2]), tuple(al[i1:i2]))
            for tag, i1, i2, j1, j2 in sm.get_opcodes() if tag != "equal"]


def apply_edits(a: str, edits: Iterable[LineEdit]) -> str:
    al = _lines(a)
    out, pos = [], 0
    for e in sorted(edits, key=lambda e: (e.a_start, e.a_end)):
        out.extend(al[pos:e.a_start])
        out.extend(e.new_lines)
        pos = e.a_end
    out.extend(al[pos:])
    return "".join(out)


def lf(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


# ---------------------------------------------------------------- subsequent change

@dataclass(frozen=True)
class SubsequentChange:
    category: str
    final_path: str
    diff: tuple[LineEdit, ...] = ()

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.category in ("Unchanged", "Deleted", "RenamedOnly") and self.diff:
            raise ValueError(f"{self.category} must carry an empty diff")

    @property
    def added(self) -> int:
        return sum(e.added for e in self.diff)

    @property
    def deleted(self) -> int:
        return sum(e.deleted for e in self.diff)

    def render(self) -> str:
        parts = []
        for e in self.diff:
            parts.append(f"@@ -{e.a_start + 1},{e.deleted} ({e.tag}) @@")
            parts.extend("-" + l.rstrip("\n") for l in e.old_lines)
            parts.extend("+" + l.rstrip("\n") for l in e.new_lines)
        return "\n".join(parts)

    def to_dict(self) -> dict:
        return {"category": self.category, "final_path": self.final_path,
                "diff": [e.to_list() for e in self.diff]}

    @classmethod
    def from_dict(cls, d: dict) -> "SubsequentChange":
        return cls(d["category"], d["final_path"], tuple(LineEdit.from_list(e) for e in d["diff"]))


def categorize_change(path: str, final_path: str, before: str, after: Optional[str]) -> SubsequentChange:
    if after is None:
        return SubsequentChange("Deleted", path)
    diff = tuple(text_diff(lf(before), lf(after)))
    if final_path != path:
        return SubsequentChange("RenamedModified" if diff else "RenamedOnly", final_path, diff)
    return SubsequentChange("Modified" if diff else "Unchanged", path, diff)


def build_rename_map(diffs: Iterable[FileDiff]) -> dict[str, str]:
    """old path -> new path from rename annotations; ties by similarity then path."""
    best: dict[str, FileDiff] = {}
    for d in diffs:
        if d.status != "renamed" or not d.previous_path:
            continue
        cur = best.get(d.previous_path)
        rank = (-(d.similarity or 0), d.path)
        if cur is None or rank < (-(cur.similarity or 0), cur.path):
            best[d.previous_path] = d
    return {old: d.path for old, d in best.items()}


def resolve_path(path: str, rename_map: dict[str, str]) -> str:
    seen = {path}
    while path in rename_map:
        path = rename_map[path]
        if path in seen:
            break
        seen.add(path)
    return path


def subsequent_change(session, repo: RepoRef, path: str, reviewed_ref: str, merge_ref: str,
                      rename_map: dict[str, str]) -> SubsequentChange:
    """Categorized cumulative change of ``path`` between review and merge."""
    from .ingest import fetch_file_at

    before = fetch_file_at(session, repo, path, reviewed_ref)
    if before is None:
        raise ReconstructionError(f"{path} missing at reviewed commit {reviewed_ref[:7]}")
    final = resolve_path(path, rename_map)
    after = fetch_file_at(session, repo, final, merge_ref)
    if after is None and final != path:
        after = fetch_file_at(session, repo, path, merge_ref)
        final = path if after is not None else final
    return categorize_change(path, final, before, after)


# ---------------------------------------------------------------- contexts

SOURCES = ("file_action", "hunk_action", "human")


@dataclass
class ContextStats:
    """Per-comment facts gathered during reconstruction for feature extraction."""

    author_login: Optional[str] = None
    author_is_bot: bool = False
    author_is_anon: bool = False
    author_prior_commits: int = 0
    commit_files: list = field(default_factory=list)  # {path, additions, deletions, base_lines}
    timeline_index: int = 0
    prior_comment_len: int = 0
    trigger: Optional[str] = None
    llm: Optional[str] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ContextStats":
        return cls(**d)


@dataclass
class CommentContext:
    key: str
    comment: RawComment
    source: str
    action_id: Optional[int]
    reviewed: list[ReviewedChange]
    subsequent: SubsequentChange
    pr: PullRequestRecord
    stats: ContextStats = field(default_factory=ContextStats)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.source != "file_action" and len(self.reviewed) != 1:
            raise ValueError(f"{self.source} context must have exactly one reviewed change")
        if not self.reviewed:
            raise ValueError("context without reviewed changes")

    @property
    def path(self) -> str:
        return self.reviewed[0].path

    def sort_key(self):
        return (self.comment.repo, self.comment.pr, format_ts(self.comment.created_at), self.comment.id, self.key)

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "source": self.source,
            "action_id": self.action_id,
            "comment": self.comment.to_dict(),
            "pr": self.pr.to_dict(),
            "reviewed": [r.to_dict() for r in self.reviewed],
            "subsequent": self.subsequent.to_dict(),
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CommentContext":
        return cls(
            key=d["key"],
            comment=RawComment.from_dict(d["comment"]),
            source=d["source"],
            action_id=d.get("action_id"),
            reviewed=[ReviewedChange.from_dict(r) for r in d["reviewed"]],
            subsequent=SubsequentChange.from_dict(d["subsequent"]),
            pr=PullRequestRecord.from_dict(d["pr"]),
            stats=ContextStats.from_dict(d.get("stats") or {}),
        )


@dataclass
class Reconstruction:
    """Outcome of reconstructing one comment (or one segment of a general comment)."""

    comment_id: int
    status: str  # ok | inconsistent | path_unmatched | unsupported | error
    context: Optional[CommentContext] = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {"comment_id": self.comment_id, "status": self.status, "reason": self.reason,
                "context": self.context.to_dict() if self.context else None}

    @classmethod
    def from_dict(cls, d: dict) -> "Reconstruction":
        ctx = CommentContext.from_dict(d["context"]) if d.get("context") else None
        return cls(d["comment_id"], d["status"], ctx, d.get("reason", ""))


def with_body(comment: RawComment, body: str) -> RawComment:
    return replace(comment, body=body)
