"""Immutable records exchanged between stages, with JSON round-tripping."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Optional

_IDENT = re.compile(r"^[^\s/]+$")
_SHA = re.compile(r"^[0-9a-f]{40}$")


def parse_ts(value: str | datetime) -> datetime:
    """Parse an ISO-8601 timestamp and normalize it to UTC."""
    if isinstance(value, datetime):
        dt = value
    else:
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_ts(dt: datetime) -> str:
    """RFC 3339 UTC with a trailing Z."""
    return parse_ts(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def is_sha(value: str) -> bool:
    return bool(_SHA.match(value or ""))


@dataclass(frozen=True, order=True)
class RepoRef:
    owner: str
    name: str

    def __post_init__(self):
        for part in (self.owner, self.name):
            if not part or not _IDENT.match(part):
                raise ValueError(f"invalid repository component: {part!r}")

    @classmethod
    def parse(cls, text: str) -> "RepoRef":
        owner, sep, name = text.strip().partition("/")
        if not sep or "/" in name:
            raise ValueError(f"expected owner/name, got {text!r}")
        return cls(owner, name)

    @property
    def full_name(self) -> str:
        return f"{self.owner}/{self.name}"

    def __str__(self) -> str:
        return self.full_name


@dataclass(frozen=True)
class PullRequestRecord:
    repo: str
    number: int
    merged: bool
    base_commit: str
    created_at: datetime
    merge_commit: Optional[str] = None
    merged_at: Optional[datetime] = None

    def __post_init__(self):
        if self.number <= 0:
            raise ValueError("PR number must be positive")
        if self.merged:
            if not self.merge_commit or self.merged_at is None:
                raise ValueError(f"merged PR #{self.number} lacks merge commit/time")
            if self.merged_at < self.created_at:
                raise ValueError(f"PR #{self.number} merged before it was created")

    def to_dict(self) -> dict:
        return {
            "repo": self.repo,
            "number": self.number,
            "merged": self.merged,
            "base_commit": self.base_commit,
            "merge_commit": self.merge_commit,
            "created_at": format_ts(self.created_at),
            "merged_at": format_ts(self.merged_at) if self.merged_at else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PullRequestRecord":
        return cls(
            repo=d["repo"],
            number=int(d["number"]),
            merged=bool(d["merged"]),
            base_commit=d["base_commit"],
            merge_commit=d.get("merge_commit"),
            created_at=parse_ts(d["created_at"]),
            merged_at=parse_ts(d["merged_at"]) if d.get("merged_at") else None,
        )


@dataclass(frozen=True)
class InlineMeta:
    path: str
    original_commit_id: str
    original_line: int
    diff_hunk: str
    original_start_line: Optional[int] = None

    def __post_init__(self):
        if self.original_line <= 0:
            raise ValueError("original_line must be positive")
        if self.original_start_line is not None and not (
            0 < self.original_start_line <= self.original_line
        ):
            raise ValueError("original_start_line must lie in 1..original_line")


@dataclass(frozen=True)
class RawComment:
    id: int
    kind: str  # "inline" | "general"
    author_login: str
    created_at: datetime
    body: str
    repo: str = ""
    pr: int = 0
    in_reply_to: Optional[int] = None
    inline_meta: Optional[InlineMeta] = None

    def __post_init__(self):
        if self.kind not in ("inline", "general"):
            raise ValueError(f"unknown comment kind {self.kind!r}")
        if self.kind == "inline" and self.inline_meta is None:
            raise ValueError(f"inline comment {self.id} lacks inline metadata")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "id": self.id,
            "kind": self.kind,
            "repo": self.repo,
            "pr": self.pr,
            "author_login": self.author_login,
            "created_at": format_ts(self.created_at),
            "body": self.body,
            "in_reply_to": self.in_reply_to,
            "inline_meta": None,
        }
        if self.inline_meta is not None:
            m = self.inline_meta
            d["inline_meta"] = {
                "path": m.path,
                "original_commit_id": m.original_commit_id,
                "original_start_line": m.original_start_line,
                "original_line": m.original_line,
                "diff_hunk": m.diff_hunk,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RawComment":
        meta = d.get("inline_meta")
        return cls(
            id=int(d["id"]),
            kind=d["kind"],
            repo=d.get("repo", ""),
            pr=int(d.get("pr", 0)),
            author_login=d["author_login"],
            created_at=parse_ts(d["created_at"]),
            body=d["body"],
            in_reply_to=d.get("in_reply_to"),
            inline_meta=InlineMeta(**meta) if meta else None,
        )


@dataclass(frozen=True)
class WorkflowFile:
    path: str
    content: str
    commit: str
    committed_at: datetime

    def __post_init__(self):
        if not self.path.startswith(".github/workflows/") or not self.path.endswith(
            (".yml", ".yaml")
        ):
            raise ValueError(f"not a workflow file path: {self.path!r}")

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "commit": self.commit,
            "committed_at": format_ts(self.committed_at),
            "content": self.content,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkflowFile":
        return cls(d["path"], d["content"], d["commit"], parse_ts(d["committed_at"]))


@dataclass(frozen=True)
class FileDiff:
    """One file entry of a commit or compare payload."""

    path: str
    status: str  # added | modified | removed | renamed
    previous_path: Optional[str] = None
    patch: Optional[str] = None
    additions: int = 0
    deletions: int = 0
    similarity: Optional[float] = None


@dataclass(frozen=True)
class CommitRecord:
    sha: str
    committed_at: datetime
    author_login: Optional[str] = None
    author_type: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "sha": self.sha,
            "committed_at": format_ts(self.committed_at),
            "author_login": self.author_login,
            "author_type": self.author_type,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CommitRecord":
        return cls(d["sha"], parse_ts(d["committed_at"]), d.get("author_login"), d.get("author_type"))


@dataclass(frozen=True)
class RepoStats:
    repo: str
    file_count: int
    file_size: int
    issue_count: int
    pr_count: int
    contributor_count: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "RepoStats":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass
class Census:
    """Per-repository discovery outcome."""

    repo: str
    action: Optional[str]
    pr_count: int
    ambiguous: bool = False
    workflow_path: Optional[str] = None
    references: list = field(default_factory=list)
