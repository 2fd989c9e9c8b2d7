"""GitHub REST acquisition with a record/replay fixture store.

Every request goes through :class:`Session`, which either talks to the live
API, records live responses into a :class:`FixtureStore`, or replays them
without touching the network.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional
from urllib.parse import quote, urlencode, urlsplit

from .errors import (
    CompareError,
    DecodeError,
    FixtureError,
    FixtureMissing,
    HTTPError,
    InvalidPath,
    PRNotFound,
    RateLimitExhausted,
    RepoNotFound,
    TokenRequired,
    UnsupportedContent,
)
from .records import (
    CommitRecord,
    FileDiff,
    InlineMeta,
    PullRequestRecord,
    RawComment,
    RepoRef,
    RepoStats,
    WorkflowFile,
    is_sha,
    parse_ts,
)

log = logging.getLogger(__name__)

API_ROOT = "https://api.github.com"
TOKEN_ENV = "REVIEWPULSE_TOKEN"
MAX_CONTENT_BYTES = 1 << 20
ACTIONS_BOT = "github-actions[bot]"

QUERIES = {
    "inline_by_actions": "repo:{repo} reviewed-by:github-actions[bot] is:pr",
    "general_by_actions": "repo:{repo} commenter:github-actions is:pr",
}

_KEPT_HEADERS = ("link", "x-ratelimit-remaining", "x-ratelimit-reset", "retry-after")


def canonical_key(method: str, path: str, params: Optional[dict] = None) -> str:
    """Deterministic identity of a request: method, normalized path, sorted query."""
    parts = urlsplit(path)
    norm = "/" + "/".join(seg for seg in parts.path.split("/") if seg)
    query = sorted((str(k), str(v)) for k, v in (params or {}).items() if v is not None)
    key = f"{method.upper()} {norm}"
    if query:
        key += "?" + urlencode(query)
    return key


@dataclass(frozen=True)
class Response:
    status: int
    body: bytes
    headers: dict = field(default_factory=dict)

    def json(self) -> Any:
        return json.loads(self.body.decode("utf-8"))


class FixtureStore:
    """One JSON file per canonical request key holding status and body."""

    MODES = ("record", "replay", "live")

    def __init__(self, directory: str | os.PathLike, mode: str = "replay"):
        if mode not in self.MODES:
            raise ValueError(f"unknown fixture mode {mode!r}")
        self.mode = mode
        self.directory = Path(directory)
        self._write_lock = threading.Lock()

    @staticmethod
    def filename(key: str) -> str:
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:32] + ".json"

    def get(self, key: str) -> Optional[Response]:
        p = self.directory / self.filename(key)
        if not p.exists():
            return None
        doc = json.loads(p.read_text(encoding="utf-8"))
        if doc.get("key") != key:
            raise FixtureError(f"fixture {p.name} holds {doc.get('key')!r}, expected {key!r}")
        if "body_base64" in doc:
            body = base64.b64decode(doc["body_base64"])
        else:
            body = doc.get("body", "").encode("utf-8")
        return Response(int(doc["status"]), body, doc.get("headers") or {})

    def put(self, key: str, response: Response) -> None:
        doc: dict[str, Any] = {"key": key, "status": response.status}
        headers = {k: v for k, v in response.headers.items() if k.lower() in _KEPT_HEADERS}
        if headers:
            doc["headers"] = headers
        try:
            doc["body"] = response.body.decode("utf-8")
        except UnicodeDecodeError:
            doc["body_base64"] = base64.b64encode(response.body).decode("ascii")
        text = json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n"
        with self._write_lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, self.directory / self.filename(key))

    def put_json(self, method: str, path: str, params: Optional[dict], payload: Any, status: int = 200) -> str:
        """Write a handmade fixture; used to author offline corpora."""
        key = canonical_key(method, path, params)
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.put(key, Response(status, body))
        return key

    @property
    def entries(self) -> dict[str, Response]:
        out = {}
        for p in sorted(self.directory.glob("*.json")):
            doc = json.loads(p.read_text(encoding="utf-8"))
            out[doc["key"]] = self.get(doc["key"])
        return out


class RateBudget:
    """Token bucket fed by the server's remaining/reset headers."""

    def __init__(self, remaining: int = 5000, max_wait: float = 900.0, sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.time):
        self.remaining = remaining
        self.reset_at = 0.0
        self.max_wait = max_wait
        self._sleep = sleep
        self._clock = clock
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            if self.remaining <= 0:
                wait = self.reset_at - self._clock()
                if wait > self.max_wait:
                    raise RateLimitExhausted(f"rate limit resets in {wait:.0f}s")
                if wait > 0:
                    log.info("rate limit exhausted; sleeping %.1fs", wait)
                    self._sleep(wait)
                self.remaining = 1
            self.remaining -= 1

    def update(self, headers: dict) -> None:
        h = {k.lower(): v for k, v in headers.items()}
        with self._lock:
            if "x-ratelimit-remaining" in h:
                self.remaining = int(h["x-ratelimit-remaining"])
            if "x-ratelimit-reset" in h:
                self.reset_at = float(h["x-ratelimit-reset"])


class Session:
    """Request handle carrying the rate-limit budget and fixture policy."""

    def __init__(self, store: FixtureStore, token: Optional[str] = None, *, api_root: str = API_ROOT,
                 parallelism: int = 4, per_page: int = 100, max_retries: int = 3,
                 budget: Optional[RateBudget] = None, transport: Optional[Callable[..., Response]] = None):
        self.store = store
        self.token = token
        self.api_root = api_root.rstrip("/")
        self.parallelism = max(1, parallelism)
        self.per_page = per_page
        self.max_retries = max_retries
        self.budget = budget or RateBudget()
        self._transport = transport
        self._http = None
        self._cache: dict[tuple, Optional[str]] = {}
        self._cache_lock = threading.Lock()
        self.calls = 0

    @property
    def offline(self) -> bool:
        return self.store.mode == "replay"

    def _live(self, path: str, params: Optional[dict]) -> Response:
        if self._transport is not None:
            return self._transport("GET", path, params)
        if self._http is None:
            import requests

            self._http = requests.Session()
            self._http.headers.update({
                "Accept": "application/vnd.github+json",
                "X-GitHub-Api-Version": "2022-11-28",
                "Authorization": f"Bearer {self.token}",
            })
        r = self._http.get(f"{self.api_root}/{path.lstrip('/')}", params=params, timeout=60)
        return Response(r.status_code, r.content, {k.lower(): v for k, v in r.headers.items()})

    def request(self, path: str, params: Optional[dict] = None) -> Response:
        key = canonical_key("GET", path, params)
        if self.store.mode == "replay":
            resp = self.store.get(key)
            if resp is None:
                raise FixtureMissing(key)
            return resp
        for attempt in range(self.max_retries + 1):
            self.budget.acquire()
            self.calls += 1
            resp = self._live(path, params)
            self.budget.update(resp.headers)
            if resp.status in (403, 429) and attempt < self.max_retries:
                retry_after = resp.headers.get("retry-after")
                if retry_after is not None or self.budget.remaining <= 0:
                    delay = float(retry_after) if retry_after is not None else 0.0
                    if retry_after is None:
                        self.budget.remaining = 0
                    log.warning("%s returned %d; retry %d", key, resp.status, attempt + 1)
                    if delay:
                        self.budget._sleep(min(delay, self.budget.max_wait))
                    continue
            break
        if resp.status in (403, 429) and self.budget.remaining <= 0:
            raise RateLimitExhausted(key)
        if self.store.mode == "record":
            self.store.put(key, resp)
        return resp

    def get_json(self, path: str, params: Optional[dict] = None, *, not_found: Optional[type] = None) -> Any:
        resp = self.request(path, params)
        if resp.status == 404 and not_found is not None:
            raise not_found(path)
        if resp.status >= 400:
            raise HTTPError(resp.status, canonical_key("GET", path, params))
        try:
            return resp.json()
        except (ValueError, UnicodeDecodeError) as exc:
            raise DecodeError("body", f"undecodable JSON at {path}: {exc}") from exc

    def paginate(self, path: str, params: Optional[dict] = None, *, items: Callable[[Any], list] = lambda p: p,
                 not_found: Optional[type] = None) -> list:
        """Fetch every page until a short page is returned."""
        out = []
        page = 1
        while True:
            q = dict(params or {}, per_page=self.per_page, page=page)
            payload = self.get_json(path, q, not_found=not_found)
            batch = items(payload)
            if not isinstance(batch, list):
                raise DecodeError("items", f"expected a list at {path}")
            out.extend(batch)
            if len(batch) < self.per_page:
                return out
            page += 1

    def map(self, fn: Callable, items: Iterable) -> list:
        """Run ``fn`` over items with bounded parallelism, preserving order."""
        items = list(items)
        if self.parallelism == 1 or len(items) < 2:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(self.parallelism) as pool:
            return list(pool.map(fn, items))


def open_session(token: Optional[str], store: FixtureStore, **kwargs) -> Session:
    if store.mode in ("live", "record") and not token:
        raise TokenRequired("token required for live access (set REVIEWPULSE_TOKEN)")
    if store.mode == "replay":
        if not store.directory.is_dir() or not os.access(store.directory, os.R_OK):
            raise FixtureError(f"fixture directory unreadable: {store.directory}")
    return Session(store, token, **kwargs)


def _repo_path(repo: RepoRef) -> str:
    return f"repos/{repo.owner}/{repo.name}"


def _require(d: dict, key: str) -> Any:
    if not isinstance(d, dict) or key not in d:
        raise DecodeError(key)
    return d[key]


def search_prs(session: Session, repo: RepoRef, query_kind: str) -> list[int]:
    if query_kind not in QUERIES:
        raise ValueError(f"unknown query kind {query_kind!r}")
    q = QUERIES[query_kind].format(repo=repo.full_name)
    try:
        found = session.paginate("search/issues", {"q": q}, items=lambda p: _require(p, "items"))
    except HTTPError as exc:
        if exc.status in (404, 422):
            raise RepoNotFound(repo.full_name) from exc
        raise
    return sorted({int(_require(item, "number")) for item in found})


def _decode_comment(item: dict, kind: str, repo: RepoRef, pr: int) -> RawComment:
    user = item.get("user") or {}
    meta = None
    if kind == "inline":
        meta = InlineMeta(
            path=_require(item, "path"),
            original_commit_id=_require(item, "original_commit_id"),
            original_start_line=item.get("original_start_line"),
            original_line=int(item.get("original_line") or _require(item, "line")),
            diff_hunk=_require(item, "diff_hunk"),
        )
    return RawComment(
        id=int(_require(item, "id")),
        kind=kind,
        repo=repo.full_name,
        pr=pr,
        author_login=user.get("login") or "ghost",
        created_at=parse_ts(_require(item, "created_at")),
        body=item.get("body") or "",
        in_reply_to=item.get("in_reply_to_id"),
        inline_meta=meta,
    )


def fetch_comments(session: Session, repo: RepoRef, pr: int, kind: str) -> list[RawComment]:
    """All comments of one PR; inline from the pulls endpoint, general from issues."""
    endpoint = "pulls" if kind == "inline" else "issues"
    if kind not in ("inline", "general"):
        raise ValueError(f"unknown comment kind {kind!r}")
    items = session.paginate(f"{_repo_path(repo)}/{endpoint}/{pr}/comments", not_found=PRNotFound)
    seen = {}
    for item in items:
        c = _decode_comment(item, kind, repo, pr)
        seen.setdefault(c.id, c)
    return list(seen.values())


def fetch_pull(session: Session, repo: RepoRef, number: int) -> PullRequestRecord:
    d = session.get_json(f"{_repo_path(repo)}/pulls/{number}", not_found=PRNotFound)
    merged_at = d.get("merged_at")
    return PullRequestRecord(
        repo=repo.full_name,
        number=int(_require(d, "number")),
        merged=bool(d.get("merged") or merged_at),
        base_commit=_require(_require(d, "base"), "sha"),
        merge_commit=d.get("merge_commit_sha") if merged_at else None,
        created_at=parse_ts(_require(d, "created_at")),
        merged_at=parse_ts(merged_at) if merged_at else None,
    )


def list_closed_pulls(session: Session, repo: RepoRef) -> list[int]:
    items = session.paginate(f"{_repo_path(repo)}/pulls", {"state": "closed"}, not_found=RepoNotFound)
    return sorted({int(_require(i, "number")) for i in items if i.get("merged_at")})


def _decode_commit(item: dict) -> CommitRecord:
    commit = _require(item, "commit")
    author = item.get("author") or {}
    return CommitRecord(
        sha=_require(item, "sha"),
        committed_at=parse_ts(_require(_require(commit, "committer"), "date")),
        author_login=author.get("login"),
        author_type=author.get("type"),
    )


def fetch_pr_commits(session: Session, repo: RepoRef, number: int) -> list[CommitRecord]:
    items = session.paginate(f"{_repo_path(repo)}/pulls/{number}/commits", not_found=PRNotFound)
    return sorted((_decode_commit(i) for i in items), key=lambda c: (c.committed_at, c.sha))


def _decode_files(files: list) -> list[FileDiff]:
    out = []
    for f in files:
        status = _require(f, "status")
        if status not in ("added", "modified", "removed", "renamed"):
            status = "modified"
        out.append(FileDiff(
            path=_require(f, "filename"),
            status=status,
            previous_path=f.get("previous_filename") if status == "renamed" else None,
            patch=f.get("patch"),
            additions=int(f.get("additions", 0)),
            deletions=int(f.get("deletions", 0)),
            similarity=f.get("similarity"),
        ))
    return out


def fetch_commit(session: Session, repo: RepoRef, sha: str) -> tuple[CommitRecord, list[FileDiff]]:
    d = session.get_json(f"{_repo_path(repo)}/commits/{sha}", not_found=CompareError)
    return _decode_commit(d), _decode_files(d.get("files") or [])


def fetch_file_at(session: Session, repo: RepoRef, path: str, ref: str) -> Optional[str]:
    """Decoded text of ``path`` at ``ref``, or None when it does not exist there."""
    if not is_sha(ref):
        raise ValueError(f"ref must be a full commit id, got {ref!r}")
    cache_key = (repo.full_name, path, ref)
    with session._cache_lock:
        if cache_key in session._cache:
            return session._cache[cache_key]
    resp = session.request(f"{_repo_path(repo)}/contents/{quote(path)}", {"ref": ref})
    if resp.status == 404:
        text = None
    elif resp.status >= 400:
        raise HTTPError(resp.status, path)
    else:
        d = resp.json()
        if not isinstance(d, dict) or d.get("type", "file") != "file":
            raise UnsupportedContent(f"{path}@{ref[:7]} is not a regular file")
        if int(d.get("size", 0)) > MAX_CONTENT_BYTES or d.get("encoding") != "base64":
            raise UnsupportedContent(f"{path}@{ref[:7]} exceeds 1 MiB")
        try:
            raw = base64.b64decode(d.get("content", ""))
            text = raw.decode("utf-8")
        except (binascii.Error, UnicodeDecodeError) as exc:
            raise UnsupportedContent(f"{path}@{ref[:7]} is not UTF-8 text") from exc
        if "\x00" in text:
            raise UnsupportedContent(f"{path}@{ref[:7]} looks binary")
    with session._cache_lock:
        session._cache[cache_key] = text
    return text


def compare_commits(session: Session, repo: RepoRef, base: str, head: str) -> list[FileDiff]:
    if base == head:
        return []
    resp = session.request(f"{_repo_path(repo)}/compare/{base}...{head}")
    if resp.status in (404, 422):
        raise CompareError(f"cannot compare {base[:7]}...{head[:7]} in {repo}")
    if resp.status >= 400:
        raise HTTPError(resp.status, f"compare {base}...{head}")
    return _decode_files(resp.json().get("files") or [])


def is_workflow_path(path: str) -> bool:
    return path.startswith(".github/workflows/") and path.endswith((".yml", ".yaml")) and "/" not in path[18:]


def list_workflow_files(session: Session, repo: RepoRef) -> list[str]:
    resp = session.request(f"{_repo_path(repo)}/contents/.github/workflows")
    if resp.status == 404:
        return []
    if resp.status >= 400:
        raise HTTPError(resp.status, f"{repo} workflows")
    return sorted(e["path"] for e in resp.json() if e.get("type") == "file" and is_workflow_path(e["path"]))


def fetch_workflow_history(session: Session, repo: RepoRef, path: str) -> list[WorkflowFile]:
    """One entry per commit touching the workflow file, oldest first."""
    if not is_workflow_path(path):
        raise InvalidPath(path)
    commits = session.paginate(f"{_repo_path(repo)}/commits", {"path": path}, not_found=RepoNotFound)
    records = sorted({c.sha: c for c in map(_decode_commit, commits)}.values(),
                     key=lambda c: (c.committed_at, c.sha))
    out = []
    for c in records:
        text = fetch_file_at(session, repo, path, c.sha)
        if text is None:
            log.info("%s removed at %s; skipping", path, c.sha[:7])
            continue
        out.append(WorkflowFile(path, text, c.sha, c.committed_at))
    return out


def count_author_commits(session: Session, repo: RepoRef, login: str, until) -> int:
    """Commits by ``login`` strictly before ``until``."""
    from .records import format_ts

    items = session.paginate(f"{_repo_path(repo)}/commits", {"author": login, "until": format_ts(until)})
    return sum(1 for i in items if parse_ts(i["commit"]["committer"]["date"]) < until)


def fetch_repo_stats(session: Session, repo: RepoRef) -> RepoStats:
    meta = session.get_json(_repo_path(repo), not_found=RepoNotFound)
    tree = session.get_json(f"{_repo_path(repo)}/git/trees/{_require(meta, 'default_branch')}",
                            {"recursive": 1}, not_found=RepoNotFound)
    blobs = [e for e in tree.get("tree", []) if e.get("type") == "blob"]
    issues = session.get_json("search/issues", {"q": f"repo:{repo.full_name} is:issue", "per_page": 1})
    prs = session.get_json("search/issues", {"q": f"repo:{repo.full_name} is:pr", "per_page": 1})
    contributors = session.paginate(f"{_repo_path(repo)}/contributors")
    humans = [c for c in contributors if c.get("type") != "Bot" and "bot" not in (c.get("login") or "").lower()]
    return RepoStats(
        repo=repo.full_name,
        file_count=len(blobs),
        file_size=sum(int(e.get("size", 0)) for e in blobs),
        issue_count=int(_require(issues, "total_count")),
        pr_count=int(_require(prs, "total_count")),
        contributor_count=len(humans),
    )


def count_prs(session: Session, repo: RepoRef) -> int:
    d = session.get_json("search/issues", {"q": f"repo:{repo.full_name} is:pr", "per_page": 1})
    return int(_require(d, "total_count"))
