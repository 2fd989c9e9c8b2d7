"""Dataset refinement filters and assembly of analysis-ready comment contexts."""

from __future__ import annotations

import re
import shlex
import subprocess
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable, Mapping, Optional

from .records import PullRequestRecord, RawComment
from .reconstruct import CommentContext, Reconstruction

REASONS = ("not_merged", "post_merge", "bot_author", "not_first_in_thread", "non_english", "unsupported_content")
ENGLISH_THRESHOLD = 0.15

_WORD = re.compile(r"[^\W\d_]+(?:'[^\W\d_]+)?")
_FENCE = re.compile(r"```.*?(?:```|\Z)", re.S)
_INLINE = re.compile(r"`[^`\n]+`")


@dataclass(frozen=True)
class LanguageTag:
    value: str  # english | other
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@lru_cache(maxsize=1)
def english_stopwords() -> frozenset:
    text = (resources.files("reviewpulse") / "data" / "stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(text.split())


def _is_latin(ch: str) -> bool:
    try:
        return unicodedata.name(ch).startswith("LATIN")
    except ValueError:
        return False


def detect_language(text: str, threshold: float = ENGLISH_THRESHOLD) -> LanguageTag:
    """Script-ratio plus stopword-rate heuristic; code spans are ignored."""
    prose = _INLINE.sub(" ", _FENCE.sub(" ", text or ""))
    letters = [ch for ch in prose if ch.isalpha()]
    if not letters:
        return LanguageTag("other", 0.0)
    latin = sum(1 for ch in letters if _is_latin(ch)) / len(letters)
    words = [w.lower() for w in _WORD.findall(prose)]
    hits = sum(1 for w in words if w in english_stopwords()) / len(words) if words else 0.0
    score = latin * min(1.0, hits / threshold) if threshold > 0 else latin
    if latin >= 0.5 and hits >= threshold:
        return LanguageTag("english", round(score, 6))
    return LanguageTag("other", round(1.0 - score, 6))


class CommandDetector:
    """External detector behind a process boundary.

    The command receives the text on stdin and must print ``<tag> <confidence>``,
    e.g. ``english 0.97``.
    """

    def __init__(self, command: str, timeout: float = 30.0):
        self.argv = shlex.split(command)
        self.timeout = timeout

    def __call__(self, text: str) -> LanguageTag:
        out = subprocess.run(self.argv, input=text, capture_output=True, text=True,
                             timeout=self.timeout, check=True).stdout.split()
        tag = "english" if out and out[0].lower() in ("english", "en", "__label__en") else "other"
        conf = float(out[1]) if len(out) > 1 else 1.0
        return LanguageTag(tag, min(1.0, max(0.0, conf)))


def make_detector(spec: Optional[str]) -> Callable[[str], LanguageTag]:
    if not spec or spec == "builtin":
        return detect_language
    if spec.startswith("cmd:"):
        return CommandDetector(spec[4:])
    raise ValueError(f"unknown detector {spec!r}")


@dataclass
class FilterReport:
    input_count: int = 0
    retained_count: int = 0
    removed_by: dict = field(default_factory=lambda: {r: 0 for r in REASONS})

    def check(self) -> None:
        assert self.input_count == self.retained_count + sum(self.removed_by.values())

    def to_dict(self) -> dict:
        return {"input_count": self.input_count, "retained_count": self.retained_count,
                "removed_by": {r: self.removed_by[r] for r in REASONS}}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterReport":
        return cls(d["input_count"], d["retained_count"], dict(d["removed_by"]))


def is_bot_login(login: str) -> bool:
    return "bot" in (login or "").lower()


def _pr_for(prs: Mapping, c: RawComment) -> PullRequestRecord:
    if (c.repo, c.pr) in prs:
        return prs[(c.repo, c.pr)]
    return prs[c.pr]


def removal_reason(c: RawComment, pr: PullRequestRecord, detector, human: bool,
                   unsupported: frozenset = frozenset()) -> Optional[str]:
    if not pr.merged:
        return "not_merged"
    if not c.created_at < pr.merged_at:
        return "post_merge"
    if human and is_bot_login(c.author_login):
        return "bot_author"
    if c.in_reply_to is not None:
        return "not_first_in_thread"
    if detector(c.body).value != "english":
        return "non_english"
    if c.id in unsupported:
        return "unsupported_content"
    return None


def filter_comments(comments: Iterable[RawComment], prs: Mapping, detector=detect_language, *,
                    human: bool = False, unsupported: Iterable[int] = ()) -> tuple[list[RawComment], FilterReport]:
    """Keep first-in-thread English comments posted before their PR merged.

    ``prs`` may be keyed by ``(repo, number)`` or by number alone. Each
    removed comment is charged to the first rule it fails.
    """
    unsupported = frozenset(unsupported)
    report = FilterReport()
    kept = []
    for c in comments:
        report.input_count += 1
        reason = removal_reason(c, _pr_for(prs, c), detector, human, unsupported)
        if reason is None:
            kept.append(c)
        else:
            report.removed_by[reason] += 1
    report.retained_count = len(kept)
    report.check()
    return kept, report


def activation_window(action_comments: Iterable[RawComment]) -> dict[str, tuple[datetime, datetime]]:
    """Per repository: [first, last] action-comment timestamps."""
    out: dict[str, tuple[datetime, datetime]] = {}
    for c in action_comments:
        lo, hi = out.get(c.repo, (c.created_at, c.created_at))
        out[c.repo] = (min(lo, c.created_at), max(hi, c.created_at))
    return out


def build_dataset(retained: Iterable[RawComment], reconstructions: Mapping[int, list[Reconstruction]] | Iterable[Reconstruction]
                  ) -> list[CommentContext]:
    """Join retained comments with successful reconstructions, stably ordered."""
    if not isinstance(reconstructions, Mapping):
        grouped: dict[int, list[Reconstruction]] = {}
        for r in reconstructions:
            grouped.setdefault(r.comment_id, []).append(r)
        reconstructions = grouped
    out = []
    for c in retained:
        for r in reconstructions.get(c.id, []):
            if r.status == "ok" and r.context is not None:
                out.append(r.context)
    return sorted(out, key=CommentContext.sort_key)


def outcome_counts(reconstructions: Iterable[Reconstruction]) -> dict[str, int]:
    return dict(sorted(Counter(r.status for r in reconstructions).items()))
