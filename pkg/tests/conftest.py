import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

from reviewpulse.reconstruct import (  # noqa: E402
    CommentContext, ContextStats, ReviewedChange, SubsequentChange, parse_hunk, text_diff,
)
from reviewpulse.records import InlineMeta, PullRequestRecord, RawComment  # noqa: E402

FIXTURES = TESTS / "fixtures"
GOLDEN = FIXTURES / "golden"
SHA_A = "a" * 40
SHA_B = "b" * 40
SHA_M = "c" * 40

HUNK = "@@ -1,4 +1,5 @@\n one\n-two\n+TWO\n+two-b\n three\n four"


def ts(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).astimezone(timezone.utc)


def make_pr(number=1, merged=True, created="2024-01-01T00:00:00Z", merged_at="2024-01-10T00:00:00Z"):
    return PullRequestRecord("o/r", number, merged, SHA_A, ts(created), SHA_M if merged else None,
                             ts(merged_at) if merged else None)


def make_comment(cid=1, *, body="Please check the loop bound before indexing.", author="github-actions[bot]",
                 at="2024-01-05T00:00:00Z", reply=None, kind="inline", hunk=HUNK, line=3, start=None,
                 path="src/mod.py", pr=1):
    meta = InlineMeta(path, SHA_B, line, hunk, start) if kind == "inline" else None
    return RawComment(cid, kind, author, ts(at), body, "o/r", pr, reply, meta)


def make_context(key="1", category="Modified", source="hunk_action", body="Fix the off-by-one in the loop.",
                 stats=None, action_id=3):
    c = make_comment(int(key.split(":")[0]) if key.split(":")[0].isdigit() else 1, body=body)
    lines = parse_hunk(HUNK).lines
    reviewed = [ReviewedChange("src/mod.py", SHA_B, (2, 3), lines[1:4])]
    before, after = "a\nb\n", "a\nB\n"
    if category in ("Unchanged", "RenamedOnly"):
        after = before
    diff = () if category in ("Unchanged", "Deleted", "RenamedOnly") else tuple(text_diff(before, after))
    final = "src/new.py" if category.startswith("Renamed") else "src/mod.py"
    sub = SubsequentChange(category, final, diff)
    return CommentContext(key, c, source, None if source == "human" else action_id, reviewed, sub, make_pr(),
                          stats or ContextStats(trigger="auto", llm="GPT-4"))


@pytest.fixture
def context_factory():
    return make_context


# Acceptance criteria report their verdicts here; printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
