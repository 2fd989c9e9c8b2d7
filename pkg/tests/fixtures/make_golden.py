"""Build the golden replay corpus.

A synthetic GitHub universe is recorded through the normal session in record
mode, so the fixtures carry exactly the requests the pipeline makes.  Running
this script again regenerates ``golden/fixtures`` and ``golden/expected``;
review the diff before committing.

    python3 tests/fixtures/make_golden.py
"""

from __future__ import annotations

import dataclasses
import json
import shutil
import sys
import tempfile
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from fakehub import BOT, FakeHub, FakeRepo  # noqa: E402

from reviewpulse import ingest  # noqa: E402
from reviewpulse.pipeline import RunConfig, run_pipeline  # noqa: E402
from reviewpulse.reconstruct import split_general_comment  # noqa: E402

GOLDEN = HERE / "golden"


def source(stem: str, n: int) -> str:
    return "".join(f"{stem}_{i} = compute({i})\n" for i in range(1, n + 1))


def edit(text: str, changes: dict[int, str]) -> str:
    lines = text.splitlines(True)
    for no, new in changes.items():
        lines[no - 1] = new + "\n"
    return "".join(lines)


def workflow(action: str, ref: str, params: dict, gate: str = "") -> str:
    """``gate`` is "job" or "step" for a label-gated (manual) trigger."""
    cond = "if: contains(github.event.pull_request.labels.*.name, 'ai-review')"
    env = "".join(f"          {k}: {v}\n" for k, v in params.items())
    return (
        "name: AI review\n"
        "on:\n"
        "  pull_request:\n"
        "    types: [opened, synchronize]\n"
        "jobs:\n"
        "  review:\n"
        + (f"    {cond}\n" if gate == "job" else "")
        + "    runs-on: ubuntu-latest\n"
        "    steps:\n"
        "      - uses: actions/checkout@v4\n"
        f"      - uses: {action}@{ref}\n"
        + (f"        {cond}\n" if gate == "step" else "")
        + "        env:\n"
        "          GITHUB_TOKEN: ${{ secrets.GITHUB_TOKEN }}\n"
        "          OPENAI_API_KEY: ${{ secrets.OPENAI_API_KEY }}\n"
        + env
    )


WF = ".github/workflows/review.yml"
NAMES: dict[str, int] = {}


def named(name: str, cid: int) -> int:
    NAMES[name] = cid
    return cid


def repo_webapp(hub: FakeHub) -> None:
    """File-level inline action: strategies A and B, every filter reason, four categories."""
    r = hub.add(FakeRepo("acme/webapp", pr_total=80, issue_total=14,
                         contributors=[("alice", "User"), ("bob", "User"), ("renovate[bot]", "Bot")]))
    files = {"src/app.py": source("app", 20), "src/util.py": source("util", 15), "config.py": source("cfg", 8),
             "docs/guide.md": "# Guide\n\nInstall the package.\n\nRun the tests.\n",
             "src/legacy/old_name.py": source("legacy", 10)}
    r.push("2024-01-01T09:00:00Z", {WF: workflow("anc95/ChatGPT-CodeReview", "v1.0.12",
                                                 {"MODEL": "gpt-3.5-turbo"}), **files}, author="alice")
    r.push("2024-01-05T09:00:00Z", {"src/app.py": edit(files["src/app.py"], {1: "import os"})}, author="alice")
    r.push("2024-01-20T09:00:00Z", {WF: workflow("anc95/ChatGPT-CodeReview", "v1.0.13",
                                                 {"MODEL": "gpt-4", "temperature": "0.2"})}, author="bob")
    app = r.commits[r.head].files["src/app.py"]
    util = files["src/util.py"]

    pr = r.open_pr(1, "2024-02-01T09:00:00Z")
    c1 = r.pr_commit(pr, "2024-02-01T10:00:00Z", {
        "src/app.py": edit(app, {5: "app_5 = compute(5) or 0", 6: "app_6 = compute(6) * 2"}),
        "src/util.py": edit(util, {3: "util_3 = compute(3) + 1"})}, author="alice")
    named("a1", r.inline_comment(pr, sha=c1, path="src/app.py", line=6, at="2024-02-01T11:00:00Z",
                                 body="The doubling on line 6 hides a `None` result; check it first."))
    named("h1", r.inline_comment(pr, sha=c1, path="src/app.py", line=5, author="bob", at="2024-02-01T12:00:00Z",
                                 body="Why fall back to zero here? The caller should see the failure."))
    app1 = r.commits[c1].files["src/app.py"]
    c2 = r.pr_commit(pr, "2024-02-02T10:00:00Z", {"src/app.py": edit(app1, {12: "app_12 = compute(12) - 1"})},
                     author="alice")
    named("a2", r.inline_comment(pr, sha=c2, path="src/util.py", line=3, at="2024-02-02T11:00:00Z",
                                 body="The increment in this helper is not covered by any test. "
                                      "Please add one for the boundary value."))
    named("a3", r.inline_comment(pr, sha=c2, path="src/app.py", line=2, at="2024-02-02T12:00:00Z",
                                 diff_hunk="@@ -1,2 +1,2 @@\n-value = old()\n+value = new()",
                                 body="This hunk does not exist in the file any more and should be ignored."))
    named("a4", r.inline_comment(pr, sha=c2, path="src/app.py", line=6, at="2024-02-02T13:00:00Z",
                                 reply_to=NAMES["a1"], body="Following up on the earlier note about the doubling."))
    named("a5", r.inline_comment(pr, sha=c2, path="src/app.py", line=12, at="2024-02-02T14:00:00Z",
                                 body="这里的减法可能导致负数，请检查边界条件。"))
    named("h2", r.inline_comment(pr, sha=c2, path="src/app.py", line=12, author="dependabot[bot]",
                                 at="2024-02-02T15:00:00Z", body="Bumping the dependency would fix this warning."))
    r.pr_commit(pr, "2024-02-03T10:00:00Z", {
        "src/app.py": edit(r.commits[c2].files["src/app.py"], {6: "app_6 = (compute(6) or 0) * 2"}),
        "src/helpers.py": edit(r.commits[c2].files["src/util.py"], {3: "util_3 = compute(3) + 2"}),
        "src/util.py": None}, author="renovate[bot]", author_type="Bot")
    r.merge(pr, "2024-02-04T09:00:00Z")
    named("a6", r.inline_comment(pr, sha=c2, path="src/app.py", line=12, at="2024-02-05T09:00:00Z",
                                 body="After merging, the subtraction on this line still looks wrong to me."))

    pr2 = r.open_pr(2, "2024-02-06T09:00:00Z")
    d1 = r.pr_commit(pr2, "2024-02-06T10:00:00Z", {"config.py": edit(files["config.py"], {2: "cfg_2 = None"})},
                     author="bob")
    named("a7", r.inline_comment(pr2, sha=d1, path="config.py", line=2, at="2024-02-06T11:00:00Z",
                                 body="Setting this option to None breaks the loader that reads it."))

    pr3 = r.open_pr(3, "2024-02-10T09:00:00Z")
    base = r.commits[r.head].files
    e1 = r.pr_commit(pr3, "2024-02-10T10:00:00Z", {
        "config.py": edit(base["config.py"], {4: "cfg_4 = compute(4, strict=True)"}),
        "docs/guide.md": base["docs/guide.md"].replace("Run the tests.", "Run the tests with pytest."),
        "assets/data.bin": "BIN\x00\x01\x02payload\n",
        "src/legacy/old_name.py": edit(base["src/legacy/old_name.py"], {7: "legacy_7 = compute(7, cache=True)"})},
        author=None)
    named("a8", r.inline_comment(pr3, sha=e1, path="config.py", line=4, at="2024-02-10T11:00:00Z",
                                 body="Strict mode changes the behaviour for existing users; make it opt-in."))
    named("a9", r.inline_comment(pr3, sha=e1, path="docs/guide.md", line=5, at="2024-02-10T11:05:00Z",
                                 body="Mention the minimum pytest version in the guide as well."))
    named("a10", r.inline_comment(pr3, sha=e1, path="assets/data.bin", line=1, at="2024-02-10T11:10:00Z",
                                  body="This binary payload looks like it was committed by mistake."))
    named("h3", r.inline_comment(pr3, sha=e1, path="docs/guide.md", line=5, author="carol",
                                 at="2024-02-10T11:06:00Z", body="Could we link to the pytest docs from here?"))
    named("h4", r.inline_comment(pr3, sha=e1, path="src/legacy/old_name.py", line=7, author="carol",
                                 at="2024-02-10T11:07:00Z",
                                 body="The cache flag deserves a short comment explaining when it is safe."))
    r.pr_commit(pr3, "2024-02-11T10:00:00Z", {"config.py": None}, author="alice",
                renames={"src/legacy/old_name.py": "src/legacy/new_name.py"})
    r.merge(pr3, "2024-02-12T09:00:00Z")


def repo_api(hub: FakeHub) -> None:
    """File-level general action: multi-file comments split into per-path segments."""
    r = hub.add(FakeRepo("acme/api", pr_total=55, issue_total=3,
                         contributors=[("dave", "User"), ("erin", "User")]))
    r.push("2024-03-01T09:00:00Z", {WF: workflow("mattzcarey/code-review-gpt", "main", {"MODEL": "gpt-4"}, "job"),
                                    "a.py": source("a", 12), "b.py": source("b", 12), "c.py": source("c", 12)},
           author="dave")
    pr = r.open_pr(1, "2024-03-05T09:00:00Z")
    r.pr_commit(pr, "2024-03-05T10:00:00Z", {"a.py": edit(source("a", 12), {4: "a_4 = compute(4)[0]"}),
                                                  "b.py": edit(source("b", 12), {9: "b_9 = compute(9)"
                                                                                    " if ready else None"})},
                     author="dave")
    r.general_comment(pr, author="erin", at="2024-03-05T11:00:00Z", body="Thanks, I will take a look tomorrow.")
    named("g1", r.general_comment(pr, at="2024-03-05T12:00:00Z", body=(
        "Overall the change looks reasonable.\n\n"
        "## a.py\nIndexing the first element fails on empty results; guard the access.\n\n"
        "## b.py\nThe conditional on line 9 makes the variable optional, which callers do not expect.\n\n"
        "## missing.py\nThis file should also be updated to match.")))
    r.pr_commit(pr, "2024-03-06T10:00:00Z", {"a.py": edit(r.commits[pr.commits[-1]].files["a.py"],
                                                          {4: "a_4 = (compute(4) or [None])[0]"})}, author="dave")
    r.merge(pr, "2024-03-07T09:00:00Z")

    pr2 = r.open_pr(2, "2024-03-10T09:00:00Z")
    f3 = r.pr_commit(pr2, "2024-03-10T10:00:00Z", {"c.py": edit(source("c", 12), {2: "c_2 = compute(2, retries=3)"})},
                     author="erin")
    named("g2", r.general_comment(pr2, at="2024-03-10T12:00:00Z",
                                  body="## c.py\nThe retry count should come from configuration, not a literal."))
    named("h6", r.inline_comment(pr2, sha=f3, path="c.py", line=2, author="dave", at="2024-03-10T11:30:00Z",
                                 body="Three retries seems low for the flaky upstream; can we make it five?"))
    named("h11", r.inline_comment(pr2, sha=f3, path="c.py", line=2, author="dave", at="2024-03-10T11:45:00Z",
                                  body="Bitte den Wert konfigurierbar machen, danke."))
    r.pr_commit(pr2, "2024-03-11T10:00:00Z", {"c.py": edit(r.commits[f3].files["c.py"],
                                                           {2: "c_2 = compute(2, retries=settings.RETRIES)"})},
                author="erin")
    r.merge(pr2, "2024-03-12T09:00:00Z")


def repo_tool(hub: FakeHub) -> None:
    """Hunk-level action with multi-line and single-line comments."""
    r = hub.add(FakeRepo("beta/tool", pr_total=120, issue_total=40,
                         contributors=[("frank", "User"), ("harry", "User"), ("ci-bot", "Bot")]))
    r.push("2024-04-01T09:00:00Z", {WF: workflow("coderabbitai/ai-pr-reviewer", "latest",
                                                 {"openai_heavy_model": "gpt-4", "review_simple_changes": "false"}),
                                    "tool/main.py": source("main", 16), "tool/lib.py": source("lib", 10)},
           author="frank")
    pr = r.open_pr(7, "2024-04-03T09:00:00Z")
    k1 = r.pr_commit(pr, "2024-04-03T10:00:00Z", {
        "tool/main.py": edit(source("main", 16), {4: "main_4 = load()", 5: "main_5 = parse(main_4)",
                                                  6: "main_6 = check(main_5)", 8: "main_8 = emit(main_6)"}),
        "tool/lib.py": edit(source("lib", 10), {6: "lib_6 = compute(6) ** 2"})}, author="frank")
    named("x1", r.inline_comment(pr, sha=k1, path="tool/main.py", start_line=4, line=6, at="2024-04-03T11:00:00Z",
                                 body="These three steps ignore errors from `parse`:\n```python\n"
                                      "main_5 = parse(main_4)\n```\nWrap them so a bad file is reported."))
    named("x2", r.inline_comment(pr, sha=k1, path="tool/main.py", line=8, at="2024-04-03T11:01:00Z",
                                 body="`emit` writes to stdout; consider returning the value instead."))
    named("x3", r.inline_comment(pr, sha=k1, path="tool/lib.py", line=6, at="2024-04-03T11:02:00Z",
                                 body="Squaring here can overflow for large inputs in the fixed-width path."))
    named("h7", r.inline_comment(pr, sha=k1, path="tool/main.py", line=6, author="harry", at="2024-04-03T11:00:20Z",
                                 body="Does `check` raise or return a flag? The docs are unclear."))
    named("h10", r.inline_comment(pr, sha=k1, path="tool/lib.py", line=6, author="harry", at="2024-04-03T11:00:40Z",
                                  body="I would keep the square but document the expected range."))
    r.pr_commit(pr, "2024-04-04T10:00:00Z", {"tool/main.py": edit(r.commits[k1].files["tool/main.py"],
                                                                  {5: "main_5 = safe_parse(main_4)"})},
                author="frank")
    r.merge(pr, "2024-04-05T09:00:00Z")
    pr2 = r.open_pr(8, "2024-04-08T09:00:00Z")
    k3 = r.pr_commit(pr2, "2024-04-08T10:00:00Z", {"tool/lib.py": edit(r.commits[r.head].files["tool/lib.py"],
                                                                       {2: "lib_2 = compute(2) / total"})},
                     author="harry")
    r.pr_commit(pr2, "2024-04-08T15:00:00Z", {"tool/lib.py": edit(r.commits[k3].files["tool/lib.py"],
                                                                  {2: "lib_2 = compute(2) / max(total, 1)"})},
                author="harry")
    r.merge(pr2, "2024-04-09T09:00:00Z")


def repo_lib(hub: FakeHub) -> None:
    """Hunk-level action, step-gated and configured for GPT-3.5."""
    r = hub.add(FakeRepo("beta/lib", pr_total=50, issue_total=0, contributors=[("gina", "User")]))
    r.push("2024-05-01T09:00:00Z", {WF: workflow("aidar-freeed/ai-codereviewer", "main",
                                                 {"OPENAI_API_MODEL": "gpt-3.5-turbo", "exclude": "'*.md'"}, "step"),
                                    "lib/core.py": source("core", 30), "lib/io.py": source("io", 10),
                                    "README.md": "# lib\n"}, author="gina")
    pr = r.open_pr(4, "2024-05-02T09:00:00Z")
    m1 = r.pr_commit(pr, "2024-05-02T10:00:00Z", {
        "lib/core.py": edit(source("core", 30), {3: "core_3 = compute(3, fast=True)", 25: "core_25 = None"}),
        "lib/io.py": edit(source("io", 10), {5: "io_5 = open(path).read()"})}, author="gina")
    named("y1", r.inline_comment(pr, sha=m1, path="lib/core.py", line=3, at="2024-05-02T11:00:00Z",
                                 body="The fast path skips validation; is that intended for all callers?"))
    named("y2", r.inline_comment(pr, sha=m1, path="lib/io.py", line=5, at="2024-05-02T11:01:00Z",
                                 body="This leaks the file handle. Use a `with` block."))
    named("y3", r.inline_comment(pr, sha=m1, path="lib/core.py", line=25, at="2024-05-02T11:02:00Z",
                                 body="Assigning None here will break the sum computed below."))
    named("y4", r.inline_comment(pr, sha=m1, path="lib/io.py", line=5, start_line=5, at="2024-05-02T12:30:00Z",
                                 body="Reading the entire file at once may be slow for large inputs."))
    named("h8", r.inline_comment(pr, sha=m1, path="lib/io.py", line=5, author="gina", at="2024-05-02T12:00:00Z",
                                 body="Note to self: switch to a context manager before merging."))
    named("h9", r.inline_comment(pr, sha=m1, path="lib/io.py", line=5, author="gina", at="2024-05-02T12:05:00Z",
                                 reply_to=NAMES["h8"], body="Done in the next commit."))
    r.pr_commit(pr, "2024-05-03T10:00:00Z", {
        "lib/core.py": edit(r.commits[m1].files["lib/core.py"], {25: "core_25 = 0"}),
        "lib/io.py": edit(r.commits[m1].files["lib/io.py"],
                          {5: "with open(path) as fh: io_5 = fh.read()"})}, author="gina")
    r.merge(pr, "2024-05-04T09:00:00Z")


def repo_misc(hub: FakeHub) -> None:
    """An ambiguous repository, an immature one, and a PR-level action."""
    r = hub.add(FakeRepo("gamma/mixed", pr_total=300))
    r.push("2024-01-01T09:00:00Z", {
        WF: workflow("anc95/ChatGPT-CodeReview", "v1", {"MODEL": "gpt-4"}),
        ".github/workflows/rabbit.yaml": workflow("coderabbitai/ai-pr-reviewer", "latest", {}),
        "main.py": source("m", 3)})
    r = hub.add(FakeRepo("gamma/small", pr_total=12))
    r.push("2024-01-01T09:00:00Z", {WF: workflow("coderabbitai/ai-pr-reviewer", "latest", {}), "x.py": source("x", 3)})
    r = hub.add(FakeRepo("delta/prbot", pr_total=64, contributors=[("ivan", "User")]))
    r.push("2024-06-01T09:00:00Z", {WF: workflow("kxxt/chatgpt-action", "v0.3", {"MODEL": "gpt-4"}),
                                    "app.js": "console.log(1);\n"}, author="ivan")
    pr = r.open_pr(2, "2024-06-02T09:00:00Z")
    r.pr_commit(pr, "2024-06-02T10:00:00Z", {"app.js": "console.log(2);\n"}, author="ivan")
    named("z1", r.general_comment(pr, at="2024-06-02T11:00:00Z",
                                  body="The change replaces a log statement; no issues found."))
    r.merge(pr, "2024-06-03T09:00:00Z")


def build_hub() -> FakeHub:
    NAMES.clear()
    hub = FakeHub()
    for fn in (repo_webapp, repo_api, repo_tool, repo_lib, repo_misc):
        fn(hub)
    return hub


# Labels per comment: stage-1 votes, stage-2 votes, golden label.  Keys of
# general comments name the segment index after splitting.
LABELS = {
    "a1": (["Valid"] * 5, ["Valid-Fully", "Valid-Fully", "Valid-Partially", "Valid-Fully", "Valid-Fully"],
           "Valid-Fully"),
    "a2": (["Valid", "Valid", "General", "Valid", "None"], ["Valid-Partially"] * 3 + ["Valid-Uncertain"] * 2,
           "Valid-Fully"),
    "a8": (["Valid"] * 5, ["Valid-Unaddressed"] * 3 + ["Valid-Fully"] * 2, "Valid-Unaddressed"),
    "a9": (["Valid"] * 5, [], "Valid-Unaddressed"),
    "h1": (["Valid"] * 5, ["Valid-Partially"] * 5, "Valid-Partially"),
    "h3": (["General"] * 3 + ["Valid"] * 2, [], "General"),
    "h4": (["Valid"] * 5, ["Valid-Unaddressed"] * 5, "Valid-Unaddressed"),
    "g1:1": (["Valid"] * 5, ["Valid-Fully"] * 4 + ["Valid-Partially"], "Valid-Fully"),
    "g1:2": (["Valid"] * 5, [], "Valid-Unaddressed"),
    "g2:0": (["Valid"] * 5, ["Valid-Fully"] * 5, "Valid-Partially"),
    "h6": (["Valid"] * 5, ["Valid-Partially", "Valid-Fully", "Valid-Partially", "Valid-Fully", "Valid-Uncertain"],
           "Valid-Partially"),
    "x1": (["Valid"] * 5, ["Valid-Partially"] * 5, "Valid-Partially"),
    "x2": (["None"] * 4 + ["Valid"], [], "None"),
    "x3": (["Valid"] * 5, [], "Valid-Unaddressed"),
    "h7": (["General"] * 5, [], "General"),
    "h10": (["Valid"] * 5, [], "Valid-Unaddressed"),
    "y1": (["Valid"] * 5, ["Valid-Unaddressed"] * 5, "Valid-Unaddressed"),
    "y2": (["Valid"] * 5, ["Valid-Fully"] * 5, "Valid-Fully"),
    "y3": (["Valid"] * 5, ["Valid-Fully"] * 3 + ["Valid-Unaddressed"] * 2, "Valid-Fully"),
    "y4": (["Valid"] * 5, ["Valid-Uncertain"] * 5, "Valid-Unaddressed"),
    "h8": (["Valid"] * 5, ["Valid-Fully"] * 5, "Valid-Fully"),
}


def key_of(name: str) -> str:
    base, _, seg = name.partition(":")
    return f"{NAMES[base]}:{seg}" if seg else str(NAMES[base])


CONFIG = """\
# Golden corpus run configuration.
repos = acme/webapp, acme/api, beta/tool, beta/lib, gamma/mixed, gamma/small, delta/prbot
maturity_threshold = 50
fixtures = fixtures
mode = replay
out = run
stage1_backend = mock:mock.json
stage2_backend = mock:mock.json
runs = 5
golden = gold.jsonl
seed = 42
lda_topics = 6
lda_iterations = 1000
n_trees = 100
min_leaf = 1
train_fraction = 0.8
correlation_threshold = 0.7
parallelism = 1
"""


def write_inputs(target: Path) -> None:
    target.mkdir(parents=True, exist_ok=True)
    (target / "config.txt").write_text(CONFIG, encoding="utf-8")
    script = {key_of(n): {"stage1": s1, "stage2": s2 or ["Valid-Uncertain"]} for n, (s1, s2, _) in LABELS.items()}
    script["*"] = {"stage1": ["None"], "stage2": ["Valid-Uncertain"]}
    (target / "mock.json").write_text(json.dumps(script, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    gold = [{"key": key_of(n), "label": g} for n, (_, _, g) in sorted(LABELS.items(), key=lambda kv: key_of(kv[0]))]
    (target / "gold.jsonl").write_text("".join(json.dumps(g, sort_keys=True) + "\n" for g in gold), encoding="utf-8")
    (target / "names.json").write_text(json.dumps(NAMES, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def record(target: Path = GOLDEN) -> None:
    hub = build_hub()
    assert split_general_comment(next(c["body"] for c in hub.repos["acme/api"].pulls[1].general
                                      if c["user"]["login"] == BOT))[1][0] == "a.py"
    write_inputs(target)
    fixtures = target / "fixtures"
    if fixtures.exists():
        shutil.rmtree(fixtures)
    cfg = RunConfig.load(target / "config.txt")
    with tempfile.TemporaryDirectory() as tmp:
        rec = dataclasses.replace(cfg, mode="record", out=Path(tmp) / "run")
        session = ingest.Session(ingest.FixtureStore(fixtures, "record"), "fixture-author", transport=hub,
                                 parallelism=1)
        run_pipeline(rec, session)
    expected = target / "expected"
    if expected.exists():
        shutil.rmtree(expected)
    run_pipeline(dataclasses.replace(cfg, out=expected))


if __name__ == "__main__":
    record()
    print(f"golden corpus written to {GOLDEN}")
