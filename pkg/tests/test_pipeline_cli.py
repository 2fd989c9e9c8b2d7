import json
import shutil

import pytest

from conftest import GOLDEN
from reviewpulse import cli
from reviewpulse.pipeline import STAGES, read_jsonl

EXPECTED = GOLDEN / "expected"
DATASET = read_jsonl(EXPECTED / "dataset.jsonl")


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def config_with(tmp_path, mock=None, **overrides):
    """Golden configuration with absolute paths, optionally a different mock script."""
    lines = (GOLDEN / "config.txt").read_text().splitlines()
    values = {"fixtures": GOLDEN / "fixtures", "golden": GOLDEN / "gold.jsonl", "out": tmp_path / "run"}
    if mock is not None:
        (tmp_path / "mock.json").write_text(json.dumps(mock))
        values["stage1_backend"] = values["stage2_backend"] = f"mock:{tmp_path / 'mock.json'}"
    else:
        values["stage1_backend"] = values["stage2_backend"] = f"mock:{GOLDEN / 'mock.json'}"
    values.update(overrides)
    out = []
    for line in lines:
        key = line.split("=", 1)[0].strip()
        out.append(f"{key} = {values.pop(key)}" if key in values else line)
    out += [f"{k} = {v}" for k, v in values.items()]
    path = tmp_path / "config.txt"
    path.write_text("\n".join(out) + "\n")
    return path


def test_pipeline_command_reproduces_golden_bundle(tmp_path, monkeypatch):
    monkeypatch.delenv("REVIEWPULSE_TOKEN", raising=False)
    out = tmp_path / "out"
    assert cli.main(["--config", str(GOLDEN / "config.txt"), "--out", str(out), "pipeline"]) == 0
    assert tree(out) == tree(EXPECTED)


def test_stage_by_stage_matches_pipeline(tmp_path):
    cfg = config_with(tmp_path)
    for stage in STAGES:
        assert cli.main(["--config", str(cfg), stage]) == 0, stage
    got = tree(tmp_path / "run")
    got.pop("adoption.json")  # written only by the discover subcommand
    assert got == tree(EXPECTED)


def test_report_formats_are_selectable(tmp_path):
    run = tmp_path / "run"
    shutil.copytree(EXPECTED, run)
    for f in ("report.md", "report.json"):
        (run / f).unlink()
    assert cli.main(["--config", str(config_with(tmp_path)), "report", "--format", "json"]) == 0
    assert (run / "report.json").read_bytes() == (EXPECTED / "report.json").read_bytes()
    assert not (run / "report.md").exists()


def test_discover_prints_adoption(tmp_path, capsys):
    assert cli.main(["--config", str(config_with(tmp_path)), "discover"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary == json.loads((tmp_path / "run" / "adoption.json").read_text())
    assert summary["ambiguous"] == 1 and summary["threshold"] == 50


def test_discover_from_census_file(tmp_path, capsys):
    actions = [l.split("=", 1)[1].split("|")[0].strip()
               for l in (GOLDEN.parents[2] / "src/reviewpulse/config/actions/watchlist.txt").read_text().splitlines()
               if l and not l.startswith("#")]
    census = []
    for i in range(460):
        census.append({"repo": f"org{i}/r", "action": actions[i % 16], "ambiguous": False,
                       "pr_count": 50 + i if i < 114 else i % 50})
    census += [{"repo": f"amb{i}/r", "action": None, "ambiguous": True, "pr_count": 500} for i in range(3)]
    path = tmp_path / "census.jsonl"
    path.write_text("".join(json.dumps(c) + "\n" for c in census))
    assert cli.main(["--config", str(config_with(tmp_path, census=path)), "discover"]) == 0
    s = json.loads(capsys.readouterr().out)
    assert sum(r["total"] for r in s["rows"]) == 460
    assert sum(r["mature"] for r in s["rows"]) == 114
    assert s["ambiguous"] == 3


def test_zero_valid_corpus_reports_notice(tmp_path):
    cfg = config_with(tmp_path, mock={"*": {"stage1": ["General"], "stage2": ["Valid-Uncertain"]}})
    assert cli.main(["--config", str(cfg), "pipeline"]) == 0
    run = tmp_path / "run"
    report = json.loads((run / "report.json").read_text())
    assert report["model"] is None
    assert any("features skipped" in n for n in report["notices"])
    assert "_model stage skipped_" in (run / "report.md").read_text()
    assert not (run / "features.csv").exists()


def test_human_only_valid_corpus(tmp_path):
    humans = [d for d in DATASET if d["source"] == "human"]
    script = {"*": {"stage1": ["None"], "stage2": ["Valid-Uncertain"]}}
    for i, d in enumerate(humans):
        script[d["key"]] = {"stage1": ["Valid"], "stage2": ["Valid-Fully" if i % 2 else "Valid-Unaddressed"]}
    assert cli.main(["--config", str(config_with(tmp_path, mock=script)), "pipeline"]) == 0
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    human_row = next(r for r in report["labels"] if r["source"] == "Human")
    assert human_row["counts"]["None"] == 0
    for feat, table in report["binned"].items():
        assert sum(r["cells"]["Actions"]["count"] for r in table["rows"]) == 0, feat


def test_missing_fixture_fails_with_stage_name(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["--config", str(config_with(tmp_path)), "--fixtures", str(empty), "discover"]) == 1
    assert "discover" in capsys.readouterr().err


def test_record_mode_needs_token(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("REVIEWPULSE_TOKEN", raising=False)
    assert cli.main(["--config", str(config_with(tmp_path)), "--record", "discover"]) == 1
    assert "REVIEWPULSE_TOKEN" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("no_such_key = 1\n")
    assert cli.main(["--config", str(bad), "discover"]) == 2
    assert cli.main(["--config", str(tmp_path / "absent.txt"), "discover"]) == 2


def test_usage_errors():
    with pytest.raises(SystemExit):
        cli.main([])
    with pytest.raises(SystemExit):
        cli.main(["report", "--format", "pdf"])
