import copy
import json
import shutil

import pytest
import scipy.stats

from conftest import GOLDEN
from reviewpulse.pipeline import Run, RunConfig, read_jsonl
from reviewpulse.report import (REPORT_SCHEMA, ReportBundle, build_bundle, emit_report, pct, render_csv,
                                render_markdown, validate_json)

EXPECTED = GOLDEN / "expected"


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("golden") / "run"
    shutil.copytree(EXPECTED, run_dir)
    cfg = RunConfig.load(GOLDEN / "config.txt")
    cfg.out = run_dir
    return build_bundle(Run(cfg))


def test_percent_format():
    assert pct(None) == "—" and pct(0.5) == "50.0%" and pct(2 / 3) == "66.7%" and pct(1) == "100.0%"


def test_json_validates_and_is_stable(bundle):
    text = bundle.to_json()
    assert text == bundle.to_json()
    assert validate_json(text) == json.loads(text)
    assert text == (EXPECTED / "report.json").read_text()


def test_schema_rejects_broken_documents(bundle):
    doc = json.loads(bundle.to_json())
    del doc["notices"]
    with pytest.raises(Exception):
        validate_json(json.dumps(doc))
    doc = json.loads(bundle.to_json())
    doc["subsequent"][0]["total"] = -1
    with pytest.raises(Exception):
        validate_json(json.dumps(doc))
    assert REPORT_SCHEMA["type"] == "object"


def test_cross_foot_check_catches_tampering(bundle):
    data = copy.deepcopy(bundle.data)
    data["subsequent"][0]["total"] += 1
    with pytest.raises(AssertionError):
        ReportBundle(data).check()
    data = copy.deepcopy(bundle.data)
    data["adoption"]["all"]["repos"] += 1
    with pytest.raises(AssertionError):
        ReportBundle(data).check()


def test_rates_match_independent_recount(bundle):
    ctx = {d["key"]: d for d in read_jsonl(EXPECTED / "dataset.jsonl")}
    final = {d["key"]: d["final"] for d in read_jsonl(EXPECTED / "labels.jsonl")}
    rows = [(ctx[k], final[k] in ("Valid-Partially", "Valid-Fully")) for k in final
            if final[k] in ("Valid-Unaddressed", "Valid-Partially", "Valid-Fully") and ctx[k]["source"] != "human"]
    total = next(r for r in bundle.data["rates"] if r["action"].startswith("Total"))
    for dim, field, names in (("trigger", "trigger", {"Auto": "auto", "Manual": "manual"}),
                              ("llm", "llm", {"GPT-4": "GPT-4", "GPT-3.5": "GPT-3.5"})):
        cells = []
        for row in total[dim]["rows"]:
            mine = [a for c, a in rows if c["stats"][field] == names[row["name"]]]
            assert (row["total"], row["addressed"]) == (len(mine), sum(mine))
            cells.append([sum(mine), len(mine) - sum(mine)])
        assert total[dim]["p_value"] == pytest.approx(scipy.stats.fisher_exact(cells)[1], abs=1e-12)


def test_label_rows_sum_to_totals(bundle):
    for row in bundle.data["labels"]:
        assert sum(row["counts"].values()) == row["total"]


def test_markdown_tables(bundle):
    md = render_markdown(bundle)
    assert md == (EXPECTED / "report.md").read_text()
    assert ("| Action | Trigger Type | Total | Addressed (%) | p-value | LLM Series | Total | Addressed (%) | "
            "p-value |") in md
    assert "| Source | Total Comments | Modified | Renamed-Modified | Renamed-Only | Deleted | Unchanged |" in md


def test_csv_files(bundle):
    files = render_csv(bundle)
    assert set(files) == {p.name for p in EXPECTED.glob("report_*.csv")}
    for name, text in files.items():
        assert text == (EXPECTED / name).read_text()
        assert "**" not in text


def test_unwritable_output_directory(bundle, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(bundle, "markdown", blocker / "sub")


def test_unknown_format(bundle, tmp_path):
    with pytest.raises(ValueError):
        emit_report(bundle, "pdf", tmp_path)
