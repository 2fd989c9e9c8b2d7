"""Report bundle assembly and rendering as Markdown, CSV and JSON."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import jsonschema

from .features import read_matrix_csv
from .metrics import SIX_CLASS
from .pipeline import (SOURCE_TITLES, Run, binary_rows, load_dataset, load_labels, read_json,
                       read_jsonl, adoption_summary)
from .reconstruct import CATEGORIES
from .stats import ContingencyTable2x2, bin_label, fisher_exact, quantile_bins, rate_table

GRANULARITY_TITLES = {"pr": "PR-level review actions", "file": "File-level review actions",
                      "hunk": "Hunk-level review actions"}
CATEGORY_TITLES = {"Modified": "Modified", "RenamedModified": "Renamed-Modified", "RenamedOnly": "Renamed-Only",
                   "Deleted": "Deleted", "Unchanged": "Unchanged"}
BINNED = ("Code_Text_Ratio", "Author_Prior_Commits")
ALPHA = 0.05

_count = {"type": "integer", "minimum": 0}
_num = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["adoption", "subsequent", "evaluation", "labels", "rates", "binned", "model", "notices",
                 "provenance"],
    "properties": {
        "adoption": {"type": "object", "required": ["threshold", "rows"], "properties": {
            "rows": {"type": "array", "items": {"type": "object", "required": [
                "id", "action", "granularity", "total", "mature", "repos", "prs", "comments"],
                "properties": {k: _count for k in ("total", "mature", "repos", "prs", "comments")}}}}},
        "subsequent": {"type": "array", "items": {"type": "object", "required": ["label", "total", "counts"],
                       "properties": {"total": _count, "counts": {"type": "object",
                                      "additionalProperties": _count}}}},
        "evaluation": {"type": "object"},
        "labels": {"type": "array", "items": {"type": "object", "required": ["source", "total", "counts"]}},
        "rates": {"type": "array", "items": {"type": "object", "required": ["action", "trigger", "llm"]}},
        "binned": {"type": "object"},
        "model": {"type": ["object", "null"]},
        "notices": {"type": "array", "items": {"type": "string"}},
        "provenance": {"type": "object"},
    },
}


def pct(x: Optional[float]) -> str:
    return "—" if x is None else f"{100.0 * x:.1f}%"


def num(n: int) -> str:
    return f"{n:,}"


def _ratio(a: int, n: int) -> Optional[float]:
    return a / n if n else None


@dataclass
class ReportBundle:
    data: dict

    def check(self) -> None:
        """Every total equals the sum of its parts."""
        ad = self.data["adoption"]
        for g in ad["groups"]:
            rows = [r for r in ad["rows"] if r["granularity"] == g["granularity"]]
            for k in ("total", "mature", "repos", "prs", "comments"):
                if g[k] != sum(r[k] for r in rows):
                    raise AssertionError(f"adoption {g['granularity']} {k} does not cross-foot")
        for k in ("total", "mature", "repos", "prs", "comments"):
            if ad["all"][k] != sum(g[k] for g in ad["groups"]):
                raise AssertionError(f"adoption overall {k} does not cross-foot")
        for row in self.data["subsequent"]:
            if row["total"] != sum(row["counts"].values()):
                raise AssertionError(f"subsequent row {row['label']} does not cross-foot")
        by = {r["label"]: r for r in self.data["subsequent"]}
        for g, members in self.data["subsequent_groups"].items():
            if members and by[g]["total"] != sum(by[m]["total"] for m in members):
                raise AssertionError(f"subsequent group {g} does not cross-foot")
        for row in self.data["labels"]:
            if row["total"] != sum(row["counts"].values()):
                raise AssertionError(f"label row {row['source']} does not cross-foot")
        for table in self.data["binned"].values():
            for g, n in table["group_totals"].items():
                if n != sum(r["cells"][g]["count"] for r in table["rows"]):
                    raise AssertionError("binned table does not cross-foot")

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------- building

def _optional_jsonl(path: Path) -> list[dict]:
    return read_jsonl(path) if path.exists() else []


def _adoption(run: Run) -> dict:
    census = _optional_jsonl(run.path("census.jsonl"))
    comments = _optional_jsonl(run.path("comments.jsonl"))
    summary = adoption_summary(census, run.watch, run.config.maturity_threshold, comments)
    keys = ("total", "mature", "repos", "prs", "comments")
    groups = []
    for g in GRANULARITY_TITLES:
        rows = [r for r in summary["rows"] if r["granularity"] == g]
        groups.append({"granularity": g, **{k: sum(r[k] for r in rows) for k in keys}})
    summary["groups"] = groups
    summary["all"] = {k: sum(g[k] for g in groups) for k in keys}
    return summary


def _source_label(ctx) -> str:
    return "Human" if ctx.source == "human" else f"ID-{ctx.action_id}"


def _subsequent(run: Run, contexts) -> tuple[list[dict], dict]:
    rows: dict[str, dict] = {}

    def bump(label, cat):
        if label not in rows:
            rows[label] = {"label": label, "total": 0, "counts": {c: 0 for c in CATEGORIES}}
        rows[label]["total"] += 1
        rows[label]["counts"][cat] += 1

    groups = {"File-level Review Actions Total": [], "Hunk-level Review Actions Total": [],
              "Human Review Total": []}
    gran = {"file_action": "File-level Review Actions Total", "hunk_action": "Hunk-level Review Actions Total",
            "human": "Human Review Total"}
    for spec in run.watch:
        if spec.granularity == "file":
            groups["File-level Review Actions Total"].append(f"ID-{spec.id}")
        elif spec.granularity == "hunk":
            groups["Hunk-level Review Actions Total"].append(f"ID-{spec.id}")
    for c in contexts:
        if c.source != "human":
            bump(_source_label(c), c.subsequent.category)
    out = []
    for g, members in groups.items():
        present = [m for m in members if m in rows]
        groups[g] = present
        out.extend(rows[m] for m in present)
        total = {"label": g, "total": 0, "counts": {cat: 0 for cat in CATEGORIES}}
        srcs = [c for c in contexts if gran[c.source] == g]
        for c in srcs:
            total["total"] += 1
            total["counts"][c.subsequent.category] += 1
        if g == "Human Review Total":
            groups[g] = []
        out.append(total)
    return out, groups


def _labels(contexts, labels) -> list[dict]:
    rows: dict[str, dict] = {}
    for c in contexts:
        if c.key not in labels:
            continue
        label = _source_label(c)
        row = rows.setdefault(label, {"source": label, "total": 0, "counts": {l: 0 for l in SIX_CLASS}})
        row["total"] += 1
        row["counts"][labels[c.key].final] += 1
    order = sorted((k for k in rows if k != "Human"), key=lambda s: int(s[3:])) + (["Human"] if "Human" in rows
                                                                                   else [])
    return [rows[k] for k in order]


def _compare(cells: dict[str, tuple[int, int]], a: str, b: str) -> dict:
    """Two conditions with (total, addressed) counts, and Fisher's p when both are populated."""
    out = {"rows": []}
    for name in (a, b):
        n, k = cells.get(name, (0, 0))
        out["rows"].append({"name": name, "total": n, "addressed": k, "fraction": _ratio(k, n)})
    (n1, k1), (n2, k2) = cells.get(a, (0, 0)), cells.get(b, (0, 0))
    out["p_value"] = fisher_exact(ContingencyTable2x2(k1, n1 - k1, k2, n2 - k2)) if n1 and n2 else None
    return out


def _rates(rows) -> list[dict]:
    acts = [(c, a) for c, a in rows if c.source != "human"]
    ids = sorted({c.action_id for c, _ in acts})
    out = []
    for label, members in [(f"Total {len(ids)}", acts)] + [(f"ID-{i}", [(c, a) for c, a in acts if c.action_id == i])
                                                           for i in ids]:
        trig: dict[str, tuple[int, int]] = {}
        llm: dict[str, tuple[int, int]] = {}
        for c, a in members:
            for table, key in ((trig, {"auto": "Auto", "manual": "Manual"}.get(c.stats.trigger)), (llm, c.stats.llm)):
                if key:
                    n, k = table.get(key, (0, 0))
                    table[key] = (n + 1, k + int(a))
        out.append({"action": label, "trigger": _compare(trig, "Auto", "Manual"),
                    "llm": _compare(llm, "GPT-4", "GPT-3.5")})
    return out


def _binned(run: Run) -> dict:
    path = run.path("features.csv")
    if not path.exists():
        return {}
    keys, header, M = read_matrix_csv(path.read_text(encoding="utf-8"))
    col = {n: i for i, n in enumerate(header)}
    target = M[:, col["target"]]
    group = ["Human" if v else "Actions" for v in M[:, col["Is_Human"]]]
    out = {}
    for feat in BINNED:
        values = M[:, col[feat]]
        edges = quantile_bins(values.tolist(), 5)
        table = rate_table(zip(group, values.tolist(), (target > 0).tolist()), edges, ["Human", "Actions"])
        out[feat] = {
            "edges": edges,
            "group_totals": {g: table.group_total(g) for g in table.groups},
            "rows": [{"bin": bin_label(edges, b),
                      "cells": {g: {"count": table.counts.get((b, g), 0), "addressed": table.addressed.get((b, g), 0),
                                    "fraction": table.fraction(b, g), "text": table.cell(b, g)}
                                for g in table.groups}} for b in range(table.nbins)],
        }
    return out


def _evaluation(run: Run) -> dict:
    path = run.path("evaluation.json")
    ev = read_json(path) if path.exists() else {"notice": "evaluation not run", "sources": {}}
    sources = ev.get("sources", {})
    if sources:
        avg = {}
        for scheme in ("full6", "stage1", "stage2"):
            vals = [s[scheme] for s in sources.values() if s[scheme]["oa"] is not None]
            avg[scheme] = {"n": sum(v["n"] for v in vals),
                           "oa": sum(v["oa"] for v in vals) / len(vals) if vals else None,
                           "kappa": sum(v["kappa"] for v in vals) / len(vals) if vals else None}
        ev["average"] = avg
    return ev


def build_bundle(run: Run) -> ReportBundle:
    contexts = load_dataset(run) if run.path("dataset.jsonl").exists() else []
    labels = load_labels(run) if run.path("labels.jsonl").exists() else {}
    rows = binary_rows(contexts, labels)
    subsequent, sub_groups = _subsequent(run, contexts)
    model = read_json(run.path("model.json")) if run.path("model.json").exists() else None
    pruning = read_json(run.path("autospearman.json")) if run.path("autospearman.json").exists() else None
    notices_path = run.path("notices.txt")
    notices = [l for l in notices_path.read_text(encoding="utf-8").splitlines() if l] if notices_path.exists() else []
    filt = read_json(run.path("filter_report.json")) if run.path("filter_report.json").exists() else {}
    data = {
        "adoption": _adoption(run),
        "filter": filt,
        "subsequent": subsequent,
        "subsequent_groups": sub_groups,
        "evaluation": _evaluation(run),
        "labels": _labels(contexts, labels),
        "rates": _rates(rows),
        "binned": _binned(run),
        "autospearman": pruning,
        "model": model,
        "notices": notices,
        "provenance": run.config.provenance(),
    }
    bundle = ReportBundle(data)
    bundle.check()
    return bundle


# ---------------------------------------------------------------- rendering

def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def _tables(bundle: ReportBundle) -> list[tuple[str, str, list[str], list[list[str]]]]:
    """(slug, title, header, rows) for every table, all cells already formatted."""
    d = bundle.data
    out = []

    ad = d["adoption"]
    rows = []
    for g in ad["groups"]:
        rows.append([f"**{GRANULARITY_TITLES[g['granularity']]}**", "", "", ""])
        for r in (r for r in ad["rows"] if r["granularity"] == g["granularity"]):
            star = "*" if r["general"] else ""
            rows.append([str(r["id"]), num(r["total"]), num(r["mature"]),
                         f"Repos={num(r['repos'])}, PRs={num(r['prs'])}, Comments{star}={num(r['comments'])}"])
        rows.append(["Total", num(g["total"]), num(g["mature"]),
                     f"Repos={num(g['repos'])}, PRs={num(g['prs'])}, Comments={num(g['comments'])}"])
    a = ad["all"]
    rows.append([f"All {len(ad['rows'])}", num(a["total"]), num(a["mature"]),
                 f"Repos={num(a['repos'])}, PRs={num(a['prs'])}, Comments={num(a['comments'])}"])
    out.append(("adoption", f"Adoption statistics (mature = at least {ad['threshold']} PRs)",
                ["ID", "Total Repos", "Mature Repos", "Observed Review Activity"], rows))

    rows = []
    for r in d["subsequent"]:
        n = r["total"]
        rows.append([r["label"], num(n)] + [f"{num(r['counts'][c])} ({pct(_ratio(r['counts'][c], n)) if n else '—'})"
                                            for c in CATEGORIES])
    out.append(("subsequent", "Post-review file change distribution by comment source",
                ["Source", "Total Comments"] + [CATEGORY_TITLES[c] for c in CATEGORIES], rows))

    ev = d["evaluation"]
    rows = []
    for src, title in SOURCE_TITLES.items():
        if src in ev.get("sources", {}):
            s = ev["sources"][src]
            rows.append([title] + [x for sch in ("full6", "stage1", "stage2")
                                   for x in (pct(s[sch]["oa"]), pct(s[sch]["kappa"]))])
    if "average" in ev:
        rows.append(["Avg."] + [x for sch in ("full6", "stage1", "stage2")
                                for x in (pct(ev["average"][sch]["oa"]), pct(ev["average"][sch]["kappa"]))])
    out.append(("evaluation", "Classifier performance against golden labels",
                ["Source", "Full 6-class OA", "Full 6-class κ", "Stage-1 OA", "Stage-1 κ", "Stage-2 OA", "Stage-2 κ"],
                rows))

    rows = []
    for r in d["labels"]:
        n, c = r["total"], r["counts"]
        rows.append([r["source"], num(n)] + [pct(_ratio(c[l], n)) for l in SIX_CLASS] + [
            pct(_ratio(c["None"] + c["General"], n)),
            pct(_ratio(c["Valid-Uncertain"] + c["Valid-Unaddressed"], n)),
            pct(_ratio(c["Valid-Partially"] + c["Valid-Fully"], n))])
    out.append(("labels", "Assigned addressing labels by source",
                ["Source", "Total", *SIX_CLASS, "Invalid", "Valid, Not Addressed", "Valid, Addressed"], rows))

    def p_text(p):
        return "—" if p is None else f"{p:.4f}" + (" (p≤0.05)" if p <= ALPHA else " (p>0.05)")

    rows = []
    for r in d["rates"]:
        t, l = r["trigger"], r["llm"]
        for i in range(2):
            tr, lr = t["rows"][i], l["rows"][i]
            rows.append([r["action"] if i == 0 else "",
                         tr["name"], num(tr["total"]) if tr["total"] else "—", pct(tr["fraction"]),
                         p_text(t["p_value"]) if i == 0 else "",
                         lr["name"], num(lr["total"]) if lr["total"] else "—", pct(lr["fraction"]),
                         p_text(l["p_value"]) if i == 0 else ""])
    out.append(("rates", "Addressing rates by trigger mode and LLM series (Fisher's exact test)",
                ["Action", "Trigger Type", "Total", "Addressed (%)", "p-value",
                 "LLM Series", "Total", "Addressed (%)", "p-value"], rows))

    for feat, table in d["binned"].items():
        rows = [[r["bin"], r["cells"]["Human"]["text"], r["cells"]["Actions"]["text"]] for r in table["rows"]]
        out.append((f"binned_{feat.lower()}", f"Addressing rates by binned {feat}",
                    [f"Bins of {feat}", "Human", "Actions"], rows))

    m = d["model"]
    if m is not None:
        rows = []
        for g in m["report"]["groups"]:
            rows.append([f"**{g['name']} ({len(g['features'])})**",
                         f"Σ|φ|={g['sum_abs_phi']:.4f}", f"μ|φ|={g['mean_abs_phi']:.4f}"])
            stats = {f["name"]: f for f in m["report"]["features"]}
            for name in g["features"]:
                f = stats[name]
                rows.append([name, f"{f['importance']:.4f}",
                             f"{f['directionality']:.2f}" + (" (constant)" if f["constant"] else "")])
        out.append(("features", f"Feature importance (accuracy {pct(m['accuracy'])}, macro-F1 {m['macro_f1']:.3f}, "
                                f"{m['n_train']} train / {m['n_test']} test)",
                    ["Feature", "Importance (|φ|)", "Directionality (ρ)"], rows))
    return out


def render_markdown(bundle: ReportBundle) -> str:
    parts = ["# Review comment addressing report", ""]
    for _, title, header, rows in _tables(bundle):
        parts += [f"## {title}", "", _md_table(header, rows) if rows else "_no data_", ""]
    if bundle.data["model"] is None:
        parts += ["## Feature importance", "", "_model stage skipped_", ""]
    if bundle.data["notices"]:
        parts += ["## Notices", ""] + [f"- {n}" for n in bundle.data["notices"]] + [""]
    prov = bundle.data["provenance"]
    parts += ["## Provenance", "", _md_table(["Setting", "Value"], [[k, str(prov[k])] for k in sorted(prov)]), ""]
    return "\n".join(parts)


def render_csv(bundle: ReportBundle) -> dict[str, str]:
    files = {}
    for slug, _, header, rows in _tables(bundle):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([[cell.replace("**", "") for cell in r] for r in rows])
        files[f"report_{slug}.csv"] = buf.getvalue()
    return files


def validate_json(text: str) -> dict:
    doc = json.loads(text)
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc


def emit_report(bundle: ReportBundle, fmt: str, out_dir: Path | str) -> list[Path]:
    """Write the bundle in one format; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if fmt == "markdown":
        files = {"report.md": render_markdown(bundle)}
    elif fmt == "csv":
        files = render_csv(bundle)
    elif fmt == "json":
        text = bundle.to_json()
        validate_json(text)
        files = {"report.json": text}
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    written = []
    for name in sorted(files):
        p = out / name
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(files[name])
        written.append(p)
    return written
