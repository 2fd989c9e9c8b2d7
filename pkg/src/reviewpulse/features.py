"""Per-comment feature vectors, rank correlation, and AutoSpearman pruning."""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import PurePosixPath
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import FeatureError
from .lda import TopicModel, infer_topics, tokenize
from .records import RepoStats
from .reconstruct import CommentContext, ContextStats
from .stats import Correlation, pearson

N_TOPICS = 6
ANALYSIS_ACTIONS = (1, 2, 3, 4)

SOURCE_FEATURES = [
    "Is_Human", "Is_File_Level_Action",
    *(f"Action_ID{i}" for i in ANALYSIS_ACTIONS),
    "Trigger_auto", "Trigger_manual",
    "LLM_GPT-3.5", "LLM_GPT-4",
]
REPOSITORY_FEATURES = [
    "Repo_File_Count", "Repo_File_Size", "Repo_Issue_Count", "Repo_PR_Count", "Repo_Contributor_Count",
]
MODIFICATION_FEATURES = [
    "Author_Is_Bot", "Author_Is_Anon", "Author_Prior_Commits",
    "Commit_Changed_File", "Commit_Change", "Commit_Add", "Commit_Del", "Commit_Base_Lines",
    "File_Is_Code", "File_Depth", "File_Add", "File_Del", "File_Change", "File_Base_Lines",
    "Comment_Add", "Comment_Del", "Comment_Change",
]


def comment_features(k: int = N_TOPICS) -> list[str]:
    return ["Timeline_Index", "Prior_Comment_Len", "Inline_Code", "Multiline_Code", "Text_Length",
            "Code_Length", "Code_Text_Ratio", *(f"LDA_Topic_{i}" for i in range(k))]


def feature_names(k: int = N_TOPICS) -> list[str]:
    return SOURCE_FEATURES + REPOSITORY_FEATURES + MODIFICATION_FEATURES + comment_features(k)


def feature_groups(k: int = N_TOPICS) -> dict[str, list[str]]:
    return {
        "Source": list(SOURCE_FEATURES),
        "Repository": list(REPOSITORY_FEATURES),
        "Modification": list(MODIFICATION_FEATURES),
        "Comment": comment_features(k),
    }


ONE_HOT_GROUPS = (
    tuple(f"Action_ID{i}" for i in ANALYSIS_ACTIONS),
    ("Trigger_auto", "Trigger_manual"),
    ("LLM_GPT-3.5", "LLM_GPT-4"),
)

_FENCED = re.compile(r"```.*?```", re.S)
_INLINE = re.compile(r"`[^`\n]+`")


@lru_cache(maxsize=1)
def _code_extensions() -> frozenset:
    text = (resources.files("reviewpulse") / "data" / "extensions.txt").read_text(encoding="utf-8")
    exts = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            exts.add(line.split("=", 1)[0].strip().lower())
    return frozenset(exts)


def is_code_file(path: str) -> bool:
    return PurePosixPath(path).suffix.lower() in _code_extensions()


@dataclass(frozen=True)
class CodeStats:
    inline: bool
    multiline: bool
    code_length: int
    text_length: int

    @property
    def ratio(self) -> float:
        return min(1.0, self.code_length / self.text_length) if self.text_length else 0.0


def code_stats(body: str) -> CodeStats:
    """Fenced blocks and single-backtick spans, lengths counted with their delimiters."""
    fenced = _FENCED.findall(body)
    rest = _FENCED.sub(" ", body)
    spans = _INLINE.findall(rest)
    return CodeStats(bool(spans), bool(fenced), sum(map(len, fenced)) + sum(map(len, spans)), len(body))


@dataclass(frozen=True)
class FeatureVector:
    key: str
    values: dict

    def __post_init__(self):
        for group in ONE_HOT_GROUPS:
            if sum(self.values[n] for n in group) > 1:
                raise ValueError(f"one-hot group {group} has several active entries")
        if not 0.0 <= self.values["Code_Text_Ratio"] <= 1.0:
            raise ValueError("Code_Text_Ratio outside [0, 1]")
        topics = [v for n, v in self.values.items() if n.startswith("LDA_Topic_")]
        if topics and abs(sum(topics) - 1.0) > 1e-9:
            raise ValueError("topic probabilities must sum to 1")

    def row(self, names: Sequence[str]) -> list[float]:
        return [float(self.values[n]) for n in names]


def extract_features(context: CommentContext, repo_stats: Optional[RepoStats], stats: Optional[ContextStats] = None,
                     topic_model: Optional[TopicModel] = None) -> FeatureVector:
    """The full feature vector of one valid comment."""
    if repo_stats is None:
        raise FeatureError(f"no repository statistics for {context.comment.repo}")
    if topic_model is None:
        raise FeatureError("a trained topic model is required")
    st = stats or context.stats
    v: dict[str, float] = {}

    human = context.source == "human"
    v["Is_Human"] = int(human)
    v["Is_File_Level_Action"] = int(context.source == "file_action")
    for i in ANALYSIS_ACTIONS:
        v[f"Action_ID{i}"] = int(not human and context.action_id == i)
    v["Trigger_auto"] = int(not human and st.trigger == "auto")
    v["Trigger_manual"] = int(not human and st.trigger == "manual")
    v["LLM_GPT-3.5"] = int(not human and st.llm == "GPT-3.5")
    v["LLM_GPT-4"] = int(not human and st.llm == "GPT-4")

    v["Repo_File_Count"] = repo_stats.file_count
    v["Repo_File_Size"] = repo_stats.file_size
    v["Repo_Issue_Count"] = repo_stats.issue_count
    v["Repo_PR_Count"] = repo_stats.pr_count
    v["Repo_Contributor_Count"] = repo_stats.contributor_count

    v["Author_Is_Bot"] = int(st.author_is_bot)
    v["Author_Is_Anon"] = int(st.author_is_anon)
    v["Author_Prior_Commits"] = 0 if (st.author_is_bot or st.author_is_anon) else st.author_prior_commits
    files = st.commit_files or []
    adds = sum(f["additions"] for f in files)
    dels = sum(f["deletions"] for f in files)
    v["Commit_Changed_File"] = len(files)
    v["Commit_Change"] = adds + dels
    v["Commit_Add"] = adds
    v["Commit_Del"] = dels
    v["Commit_Base_Lines"] = sum(f.get("base_lines", 0) for f in files)
    path = context.path
    mine = next((f for f in files if f["path"] == path), None) or {"additions": 0, "deletions": 0, "base_lines": 0}
    v["File_Is_Code"] = int(is_code_file(path))
    v["File_Depth"] = path.count("/")
    v["File_Add"] = mine["additions"]
    v["File_Del"] = mine["deletions"]
    v["File_Change"] = mine["additions"] + mine["deletions"]
    v["File_Base_Lines"] = mine.get("base_lines", 0)
    c_add = sum(r.added for r in context.reviewed)
    c_del = sum(r.deleted for r in context.reviewed)
    v["Comment_Add"] = c_add
    v["Comment_Del"] = c_del
    v["Comment_Change"] = c_add + c_del

    body = context.comment.body
    cs = code_stats(body)
    v["Timeline_Index"] = st.timeline_index
    v["Prior_Comment_Len"] = st.prior_comment_len
    v["Inline_Code"] = int(cs.inline)
    v["Multiline_Code"] = int(cs.multiline)
    v["Text_Length"] = cs.text_length
    v["Code_Length"] = cs.code_length
    v["Code_Text_Ratio"] = cs.ratio
    theta = infer_topics(topic_model, tokenize(body))
    for k in range(topic_model.K):
        v[f"LDA_Topic_{k}"] = float(theta[k])
    names = feature_names(topic_model.K)
    return FeatureVector(context.key, {n: v[n] for n in names})


# ---------------------------------------------------------------- correlation

def spearman(x: Sequence[float], y: Sequence[float]) -> Correlation:
    """Pearson correlation of mid-ranks; constant input gives 0 with a flag."""
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length sequences of at least two values")
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


@dataclass
class AutoSpearmanResult:
    retained: list[str]
    removed: list[tuple[str, str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"retained": self.retained,
                "removed": [{"name": n, "partner": p, "rho": r} for n, p, r in self.removed]}


def correlation_matrix(matrix: np.ndarray) -> np.ndarray:
    X = np.asarray(matrix, dtype=np.float64)
    d = X.shape[1]
    rho = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            if np.array_equal(X[:, i], X[:, j]):
                r = 1.0
            else:
                r = spearman(X[:, i], X[:, j]).r
            rho[i, j] = rho[j, i] = r
    return rho


def autospearman(matrix: np.ndarray, names: Sequence[str], threshold: float = 0.7) -> AutoSpearmanResult:
    """Repeatedly drop one member of the most correlated pair above ``threshold``.

    The member with the larger mean |rho| against the other remaining
    features is removed; on a tie the later column goes.
    """
    names = list(names)
    if len(names) < 2:
        raise ValueError("need at least two feature columns")
    rho = correlation_matrix(matrix)
    absr = np.abs(rho)
    alive = list(range(len(names)))
    removed = []
    while True:
        best = None
        for a_pos, i in enumerate(alive):
            for j in alive[a_pos + 1:]:
                if absr[i, j] > threshold and (best is None or absr[i, j] > absr[best[0], best[1]]):
                    best = (i, j)
        if best is None:
            break
        i, j = best

        def mean_abs(k):
            others = [o for o in alive if o != k]
            return float(np.mean(absr[k, others]))

        drop, keep = (i, j) if mean_abs(i) > mean_abs(j) else (j, i)
        removed.append((names[drop], names[keep], float(rho[i, j])))
        alive.remove(drop)
    return AutoSpearmanResult([names[k] for k in alive], removed)


# ---------------------------------------------------------------- persistence

def write_matrix_csv(vectors: Sequence[FeatureVector], names: Sequence[str], extra: Sequence[str] = ()) -> str:
    """CSV with a ``key`` column, optional extra columns, then the named features."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", *extra, *names])
    for fv in vectors:
        w.writerow([fv.key, *(fv.values.get(e, "") for e in extra), *(_fmt(fv.values[n]) for n in names)])
    return buf.getvalue()


def _fmt(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def read_matrix_csv(text: str) -> tuple[list[str], list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    names = header[1:]
    keys = [r[0] for r in body]
    X = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(names))
    return keys, names, X
