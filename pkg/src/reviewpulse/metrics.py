"""Agreement and accuracy metrics for classifier evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIX_CLASS = ("None", "General", "Valid-Uncertain", "Valid-Unaddressed", "Valid-Partially", "Valid-Fully")
VALID_LABELS = SIX_CLASS[2:]

SCHEMES = {
    "full6": {l: l for l in SIX_CLASS},
    "stage1": {"None": "NotValid", "General": "NotValid", **{l: "Valid" for l in VALID_LABELS}},
    "stage2": {
        "Valid-Uncertain": "NotAddressed",
        "Valid-Unaddressed": "NotAddressed",
        "Valid-Partially": "Addressed",
        "Valid-Fully": "Addressed",
    },
}
SCHEME_LABELS = {
    "full6": list(SIX_CLASS),
    "stage1": ["NotValid", "Valid"],
    "stage2": ["NotAddressed", "Addressed"],
}


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple
    counts: np.ndarray  # rows gold, columns predicted

    def __post_init__(self):
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise ValueError("confusion matrix must be square over its labels")
        if (self.counts < 0).any():
            raise ValueError("counts must be nonnegative")

    @classmethod
    def from_counts(cls, counts, labels=None) -> "ConfusionMatrix":
        arr = np.asarray(counts, dtype=np.int64)
        return cls(tuple(labels) if labels is not None else tuple(range(arr.shape[0])), arr)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(gold: Sequence, pred: Sequence, labels: Sequence) -> ConfusionMatrix:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    index = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in zip(gold, pred):
        if g not in index or p not in index:
            raise ValueError(f"label outside {list(labels)}: {g if g not in index else p!r}")
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(tuple(labels), counts)


def _nonempty(m: ConfusionMatrix) -> float:
    total = m.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(total)


def overall_accuracy(m: ConfusionMatrix) -> float:
    return float(np.trace(m.counts)) / _nonempty(m)


def cohen_kappa(m: ConfusionMatrix) -> float:
    """(p_o - p_e) / (1 - p_e); 1.0 when both agreements are perfect."""
    total = _nonempty(m)
    c = m.counts.astype(np.float64)
    p_o = float(np.trace(c)) / total
    p_e = float(c.sum(axis=1) @ c.sum(axis=0)) / (total * total)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def macro_f1(m: ConfusionMatrix) -> float:
    """Unweighted mean per-class F1; classes without support or predictions score 0."""
    _nonempty(m)
    c = m.counts.astype(np.float64)
    scores = []
    for k in range(len(m.labels)):
        tp = c[k, k]
        denom = c[k, :].sum() + c[:, k].sum()
        scores.append(2.0 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


def collapse(labels: Sequence[str], scheme: str) -> list[str]:
    mapping = SCHEMES[scheme]
    out = []
    for l in labels:
        if l not in mapping:
            raise ValueError(f"label {l!r} not covered by scheme {scheme}")
        out.append(mapping[l])
    return out


def evaluate(gold: Sequence[str], pred: Sequence[str]) -> dict:
    """OA and kappa under each collapse scheme.

    The stage2 scheme is scored only where both gold and prediction are Valid-*,
    i.e. on comments correctly identified as valid.
    """
    out = {}
    for scheme in ("full6", "stage1", "stage2"):
        g, p = list(gold), list(pred)
        if scheme == "stage2":
            pairs = [(a, b) for a, b in zip(g, p) if a in VALID_LABELS and b in VALID_LABELS]
            g, p = [a for a, _ in pairs], [b for _, b in pairs]
        if not g:
            out[scheme] = {"n": 0, "oa": None, "kappa": None}
            continue
        m = confusion(collapse(g, scheme), collapse(p, scheme), SCHEME_LABELS[scheme])
        out[scheme] = {"n": m.total, "oa": overall_accuracy(m), "kappa": cohen_kappa(m)}
    return out
