"""Latent Dirichlet Allocation by collapsed Gibbs sampling.

Random draws come from a seeded numpy Generator as one uniform per token per
sweep, so the compiled and pure-Python sweeps produce identical states.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

FORMAT_VERSION = 1
DEFAULT_BETA = 0.01
DEFAULT_ITERATIONS = 1000
DEFAULT_SEED = 42

_FENCE = re.compile(r"```.*?(?:```|\Z)", re.S)
_SPLIT = re.compile(r"[^0-9a-z]+")


@lru_cache(maxsize=1)
def _stopwords() -> frozenset:
    text = (resources.files("reviewpulse") / "data" / "stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(text.split())


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens of length >= 3, minus stopwords and fenced code."""
    prose = _FENCE.sub(" ", text or "").lower()
    stop = _stopwords()
    return [t for t in _SPLIT.split(prose) if len(t) >= 3 and t not in stop]


def _sweep_py(w, d, z, ndk, nkw, nk, u, alpha, beta, vbeta, p):
    K = nk.shape[0]
    for i in range(w.shape[0]):
        ww, dd, k = w[i], d[i], z[i]
        ndk[dd, k] -= 1
        nkw[k, ww] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[dd, t] + alpha) * (nkw[t, ww] + beta) / (nk[t] + vbeta)
            p[t] = total
        target = u[i] * total
        k = 0
        while k < K - 1 and p[k] <= target:
            k += 1
        z[i] = k
        ndk[dd, k] += 1
        nkw[k, ww] += 1
        nk[k] += 1


def _infer_py(w, z, nk, phi, u, alpha, p, acc, burn):
    K = nk.shape[0]
    n = w.shape[0]
    sweeps = u.shape[0] // max(n, 1)
    for s in range(sweeps):
        for i in range(n):
            k = z[i]
            nk[k] -= 1
            total = 0.0
            for t in range(K):
                total += (nk[t] + alpha) * phi[t, w[i]]
                p[t] = total
            target = u[s * n + i] * total
            k = 0
            while k < K - 1 and p[k] <= target:
                k += 1
            z[i] = k
            nk[k] += 1
        if s >= burn:
            for t in range(K):
                acc[t] += (nk[t] + alpha) / (n + K * alpha)


if njit is not None:
    _sweep = njit(cache=False)(_sweep_py)
    _infer = njit(cache=False)(_infer_py)
else:  # pragma: no cover
    _sweep, _infer = _sweep_py, _infer_py


@dataclass
class TopicModel:
    K: int
    vocabulary: tuple[str, ...]
    topic_word: np.ndarray
    alpha: float
    beta: float
    seed: int
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.vocabulary)}

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self._index[t] for t in tokens if t in self._index], dtype=np.int64)

    def top_tokens(self, k: int, n: int = 10) -> list[str]:
        order = np.argsort(-self.topic_word[k], kind="stable")[:n]
        return [self.vocabulary[i] for i in order]

    def to_text(self) -> str:
        lines = [
            f"reviewpulse-lda {FORMAT_VERSION}",
            f"K {self.K}",
            f"alpha {self.alpha!r}",
            f"beta {self.beta!r}",
            f"seed {self.seed}",
            f"iterations {self.iterations}",
            f"vocabulary {len(self.vocabulary)}",
            *self.vocabulary,
            "topic_word",
            *(" ".join(repr(float(v)) for v in row) for row in self.topic_word),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TopicModel":
        lines = text.split("\n")
        magic, version = lines[0].split()
        if magic != "reviewpulse-lda" or int(version) != FORMAT_VERSION:
            raise ValueError("unsupported topic model format")
        head = dict(l.split(" ", 1) for l in lines[1:7])
        V = int(head["vocabulary"])
        vocab = tuple(lines[7:7 + V])
        if lines[7 + V] != "topic_word":
            raise ValueError("corrupt topic model: missing topic_word section")
        K = int(head["K"])
        rows = [[float(v) for v in l.split()] for l in lines[8 + V: 8 + V + K]]
        return cls(K, vocab, np.array(rows, dtype=np.float64), float(head["alpha"]), float(head["beta"]),
                   int(head["seed"]), int(head["iterations"]))


def train_lda(corpus: Sequence[Sequence[str]], K: int, alpha: Optional[float] = None, beta: float = DEFAULT_BETA,
              iterations: int = DEFAULT_ITERATIONS, seed: int = DEFAULT_SEED) -> TopicModel:
    if K < 2:
        raise ValueError("K must be at least 2")
    if not corpus:
        raise ValueError("empty corpus")
    alpha = 50.0 / K if alpha is None else float(alpha)
    corpus = [[str(t) for t in doc] for doc in corpus]
    vocab = tuple(sorted({t for doc in corpus for t in doc}))
    if not vocab:
        raise ValueError("empty vocabulary")
    index = {t: i for i, t in enumerate(vocab)}
    w = np.array([index[t] for doc in corpus for t in doc], dtype=np.int64)
    d = np.array([j for j, doc in enumerate(corpus) for _ in doc], dtype=np.int64)
    V, D, N = len(vocab), len(corpus), len(w)
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=N).astype(np.int64)
    ndk = np.zeros((D, K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (d, z), 1)
    np.add.at(nkw, (z, w), 1)
    nk = nkw.sum(axis=1)
    p = np.zeros(K, dtype=np.float64)
    for _ in range(iterations):
        _sweep(w, d, z, ndk, nkw, nk, rng.random(N), alpha, float(beta), V * float(beta), p)
    phi = (nkw + beta) / (nk[:, None] + V * beta)
    phi = phi / phi.sum(axis=1, keepdims=True)
    return TopicModel(K, vocab, phi, alpha, float(beta), seed, iterations)


def infer_topics(model: TopicModel, tokens: Sequence[str], iterations: int = 100,
                 seed: Optional[int] = None) -> np.ndarray:
    """Topic proportions of one document with topic-word rows held fixed."""
    K = model.K
    w = model.token_ids(tokens)
    if len(w) == 0:
        return np.full(K, 1.0 / K)
    rng = np.random.default_rng(model.seed if seed is None else seed)
    z = rng.integers(0, K, size=len(w)).astype(np.int64)
    nk = np.bincount(z, minlength=K).astype(np.int64)
    u = rng.random(iterations * len(w))
    acc = np.zeros(K, dtype=np.float64)
    burn = iterations // 2
    _infer(w, z, nk, model.topic_word, u, model.alpha, np.zeros(K), acc, burn)
    theta = acc / (iterations - burn)
    return theta / theta.sum()
