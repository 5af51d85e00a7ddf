"""Noun tagging and the pretrained embedding store."""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autograd import ContractError
from .data import RESERVED

EMBED_DIM = 100


class FormatError(ValueError):
    pass


@dataclass
class TagLexicon:
    """Lexicon-first noun tagger; suffix rules only apply to unknown tokens."""

    nouns: set[str] = field(default_factory=set)
    suffix_rules: dict[str, bool] = field(default_factory=dict)
    non_nouns: set[str] = field(default_factory=set)

    def is_noun(self, token: str) -> bool:
        if token in RESERVED:
            return False
        if token in self.nouns:
            return True
        if token in self.non_nouns:
            return False
        # longest matching suffix decides
        for suffix in sorted(self.suffix_rules, key=len, reverse=True):
            if token.endswith(suffix):
                return self.suffix_rules[suffix]
        return False

    @classmethod
    def load(cls, path) -> "TagLexicon":
        nouns = set()
        for k, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}: expected 'token<TAB>TAG' at line {k}")
            if parts[1].strip() == "NOUN":
                nouns.add(parts[0])
        return cls(nouns)


@dataclass
class NounSet:
    tokens: list[str]

    @property
    def count(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def tag_nouns(sentence: Sequence[str], lex: TagLexicon) -> NounSet:
    return NounSet([t for t in sentence if lex.is_noun(t)])


def load_annotations(path) -> dict[int, NounSet]:
    """Read ``index<TAB>noun noun ...`` lines, an external override for the tagger."""
    out = {}
    for k, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        idx, _, rest = line.partition("\t")
        try:
            out[int(idx)] = NounSet(rest.split())
        except ValueError:
            raise FormatError(f"{path}: bad sentence index at line {k}") from None
    return out


class EmbeddingTable:
    def __init__(self, vectors: dict[str, np.ndarray], dim: int = EMBED_DIM):
        self.dim = dim
        self.vectors = vectors
        self.missing: Counter = Counter()

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[token]

    def lookup(self, token: str) -> np.ndarray | None:
        v = self.vectors.get(token)
        if v is None:
            self.missing[token] += 1
        return v

    def matrix(self, itos: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Rows aligned with a vocabulary; absent tokens get zeros and ``False`` in the mask."""
        m = np.zeros((len(itos), self.dim))
        present = np.zeros(len(itos), dtype=bool)
        for i, tok in enumerate(itos):
            v = self.vectors.get(tok)
            if v is not None:
                m[i] = v
                present[i] = True
        return m, present


def load_embeddings(path, dim: int = EMBED_DIM) -> EmbeddingTable:
    """Parse a GloVe text file (``token v1 ... vD`` per line)."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        for k, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) - 1 != dim:
                raise FormatError(f"expected {dim} dims at line {k}, got {len(parts) - 1}")
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise FormatError(f"non-numeric value at line {k}") from None
            if parts[0] in vectors:
                warnings.warn(f"duplicate token {parts[0]!r} at line {k}; last occurrence wins")
            vectors[parts[0]] = vec
    return EmbeddingTable(vectors, dim)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ContractError(f"cosine: dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ContractError("cosine of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class EmbeddedNouns:
    vectors: list[np.ndarray]
    dropped: list[int]


def embed_nouns(nouns: Iterable[str], table: EmbeddingTable) -> EmbeddedNouns:
    vecs, dropped = [], []
    for i, tok in enumerate(nouns):
        v = table.lookup(tok)
        if v is None:
            dropped.append(i)
        else:
            vecs.append(v)
    return EmbeddedNouns(vecs, dropped)


def centroid(vectors: Sequence[np.ndarray], dim: int = EMBED_DIM) -> np.ndarray:
    if len(vectors) == 0:
        return np.zeros(dim)
    return np.mean(np.stack(vectors), axis=0)
