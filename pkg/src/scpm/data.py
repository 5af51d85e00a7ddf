"""Corpora, vocabulary, id encoding and the synthetic two-style corpus."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import ContractError, Rng

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<PAD>", "<BOS>", "<EOS>", "<UNK>")
MAX_TOKENS = 15
STYLE_X, STYLE_Y = 0, 1
STYLE_NAMES = ("x", "y")


def parse_style(style) -> int:
    if style in (STYLE_X, STYLE_Y):
        return int(style)
    if isinstance(style, str) and style.lower() in STYLE_NAMES:
        return STYLE_NAMES.index(style.lower())
    raise ContractError(f"unknown style label {style!r}")


@dataclass
class Corpus:
    sentences: list[list[str]]
    style: int
    split: str = "train"
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.sentences)


def load_corpus(path, style, split: str = "train", max_tokens: int = MAX_TOKENS) -> Corpus:
    """Read one whitespace-tokenised sentence per line; drop lines over ``max_tokens``."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    kept, dropped = [], 0
    for line in lines:
        tokens = line.split()
        if len(tokens) > max_tokens:
            dropped += 1
            continue
        kept.append(tokens)
    if dropped:
        log.info("%s: dropped %d sentences longer than %d tokens", path, dropped, max_tokens)
    if not kept:
        raise ContractError(f"{path}: corpus is empty after filtering")
    return Corpus(kept, parse_style(style), split, dropped)


class Vocabulary:
    """Token <-> id map with the four reserved ids fixed at 0..3."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise ContractError("vocabulary must start with the reserved tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)


def build_vocab(train_corpora: Sequence[Corpus], min_count: int = 5) -> Vocabulary:
    """Keep tokens whose training frequency is strictly greater than ``min_count``.

    Ids are assigned by descending frequency, ties broken lexicographically.
    """
    if not train_corpora:
        raise ContractError("build_vocab needs at least one corpus")
    if min_count < 0:
        raise ContractError("min_count must be >= 0")
    counts = Counter(tok for c in train_corpora for s in c.sentences for tok in s)
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted((t for t, n in counts.items() if n > min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept)


@dataclass
class SentenceIds:
    ids: np.ndarray
    true_length: int


def encode(sentence: Sequence[str], vocab: Vocabulary, max_tokens: int = MAX_TOKENS) -> SentenceIds:
    if len(sentence) > max_tokens:
        raise ContractError(f"sentence has {len(sentence)} tokens, limit is {max_tokens}")
    ids = np.full(max_tokens + 2, PAD, dtype=np.int64)
    ids[0] = BOS
    for k, tok in enumerate(sentence):
        ids[k + 1] = vocab.id(tok)
    ids[len(sentence) + 1] = EOS
    return SentenceIds(ids, len(sentence) + 2)


@dataclass
class DecodeStats:
    inner_pad: int = 0


decode_stats = DecodeStats()


def decode(ids, vocab: Vocabulary) -> list[str]:
    """Map ids back to tokens, stopping at the first EOS.

    PAD found before EOS is skipped and counted in ``decode_stats.inner_pad``.
    """
    if isinstance(ids, SentenceIds):
        ids = ids.ids
    out = []
    for i in np.asarray(ids).tolist():
        if i < 0 or i >= len(vocab):
            raise ContractError(f"id {i} outside vocabulary of size {len(vocab)}")
        if i == EOS:
            break
        if i == BOS:
            continue
        if i == PAD:
            decode_stats.inner_pad += 1
            continue
        out.append(vocab.itos[i])
    return out


def encode_batch(sentences: Sequence[Sequence[str]], vocab: Vocabulary,
                 max_tokens: int = MAX_TOKENS) -> np.ndarray:
    """Stack encoded sentences into an ``(N, max_tokens + 2)`` id matrix."""
    if not sentences:
        return np.zeros((0, max_tokens + 2), dtype=np.int64)
    return np.stack([encode(s, vocab, max_tokens).ids for s in sentences])


def lengths_of(ids: np.ndarray) -> np.ndarray:
    return (ids != PAD).sum(axis=-1)


# --- synthetic corpus ---------------------------------------------------------

@dataclass
class SynthSpec:
    noun_classes: list[list[str]] = field(default_factory=lambda: [
        ["food", "meal", "dish", "cuisine"],
        ["service", "staff", "waiter", "server"],
        ["place", "restaurant", "venue", "spot"],
    ])
    style_words: list[list[str]] = field(default_factory=lambda: [
        ["great", "delicious", "amazing", "wonderful", "excellent", "fantastic", "superb", "lovely"],
        ["terrible", "awful", "horrible", "bland", "disgusting", "mediocre", "dreadful", "poor"],
    ])
    templates: list[str] = field(default_factory=lambda: [
        "the {N} was {S}",
        "the {N} is {S}",
        "the {N} here is really {S}",
        "i think the {N} was {S}",
        "honestly the {N} is {S} today",
        "we found the {N} {S}",
        "our {N} was very {S}",
        "the {N} and the {N} were {S}",
        "this {N} is {S} and the {N} too",
        "my friend said the {N} was {S}",
        "the {N} at this {N} was {S}",
        "overall the {N} seemed {S} to us",
        "last night the {N} tasted {S}",
        "everyone agreed that the {N} was {S}",
        "my husband thought the {N} looked {S}",
        "the {N} felt {S} again",
        "even the {N} was {S} tonight",
        "we would call the {N} {S}",
        "for the price the {N} was {S}",
        "our whole family said the {N} was {S}",
        "after an hour the {N} seemed {S}",
        "i must say the {N} is {S}",
    ])
    # per-style sampling weights over noun classes
    noun_class_weights: list[list[float]] = field(default_factory=lambda: [
        [0.4, 0.3, 0.3], [0.3, 0.3, 0.4],
    ])
    sentences_per_style: int = 2000
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    embedding_dim: int = 100
    # vector length of every word; GloVe 100-d vectors are roughly this long
    embedding_norm: float = 5.0
    synonym_spread: float = 0.4
    seed: int = 1234

    def validate(self) -> None:
        a, b = (set(ws) for ws in self.style_words)
        if a & b:
            raise ContractError(f"style-word sets overlap: {sorted(a & b)}")
        for t in self.templates:
            if "{N}" not in t or t.count("{S}") != 1:
                raise ContractError(f"template needs >= 1 noun slot and one style slot: {t!r}")
        if len(self.noun_class_weights) != 2 or any(len(w) != len(self.noun_classes)
                                                     for w in self.noun_class_weights):
            raise ContractError("noun_class_weights must be 2 x n_classes")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown SynthSpec keys: {sorted(unknown)}")
        d = dict(d)
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d


@dataclass
class SyntheticData:
    corpora: dict[tuple[int, str], Corpus]
    nouns: dict[tuple[int, str], list[list[str]]]
    lexicon: list[str]
    embeddings: dict[str, np.ndarray]


def split_sizes(n: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """Valid/test sizes are rounded down; the remainder goes to train."""
    valid = int(np.floor(n * fractions[1]))
    test = int(np.floor(n * fractions[2]))
    return n - valid - test, valid, test


def _synthetic_embeddings(spec: SynthSpec, rng: Rng, filler: list[str]) -> dict[str, np.ndarray]:
    d = spec.embedding_dim
    n_cls = len(spec.noun_classes)
    n_nouns = sum(len(c) for c in spec.noun_classes)
    if n_cls + n_nouns > d:
        raise ContractError("embedding dimension too small for the noun inventory")
    # orthonormal basis: class centroids first, then one private direction per noun
    q, _ = np.linalg.qr(rng.normal((d, n_cls + n_nouns)))
    vecs: dict[str, np.ndarray] = {}
    k = n_cls
    for c, cls in enumerate(spec.noun_classes):
        for noun in cls:
            vecs[noun] = spec.embedding_norm * (q[:, c] + spec.synonym_spread * q[:, k]) \
                / np.sqrt(1 + spec.synonym_spread ** 2)
            k += 1
    for tok in filler:
        v = rng.normal(d)
        vecs[tok] = spec.embedding_norm * v / np.linalg.norm(v)
    return vecs


def generate_synthetic(spec: SynthSpec) -> SyntheticData:
    """Deterministic two-style corpus with ground-truth noun annotations."""
    spec.validate()
    rng = Rng(spec.seed)
    sent_rng = rng.spawn("sentences")
    noun_index = [(c, w) for c, cls in enumerate(spec.noun_classes) for w in cls]
    corpora, nouns = {}, {}
    for style in (STYLE_X, STYLE_Y):
        words = spec.style_words[style]
        weights = np.asarray(spec.noun_class_weights[style], dtype=float)
        weights = weights / weights.sum()
        sents, annos = [], []
        for _ in range(spec.sentences_per_style):
            tmpl = spec.templates[sent_rng.gen.integers(len(spec.templates))]
            toks, anno = [], []
            for piece in tmpl.split():
                if piece == "{N}":
                    c = sent_rng.gen.choice(len(spec.noun_classes), p=weights)
                    w = spec.noun_classes[c][sent_rng.gen.integers(len(spec.noun_classes[c]))]
                    toks.append(w)
                    anno.append(w)
                elif piece == "{S}":
                    toks.append(words[sent_rng.gen.integers(len(words))])
                else:
                    toks.append(piece)
            sents.append(toks)
            annos.append(anno)
        n_train, n_valid, _ = split_sizes(len(sents), spec.split_fractions)
        bounds = {"train": (0, n_train), "valid": (n_train, n_train + n_valid),
                  "test": (n_train + n_valid, len(sents))}
        for split, (lo, hi) in bounds.items():
            corpora[(style, split)] = Corpus(sents[lo:hi], style, split)
            nouns[(style, split)] = annos[lo:hi]
    lexicon = [w for _, w in noun_index]
    seen = set(lexicon)
    filler = []
    for c in corpora.values():
        for s in c.sentences:
            for tok in s:
                if tok not in seen:
                    seen.add(tok)
                    filler.append(tok)
    filler.sort()
    embeddings = _synthetic_embeddings(spec, rng.spawn("embeddings"), filler)
    return SyntheticData(corpora, nouns, lexicon, embeddings)


def corpus_filename(style: int, split: str) -> str:
    return f"{STYLE_NAMES[style]}.{split}.txt"


def write_synthetic(data: SyntheticData, out_dir) -> list[Path]:
    """Write corpora, noun annotations, tag lexicon and GloVe-format embeddings."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (style, split), corpus in sorted(data.corpora.items()):
        p = out / corpus_filename(style, split)
        p.write_text("".join(" ".join(s) + "\n" for s in corpus.sentences), encoding="utf-8")
        a = out / f"{STYLE_NAMES[style]}.{split}.nouns.tsv"
        a.write_text("".join(f"{i}\t{' '.join(n)}\n" for i, n in enumerate(data.nouns[(style, split)])),
                     encoding="utf-8")
        written += [p, a]
    lex = out / "lexicon.tsv"
    lex.write_text("".join(f"{w}\tNOUN\n" for w in data.lexicon), encoding="utf-8")
    emb = out / "embeddings.txt"
    with open(emb, "w", encoding="utf-8") as f:
        for tok, v in data.embeddings.items():
            f.write(tok + " " + " ".join(f"{x:.6f}" for x in v) + "\n")
    written += [lex, emb]
    return written


def load_synth_spec(path) -> SynthSpec:
    with open(path, encoding="utf-8") as f:
        return SynthSpec.from_dict(json.load(f))
