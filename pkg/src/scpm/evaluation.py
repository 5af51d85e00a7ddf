"""Automatic evaluation: transfer accuracy, BLEU, POS distance, perplexity.

BLEU recipe (fixed so numbers are comparable): case-sensitive whitespace tokens,
n = 1..4 with uniform weights, clipped n-gram counts pooled over the corpus,
brevity penalty ``exp(1 - r/c)`` when the pooled candidate length ``c`` is below
the pooled reference length ``r``. No smoothing at corpus level, so any zero
precision gives 0. ``sentence_bleu`` uses add-one smoothing for n >= 2.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autograd import ContractError
from .data import Vocabulary, encode_batch
from .lexical import EmbeddingTable, TagLexicon, cosine, embed_nouns, tag_nouns
from .model import ConditionalLM, StyleClassifier
from .training import classifier_accuracy, lm_perplexity, loss_pos, sentence_nouns

Tokens = Sequence[str]


def style_accuracy(transferred: Sequence[Tokens], target_styles: Sequence[int],
                   eval_clf: StyleClassifier, vocab: Vocabulary, max_tokens: int = 15) -> float:
    """Fraction of sentences the evaluation classifier assigns to their target style."""
    if not eval_clf.trained:
        raise ContractError("evaluation classifier has not been trained")
    if len(transferred) != len(target_styles):
        raise ContractError("sentences and target styles differ in length")
    ids = encode_batch([list(s)[:max_tokens] for s in transferred], vocab, max_tokens)
    return classifier_accuracy(eval_clf, ids, np.asarray(target_styles))


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _stats(cand: Tokens, ref: Tokens, max_n: int):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        c, r = _ngrams(cand, n), _ngrams(ref, n)
        matches.append(sum(min(k, r[g]) for g, k in c.items()))
        totals.append(max(len(cand) - n + 1, 0))
    return matches, totals


def _combine(matches, totals, c_len, r_len, smooth: bool) -> float:
    if c_len == 0:
        return 0.0
    logs = []
    for n, (m, t) in enumerate(zip(matches, totals), 1):
        if smooth and n >= 2:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        logs.append(math.log(m / t))
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def bleu(candidates: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100]."""
    if len(candidates) == 0:
        raise ContractError("empty candidate set")
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates vs {len(references)} references")
    M, T = [0] * max_n, [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        m, t = _stats(cand, ref, max_n)
        M = [a + b for a, b in zip(M, m)]
        T = [a + b for a, b in zip(T, t)]
        c_len += len(cand)
        r_len += len(ref)
    return _combine(M, T, c_len, r_len, smooth=False)


def sentence_bleu(candidate: Tokens, reference: Tokens, max_n: int = 4) -> float:
    m, t = _stats(candidate, reference, max_n)
    return _combine(m, t, len(candidate), len(reference), smooth=True)


@dataclass
class PosMetric:
    mean: float
    values: list[float | None]
    excluded_noun_free: int


def pos_distance_metric(pairs: Sequence[tuple[Tokens, Tokens]], lexicon: TagLexicon,
                        table: EmbeddingTable) -> PosMetric:
    """Mean POS distance over pairs whose original sentence has at least one noun."""
    values, kept, excluded = [], [], 0
    for orig, trans in pairs:
        res = loss_pos(tag_nouns(orig, lexicon).tokens, tag_nouns(trans, lexicon).tokens, table)
        if res.undefined:
            excluded += 1
            values.append(None)
        else:
            values.append(res.value)
            kept.append(res.value)
    return PosMetric(float(np.mean(kept)) if kept else 0.0, values, excluded)


def noun_preservation_rate(pairs: Sequence[tuple[Tokens, Tokens]], lexicon: TagLexicon,
                           table: EmbeddingTable, threshold: float = 0.8) -> float:
    """Share of noun-bearing originals whose output has a noun within ``threshold``
    cosine of some source noun."""
    hits = total = 0
    for orig, trans in pairs:
        src = embed_nouns(tag_nouns(orig, lexicon), table).vectors
        if not src:
            continue
        total += 1
        out = embed_nouns(tag_nouns(trans, lexicon), table).vectors
        if any(cosine(a, b) >= threshold for a in src for b in out):
            hits += 1
    return hits / total if total else 0.0


def perplexity(sentences: Sequence[Tokens], styles: Sequence[int], lm: ConditionalLM,
               lexicon: TagLexicon, table: EmbeddingTable, vocab: Vocabulary,
               max_tokens: int = 15) -> float:
    """``exp`` of the mean token NLL with ``h_lm`` built from each sentence's own nouns."""
    sentences = [list(s)[:max_tokens] for s in sentences]
    ids = encode_batch(sentences, vocab, max_tokens)
    cents = np.stack([sentence_nouns(s, lexicon, table, table.dim)[1] for s in sentences])
    return lm_perplexity(lm, ids, np.asarray(styles), cents)


@dataclass
class EvalReport:
    accuracy: float
    bleu: float
    pos_distance: float
    perplexity: float
    n: int
    excluded_noun_free: int
    per_sentence: list[dict] = field(default_factory=list)

    def to_dict(self, per_sentence: bool = True) -> dict:
        d = asdict(self)
        if not per_sentence:
            d.pop("per_sentence")
        return d

    def to_json(self, per_sentence: bool = True) -> str:
        return json.dumps(self.to_dict(per_sentence), indent=2)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "bleu", "pos_distance", "perplexity", "n", "excluded_noun_free"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "bleu": {"type": "number", "minimum": 0, "maximum": 100},
        "pos_distance": {"type": "number", "minimum": 0},
        "perplexity": {"type": "number", "minimum": 1},
        "n": {"type": "integer", "minimum": 0},
        "excluded_noun_free": {"type": "integer", "minimum": 0},
        "per_sentence": {"type": "array", "items": {"type": "object"}},
    },
}


def evaluate(originals: Sequence[Tokens], transferred: Sequence[Tokens], target_styles: Sequence[int],
             eval_clf: StyleClassifier, lm: ConditionalLM, lexicon: TagLexicon,
             table: EmbeddingTable, vocab: Vocabulary,
             references: Sequence[Tokens] | None = None) -> EvalReport:
    if len(originals) != len(transferred):
        raise ContractError(f"misaligned inputs: {len(originals)} originals vs {len(transferred)} transferred")
    refs = originals if references is None else references
    if len(refs) != len(transferred):
        raise ContractError(f"misaligned inputs: {len(refs)} references vs {len(transferred)} transferred")
    acc = style_accuracy(transferred, target_styles, eval_clf, vocab)
    pos = pos_distance_metric(list(zip(originals, transferred)), lexicon, table)
    ppl = perplexity(transferred, target_styles, lm, lexicon, table, vocab)
    per = [{"original": " ".join(o), "transferred": " ".join(t), "target_style": int(s),
            "pos_distance": v, "bleu": sentence_bleu(t, r)}
           for o, t, s, v, r in zip(originals, transferred, target_styles, pos.values, refs)]
    return EvalReport(acc, bleu(transferred, refs), pos.mean, ppl, len(transferred),
                      pos.excluded_noun_free, per)
