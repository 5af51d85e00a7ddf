"""Loss terms, the composite objective and the three training phases."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Rng, Tape, Tensor
from .data import (BOS, PAD, STYLE_X, STYLE_Y, Corpus, Vocabulary, build_vocab, decode,
                   encode_batch)
from .lexical import EmbeddingTable, TagLexicon, centroid, embed_nouns, tag_nouns
from .model import (ModelConfig, SoftSequence, StyleClassifier, StyleTransferModel,
                    ConditionalLM, token_nll)

log = logging.getLogger(__name__)


# --- configuration --------------------------------------------------------------

def _strict(cls, d: dict):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ContractError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class LossWeights:
    alpha: float = 0.2   # classifier
    beta: float = 0.1    # POS
    eta: float = 0.5     # language model

    def __post_init__(self):
        if min(self.alpha, self.beta, self.eta) < 0:
            raise ContractError("loss weights must be nonnegative")


@dataclass
class TemperatureSchedule:
    tau0: float = 1.0
    decay: float = 0.5
    floor: float = 0.001
    pretrain_epochs: int = 1

    def tau(self, epoch: int) -> float:
        """Temperature for zero-based ``epoch``."""
        return max(self.tau0 * self.decay ** max(0, epoch - self.pretrain_epochs), self.floor)

    def trace(self, epochs: int) -> list[float]:
        return [self.tau(e) for e in range(epochs)]


@dataclass
class TrainConfig:
    epochs: int = 10
    lm_epochs: int = 3
    clf_epochs: int = 3
    batch_size: int = 128
    lr: float = 5e-4
    seed: int = 0
    min_count: int = 5
    max_tokens: int = 15
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = _strict(LossWeights, self.weights)
        if isinstance(self.schedule, dict):
            self.schedule = _strict(TemperatureSchedule, self.schedule)
        if self.batch_size < 2 or self.batch_size % 2:
            raise ContractError("batch_size must be a positive even number")
        if self.lr <= 0 or min(self.epochs, self.lm_epochs, self.clf_epochs) < 0:
            raise ContractError("lr must be positive and epoch counts nonnegative")
        unknown = set(self.model) - set(ModelConfig.__dataclass_fields__) - {"vocab_size"}
        if unknown:
            raise ContractError(f"unknown model keys: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _strict(cls, d)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig.from_dict({**self.model, "vocab_size": vocab_size})


# --- prepared data --------------------------------------------------------------

@dataclass
class StyleData:
    """Encoded corpora plus everything the POS and LM terms need per sentence."""

    vocab: Vocabulary
    lexicon: TagLexicon
    table: EmbeddingTable
    ids: dict[tuple[int, str], np.ndarray]
    noun_vecs: dict[tuple[int, str], list[np.ndarray]]
    centroids: dict[tuple[int, str], np.ndarray]
    glove: np.ndarray          # (V, D) table rows aligned with the vocabulary
    noun_ids: np.ndarray       # (V,) bool: lexicon noun with an embedding

    def split(self, style: int, split: str) -> np.ndarray:
        return self.ids[(style, split)]


def sentence_nouns(tokens: Sequence[str], lexicon: TagLexicon, table: EmbeddingTable,
                   dim: int) -> tuple[np.ndarray, np.ndarray]:
    vecs = embed_nouns(tag_nouns(tokens, lexicon), table).vectors
    arr = np.stack(vecs) if vecs else np.zeros((0, dim))
    return arr, centroid(vecs, dim)


def prepare_data(corpora: dict[tuple[int, str], Corpus], lexicon: TagLexicon,
                 table: EmbeddingTable, min_count: int = 5, max_tokens: int = 15,
                 vocab: Vocabulary | None = None) -> StyleData:
    if vocab is None:
        train = [c for (s, sp), c in sorted(corpora.items()) if sp == "train"]
        vocab = build_vocab(train, min_count)
    ids, nv, cents = {}, {}, {}
    for key, corpus in corpora.items():
        m = encode_batch(corpus.sentences, vocab, max_tokens)
        ids[key] = m
        vecs, cs = [], []
        for row in m:
            v, c = sentence_nouns(decode(row, vocab), lexicon, table, table.dim)
            vecs.append(v)
            cs.append(c)
        nv[key] = vecs
        cents[key] = np.stack(cs) if cs else np.zeros((0, table.dim))
    glove, present = table.matrix(vocab.itos)
    noun_ids = present & np.array([lexicon.is_noun(t) for t in vocab.itos])
    return StyleData(vocab, lexicon, table, ids, nv, cents, glove, noun_ids)


def unigram_counts(data: StyleData, split: str = "train") -> np.ndarray:
    """Token counts over both styles of a split, BOS and PAD excluded."""
    ids = np.concatenate([data.split(STYLE_X, split), data.split(STYLE_Y, split)])[:, 1:]
    counts = np.bincount(ids.ravel(), minlength=len(data.vocab)).astype(float)
    counts[PAD] = 0.0
    return counts


def balanced_batches(n_x: int, n_y: int, batch_size: int, rng: Rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Half of every batch from each style; the smaller side is cycled."""
    half = batch_size // 2
    px, py = rng.permutation(n_x), rng.permutation(n_y)
    n_batches = math.ceil(max(n_x, n_y) / half)
    out = []
    for k in range(n_batches):
        lo, hi = k * half, min((k + 1) * half, max(n_x, n_y))
        sl = np.arange(lo, hi)
        out.append((px[sl % n_x], py[sl % n_y]))
    return out


# --- loss terms -------------------------------------------------------------------

def _one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def reconstruction_terms(model: StyleTransferModel, ids: np.ndarray, styles: np.ndarray):
    """Encode once and return ``(encoding, per-style mean of per-sentence summed NLL)``."""
    if len(ids) == 0:
        raise ContractError("empty batch")
    enc = model.gen.encode(ids, styles)
    logits = model.gen.decode_teacher_forced(enc, styles, ids)
    nll, mask = token_nll(logits, ids[:, 1:])
    per_style = {}
    for s in (STYLE_X, STYLE_Y):
        rows = styles == s
        if rows.any():
            m = mask & rows[:, None]
            per_style[s] = ag.scale(ag.tsum(nll * m.astype(float)), 1.0 / rows.sum())
    return enc, per_style


def loss_reconstruction(model: StyleTransferModel, batch_x: np.ndarray, batch_y: np.ndarray) -> Tensor:
    """Sentence NLL (summed over tokens), batch-mean, averaged over the two directions."""
    ids = np.concatenate([batch_x, batch_y])
    styles = np.array([STYLE_X] * len(batch_x) + [STYLE_Y] * len(batch_y))
    _, terms = reconstruction_terms(model, ids, styles)
    return ag.scale(sum(terms.values(), Tensor(0.0)), 1.0 / len(terms))


def loss_classifier(clf: StyleClassifier, soft: SoftSequence, target_styles: np.ndarray) -> Tensor:
    """Mean cross-entropy of ``clf`` on soft sentences against their target styles."""
    logits = clf.classify_soft(soft)
    return ag.mean(ag.cross_entropy(logits, _one_hot(np.asarray(target_styles), 2)))


def gamma(c_x: int, c_y: int) -> float:
    if c_x == 0:
        raise ContractError("gamma is undefined without source nouns")
    return 1.0 + (max(c_x, c_y) - min(c_x, c_y)) / c_x


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=-1, keepdims=True)


def match_nouns(src: np.ndarray, gen: np.ndarray) -> list[tuple[int, int, float]]:
    """Match each of the first ``min(c_x, c_y)`` source vectors to its most similar
    generated vector (ties to the smallest index); ``d = 1 - cosine``."""
    src, gen = np.asarray(src, float), np.asarray(gen, float)
    k = min(len(src), len(gen))
    if k == 0:
        return []
    cos = np.clip(_unit_rows(src[:k]) @ _unit_rows(gen).T, -1.0, 1.0)
    # rounding can leave identical vectors a hair away from cosine 1
    cos[(src[:k, None, :] == gen[None, :, :]).all(axis=-1)] = 1.0
    out = []
    for i in range(k):
        j = int(np.argmax(cos[i]))
        out.append((i, j, float(1.0 - cos[i, j])))
    return out


@dataclass
class PosDistance:
    value: float
    gamma: float | None
    c_x: int
    c_y: int
    pairs: list[tuple[int, int, float]]

    @property
    def undefined(self) -> bool:
        return self.c_x == 0

    @property
    def normalized(self) -> float:
        return self.value / self.c_x if self.c_x else 0.0


def pos_distance(src: np.ndarray, gen: np.ndarray) -> PosDistance:
    """Count-weighted sum of matched noun distances between two embedding sets."""
    c_x, c_y = len(src), len(gen)
    if c_x == 0:
        return PosDistance(0.0, None, 0, c_y, [])
    pairs = match_nouns(src, gen)
    g = gamma(c_x, c_y)
    return PosDistance(g * sum(d for _, _, d in pairs), g, c_x, c_y, pairs)


def loss_pos(src_nouns: Sequence[str], gen_nouns: Sequence[str], table: EmbeddingTable) -> PosDistance:
    """Discrete-token POS distance; nouns missing from ``table`` are dropped."""
    def arr(nouns):
        v = embed_nouns(nouns, table).vectors
        return np.stack(v) if v else np.zeros((0, table.dim))
    return pos_distance(arr(src_nouns), arr(gen_nouns))


def loss_pos_soft(soft: SoftSequence, src_vecs: Sequence[np.ndarray], glove: np.ndarray,
                  noun_ids: np.ndarray) -> tuple[Tensor, dict]:
    """Differentiable POS distance summed over the batch.

    A step counts as a generated noun when its argmax token is a noun; its vector is
    the probability-weighted embedding ``glove^T p`` so the distance reaches the
    generator through ``p``.
    """
    soft_emb = ag.matmul(soft.probs, glove)          # (B, T, D)
    is_noun = soft.mask & noun_ids[soft.ids]
    rows, cols, srcs, weights = [], [], [], []
    stats = {"no_source_nouns": 0, "no_generated_nouns": 0, "sum_normalized": 0.0}
    for b, src in enumerate(src_vecs):
        steps = np.flatnonzero(is_noun[b])
        if len(src) == 0:
            stats["no_source_nouns"] += 1
            continue
        if len(steps) == 0:
            stats["no_generated_nouns"] += 1
            continue
        res = pos_distance(src, soft_emb.data[b, steps])
        stats["sum_normalized"] += res.normalized
        for i, j, _ in res.pairs:
            rows.append(b)
            cols.append(steps[j])
            srcs.append(src[i])
            weights.append(res.gamma)
    if not rows:
        return Tensor(0.0), stats
    gen = soft_emb[np.array(rows), np.array(cols)]                 # (P, D)
    s = _unit_rows(np.stack(srcs))
    norm = ag.sqrt(ag.tsum(gen * gen, axis=-1))
    cos = ag.tsum(gen * s, axis=-1) / norm
    return ag.tsum(ag.mul(1.0 - cos, np.array(weights))), stats


def loss_lm_generated(lm: ConditionalLM, soft: SoftSequence, h0: Tensor) -> Tensor:
    """Per-sentence ``sum_t H(p_tilde_t, p_hat_t)`` over the valid steps, shape ``(B,)``."""
    logp = lm.soft_log_probs(soft, h0)
    ce = ag.scale(ag.tsum(soft.probs * logp, axis=-1), -1.0)     # (B, T)
    return ag.tsum(ce * soft.mask.astype(float), axis=-1)


@dataclass
class LossReport:
    L_res: float
    L_class: float
    L_pos: float
    L_lm: float
    L_total: float
    L_pos_normalized: float = 0.0
    pos_flags: dict = field(default_factory=dict)


def total_loss(model: StyleTransferModel, batch_x: np.ndarray, batch_y: np.ndarray,
               nouns_x: Sequence[np.ndarray], nouns_y: Sequence[np.ndarray],
               centroids: np.ndarray, data: StyleData, weights: LossWeights, tau: float,
               rng: Rng | None) -> tuple[Tensor, LossReport]:
    """``L_res + alpha L_class + beta L_pos + eta L_lm``; each term is a mean over both
    transfer directions. Terms with zero weight are skipped and reported as 0."""
    ids = np.concatenate([batch_x, batch_y])
    src = np.array([STYLE_X] * len(batch_x) + [STYLE_Y] * len(batch_y))
    tgt = 1 - src
    n = len(ids)
    enc, terms = reconstruction_terms(model, ids, src)
    l_res = ag.scale(sum(terms.values(), Tensor(0.0)), 1.0 / len(terms))
    zero = Tensor(0.0)
    l_cls = l_pos = l_lm = zero
    flags, pos_norm = {}, 0.0
    if weights.alpha or weights.beta or weights.eta:
        soft = model.gen.decode_soft(enc, tgt, tau, rng)
        if weights.alpha:
            l_cls = loss_classifier(model.clf, soft, tgt)
        if weights.beta:
            s, flags = loss_pos_soft(soft, list(nouns_x) + list(nouns_y), data.glove, data.noun_ids)
            l_pos = ag.scale(s, 1.0 / n)
            pos_norm = flags.pop("sum_normalized") / n
        if weights.eta:
            h0 = model.lm.init_state(centroids, tgt)
            l_lm = ag.scale(ag.tsum(loss_lm_generated(model.lm, soft, h0)), 1.0 / n)
    total = l_res + ag.scale(l_cls, weights.alpha) + ag.scale(l_pos, weights.beta) \
        + ag.scale(l_lm, weights.eta)
    report = LossReport(l_res.item(), l_cls.item(), l_pos.item(), l_lm.item(), total.item(),
                        pos_norm, flags)
    return total, report


# --- training phases ----------------------------------------------------------------

def _both(data: StyleData, split: str):
    x, y = data.split(STYLE_X, split), data.split(STYLE_Y, split)
    ids = np.concatenate([x, y])
    styles = np.array([STYLE_X] * len(x) + [STYLE_Y] * len(y))
    cents = np.concatenate([data.centroids[(STYLE_X, split)], data.centroids[(STYLE_Y, split)]])
    return ids, styles, cents


def lm_nll(lm: ConditionalLM, ids: np.ndarray, styles: np.ndarray, cents: np.ndarray) -> tuple[Tensor, int]:
    """Summed token NLL of real sentences and the token count."""
    h0 = lm.init_state(cents, styles)
    nll, mask = token_nll(lm.teacher_forced(ids, h0), ids[:, 1:])
    return ag.tsum(nll * mask.astype(float)), int(mask.sum())


def lm_perplexity(lm: ConditionalLM, ids: np.ndarray, styles: np.ndarray, cents: np.ndarray,
                  chunk: int = 256) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(ids), chunk):
        s, c = lm_nll(lm, ids[lo:lo + chunk], styles[lo:lo + chunk], cents[lo:lo + chunk])
        total += s.item()
        count += c
    return math.exp(total / count)


def _batch_keys(data: StyleData, cfg: TrainConfig, rng: Rng):
    nx, ny = len(data.split(STYLE_X, "train")), len(data.split(STYLE_Y, "train"))
    return balanced_batches(nx, ny, cfg.batch_size, rng)


def _gather(data: StyleData, ix: np.ndarray, iy: np.ndarray, split: str = "train"):
    ids = np.concatenate([data.split(STYLE_X, split)[ix], data.split(STYLE_Y, split)[iy]])
    styles = np.array([STYLE_X] * len(ix) + [STYLE_Y] * len(iy))
    cents = np.concatenate([data.centroids[(STYLE_X, split)][ix], data.centroids[(STYLE_Y, split)][iy]])
    return ids, styles, cents


def pretrain_lm(lm: ConditionalLM, data: StyleData, cfg: TrainConfig, rng: Rng,
                epochs: int | None = None, on_step: Callable | None = None) -> list[dict]:
    """Teacher-forced NLL of real sentences conditioned on their own nouns and style."""
    epochs = cfg.lm_epochs if epochs is None else epochs
    params = lm.params()
    state = ag.AdamState()
    history = []
    for epoch in range(epochs):
        losses = []
        for ix, iy in _batch_keys(data, cfg, rng.spawn(f"epoch{epoch}")):
            ids, styles, cents = _gather(data, ix, iy)
            ag.zero_grads(params.values())
            with Tape() as tape:
                s, c = lm_nll(lm, ids, styles, cents)
                loss = ag.scale(s, 1.0 / c)
            ag.backward(loss, tape)
            ag.adam_step(params, state, cfg.lr)
            losses.append(loss.item())
            if on_step:
                on_step(epoch, loss.item())
        ppl = lm_perplexity(lm, *_both(data, "valid"))
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_ppl": ppl})
        log.info("lm epoch %d: loss %.4f valid ppl %.3f", epoch, np.mean(losses), ppl)
    return history


def classifier_accuracy(clf: StyleClassifier, ids: np.ndarray, styles: np.ndarray, chunk: int = 512) -> float:
    pred = np.concatenate([clf.classify_ids(ids[lo:lo + chunk]).data.argmax(-1)
                           for lo in range(0, len(ids), chunk)])
    return float((pred == styles).mean())


def pretrain_classifier(clf: StyleClassifier, data: StyleData, cfg: TrainConfig, rng: Rng,
                        epochs: int | None = None) -> list[dict]:
    """Supervised cross-entropy on real (sentence, style) pairs."""
    epochs = cfg.clf_epochs if epochs is None else epochs
    params = clf.params()
    state = ag.AdamState()
    history = []
    for epoch in range(epochs):
        losses = []
        for ix, iy in _batch_keys(data, cfg, rng.spawn(f"epoch{epoch}")):
            ids, styles, _ = _gather(data, ix, iy)
            ag.zero_grads(params.values())
            with Tape() as tape:
                loss = ag.mean(ag.cross_entropy(clf.classify_ids(ids), _one_hot(styles, 2)))
            ag.backward(loss, tape)
            ag.adam_step(params, state, cfg.lr)
            losses.append(loss.item())
        ids, styles, _ = _both(data, "valid")
        acc = classifier_accuracy(clf, ids, styles)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_acc": acc})
        log.info("%s epoch %d: loss %.4f valid acc %.4f", clf.prefix, epoch, np.mean(losses), acc)
    clf.trained = True
    return history


def train_joint(model: StyleTransferModel, data: StyleData, cfg: TrainConfig, rng: Rng,
                epochs: int | None = None, log_path: str | Path | None = None,
                on_epoch: Callable[[int, list[dict]], None] | None = None,
                start_epoch: int = 0) -> list[dict]:
    """Minimise the composite loss over the generator with classifier and LM frozen.

    The first ``schedule.pretrain_epochs`` epochs optimise reconstruction only.
    Parameters are rounded to float32 at every epoch end so that a checkpoint
    written by ``on_epoch`` is an exact snapshot of the training state.
    """
    epochs = cfg.epochs if epochs is None else epochs
    for m in (model.clf, model.lm, model.eval_clf):
        m.set_trainable(False)
    model.gen.set_trainable(True)
    params = model.gen.params()
    state = ag.AdamState()
    records: list[dict] = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(start_epoch, epochs):
            tau = cfg.schedule.tau(epoch)
            w = cfg.weights if epoch >= cfg.schedule.pretrain_epochs else LossWeights(0.0, 0.0, 0.0)
            erng = rng.spawn(f"joint-epoch{epoch}")
            noise = erng.spawn("gumbel")
            epoch_records = []
            for ix, iy in _batch_keys(data, cfg, erng.spawn("batches")):
                ids, styles, cents = _gather(data, ix, iy)
                nx = [data.noun_vecs[(STYLE_X, "train")][i] for i in ix]
                ny = [data.noun_vecs[(STYLE_Y, "train")][i] for i in iy]
                ag.zero_grads(params.values())
                with Tape() as tape:
                    loss, rep = total_loss(model, ids[:len(ix)], ids[len(ix):], nx, ny, cents,
                                           data, w, tau, noise)
                ag.backward(loss, tape)
                ag.adam_step(params, state, cfg.lr)
                rec = {"epoch": epoch, "step": step, "tau": tau, "L_res": rep.L_res,
                       "L_class": rep.L_class, "L_pos": rep.L_pos, "L_lm": rep.L_lm,
                       "L_total": rep.L_total, "L_pos_normalized": rep.L_pos_normalized}
                step += 1
                epoch_records.append(rec)
                if log_file:
                    log_file.write(json.dumps(rec) + "\n")
            model.snap_to_float32()
            records.extend(epoch_records)
            log.info("joint epoch %d tau %.5f: mean total %.4f", epoch, tau,
                     np.mean([r["L_total"] for r in epoch_records]))
            if on_epoch:
                on_epoch(epoch, epoch_records)
    finally:
        if log_file:
            log_file.close()
    return records


def mean_epoch_losses(records: Sequence[dict], key: str = "L_total") -> list[float]:
    epochs = sorted({r["epoch"] for r in records})
    return [float(np.mean([r[key] for r in records if r["epoch"] == e])) for e in epochs]
