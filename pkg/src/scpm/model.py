"""Parameterised networks: style-conditioned encoder, attentional decoder,
CNN style classifier and the content-conditional language model.

All tensors are batch-first. Id matrices are ``(B, T)`` int arrays framed as
``BOS tokens EOS PAD...``; style labels are ``(B,)`` ints (0 = X, 1 = Y).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Rng, Tensor
from .data import BOS, EOS, PAD

NEG_INF = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    emb_dim: int = 100
    hidden: int = 700
    style_dim: int = 200
    attn_dim: int = 700
    filters: int = 128
    widths: tuple[int, ...] = (3, 4, 5)
    lm_hidden: int = 700
    noun_dim: int = 100
    max_len: int = 16
    context_output: bool = False
    emb_std: float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


class Module:
    """Named parameter container."""

    prefix = ""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=f"{self.prefix}.{name}")
        self._params[name] = t
        return t

    def params(self) -> dict[str, Tensor]:
        return {f"{self.prefix}.{k}": v for k, v in self._params.items()}

    def set_trainable(self, flag: bool) -> None:
        for p in self._params.values():
            p.requires_grad = flag
            p.grad = np.zeros_like(p.data) if flag else None

    def snap_to_float32(self) -> None:
        for p in self._params.values():
            p.data = p.data.astype(np.float32).astype(np.float64)


def _uniform(rng: Rng, shape, fan: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan)
    return rng.uniform(shape, -bound, bound)


class GRU:
    """Single-layer GRU cell: ``h' = (1 - z) * n + z * h``."""

    def __init__(self, owner: Module, name: str, n_in: int, n_hidden: int, rng: Rng):
        self.h = n_hidden
        self.W = owner.param(f"{name}.W", _uniform(rng, (n_in, 3 * n_hidden), n_hidden))
        self.U = owner.param(f"{name}.U", _uniform(rng, (n_hidden, 3 * n_hidden), n_hidden))
        self.b = owner.param(f"{name}.b", np.zeros(3 * n_hidden))

    def project(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.W) + self.b

    def step(self, xp: Tensor, h: Tensor) -> Tensor:
        H = self.h
        hu = ag.matmul(h, self.U)
        z = ag.sigmoid(xp[:, :H] + hu[:, :H])
        r = ag.sigmoid(xp[:, H:2 * H] + hu[:, H:2 * H])
        n = ag.tanh(xp[:, 2 * H:] + r * hu[:, 2 * H:])
        return n + z * (h - n)


def _masked_step(h_new: Tensor, h_old: Tensor, m: np.ndarray) -> Tensor:
    # keep the old state where the position is padding
    m = m[:, None].astype(float)
    return h_new * m + h_old * (1.0 - m)


@dataclass
class Encoded:
    content: Tensor      # (B, H)
    states: Tensor       # (B, T, H)
    mask: np.ndarray     # (B, T) bool, False at PAD


@dataclass
class SoftSequence:
    """Relaxed generator output: one probability vector per step."""

    probs: Tensor        # (B, T, V) Gumbel-softmax samples u
    pi: np.ndarray       # (B, T, V) noise-free distributions
    ids: np.ndarray      # (B, T) argmax of probs
    mask: np.ndarray     # (B, T) True up to and including the first EOS
    tau: float

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def gumbel_softmax_step(logits: Tensor, tau: float, g) -> tuple[Tensor, Tensor]:
    """Return ``(u, pi)`` with ``u = softmax((log pi + g) / tau)``, ``pi = softmax(logits)``."""
    if tau <= 0:
        raise ContractError("temperature must be positive")
    log_pi = ag.log_softmax(logits, axis=-1)
    u = ag.softmax(ag.scale(log_pi + ag.as_tensor(g), 1.0 / tau), axis=-1)
    return u, log_pi


class Generator(Module):
    """Style vectors, shared word embeddings, GRU encoder and attentional GRU decoder."""

    prefix = "gen"

    def __init__(self, cfg: ModelConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        E, S, H, A, V = cfg.emb_dim, cfg.style_dim, cfg.hidden, cfg.attn_dim, cfg.vocab_size
        self.style = self.param("style", rng.normal((2, S), cfg.emb_std))
        self.emb = self.param("emb", rng.normal((V, E), cfg.emb_std))
        self.enc = GRU(self, "enc", E + S, H, rng.spawn("enc"))
        self.init_W = self.param("init.W", _uniform(rng, (H, H), H))
        self.init_b = self.param("init.b", np.zeros(H))
        self.att_W = self.param("att.W", _uniform(rng, (H, A), H))
        self.att_U = self.param("att.U", _uniform(rng, (H, A), H))
        self.att_v = self.param("att.v", _uniform(rng, (A, 1), A))
        self.dec = GRU(self, "dec", E + S + H, H, rng.spawn("dec"))
        n_out = 2 * H if cfg.context_output else H
        self.out_W = self.param("out.W", _uniform(rng, (n_out, V), n_out))
        self.out_b = self.param("out.b", np.zeros(V))

    def style_vectors(self, styles: np.ndarray) -> Tensor:
        return ag.embedding(self.style, np.asarray(styles))

    # -- encoder ---------------------------------------------------------
    def encode(self, ids: np.ndarray, styles: np.ndarray) -> Encoded:
        ids = np.asarray(ids)
        mask = ids != PAD
        if not mask.any(axis=1).all():
            raise ContractError("cannot encode an all-PAD sentence")
        T = int(mask.sum(axis=1).max())
        ids, mask = ids[:, :T], mask[:, :T]
        B = ids.shape[0]
        v = self.style_vectors(styles)
        x = ag.embedding(self.emb, ids)
        vrep = ag.mul(ag.reshape(v, (B, 1, -1)), np.ones((1, T, 1)))
        xp = self.enc.project(ag.concat([x, vrep], axis=-1))
        h = Tensor(np.zeros((B, self.cfg.hidden)))
        states = []
        for t in range(T):
            h = _masked_step(self.enc.step(xp[:, t, :], h), h, mask[:, t])
            states.append(h)
        return Encoded(h, ag.stack(states, axis=1), mask)

    # -- decoder ---------------------------------------------------------
    def _init_hidden(self, enc: Encoded) -> Tensor:
        return ag.tanh(ag.matmul(enc.content, self.init_W) + self.init_b)

    def _attention(self, h: Tensor, keys: Tensor, enc: Encoded) -> tuple[Tensor, Tensor]:
        B, T = enc.mask.shape
        q = ag.reshape(ag.matmul(h, self.att_W), (B, 1, -1))
        scores = ag.reshape(ag.matmul(ag.tanh(keys + q), self.att_v), (B, T))
        scores = scores + np.where(enc.mask, 0.0, NEG_INF)
        w = ag.softmax(scores, axis=-1)
        ctx = ag.reshape(ag.matmul(ag.reshape(w, (B, 1, T)), enc.states), (B, -1))
        return ctx, w

    def _decoder_step(self, inp: Tensor, v: Tensor, h: Tensor, keys: Tensor, enc: Encoded):
        ctx, w = self._attention(h, keys, enc)
        xp = self.dec.project(ag.concat([inp, v, ctx], axis=-1))
        h = self.dec.step(xp, h)
        feat = ag.concat([h, ctx], axis=-1) if self.cfg.context_output else h
        logits = ag.matmul(feat, self.out_W) + self.out_b
        return h, logits, w

    def decode_teacher_forced(self, enc: Encoded, styles: np.ndarray, target: np.ndarray,
                              return_attention: bool = False):
        """Logits ``(B, L-1, V)`` predicting ``target[:, 1:]``; ``L`` is the longest true length."""
        target = np.asarray(target)
        L = int((target != PAD).sum(axis=1).max())
        v = self.style_vectors(styles)
        keys = ag.matmul(enc.states, self.att_U)
        h = self._init_hidden(enc)
        x = ag.embedding(self.emb, target[:, : L - 1])
        logits, weights = [], []
        for t in range(L - 1):
            h, lg, w = self._decoder_step(x[:, t, :], v, h, keys, enc)
            logits.append(lg)
            weights.append(w.data)
        out = ag.stack(logits, axis=1)
        if return_attention:
            return out, np.stack(weights, axis=1)
        return out

    def decode_soft(self, enc: Encoded, styles: np.ndarray, tau: float, rng: Rng | None,
                    max_len: int | None = None) -> SoftSequence:
        """Autoregressive Gumbel-softmax decoding fed back through soft embeddings.

        ``rng=None`` disables the noise (plain softmax at temperature ``tau``).
        """
        if tau <= 0:
            raise ContractError("temperature must be positive")
        max_len = max_len or self.cfg.max_len
        B = enc.mask.shape[0]
        V = self.cfg.vocab_size
        v = self.style_vectors(styles)
        keys = ag.matmul(enc.states, self.att_U)
        h = self._init_hidden(enc)
        inp = ag.embedding(self.emb, np.full(B, BOS))
        probs, pis, ids, masks = [], [], [], []
        alive = np.ones(B, dtype=bool)
        for _ in range(max_len):
            h, logits, _ = self._decoder_step(inp, v, h, keys, enc)
            g = ag.gumbel_from_uniform(rng.uniform((B, V))) if rng is not None else np.zeros((B, V))
            u, log_pi = gumbel_softmax_step(logits, tau, g)
            step_ids = u.data.argmax(axis=-1)
            probs.append(u)
            pis.append(np.exp(log_pi.data))
            ids.append(step_ids)
            masks.append(alive.copy())
            alive &= step_ids != EOS
            inp = ag.matmul(u, self.emb)
            if not alive.any():
                break
        return SoftSequence(ag.stack(probs, axis=1), np.stack(pis, axis=1),
                            np.stack(ids, axis=1), np.stack(masks, axis=1), tau)

    def greedy(self, ids: np.ndarray, src_styles: np.ndarray, tgt_styles: np.ndarray,
               max_len: int | None = None) -> list[list[int]]:
        """Noise-free argmax decoding; returns token ids without BOS/EOS."""
        max_len = max_len or self.cfg.max_len
        enc = self.encode(ids, src_styles)
        B = len(ids)
        v = self.style_vectors(tgt_styles)
        keys = ag.matmul(enc.states, self.att_U)
        h = self._init_hidden(enc)
        prev = np.full(B, BOS)
        out = [[] for _ in range(B)]
        alive = np.ones(B, dtype=bool)
        for _ in range(max_len):
            h, logits, _ = self._decoder_step(ag.embedding(self.emb, prev), v, h, keys, enc)
            prev = logits.data.argmax(axis=-1)
            for b in np.flatnonzero(alive):
                if prev[b] == EOS:
                    alive[b] = False
                else:
                    out[b].append(int(prev[b]))
            if not alive.any():
                break
        return out


class StyleClassifier(Module):
    """Convolutions of several widths over token embeddings, max-pooled, then linear."""

    prefix = "clf"

    def __init__(self, cfg: ModelConfig, rng: Rng, prefix: str = "clf"):
        super().__init__()
        self.prefix = prefix
        self.cfg = cfg
        self.trained = False
        E, F, V = cfg.emb_dim, cfg.filters, cfg.vocab_size
        self.emb = self.param("emb", rng.normal((V, E), cfg.emb_std))
        self.convs = []
        for k in cfg.widths:
            W = self.param(f"conv{k}.W", _uniform(rng, (k * E, F), k * E))
            b = self.param(f"conv{k}.b", np.zeros(F))
            self.convs.append((k, W, b))
        n_feat = F * len(cfg.widths)
        self.fc_W = self.param("fc.W", _uniform(rng, (n_feat, 2), n_feat))
        self.fc_b = self.param("fc.b", np.zeros(2))

    @property
    def feature_dim(self) -> int:
        return self.cfg.filters * len(self.cfg.widths)

    def _from_embeddings(self, x: Tensor) -> Tensor:
        B, T, E = x.shape
        L = max(T, self.cfg.max_len, max(self.cfg.widths))
        if L > T:
            pad = ag.mul(ag.reshape(self.emb[PAD], (1, 1, E)), np.ones((B, L - T, 1)))
            x = ag.concat([x, pad], axis=1)
        feats = []
        for k, W, b in self.convs:
            windows = ag.concat([x[:, i:L - k + 1 + i, :] for i in range(k)], axis=-1)
            c = ag.relu(ag.matmul(windows, W) + b)
            feats.append(ag.tmax(c, axis=1))
        return ag.matmul(ag.concat(feats, axis=-1), self.fc_W) + self.fc_b

    def __call__(self, tokens: np.ndarray) -> Tensor:
        """Logits ``(B, 2)`` for discrete sentences given as content ids (BOS removed)."""
        return self._from_embeddings(ag.embedding(self.emb, np.asarray(tokens)))

    def classify_ids(self, ids: np.ndarray) -> Tensor:
        """Logits for framed id matrices (drops the leading BOS)."""
        return self(np.asarray(ids)[:, 1:])

    def classify_soft(self, s: SoftSequence) -> Tensor:
        x = ag.matmul(s.probs, self.emb)
        m = s.mask[:, :, None].astype(float)
        x = x * m + ag.mul(ag.reshape(self.emb[PAD], (1, 1, -1)), 1.0 - m)
        return self._from_embeddings(x)


class ConditionalLM(Module):
    """GRU language model whose initial state encodes a noun centroid and a style."""

    prefix = "lm"

    def __init__(self, cfg: ModelConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        E, S, H, V, D = cfg.emb_dim, cfg.style_dim, cfg.lm_hidden, cfg.vocab_size, cfg.noun_dim
        self.emb = self.param("emb", rng.normal((V, E), cfg.emb_std))
        self.style = self.param("style", rng.normal((2, S), cfg.emb_std))
        self.init_W = self.param("init.W", _uniform(rng, (D + S, H), D + S))
        self.init_b = self.param("init.b", np.zeros(H))
        self.gru = GRU(self, "gru", E, H, rng.spawn("gru"))
        self.out_W = self.param("out.W", _uniform(rng, (H, V), H))
        self.out_b = self.param("out.b", np.zeros(V))

    def init_output_bias(self, counts: np.ndarray) -> None:
        """Start the output layer at the add-one smoothed log unigram distribution."""
        c = np.asarray(counts, dtype=float) + 1.0
        self.out_b.data = np.log(c / c.sum())

    def init_state(self, centroids: np.ndarray, styles: np.ndarray) -> Tensor:
        """``h_lm = tanh(U [centroid; style] + b)``; centroids is ``(B, noun_dim)``."""
        s = ag.embedding(self.style, np.asarray(styles))
        return ag.tanh(ag.matmul(ag.concat([Tensor(centroids), s], axis=-1), self.init_W) + self.init_b)

    def step(self, h: Tensor, inp_emb: Tensor) -> tuple[Tensor, Tensor]:
        h = self.gru.step(self.gru.project(inp_emb), h)
        return h, ag.matmul(h, self.out_W) + self.out_b

    def next(self, h: Tensor, dist) -> tuple[Tensor, Tensor]:
        """One step fed with a distribution over the vocabulary; returns ``(h', p_hat)``."""
        d = ag.as_tensor(dist)
        if np.any(np.abs(d.data.sum(axis=-1) - 1.0) > 1e-6):
            raise ContractError("LM input must be a probability distribution")
        h, logits = self.step(h, ag.matmul(d, self.emb))
        return h, ag.softmax(logits, axis=-1)

    def teacher_forced(self, ids: np.ndarray, h0: Tensor) -> Tensor:
        """Logits ``(B, L-1, V)`` predicting ``ids[:, 1:]``."""
        ids = np.asarray(ids)
        L = int((ids != PAD).sum(axis=1).max())
        x = ag.embedding(self.emb, ids[:, : L - 1])
        xp = self.gru.project(x)
        h, out = h0, []
        for t in range(L - 1):
            h = self.gru.step(xp[:, t, :], h)
            out.append(ag.matmul(h, self.out_W) + self.out_b)
        return ag.stack(out, axis=1)

    def soft_log_probs(self, s: SoftSequence, h0: Tensor) -> Tensor:
        """``log p_hat_t`` for every step of a soft sequence, fed with ``W p_tilde``."""
        B, T, V = s.probs.shape
        h = h0
        inp = ag.embedding(self.emb, np.full(B, BOS))
        out = []
        for t in range(T):
            h, logits = self.step(h, inp)
            out.append(ag.log_softmax(logits, axis=-1))
            inp = ag.matmul(s.probs[:, t, :], self.emb)
        return ag.stack(out, axis=1)


def token_nll(logits: Tensor, targets: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Per-position NLL ``(B, L)`` of integer targets and the non-PAD mask."""
    logp = ag.log_softmax(logits, axis=-1)
    B, L, V = logits.shape
    targets = np.asarray(targets)[:, :L]
    picked = logp[np.arange(B)[:, None], np.arange(L)[None, :], targets]
    return ag.scale(picked, -1.0), targets != PAD


@dataclass
class StyleTransferModel:
    """Every trainable component plus the separate evaluation classifier."""

    cfg: ModelConfig
    gen: Generator
    clf: StyleClassifier
    lm: ConditionalLM
    eval_clf: StyleClassifier

    @classmethod
    def create(cls, cfg: ModelConfig, rng: Rng) -> "StyleTransferModel":
        return cls(cfg, Generator(cfg, rng.spawn("generator")),
                   StyleClassifier(cfg, rng.spawn("classifier")),
                   ConditionalLM(cfg, rng.spawn("lm")),
                   StyleClassifier(cfg, rng.spawn("eval-classifier"), prefix="eval_clf"))

    def modules(self) -> Sequence[Module]:
        return (self.gen, self.clf, self.lm, self.eval_clf)

    def params(self) -> dict[str, Tensor]:
        out = {}
        for m in self.modules():
            out.update(m.params())
        return out

    def snap_to_float32(self) -> None:
        for m in self.modules():
            m.snap_to_float32()
