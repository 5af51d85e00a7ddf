"""End-to-end helpers: data loading, the three phases and transfer over a split."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import Rng
from .checkpoint import save_checkpoint
from .data import (STYLE_X, STYLE_Y, SyntheticData, Vocabulary, corpus_filename, decode,
                   load_corpus)
from .evaluation import EvalReport, evaluate, noun_preservation_rate
from .lexical import EmbeddingTable, TagLexicon, load_embeddings
from .model import StyleTransferModel
from .training import (StyleData, TrainConfig, pretrain_classifier, pretrain_lm, prepare_data,
                       train_joint, unigram_counts)

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")

# Sizes used for the single-CPU synthetic experiment. The defaults of
# ModelConfig keep the full-scale sizes (hidden 700, style 200).
DESK_MODEL = {"emb_dim": 100, "hidden": 256, "style_dim": 100, "attn_dim": 256, "filters": 64,
              "lm_hidden": 700, "context_output": True}


def desk_config(**overrides) -> TrainConfig:
    """Default hyperparameters with the desk-scale model sizes."""
    return TrainConfig(**{"model": dict(DESK_MODEL), **overrides})


def load_data_dir(data_dir, cfg: TrainConfig, lexicon_path=None, embeddings_path=None,
                  vocab: Vocabulary | None = None) -> StyleData:
    """Load ``{x,y}.{train,valid,test}.txt`` plus lexicon and embeddings from a directory."""
    d = Path(data_dir)
    corpora = {(s, sp): load_corpus(d / corpus_filename(s, sp), s, sp, cfg.max_tokens)
               for s in (STYLE_X, STYLE_Y) for sp in SPLITS}
    lexicon = TagLexicon.load(lexicon_path or d / "lexicon.tsv")
    table = load_embeddings(embeddings_path or d / "embeddings.txt")
    return prepare_data(corpora, lexicon, table, cfg.min_count, cfg.max_tokens, vocab)


def data_from_synthetic(sd: SyntheticData, cfg: TrainConfig) -> StyleData:
    table = EmbeddingTable(dict(sd.embeddings), next(iter(sd.embeddings.values())).shape[0])
    return prepare_data(sd.corpora, TagLexicon(set(sd.lexicon)), table, cfg.min_count, cfg.max_tokens)


@dataclass
class FitResult:
    model: StyleTransferModel
    lm_history: list[dict] = field(default_factory=list)
    clf_history: list[dict] = field(default_factory=list)
    eval_clf_history: list[dict] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)


def init_model(data: StyleData, cfg: TrainConfig) -> StyleTransferModel:
    model = StyleTransferModel.create(cfg.model_config(len(data.vocab)), Rng(cfg.seed).spawn("init"))
    model.lm.init_output_bias(unigram_counts(data))
    # every phase boundary is a float32 snapshot, so resuming from a checkpoint
    # and continuing in memory give identical results
    model.snap_to_float32()
    return model


def run_lm_phase(model: StyleTransferModel, data: StyleData, cfg: TrainConfig) -> list[dict]:
    hist = pretrain_lm(model.lm, data, cfg, Rng(cfg.seed).spawn("phase-lm"))
    model.lm.snap_to_float32()
    return hist


def run_classifier_phase(model: StyleTransferModel, data: StyleData,
                         cfg: TrainConfig) -> tuple[list[dict], list[dict]]:
    """Train the feedback classifier and the separately initialised evaluation classifier."""
    rng = Rng(cfg.seed)
    clf = pretrain_classifier(model.clf, data, cfg, rng.spawn("phase-classifier"))
    ev = pretrain_classifier(model.eval_clf, data, cfg, rng.spawn("phase-eval-classifier"))
    model.clf.snap_to_float32()
    model.eval_clf.snap_to_float32()
    return clf, ev


def pretrain(data: StyleData, cfg: TrainConfig) -> FitResult:
    """Phases one and two: language model, then the feedback and evaluation classifiers."""
    res = FitResult(init_model(data, cfg))
    res.lm_history = run_lm_phase(res.model, data, cfg)
    res.clf_history, res.eval_clf_history = run_classifier_phase(res.model, data, cfg)
    return res


class TrainingAborted(RuntimeError):
    """A non-finite value stopped training; ``checkpoint`` holds the last good state."""

    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


def fit_joint(pre: FitResult, data: StyleData, cfg: TrainConfig, ckpt_dir=None, log_path=None) -> FitResult:
    """Phase three on a copy of the pretrained model.

    On a non-finite loss or gradient the parameters are left untouched by the
    optimiser; they are written to ``joint-abort.ckpt`` and ``TrainingAborted``
    is raised.
    """
    model = copy.deepcopy(pre.model)
    rng = Rng(cfg.seed).spawn("phase-joint")

    def on_epoch(epoch, _records):
        if ckpt_dir is not None:
            save_checkpoint(Path(ckpt_dir) / f"joint-epoch{epoch:02d}.ckpt", model, data.vocab,
                            config=cfg.to_dict(), epoch=epoch, phase="joint")

    try:
        records = train_joint(model, data, cfg, rng, log_path=log_path, on_epoch=on_epoch)
    except FloatingPointError as exc:
        dump = None
        if ckpt_dir is not None:
            dump = save_checkpoint(Path(ckpt_dir) / "joint-abort.ckpt", model, data.vocab,
                                   config=cfg.to_dict(), epoch=-1, phase="joint-abort",
                                   extra={"error": str(exc)})
        raise TrainingAborted(f"training aborted: {exc}", dump) from exc
    return FitResult(model, pre.lm_history, pre.clf_history, pre.eval_clf_history, records)


def transfer_split(model: StyleTransferModel, data: StyleData, split: str = "test",
                   batch: int = 256) -> list[tuple[list[str], list[str], int, int]]:
    """Greedy transfer of both styles of a split to the opposite style."""
    out = []
    for src in (STYLE_X, STYLE_Y):
        ids = data.split(src, split)
        for lo in range(0, len(ids), batch):
            chunk = ids[lo:lo + batch]
            s = np.full(len(chunk), src)
            gen = model.gen.greedy(chunk, s, 1 - s)
            for row, g in zip(chunk, gen):
                out.append((decode(row, data.vocab), [data.vocab.itos[i] for i in g], src, 1 - src))
    return out


@dataclass
class TransferEvaluation:
    report: EvalReport
    noun_preservation: float
    samples: list[tuple[list[str], list[str], int, int]]


def evaluate_split(model: StyleTransferModel, data: StyleData, split: str = "test") -> TransferEvaluation:
    rows = transfer_split(model, data, split)
    originals = [r[0] for r in rows]
    transferred = [r[1] for r in rows]
    targets = [r[3] for r in rows]
    report = evaluate(originals, transferred, targets, model.eval_clf, model.lm,
                      data.lexicon, data.table, data.vocab)
    npr = noun_preservation_rate(list(zip(originals, transferred)), data.lexicon, data.table)
    return TransferEvaluation(report, npr, rows)


def format_samples(rows: Sequence[tuple], k: int = 5) -> str:
    return "\n".join(f"[{'xy'[r[2]]}->{'xy'[r[3]]}] {' '.join(r[0])}  =>  {' '.join(r[1])}" for r in rows[:k])
