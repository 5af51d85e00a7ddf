"""Command-line entry point: ``scpm {synth,train,transfer,evaluate}``.

Exit codes are 0 on success, 1 on a contract or validation error and 2 on an
I/O error. A run is driven by one JSON config; command-line flags win over it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .autograd import ContractError
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (STYLE_NAMES, SynthSpec, encode_batch, generate_synthetic, load_synth_spec,
                   parse_style, write_synthetic)
from .evaluation import evaluate
from .lexical import TagLexicon, load_embeddings
from .pipeline import (FitResult, TrainingAborted, fit_joint, init_model, load_data_dir,
                       run_classifier_phase, run_lm_phase)
from .training import TrainConfig

log = logging.getLogger("scpm")

PHASES = ("lm", "classifier", "joint")
LM_CKPT, CLF_CKPT, FINAL_CKPT = "lm.ckpt", "classifier.ckpt", "joint.ckpt"
LOG_NAME = "train.log.jsonl"


@dataclass
class RunConfig:
    """Training hyperparameters plus the paths and options of every subcommand."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str | None = None
    lexicon: str | None = None
    embeddings: str | None = None
    out_dir: str | None = None
    checkpoint: str | None = None
    input: str | None = None
    output: str | None = None
    target_style: str | None = None
    originals: str | None = None
    transferred: str | None = None
    references: str | None = None
    phase: str = "all"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        train_keys = {f.name for f in fields(TrainConfig)}
        own_keys = {f.name for f in fields(cls)} - {"train"}
        unknown = set(d) - train_keys - own_keys
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        train = TrainConfig.from_dict({k: v for k, v in d.items() if k in train_keys})
        return cls(train=train, **{k: v for k, v in d.items() if k in own_keys})

    def to_dict(self) -> dict:
        out = self.train.to_dict()
        out.update({f.name: getattr(self, f.name) for f in fields(self) if f.name != "train"})
        return out


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as f:
        return RunConfig.from_dict(json.load(f))


def _override(rc: RunConfig, args: argparse.Namespace, mapping: dict[str, str]) -> None:
    for arg, attr in mapping.items():
        value = getattr(args, arg, None)
        if value is not None:
            setattr(rc, attr, value)
    if getattr(args, "seed", None) is not None:
        rc.train.seed = args.seed


def _require(value, what: str):
    if value is None:
        raise ContractError(f"{what} is required")
    return value


# --- synth ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = load_synth_spec(args.config) if args.config else SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(_require(args.out, "--out"))
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ContractError(f"{out} exists and is not empty (use --force to overwrite)")
    data = generate_synthetic(spec)
    write_synthetic(data, out)
    with open(out / "synth_spec.json", "w", encoding="utf-8") as f:
        json.dump(spec.to_dict(), f, indent=2)
    for (style, split), corpus in sorted(data.corpora.items()):
        print(f"{STYLE_NAMES[style]}.{split}: {len(corpus.sentences)} sentences")
    print(f"lexicon: {len(data.lexicon)} nouns, embeddings: {len(data.embeddings)} words")
    return 0


# --- train ------------------------------------------------------------------------

def _phases(phase: str) -> tuple[str, ...]:
    if phase == "all":
        return PHASES
    if phase not in PHASES:
        raise ContractError(f"unknown phase {phase!r}")
    return (phase,)


def _fresh(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ContractError(f"{path} exists (use --force to overwrite)")


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    _override(rc, args, {"data": "data_dir", "out": "out_dir", "phase": "phase"})
    cfg = rc.train
    out = Path(_require(rc.out_dir, "--out"))
    data_dir = _require(rc.data_dir, "--data")
    phases = _phases(rc.phase)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run_config.json", "w", encoding="utf-8") as f:
        json.dump(rc.to_dict(), f, indent=2)

    model = vocab = None
    if phases[0] != "lm":
        if not (out / LM_CKPT).exists():
            raise ContractError(f"language model checkpoint required: {out / LM_CKPT} not found")
        if phases[0] == "joint" and not (out / CLF_CKPT).exists():
            raise ContractError(f"classifier checkpoint required: {out / CLF_CKPT} not found")
        src = out / (LM_CKPT if phases[0] == "classifier" else CLF_CKPT)
        model, vocab, _ = load_checkpoint(src)
    data = load_data_dir(data_dir, cfg, rc.lexicon, rc.embeddings, vocab)

    for phase in phases:
        if phase == "lm":
            _fresh(out / LM_CKPT, args.force)
            model = init_model(data, cfg)
            hist = run_lm_phase(model, data, cfg)
            save_checkpoint(out / LM_CKPT, model, data.vocab, config=cfg.to_dict(),
                            epoch=cfg.lm_epochs, phase="lm", extra={"history": hist})
        elif phase == "classifier":
            _fresh(out / CLF_CKPT, args.force)
            clf_hist, eval_hist = run_classifier_phase(model, data, cfg)
            save_checkpoint(out / CLF_CKPT, model, data.vocab, config=cfg.to_dict(),
                            epoch=cfg.clf_epochs, phase="classifier",
                            extra={"history": clf_hist, "eval_history": eval_hist})
        else:
            _fresh(out / FINAL_CKPT, args.force)
            log_path = out / LOG_NAME
            log_path.unlink(missing_ok=True)
            res = fit_joint(FitResult(model), data, cfg, ckpt_dir=out, log_path=log_path)
            model = res.model
            save_checkpoint(out / FINAL_CKPT, model, data.vocab, config=cfg.to_dict(),
                            epoch=cfg.epochs - 1, phase="joint")
        print(f"phase {phase} done")
    return 0


# --- transfer ---------------------------------------------------------------------

def transfer_lines(model, vocab, lines: list[str], target: int, max_tokens: int = 15,
                   batch: int = 256) -> list[str]:
    """Greedy transfer of raw lines; overlong lines become blank outputs."""
    out = [""] * len(lines)
    keep = []
    for i, line in enumerate(lines):
        toks = line.split()
        if len(toks) > max_tokens:
            print(f"warning: line {i + 1} has {len(toks)} tokens (> {max_tokens}); skipped",
                  file=sys.stderr)
        else:
            keep.append((i, toks))
    for lo in range(0, len(keep), batch):
        chunk = keep[lo:lo + batch]
        ids = encode_batch([t for _, t in chunk], vocab, max_tokens)
        tgt = np.full(len(chunk), target)
        gen = model.gen.greedy(ids, 1 - tgt, tgt)
        for (i, _), g in zip(chunk, gen):
            out[i] = " ".join(vocab.itos[k] for k in g)
    return out


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def cmd_transfer(args) -> int:
    rc = load_run_config(args.config)
    _override(rc, args, {"checkpoint": "checkpoint", "input": "input", "out": "output",
                         "target_style": "target_style"})
    target = parse_style(_require(rc.target_style, "--target-style"))
    model, vocab, header = load_checkpoint(_require(rc.checkpoint, "--checkpoint"))
    max_tokens = header.get("config", {}).get("max_tokens", rc.train.max_tokens)
    lines = _read_lines(_require(rc.input, "--input"))
    outputs = transfer_lines(model, vocab, lines, target, max_tokens)
    if rc.output is not None and Path(rc.output).exists() and not args.force:
        raise ContractError(f"{rc.output} exists (use --force to overwrite)")
    _emit("".join(o + "\n" for o in outputs), rc.output)
    return 0


# --- evaluate ---------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    rc = load_run_config(args.config)
    _override(rc, args, {"checkpoint": "checkpoint", "originals": "originals",
                         "transferred": "transferred", "references": "references",
                         "target_style": "target_style", "data": "data_dir",
                         "lexicon": "lexicon", "embeddings": "embeddings", "out": "output"})
    target = parse_style(_require(rc.target_style, "--target-style"))
    model, vocab, _ = load_checkpoint(_require(rc.checkpoint, "--checkpoint"))
    lex_path = rc.lexicon or (Path(rc.data_dir) / "lexicon.tsv" if rc.data_dir else None)
    emb_path = rc.embeddings or (Path(rc.data_dir) / "embeddings.txt" if rc.data_dir else None)
    lexicon = TagLexicon.load(_require(lex_path, "--lexicon or --data"))
    table = load_embeddings(_require(emb_path, "--embeddings or --data"))
    originals = [l.split() for l in _read_lines(_require(rc.originals, "--originals"))]
    transferred = [l.split() for l in _read_lines(_require(rc.transferred, "--transferred"))]
    refs = [l.split() for l in _read_lines(rc.references)] if rc.references else None
    report = evaluate(originals, transferred, [target] * len(transferred), model.eval_clf,
                      model.lm, lexicon, table, vocab, refs)
    _emit(report.to_json() + "\n", rc.output)
    return 0


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scpm", description="Style transfer with noun-preservation constraints.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (synth, train) or file (transfer, evaluate)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic two-style corpus")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="run training phases")
    t.add_argument("--data", help="directory with corpora, lexicon.tsv and embeddings.txt")
    t.add_argument("--phase", choices=("lm", "classifier", "joint", "all"))
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("transfer", parents=[common], help="rewrite sentences in the target style")
    x.add_argument("--checkpoint")
    x.add_argument("--input")
    x.add_argument("--target-style", choices=STYLE_NAMES)
    x.set_defaults(func=cmd_transfer)

    e = sub.add_parser("evaluate", parents=[common], help="score transferred sentences")
    e.add_argument("--checkpoint")
    e.add_argument("--originals")
    e.add_argument("--transferred")
    e.add_argument("--references")
    e.add_argument("--target-style", choices=STYLE_NAMES)
    e.add_argument("--data")
    e.add_argument("--lexicon")
    e.add_argument("--embeddings")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ContractError, TrainingAborted, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
