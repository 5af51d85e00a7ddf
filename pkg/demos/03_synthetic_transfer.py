"""
Style transfer on a synthetic review corpus
===========================================

Generates two styles of restaurant sentences, pretrains the language model and
both classifiers, then trains the generator with all four loss terms. A small
model is used so the whole script finishes in about a minute; pass
``--desk`` for the sizes used in the acceptance run (about six minutes).
"""
import logging
import sys
import time

from scpm.data import SynthSpec, generate_synthetic
from scpm.pipeline import data_from_synthetic, desk_config, evaluate_split, fit_joint, format_samples, pretrain
from scpm.training import TrainConfig, mean_epoch_losses

logging.basicConfig(level=logging.INFO, format="%(message)s")

if "--desk" in sys.argv:
    cfg = desk_config()
else:
    cfg = TrainConfig(lr=5e-3, batch_size=64,
                      model=dict(emb_dim=32, hidden=64, style_dim=16, attn_dim=64, filters=32,
                                 lm_hidden=128, context_output=True))

synth = generate_synthetic(SynthSpec())
data = data_from_synthetic(synth, cfg)
print("vocabulary:", len(data.vocab), "tokens")
print("train sentences per style:", len(data.split(0, "train")))

t0 = time.time()
pre = pretrain(data, cfg)
print(f"pretraining took {time.time() - t0:.0f}s")
print("language model valid perplexity:", round(pre.lm_history[-1]["valid_ppl"], 2))
print("classifier valid accuracy:", pre.clf_history[-1]["valid_acc"])

t0 = time.time()
res = fit_joint(pre, data, cfg)
print(f"joint training took {time.time() - t0:.0f}s")
print("mean total loss per epoch:", [round(v, 2) for v in mean_epoch_losses(res.records)])

ev = evaluate_split(res.model, data, "test")
r = ev.report
print(f"\naccuracy {r.accuracy:.3f}  BLEU {r.bleu:.1f}  pos_distance {r.pos_distance:.3f}  "
      f"perplexity {r.perplexity:.2f}  noun preservation {ev.noun_preservation:.3f}")

# a few rewrites in each direction
n_x = len(data.split(0, "test"))
print(format_samples(ev.samples, 5))
print(format_samples(ev.samples[n_x:], 5))
