"""
Measuring content preservation
==============================

Transfer quality is judged by how many source nouns survive, by BLEU against
the source, and by the style classifier. This script builds a synthetic
embedding table and scores a handful of hand-written rewrites.
"""
from scpm.data import SynthSpec, generate_synthetic
from scpm.evaluation import bleu, noun_preservation_rate, pos_distance_metric
from scpm.lexical import EmbeddingTable, TagLexicon
from scpm.training import gamma

synth = generate_synthetic(SynthSpec(sentences_per_style=20))
table = EmbeddingTable(dict(synth.embeddings), 100)
lexicon = TagLexicon(set(synth.lexicon))

source = "the food and the staff were great".split()
rewrites = {
    "same nouns": "the food and the staff were awful",
    "synonym swap": "the meal and the waiter were awful",
    "one noun lost": "the food was awful",
    "wrong nouns": "the place was awful",
    "no nouns": "it was awful",
}

# the count-mismatch weight grows with the difference in noun counts
print("gamma(2, 2) =", gamma(2, 2), " gamma(2, 1) =", gamma(2, 1), " gamma(2, 4) =", gamma(2, 4))
print()
print(f"{'rewrite':<15} {'pos_distance':>12} {'BLEU':>7} {'nouns kept':>10}")
for name, text in rewrites.items():
    out = text.split()
    pos = pos_distance_metric([(source, out)], lexicon, table).mean
    keep = noun_preservation_rate([(source, out)], lexicon, table)
    print(f"{name:<15} {pos:>12.3f} {bleu([out], [source]):>7.2f} {keep:>10.0f}")

# pos_distance only sums over matched pairs, so dropping nouns entirely
# scores 0 here; the noun preservation column catches those rewrites

# BLEU pools counts over the corpus, so one short candidate costs the whole set
cands = ["a b c d".split(), "w x y z".split()]
refs = ["a b c d e".split(), "w x y z".split()]
print("\ncorpus BLEU with one short candidate:", round(bleu(cands, refs), 2))
