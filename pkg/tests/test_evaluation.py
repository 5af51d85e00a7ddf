import copy
import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_config
from scpm import autograd as ag
from scpm.autograd import ContractError, Rng, Tape
from scpm.data import STYLE_X, STYLE_Y, SynthSpec, decode, encode_batch
from scpm.evaluation import (REPORT_SCHEMA, bleu, evaluate, noun_preservation_rate, perplexity,
                             pos_distance_metric, sentence_bleu, style_accuracy)
from scpm.lexical import EmbeddingTable, TagLexicon
from scpm.model import StyleClassifier, token_nll


def toks(s: str) -> list[str]:
    return s.split()


class TestBleu:
    def test_identical(self):
        sents = [toks("the food was great"), toks("we liked it a lot")]
        assert bleu(sents, sents) == pytest.approx(100.0, abs=1e-12)

    def test_brevity_only(self):
        # every precision is 1; BP = exp(1 - 5/4)
        assert bleu([toks("a b c d")], [toks("a b c d e")]) == pytest.approx(100 * math.exp(-0.25), abs=1e-10)
        assert round(bleu([toks("a b c d")], [toks("a b c d e")]), 2) == 77.88

    def test_pooled_over_corpus(self):
        cands = [toks("a b c d"), toks("w x y z")]
        refs = [toks("a b c d e"), toks("w x y z")]
        assert bleu(cands, refs) == pytest.approx(100 * math.exp(1 - 9 / 8), abs=1e-10)

    def test_partial_overlap_hand_computed(self):
        cand, ref = toks("the cat sat on the mat"), toks("the cat is on the mat")
        # clipped matches: 1-grams 5/6, 2-grams 3/5, 3-grams 1/4, 4-grams 0/3
        assert bleu([cand], [ref]) == 0.0
        p = [5 / 6, (3 + 1) / (5 + 1), (1 + 1) / (4 + 1), (0 + 1) / (3 + 1)]
        expected = 100 * math.exp(sum(math.log(x) for x in p) / 4)
        assert sentence_bleu(cand, ref) == pytest.approx(expected, abs=1e-10)

    def test_clipping(self):
        # "the" appears once in the reference, so only one of seven counts
        assert sentence_bleu(toks("the the the the the the the"), toks("the cat")) < 20

    def test_no_4gram_overlap_is_zero(self):
        assert bleu([toks("a b c d e")], [toks("a b c x e")]) == 0.0

    def test_longer_candidate_no_penalty(self):
        assert bleu([toks("a b c d e")], [toks("a b c d")]) == pytest.approx(100 * math.sqrt(math.sqrt(4 / 5 * 3 / 4 * 2 / 3 * 1 / 2)))

    def test_empty(self):
        with pytest.raises(ContractError):
            bleu([], [])

    def test_misaligned(self):
        with pytest.raises(ContractError, match="2 candidates vs 1"):
            bleu([["a"], ["b"]], [["a"]])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcdef"), min_size=4, max_size=8), min_size=2, max_size=5),
           st.randoms(use_true_random=False))
    def test_order_invariant(self, sents, rnd):
        refs = [s[::-1] for s in sents]
        order = list(range(len(sents)))
        rnd.shuffle(order)
        a = bleu(sents, refs)
        b = bleu([sents[i] for i in order], [refs[i] for i in order])
        assert a == pytest.approx(b, abs=1e-9)
        assert 0.0 <= a <= 100.0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=6), min_size=1, max_size=4),
           st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=6), min_size=1, max_size=4))
    def test_hundred_iff_identical(self, cands, refs):
        n = min(len(cands), len(refs))
        cands, refs = cands[:n], refs[:n]
        score = bleu(cands, refs)
        if cands == refs and all(len(c) >= 4 for c in cands):
            assert score == pytest.approx(100.0)
        elif cands != refs:
            assert score < 100.0 - 1e-9


def synth_table(tiny_synth) -> tuple[TagLexicon, EmbeddingTable]:
    emb = dict(tiny_synth.embeddings)
    return TagLexicon(set(tiny_synth.lexicon)), EmbeddingTable(emb, next(iter(emb.values())).shape[0])


class TestPosMetric:
    def test_identical_pairs(self, tiny_synth):
        lex, table = synth_table(tiny_synth)
        pairs = [(toks("the food was great"), toks("the food was great")),
                 (toks("the staff and the venue"), toks("the staff and the venue"))]
        assert pos_distance_metric(pairs, lex, table).mean == pytest.approx(0.0, abs=1e-12)

    def test_synonym_swap_bounded(self, tiny_synth):
        lex, table = synth_table(tiny_synth)
        for cls in SynthSpec().noun_classes:
            for a in cls:
                for b in cls:
                    r = pos_distance_metric([(["the", a, "was", "great"], ["the", b, "was", "bad"])], lex, table)
                    assert r.mean <= 0.2

    def test_noun_free_excluded(self, tiny_synth):
        lex, table = synth_table(tiny_synth)
        r = pos_distance_metric([(toks("it was great"), toks("food")), (toks("the food"), toks("the food"))],
                                lex, table)
        assert r.excluded_noun_free == 1 and r.values[0] is None and r.mean == pytest.approx(0.0, abs=1e-12)

    def test_non_noun_tokens_irrelevant(self, tiny_synth):
        lex, table = synth_table(tiny_synth)
        r = pos_distance_metric([(toks("the food and staff were great"), toks("staff food awful so"))], lex, table)
        assert r.mean == pytest.approx(0.0, abs=1e-12)

    def test_noun_preservation(self, tiny_synth):
        lex, table = synth_table(tiny_synth)
        pairs = [(toks("the food was great"), toks("the meal was awful")),
                 (toks("the food was great"), toks("the staff was awful")),
                 (toks("it was great"), toks("it was awful"))]
        assert noun_preservation_rate(pairs, lex, table) == 0.5


class TestAccuracy:
    def test_untrained_rejected(self, tiny_data):
        clf = StyleClassifier(tiny_config().model_config(len(tiny_data.vocab)), Rng(0))
        with pytest.raises(ContractError, match="not been trained"):
            style_accuracy([["food"]], [0], clf, tiny_data.vocab)

    def test_constant_classifier_is_chance(self, pretrained, tiny_data):
        clf = copy.deepcopy(pretrained.model.eval_clf)
        clf.fc_W.data[:] = 0.0
        clf.fc_b.data[:] = [1.0, 0.0]
        sents = [decode(r, tiny_data.vocab) for r in tiny_data.split(STYLE_X, "test")[:20]]
        assert style_accuracy(sents * 2, [0] * 20 + [1] * 20, clf, tiny_data.vocab) == 0.5

    def test_real_sentences_score_high(self, pretrained, tiny_data):
        sents, styles = [], []
        for s in (STYLE_X, STYLE_Y):
            rows = tiny_data.split(s, "test")
            sents += [decode(r, tiny_data.vocab) for r in rows]
            styles += [s] * len(rows)
        assert style_accuracy(sents, styles, pretrained.model.eval_clf, tiny_data.vocab) > 0.9

    def test_matches_recount(self, pretrained, tiny_data):
        clf = pretrained.model.eval_clf
        rows = tiny_data.split(STYLE_Y, "test")[:30]
        sents = [decode(r, tiny_data.vocab) for r in rows]
        target = [STYLE_X] * 15 + [STYLE_Y] * 15
        recount = 0
        for s, t in zip(sents, target):
            logits = clf.classify_ids(encode_batch([s], tiny_data.vocab)).data[0]
            recount += int(np.argmax(logits) == t)
        assert style_accuracy(sents, target, clf, tiny_data.vocab) == recount / 30


class TestPerplexity:
    def test_uniform_lm_gives_vocab_size(self, pretrained, tiny_data, tiny_synth):
        lm = copy.deepcopy(pretrained.model.lm)
        lm.out_W.data[:] = 0.0
        lm.out_b.data[:] = 0.0
        lex, table = synth_table(tiny_synth)
        sents = [decode(r, tiny_data.vocab) for r in tiny_data.split(STYLE_X, "test")[:10]]
        ppl = perplexity(sents, [0] * 10, lm, lex, table, tiny_data.vocab)
        assert ppl == pytest.approx(len(tiny_data.vocab), rel=1e-12)

    def test_overfit_lm_below_1_1(self, pretrained, tiny_data, tiny_synth):
        lm = copy.deepcopy(pretrained.model.lm)
        lex, table = synth_table(tiny_synth)
        sents = [decode(r, tiny_data.vocab) for r in tiny_data.split(STYLE_X, "valid")[:5]]
        ids = encode_batch(sents, tiny_data.vocab)
        cents = tiny_data.centroids[(STYLE_X, "valid")][:5]
        styles = np.zeros(5, int)
        params, state = lm.params(), ag.AdamState()
        lm.set_trainable(True)
        for _ in range(200):
            ag.zero_grads(params.values())
            with Tape() as tape:
                n, m = token_nll(lm.teacher_forced(ids, lm.init_state(cents, styles)), ids[:, 1:])
                loss = ag.scale(ag.tsum(n * m.astype(float)), 1.0 / m.sum())
            ag.backward(loss, tape)
            ag.adam_step(params, state, 0.01)
        assert perplexity(sents, styles, lm, lex, table, tiny_data.vocab) < 1.1

    def test_at_least_one(self, pretrained, tiny_data, tiny_synth):
        lex, table = synth_table(tiny_synth)
        sents = [decode(r, tiny_data.vocab) for r in tiny_data.split(STYLE_Y, "test")[:10]]
        assert perplexity(sents, [1] * 10, pretrained.model.lm, lex, table, tiny_data.vocab) >= 1.0


class TestReport:
    def run(self, pretrained, tiny_data, tiny_synth, transferred=None, references=None):
        lex, table = synth_table(tiny_synth)
        orig = [decode(r, tiny_data.vocab) for r in tiny_data.split(STYLE_X, "test")[:12]]
        trans = orig if transferred is None else transferred
        m = pretrained.model
        return evaluate(orig, trans, [STYLE_Y] * len(trans), m.eval_clf, m.lm, lex, table,
                        tiny_data.vocab, references)

    def test_identity_transfer(self, pretrained, tiny_data, tiny_synth):
        r = self.run(pretrained, tiny_data, tiny_synth)
        assert r.bleu == pytest.approx(100.0) and r.pos_distance == pytest.approx(0.0, abs=1e-12)
        assert r.n == 12 and len(r.per_sentence) == 12

    def test_schema(self, pretrained, tiny_data, tiny_synth):
        r = self.run(pretrained, tiny_data, tiny_synth)
        jsonschema.validate(json.loads(r.to_json()), REPORT_SCHEMA)
        jsonschema.validate(r.to_dict(per_sentence=False), REPORT_SCHEMA)

    def test_misaligned_names_counts(self, pretrained, tiny_data, tiny_synth):
        with pytest.raises(ContractError, match="12 originals vs 3 transferred"):
            self.run(pretrained, tiny_data, tiny_synth, transferred=[["food"]] * 3)

    def test_external_references(self, pretrained, tiny_data, tiny_synth):
        refs = [["completely", "different", "words", "here"]] * 12
        r = self.run(pretrained, tiny_data, tiny_synth, references=refs)
        assert r.bleu == 0.0

    def test_deterministic(self, pretrained, tiny_data, tiny_synth):
        a = self.run(pretrained, tiny_data, tiny_synth).to_json()
        b = self.run(pretrained, tiny_data, tiny_synth).to_json()
        assert a == b
