import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scpm.autograd import ContractError
from scpm.data import (BOS, EOS, PAD, UNK, Corpus, SynthSpec, build_vocab, decode, decode_stats,
                       encode, generate_synthetic, load_corpus, split_sizes, write_synthetic)
from scpm.lexical import TagLexicon, cosine, load_embeddings, tag_nouns


def corpus(*sentences, style=0):
    return Corpus([s.split() for s in sentences], style)


class TestLoadCorpus:
    def test_keeps_short_line(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("the food is great\n", encoding="utf-8")
        c = load_corpus(p, "x")
        assert c.sentences == [["the", "food", "is", "great"]] and c.dropped == 0

    def test_boundary_at_fifteen(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text(" ".join(["w"] * 15) + "\n" + " ".join(["w"] * 16) + "\n", encoding="utf-8")
        c = load_corpus(p, "y")
        assert len(c) == 1 and c.dropped == 1 and c.style == 1

    def test_count_oracle(self, tmp_path):
        rng = np.random.default_rng(0)
        lengths = rng.integers(1, 25, size=200)
        p = tmp_path / "c.txt"
        p.write_text("".join(" ".join(["t"] * int(n)) + "\n" for n in lengths), encoding="utf-8")
        overlong = int((lengths > 15).sum())
        c = load_corpus(p, 0)
        assert len(c) == 200 - overlong and c.dropped == overlong

    def test_empty_after_filter(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text(" ".join(["w"] * 20) + "\n", encoding="utf-8")
        with pytest.raises(ContractError):
            load_corpus(p, 0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_corpus(tmp_path / "nope.txt", 0)


class TestVocab:
    def test_strictly_more_than_min_count(self):
        v = build_vocab([corpus(*["a"] * 5, *["b"] * 6)], min_count=5)
        assert "a" not in v and "b" in v

    def test_empty_list_rejected(self):
        with pytest.raises(ContractError):
            build_vocab([])

    def test_tie_order(self):
        v = build_vocab([corpus(*(["b a"] * 10))], min_count=0)
        assert v.id("a") == 4 and v.id("b") == 5

    def test_frequency_order_and_reserved(self):
        v = build_vocab([corpus("c c c b b a")], min_count=0)
        assert v.itos == ["<PAD>", "<BOS>", "<EOS>", "<UNK>", "c", "b", "a"]

    def test_joint_over_styles_and_deterministic(self):
        cs = [corpus("x y", "x"), corpus("z", style=1)]
        assert build_vocab(cs, 0) == build_vocab(cs, 0)
        assert "z" in build_vocab(cs, 0)


VOCAB = build_vocab([corpus("good bad food service the is was")], min_count=0)
WORDS = [w for w in VOCAB.itos[4:]]


class TestEncodeDecode:
    def test_single_token(self):
        s = encode(["good"], VOCAB)
        assert s.ids.tolist() == [BOS, VOCAB.id("good"), EOS] + [PAD] * 14
        assert s.true_length == 3

    def test_unknown_token(self):
        assert encode(["zebra"], VOCAB).ids[1] == UNK

    def test_overlong_rejected(self):
        with pytest.raises(ContractError):
            encode(["good"] * 16, VOCAB)

    def test_empty_sentence(self):
        assert decode(encode([], VOCAB), VOCAB) == []

    def test_inner_pad_is_stripped_and_counted(self):
        before = decode_stats.inner_pad
        ids = [BOS, VOCAB.id("good"), PAD, VOCAB.id("food"), EOS, PAD]
        assert decode(ids, VOCAB) == ["good", "food"]
        assert decode_stats.inner_pad == before + 1

    def test_out_of_range_id(self):
        with pytest.raises(ContractError):
            decode([BOS, 999, EOS], VOCAB)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from(WORDS), max_size=15))
    def test_round_trip_and_framing(self, sent):
        s = encode(sent, VOCAB)
        assert decode(s, VOCAB) == sent
        assert s.ids[0] == BOS and s.ids[s.true_length - 1] == EOS
        assert np.all(s.ids[s.true_length:] == PAD)
        assert s.true_length - 2 <= 15 and len(s.ids) == 17


class TestSynthetic:
    def test_deterministic_bytes(self, tmp_path):
        spec = SynthSpec(sentences_per_style=100)
        a, b = tmp_path / "a", tmp_path / "b"
        write_synthetic(generate_synthetic(spec), a)
        write_synthetic(generate_synthetic(SynthSpec(sentences_per_style=100)), b)
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name

    def test_lexicon_size(self):
        sd = generate_synthetic(SynthSpec(sentences_per_style=50))
        assert len(sd.lexicon) == 12 == len(set(sd.lexicon))

    def test_overlapping_style_words_rejected(self):
        with pytest.raises(ContractError):
            generate_synthetic(SynthSpec(style_words=[["good", "fine"], ["bad", "fine"]]))

    def test_embedding_cosine_bands(self, tmp_path):
        spec = SynthSpec(sentences_per_style=50)
        write_synthetic(generate_synthetic(spec), tmp_path)
        table = load_embeddings(tmp_path / "embeddings.txt")
        for c1, cls1 in enumerate(spec.noun_classes):
            for c2, cls2 in enumerate(spec.noun_classes):
                for a in cls1:
                    for b in cls2:
                        if a == b:
                            continue
                        cos = cosine(table[a], table[b])
                        if c1 == c2:
                            assert cos >= 0.8
                        else:
                            assert cos <= 0.2

    def test_sentence_composition(self):
        spec = SynthSpec(sentences_per_style=300)
        sd = generate_synthetic(spec)
        lex = TagLexicon(set(sd.lexicon))
        for (style, split), c in sd.corpora.items():
            words = set(spec.style_words[style])
            for sent, truth in zip(c.sentences, sd.nouns[(style, split)]):
                assert sum(t in words for t in sent) == 1
                nouns = tag_nouns(sent, lex).tokens
                assert len(nouns) >= 1
                assert nouns == truth

    def test_split_sizes(self):
        assert split_sizes(2000) == (1400, 200, 400)
        assert split_sizes(1005) == (704, 100, 201)
        sd = generate_synthetic(SynthSpec(sentences_per_style=1005))
        assert [len(sd.corpora[(0, s)]) for s in ("train", "valid", "test")] == [704, 100, 201]
