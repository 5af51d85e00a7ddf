import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scpm.autograd import ContractError
from scpm.lexical import (EmbeddingTable, FormatError, TagLexicon, centroid, cosine, embed_nouns,
                          load_annotations, load_embeddings, tag_nouns)


def write_glove(path, rows, dim=100):
    path.write_text("".join(f"{t} " + " ".join(str(x) for x in v) + "\n" for t, v in rows),
                    encoding="utf-8")


class TestTagger:
    def test_single_noun(self):
        n = tag_nouns("the food is great".split(), TagLexicon({"food"}))
        assert n.tokens == ["food"] and n.count == 1

    def test_order_and_count(self):
        n = tag_nouns("the food and the service".split(), TagLexicon({"food", "service"}))
        assert n.tokens == ["food", "service"] and n.count == 2

    def test_no_nouns(self):
        assert tag_nouns("it was great".split(), TagLexicon({"food"})).count == 0

    def test_duplicates_kept(self):
        assert tag_nouns("food and food".split(), TagLexicon({"food"})).tokens == ["food", "food"]

    def test_reserved_never_nouns(self):
        lex = TagLexicon({"<UNK>", "food"}, suffix_rules={"K>": True})
        assert tag_nouns(["<UNK>", "<PAD>", "food"], lex).tokens == ["food"]

    def test_lexicon_precedes_suffix_rules(self):
        lex = TagLexicon({"happiness"}, suffix_rules={"ness": False, "tion": True}, non_nouns={"station"})
        assert lex.is_noun("happiness")
        assert not lex.is_noun("kindness")
        assert lex.is_noun("nation")
        assert not lex.is_noun("station")

    def test_load_lexicon_file(self, tmp_path):
        p = tmp_path / "lex.tsv"
        p.write_text("food\tNOUN\nmeal\tNOUN\n", encoding="utf-8")
        assert TagLexicon.load(p).nouns == {"food", "meal"}

    def test_annotations_file(self, tmp_path):
        p = tmp_path / "a.tsv"
        p.write_text("0\tfood meal\n1\t\n", encoding="utf-8")
        a = load_annotations(p)
        assert a[0].tokens == ["food", "meal"] and a[1].count == 0


class TestEmbeddings:
    def test_two_lines(self, tmp_path):
        p = tmp_path / "e.txt"
        write_glove(p, [("a", np.ones(100)), ("b", np.zeros(100))])
        t = load_embeddings(p)
        assert len(t) == 2 and t["a"].shape == (100,)

    def test_wrong_dimension_names_line(self, tmp_path):
        p = tmp_path / "e.txt"
        write_glove(p, [("a", np.ones(100)), ("b", np.ones(99))])
        with pytest.raises(FormatError, match="expected 100 dims at line 2"):
            load_embeddings(p)

    def test_duplicate_last_wins(self, tmp_path):
        p = tmp_path / "e.txt"
        write_glove(p, [("a", np.ones(100)), ("a", np.full(100, 2.0))])
        with pytest.warns(UserWarning, match="duplicate"):
            t = load_embeddings(p)
        assert t["a"][0] == 2.0 and len(t) == 1

    def test_embed_nouns_drops_missing(self):
        t = EmbeddingTable({"food": np.ones(100)})
        e = embed_nouns(["food"], t)
        assert len(e.vectors) == 1 and np.array_equal(e.vectors[0], np.ones(100))
        e = embed_nouns(["food", "zebra"], t)
        assert len(e.vectors) == 1 and e.dropped == [1]
        assert t.missing["zebra"] == 1

    def test_centroid_is_arithmetic_mean(self):
        rng = np.random.default_rng(0)
        vs = [rng.normal(size=100) for _ in range(3)]
        np.testing.assert_allclose(centroid(vs), (vs[0] + vs[1] + vs[2]) / 3, rtol=1e-14)
        assert np.array_equal(centroid([]), np.zeros(100))


class TestCosine:
    def test_identities(self):
        v = np.array([1.0, 2.0, -3.0])
        assert cosine(v, v) == pytest.approx(1.0)
        assert cosine([1, 0], [0, 1]) == 0.0
        assert cosine(v, -v) == pytest.approx(-1.0)

    def test_zero_vector(self):
        with pytest.raises(ContractError):
            cosine([0, 0], [1, 0])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 5, elements=st.floats(-10, 10)),
           arrays(np.float64, 5, elements=st.floats(-10, 10)),
           st.floats(0.01, 100))
    def test_symmetric_and_scale_invariant(self, a, b, alpha):
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        assert cosine(a, b) == pytest.approx(cosine(b, a), abs=1e-12)
        assert cosine(alpha * a, b) == pytest.approx(cosine(a, b), abs=1e-9)
        assert -1.0 <= cosine(a, b) <= 1.0
