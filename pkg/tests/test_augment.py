import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from calib_lab import augment as aug
from calib_lab import autodiff as ad

GOLDEN = Path(__file__).parent / "data" / "eda_golden.json"
STOP = frozenset({"the", "a", "is", "of"})


@pytest.fixture
def lexicon():
    return aug.SynonymLexicon({"quick": ["fast"], "fox": ["vixen", "reynard"], "jumps": ["leaps", "hops"]})


class TestLexicon:
    def test_case_normalized(self):
        lex = aug.SynonymLexicon({"Quick": ["Fast", " rapid "]})
        assert "QUICK" in lex
        assert lex.synonyms("quick") == ["fast", "rapid"]

    def test_tsv(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("big\tlarge,huge\nsmall\ttiny\n")
        lex = aug.SynonymLexicon.from_tsv(path)
        assert lex.synonyms("big") == ["large", "huge"]
        path.write_text("broken line\n")
        with pytest.raises(ValueError):
            aug.SynonymLexicon.from_tsv(path)

    def test_bundled_resources_load(self):
        assert len(aug.default_lexicon()) > 100
        assert "the" in aug.default_stopwords()


class TestSynonymReplace:
    def test_single_eligible_word(self, lexicon):
        out = aug.synonym_replace(["the", "quick", "dog"], 0.1, lexicon, STOP, np.random.default_rng(0))
        assert out == ["the", "fast", "dog"]

    def test_trivial_inputs(self, lexicon):
        rng = np.random.default_rng(0)
        assert aug.synonym_replace(["the", "a", "is"], 1.0, lexicon, STOP, rng) == ["the", "a", "is"]
        assert aug.synonym_replace([], 0.5, lexicon, STOP, rng) == []

    def test_replaces_all_when_too_few(self, lexicon):
        words = ["quick", "fox", "jumps"]
        out = aug.synonym_replace(words, 1.0, lexicon, STOP, np.random.default_rng(3))
        assert all(o in lexicon.synonyms(w) for w, o in zip(words, out))

    def test_count_and_length(self, lexicon):
        words = ["quick", "fox", "jumps", "the", "quick", "fox"]
        for seed in range(50):
            out = aug.synonym_replace(words, 0.34, lexicon, STOP, np.random.default_rng(seed))
            assert len(out) == len(words)
            assert sum(a != b for a, b in zip(words, out)) == 2  # round(0.34 * 6) = 2

    def test_input_not_mutated(self, lexicon):
        words = ["quick", "fox"]
        aug.synonym_replace(words, 1.0, lexicon, STOP, np.random.default_rng(0))
        assert words == ["quick", "fox"]


class TestEDA:
    def test_golden(self):
        golden = json.loads(GOLDEN.read_text())
        for run in golden["runs"]:
            out = aug.eda(golden["sentence"], golden["alpha"], np.random.default_rng(run["seed"]))
            assert out == run["output"]

    def test_zero_alpha_deletion_is_identity(self):
        words = "what is the capital of france".split()
        assert aug.eda(words, 0.0, np.random.default_rng(0), op="rd") == words

    def test_swap_is_permutation(self):
        words = "a b c d e f g".split()
        for seed in range(20):
            out = aug.eda(words, 0.3, np.random.default_rng(seed), op="rs")
            assert Counter(out) == Counter(words)

    def test_deletion_keeps_one(self):
        for seed in range(50):
            out = aug.random_deletion(["x", "y"], 0.999, np.random.default_rng(seed))
            assert len(out) >= 1

    def test_insertion_uses_synonyms(self, lexicon):
        words = ["quick", "brown", "fox"]
        out = aug.random_insertion(words, 2, lexicon, STOP, np.random.default_rng(1))
        assert len(out) == 5
        extra = Counter(out) - Counter(words)
        assert set(extra) <= lexicon.all_synonyms()

    def test_op_choice_is_uniform(self):
        rng = np.random.default_rng(0)
        counts = Counter(aug.EDA_OPS[int(rng.integers(4))] for _ in range(4000))
        assert all(900 < counts[op] < 1100 for op in aug.EDA_OPS)

    def test_invalid(self):
        with pytest.raises(ValueError):
            aug.eda(["a"], 1.5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            aug.eda(["a"], 0.1, np.random.default_rng(0), op="xx")


class TestAEDA:
    def test_insertions(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n = int(rng.integers(1, 30))
            words = [f"w{i}" for i in range(n)]
            out = aug.aeda(words, rng)
            inserted = [w for w in out if w in aug.PUNCTUATION]
            assert 1 <= len(inserted) <= max(1, n // 3)
            assert len(out) == n + len(inserted)
            assert [w for w in out if w not in aug.PUNCTUATION] == words

    def test_empty(self):
        assert aug.aeda([], np.random.default_rng(0)) == []

    def test_fraction_mode(self):
        out = aug.aeda([f"w{i}" for i in range(20)], np.random.default_rng(0), fraction=0.1)
        assert sum(w in aug.PUNCTUATION for w in out) == 2


class TestPolicy:
    def test_validation(self):
        with pytest.raises(ValueError):
            aug.AugmentPolicy("backtranslate")
        with pytest.raises(ValueError):
            aug.AugmentPolicy("mixup", mixup_alpha=0.0)
        with pytest.raises(ValueError):
            aug.AugmentPolicy("sr", change_fraction=1.5)

    def test_deterministic_per_seed(self):
        words = "what is the quick way to reach a big city".split()
        for kind in ("sr", "eda", "aeda"):
            policy = aug.AugmentPolicy(kind, 0.2)
            a = aug.augment_words(words, policy, aug.example_rng(1, 2, 3))
            b = aug.augment_words(words, policy, aug.example_rng(1, 2, 3))
            assert a == b

    def test_vocabulary_closure(self):
        lex, stop = aug.default_lexicon(), aug.default_stopwords()
        words = "what is the quick way to reach a big city from the old house".split()
        allowed = set(words) | lex.all_synonyms() | set(aug.PUNCTUATION)
        for kind in ("sr", "eda", "aeda"):
            for seed in range(100):
                out = aug.augment_words(words, aug.AugmentPolicy(kind, 0.3), aug.example_rng(seed, 0, 0), lex, stop)
                assert set(out) <= allowed

    def test_identity_kinds(self):
        words = ["a", "b"]
        assert aug.augment_words(words, aug.AugmentPolicy("mixup"), np.random.default_rng(0)) == words
        assert aug.augment_words(words, aug.AugmentPolicy("none"), np.random.default_rng(0)) == words


class TestMixup:
    def test_endpoints_and_midpoint(self):
        zi, zj = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        mixed, weights = aug.mixup_pair(zi, zj, 0, 1, 1.0)
        np.testing.assert_array_equal(mixed, zi)
        assert weights == ((0, 1.0), (1, 0.0))
        mixed, weights = aug.mixup_pair(zi, zj, 0, 1, 0.0)
        np.testing.assert_array_equal(mixed, zj)
        mixed, _ = aug.mixup_pair(zi, zj, 0, 1, 0.5)
        np.testing.assert_array_equal(mixed, [0.5, 0.5])

    def test_tensor_path_is_differentiable(self):
        a = ad.Parameter(np.array([1.0, 2.0]))
        b = ad.Parameter(np.array([3.0, 4.0]))
        mixed, _ = aug.mixup_pair(a, b, 0, 1, 0.25)
        ad.backward(ad.sum_(mixed))
        np.testing.assert_allclose(a.grad, 0.25)
        np.testing.assert_allclose(b.grad, 0.75)

    def test_errors(self):
        with pytest.raises(ValueError):
            aug.mixup_pair(np.zeros(2), np.zeros(3), 0, 1, 0.5)
        with pytest.raises(ValueError):
            aug.mixup_pair(np.zeros(2), np.zeros(2), 0, 1, 1.5)
        with pytest.raises(ValueError):
            aug.sample_mixup_lambda(0.0, np.random.default_rng(0))

    def test_lambda_distribution(self):
        rng = np.random.default_rng(0)
        uniform = aug.sample_mixup_lambda(1.0, rng, size=100_000)
        assert abs(uniform.mean() - 0.5) < 0.01
        assert uniform.min() >= 0.0 and uniform.max() <= 1.0
        peaked = aug.sample_mixup_lambda(0.1, rng, size=100_000)
        middle = np.mean((peaked >= 0.4) & (peaked <= 0.6))
        exact = stats.beta.cdf(0.6, 0.1, 0.1) - stats.beta.cdf(0.4, 0.1, 0.1)
        assert middle < 0.15
        assert abs(middle - exact) < 0.005
