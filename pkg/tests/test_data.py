import json
from collections import Counter

import numpy as np
import pytest

from calib_lab import data
from calib_lab.data import DataFormatError, Example, Vocabulary
from calib_lab.model import CLS_ID, PAD_ID, UNK_ID


def write(path, name, lines):
    (path / name).write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestTokenize:
    def test_split_words(self):
        assert data.split_words("What's the time, Dr. Who?") == ["what", "'", "s", "the", "time", ",", "dr", ".",
                                                                 "who", "?"]

    def test_empty_text(self):
        assert data.tokenize("", Vocabulary(), 8) == [CLS_ID]

    def test_case_folding(self):
        vocab = Vocabulary(["the"])
        ids = data.tokenize("The the THE", vocab, 8)
        assert ids[0] == CLS_ID and len(set(ids[1:])) == 1 and ids[1] != UNK_ID

    def test_truncation_keeps_cls(self):
        ids = data.tokenize("a b c d e f g h", Vocabulary(list("abcdefgh")), 5)
        assert len(ids) == 5 and ids[0] == CLS_ID

    def test_unknown_words(self):
        assert data.tokenize("zebra", Vocabulary(["a"]), 4) == [CLS_ID, UNK_ID]

    def test_pad_batch(self):
        batch = data.pad_batch([[2, 5], [2, 5, 6, 7]])
        np.testing.assert_array_equal(batch, [[2, 5, PAD_ID, PAD_ID], [2, 5, 6, 7]])

    def test_vocab_reserved_ids_and_round_trip(self):
        vocab = Vocabulary.build([Example("b a b", 0)])
        assert vocab.to_list()[:3] == ["<pad>", "<unk>", "<cls>"]
        again = Vocabulary.from_list(vocab.to_list())
        assert again.stoi == vocab.stoi
        with pytest.raises(ValueError):
            Vocabulary.from_list(["x", "y", "z"])

    def test_train_words_never_unknown(self):
        corpus = data.generate_toy_corpus(size=100, dev_size=10, test_size=10, seed=3)
        vocab = Vocabulary.build(corpus.splits.train)
        for ex in corpus.splits.train:
            assert UNK_ID not in data.tokenize(ex.words, vocab, 200)


class TestLoad:
    def test_tsv(self, tmp_path):
        write(tmp_path, "train.tsv", ["pos\tgood movie", "neg\tbad film", "pos\tgreat"])
        write(tmp_path, "test.tsv", ["neg\tawful"])
        splits = data.load_dataset(tmp_path)
        assert splits.num_classes == 2 and len(splits.train) == 3
        assert splits.label_names == ["pos", "neg"]
        assert [ex.label for ex in splits.train] == [0, 1, 0]
        assert splits.dev == []

    def test_jsonl_matches_tsv(self, tmp_path):
        rows = [("pos", "good movie"), ("neg", "bad film")]
        tsv, jsonl = tmp_path / "a", tmp_path / "b"
        tsv.mkdir(), jsonl.mkdir()
        for split in ("train", "test"):
            write(tsv, f"{split}.tsv", [f"{lab}\t{t}" for lab, t in rows])
            write(jsonl, f"{split}.jsonl", [json.dumps({"text": t, "label": lab}) for lab, t in rows])
        assert data.load_dataset(tsv) == data.load_dataset(jsonl)

    def test_unknown_dev_label(self, tmp_path):
        write(tmp_path, "train.tsv", ["pos\tgood"])
        write(tmp_path, "dev.tsv", ["meh\tokay"])
        write(tmp_path, "test.tsv", ["pos\tfine"])
        with pytest.raises(DataFormatError, match="meh"):
            data.load_dataset(tmp_path)

    def test_malformed_line_number(self, tmp_path):
        write(tmp_path, "train.tsv", ["pos\tgood", "no tab here"])
        write(tmp_path, "test.tsv", ["pos\tfine"])
        with pytest.raises(DataFormatError, match=":2:"):
            data.load_dataset(tmp_path)

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_dataset(tmp_path)
        write(tmp_path, "train.tsv", ["pos\tgood"])
        with pytest.raises(FileNotFoundError):
            data.load_dataset(tmp_path)

    @pytest.mark.parametrize("fmt", ["tsv", "jsonl"])
    def test_write_round_trip(self, tmp_path, fmt):
        corpus = data.generate_toy_corpus(size=60, dev_size=10, test_size=20, seed=1)
        data.write_dataset(corpus.splits, tmp_path, fmt)
        assert data.load_dataset(tmp_path, fmt) == corpus.splits

    def test_length_warning(self, caplog):
        rows = [Example("a b c d e", 0), Example("a", 0)]
        assert data.check_lengths(rows, 4) == 1
        assert "truncated" in caplog.text


class TestSubsample:
    def rows(self, counts):
        return [Example(f"x{i}", c) for c, n in enumerate(counts) for i in range(n)]

    def test_even_classes(self):
        out = data.subsample(self.rows([50, 50]), 0.1, seed=0)
        assert Counter(ex.label for ex in out) == {0: 5, 1: 5}

    def test_rare_class_survives(self):
        out = data.subsample(self.rows([200, 3]), 0.1, seed=0)
        assert Counter(ex.label for ex in out) == {0: 20, 1: 1}

    def test_identity_and_order(self):
        rows = self.rows([4, 6])
        assert data.subsample(rows, 1.0, seed=5) == rows
        out = data.subsample(rows, 0.5, seed=5)
        positions = [rows.index(ex) for ex in out]
        assert positions == sorted(positions)

    def test_seeded(self):
        rows = self.rows([100, 100])
        assert data.subsample(rows, 0.1, 1) == data.subsample(rows, 0.1, 1)
        assert data.subsample(rows, 0.1, 1) != data.subsample(rows, 0.1, 2)

    def test_fraction_range(self):
        with pytest.raises(ValueError):
            data.subsample(self.rows([3]), 0.0, 0)


class TestToyCorpus:
    def test_shapes_and_determinism(self):
        a = data.generate_toy_corpus(num_classes=4, size=120, dev_size=20, test_size=30, seed=7)
        b = data.generate_toy_corpus(num_classes=4, size=120, dev_size=20, test_size=30, seed=7)
        assert a.splits == b.splits
        assert (len(a.splits.train), len(a.splits.dev), len(a.splits.test)) == (120, 20, 30)
        assert a.splits.num_classes == 4
        first = []
        for ex in a.splits.train:
            if ex.label not in first:
                first.append(ex.label)
        assert first == [0, 1, 2, 3]

    def test_lexicon_groups_are_symmetric(self):
        lex = data.generate_toy_corpus(size=50, seed=0).lexicon
        for word, syns in lex.items():
            for s in syns:
                assert word in lex[s]

    def test_trec_like_priors(self):
        corpus = data.trec_like_corpus(seed=0)
        assert len(corpus.splits.train) == 4900
        counts = Counter(corpus.splits.label_names[ex.label] for ex in corpus.splits.train)
        assert counts["ABBR"] < counts["ENTY"]
        mean_len = np.mean([len(ex.words) for ex in corpus.splits.train])
        assert 9 < mean_len < 11

    def test_lexicon_file(self, tmp_path):
        from calib_lab.augment import SynonymLexicon
        corpus = data.generate_toy_corpus(size=50, seed=0)
        path = data.write_lexicon(corpus.lexicon, tmp_path / "lexicon.tsv")
        lex = SynonymLexicon.from_tsv(path)
        assert lex.synonyms("k0x0") == corpus.lexicon["k0x0"]
