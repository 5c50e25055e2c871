import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matfuse.cif import expand_symmetry, parse_cif
from matfuse.errors import EmptyCorpus
from matfuse.text import (CLS, PAD, UNK, Vocab, build_vocab, corrupt_text,
                          crystal_system, describe, detokenize, split_tokens,
                          tokenize)

from conftest import make_cif


def test_describe_contains_template_fields():
    s = expand_symmetry(parse_cif(make_cif(a=4.0)))
    text = describe(s)
    assert "Na" in text and "cubic" in text and "a = 4.00" in text


def test_describe_translation_invariant():
    s1 = expand_symmetry(parse_cif(make_cif(sites=(("Na", 0.1, 0.1, 0.1),
                                                   ("Cl", 0.6, 0.6, 0.6)))))
    s2 = expand_symmetry(parse_cif(make_cif(sites=(("Na", 0.4, 0.4, 0.4),
                                                   ("Cl", 0.9, 0.9, 0.9)))))
    assert describe(s1) == describe(s2)


def test_rocksalt_coordination_six():
    # a = 6.0 keeps the second shell (a / sqrt 2 = 4.24) outside the probe
    text = make_cif(a=6.0, sites=(("Na", 0.0, 0.0, 0.0),
                                  ("Na", 0.5, 0.5, 0.0),
                                  ("Na", 0.5, 0.0, 0.5),
                                  ("Na", 0.0, 0.5, 0.5),
                                  ("Cl", 0.5, 0.0, 0.0),
                                  ("Cl", 0.0, 0.5, 0.0),
                                  ("Cl", 0.0, 0.0, 0.5),
                                  ("Cl", 0.5, 0.5, 0.5)))
    s = expand_symmetry(parse_cif(text))
    from test_graph import brute_force_edges
    per_atom = {}
    for i, j, off, d in brute_force_edges(s, 4.0, 10 ** 9):
        per_atom[i] = per_atom.get(i, 0) + 1
    assert all(c == 6 for c in per_atom.values())
    out = describe(s)
    assert "Na has mean coordination 6.0" in out
    assert "Cl has mean coordination 6.0" in out


@pytest.mark.parametrize("kw,expected", [
    (dict(a=4.0), "cubic"),
    (dict(a=4.0, c=5.0), "tetragonal"),
    (dict(a=3.0, b=4.0, c=5.0), "orthorhombic"),
    (dict(a=3.0, c=5.0, gamma=120.0), "hexagonal"),
    (dict(a=4.0, alpha=70.0, beta=70.0, gamma=70.0), "trigonal"),
    (dict(a=3.0, b=4.0, c=5.0, beta=100.0), "monoclinic"),
    (dict(a=3.0, b=4.0, c=5.0, alpha=85.0, beta=95.0, gamma=100.0),
     "triclinic"),
])
def test_crystal_system(kw, expected):
    assert crystal_system(parse_cif(make_cif(**kw))) == expected


def test_vocab_order_and_reserved():
    v = build_vocab(["a a b"], min_freq=1)
    assert len(v) == 5  # PAD, UNK, CLS, a, b
    assert v.id_of("a") == 3 and v.id_of("b") == 4
    assert v.id_of("zzz") == UNK


def test_vocab_min_freq():
    v = build_vocab(["a a b"], min_freq=2)
    assert v.id_of("b") == UNK and v.id_of("a") == 3


def test_vocab_tie_alphabetical():
    v = build_vocab(["beta alpha"], min_freq=1)
    assert v.id_of("alpha") == 3 and v.id_of("beta") == 4


def test_vocab_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab([])


def test_vocab_save_load(tmp_path):
    v = build_vocab(["gamma alpha alpha beta"])
    path = tmp_path / "vocab.txt"
    v.save(path)
    v2 = Vocab.load(path)
    assert v.token_to_id == v2.token_to_id


def test_tokenize_empty():
    v = build_vocab(["a"])
    seq = tokenize("", v, 8)
    assert seq.ids[0] == CLS
    assert np.all(seq.ids[1:] == PAD)
    assert seq.original_length == 1
    assert list(seq.mask) == [True] + [False] * 7


def test_tokenize_unknown_word():
    v = build_vocab(["known words only"])
    seq = tokenize("known mystery words", v, 8)
    assert int(np.sum(seq.ids == UNK)) == 1


def test_tokenize_truncation():
    v = build_vocab(["a b c d e f"])
    seq = tokenize("a b c d e f", v, 4)
    assert len(seq.ids) == 4
    assert seq.original_length == 7


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from("alpha beta gamma delta cell".split()),
                min_size=1, max_size=10))
def test_tokenize_detokenize_roundtrip(words):
    corpus = "alpha beta gamma delta cell"
    v = build_vocab([corpus])
    text = " ".join(words)
    seq = tokenize(text, v, 32)
    assert detokenize(seq, v) == text


def test_corrupt_identity_at_zero():
    text = "any text at all 123."
    assert corrupt_text(text, 0.0, 99) == text


def test_corrupt_degenerate_inputs():
    assert isinstance(corrupt_text("", 1.0, 1), str)
    corrupt_text("x", 1.0, 2)  # must not raise


def test_corrupt_golden_frozen():
    # frozen from the implementation's own first seeded run
    out = corrupt_text("the quick brown crystal jumps over the lazy lattice",
                       0.3, 7)
    assert out == "thequc? !own crystl j?umps delta lazy lattice"


def test_corrupt_deterministic():
    a = corrupt_text("some description text", 0.4, 5)
    b = corrupt_text("some description text", 0.4, 5)
    assert a == b


def _edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[-1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def test_corrupt_monotone_in_p():
    text = "formula nacl crystal system cubic cell lengths a 4.00"
    low = np.mean([_edit_distance(text, corrupt_text(text, 0.1, s))
                   for s in range(200)])
    high = np.mean([_edit_distance(text, corrupt_text(text, 0.4, s))
                    for s in range(200)])
    assert high > low


def test_split_tokens():
    assert split_tokens("A = 4.00, b!") == ["a", "4", "00", "b"]
