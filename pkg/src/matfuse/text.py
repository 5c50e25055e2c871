"""Deterministic structure descriptions, word-level vocabulary /
tokenization, and seeded text corruption."""

from __future__ import annotations

import importlib.resources
import random
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .cif import CrystalStructure
from .errors import EmptyCorpus
from .graph import neighbor_search

PAD, UNK, CLS = 0, 1, 2
_RESERVED = 3

COORDINATION_PROBE_CUTOFF = 4.0  # Angstrom, fixed template probe
PUNCTUATION = ".,;:!?"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _decoy_words() -> list[str]:
    text = (importlib.resources.files("matfuse.data")
            / "decoy_words.txt").read_text()
    return text.split()


# ---------------------------------------------------------------------------
# description template (deterministic Robocrystallographer stand-in)

def _eq(x, y, tol=1e-4):
    return abs(x - y) < tol


def crystal_system(s: CrystalStructure) -> str:
    a, b, c = s.lengths
    al, be, ga = s.angles
    right = [_eq(x, 90.0) for x in (al, be, ga)]
    if all(right):
        if _eq(a, b) and _eq(b, c):
            return "cubic"
        if _eq(a, b) or _eq(b, c) or _eq(a, c):
            return "tetragonal"
        return "orthorhombic"
    if _eq(a, b) and right[0] and right[1] and _eq(ga, 120.0):
        return "hexagonal"
    if _eq(a, b) and _eq(b, c) and _eq(al, be) and _eq(be, ga):
        return "trigonal"
    if sum(right) == 2:
        return "monoclinic"
    return "triclinic"


def describe(s: CrystalStructure) -> str:
    """One-paragraph deterministic description of an expanded structure.

    Consumes only rotation/translation-invariant quantities, so two
    structures that differ by a lattice rotation or a rigid fractional
    translation produce identical text.
    """
    parts = [f"Formula {s.formula()}.",
             f"Crystal system {crystal_system(s)}.",
             (f"Cell lengths a = {s.a:.2f}, b = {s.b:.2f}, c = {s.c:.2f} "
              "angstrom."),
             (f"Cell angles alpha = {s.alpha:.2f}, beta = {s.beta:.2f}, "
              f"gamma = {s.gamma:.2f} degrees."),
             f"The cell contains {len(s.sites)} site" +
             ("s." if len(s.sites) != 1 else ".")]
    edges = neighbor_search(s, COORDINATION_PROBE_CUTOFF, 10 ** 9)
    counts = Counter()
    nearest: dict[int, float] = {}
    for e in edges:
        counts[e.i] += 1
        nearest[e.i] = min(nearest.get(e.i, np.inf), e.distance)
    by_element: dict[str, list[int]] = {}
    for idx, site in enumerate(s.sites):
        by_element.setdefault(site.symbol, []).append(idx)
    for sym in sorted(by_element):
        idxs = by_element[sym]
        mean_cn = sum(counts[i] for i in idxs) / len(idxs)
        dists = [nearest[i] for i in idxs if i in nearest]
        if dists:
            parts.append(f"{sym} has mean coordination {mean_cn:.1f} with "
                         f"nearest neighbor at {min(dists):.2f} angstrom.")
        else:
            parts.append(f"{sym} has no neighbors within the probe cutoff.")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# vocabulary and tokenization

def split_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric tokens (whitespace/punctuation split)."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    token_to_id: dict
    min_freq: int = 1

    def __len__(self):
        return len(self.token_to_id) + _RESERVED

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return sorted(self.token_to_id, key=self.token_to_id.get)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.tokens()) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            toks = [ln.strip() for ln in fh if ln.strip()]
        return cls({t: i + _RESERVED for i, t in enumerate(toks)})


def build_vocab(corpus: list[str], min_freq: int = 1) -> Vocab:
    """Frequency-ordered vocabulary (ties alphabetical) over the corpus."""
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    freq = Counter()
    for text in corpus:
        freq.update(split_tokens(text))
    kept = sorted((t for t, n in freq.items() if n >= min_freq),
                  key=lambda t: (-freq[t], t))
    return Vocab({t: i + _RESERVED for i, t in enumerate(kept)}, min_freq)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray    # int vector, length max_len
    mask: np.ndarray   # bool vector, True = real token
    original_length: int


def tokenize(text: str, vocab: Vocab, max_len: int) -> TokenSequence:
    """CLS + token ids, truncated to max_len and PAD-padded."""
    toks = split_tokens(text)
    ids = [CLS] + [vocab.id_of(t) for t in toks]
    original = len(ids)
    ids = ids[:max_len]
    mask = np.zeros(max_len, dtype=bool)
    mask[:len(ids)] = True
    padded = np.full(max_len, PAD, dtype=np.int64)
    padded[:len(ids)] = ids
    return TokenSequence(padded, mask, original)


def detokenize(seq: TokenSequence, vocab: Vocab) -> str:
    inv = {i: t for t, i in vocab.token_to_id.items()}
    inv[UNK] = "<unk>"
    return " ".join(inv[i] for i, m in zip(seq.ids, seq.mask)
                    if m and i != CLS)


# ---------------------------------------------------------------------------
# corruption (random character deletion, punctuation insertion, word
# substitution from a fixed decoy list)

def corrupt_text(text: str, p: float, seed: int) -> str:
    """Three seeded corruption passes, each applied with probability p/3.

    Deterministic given (text, p, seed); p = 0 returns the input
    unchanged, byte for byte.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"corruption probability {p} outside [0, 1]")
    if p == 0.0:
        return text
    rng = random.Random(seed)
    rate = p / 3.0

    survivors = [ch for ch in text if rng.random() >= rate]
    with_punct = []
    for ch in survivors:
        with_punct.append(ch)
        if rng.random() < rate:
            with_punct.append(rng.choice(PUNCTUATION))
    stage2 = "".join(with_punct)

    decoys = _decoy_words()
    pieces = re.split(r"(\s+)", stage2)
    out = [piece if (not piece or piece.isspace()
                     or rng.random() >= rate)
           else rng.choice(decoys)
           for piece in pieces]
    return "".join(out)
