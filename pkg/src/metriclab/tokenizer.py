"""Byte-level pair-merge subword vocabulary and BERT-style pair packing.

Training starts from the 256 single-byte tokens (plus five reserved ids)
and repeatedly merges the most frequent adjacent token pair, breaking ties
by lexicographic pair order. Because every byte is always in the
vocabulary, encode/decode round-trips arbitrary byte strings losslessly.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
MASK_ID = 4
SPECIAL_NAMES = ("<pad>", "<unk>", "<cls>", "<sep>", "<mask>")
NUM_SPECIALS = 5
_BYTE_BASE = NUM_SPECIALS  # ids 5..260 are the single bytes


class VocabularyError(ValueError):
    pass


class Vocabulary:
    """token <-> id bijection over byte-string tokens with reserved specials."""

    def __init__(self, merges: Sequence[tuple[bytes, bytes]]):
        self.tokens: list[bytes] = [bytes([b]) for b in range(256)]
        self.merges: list[tuple[bytes, bytes]] = list(merges)
        for left, right in self.merges:
            self.tokens.append(left + right)
        self.token_to_id: dict[bytes, int] = {
            tok: _BYTE_BASE + i for i, tok in enumerate(self.tokens)
        }
        if len(self.token_to_id) != len(self.tokens):
            raise VocabularyError("merge list produces duplicate tokens")
        self.merge_rank: dict[tuple[bytes, bytes], int] = {
            pair: i for i, pair in enumerate(self.merges)
        }
        self._encode_cache: dict[bytes, tuple[int, ...]] = {}

    @property
    def size(self) -> int:
        return NUM_SPECIALS + len(self.tokens)

    def id_of(self, token: bytes) -> int:
        return self.token_to_id[token]

    def token_of(self, idx: int) -> bytes:
        if idx < NUM_SPECIALS or idx >= self.size:
            raise IndexError(f"id {idx} out of range for vocabulary of size {self.size}")
        return self.tokens[idx - _BYTE_BASE]

    # -- encoding ------------------------------------------------------------

    def encode_bytes(self, raw: bytes) -> list[int]:
        if not raw:
            return []
        cached = self._encode_cache.get(raw)
        if cached is not None:
            return list(cached)
        parts = _apply_merges([bytes([b]) for b in raw], self.merge_rank)
        ids = [self.token_to_id[p] for p in parts]
        if len(self._encode_cache) < 1_000_000:
            self._encode_cache[raw] = tuple(ids)
        return ids

    def encode_text(self, text: str) -> list[int]:
        return self.encode_bytes(text.encode("utf-8"))

    def decode_bytes(self, ids: Iterable[int]) -> bytes:
        out = bytearray()
        for idx in ids:
            if idx < NUM_SPECIALS:
                continue  # specials are dropped
            out.extend(self.token_of(int(idx)))
        return bytes(out)

    def decode(self, ids: Iterable[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """One token per line, line number = id.

        Bytes are escaped so every line is printable ASCII; merged tokens are
        written as ``left right`` (a raw space can never occur inside an
        escaped token, so it doubles as the split marker).
        """
        lines = list(SPECIAL_NAMES)
        lines.extend(_escape(bytes([b])) for b in range(256))
        lines.extend(f"{_escape(l)} {_escape(r)}" for l, r in self.merges)
        Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_bytes().decode("utf-8").splitlines()
        if len(lines) < NUM_SPECIALS + 256:
            raise VocabularyError(f"vocabulary file {path} is truncated")
        if tuple(lines[:NUM_SPECIALS]) != SPECIAL_NAMES:
            raise VocabularyError(f"vocabulary file {path} lacks the reserved tokens")
        byte_lines = lines[NUM_SPECIALS : NUM_SPECIALS + 256]
        for b, line in enumerate(byte_lines):
            if _unescape(line) != bytes([b]):
                raise VocabularyError(f"byte alphabet corrupt at id {NUM_SPECIALS + b}")
        merges = []
        for line in lines[NUM_SPECIALS + 256 :]:
            halves = line.split(" ")
            if len(halves) != 2:
                raise VocabularyError(f"merge line {line!r} lacks a split marker")
            merges.append((_unescape(halves[0]), _unescape(halves[1])))
        return cls(merges)


def _apply_merges(parts: list[bytes], rank: dict[tuple[bytes, bytes], int]) -> list[bytes]:
    """Greedy BPE: repeatedly apply the lowest-ranked adjacent merge."""
    while len(parts) > 1:
        best_rank = None
        best_pair = None
        for pair in zip(parts, parts[1:]):
            r = rank.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
                best_pair = pair
        if best_pair is None:
            break
        parts = _merge_once(parts, best_pair)
    return parts


def _merge_once(seq: list[bytes], pair: tuple[bytes, bytes]) -> list[bytes]:
    """Replace non-overlapping left-to-right occurrences of ``pair``."""
    merged = pair[0] + pair[1]
    out: list[bytes] = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _escape(tok: bytes) -> str:
    out = []
    for b in tok:
        if 0x21 <= b <= 0x7E and b != 0x5C:  # printable, not backslash
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\":
            if i + 4 > len(text) or text[i + 1] != "x":
                raise VocabularyError(f"malformed byte escape in {text!r}")
            out.append(int(text[i + 2 : i + 4], 16))
            i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_vocab(corpus: Iterable[str], target_size: int, seed: int = 0) -> Vocabulary:
    """Learn a byte pair-merge vocabulary of ``target_size`` entries.

    Deterministic given the corpus; ``seed`` is accepted for interface
    uniformity but the procedure is frequency-driven with lexicographic
    tie-breaking. If the corpus exhausts its mergeable pairs early the
    vocabulary simply stops growing.
    """
    min_size = NUM_SPECIALS + 256
    if target_size < min_size:
        raise VocabularyError(
            f"target_size {target_size} below specials + byte alphabet ({min_size})"
        )
    line_weights: dict[bytes, int] = Counter()
    for line in corpus:
        raw = line.encode("utf-8")
        if raw:
            line_weights[raw] += 1
    if not line_weights:
        raise VocabularyError("corpus is empty")

    seqs = [[bytes([b]) for b in raw] for raw in line_weights]
    weights = list(line_weights.values())

    pair_counts: dict[tuple[bytes, bytes], int] = defaultdict(int)
    pair_lines: dict[tuple[bytes, bytes], set[int]] = defaultdict(set)
    for li, seq in enumerate(seqs):
        w = weights[li]
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += w
            pair_lines[pair].add(li)

    merges: list[tuple[bytes, bytes]] = []
    for _ in range(target_size - min_size):
        best = None
        best_count = 0
        for pair, c in pair_counts.items():
            if c > best_count or (c == best_count and best is not None and pair < best):
                best = pair
                best_count = c
        if best is None:
            break
        merges.append(best)
        for li in sorted(pair_lines[best]):
            old = seqs[li]
            new = _merge_once(old, best)
            w = weights[li]
            old_pairs = Counter(zip(old, old[1:]))
            new_pairs = Counter(zip(new, new[1:]))
            for pair in old_pairs.keys() - new_pairs.keys():
                pair_lines[pair].discard(li)
                if not pair_lines[pair]:
                    del pair_lines[pair]
            for pair in new_pairs.keys() - old_pairs.keys():
                pair_lines[pair].add(li)
            for pair in old_pairs.keys() | new_pairs.keys():
                delta = (new_pairs.get(pair, 0) - old_pairs.get(pair, 0)) * w
                if delta:
                    pair_counts[pair] += delta
                    if pair_counts[pair] <= 0:
                        del pair_counts[pair]
            seqs[li] = new

    return Vocabulary(merges)


# ---------------------------------------------------------------------------
# pair packing
# ---------------------------------------------------------------------------


@dataclass
class EncodedPair:
    """One packed (reference, candidate) input of fixed width."""

    ids: np.ndarray  # int32, shape (max_len,)
    mask: np.ndarray  # float32, 1 on real tokens
    segments: np.ndarray  # int32, 0 = cls+reference+sep, 1 = candidate+sep

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def encode_pair(reference: str, candidate: str, vocab: Vocabulary, max_len: int) -> EncodedPair:
    """Pack ``[CLS] reference [SEP] candidate [SEP]`` padded to ``max_len``.

    Over-long inputs are shortened by repeatedly dropping the final subword
    of the currently longer segment (candidate on ties).
    """
    if max_len < 8:
        raise ValueError(f"max_len must be >= 8, got {max_len}")
    ref_ids = vocab.encode_text(reference)
    cand_ids = vocab.encode_text(candidate)
    budget = max_len - 3
    while len(ref_ids) + len(cand_ids) > budget:
        if len(ref_ids) > len(cand_ids):
            ref_ids = ref_ids[:-1]
        else:
            cand_ids = cand_ids[:-1]
    ids = np.full(max_len, PAD_ID, dtype=np.int32)
    seg = np.zeros(max_len, dtype=np.int32)
    mask = np.zeros(max_len, dtype=np.float32)
    seq = [CLS_ID, *ref_ids, SEP_ID, *cand_ids, SEP_ID]
    ids[: len(seq)] = seq
    mask[: len(seq)] = 1.0
    seg[len(ref_ids) + 2 : len(seq)] = 1
    return EncodedPair(ids=ids, mask=mask, segments=seg)


def encode_single(text: str, vocab: Vocabulary, max_len: int) -> EncodedPair:
    """Pack ``[CLS] text [SEP]`` padded to ``max_len`` (one segment)."""
    if max_len < 8:
        raise ValueError(f"max_len must be >= 8, got {max_len}")
    body = vocab.encode_text(text)[: max_len - 2]
    ids = np.full(max_len, PAD_ID, dtype=np.int32)
    mask = np.zeros(max_len, dtype=np.float32)
    seq = [CLS_ID, *body, SEP_ID]
    ids[: len(seq)] = seq
    mask[: len(seq)] = 1.0
    return EncodedPair(ids=ids, mask=mask, segments=np.zeros(max_len, dtype=np.int32))
