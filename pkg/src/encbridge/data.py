"""Whitespace vocabularies, synthetic parallel tasks, TSV corpora and batching."""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)

SOURCE_ALPHABET = tuple(string.ascii_lowercase)
TARGET_ALPHABET = tuple(string.ascii_uppercase)
TASKS = ("copy", "reverse", "subst")

Pair = tuple[str, str]


class Vocab:
    """Token <-> id map with pad/bos/eos/unk fixed at ids 0..3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            self.add(tok)

    pad_id, bos_id, eos_id, unk_id = 0, 1, 2, 3

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @classmethod
    def build(cls, pairs: Iterable[Pair], extra: Iterable[str] = ()) -> Vocab:
        v = cls(extra)
        for src, tgt in pairs:
            for tok in tokenize(src) + tokenize(tgt):
                v.add(tok)
        return v

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(t, self.unk_id) for t in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        return detokenize(self.itos[i] for i in ids if i not in (self.pad_id, self.bos_id, self.eos_id))

    def tokens(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocab:
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def tokenize(text: str) -> list[str]:
    return text.split()


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def subst_mapping(seed: int = 0) -> dict[str, str]:
    """Fixed random bijection from the source alphabet onto the target alphabet."""
    perm = np.random.default_rng(seed).permutation(len(TARGET_ALPHABET))
    return {s: TARGET_ALPHABET[j] for s, j in zip(SOURCE_ALPHABET, perm)}


def gen_synthetic(task: str, n_pairs: int, seed: int, len_range: tuple[int, int] = (3, 10),
                  mapping: dict[str, str] | None = None, mapping_seed: int = 0) -> list[Pair]:
    """Random source sentences over ``a..z`` with a task-defined target.

    ``len_range`` is inclusive. For ``subst`` the bijection comes from
    ``mapping`` or else from ``mapping_seed``, independent of ``seed``, so
    train and held-out sets drawn with different seeds share one mapping.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad length range {len_range}")
    if task == "subst" and mapping is None:
        mapping = subst_mapping(mapping_seed)
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(lo, hi + 1))
        src = [SOURCE_ALPHABET[i] for i in rng.integers(0, len(SOURCE_ALPHABET), size=n)]
        if task == "copy":
            tgt = src
        elif task == "reverse":
            tgt = src[::-1]
        else:
            tgt = [mapping[t] for t in src]
        pairs.append((detokenize(src), detokenize(tgt)))
    return pairs


def gen_held_out(task: str, n_pairs: int, seed: int, exclude: Iterable[Pair],
                 len_range: tuple[int, int] = (3, 10), mapping_seed: int = 0) -> list[Pair]:
    """Like :func:`gen_synthetic` but skipping any source sentence in ``exclude``."""
    seen = {s for s, _ in exclude}
    out: list[Pair] = []
    chunk = 0
    while len(out) < n_pairs:
        for pair in gen_synthetic(task, n_pairs, seed + 7919 * chunk, len_range,
                                  mapping_seed=mapping_seed):
            if pair[0] not in seen and len(out) < n_pairs:
                out.append(pair)
        chunk += 1
        if chunk > 100:
            raise ValueError(f"cannot find {n_pairs} held-out {task} pairs outside the training set")
    return out


def task_vocab(task: str) -> Vocab:
    """Vocabulary covering every token a synthetic task can emit."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    extra = SOURCE_ALPHABET + (TARGET_ALPHABET if task == "subst" else ())
    return Vocab(extra)


def load_tsv(path) -> list[Pair]:
    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns, got {len(cols)}")
            pairs.append((detokenize(tokenize(cols[0])), detokenize(tokenize(cols[1]))))
    return pairs


@dataclass
class ParallelBatch:
    src: np.ndarray      # batch x src_len, eos-terminated
    tgt_in: np.ndarray   # batch x tgt_len, bos-prefixed
    tgt_out: np.ndarray  # batch x tgt_len, eos-suffixed
    pad_id: int = Vocab.pad_id

    @property
    def src_mask(self) -> np.ndarray:
        return self.src != self.pad_id

    @property
    def tgt_mask(self) -> np.ndarray:
        return self.tgt_out != self.pad_id

    def __len__(self) -> int:
        return self.src.shape[0]

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def _pad(rows: Sequence[list[int]], pad_id: int) -> np.ndarray:
    out = np.full((len(rows), max(len(r) for r in rows)), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def collate(pairs: Sequence[Pair], vocab: Vocab) -> ParallelBatch:
    src = [vocab.encode(s) + [vocab.eos_id] for s, _ in pairs]
    tgt = [vocab.encode(t) for _, t in pairs]
    return ParallelBatch(
        src=_pad(src, vocab.pad_id),
        tgt_in=_pad([[vocab.bos_id] + t for t in tgt], vocab.pad_id),
        tgt_out=_pad([t + [vocab.eos_id] for t in tgt], vocab.pad_id),
        pad_id=vocab.pad_id,
    )


def make_batches(pairs: Sequence[Pair], vocab: Vocab, batch_size: int,
                 seed: int | None = 0) -> list[ParallelBatch]:
    """Shuffle (unless ``seed`` is None) and cut into batches padded per batch."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(pairs))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(pairs))
    return [collate([pairs[j] for j in order[i:i + batch_size]], vocab)
            for i in range(0, len(pairs), batch_size)]
