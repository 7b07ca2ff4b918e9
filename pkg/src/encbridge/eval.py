"""Evaluate loss and corpus BLEU."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import ParallelBatch, Vocab, collate, tokenize
from .model import Seq2Seq, greedy_decode


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    bp: float
    hyp_len: int
    ref_len: int
    matches: list[int] = field(default_factory=list)
    totals: list[int] = field(default_factory=list)

    CSV_HEADER = "bleu,p1,p2,p3,p4,bp"

    def csv_row(self) -> str:
        return ",".join(repr(float(x)) for x in [self.bleu, *self.precisions, self.bp])


def ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence],
                max_n: int = 4) -> BleuReport:
    """Single-reference corpus BLEU with clipped counts and no smoothing.

    An n-gram order with no matches (or no hypothesis n-grams at all) makes
    the score 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("corpus_bleu needs at least one sentence pair")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = ngram_counts(hyp, n)
            matches[n - 1] += sum((h & ngram_counts(ref, n)).values())
            totals[n - 1] += sum(h.values())
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1 - ref_len / hyp_len)
    else:
        bp = 1.0
    if min(precisions) == 0.0:
        bleu = 0.0
    else:
        bleu = 100.0 * bp * math.exp(math.fsum(math.log(p) for p in precisions) / max_n)
    return BleuReport(bleu, precisions, bp, hyp_len, ref_len, matches, totals)


def evaluate_loss(model: Seq2Seq, batches: Sequence[ParallelBatch]) -> float:
    """Token-weighted mean cross-entropy over every non-pad target token."""
    if not batches:
        raise ValueError("evaluate_loss needs at least one batch")
    total = 0.0
    count = 0
    with T.no_grad():
        for b in batches:
            n = b.n_tokens
            total += float(model.loss(b.src, b.tgt_in, b.tgt_out).item()) * n
            count += n
    return total / count


def translate(model: Seq2Seq, sources: Sequence[str], vocab: Vocab, batch_size: int = 128,
              max_len: int | None = None) -> list[list[str]]:
    max_len = model.config.max_seq_len if max_len is None else max_len
    out = []
    for i in range(0, len(sources), batch_size):
        chunk = [(s, "") for s in sources[i:i + batch_size]]
        for ids in greedy_decode(collate(chunk, vocab).src, model, max_len):
            out.append([vocab.itos[j] for j in ids])
    return out


def evaluate(model: Seq2Seq, pairs, vocab: Vocab, batch_size: int = 128) -> tuple[float, BleuReport]:
    """Evaluate loss and greedy-decoding BLEU on held-out pairs."""
    batches = [collate(pairs[i:i + batch_size], vocab) for i in range(0, len(pairs), batch_size)]
    loss = evaluate_loss(model, batches)
    hyps = translate(model, [s for s, _ in pairs], vocab, batch_size)
    return loss, corpus_bleu(hyps, [tokenize(t) for _, t in pairs])


def chance_loss(vocab_size: int) -> float:
    return float(np.log(vocab_size))
