"""Multi-reference BLEU: clipped n-gram precisions, geometric mean, brevity
penalty. No smoothing: any zero precision zeroes the score."""
from __future__ import annotations

import math
from collections import Counter


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def closest_ref_length(hyp_len: int, references) -> int:
    """Reference length nearest to hyp_len; ties go to the shorter."""
    return min((len(r) for r in references), key=lambda rl: (abs(rl - hyp_len), rl))


def _check_args(references, max_n, weights):
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    if weights is None:
        weights = [1.0 / max_n] * max_n
    if len(weights) != max_n:
        raise ValueError(f"need {max_n} weights, got {len(weights)}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {sum(weights)}")
    if not references:
        raise ValueError("at least one reference is required")
    return weights


def _pair_stats(hypothesis, references, max_n):
    """Per-pair clipped/total n-gram counts plus length bookkeeping."""
    clipped = [0] * max_n
    totals = [0] * max_n
    for n in range(1, max_n + 1):
        counts = ngram_counts(hypothesis, n)
        if not counts:
            continue
        max_ref = Counter()
        for ref in references:
            for gram, cnt in ngram_counts(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        clipped[n - 1] = sum(min(cnt, max_ref[gram]) for gram, cnt in counts.items())
        totals[n - 1] = sum(counts.values())
    return clipped, totals, len(hypothesis), closest_ref_length(len(hypothesis), references)


def _score(clipped, totals, hyp_len, ref_len, weights) -> float:
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for w, num, den in zip(weights, clipped, totals):
        if den == 0:
            # no hypothesis n-grams of this order exist anywhere; the
            # precision is undefined, not zero, so it carries no evidence
            continue
        if num == 0:
            return 0.0
        log_sum += w * math.log(num / den)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_sum)


def sentence_bleu(hypothesis, references, max_n: int = 4, weights=None) -> float:
    weights = _check_args(references, max_n, weights)
    clipped, totals, c, r = _pair_stats(hypothesis, references, max_n)
    return _score(clipped, totals, c, r, weights)


def corpus_stats(pairs, max_n: int = 4):
    """Summed n-gram and length statistics over (hypothesis, references) pairs.

    Returns (clipped, totals, hyp_len, ref_len) with per-n lists. Counts are
    summed before any division: this is corpus-level BLEU, not a mean of
    sentence scores.
    """
    if not pairs:
        raise ValueError("corpus BLEU needs at least one pair")
    clipped = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hypothesis, references in pairs:
        _check_args(references, max_n, None)
        pc, pt, c, r = _pair_stats(hypothesis, references, max_n)
        for n in range(max_n):
            clipped[n] += pc[n]
            totals[n] += pt[n]
        hyp_len += c
        ref_len += r
    return clipped, totals, hyp_len, ref_len


def corpus_bleu(pairs, max_n: int = 4, weights=None) -> float:
    if weights is None:
        weights = [1.0 / max_n] * max_n
    if max_n < 1 or len(weights) != max_n or abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"bad max_n/weights: {max_n}, {weights}")
    clipped, totals, hyp_len, ref_len = corpus_stats(pairs, max_n)
    return _score(clipped, totals, hyp_len, ref_len, weights)
