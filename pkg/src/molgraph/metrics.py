"""Text-generation metrics: BLEU, METEOR, MAE, exact match, edit distance.

Tokenization is a case-sensitive Unicode-whitespace split. METEOR uses
exact-surface unigram matching only (no stemming or synonyms), so scores are
comparable within this toolkit but not against stemming implementations.
Corpus values are means of per-sample scores.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional


class LengthMismatch(ValueError):
    pass


class Empty(ValueError):
    pass


def _tokens(text: str) -> list[str]:
    return text.split()


def _ngram_counts(tokens: list[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i:i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def bleu(candidate: str, reference: str, max_n: int = 4,
         clip_counts: bool = True) -> float:
    """Geometric mean of n-gram precisions times the brevity penalty.

    Any zero n-gram precision sends the score to 0. With clip_counts off,
    candidate n-grams are counted against the reference without per-gram
    capping (the literal-formula mode).
    """
    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        total = sum(cand_counts.values())
        if total == 0:
            return 0.0
        if clip_counts:
            hits = sum(min(count, ref_counts.get(gram, 0))
                       for gram, count in cand_counts.items())
        else:
            hits = sum(count for gram, count in cand_counts.items()
                       if gram in ref_counts)
        if hits == 0:
            return 0.0
        log_sum += math.log(hits / total)
    c, r = len(cand), len(ref)
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_sum / max_n)


def _match_blocks(cand: list[str], ref: list[str]) -> tuple[int, int]:
    """(matched word count, chunk count) via greedy longest-common-block picks.

    Repeatedly takes the longest run of tokens contiguous and unmatched in
    both strings (ties: earliest candidate, then reference position). Every
    remaining common token eventually forms its own block, so the matched
    total always equals the multiset intersection size.
    """
    cand_free = [True] * len(cand)
    ref_free = [True] * len(ref)
    matched = 0
    chunks = 0
    while True:
        best_len = 0
        best: Optional[tuple[int, int]] = None
        for i in range(len(cand)):
            if not cand_free[i]:
                continue
            for j in range(len(ref)):
                if not ref_free[j] or ref[j] != cand[i]:
                    continue
                length = 0
                while (i + length < len(cand) and j + length < len(ref)
                       and cand_free[i + length] and ref_free[j + length]
                       and cand[i + length] == ref[j + length]):
                    length += 1
                if length > best_len:
                    best_len = length
                    best = (i, j)
        if best is None:
            break
        i, j = best
        for k in range(best_len):
            cand_free[i + k] = False
            ref_free[j + k] = False
        matched += best_len
        chunks += 1
    return matched, chunks


def meteor(candidate: str, reference: str) -> float:
    """Harmonic-mean score with a fragmentation penalty.

    F = 10PR / (9P + R) over exact unigram matches; the penalty is
    0.5 * chunks / matched, where a chunk is a maximal run of matches
    contiguous in both strings. No matches gives 0.
    """
    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not cand or not ref:
        return 0.0
    matched, chunks = _match_blocks(cand, ref)
    if matched == 0:
        return 0.0
    assert chunks <= matched, "chunk count exceeded match count"
    precision = matched / len(cand)
    recall = matched / len(ref)
    f_score = 10.0 * precision * recall / (9.0 * precision + recall)
    penalty = 0.5 * (chunks / matched)
    return f_score * (1.0 - penalty)


def mae(predictions, targets) -> float:
    predictions = list(predictions)
    targets = list(targets)
    if len(predictions) != len(targets):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(targets)} targets")
    if not predictions:
        raise Empty("mae needs at least one pair")
    return sum(abs(p - t) for p, t in zip(predictions, targets)) / len(predictions)


def exact_match(candidate: str, reference: str) -> int:
    """1 when the whitespace-normalized strings agree, else 0."""
    return int(" ".join(candidate.split()) == " ".join(reference.split()))


def levenshtein(candidate: str, reference: str) -> int:
    """Unit-cost character edit distance (two-row dynamic program)."""
    if len(candidate) < len(reference):
        candidate, reference = reference, candidate
    previous = list(range(len(reference) + 1))
    for i, ch in enumerate(candidate, start=1):
        current = [i]
        for j, rh in enumerate(reference, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ch != rh),
            ))
        previous = current
    return previous[len(reference)]


_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def extract_numeric(text: str) -> Optional[float]:
    """Pull the predicted value out of generated text.

    Prefers the number after an "Output Value:" marker; otherwise the first
    numeric literal anywhere. None when the text holds no number.
    """
    marker = text.rfind("Output Value:")
    search_space = text[marker + len("Output Value:"):] if marker >= 0 else text
    found = _NUMBER.search(search_space)
    return float(found.group()) if found else None


@dataclass
class MetricReport:
    values: dict = field(default_factory=dict)        # metric -> mean value
    sample_count: int = 0
    per_sample: dict = field(default_factory=dict)    # metric -> list of values

    def to_dict(self, include_samples: bool = False) -> dict:
        out = {"metrics": dict(sorted(self.values.items())),
               "sample_count": self.sample_count,
               "tokenization": "unicode-whitespace, case-sensitive"}
        if include_samples:
            out["per_sample"] = self.per_sample
        return out


def evaluate_pairs(candidates: list[str], references: list[str],
                   which=("bleu", "meteor", "exact", "lev")) -> MetricReport:
    """Sentence-level metrics averaged over aligned candidate/reference pairs.

    "mae" extracts numeric literals from both sides; pairs where either side
    has no number are scored against 0.0 (a wrong-format prediction counts
    fully wrong, matching the error-magnitude reading).
    """
    if len(candidates) != len(references):
        raise LengthMismatch(
            f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise Empty("no pairs to evaluate")
    report = MetricReport(sample_count=len(candidates))
    scorers = {
        "bleu": bleu,
        "meteor": meteor,
        "exact": lambda c, r: float(exact_match(c, r)),
        "lev": lambda c, r: float(levenshtein(c, r)),
        "mae": lambda c, r: abs((extract_numeric(c) or 0.0)
                                - (extract_numeric(r) or 0.0)),
    }
    for name in which:
        if name not in scorers:
            raise KeyError(f"unknown metric {name!r}")
        samples = [scorers[name](c, r) for c, r in zip(candidates, references)]
        report.per_sample[name] = samples
        report.values[name] = sum(samples) / len(samples)
    return report
