"""Corpus-level generation metrics and the evaluation report.

Variant decisions, repeated in every report header so scores are never
mistaken for other implementations' numbers:

* BLEU is corpus-level clipped n-gram precision with the standard brevity
  penalty; zero precisions are replaced by 1e-9 instead of zeroing the
  geometric mean.
* ROUGE-L uses the LCS F-score with beta = 1.2, max over references.
* METEOR is simplified to exact-match unigram alignment (greedy
  left-to-right, fewest-chunks tie-break) and reported as "meteor_lite";
  no stemming or synonym resources are consulted.
* CIDEr is the plain TF-IDF cosine variant, n = 1..4 averaged, scaled by
  10, with idf = ln((N + 1) / (1 + df)) over the reference corpus.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .data import tokenize

HEADER_NOTES = (
    "bleu: corpus-level, eps-smoothed (1e-9); rouge_l: beta=1.2; "
    "meteor_lite: exact-match unigrams only; cider: plain, idf=ln((N+1)/(1+df))"
)

# corpus item: (candidate tokens, [reference token lists])
Corpus = list[tuple[list[str], list[list[str]]]]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(corpus: Corpus, n_max: int = 4) -> list[float]:
    """BLEU-1..BLEU-k as the geometric mean of clipped n-gram precisions."""
    if not corpus:
        raise ValueError("bleu: empty corpus")
    matches = [0] * n_max
    totals = [0] * n_max
    cand_len = 0
    ref_len = 0
    for cand, refs in corpus:
        cand_len += len(cand)
        # effective reference length: closest to the candidate, shorter on ties
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, n_max + 1):
            cand_counts = _ngrams(cand, n)
            if not cand_counts:
                continue
            best = Counter()
            for r in refs:
                for gram, count in _ngrams(r, n).items():
                    best[gram] = max(best[gram], count)
            totals[n - 1] += sum(cand_counts.values())
            matches[n - 1] += sum(min(c, best[g]) for g, c in cand_counts.items())
    if cand_len == 0:
        return [0.0] * n_max
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    precisions = []
    for n in range(n_max):
        p = matches[n] / totals[n] if totals[n] > 0 else 0.0
        precisions.append(p if p > 0 else 1e-9)
    scores = []
    for k in range(1, n_max + 1):
        mean_log = sum(math.log(p) for p in precisions[:k]) / k
        scores.append(bp * math.exp(mean_log))
    return scores


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(corpus: Corpus, beta: float = 1.2) -> float:
    """Mean over the corpus of the max-over-references LCS F-score."""
    if not corpus:
        raise ValueError("rouge_l: empty corpus")
    total = 0.0
    for cand, refs in corpus:
        best = 0.0
        for ref in refs:
            lcs = _lcs_len(cand, ref)
            if lcs == 0:
                continue
            p = lcs / len(cand)
            r = lcs / len(ref)
            best = max(best, (1 + beta * beta) * p * r / (r + beta * beta * p))
        total += best
    return total / len(corpus)


def _align(cand: list[str], ref: list[str]) -> tuple[int, int]:
    """Greedy left-to-right exact unigram alignment -> (matches, chunks).

    Each candidate token takes the reference position that extends the
    current chunk when possible, otherwise the earliest unused occurrence
    (the fewest-chunks tie-break).
    """
    used = [False] * len(ref)
    pairs = []  # (candidate index, reference index)
    prev = None
    for i, tok in enumerate(cand):
        chosen = None
        if prev is not None and prev + 1 < len(ref) and not used[prev + 1] \
                and ref[prev + 1] == tok:
            chosen = prev + 1
        else:
            for j, r in enumerate(ref):
                if not used[j] and r == tok:
                    chosen = j
                    break
        if chosen is None:
            prev = None
            continue
        used[chosen] = True
        pairs.append((i, chosen))
        prev = chosen
    matches = len(pairs)
    chunks = 0
    last = None
    for ci, ri in pairs:
        # a chunk continues only when adjacent on both sides
        if last is None or (ci, ri) != (last[0] + 1, last[1] + 1):
            chunks += 1
        last = (ci, ri)
    return matches, chunks


def meteor_lite(corpus: Corpus) -> float:
    """Exact-match unigram F with a fragmentation penalty; max over refs."""
    if not corpus:
        raise ValueError("meteor_lite: empty corpus")
    total = 0.0
    for cand, refs in corpus:
        best = 0.0
        for ref in refs:
            if not cand or not ref:
                continue
            matches, chunks = _align(cand, ref)
            if matches == 0:
                continue
            p = matches / len(cand)
            r = matches / len(ref)
            f_mean = 10.0 * p * r / (r + 9.0 * p)
            penalty = 0.5 * (chunks / matches) ** 3
            best = max(best, f_mean * (1.0 - penalty))
        total += best
    return total / len(corpus)


def cider(corpus: Corpus, n_max: int = 4) -> float:
    """TF-IDF n-gram cosine consensus, averaged over n = 1..4, times 10.

    The idf is computed over the evaluation corpus' references; corpora of
    fewer than two items make it degenerate (every idf hits zero or the
    single-document constant), so scores there are best ignored.
    """
    if not corpus:
        raise ValueError("cider: empty corpus")
    n_docs = len(corpus)
    doc_freq: list[Counter] = [Counter() for _ in range(n_max)]
    for _, refs in corpus:
        for n in range(1, n_max + 1):
            seen = set()
            for ref in refs:
                seen.update(_ngrams(ref, n).keys())
            for gram in seen:
                doc_freq[n - 1][gram] += 1

    def idf(n: int, gram) -> float:
        return math.log((n_docs + 1) / (1 + doc_freq[n - 1][gram]))

    def vec(counts: Counter, n: int) -> dict:
        return {g: c * idf(n, g) for g, c in counts.items()}

    def cos(a: dict, b: dict) -> float:
        dot = sum(w * b[g] for g, w in a.items() if g in b)
        na = math.sqrt(sum(w * w for w in a.values()))
        nb = math.sqrt(sum(w * w for w in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return dot / (na * nb)

    total = 0.0
    for cand, refs in corpus:
        per_n = []
        for n in range(1, n_max + 1):
            cand_vec = vec(_ngrams(cand, n), n)
            sims = [cos(cand_vec, vec(_ngrams(ref, n), n)) for ref in refs]
            per_n.append(sum(sims) / len(sims))
        total += 10.0 * sum(per_n) / n_max
    return total / len(corpus)


@dataclass
class MetricReport:
    cider: float
    bleu4: float
    bleu3: float
    bleu2: float
    bleu1: float
    rouge_l: float
    meteor_lite: float
    items: int = 0
    skipped: int = 0
    notes: str = HEADER_NOTES

    def to_text(self) -> str:
        header = f"# {self.notes}\n# items={self.items} skipped={self.skipped}\n"
        cols = ["C", "B4", "B3", "B2", "B1", "R", "M"]
        vals = [self.cider, self.bleu4, self.bleu3, self.bleu2, self.bleu1,
                self.rouge_l, self.meteor_lite]
        head = " ".join(f"{c:>7}" for c in cols)
        row = " ".join(f"{v:7.3f}" for v in vals)
        return header + head + "\n" + row + "\n"

    def to_dict(self) -> dict:
        return {
            "C": self.cider, "B4": self.bleu4, "B3": self.bleu3,
            "B2": self.bleu2, "B1": self.bleu1, "R": self.rouge_l,
            "M": self.meteor_lite, "items": self.items, "skipped": self.skipped,
            "notes": self.notes,
        }


def score_corpus(corpus: Corpus, skipped: int = 0) -> MetricReport:
    b1, b2, b3, b4 = bleu(corpus)
    return MetricReport(
        cider=cider(corpus), bleu4=b4, bleu3=b3, bleu2=b2, bleu1=b1,
        rouge_l=rouge_l(corpus), meteor_lite=meteor_lite(corpus),
        items=len(corpus), skipped=skipped,
    )


def evaluate(model, examples, store, beam_width=None, max_len=None):
    """Generate one answer per example and score it against the ground truth.

    Items whose features cannot be loaded are skipped and counted.
    Returns (MetricReport, generated records).
    """
    from .data import make_batch

    corpus: Corpus = []
    records = []
    skipped = 0
    for ex in examples:
        try:
            batch = make_batch([ex], model.vocab, store,
                               frame_count=model.config.frame_count, mode="eval")
        except Exception as exc:  # missing/corrupt features: skip, keep count
            skipped += 1
            records.append({"video_id": ex.video_id, "turn": ex.turn, "error": str(exc)})
            continue
        seq, maps = model.generate(batch, beam_width=beam_width, max_len=max_len)[0]
        answer = model.vocab.decode(seq.tokens)
        corpus.append((tokenize(answer), [tokenize(ex.answer)]))
        records.append({"video_id": ex.video_id, "turn": ex.turn,
                        "answer": answer, "log_prob": seq.log_prob,
                        "attention": maps})
    if not corpus:
        raise ValueError("evaluate: no scorable items")
    return score_corpus(corpus, skipped=skipped), records


def report_to_json(report: MetricReport, config_dict: dict) -> str:
    return json.dumps({"report": report.to_dict(), "config": config_dict},
                      indent=1, sort_keys=True)
