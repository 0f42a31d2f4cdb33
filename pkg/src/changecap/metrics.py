"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr-D, composite.

Conventions (fixed so scores are comparable across runs):
  * tokenization: lowercase + whitespace split, identical to the decoder;
  * BLEU: clipped n-gram counts summed over the corpus, no smoothing
    (any zero precision zeroes the score), brevity penalty from the
    closest reference length (ties to the shorter);
  * ROUGE-L: LCS F-measure with beta = 1.2, max over references, mean
    over the corpus;
  * CIDEr-D: tf-idf n-gram cosine for n = 1..4 with hypothesis counts
    clipped at reference counts, Gaussian length penalty (sigma = 6),
    x10 per n, averaged over n; one idf document = one reference set.

Values are fractions (CIDEr-D in [0, 10]); reports scale by 100 for
display.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError, LoadError
from .vocab import tokenize

CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2
N_MAX = 4


@dataclass
class EvalItem:
    id: str
    hypothesis: str
    references: list[str]


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider_d: float
    composite: float
    n_pairs: int

    def to_dict(self, scaled: bool = True) -> dict:
        s = 100.0 if scaled else 1.0
        return {
            "bleu1": self.bleu1 * s,
            "bleu2": self.bleu2 * s,
            "bleu3": self.bleu3 * s,
            "bleu4": self.bleu4 * s,
            "rouge_l": self.rouge_l * s,
            "cider_d": self.cider_d * s,
            "composite": self.composite * s,
            "n_pairs": self.n_pairs,
        }


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_corpus(corpus: list[EvalItem]):
    if not corpus:
        raise ContractError("empty evaluation corpus")
    for item in corpus:
        if not item.references:
            raise ContractError(f"pair {item.id!r} has no references")


def bleu(corpus: list[EvalItem], n_max: int = N_MAX) -> list[float]:
    """Corpus BLEU-1..BLEU-n_max."""
    _check_corpus(corpus)
    matched = [0] * (n_max + 1)
    total = [0] * (n_max + 1)
    hyp_len = 0
    ref_len = 0
    for item in corpus:
        hyp = tokenize(item.hypothesis)
        refs = [tokenize(r) for r in item.references]
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(hyp)), L))
        for n in range(1, n_max + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            max_ref = Counter()
            for r in refs:
                for gram, c in _ngrams(r, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            matched[n] += sum(min(c, max_ref[gram]) for gram, c in counts.items())
            total[n] += sum(counts.values())
    bp = 1.0 if hyp_len > ref_len else (math.exp(1.0 - ref_len / hyp_len) if hyp_len > 0 else 0.0)
    precisions = [matched[n] / total[n] if total[n] > 0 else 0.0 for n in range(1, n_max + 1)]
    scores = []
    for n in range(1, n_max + 1):
        if any(p == 0.0 for p in precisions[:n]):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(math.fsum(math.log(p) for p in precisions[:n]) / n))
    return scores


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(corpus: list[EvalItem], beta: float = ROUGE_BETA) -> float:
    """Mean over the corpus of the best LCS F-measure across references."""
    _check_corpus(corpus)
    per_item = []
    for item in corpus:
        hyp = tokenize(item.hypothesis)
        best = 0.0
        for ref in item.references:
            ref_t = tokenize(ref)
            lcs = _lcs_length(hyp, ref_t)
            if lcs == 0:
                continue
            p = lcs / len(hyp)
            r = lcs / len(ref_t)
            f = (1 + beta**2) * p * r / (r + beta**2 * p)
            best = max(best, f)
        per_item.append(best)
    return math.fsum(per_item) / len(per_item)


def cider_d(corpus: list[EvalItem], sigma: float = CIDER_SIGMA, n_max: int = N_MAX) -> float:
    """Consensus score in [0, 10]; idf comes from the reference corpus."""
    _check_corpus(corpus)
    if len(corpus) == 1:
        warnings.warn("cider_d over a single pair is degenerate: every idf is 0", stacklevel=2)

    doc_freq: list[Counter] = [Counter() for _ in range(n_max + 1)]
    for item in corpus:
        seen: list[set] = [set() for _ in range(n_max + 1)]
        for ref in item.references:
            toks = tokenize(ref)
            for n in range(1, n_max + 1):
                seen[n].update(_ngrams(toks, n).keys())
        for n in range(1, n_max + 1):
            for gram in seen[n]:
                doc_freq[n][gram] += 1
    log_docs = math.log(len(corpus))

    def tfidf(counts: Counter, n: int) -> tuple[dict, float]:
        vec = {g: c * (log_docs - math.log(max(1.0, doc_freq[n][g]))) for g, c in counts.items()}
        norm = math.sqrt(math.fsum(v * v for v in vec.values()))
        return vec, norm

    per_item = []
    for item in corpus:
        hyp = tokenize(item.hypothesis)
        hyp_counts = [None] + [_ngrams(hyp, n) for n in range(1, n_max + 1)]
        hyp_vecs = [None] + [tfidf(hyp_counts[n], n) for n in range(1, n_max + 1)]
        n_scores = []
        for n in range(1, n_max + 1):
            vec_h, norm_h = hyp_vecs[n]
            ref_scores = []
            for ref in item.references:
                ref_t = tokenize(ref)
                vec_r, norm_r = tfidf(_ngrams(ref_t, n), n)
                if norm_h > 0 and norm_r > 0:
                    cross = math.fsum(min(v, vec_r[g]) * vec_r[g] for g, v in vec_h.items() if g in vec_r)
                    sim = cross / (norm_h * norm_r)
                else:
                    sim = 0.0
                delta = len(hyp) - len(ref_t)
                ref_scores.append(sim * math.exp(-(delta * delta) / (2.0 * sigma * sigma)))
            n_scores.append(10.0 * math.fsum(ref_scores) / len(ref_scores))
        per_item.append(math.fsum(n_scores) / n_max)
    return math.fsum(per_item) / len(per_item)


DEFAULT_COMPOSITE_WEIGHTS = {"bleu4": 1.0, "rouge_l": 1.0, "cider_d": 1.0}


def composite(bleu4: float, rouge_l_score: float, cider_d_score: float,
              weights: dict | None = None) -> float:
    """Weighted mean of BLEU-4, ROUGE-L, and CIDEr-D/10, in [0, 1]."""
    w = dict(DEFAULT_COMPOSITE_WEIGHTS if weights is None else weights)
    parts = {"bleu4": bleu4, "rouge_l": rouge_l_score, "cider_d": cider_d_score / 10.0}
    total_w = math.fsum(w.values())
    if total_w <= 0:
        raise ContractError("composite weights must sum to a positive value")
    return math.fsum(w[k] * parts[k] for k in w) / total_w


def score_corpus(corpus: list[EvalItem], weights: dict | None = None) -> MetricReport:
    b = bleu(corpus)
    r = rouge_l(corpus)
    c = cider_d(corpus)
    return MetricReport(
        bleu1=b[0], bleu2=b[1], bleu3=b[2], bleu4=b[3],
        rouge_l=r, cider_d=c,
        composite=composite(b[3], r, c, weights),
        n_pairs=len(corpus),
    )


def read_jsonl(path) -> list[EvalItem]:
    items = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            items.append(EvalItem(id=str(obj["id"]), hypothesis=obj["hypothesis"],
                                  references=list(obj["references"])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise LoadError(f"{path}:{lineno}: bad JSON-lines record ({exc})") from exc
    return items


def write_jsonl(items: list[EvalItem], path):
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({"id": item.id, "hypothesis": item.hypothesis,
                                 "references": item.references}) + "\n")
