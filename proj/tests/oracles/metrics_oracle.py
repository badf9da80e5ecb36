#!/usr/bin/env python3
"""Independent BLEU / CIDEr reference values for the metrics tests.

Token streams are generated by the shared integer LCG (identical in the C++
test), so no literals are copied by hand. Implementations here are written
from the metric definitions with stdlib only.
"""
import math
from collections import Counter

OUT = "tests/data/metrics.expected"


class Lcg:
    def __init__(self, seed):
        self.s = seed

    def next(self):
        self.s = (1103515245 * self.s + 12345) % (1 << 31)
        return self.s


def make_pairs():
    g = Lcg(20260816)
    pairs = []
    for _ in range(10):
        ref_len = 8 + g.next() % 7
        hyp_len = 7 + g.next() % 8
        ref = ["w%d" % (g.next() % 12) for _ in range(ref_len)]
        hyp = []
        for t in range(hyp_len):
            coin = g.next() % 4
            if coin != 0 and t < ref_len:
                hyp.append(ref[t])
            else:
                hyp.append("w%d" % (g.next() % 12))
        pairs.append((hyp, ref))
    return pairs


def ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(pairs, max_n=4):
    log_p = 0.0
    orders = 0
    for n in range(1, max_n + 1):
        match = 0
        total = 0
        for hyp, ref in pairs:
            h = ngrams(hyp, n)
            r = ngrams(ref, n)
            match += sum(min(c, r[g]) for g, c in h.items() if g in r)
            total += max(0, len(hyp) - n + 1)
        if total == 0:
            continue
        if match == 0:
            return 0.0
        orders += 1
        log_p += math.log(match / total)
    if orders == 0:
        return 0.0
    c = sum(len(h) for h, _ in pairs)
    r = sum(len(rf) for _, rf in pairs)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p / orders)


def sentence_bleu(hyp, ref, max_n=4):
    if not hyp:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        h = ngrams(hyp, n)
        r = ngrams(ref, n)
        match = sum(min(c, r[g]) for g, c in h.items() if g in r)
        total = max(0, len(hyp) - n + 1)
        log_p += math.log((match + 1) / (total + 1))
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(log_p / max_n)


def cider_instances(pairs, max_n=4):
    N = len(pairs)
    scores = [0.0] * N
    for n in range(1, max_n + 1):
        refc = [ngrams(r, n) for _, r in pairs]
        hypc = [ngrams(h, n) for h, _ in pairs]
        df = Counter()
        for rc in refc:
            for gkey in rc:
                df[gkey] += 1

        def idf(gkey):
            return math.log(N / max(1, df[gkey]))

        for i in range(N):
            hh = sum((c * idf(g)) ** 2 for g, c in hypc[i].items())
            rr = sum((c * idf(g)) ** 2 for g, c in refc[i].items())
            hr = sum(c * idf(g) * refc[i][g] * idf(g)
                     for g, c in hypc[i].items() if g in refc[i])
            if hh > 0.0 and rr > 0.0:
                scores[i] += hr / (math.sqrt(hh) * math.sqrt(rr))
    return [s / max_n for s in scores]


def main():
    pairs = make_pairs()
    lines = []
    lines.append("corpus_bleu %.17g" % corpus_bleu(pairs))
    for i, (h, r) in enumerate(pairs):
        lines.append("sentence_bleu %d %.17g" % (i, sentence_bleu(h, r)))
    inst = cider_instances(pairs)
    lines.append("cider %.17g" % (10.0 * sum(inst) / len(inst)))
    for i, v in enumerate(inst):
        lines.append("cider_inst %d %.17g" % (i, v))

    # Fixed 2-instance corpus: instance 0's hypothesis equals its reference,
    # yet scores below 1 per instance because shared n-grams (df = N) have
    # idf 0 and a 3-token sequence has no 4-grams at all.
    small = [
        (["the", "of", "model"],
         ["the", "of", "model"]),
        (["a", "different", "sentence"],
         ["the", "of", "a", "different", "kind"]),
    ]
    sinst = cider_instances(small)
    lines.append("small_cider %.17g" % (10.0 * sum(sinst) / len(sinst)))
    lines.append("small_cider_inst0 %.17g" % sinst[0])

    with open(OUT, "w") as f:
        f.write("\n".join(lines) + "\n")
    print("\n".join(lines))


if __name__ == "__main__":
    main()
