"""Evaluation metrics: corpus BLEU-4, category purity, NMI, routing stats."""

import json
import logging
import math
from collections import Counter

import numpy as np

log = logging.getLogger(__name__)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses, references):
    """Corpus-level BLEU-4 in [0, 100]: geometric mean of clipped 1..4-gram
    precisions times the brevity penalty.  No smoothing; any zero n-gram
    precision gives 0.0.  Inputs are lists of token sequences.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"hypothesis/reference counts differ: {len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise ValueError("bleu4 requires a non-empty corpus")
    matched = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            hc = _ngrams(hyp, n)
            rc = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    if any(t == 0 for t in total) or any(m == 0 for m in matched):
        return 0.0
    logp = sum(math.log(m / t) for m, t in zip(matched, total)) / 4.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return 100.0 * bp * math.exp(logp)


def pur(matrix):
    """Category purity: (1/U) * sum over categories of the column maximum.

    matrix: counts with rows = true domains, columns = categories.
    """
    matrix = np.asarray(matrix)
    u = matrix.sum()
    if u < 1:
        raise ValueError("purity needs at least one counted case")
    return float(matrix.max(axis=0).sum() / u)


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels):
    """Normalized mutual information with arithmetic-mean normalization.

    Both labelings constant: 1.0 if the partitions are identical, else 0.0.
    """
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    if true_labels.shape != pred_labels.shape:
        raise ValueError("label vectors must have equal length")
    n = true_labels.size
    if n == 0:
        raise ValueError("nmi requires at least one label")
    _, ti = np.unique(true_labels, return_inverse=True)
    _, pi = np.unique(pred_labels, return_inverse=True)
    kt, kp = ti.max() + 1, pi.max() + 1
    cont = np.zeros((kt, kp))
    np.add.at(cont, (ti, pi), 1.0)
    ht = _entropy(cont.sum(axis=1), n)
    hp = _entropy(cont.sum(axis=0), n)
    if ht == 0.0 and hp == 0.0:
        return 1.0  # both constant: identical partitions by convention
    mi = 0.0
    row = cont.sum(axis=1)
    col = cont.sum(axis=0)
    for i in range(kt):
        for j in range(kp):
            nij = cont[i, j]
            if nij > 0:
                mi += (nij / n) * math.log(n * nij / (row[i] * col[j]))
    denom = 0.5 * (ht + hp)
    if denom == 0.0:
        return 0.0
    return float(np.clip(mi / denom, 0.0, 1.0))


class RoutingStats:
    """Domain x category count matrix plus derived totals."""

    def __init__(self, domains, num_categories):
        self.domains = list(domains)
        self.matrix = np.zeros((len(self.domains), num_categories), dtype=np.int64)
        self._index = {d: i for i, d in enumerate(self.domains)}

    def add(self, domain, category):
        self.matrix[self._index[domain], category] += 1

    @property
    def total(self):
        return int(self.matrix.sum())

    def purity(self):
        return pur(self.matrix)

    def to_csv(self):
        k = self.matrix.shape[1]
        lines = ["domain," + ",".join(str(j) for j in range(k))]
        for d, row in zip(self.domains, self.matrix):
            lines.append(d + "," + ",".join(str(int(c)) for c in row))
        return "\n".join(lines) + "\n"

    def to_json_obj(self):
        return {"domains": self.domains,
                "categories": list(range(self.matrix.shape[1])),
                "counts": self.matrix.tolist(),
                "total": self.total}


def routing_stats(tagged_pairs, categories, num_categories):
    """Tally domain x category counts; untagged sentences are skipped."""
    domains = []
    for (_, _, tag), _cat in zip(tagged_pairs, categories):
        if tag is not None and tag not in domains:
            domains.append(tag)
    stats = RoutingStats(domains, num_categories)
    skipped = 0
    for (_, _, tag), cat in zip(tagged_pairs, categories):
        if tag is None:
            skipped += 1
            continue
        stats.add(tag, int(cat))
    if skipped:
        log.warning("routing_stats: %d unlabeled sentences excluded", skipped)
    return stats


def metrics_report(per_domain, rnd=None, purity=None, nmi_score=None):
    """Assemble the metrics JSON structure: per-domain rows plus AVG/RND/PUR/NMI."""
    report = {"domains": per_domain}
    if per_domain:
        report["AVG"] = {
            key: float(np.mean([d[key] for d in per_domain.values()]))
            for key in next(iter(per_domain.values()))
        }
    if rnd is not None:
        report["RND"] = rnd
    if purity is not None:
        report["PUR"] = purity
    if nmi_score is not None:
        report["NMI"] = nmi_score
    return report


def dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
