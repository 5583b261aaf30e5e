"""Exact-match span scoring (conlleval semantics) and token accuracy."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field

from .corpus import TokenSequence, spans_from_labels


class AlignmentError(ValueError):
    pass


def _prf(correct, n_pred, n_gold):
    p = 100.0 * correct / n_pred if n_pred else 0.0
    r = 100.0 * correct / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    token_accuracy: float
    per_label: dict = field(default_factory=dict)
    long_tail_precision: float | None = None
    long_tail_recall: float | None = None
    long_tail_f1: float | None = None
    n_gold: int = 0
    n_pred: int = 0
    n_correct: int = 0
    n_long_tail_gold: int = 0

    def to_text(self):
        lines = [
            f"precision={self.precision:.2f}",
            f"recall={self.recall:.2f}",
            f"f1={self.f1:.2f}",
            f"token_accuracy={self.token_accuracy:.2f}",
        ]
        if self.long_tail_f1 is not None:
            lines += [
                f"long_tail_precision={self.long_tail_precision:.2f}",
                f"long_tail_recall={self.long_tail_recall:.2f}",
                f"long_tail_f1={self.long_tail_f1:.2f}",
                f"long_tail_gold_spans={self.n_long_tail_gold}",
            ]
        for typ in sorted(self.per_label):
            p, r, f = self.per_label[typ]
            lines.append(f"{typ}.f1={f:.2f}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _train_ngram_counts(train, needed):
    lengths = {len(f) for f in needed}
    counts = Counter()
    for s in train:
        toks = s.tokens
        for n in lengths:
            for i in range(len(toks) - n + 1):
                gram = tuple(toks[i : i + n])
                if gram in needed:
                    counts[gram] += 1
    return counts


def evaluate(pred, gold, label_set, train_dataset=None):
    """Score predicted label sequences against gold ones.

    ``gold`` may hold TokenSequence objects or bare label lists; the long-tail
    breakdown needs tokens and a ``train_dataset``. A span is long-tail when
    its token sequence occurs at most once in the training text.
    """
    if len(pred) != len(gold):
        raise AlignmentError(f"{len(pred)} predicted sentences vs {len(gold)} gold")
    gold_labels = [g.labels if isinstance(g, TokenSequence) else list(g) for g in gold]
    correct = n_pred = n_gold = 0
    tok_hit = tok_tot = 0
    by_type = Counter()
    all_spans = []
    for i, (p, g) in enumerate(zip(pred, gold_labels)):
        p = list(p)
        if len(p) != len(g):
            raise AlignmentError(f"sentence {i}: {len(p)} predicted labels vs {len(g)} gold")
        ps = set(spans_from_labels(p, label_set))
        gs = set(spans_from_labels(g, label_set))
        all_spans.append((ps, gs))
        hit = ps & gs
        correct += len(hit)
        n_pred += len(ps)
        n_gold += len(gs)
        for _, _, t in hit:
            by_type[("c", t)] += 1
        for _, _, t in ps:
            by_type[("p", t)] += 1
        for _, _, t in gs:
            by_type[("g", t)] += 1
        tok_hit += sum(int(a == b) for a, b in zip(p, g))
        tok_tot += len(g)
    prec, rec, f1 = _prf(correct, n_pred, n_gold)
    types = sorted({t for _, t in by_type})
    per_label = {t: _prf(by_type[("c", t)], by_type[("p", t)], by_type[("g", t)]) for t in types}
    report = EvalReport(
        prec, rec, f1, 100.0 * tok_hit / tok_tot if tok_tot else 0.0, per_label,
        n_gold=n_gold, n_pred=n_pred, n_correct=correct,
    )
    if train_dataset is not None and gold and all(isinstance(g, TokenSequence) for g in gold):
        needed = set()
        for s, (ps, gs) in zip(gold, all_spans):
            for a, b, _ in ps | gs:
                needed.add(tuple(s.tokens[a:b]))
        counts = _train_ngram_counts(train_dataset, needed)
        lc = lp = lg = 0
        for s, (ps, gs) in zip(gold, all_spans):
            rare = lambda sp: counts[tuple(s.tokens[sp[0] : sp[1]])] <= 1  # noqa: E731
            lps = {sp for sp in ps if rare(sp)}
            lgs = {sp for sp in gs if rare(sp)}
            lc += len(lps & lgs)
            lp += len(lps)
            lg += len(lgs)
        report.long_tail_precision, report.long_tail_recall, report.long_tail_f1 = _prf(lc, lp, lg)
        report.n_long_tail_gold = lg
    return report
