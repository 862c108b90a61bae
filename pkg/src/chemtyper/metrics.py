"""Multi-label evaluation: pooled Micro-F1, sample-average accuracy, per-type scores."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Sequence

from chemtyper.errors import ContractError

log = logging.getLogger(__name__)

LabelSet = frozenset


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def _check(predictions: Sequence, gold: Sequence) -> None:
    if len(predictions) != len(gold):
        raise ContractError(f"{len(predictions)} predictions for {len(gold)} gold samples")


def pooled_counts(predictions: Sequence[Iterable[Hashable]], gold: Sequence[Iterable[Hashable]]) -> Counts:
    _check(predictions, gold)
    tp = fp = fn = 0
    for p, g in zip(predictions, gold):
        p, g = set(p), set(g)
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    return Counts(tp, fp, fn)


def micro_f1(predictions, gold) -> tuple[float, Counts]:
    """F1 = 2TP / (2TP + FP + FN) over all (sample, label) pairs; 0 when undefined."""
    counts = pooled_counts(predictions, gold)
    return counts.f1, counts


def sample_accuracy(predictions, gold, jaccard: bool = False) -> float:
    """Share of samples whose predicted set equals the gold set.

    With ``jaccard=True`` each sample scores |P & G| / |P | G| instead
    (two empty sets score 1).
    """
    _check(predictions, gold)
    if not gold:
        log.warning("sample accuracy of an empty evaluation set is vacuously 1.0")
        return 1.0
    total = 0.0
    for p, g in zip(predictions, gold):
        p, g = set(p), set(g)
        if jaccard:
            union = p | g
            total += len(p & g) / len(union) if union else 1.0
        else:
            total += p == g
    return total / len(gold)


@dataclass
class EvalReport:
    micro_f1: float
    sample_accuracy: float
    counts: Counts
    per_type: dict = field(default_factory=dict)
    samples: int = 0

    def to_json(self) -> dict:
        out = asdict(self)
        out["counts"] = asdict(self.counts)
        out["micro_precision"] = self.counts.precision
        out["micro_recall"] = self.counts.recall
        return out


def per_type_scores(predictions, gold, labels: Iterable[Hashable] | None = None) -> dict:
    _check(predictions, gold)
    tp, fp, fn, support = Counter(), Counter(), Counter(), Counter()
    seen = []
    for p, g in zip(predictions, gold):
        p, g = set(p), set(g)
        for x in p & g:
            tp[x] += 1
        for x in p - g:
            fp[x] += 1
        for x in g - p:
            fn[x] += 1
        for x in g:
            support[x] += 1
        seen += list(p | g)
    names = list(labels) if labels is not None else sorted(set(seen), key=str)
    out = {}
    for name in names:
        c = Counts(tp[name], fp[name], fn[name])
        out[str(name)] = {"precision": c.precision, "recall": c.recall, "f1": c.f1, "support": support[name]}
    return out


def evaluate(predictions, gold, labels=None, jaccard: bool = False) -> EvalReport:
    f1, counts = micro_f1(predictions, gold)
    return EvalReport(
        micro_f1=f1,
        sample_accuracy=sample_accuracy(predictions, gold, jaccard=jaccard),
        counts=counts,
        per_type=per_type_scores(predictions, gold, labels),
        samples=len(gold),
    )


def format_table(reports: dict[str, EvalReport], model_name: str = "model") -> str:
    """Plain-text table with Micro-F1 and Accuracy (percent) per split."""
    splits = list(reports)
    header = ["Model"] + [f"{s} Micro-F1" for s in splits] + [f"{s} Accuracy" for s in splits]
    cells = [model_name]
    cells += [f"{100 * reports[s].micro_f1:.2f}" for s in splits]
    cells += [f"{100 * reports[s].sample_accuracy:.2f}" for s in splits]
    widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    row = "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    return "\n".join([line, "-" * len(line), row]) + "\n"


def dumps(report: EvalReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True)
