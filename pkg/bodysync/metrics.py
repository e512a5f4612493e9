"""
Success-inference quality metrics
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from .errors import EmptyInput
from .models import ConfusionCounts, Verdict

CONFUSION_COLUMNS = ("task", "trials", "tp", "fp", "fn", "tn", "tpr", "tnr")


def percent(numerator: int, denominator: int) -> float:
    """Percentage; an empty denominator gives 0"""
    return 100.0 * numerator / denominator if denominator else 0.0


def format_percent(value: float) -> str:
    return f"{value:.2f}"


@dataclass(frozen=True)
class ConfusionReport:
    counts: ConfusionCounts
    tpr: float
    tnr: float
    accuracy: float

    def as_strings(self) -> Dict[str, str]:
        return {
            "tpr": format_percent(self.tpr),
            "tnr": format_percent(self.tnr),
            "accuracy": format_percent(self.accuracy),
        }


def count_outcomes(pairs: Iterable[Tuple[Verdict, bool]]) -> ConfusionCounts:
    """Tally predicted answers against ground truth; not_sure counts as a negative prediction"""
    tp = fp = fn = tn = 0
    for predicted, actual in pairs:
        positive = predicted.answer == "yes"
        if positive and actual:
            tp += 1
        elif positive:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def rates(counts: ConfusionCounts) -> ConfusionReport:
    return ConfusionReport(
        counts=counts,
        tpr=percent(counts.tp, counts.tp + counts.fn),
        tnr=percent(counts.tn, counts.tn + counts.fp),
        accuracy=percent(counts.tp + counts.tn, counts.total),
    )


def confusion_metrics(pairs: Sequence[Tuple[Verdict, bool]]) -> ConfusionReport:
    """
    Confusion counts and rates for predicted verdicts

    Args:
        pairs: (predicted verdict, ground-truth completion) per trial

    Raises:
        EmptyInput: no pairs
    """
    if not pairs:
        raise EmptyInput("confusion metrics need at least one prediction")
    return rates(count_outcomes(pairs))


def confusion_row(task: str, counts: ConfusionCounts) -> List[str]:
    """CSV row matching CONFUSION_COLUMNS"""
    report = rates(counts)
    return [
        task,
        str(counts.total),
        str(counts.tp),
        str(counts.fp),
        str(counts.fn),
        str(counts.tn),
        format_percent(report.tpr),
        format_percent(report.tnr),
    ]
