"""Binarisation, Dice statistics and comparison tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, SpecError
from .objectives import dice_binary
from .tensor import Tensor, no_grad


def binarize(prob, threshold: float = 0.5) -> Tensor:
    """1 where ``prob > threshold`` (strict), else 0."""
    if not 0.0 <= threshold <= 1.0:
        raise SpecError(f"threshold must lie in [0, 1], got {threshold}")
    data = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    return Tensor((data > threshold).astype(np.float32))


@dataclass
class EvalSummary:
    label: str
    dscs: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.dscs))

    @property
    def median(self) -> float:
        return float(np.median(self.dscs))

    @property
    def maximum(self) -> float:
        return float(np.max(self.dscs))


def summarize(dscs: Sequence[float], label: str = "model") -> EvalSummary:
    if len(dscs) == 0:
        raise ContractError("cannot summarise an empty list of scores")
    return EvalSummary(label, [float(d) for d in dscs])


def evaluate(model, test, label: str = "model", threshold: float = 0.5) -> EvalSummary:
    """Per-sample binary Dice of the thresholded main output."""
    if len(test) == 0:
        raise ContractError("evaluate needs a non-empty test set")
    scores = []
    with no_grad():
        for sample in test:
            main = model.forward(sample.image)[0]
            scores.append(dice_binary(binarize(main, threshold), sample.mask))
    return summarize(scores, label)


def compare_report(summaries: Sequence[EvalSummary]) -> str:
    """Plain-text table with mean, median and maximum Dice to three decimals."""
    headers = ("method", "meanDSC", "medianDSC", "maximumDSC")
    rows = [(s.label, f"{s.mean:.3f}", f"{s.median:.3f}", f"{s.maximum:.3f}") for s in summaries]
    widths = [max(len(r[i]) for r in [headers, *rows]) for i in range(4)]
    lines = []
    for r in [headers, *rows]:
        cells = [r[0].ljust(widths[0])] + [r[i].rjust(widths[i]) for i in range(1, 4)]
        lines.append("  ".join(cells))
    rule = "-" * len(lines[0])
    return "\n".join([lines[0], rule, *lines[1:]]) + "\n"
