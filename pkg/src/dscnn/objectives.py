"""Dice-based training objectives with deep supervision."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError, SpecError
from .tensor import Tensor, make_node, tensor_new

SMOOTH = 1e-6


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def dice_binary(pred_mask, truth_mask) -> float:
    """Set-overlap Dice 2|A and B| / (|A| + |B|) of two binary masks.

    Two empty masks agree perfectly and score 1.0.
    """
    a, b = _values(pred_mask), _values(truth_mask)
    if a.shape != b.shape:
        raise DimensionError(f"dice_binary: shapes {a.shape} and {b.shape} differ")
    for arr in (a, b):
        if not np.isin(arr, (0, 1)).all():
            raise ContractError("dice_binary expects masks with values in {0, 1}")
    a, b = a.astype(bool), b.astype(bool)
    size = int(a.sum()) + int(b.sum())
    if size == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / size


def soft_dice_loss(prob: Tensor, truth, smooth: float = SMOOTH) -> Tensor:
    """1 - (2 sum(p q) + s) / (sum(p^2) + sum(q^2) + s), averaged over the batch.

    Returns a float64 ``(1, 1, 1, 1)`` tensor.
    """
    q = _values(truth)
    if prob.shape != q.shape:
        raise DimensionError(f"soft_dice_loss: prediction {prob.shape} vs truth {q.shape}")
    n = prob.shape[0]
    p = prob.data.reshape(n, -1).astype(np.float64)
    q = q.reshape(n, -1).astype(np.float64)
    num = 2.0 * np.einsum("ij,ij->i", p, q) + smooth
    den = np.einsum("ij,ij->i", p, p) + np.einsum("ij,ij->i", q, q) + smooth
    loss = np.mean(1.0 - num / den).reshape(1, 1, 1, 1)

    def bw(g):
        # d/dp_k of -(num/den) = -(2 q_k den - 2 p_k num) / den^2
        d = -(2.0 * q * den[:, None] - 2.0 * p * num[:, None]) / (den[:, None] ** 2)
        return ((g.reshape(-1)[0] / n) * d).reshape(prob.shape).astype(prob.dtype),

    return make_node(loss, (prob,), bw, "soft_dice")


@dataclass(frozen=True)
class SupervisionWeights:
    """Per-head weights and the weight of the main-output loss."""

    alpha: tuple[float, ...]
    main_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if any(a < 0 for a in self.alpha) or self.main_weight < 0:
            raise SpecError("supervision weights must be non-negative")
        if self.main_weight == 0 and not any(self.alpha):
            raise SpecError("at least one supervision weight must be positive")

    @classmethod
    def uniform(cls, m: int, value: float = 1.0, main_weight: float = 1.0) -> "SupervisionWeights":
        return cls(tuple([value] * m), main_weight)

    @property
    def m(self) -> int:
        return len(self.alpha)


@dataclass
class LossReport:
    head_losses: list[float]
    supervised: float
    main: float
    total: float
    alpha: tuple[float, ...] = ()
    main_weight: float = 1.0
    tensor: Tensor | None = field(default=None, repr=False)


def _zero() -> Tensor:
    return tensor_new((1, 1, 1, 1), 0.0, dtype=np.float64)


def combine_losses(head_losses: Sequence[Tensor], weights: SupervisionWeights) -> Tensor:
    """Weighted sum of per-head losses."""
    if len(head_losses) != weights.m:
        raise ContractError(f"{len(head_losses)} head losses but {weights.m} weights")
    total = _zero()
    for a, loss in zip(weights.alpha, head_losses):
        total = total + loss * a
    return total


def supervised_loss(head_probs: Sequence[Tensor], truth, weights: SupervisionWeights) -> Tensor:
    if len(head_probs) != weights.m:
        raise ContractError(f"{len(head_probs)} heads but {weights.m} weights")
    return combine_losses([soft_dice_loss(p, truth) for p in head_probs], weights)


def total_objective(main_prob: Tensor, head_probs: Sequence[Tensor], truth,
                    weights: SupervisionWeights) -> LossReport:
    """Main-output Dice loss plus the weighted deep-supervision losses."""
    if len(head_probs) != weights.m:
        raise ContractError(f"{len(head_probs)} heads but {weights.m} weights")
    head_losses = [soft_dice_loss(p, truth) for p in head_probs]
    sup = combine_losses(head_losses, weights)
    main = soft_dice_loss(main_prob, truth)
    total = sup + main * weights.main_weight
    return LossReport(
        head_losses=[h.item() for h in head_losses],
        supervised=sup.item(),
        main=main.item(),
        total=total.item(),
        alpha=weights.alpha,
        main_weight=weights.main_weight,
        tensor=total,
    )
