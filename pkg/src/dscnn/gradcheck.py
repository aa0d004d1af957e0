"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericError, SpecError
from .tensor import Tensor, backward

EPS = 1e-8


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), EPS)


@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)  # max relative error per parameter
    checked: dict[str, int] = field(default_factory=dict)  # elements compared per parameter
    refined: dict[str, int] = field(default_factory=dict)  # elements that needed a smaller step

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def worst(self, k: int = 5) -> list[tuple[str, float]]:
        return sorted(self.errors.items(), key=lambda kv: -kv[1])[:k]

    def format(self, k: int = 5) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status}: {len(self.errors)} parameters, max relative error "
                 f"{self.max_error:.3e} (tol {self.tol:g}), "
                 f"{sum(self.refined.values())}/{sum(self.checked.values())} elements re-probed"]
        for name, err in self.worst(k):
            lines.append(f"  {name:<40s} {err:.3e}  ({self.checked[name]} elements)")
        return "\n".join(lines)


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-3,
                    tol: float = 1e-3, max_elements: int | None = None, seed: int = 0,
                    refine: int = 0,
                    grad_hook: Callable[[str, np.ndarray], np.ndarray] | None = None) -> GradCheckReport:
    """Compare backward() gradients of ``loss_fn()`` against central differences.

    ``max_elements`` caps the number of entries probed per parameter (random
    subsample of at least 100).  An element that misses ``tol`` is re-probed up
    to ``refine`` times with the step divided by 10 each time, keeping the best
    agreement: a probe that straddles a ReLU kink or a max-pool switch is
    resolved by a smaller step, whereas a wrong gradient disagrees at every
    step.  For useful results the parameters should hold float64 data.
    """
    if h <= 0:
        raise SpecError(f"step h must be > 0, got {h}")
    if max_elements is not None and max_elements < 100:
        raise SpecError("max_elements must be >= 100")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    if not params:
        return report

    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss, params.values())

    def central(name, flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        fp = loss_fn().item()
        flat[i] = orig - step
        fm = loss_fn().item()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite loss while perturbing {name!r}[{i}]")
        return (fp - fm) / (2.0 * step)

    for name, p in params.items():
        analytic = p.grad.astype(np.float64).reshape(-1)
        if grad_hook is not None:
            analytic = np.asarray(grad_hook(name, analytic.copy()), np.float64)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        worst, refined = 0.0, 0
        for i in idx:
            err = float(relative_error(analytic[i], central(name, flat, i, h)))
            step = h
            refined += refine > 0 and err >= tol
            for _ in range(refine):
                if err < tol:
                    break
                step /= 10.0
                err = min(err, float(relative_error(analytic[i], central(name, flat, i, step))))
            worst = max(worst, err)
        report.errors[name] = worst
        report.checked[name] = int(idx.size)
        report.refined[name] = int(refined)
    return report


def jitter_biases(model, scale: float = 0.1, seed: int = 0) -> None:
    """Give every bias a small random value.

    Zero biases leave pre-activations exactly on the ReLU kink wherever a
    receptive field is all zeros, where finite differences are meaningless.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.parameters().items():
        if name.endswith("bias"):
            p.data = (rng.standard_normal(p.shape) * scale).astype(p.dtype)


def finite_diff_check(model, loss_fn, sample, h: float = 1e-3, tol: float = 1e-3,
                      max_elements: int | None = None, seed: int = 0, refine: int = 0,
                      grad_hook=None) -> GradCheckReport:
    """Gradient check of ``loss_fn(outputs, mask)`` over all parameters of ``model``.

    Parameters and the input image are promoted to float64 for the duration
    of the check and restored afterwards.
    """
    params = model.parameters()
    saved = {k: p.data for k, p in params.items()}
    image = Tensor(sample.image.data.astype(np.float64))
    mask = sample.mask.data.astype(np.float64)
    try:
        for p in params.values():
            p.data = p.data.astype(np.float64)
        return check_gradients(lambda: loss_fn(model.forward(image), mask), params, h=h, tol=tol,
                               max_elements=max_elements, seed=seed, refine=refine,
                               grad_hook=grad_hook)
    finally:
        for k, p in params.items():
            p.data = saved[k]
            p.grad = None
