# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
Differentiable numerics substrate.

Every loss in the package is written with torch operations on float64
tensors, so gradients come from reverse-mode autograd. This module wraps
that engine behind a small named-parameter API and provides an independent
central finite-difference oracle to check it against.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .errors import CompositionError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = torch.float64

Matrix = torch.Tensor
Objective = Callable[[Mapping[str, torch.Tensor]], torch.Tensor]


def as_matrix(data, *, name: str = 'matrix') -> torch.Tensor:
    """Converts array-like data into a finite 2-D float64 tensor."""
    tensor = torch.as_tensor(np.asarray(data, dtype=np.float64), dtype=DTYPE)
    if tensor.ndim == 1:
        tensor = tensor.reshape(1, -1)
    if tensor.ndim != 2:
        raise ShapeError(f'{name} must be 2-D, got shape {tuple(tensor.shape)}')
    if not torch.isfinite(tensor).all():
        raise ShapeError(f'{name} contains non-finite entries')
    return tensor


@dataclass
class GradientRecord:
    """A named parameter value and (once evaluated) its gradient."""

    name: str
    value: torch.Tensor
    gradient: torch.Tensor | None = field(default=None)

    def __post_init__(self):
        self.value = torch.as_tensor(self.value, dtype=DTYPE)
        if self.gradient is not None and self.gradient.shape != self.value.shape:
            raise ShapeError(
                f'gradient of {self.name!r} has shape {tuple(self.gradient.shape)}, '
                f'value has {tuple(self.value.shape)}'
            )


def _check_scalar(result) -> torch.Tensor:
    if not isinstance(result, torch.Tensor):
        raise CompositionError(
            f'objective returned {type(result).__name__}, expected a torch scalar'
        )
    if result.numel() != 1:
        raise ShapeError(
            f'objective must be scalar, got shape {tuple(result.shape)}'
        )
    return result.reshape(())


def _evaluate(objective: Objective, values: Mapping[str, torch.Tensor]):
    try:
        return _check_scalar(objective(values))
    except RuntimeError as e:
        # torch reports broadcasting/matmul mismatches as RuntimeError
        if 'size' in str(e) or 'shape' in str(e):
            raise ShapeError(str(e)) from e
        raise


def eval_with_grad(
    objective: Objective, params: Sequence[GradientRecord]
) -> tuple[float, list[GradientRecord]]:
    """
    Evaluates a scalar objective and its gradient w.r.t. every parameter.

    Parameters the objective never touches receive an all-zero gradient.
    The input records are not mutated; filled copies are returned.
    """
    leaves = {
        p.name: p.value.detach().clone().requires_grad_(True) for p in params
    }
    value = _evaluate(objective, leaves)
    if not value.requires_grad:
        # Either a constant objective or one that left the autograd graph
        if not _is_constant(objective, leaves):
            raise CompositionError(
                'objective output is detached from its parameters; '
                'use torch primitives only'
            )
        grads = [torch.zeros_like(v) for v in leaves.values()]
    else:
        grads = torch.autograd.grad(
            value, list(leaves.values()), allow_unused=True
        )
    filled = [
        GradientRecord(
            name=p.name,
            value=p.value.detach().clone(),
            gradient=(
                torch.zeros_like(p.value) if g is None else g.detach().clone()
            ),
        )
        for p, g in zip(params, grads)
    ]
    return float(value.detach()), filled


def _is_constant(objective: Objective, leaves: Mapping[str, torch.Tensor]):
    shifted = {k: v.detach() + 0.5 for k, v in leaves.items()}
    base = {k: v.detach() for k, v in leaves.items()}
    with torch.no_grad():
        return torch.equal(
            _check_scalar(objective(shifted)), _check_scalar(objective(base))
        )


def finite_diff_grad(
    objective: Objective, params: Sequence[GradientRecord], step: float = 1e-5
) -> list[GradientRecord]:
    """Central finite-difference gradient: (f(x+h) - f(x-h)) / 2h per entry."""
    if step <= 0:
        raise ValueError(f'step must be positive, got {step}')

    base = {p.name: p.value.detach().clone().contiguous() for p in params}
    results = []
    with torch.no_grad():
        for p in params:
            flat = base[p.name].view(-1)
            grad = torch.zeros_like(flat)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                f_plus = _evaluate(objective, base).item()
                flat[i] = original - step
                f_minus = _evaluate(objective, base).item()
                flat[i] = original
                grad[i] = (f_plus - f_minus) / (2.0 * step)
            results.append(
                GradientRecord(
                    name=p.name,
                    value=p.value.detach().clone(),
                    gradient=grad.reshape(p.value.shape),
                )
            )
    return results


def max_relative_error(
    analytic: Sequence[GradientRecord], numeric: Sequence[GradientRecord]
) -> float:
    """Largest ||a - n||_inf / max(||n||_inf, 1e-8) over matching records."""
    worst = 0.0
    numeric_by_name = {r.name: r for r in numeric}
    for a in analytic:
        n = numeric_by_name[a.name]
        scale = max(float(n.gradient.abs().max()), 1e-8)
        err = float((a.gradient - n.gradient).abs().max()) / scale
        worst = max(worst, err)
    return worst


def matrix_power_sum(W: torch.Tensor, K: int, scale: float) -> torch.Tensor:
    """
    Returns W + scale * sum_{k=2..K} W^k by repeated multiplication.

    Entry (i, j) accumulates every directed walk from i to j of length at
    most K, weighted by the product of its edge weights (walks longer than
    one hop are additionally multiplied by ``scale``). A stack of matrices
    with shape ``(..., n, n)`` is handled matrix by matrix.
    """
    if W.ndim < 2 or W.shape[-1] != W.shape[-2]:
        raise ShapeError(f'W must be square, got shape {tuple(W.shape)}')
    if K < 1:
        raise ValueError(f'K must be >= 1, got {K}')
    if K == 1:
        return W

    power = W
    higher = torch.zeros_like(W)
    for _ in range(2, K + 1):
        power = power @ W
        higher = higher + power
    return W + scale * higher
