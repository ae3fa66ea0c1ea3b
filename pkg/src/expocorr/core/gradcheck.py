from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


class GradientCheckError(FloatingPointError):
    def __init__(self, bad_elements: list[tuple[int, ...]]):
        self.bad_elements = bad_elements
        shown = ", ".join(str(i) for i in bad_elements[:8])
        more = "" if len(bad_elements) <= 8 else f" (+{len(bad_elements) - 8} more)"
        super().__init__(f"non-finite loss at perturbed elements {shown}{more}")


_STENCILS = {
    2: ((1.0, 1.0), (-1.0, -1.0)),
    4: ((2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)),
}
_DENOM = {2: 2.0, 4: 12.0}


def finite_diff_check(
    loss_fn: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5, order: int = 2
) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``loss_fn`` maps a tensor shaped like ``point`` to a scalar tensor. The
    relative error per element is ``|ga - gfd| / max(1e-12, |ga| + |gfd|)``.
    ``order=4`` uses the five-point central stencil, which allows a larger
    ``eps`` (less cancellation) for losses with very small gradient entries.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    if order not in _STENCILS:
        raise ValueError(f"order must be 2 or 4, got {order}")
    base = np.array(point.data, dtype=point.dtype, copy=True)

    probe = Tensor(base.copy(), requires_grad=True)
    loss = loss_fn(probe)
    loss.backward()
    analytic = np.zeros_like(base) if probe.grad is None else probe.grad

    numeric = np.empty_like(base)
    flat = numeric.reshape(-1)
    bad: list[tuple[int, ...]] = []
    for k in range(base.size):
        idx = np.unravel_index(k, base.shape)
        values = []
        for step, _ in _STENCILS[order]:
            shifted = base.copy()
            shifted[idx] += step * eps
            values.append(float(loss_fn(Tensor(shifted)).data))
        if not all(np.isfinite(values)):
            bad.append(tuple(int(i) for i in idx))
            flat[k] = np.nan
            continue
        weights = [c for _, c in _STENCILS[order]]
        flat[k] = float(np.dot(weights, values)) / (_DENOM[order] * eps)
    if bad:
        raise GradientCheckError(bad)

    rel = np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0
