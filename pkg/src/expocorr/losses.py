"""Training objective: pyramid, reconstruction, SSIM and adversarial terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence, Union

import numpy as np

from .core import functional as F
from .core.tensor import Tensor, as_tensor
from .metrics import SsimParams, ssim_tensor

PROB_CLAMP = 1e-7
PYRAMID_INDICES = (2, 3, 4)

Scalar = Union[float, Tensor]


class LossError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.25
    beta: float = 0.25
    gamma: float = 1.0
    delta: float = 0.25

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise LossError(f"loss weight {name} must be non-negative")


@dataclass
class LossReport:
    pyr: float
    rec: float
    ssim: float
    adv: float
    total: float
    pyr_levels: tuple[float, float, float] = (0.0, 0.0, 0.0)
    adv_raw: float = 0.0
    objective: Tensor | None = field(default=None, repr=False, compare=False)

    def as_row(self) -> dict[str, float]:
        l2, l3, l4 = self.pyr_levels
        return {
            "pyr": self.pyr,
            "rec": self.rec,
            "ssim": self.ssim,
            "adv": self.adv,
            "adv_raw": self.adv_raw,
            "total": self.total,
            "pyr_l2": l2,
            "pyr_l3": l3,
            "pyr_l4": l4,
        }


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")


def l1_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target)
    return F.mean(F.abs(pred - target))


def _by_index(levels) -> dict[int, Tensor]:
    if isinstance(levels, Mapping):
        out = {int(i): as_tensor(t) for i, t in levels.items()}
    else:
        levels = list(levels)
        out = {i: as_tensor(t) for i, t in zip(PYRAMID_INDICES, levels)}
        if len(levels) != len(PYRAMID_INDICES):
            raise LossError(f"expected {len(PYRAMID_INDICES)} pyramid levels, got {len(levels)}")
    if sorted(out) != list(PYRAMID_INDICES):
        raise LossError(f"pyramid loss needs levels {PYRAMID_INDICES}, got {tuple(sorted(out))}")
    return out


def pyramid_loss_terms(level_preds, gauss_targets) -> dict[int, Tensor]:
    """Unweighted L1 per level index ``i`` in 2..4.

    Both arguments are either mappings keyed by level index or sequences
    ordered as levels 2, 3, 4.
    """
    preds, targets = _by_index(level_preds), _by_index(gauss_targets)
    return {i: l1_loss(targets[i], preds[i]) for i in PYRAMID_INDICES}


def pyramid_loss(level_preds, gauss_targets) -> Tensor:
    """Sum over i = 2..4 of ``2**(i-2) * L1(target_i, pred_i)`` (weights 1, 2, 4)."""
    return weighted_pyramid_sum(pyramid_loss_terms(level_preds, gauss_targets))


def weighted_pyramid_sum(terms: Mapping[int, Tensor]) -> Tensor:
    total = None
    for i in PYRAMID_INDICES:
        weighted = terms[i] * float(2 ** (i - 2))
        total = weighted if total is None else total + weighted
    return total


def reconstruction_loss(final_pred, target) -> Tensor:
    return l1_loss(final_pred, target)


def ssim_loss(final_pred, target, params: SsimParams = SsimParams()) -> Tensor:
    """``(1 - SSIM(target, pred)) / 2``, in [0, 1]."""
    final_pred, target = as_tensor(final_pred), as_tensor(target)
    _check_pair(final_pred, target)
    return (1.0 - ssim_tensor(target, final_pred, params)) * 0.5


def _log_prob(logits: Tensor) -> Tensor:
    return F.log(F.clip(F.sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP))


class AdversarialLoss(NamedTuple):
    normalized: Tensor
    raw: float


def adversarial_generator_loss(disc_logit, h: int, w: int, n_levels: int = 4) -> AdversarialLoss:
    """Generator-side adversarial term.

    ``raw`` is ``-3*h*w*n * mean(log(sigmoid(logit)))`` over the batch; the
    ``normalized`` tensor divides that by ``3*h*w*n`` and is what the optimizer
    sees.
    """
    logits = as_tensor(disc_logit)
    if not np.all(np.isfinite(logits.data)):
        raise NonFiniteLossError("non-finite discriminator logits")
    normalized = -F.mean(_log_prob(logits))
    scale = 3.0 * h * w * n_levels
    return AdversarialLoss(normalized, scale * float(normalized.data))


def discriminator_loss(real_logits, fake_logits) -> Tensor:
    """Mean sigmoid cross-entropy, real labelled 1 and fake 0.

    Callers pass logits of *detached* generator outputs as ``fake_logits``.
    """
    real, fake = as_tensor(real_logits), as_tensor(fake_logits)
    if real.size == 0 or fake.size == 0:
        raise LossError("discriminator loss needs non-empty real and fake batches")
    return -F.mean(_log_prob(real)) - F.mean(_log_prob(-fake))


def _value(x: Scalar) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def total_loss(
    pyr: Scalar,
    rec: Scalar,
    ssim: Scalar,
    adv: Scalar,
    weights: LossWeights = LossWeights(),
    pyr_levels: Sequence[Scalar] | None = None,
    adv_raw: float = 0.0,
) -> LossReport:
    """Weighted objective ``alpha*pyr + beta*rec + gamma*ssim + delta*adv``.

    Components may be floats or scalar tensors; when any is a tensor the
    differentiable sum is kept on ``LossReport.objective``.
    """
    parts = {"pyr": pyr, "rec": rec, "ssim": ssim, "adv": adv}
    values = {k: _value(v) for k, v in parts.items()}
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteLossError(f"non-finite loss component(s): {', '.join(bad)} = {[values[k] for k in bad]}")
    coeffs = {"pyr": weights.alpha, "rec": weights.beta, "ssim": weights.gamma, "adv": weights.delta}

    total_value = sum(coeffs[k] * values[k] for k in parts)
    objective = None
    for k, v in parts.items():
        if isinstance(v, Tensor) and coeffs[k] != 0.0:
            term = v * coeffs[k]
            objective = term if objective is None else objective + term
    levels = tuple(_value(v) for v in pyr_levels) if pyr_levels is not None else (0.0, 0.0, 0.0)
    return LossReport(
        pyr=values["pyr"],
        rec=values["rec"],
        ssim=values["ssim"],
        adv=values["adv"],
        total=total_value,
        pyr_levels=levels,
        adv_raw=adv_raw,
        objective=objective,
    )
