"""Two-phase training schedule, presets and evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .core.optim import Adam, NonFiniteGradientError
from .core.tensor import Tensor
from .data import PairedDataset, extract_patches
from .losses import (
    LossWeights,
    NonFiniteLossError,
    adversarial_generator_loss,
    discriminator_loss,
    pyramid_loss_terms,
    reconstruction_loss,
    ssim_loss,
    total_loss,
    weighted_pyramid_sum,
)
from .metrics import SsimParams, psnr, ssim
from .model import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    enhance_image,
    image_batch_to_tensor,
    load_checkpoint,
    pyramid_tensors,
    save_checkpoint,
)
from .pyramid import gauss_pyramid

log = logging.getLogger(__name__)

TRAINING_SETS = {"UE": ("under",), "OE": ("over",), "C": ("over", "under")}
ABLATIONS = ("full", "l1_only")
LOG_FIELDS = ("phase", "epoch", "step", "batch", "disc_active") + (
    "pyr", "rec", "ssim", "adv", "adv_raw", "total", "pyr_l2", "pyr_l3", "pyr_l4", "d_loss",
)

Pair = tuple[np.ndarray, np.ndarray]


class TrainingDiverged(FloatingPointError):
    """A non-finite loss or gradient; the models hold the last good parameters."""

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseConfig:
    epochs: int
    batch_size: int
    patch_size: int
    lr_g: float
    lr_d: float
    dse: int | None = None  # discriminator start epoch, 0-based

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patch_size < 1:
            raise ConfigError(f"invalid phase sizes: {self}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        if self.dse is not None and not 0 <= self.dse < max(self.epochs, 1):
            raise ConfigError(f"dse {self.dse} must lie in [0, epochs={self.epochs})")


@dataclass(frozen=True)
class RunConfig:
    phase1: PhaseConfig
    phase2: PhaseConfig
    weights: LossWeights = LossWeights()
    training_set: str = "C"
    seed: int = 0
    ablation: str = "full"
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    patches_per_frame: int = 4

    def __post_init__(self):
        if self.training_set not in TRAINING_SETS:
            raise ConfigError(f"training_set must be one of {sorted(TRAINING_SETS)}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.phase1.dse is not None:
            raise ConfigError("the discriminator stays off in phase 1 (dse must be None)")

    @property
    def effective_weights(self) -> LossWeights:
        if self.ablation == "l1_only":
            return replace(self.weights, gamma=0.0, delta=0.0)
        return self.weights

    def to_dict(self) -> dict:
        return asdict(self)


def _full_scale_run(p1: tuple, p2: tuple, training_set: str = "C", ablation: str = "full") -> RunConfig:
    e1, bs1, lg1, ld1 = p1
    e2, dse2, bs2, lg2, ld2 = p2
    return RunConfig(
        phase1=PhaseConfig(epochs=e1, batch_size=bs1, patch_size=128, lr_g=lg1, lr_d=ld1),
        phase2=PhaseConfig(epochs=e2, dse=dse2, batch_size=bs2, patch_size=256, lr_g=lg2, lr_d=ld2),
        training_set=training_set,
        ablation=ablation,
        generator=GeneratorConfig(patch_size=128),
    )


# Hyper-parameter table of the two-phase schedule (phase 1: 128 px, phase 2: 256 px).
PRESETS: dict[str, RunConfig] = {
    "lmspec": _full_scale_run((40, 32, 1e-4, 1e-5), (30, 15, 8, 1e-4, 1e-5), ablation="l1_only"),
    "baseline": _full_scale_run((40, 32, 1e-4, 1e-5), (30, 15, 8, 1e-4, 1e-5)),
    "best-UE": _full_scale_run((50, 32, 1e-4, 1e-5), (40, 20, 8, 1e-4, 1e-5), training_set="UE"),
    "best-OE": _full_scale_run((40, 64, 2e-4, 2e-5), (30, 15, 32, 2e-4, 2e-5), training_set="OE"),
    "best-C": _full_scale_run((50, 32, 1e-4, 1e-5), (40, 20, 8, 1e-4, 1e-5), training_set="C"),
    "desk": RunConfig(
        phase1=PhaseConfig(epochs=2, batch_size=4, patch_size=64, lr_g=2e-3, lr_d=2e-4),
        phase2=PhaseConfig(epochs=2, dse=1, batch_size=4, patch_size=128, lr_g=1e-3, lr_d=1e-4),
        generator=GeneratorConfig(patch_size=64),
        patches_per_frame=4,
    ),
}


def get_preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- training ------------------------------------------------------------------------


@dataclass
class PhaseResult:
    generator: Generator
    discriminator: Discriminator
    opt_g: Adam
    opt_d: Adam
    log: list[dict] = field(default_factory=list)
    best_val_ssim: float | None = None


def _subseed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def _snapshot(*models) -> list[dict[str, np.ndarray]]:
    return [{k: p.data.copy() for k, p in m.params.items()} for m in models]


def _restore(snapshot, *models) -> None:
    for snap, m in zip(snapshot, models):
        for k, p in m.params.items():
            p.data = snap[k].copy()


def epoch_batches(pairs: Sequence[Pair], cfg: PhaseConfig, patches_per_frame: int, seed: int, epoch: int):
    """Shuffled batches of co-located patch pairs for one epoch."""
    patches: list[Pair] = []
    for k, (corrupted, gt) in enumerate(pairs):
        patches.extend(extract_patches(corrupted, gt, cfg.patch_size, patches_per_frame, _subseed(seed, epoch, k)))
    order = np.random.default_rng(_subseed(seed, epoch, 0x5EED)).permutation(len(patches))
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        yield (
            np.stack([patches[i][0] for i in idx]),
            np.stack([patches[i][1] for i in idx]),
        )


def generator_losses(
    gen: Generator,
    disc: Discriminator | None,
    inputs: np.ndarray,
    targets: np.ndarray,
    weights: LossWeights,
    ssim_params: SsimParams = SsimParams(),
):
    """Forward pass plus every loss term for one batch (N x H x W x 3 arrays)."""
    dtype = next(iter(gen.params.values())).dtype
    levels = gen.config.levels
    preds, y = gen(pyramid_tensors(inputs, levels, dtype))
    gp = gauss_pyramid(np.asarray(targets, dtype=dtype).transpose(0, 3, 1, 2), levels, axes=(2, 3))
    level_targets = {i: Tensor(np.ascontiguousarray(gp.levels[i - 2])) for i in (2, 3, 4)}
    target = image_batch_to_tensor(targets, dtype)

    terms = pyramid_loss_terms(preds, level_targets)
    pyr = weighted_pyramid_sum(terms)
    rec = reconstruction_loss(y, target)
    ssim_term = ssim_loss(y, target, ssim_params) if weights.gamma > 0 else 0.0
    adv, adv_raw = 0.0, 0.0
    if disc is not None and weights.delta > 0:
        h, w = y.shape[2], y.shape[3]
        adv, adv_raw = adversarial_generator_loss(disc(y), h, w, levels)
    report = total_loss(pyr, rec, ssim_term, adv, weights, pyr_levels=[terms[i] for i in (2, 3, 4)], adv_raw=adv_raw)
    return report, y, target


def train_phase(
    gen: Generator,
    disc: Discriminator,
    pairs: Sequence[Pair],
    cfg: PhaseConfig,
    weights: LossWeights,
    seed: int = 0,
    *,
    phase: int = 1,
    patches_per_frame: int = 4,
    ssim_params: SsimParams = SsimParams(),
    val_pairs: Sequence[Pair] = (),
    opt_g: Adam | None = None,
    opt_d: Adam | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> PhaseResult:
    """Run ``cfg.epochs`` epochs; the discriminator trains 1:1 from epoch ``cfg.dse``.

    With ``val_pairs`` the parameters with the best mean validation SSIM
    (checked after each epoch) are restored at the end.
    """
    if cfg.epochs > 0 and not pairs:
        raise ConfigError("training set is empty")
    opt_g = opt_g or Adam(gen.params, cfg.lr_g)
    opt_d = opt_d or Adam(disc.params, cfg.lr_d)
    result = PhaseResult(gen, disc, opt_g, opt_d)
    last_good = _snapshot(gen, disc)
    best = None
    step = 0
    for epoch in range(cfg.epochs):
        disc_active = cfg.dse is not None and epoch >= cfg.dse and weights.delta > 0
        for inputs, targets in epoch_batches(pairs, cfg, patches_per_frame, seed, epoch):
            try:
                report, y, target = generator_losses(
                    gen, disc if disc_active else None, inputs, targets, weights, ssim_params
                )
                opt_g.zero_grad()
                report.objective.backward()
                opt_g.step()
                d_loss = 0.0
                if disc_active:
                    opt_d.zero_grad()
                    dl = discriminator_loss(disc(target), disc(y.detach()))
                    if not math.isfinite(float(dl.data)):
                        raise NonFiniteLossError("non-finite discriminator loss")
                    dl.backward()
                    opt_d.step()
                    d_loss = float(dl.data)
                for p in disc.params.values():
                    p.grad = None
            except (NonFiniteLossError, NonFiniteGradientError) as exc:
                _restore(last_good, gen, disc)
                raise TrainingDiverged(str(exc), step) from exc
            last_good = _snapshot(gen, disc)
            row = {"phase": phase, "epoch": epoch, "step": step, "batch": len(inputs), "disc_active": int(disc_active)}
            row.update(report.as_row())
            row["d_loss"] = d_loss
            result.log.append(row)
            if on_step is not None:
                on_step(row)
            step += 1
        if val_pairs:
            score = evaluate(gen, [("", c, g) for c, g in val_pairs], ssim_params).mean_ssim
            log.info("phase %d epoch %d: val SSIM %.4f", phase, epoch, score)
            if best is None or score > best[0]:
                best = (score, _snapshot(gen, disc))
    if best is not None:
        _restore(best[1], gen, disc)
        result.best_val_ssim = best[0]
    return result


@dataclass
class RunResult:
    generator: Generator
    discriminator: Discriminator
    log: list[dict]
    checkpoints: list[Path]


def select_pairs(ds: PairedDataset | Sequence[Pair], training_set: str = "C") -> list[Pair]:
    if isinstance(ds, PairedDataset):
        return ds.with_tags(TRAINING_SETS[training_set]).load_pairs()
    return list(ds)


def run_two_phase(
    run: RunConfig,
    train_data: PairedDataset | Sequence[Pair],
    out_dir=None,
    val_data: PairedDataset | Sequence[Pair] = (),
    on_step: Callable[[dict], None] | None = None,
) -> RunResult:
    """Phase 1 on small patches, checkpoint, reload, phase 2 on large patches."""
    pairs = select_pairs(train_data, run.training_set)
    val_pairs = select_pairs(val_data, run.training_set) if val_data else []
    weights = run.effective_weights
    gen_cfg = replace(run.generator, patch_size=min(run.phase1.patch_size, run.phase2.patch_size))
    gen = build_generator(gen_cfg, seed=_subseed(run.seed, 1))
    disc = build_discriminator(run.discriminator, seed=_subseed(run.seed, 2))

    checkpoints: list[Path] = []
    r1 = train_phase(
        gen, disc, pairs, run.phase1, weights, _subseed(run.seed, 11),
        phase=1, patches_per_frame=run.patches_per_frame, val_pairs=val_pairs, on_step=on_step,
    )
    logs = list(r1.log)
    if out_dir is not None:
        path = save_checkpoint(Path(out_dir) / "phase1", gen, disc, r1.opt_g, r1.opt_d, {"phase": 1})
        checkpoints.append(path)
        ck = load_checkpoint(path)
        gen, disc = ck.generator, ck.discriminator

    r2 = train_phase(
        gen, disc, pairs, run.phase2, weights, _subseed(run.seed, 12),
        phase=2, patches_per_frame=run.patches_per_frame, val_pairs=val_pairs, on_step=on_step,
    )
    logs.extend(r2.log)
    if out_dir is not None:
        checkpoints.append(save_checkpoint(Path(out_dir) / "phase2", gen, disc, r2.opt_g, r2.opt_d, {"phase": 2}))
    return RunResult(gen, disc, logs, checkpoints)


# -- evaluation -------------------------------------------------------------------------


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float]]
    notes: list[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["filename", "psnr_db", "ssim"])
        for name, p, s in self.rows:
            writer.writerow([name, _fmt(p), _fmt(s)])
        writer.writerow(["mean", _fmt(self.mean_psnr), _fmt(self.mean_ssim)])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "inf" if x == math.inf else f"{x:.6f}"


Enhancer = Union[Generator, Callable[[np.ndarray], np.ndarray]]


def evaluate(
    model: Enhancer,
    test_set: Sequence[tuple[str, np.ndarray, np.ndarray]],
    ssim_params: SsimParams = SsimParams(),
    peak: float = 1.0,
) -> EvalReport:
    """Full-frame PSNR/SSIM of ``model(corrupted)`` against ground truth.

    ``test_set`` holds ``(name, corrupted, gt)`` triples. ``model`` is a
    generator (padded to a valid size internally) or any image->image callable.
    """
    if not test_set:
        raise ConfigError("test set is empty")
    report = EvalReport([])
    for name, corrupted, gt in test_set:
        if isinstance(model, Generator):
            m = model.config.min_input_size
            if corrupted.shape[0] % m or corrupted.shape[1] % m:
                report.notes.append(f"{name}: reflect-padded to a multiple of {m}")
            pred = enhance_image(model, corrupted)
        else:
            pred = model(corrupted)
        pred = np.clip(pred, 0.0, peak)
        report.rows.append((name, psnr(pred, gt, peak), ssim(pred, gt, ssim_params)))
    return report


def dataset_triples(ds: PairedDataset, tags: Sequence[str] | None = None) -> list[tuple[str, np.ndarray, np.ndarray]]:
    recs = ds.records if tags is None else [r for r in ds.records if r.tag in tags]
    return [(f"{r.tag}/{r.name}", *r.load()) for r in recs]


def write_log_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
