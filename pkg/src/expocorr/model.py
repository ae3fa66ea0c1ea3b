"""Coarse-to-fine generator cascade and the patch discriminator.

The generator holds one small encoder-decoder per pyramid level. Sub-network
``k`` (1-based, coarsest first) sees the Laplacian level ``levels-k+1``; for
``k > 1`` its input is that level concatenated with the upsampled output of
sub-network ``k-1``. Every sub-network predicts a residual on top of the
plain pyramid-collapse step, so an untrained cascade starts near identity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import functional as F
from .core.checkpoint import CheckpointError, load_tensors, save_tensors
from .core.optim import Adam, AdamState
from .core.tensor import Tensor, no_grad
from .pyramid import laplace_pyramid

log = logging.getLogger(__name__)

REFERENCE_PARAM_COUNT = 7_000_000
HEAD_INIT_SCALE = 0.1
OUTPUT_LOGIT_EPS = 1e-3


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    levels: int = 4
    base_channels: tuple[int, ...] = (16, 12, 8, 8)
    encoder_depth: int = 2
    activation: float = 0.2
    patch_size: int = 64  # smallest patch the model must accept; guards degenerate shapes

    def __post_init__(self):
        object.__setattr__(self, "base_channels", tuple(int(c) for c in self.base_channels))
        if len(self.base_channels) != self.levels:
            raise ModelConfigError(
                f"base_channels has {len(self.base_channels)} entries for {self.levels} levels"
            )
        if self.encoder_depth < 0 or any(c < 1 for c in self.base_channels):
            raise ModelConfigError("encoder_depth must be >= 0 and channel widths positive")

    @property
    def min_input_size(self) -> int:
        return 2 ** (self.levels - 1 + self.encoder_depth)


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple[int, ...] = (8, 16, 32, 32)
    activation: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))


def _conv_param(rng, name, c_out, c_in, k, dtype, scale=1.0):
    bound = scale * np.sqrt(6.0 / (c_in * k * k))
    w = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype), requires_grad=True, name=name + ".w")
    b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True, name=name + ".b")
    return {name + ".w": w, name + ".b": b}


def subnet_layer_shapes(in_channels: int, width: int, depth: int) -> list[tuple[str, int, int, int]]:
    """(layer, c_out, c_in, kernel) for one encoder-decoder sub-network."""
    chans = [width] + [2 * width] * depth
    layers = [("enc0", chans[0], in_channels, 3)]
    for d in range(1, depth + 1):
        layers.append((f"down{d}", chans[d], chans[d - 1], 3))
    for d in range(depth - 1, -1, -1):
        layers.append((f"up{d}", chans[d], chans[d + 1] + chans[d], 3))
    layers.append(("head", 3, chans[0], 1))
    return layers


class SubNet:
    def __init__(self, prefix: str, in_channels: int, width: int, depth: int, slope: float):
        self.prefix = prefix
        self.depth = depth
        self.slope = slope
        self.layers = subnet_layer_shapes(in_channels, width, depth)

    def init(self, rng, dtype) -> dict[str, Tensor]:
        params = {}
        for layer, c_out, c_in, k in self.layers:
            scale = HEAD_INIT_SCALE if layer == "head" else 1.0
            params.update(_conv_param(rng, f"{self.prefix}.{layer}", c_out, c_in, k, dtype, scale))
        return params

    def __call__(self, params: dict[str, Tensor], x: Tensor) -> Tensor:
        p = self.prefix

        def conv(name, h, stride=1, pad=1):
            return F.conv2d(h, params[f"{p}.{name}.w"], params[f"{p}.{name}.b"], stride=stride, padding=pad)

        h = F.leaky_relu(conv("enc0", x), self.slope)
        skips = [h]
        for d in range(1, self.depth + 1):
            h = F.leaky_relu(conv(f"down{d}", h, stride=2), self.slope)
            skips.append(h)
        for d in range(self.depth - 1, -1, -1):
            skip = skips[d]
            up = F.crop_to(F.upsample_bilinear2x(h), skip.shape[2], skip.shape[3])
            h = F.leaky_relu(conv(f"up{d}", F.concat([up, skip], axis=1)), self.slope)
        return conv("head", h, pad=0)


class Generator:
    def __init__(self, config: GeneratorConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.subnets = [
            SubNet(f"s{k + 1}", 3 if k == 0 else 6, width, config.encoder_depth, config.activation)
            for k, width in enumerate(config.base_channels)
        ]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def manifest(self) -> list[str]:
        return [f"{name}\t{'x'.join(map(str, p.shape))}" for name, p in self.params.items()]

    def astype(self, dtype) -> "Generator":
        return Generator(
            self.config,
            {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()},
        )

    def forward(self, lp_levels: list[Tensor]) -> tuple[dict[int, Tensor], Tensor]:
        """Run the cascade on NCHW Laplacian levels ``[l1, ..., lL]``.

        Returns the upsampled level predictions keyed by level index (the
        prediction for index ``i`` has the size of level ``i-1``) and the
        final image in (0, 1).
        """
        levels = self.config.levels
        if len(lp_levels) != levels:
            raise ModelConfigError(f"pyramid has {len(lp_levels)} levels, generator expects {levels}")
        preds: dict[int, Tensor] = {}
        prev = None
        for k, subnet in enumerate(self.subnets):
            index = levels - k
            band = lp_levels[index - 1]
            if band.ndim != 4 or band.shape[1] != 3:
                raise ModelConfigError(f"level {index} must be N x 3 x H x W, got {band.shape}")
            if prev is None:
                inp, base = band, band
            else:
                up = F.crop_to(prev, band.shape[2], band.shape[3])
                inp, base = F.concat([band, up], axis=1), band + up
            residual = subnet(self.params, inp)
            if index > 1:
                out = base + residual
                finer = lp_levels[index - 2]
                prev = F.crop_to(F.upsample_bilinear2x(out), finer.shape[2], finer.shape[3])
                preds[index] = prev
            else:
                y = F.sigmoid(residual + F.logit(base, OUTPUT_LOGIT_EPS))
        return preds, y

    __call__ = forward


class Discriminator:
    def __init__(self, config: DiscriminatorConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "Discriminator":
        return Discriminator(
            self.config,
            {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()},
        )

    def forward(self, images: Tensor) -> Tensor:
        """One logit per NCHW image."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ModelConfigError(f"discriminator expects N x 3 x H x W, got {images.shape}")
        h = images
        for i in range(len(self.config.channels)):
            h = F.conv2d(h, self.params[f"d{i}.w"], self.params[f"d{i}.b"], stride=2, padding=1)
            h = F.leaky_relu(h, self.config.activation)
        h = F.conv2d(h, self.params["dout.w"], self.params["dout.b"])
        return F.mean(h, axis=(1, 2, 3))

    __call__ = forward


def build_generator(config: GeneratorConfig = GeneratorConfig(), seed: int = 0, dtype=np.float32) -> Generator:
    coarsest = -(-config.patch_size // 2 ** (config.levels - 1))
    if coarsest < 1 or coarsest // 2**config.encoder_depth < 1:
        raise ModelConfigError(
            f"encoder_depth {config.encoder_depth} shrinks the {coarsest}x{coarsest} coarsest level "
            f"below 1x1 (patch {config.patch_size}, {config.levels} levels)"
        )
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    gen = Generator(config, params)
    for subnet in gen.subnets:
        params.update(subnet.init(rng, dtype))
    count = gen.parameter_count()
    log.info(
        "generator built: %d parameters (%d fewer than the 7M full-scale model)",
        count,
        REFERENCE_PARAM_COUNT - count,
    )
    return gen


def build_discriminator(config: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0, dtype=np.float32) -> Discriminator:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    c_in = 3
    for i, c_out in enumerate(config.channels):
        params.update(_conv_param(rng, f"d{i}", c_out, c_in, 3, dtype))
        c_in = c_out
    params.update(_conv_param(rng, "dout", 1, c_in, 1, dtype))
    return Discriminator(config, params)


# -- image-level helpers ------------------------------------------------------------


def image_batch_to_tensor(images: np.ndarray, dtype=np.float32) -> Tensor:
    """N x H x W x 3 array -> NCHW tensor."""
    return Tensor(np.ascontiguousarray(np.asarray(images, dtype=dtype).transpose(0, 3, 1, 2)))


def tensor_to_images(t: Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.data.transpose(0, 2, 3, 1))


def pyramid_tensors(images: np.ndarray, levels: int, dtype=np.float32) -> list[Tensor]:
    """Laplacian levels of an N x H x W x 3 batch as NCHW tensors."""
    batch = np.asarray(images, dtype=dtype).transpose(0, 3, 1, 2)
    lp = laplace_pyramid(batch, levels, axes=(2, 3))
    return [Tensor(np.ascontiguousarray(level)) for level in lp.levels]


def enhance_image(gen: Generator, image: np.ndarray) -> np.ndarray:
    """Full-frame inference on one H x W x 3 image.

    Sizes that do not divide the cascade's total downsampling factor are
    reflect-padded and the output cropped back.
    """
    h, w = image.shape[:2]
    m = gen.config.min_input_size
    ph, pw = (-h) % m, (-w) % m
    padded = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="reflect") if (ph or pw) else image
    dtype = next(iter(gen.params.values())).dtype
    with no_grad():
        _, y = gen.forward(pyramid_tensors(padded[None], gen.config.levels, dtype))
    return tensor_to_images(y)[0, :h, :w].astype(np.float64)


# -- checkpoints ---------------------------------------------------------------------


@dataclass
class Checkpoint:
    generator: Generator
    discriminator: Discriminator
    adam_g: dict[str, AdamState] = field(default_factory=dict)
    adam_d: dict[str, AdamState] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)


def save_checkpoint(
    path,
    gen: Generator,
    disc: Discriminator,
    opt_g: Adam | None = None,
    opt_d: Adam | None = None,
    meta: dict[str, object] | None = None,
) -> Path:
    tensors: dict[str, np.ndarray] = {}
    info: dict[str, object] = {
        "generator_config": json.dumps(asdict(gen.config), separators=(",", ":")),
        "discriminator_config": json.dumps(asdict(disc.config), separators=(",", ":")),
    }
    for name, p in gen.params.items():
        tensors[f"gen.{name}"] = p.data
    for name, p in disc.params.items():
        tensors[f"disc.{name}"] = p.data
    for tag, opt in (("adam_g", opt_g), ("adam_d", opt_d)):
        if opt is None:
            continue
        for name, st in opt.states.items():
            tensors[f"{tag}.m.{name}"] = st.first_moment
            tensors[f"{tag}.v.{name}"] = st.second_moment
            info[f"{tag}.step.{name}"] = st.step_count
    info.update(meta or {})
    return save_tensors(path, tensors, info)


def load_checkpoint(path, dtype=np.float32) -> Checkpoint:
    tensors, meta = load_tensors(path)
    try:
        gcfg = json.loads(meta["generator_config"])
        dcfg = json.loads(meta["discriminator_config"])
    except KeyError as exc:
        raise CheckpointError(exc.args[0], "missing from manifest") from None
    gen = build_generator(GeneratorConfig(**gcfg), seed=0, dtype=dtype)
    disc = build_discriminator(DiscriminatorConfig(**dcfg), seed=0, dtype=dtype)

    for prefix, model in (("gen", gen), ("disc", disc)):
        for name, p in model.params.items():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise CheckpointError(key, "missing from checkpoint")
            if tensors[key].shape != p.shape:
                raise CheckpointError(key, f"shape {tensors[key].shape} does not match model {p.shape}")
            p.data = tensors[key].astype(dtype)

    states: dict[str, dict[str, AdamState]] = {"adam_g": {}, "adam_d": {}}
    for tag, model in (("adam_g", gen), ("adam_d", disc)):
        for name in model.params:
            m_key, v_key = f"{tag}.m.{name}", f"{tag}.v.{name}"
            if m_key in tensors and v_key in tensors:
                states[tag][name] = AdamState(
                    tensors[m_key].astype(dtype),
                    tensors[v_key].astype(dtype),
                    int(meta.get(f"{tag}.step.{name}", 0)),
                )
    return Checkpoint(gen, disc, states["adam_g"], states["adam_d"], meta)
