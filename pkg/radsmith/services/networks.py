"""Denoising head, SR backbone and discriminator built on the autodiff layers."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from radsmith.core.errors import ArgumentError, CheckpointError
from radsmith.models.schemas import DenoiserSpec, DiscriminatorSpec, ModelSpec, SRSpec
from radsmith.services import autodiff as ad
from radsmith.services.autodiff import Conv2d, Linear, Module, Tensor
from radsmith.services.checkpoint import load_checkpoint, save_checkpoint
from radsmith.utils.rng import generator

logger = logging.getLogger(__name__)

COMPONENTS = ("denoiser", "sr", "discriminator")
# generator streams used for weight init, disjoint from the degradation streams
_INIT_STREAMS = {"denoiser": 10, "sr": 11, "discriminator": 12}
_DROPOUT_STREAM = 13


def _check_gray(x: Tensor, who: str) -> None:
    if x.ndim != 4 or x.shape[1] != 1:
        raise ArgumentError(f"{who} expects a single-channel NCHW tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------

class RCABlock(Module):
    """Residual gating unit: x + sigmoid(attention(x)) * x"""

    def __init__(self, channels: int, attention_mode: str, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.attention_mode = attention_mode
        self.gate = Conv2d(channels, channels, 3, rng)
        if attention_mode == "channel_se":
            self.excite = Conv2d(channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return rca_block(x, self)


def rca_block(x: Tensor, block: RCABlock) -> Tensor:
    """spatial_eq4: x + sigmoid(conv3x3(x)) * x
    channel_se:  x + sigmoid(conv1x1(gap(conv3x3(x)))) * x, broadcast over H, W
    """
    if x.ndim != 4 or x.shape[1] != block.channels:
        raise ArgumentError(f"RCA block expects {block.channels} channels, got shape {x.shape}")
    if block.attention_mode == "spatial_eq4":
        weights = ad.sigmoid(block.gate(x))
    else:
        weights = ad.sigmoid(block.excite(ad.global_avg_pool(block.gate(x))))
    return ad.add(x, ad.mul(x, weights))


class DnCNNBlock(Module):
    """Plain conv3x3 -> relu unit"""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.conv = Conv2d(channels, channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ad.relu(self.conv(x))


class Denoiser(Module):
    """head conv -> blocks -> (dropout) -> zero-init tail conv, plus a global residual"""

    def __init__(self, spec: DenoiserSpec, rng: np.random.Generator,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.spec = spec
        self.head = Conv2d(1, spec.channels, 3, rng)
        self.blocks: List[Module] = []
        for i in range(spec.n_rca_blocks):
            if spec.block_type == "rca":
                block = RCABlock(spec.channels, spec.attention_mode, rng)
            else:
                block = DnCNNBlock(spec.channels, rng)
            self.add_module(f"block{i}", block)
            self.blocks.append(block)
        self.tail = Conv2d(spec.channels, 1, 3, rng, zero_init=True)
        self.dropout_rng = dropout_rng or np.random.default_rng(0)

    def forward(self, y: Tensor) -> Tensor:
        _check_gray(y, "denoiser")
        h = self.head(y)
        for block in self.blocks:
            h = block(h)
        h = ad.dropout(h, self.spec.dropout, self.dropout_rng, self.training)
        return ad.add(self.tail(h), y)


# ---------------------------------------------------------------------------
# SR network
# ---------------------------------------------------------------------------

class ResBlock(Module):
    """conv -> relu -> zero-init conv, plus skip"""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(x, self.conv2(ad.relu(self.conv1(x))))


class SRNet(Module):
    """Residual body with x2 pixel-shuffle stages and a bicubic global skip"""

    def __init__(self, spec: SRSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        c = spec.channels
        self.head = Conv2d(1, c, 3, rng)
        self.blocks: List[ResBlock] = []
        for i in range(spec.n_res_blocks):
            block = ResBlock(c, rng)
            self.add_module(f"res{i}", block)
            self.blocks.append(block)
        self.upsamplers: List[Conv2d] = []
        for i in range(spec.scale.bit_length() - 1):
            up = Conv2d(c, 4 * c, 3, rng)
            self.add_module(f"up{i}", up)
            self.upsamplers.append(up)
        self.tail = Conv2d(c, 1, 3, rng, zero_init=True)

    def forward(self, y: Tensor) -> Tensor:
        _check_gray(y, "SR network")
        r = self.spec.scale
        base = ad.resize(y, y.shape[2] * r, y.shape[3] * r)
        h = self.head(y)
        for block in self.blocks:
            h = block(h)
        for up in self.upsamplers:
            h = ad.relu(ad.pixel_shuffle(up(h), 2))
        return ad.add(self.tail(h), base)


# ---------------------------------------------------------------------------
# Discriminator
# ---------------------------------------------------------------------------

def discriminator_channels(spec: DiscriminatorSpec) -> List[int]:
    return [spec.base_channels * min(2 ** i, 4) for i in range(spec.n_layers)]


class Discriminator(Module):
    """Stride-2 conv stack with leaky relu, global pooling and a zero-init linear logit"""

    def __init__(self, spec: DiscriminatorSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.convs: List[Conv2d] = []
        in_channels = 1
        for i, out_channels in enumerate(discriminator_channels(spec)):
            conv = Conv2d(in_channels, out_channels, 3, rng, stride=2)
            self.add_module(f"conv{i}", conv)
            self.convs.append(conv)
            in_channels = out_channels
        self.fc = Linear(in_channels, 1, rng, zero_init=True)

    @property
    def min_size(self) -> int:
        return 2 ** self.spec.n_layers

    def forward(self, img: Tensor) -> Tensor:
        _check_gray(img, "discriminator")
        if min(img.shape[2:]) < self.min_size:
            raise ArgumentError(f"discriminator input must be at least {self.min_size} pixels, got {img.shape[2:]}")
        h = img
        for conv in self.convs:
            h = ad.leaky_relu(conv(h), 0.2)
        return self.fc(ad.flatten(ad.global_avg_pool(h)))


@dataclass
class GANValue:
    d_loss: Tensor
    g_loss: Tensor
    g_loss_minimax: Tensor


def gan_value(d_real_logits: Tensor, d_fake_logits: Tensor) -> GANValue:
    """Discriminator loss, non-saturating generator loss and the literal mean log(1 - D(G))"""
    if d_real_logits.shape[0] != d_fake_logits.shape[0]:
        raise ArgumentError(
            f"batch sizes differ: {d_real_logits.shape[0]} real vs {d_fake_logits.shape[0]} fake"
        )
    fake_as_fake = ad.bce_with_logits(d_fake_logits, 0.0)
    d_loss = ad.add(ad.bce_with_logits(d_real_logits, 1.0), fake_as_fake)
    g_loss = ad.bce_with_logits(d_fake_logits, 1.0)
    return GANValue(d_loss=d_loss, g_loss=g_loss, g_loss_minimax=ad.scale(fake_as_fake, -1.0))


# ---------------------------------------------------------------------------
# Parameter counts
# ---------------------------------------------------------------------------

def _conv_count(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def denoiser_parameter_count(spec: DenoiserSpec) -> int:
    c = spec.channels
    per_block = _conv_count(c, c, 3)
    if spec.block_type == "rca" and spec.attention_mode == "channel_se":
        per_block += _conv_count(c, c, 1)
    return _conv_count(1, c, 3) + spec.n_rca_blocks * per_block + _conv_count(c, 1, 3)


def sr_parameter_count(spec: SRSpec) -> int:
    c = spec.channels
    stages = spec.scale.bit_length() - 1
    return (_conv_count(1, c, 3) + spec.n_res_blocks * 2 * _conv_count(c, c, 3)
            + stages * _conv_count(c, 4 * c, 3) + _conv_count(c, 1, 3))


def discriminator_parameter_count(spec: DiscriminatorSpec) -> int:
    total, cin = 0, 1
    for cout in discriminator_channels(spec):
        total += _conv_count(cin, cout, 3)
        cin = cout
    return total + cin + 1


def count_parameters(module: Module) -> int:
    return sum(p.data.size for p in module.parameters())


# ---------------------------------------------------------------------------
# Model state
# ---------------------------------------------------------------------------

@dataclass
class ModelState:
    """Denoiser, SR net and discriminator, any of which may be absent"""
    spec: ModelSpec
    denoiser: Optional[Denoiser] = None
    sr: Optional[SRNet] = None
    discriminator: Optional[Discriminator] = None

    def components(self) -> Dict[str, Module]:
        return {name: getattr(self, name) for name in COMPONENTS if getattr(self, name) is not None}

    def groups(self) -> Dict[str, List[Tensor]]:
        """Parameters per group; the groups partition the parameter set"""
        return {name: module.parameters() for name, module in self.components().items()}

    def named_parameters(self) -> Iterable[Tuple[str, Tensor]]:
        for name, module in self.components().items():
            yield from module.named_parameters(name + ".")

    def arrays(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter array keyed by qualified name"""
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def train(self) -> "ModelState":
        for module in self.components().values():
            module.train()
        return self

    def eval(self) -> "ModelState":
        for module in self.components().values():
            module.eval()
        return self

    def astype(self, dtype) -> "ModelState":
        """Cast every parameter to dtype in place; cast parameters lose their gradient"""
        for _, p in self.named_parameters():
            if p.data.dtype != dtype:
                p.data = p.data.astype(dtype)
                p.zero_grad()
        return self

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for _, p in self.named_parameters())

    def save(self, path: Union[str, Path]) -> None:
        save_checkpoint(path, self.arrays(), {
            "spec": self.spec.model_dump(),
            "components": list(self.components()),
        })

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise CheckpointError(f"checkpoint is missing tensors: {', '.join(missing[:5])}")
        for name, p in params.items():
            value = arrays[name]
            if value.shape != p.shape:
                raise CheckpointError(f"tensor '{name}' has shape {value.shape}, model expects {p.shape}")
            p.data = np.array(value, dtype=p.dtype)
            p.zero_grad()


def build_state(spec: ModelSpec, seed: int = 0, components: Iterable[str] = COMPONENTS) -> ModelState:
    """Freshly initialized networks; each component draws from its own init stream"""
    state = ModelState(spec=spec)
    for name in components:
        if name not in COMPONENTS:
            raise ArgumentError(f"unknown model component '{name}'")
        rng = generator(seed, _INIT_STREAMS[name])
        if name == "denoiser":
            state.denoiser = Denoiser(spec.denoiser, rng, dropout_rng=generator(seed, _DROPOUT_STREAM))
        elif name == "sr":
            state.sr = SRNet(spec.sr, rng)
        else:
            state.discriminator = Discriminator(spec.discriminator, rng)
    for name, module in state.components().items():
        logger.debug("Built %s with %d parameters", name, count_parameters(module))
    return state


def load_state(path: Union[str, Path]) -> ModelState:
    """Rebuild a ModelState from a checkpoint written by ModelState.save"""
    arrays, metadata = load_checkpoint(path)
    try:
        spec = ModelSpec.model_validate(metadata["spec"])
        components = metadata["components"]
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: checkpoint metadata has no valid model spec") from e
    state = build_state(spec, components=components)
    state.load_arrays(arrays)
    logger.info("Loaded %s from %s", ", ".join(components), path)
    return state


def merge_states(*states: ModelState) -> ModelState:
    """Combine components from several states (later states win).

    Each component keeps the spec of the state it came from; two states
    carrying the same component under different specs cannot be merged.
    """
    if not states:
        raise ArgumentError("merge_states needs at least one state")
    specs = {name: getattr(states[-1].spec, name) for name in COMPONENTS}
    modules: Dict[str, Module] = {}
    for state in states:
        for name, module in state.components().items():
            if name in modules and module.spec != specs[name]:
                raise ArgumentError(f"cannot merge two {name} networks with different specs")
            modules[name] = module
            specs[name] = module.spec
    merged = ModelState(spec=ModelSpec(**specs))
    for name, module in modules.items():
        setattr(merged, name, module)
    return merged


def _require(module: Optional[Module], name: str) -> Module:
    if module is None:
        raise ArgumentError(f"model state has no {name}")
    return module


def denoiser_forward(y: Tensor, state: ModelState) -> Tensor:
    return _require(state.denoiser, "denoiser")(y)


def sr_forward(y_clean: Tensor, state: ModelState) -> Tensor:
    return _require(state.sr, "SR network")(y_clean)


def discriminator_forward(img: Tensor, state: ModelState) -> Tensor:
    return _require(state.discriminator, "discriminator")(img)


def randomize_parameters(module: Module, rng: np.random.Generator, scale: float = 0.3) -> None:
    """Replace every parameter with U(-scale, scale) draws (zero-init layers included)"""
    for p in module.parameters():
        p.data = rng.uniform(-scale, scale, size=p.shape).astype(p.dtype)
        p.zero_grad()
