"""
pvgan — Conditional 3D generator G(z|y) and discriminator D(x|y)

Generator: the condition is concatenated to z, the result is treated as a
1³ volume and grown by transposed 3D convolutions. The first layer maps
1³→4³ (kernel 4, stride 1, no padding); every further layer doubles the edge
(kernel 4, stride 2, padding 1) until the output resolution is reached.
Hidden layers are ReLU with batch norm, the output layer is a sigmoid.

Discriminator: mirrors the generator. The condition is appended to the input
grid as constant channel(s); strided convolutions halve the edge down to 4³,
and a final 4³→1³ convolution feeds a sigmoid.

Batch norm sits between hidden layers only: never on the generator output,
the discriminator input, or either final layer.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from pvgan.config import ModelConfig
from pvgan.errors import ConfigError, ContractViolation

log = logging.getLogger(__name__)

KERNEL = 4
STRIDE = 2
PADDING = 1


# ── Shape arithmetic ───────────────────────────────────────────────────────────

def conv_out(size: int, kernel: int = KERNEL, stride: int = STRIDE, padding: int = PADDING) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def tconv_out(size: int, kernel: int = KERNEL, stride: int = STRIDE, padding: int = PADDING) -> int:
    return (size - 1) * stride - 2 * padding + kernel


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    in_size: int
    out_size: int
    stride: int
    padding: int


def condition_width(config: ModelConfig) -> int:
    return 1 if config.condition_encoding == "scalar" else config.n_conditions


def _hidden_channels(config: ModelConfig) -> list[int]:
    """Generator hidden widths: base, base/2, base/4, ... one per hidden layer."""
    n_hidden = (config.resolution // 4).bit_length() - 1  # strided layers before the output
    return [max(1, config.base_channels >> i) for i in range(n_hidden)]


def generator_plan(config: ModelConfig) -> list[LayerSpec]:
    config.validate()
    widths = _hidden_channels(config)
    plan = []
    in_ch, size = config.latent_dim + condition_width(config), 1
    for i, out_ch in enumerate(widths + [1]):
        stride, padding = (1, 0) if i == 0 else (STRIDE, PADDING)
        out_size = tconv_out(size, KERNEL, stride, padding)
        plan.append(LayerSpec(in_ch, out_ch, size, out_size, stride, padding))
        in_ch, size = out_ch, out_size
    if size != config.resolution:
        raise ConfigError("model.resolution", f"layer plan ends at {size}³, expected {config.resolution}³")
    return plan


def discriminator_plan(config: ModelConfig) -> list[LayerSpec]:
    config.validate()
    widths = list(reversed(_hidden_channels(config)))
    plan = []
    in_ch, size = 1 + condition_width(config), config.resolution
    for out_ch in widths:
        out_size = conv_out(size, KERNEL, STRIDE, PADDING)
        plan.append(LayerSpec(in_ch, out_ch, size, out_size, STRIDE, PADDING))
        in_ch, size = out_ch, out_size
    plan.append(LayerSpec(in_ch, 1, size, conv_out(size, KERNEL, 1, 0), 1, 0))
    if plan[-1].out_size != 1:
        raise ConfigError("model.resolution", f"discriminator ends at {plan[-1].out_size}³, expected 1³")
    return plan


# ── Modules ────────────────────────────────────────────────────────────────────

def encode_condition(y: torch.Tensor, config: ModelConfig, dtype: torch.dtype) -> torch.Tensor:
    """[B] condition indices → [B, width] (raw index as a scalar, or one-hot)."""
    if config.condition_encoding == "scalar":
        return y.to(dtype).unsqueeze(1)
    return F.one_hot(y, config.n_conditions).to(dtype)


class Generator(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.plan = generator_plan(config)
        last = len(self.plan) - 1
        self.layers = nn.ModuleList(
            nn.ConvTranspose3d(s.in_channels, s.out_channels, KERNEL, s.stride, s.padding, bias=(i == last))
            for i, s in enumerate(self.plan)
        )
        self.norms = nn.ModuleList(nn.BatchNorm3d(s.out_channels) for s in self.plan[:-1])

    def forward(self, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        x = torch.cat([z, encode_condition(y, self.config, z.dtype)], dim=1)
        x = x.view(x.shape[0], x.shape[1], 1, 1, 1)
        for conv, norm in zip(self.layers[:-1], self.norms):
            x = F.relu(norm(conv(x)))
        x = torch.sigmoid(self.layers[-1](x))
        r = self.config.resolution
        return x.view(x.shape[0], r, r, r)


class Discriminator(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.plan = discriminator_plan(config)
        last = len(self.plan) - 1
        self.layers = nn.ModuleList(
            nn.Conv3d(s.in_channels, s.out_channels, KERNEL, s.stride, s.padding, bias=(i == last))
            for i, s in enumerate(self.plan)
        )
        self.norms = nn.ModuleList(nn.BatchNorm3d(s.out_channels) for s in self.plan[:-1])

    def forward(self, grids: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        b, r = grids.shape[0], self.config.resolution
        cond = encode_condition(y, self.config, grids.dtype).view(b, -1, 1, 1, 1).expand(-1, -1, r, r, r)
        x = torch.cat([grids.reshape(b, 1, r, r, r), cond], dim=1)
        for conv, norm in zip(self.layers[:-1], self.norms):
            x = F.leaky_relu(norm(conv(x)), self.config.leaky_slope)
        x = torch.sigmoid(self.layers[-1](x))
        return x.view(b)


# ── Initialization ─────────────────────────────────────────────────────────────

def _init_weights(net: nn.Module, std: float, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in net.layers:
            conv.weight.normal_(0.0, std, generator=gen)
            if conv.bias is not None:
                conv.bias.zero_()
        for norm in net.norms:
            norm.weight.fill_(1.0)
            norm.bias.zero_()
            norm.reset_running_stats()


def init_generator(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> Generator:
    net = Generator(config)
    _init_weights(net, config.init_std, seed)
    return net.to(dtype)


def init_discriminator(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> Discriminator:
    net = Discriminator(config)
    # distinct stream from the generator's for the same seed
    _init_weights(net, config.init_std, seed + 0x5EED)
    return net.to(dtype)


# ── Forward wrappers ───────────────────────────────────────────────────────────

def _check_conditions(y: torch.Tensor, batch: int, config: ModelConfig) -> None:
    if y.ndim != 1 or y.shape[0] != batch:
        raise ContractViolation(f"expected {batch} condition indices, got shape {tuple(y.shape)}")
    if y.dtype not in (torch.int64, torch.int32):
        raise ContractViolation(f"condition indices must be integers, got {y.dtype}")
    if batch and (int(y.min()) < 0 or int(y.max()) >= config.n_conditions):
        raise ContractViolation(f"condition index out of range [0, {config.n_conditions})")


def _set_mode(net: nn.Module, mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ContractViolation(f"mode must be 'train' or 'eval', got {mode!r}")
    net.train(mode == "train")


def generator_forward(net: Generator, z: torch.Tensor, y: torch.Tensor, mode: str = "eval") -> torch.Tensor:
    """Batch of grids [B, R, R, R] with values in (0, 1)."""
    config = net.config
    if z.ndim != 2 or z.shape[0] == 0 or z.shape[1] != config.latent_dim:
        raise ContractViolation(f"z must be [B>0, {config.latent_dim}], got {tuple(z.shape)}")
    _check_conditions(y, z.shape[0], config)
    _set_mode(net, mode)
    return net(z, y.long())


def discriminator_forward(net: Discriminator, grids: torch.Tensor, y: torch.Tensor,
                          mode: str = "eval") -> torch.Tensor:
    """Batch of real-probabilities [B] in (0, 1)."""
    config = net.config
    r = config.resolution
    if grids.ndim != 4 or grids.shape[0] == 0 or tuple(grids.shape[1:]) != (r, r, r):
        raise ContractViolation(f"grids must be [B>0, {r}, {r}, {r}], got {tuple(grids.shape)}")
    _check_conditions(y, grids.shape[0], config)
    _set_mode(net, mode)
    return net(grids, y.long())


# ── Latents ────────────────────────────────────────────────────────────────────

def sample_latents(n: int, config: ModelConfig, generator: Optional[torch.Generator] = None,
                   dtype: torch.dtype = torch.float32) -> torch.Tensor:
    if config.latent_prior == "uniform":
        return torch.rand(n, config.latent_dim, generator=generator, dtype=dtype)
    return torch.randn(n, config.latent_dim, generator=generator, dtype=dtype)


def expand_conditions(z: torch.Tensor, n_conditions: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Shared-z layout: row b*n + c holds latent z_b under condition c."""
    z_rep = z.repeat_interleave(n_conditions, dim=0)
    y = torch.arange(n_conditions, dtype=torch.int64).repeat(z.shape[0])
    return z_rep, y


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
