"""Compact patch transformer with optional AFT/FER refinement before its last block."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .aft import AFT
from .fer import FER
from .mdc import DiscrepancyCurve

AUXILIARY_PREFIXES = ("aft.", "fer.")


@dataclass
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    in_channels: int = 3
    embed_dim: int = 64
    heads: int = 4
    blocks: int = 6
    embedding_dim: int = 32
    mlp_ratio: float = 2.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.blocks < 2:
            raise ValueError("need at least 2 blocks")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        grid = self.image_size // self.patch_size
        if grid * grid != self.num_patches:
            raise ValueError("patch count is not a perfect square")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


@dataclass
class AuxConfig:
    """Settings of the pretraining-only refinement path."""

    enabled: bool = True
    use_experts: bool = True
    n_bands: int = 4
    k: int = 8
    perturb_scale: float = 0.5
    phi_hidden: int = 16
    router_hidden: int = 32
    partition: str = "mdc"


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(c // self.heads), dim=-1)
        return self.proj((att @ v).transpose(1, 2).reshape(b, n, c))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class MCPTEncoder(nn.Module):
    """Shared SAR/optical encoder.

    ``aux=None`` builds the inference-only model: the AFT/FER parameters do not
    exist at all. Otherwise they are inserted between blocks ``L-1`` and ``L`` and
    used in ``pretrain`` mode only.
    """

    def __init__(self, config: EncoderConfig = EncoderConfig(), aux: AuxConfig | None = AuxConfig()):
        super().__init__()
        self.config = config
        self.aux_config = aux if (aux is not None and aux.enabled) else None
        c = config.embed_dim
        self.patch_embed = nn.Conv2d(config.in_channels, c, config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, c))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches + 1, c))
        self.blocks = nn.ModuleList(Block(c, config.heads, config.mlp_ratio) for _ in range(config.blocks))
        self.head = nn.Sequential(nn.LayerNorm(c), nn.Linear(c, config.embedding_dim))
        if self.aux_config is not None:
            a = self.aux_config
            self.aft = AFT(c, a.n_bands, a.k, a.perturb_scale, a.phi_hidden, a.partition)
            self.fer = FER(c, a.n_bands, a.router_hidden, use_experts=a.use_experts)
        self.reset_parameters(torch.Generator().manual_seed(0))

    @property
    def has_auxiliary(self) -> bool:
        return self.aux_config is not None

    def reset_parameters(self, generator: torch.Generator, prefixes: Sequence[str] | None = None) -> None:
        """Truncated-normal (std 0.02) weights, zero biases, unit LayerNorm scales.

        Parameters are visited in registration order, so a fixed generator seed
        gives a fixed initialization.
        """
        with torch.no_grad():
            for name, module in self.named_modules():
                if prefixes is not None and not any(name.startswith(p.rstrip(".")) for p in prefixes):
                    continue
                if isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()
                elif isinstance(module, (nn.Linear, nn.Conv2d)):
                    _trunc_normal(module.weight, 0.02, generator)
                    if module.bias is not None:
                        module.bias.zero_()
            if prefixes is None:
                _trunc_normal(self.cls_token, 0.02, generator)
                _trunc_normal(self.pos_embed, 0.02, generator)

    # -- forward -----------------------------------------------------------

    def _tokens(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[1] == 1 and self.config.in_channels != 1:
            images = images.expand(-1, self.config.in_channels, -1, -1)
        x = self.patch_embed(images).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        return torch.cat([cls, x], dim=1) + self.pos_embed

    def refine(self, patches: torch.Tensor, curves, generator=None, perturb_scale=None) -> torch.Tensor:
        """AFT + FER on the patch tokens (B, P, C); the class token never enters here."""
        b, p, c = patches.shape
        side = math.isqrt(p)
        if side * side != p:
            raise ValueError(f"patch count {p} is not a perfect square")
        if not self.fer.use_experts:
            return self.fer(patches, None)
        grid = patches.transpose(1, 2).reshape(b, c, side, side)
        tokens = self.aft(grid, curves, generator, perturb_scale)
        tokens = tokens.flatten(3).transpose(2, 3)  # (B, N, P, C)
        return self.fer(patches, tokens)

    def encode(
        self,
        images: torch.Tensor,
        curves: Sequence[DiscrepancyCurve] | None = None,
        mode: str = "inference",
        generator: torch.Generator | None = None,
        perturb_scale: float | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns ``(patch features (B, P, C), unit-norm embeddings (B, D))``."""
        if mode not in ("pretrain", "inference"):
            raise ValueError(f"unknown mode {mode!r}")
        refine = mode == "pretrain" and self.has_auxiliary
        if refine and (curves is None or len(curves) != images.shape[0]):
            raise ValueError("pretrain mode needs one discrepancy curve per image")
        x = self._tokens(images)
        for block in self.blocks[:-1]:
            x = block(x)
        if refine:
            refined = self.refine(x[:, 1:], curves, generator, perturb_scale)
            x = torch.cat([x[:, :1], refined], dim=1)
        x = self.blocks[-1](x)
        patches = x[:, 1:]
        z = self.head(patches.mean(dim=1))
        return patches, F.normalize(z, dim=-1, eps=1e-12)

    def forward(self, images, curves=None, mode="inference", generator=None, perturb_scale=None):
        return self.encode(images, curves, mode, generator, perturb_scale)[1]

    # -- parameter bookkeeping -------------------------------------------------

    def trainable_names(self, policy: str) -> set[str]:
        last = len(self.blocks) - 1
        if policy == "pretrain":
            prefixes = (f"blocks.{last - 1}.", f"blocks.{last}.", "head.", "aft.", "fer.")
        elif policy == "finetune":
            prefixes = (f"blocks.{last}.", "head.")
        else:
            raise ValueError(f"unknown policy {policy!r}")
        return {n for n, _ in self.named_parameters() if n.startswith(prefixes)}

    def inference_state(self) -> dict[str, torch.Tensor]:
        return strip_auxiliary(self.state_dict())


def set_trainable(model: MCPTEncoder, policy: str) -> set[str]:
    """Freeze everything outside the policy's trainable set. Returns that set."""
    names = model.trainable_names(policy)
    for n, p in model.named_parameters():
        p.requires_grad_(n in names)
        if n not in names:
            p.grad = None
    return names


def strip_auxiliary(state: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {k: v for k, v in state.items() if not k.startswith(AUXILIARY_PREFIXES)}


def has_auxiliary_tensors(state) -> bool:
    return any(k.startswith(AUXILIARY_PREFIXES) for k in state)


def count_parameters(state) -> int:
    return sum(int(v.numel()) for v in state.values())


def config_dict(config: EncoderConfig) -> dict:
    return asdict(config)


def _trunc_normal(t: torch.Tensor, std: float, generator: torch.Generator) -> None:
    # resample outside +-2 std; generator-driven so it is reproducible
    vals = torch.randn(t.shape, generator=generator, dtype=torch.float64)
    bad = vals.abs() > 2
    while bad.any():
        vals[bad] = torch.randn(int(bad.sum()), generator=generator, dtype=torch.float64)
        bad = vals.abs() > 2
    t.copy_((vals * std).to(t.dtype))
