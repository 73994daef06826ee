"""Frequency-aware expert refinement.

Each spectral token drives one cross-attention expert over the feature sequence;
a router weighs the experts from pooled tokens, and a global self-attention
branch supplies the attention pattern that redistributes the aggregate.
All attention is single-head with key width equal to the channel count.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("keys and values must have the same length")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


class Projections(nn.Module):
    def __init__(self, channels: int, key_dim: int | None = None):
        super().__init__()
        key_dim = key_dim or channels
        self.q = nn.Linear(channels, key_dim)
        # a key bias only shifts each softmax row by a constant, so it is left out
        self.k = nn.Linear(channels, key_dim, bias=False)
        self.v = nn.Linear(channels, channels)


class Expert(Projections):
    """Cross-attention from the feature sequence (queries) to one band token (keys/values)."""

    def forward(self, features: torch.Tensor, token: torch.Tensor) -> torch.Tensor:
        return attend(self.q(features), self.k(token), self.v(token))


def expert_refine(features: torch.Tensor, token: torch.Tensor, expert: Expert) -> torch.Tensor:
    return expert(features, token)


class RoutingNet(nn.Module):
    """Spatially mean-pools each token and maps the pooled set to ``N`` logits."""

    def __init__(self, channels: int, n_experts: int, hidden: int = 32):
        super().__init__()
        self.n_experts = n_experts
        self.fc1 = nn.Linear(channels * n_experts, hidden)
        self.fc2 = nn.Linear(hidden, n_experts)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        # tokens: (B, N, P', C)
        pooled = tokens.mean(dim=2).flatten(1)
        return self.fc2(torch.tanh(self.fc1(pooled)))


def route_and_aggregate(logits: torch.Tensor, refined: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Softmax the router logits (B, N) and mix the expert outputs (B, N, P, C).

    Returns ``(aggregate, weights)``.
    """
    if refined.shape[1] == 0:
        raise ValueError("no expert outputs to aggregate")
    if logits.shape[-1] != refined.shape[1]:
        raise ValueError("one routing logit per expert output is required")
    w = torch.softmax(logits, dim=-1)
    return (w[:, :, None, None] * refined).sum(dim=1), w


class GlobalBranch(nn.Module):
    """Self-attention over the features, then its attention pattern re-applied to another sequence."""

    def __init__(self, channels: int):
        super().__init__()
        self.self_attn = Projections(channels)
        self.outer = Projections(channels)

    def global_features(self, features: torch.Tensor) -> torch.Tensor:
        sa = self.self_attn
        return attend(sa.q(features), sa.k(features), sa.v(features))

    def modulate(self, r_g: torch.Tensor, r_a: torch.Tensor) -> torch.Tensor:
        o = self.outer
        return attend(o.q(r_g), o.k(r_g), o.v(r_a))

    def forward(self, features: torch.Tensor, r_a: torch.Tensor) -> torch.Tensor:
        if features.shape != r_a.shape:
            raise ValueError(f"shape mismatch {tuple(features.shape)} vs {tuple(r_a.shape)}")
        return self.modulate(self.global_features(features), r_a)


def global_modulate(features: torch.Tensor, r_a: torch.Tensor, branch: GlobalBranch) -> torch.Tensor:
    return branch(features, r_a)


class FER(nn.Module):
    """Expert refinement block; parameters are named ``expert{i}.*``, ``router.*``, ``global.*``.

    With ``use_experts=False`` the block reduces to the global self-attention branch
    and ignores the tokens (expert and router parameters then receive no gradient).
    """

    def __init__(self, channels: int, n_experts: int = 4, router_hidden: int = 32, use_experts: bool = True):
        super().__init__()
        self.n_experts = n_experts
        self.use_experts = use_experts
        for i in range(n_experts):
            self.add_module(f"expert{i}", Expert(channels))
        self.router = RoutingNet(channels, n_experts, router_hidden)
        self.add_module("global", GlobalBranch(channels))

    @property
    def global_branch(self) -> GlobalBranch:
        return self._modules["global"]

    def experts(self) -> list[Expert]:
        return [self._modules[f"expert{i}"] for i in range(self.n_experts)]

    def forward(self, features: torch.Tensor, tokens: torch.Tensor | None) -> torch.Tensor:
        """features: (B, P, C); tokens: (B, N, P', C)."""
        if not self.use_experts:
            return self.global_branch.global_features(features)
        if tokens is None or tokens.shape[1] != self.n_experts:
            raise ValueError(f"expected {self.n_experts} tokens")
        refined = torch.stack([e(features, tokens[:, i]) for i, e in enumerate(self.experts())], dim=1)
        r_a, _ = route_and_aggregate(self.router(tokens), refined)
        return self.global_branch(features, r_a)
