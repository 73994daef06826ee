"""Adaptive frequency tokenization.

A discrepancy curve is split into ``N`` contiguous equal-energy regions, each
region seeds a Gaussian band whose parameters are refined by scoring ``K``
perturbed candidates, and the resulting ring masks filter a feature grid in the
frequency domain to produce one spectral token per band.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .mdc import DiscrepancyCurve, gaussian_ring, radial_frequency
from .tensor import dft2, idft2, ifftshift2

SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class BandInit:
    mu_hat: float
    sigma_hat: float
    region: tuple[int, int]  # inclusive, 0-based sample indices


@dataclass
class BandParams:
    mu_star: torch.Tensor
    sigma_star: torch.Tensor
    candidates: torch.Tensor  # K x 2, columns (mu, sigma)
    weights: torch.Tensor  # K


def _repair(bounds: Sequence[int], n_samples: int) -> list[int]:
    """Force every region to hold at least one sample, sweeping left to right.

    ``bounds[k]`` is the number of samples in regions ``0..k``.
    """
    n = len(bounds) + 1
    out, prev = [], 0
    for k, b in enumerate(bounds, start=1):
        b = min(max(b, prev + 1), n_samples - (n - k))
        out.append(b)
        prev = b
    return out


def _regions_to_inits(centers: np.ndarray, bounds: Sequence[int]) -> list[BandInit]:
    edges = np.concatenate([[0.0], centers])
    inits, lo = [], 0
    for hi in list(bounds) + [len(centers)]:
        f_lo, f_hi = edges[lo], edges[hi]
        inits.append(BandInit(0.5 * (f_lo + f_hi), (f_hi - f_lo) / 4.0, (lo, hi - 1)))
        lo = hi
    return inits


def equal_energy_partition(curve: DiscrepancyCurve, n_regions: int) -> list[BandInit]:
    """Contiguous regions carrying equal shares of the curve's ratio mass.

    Region ``k`` ends at the first sample where the cumulative mass reaches
    ``k/N`` of the total. Curve sample ``i`` spans the frequencies
    ``(c_{i-1}, c_i]`` with ``c_0 = 0``; a region's center is the midpoint of the
    span it covers and its width parameter a quarter of that span.
    """
    n_samples = len(curve)
    if n_regions < 1:
        raise ValueError("need at least one region")
    if n_regions > n_samples:
        raise ValueError(f"cannot split {n_samples} curve samples into {n_regions} regions")
    mass = curve.ratios
    total = float(mass.sum())
    if total > 0:
        cum = np.cumsum(mass)
        bounds = [int(np.searchsorted(cum, total * k / n_regions, side="left")) + 1 for k in range(1, n_regions)]
    else:
        bounds = [(k * n_samples) // n_regions for k in range(1, n_regions)]
    return _regions_to_inits(curve.centers, _repair(bounds, n_samples))


def uniform_partition(curve: DiscrepancyCurve, n_regions: int, f_max: float = 0.5) -> list[BandInit]:
    """Equal-width frequency bands on ``[0, f_max]``, ignoring the curve's mass."""
    n_samples = len(curve)
    if n_regions > n_samples:
        raise ValueError(f"cannot split {n_samples} curve samples into {n_regions} regions")
    width = f_max / n_regions
    raw = [int(np.searchsorted(curve.centers, k * width, side="right")) for k in range(1, n_regions)]
    bounds = _repair(raw, n_samples)
    regions, lo = [], 0
    for hi in bounds + [n_samples]:
        regions.append((lo, hi - 1))
        lo = hi
    return [BandInit((k + 0.5) * width, width / 4.0, regions[k]) for k in range(n_regions)]


class CandidateScorer(nn.Module):
    """Two-layer perceptron giving one logit per normalized (mu, sigma) candidate."""

    def __init__(self, hidden: int = 16):
        super().__init__()
        self.fc1 = nn.Linear(2, hidden)
        # no output bias: the candidate softmax is shift invariant
        self.fc2 = nn.Linear(hidden, 1, bias=False)

    def forward(self, theta: torch.Tensor) -> torch.Tensor:
        # candidates live on [0, 0.5]; map to roughly unit range
        return self.fc2(torch.tanh(self.fc1(theta / 0.5))).squeeze(-1)


def sample_candidates(inits: Sequence[BandInit], k: int, perturb_scale: float, generator=None, dtype=torch.float64) -> torch.Tensor:
    """``len(inits) x K x 2`` candidate (mu, sigma) pairs around each initialization.

    Noise for both coordinates has standard deviation ``perturb_scale * sigma_hat``;
    sigma candidates are floored at ``SIGMA_FLOOR``.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    if perturb_scale < 0:
        raise ValueError("perturb_scale must be >= 0")
    base = torch.tensor([[b.mu_hat, b.sigma_hat] for b in inits], dtype=dtype)
    cand = base[:, None, :].expand(len(inits), k, 2).clone()
    if perturb_scale > 0:
        eta = torch.randn(len(inits), k, 2, generator=generator, dtype=dtype)
        cand = cand + eta * (perturb_scale * base[:, None, 1:2])
    cand[..., 1] = torch.clamp(cand[..., 1], min=SIGMA_FLOOR)
    return cand


def combine_candidates(candidates: torch.Tensor, logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Softmax-weighted average of candidates. Returns ``(mu*, sigma*, weights)``."""
    weights = torch.softmax(logits, dim=-1)
    theta = (weights[..., None] * candidates).sum(dim=-2)
    return theta[..., 0], theta[..., 1], weights


def refine_band_params(
    init: BandInit,
    k: int,
    perturb_scale: float,
    phi: nn.Module,
    seed: int | None = None,
    generator: torch.Generator | None = None,
) -> BandParams:
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(seed)
    dtype = next(phi.parameters()).dtype
    cand = sample_candidates([init], k, perturb_scale, generator, dtype)[0]
    mu, sigma, w = combine_candidates(cand, phi(cand))
    return BandParams(mu, sigma, cand, w)


def adaptive_mask(mu_star, sigma_star, h: int, w: int) -> torch.Tensor:
    """Gaussian ring masks on an ``h x w`` grid in the unshifted DFT layout.

    ``mu_star`` and ``sigma_star`` may carry any leading shape; the grid axes are
    appended. Differentiable in both parameters.
    """
    mu_star = torch.as_tensor(mu_star)
    sigma_star = torch.as_tensor(sigma_star, dtype=mu_star.dtype)
    d = ifftshift2(radial_frequency(h, w, dtype=mu_star.dtype))
    return gaussian_ring(d, mu_star[..., None, None], sigma_star[..., None, None])


def tokenize(features: torch.Tensor, masks: torch.Tensor, conv_s: nn.Module, conv_bank: Sequence[nn.Module]) -> torch.Tensor:
    """Band-filter a feature grid into one token per mask.

    Parameters
    ----------
    features : Tensor, shape (B, C, H, W)
        Patch-token grid (class token excluded).
    masks : Tensor, shape (B, N, H, W) or (N, H, W)
        Frequency masks in unshifted DFT layout.

    Returns
    -------
    Tensor, shape (B, N, C', H, W)
    """
    if masks.ndim == 3:
        masks = masks.unsqueeze(0).expand(features.shape[0], -1, -1, -1)
    if masks.shape[-2:] != features.shape[-2:]:
        raise ValueError(f"mask grid {tuple(masks.shape[-2:])} does not match features {tuple(features.shape[-2:])}")
    if masks.shape[1] != len(conv_bank):
        raise ValueError("one band convolution per mask is required")
    shared = conv_s(features)
    spec = dft2(shared)
    filtered = idft2(spec[:, None] * masks[:, :, None]).real
    tokens = [conv(filtered[:, i]) for i, conv in enumerate(conv_bank)]
    return torch.stack(tokens, dim=1)


class AFT(nn.Module):
    """Learnable part of the tokenizer: candidate scorer, shared and per-band convolutions."""

    def __init__(self, channels: int, n_bands: int = 4, k: int = 8, perturb_scale: float = 0.5,
                 phi_hidden: int = 16, partition: str = "mdc"):
        super().__init__()
        if partition not in ("mdc", "uniform"):
            raise ValueError(f"unknown partition {partition!r}")
        self.n_bands = n_bands
        self.k = k
        self.perturb_scale = perturb_scale
        self.partition = partition
        self.phi = CandidateScorer(phi_hidden)
        self.conv_s = nn.Conv2d(channels, channels, kernel_size=1)
        self.conv_bank = nn.ModuleList(nn.Conv2d(channels, channels, kernel_size=3, padding=1) for _ in range(n_bands))

    def band_inits(self, curve: DiscrepancyCurve) -> list[BandInit]:
        if self.partition == "uniform":
            return uniform_partition(curve, self.n_bands)
        return equal_energy_partition(curve, self.n_bands)

    def band_params(self, curves: Sequence[DiscrepancyCurve], generator=None, perturb_scale: float | None = None):
        """Refined ``(mu*, sigma*)`` of shape (B, N) plus the raw candidates (B, N, K, 2)."""
        scale = self.perturb_scale if perturb_scale is None else perturb_scale
        dtype = self.conv_s.weight.dtype
        inits = [b for c in curves for b in self.band_inits(c)]
        cand = sample_candidates(inits, self.k, scale, generator, dtype)
        mu, sigma, _ = combine_candidates(cand, self.phi(cand))
        shape = (len(curves), self.n_bands)
        return mu.reshape(shape), sigma.reshape(shape), cand.reshape(*shape, self.k, 2)

    def forward(self, grid: torch.Tensor, curves: Sequence[DiscrepancyCurve], generator=None, perturb_scale=None):
        if len(curves) != grid.shape[0]:
            raise ValueError("one curve per sample is required")
        mu, sigma, _ = self.band_params(curves, generator, perturb_scale)
        masks = adaptive_mask(mu, sigma, grid.shape[-2], grid.shape[-1])
        return tokenize(grid, masks, self.conv_s, self.conv_bank)


def token_energy(tokens: torch.Tensor) -> torch.Tensor:
    """Per-band squared norm over channels, (B, N, C, H, W) -> (B, N, H, W)."""
    return (tokens**2).sum(dim=2)


def write_token_energy_csv(path, pair_ids: Sequence[str], energy: torch.Tensor) -> None:
    import csv

    energy = energy.detach().cpu().double().numpy()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair_id", "band_index", "row", "col", "energy"])
        for pid, maps in zip(pair_ids, energy):
            for band, grid in enumerate(maps, start=1):
                for r in range(grid.shape[0]):
                    for c in range(grid.shape[1]):
                        writer.writerow([pid, band, r, c, repr(float(grid[r, c]))])
