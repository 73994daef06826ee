"""Gaussian ring masks, band energies and the modal discrepancy curve."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

from .imaging import ImagePair, to_grayscale
from .tensor import dft2, fftshift2

REFERENCE_EPS = 1e-12


class DegenerateReferenceError(ValueError):
    """The optical reference carries no energy in any band."""


@dataclass(frozen=True)
class RingMask:
    mu: float
    sigma: float
    grid: np.ndarray


@dataclass(frozen=True)
class DiscrepancyCurve:
    centers: np.ndarray
    ratios: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        ratios = np.asarray(self.ratios, dtype=np.float64)
        if centers.shape != ratios.shape or centers.ndim != 1:
            raise ValueError("centers and ratios must be 1-D and of equal length")
        if np.any(ratios < 0):
            raise ValueError("ratios must be nonnegative")
        if np.any(np.diff(centers) <= 0):
            raise ValueError("centers must be strictly increasing")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "ratios", ratios)

    def __len__(self):
        return len(self.centers)


def radial_frequency(h: int, w: int, dtype=torch.float64) -> torch.Tensor:
    """Distance of each bin to DC in a centered (fftshift) layout.

    Frequencies are in cycles per sample, so the Nyquist value along each axis is 0.5.
    """
    fy = torch.fft.fftshift(torch.fft.fftfreq(h, dtype=dtype))
    fx = torch.fft.fftshift(torch.fft.fftfreq(w, dtype=dtype))
    return torch.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)


def gaussian_ring(d, mu, sigma):
    return torch.exp(-((d - mu) ** 2) / (2.0 * sigma**2))


def band_schedule(n_bands: int, gamma: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Centers ``0.5 * (i/B)**gamma`` and widths ``max(mu_i - mu_{i-1}, 0.5/(4B))``."""
    if n_bands < 2:
        raise ValueError("need at least 2 bands")
    i = np.arange(1, n_bands + 1, dtype=np.float64)
    mu = 0.5 * (i / n_bands) ** gamma
    gaps = np.diff(np.concatenate([[0.0], mu]))
    sigma = np.maximum(gaps, 0.5 / (4 * n_bands))
    return mu, sigma


def build_mdc_masks(n_bands: int, h: int, w: int, gamma: float = 2.0) -> list[RingMask]:
    if n_bands < 2:
        raise ValueError("need at least 2 bands")
    if h < 4 or w < 4:
        raise ValueError("grid must be at least 4x4")
    mu, sigma = band_schedule(n_bands, gamma)
    d = radial_frequency(h, w)
    return [RingMask(float(m), float(s), gaussian_ring(d, m, s).numpy()) for m, s in zip(mu, sigma)]


def power_spectrum(x) -> np.ndarray:
    """Squared DFT magnitude with DC at the grid center."""
    x = torch.as_tensor(np.asarray(x, dtype=np.float64))
    return (fftshift2(dft2(x)).abs() ** 2).numpy()


def band_energies(spectrum: np.ndarray, masks: Sequence[RingMask]) -> np.ndarray:
    stack = np.stack([m.grid for m in masks])
    if stack.shape[1:] != spectrum.shape:
        raise ValueError(f"mask grid {stack.shape[1:]} does not match spectrum {spectrum.shape}")
    return (stack * spectrum).sum(axis=(1, 2))


def discrepancy_ratios(residual, reference, masks: Sequence[RingMask]) -> np.ndarray:
    e_res = band_energies(power_spectrum(residual), masks)
    e_ref = band_energies(power_spectrum(reference), masks)
    if np.all(e_ref <= REFERENCE_EPS):
        raise DegenerateReferenceError("optical reference has no energy in any band")
    return e_res / (e_ref + REFERENCE_EPS)


def compute_mdc(pair: ImagePair, masks: Sequence[RingMask]) -> DiscrepancyCurve:
    """Per-band ratio of residual (SAR minus gray optical) energy to optical energy.

    Masks may come in any order; the curve lists bands sorted by center, and band
    ``k`` of the curve always pairs ``masks[k]``'s center with its own ratio.
    """
    gray = to_grayscale(pair.eo)[..., 0]
    residual = pair.sar[..., 0] - gray
    ratios = discrepancy_ratios(residual, gray, masks)
    centers = np.array([m.mu for m in masks])
    order = np.argsort(centers, kind="stable")
    return DiscrepancyCurve(centers[order], ratios[order])


def mean_curve(curves: Iterable[DiscrepancyCurve]) -> DiscrepancyCurve:
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to average")
    return DiscrepancyCurve(curves[0].centers, np.mean([c.ratios for c in curves], axis=0))


def write_curves_csv(path, curves: Sequence[tuple[str, DiscrepancyCurve]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair_id", "band_index", "mu", "ratio"])
        for pair_id, curve in curves:
            for i, (mu, r) in enumerate(zip(curve.centers, curve.ratios), start=1):
                writer.writerow([pair_id, i, repr(float(mu)), repr(float(r))])


def read_curves_csv(path) -> dict[str, DiscrepancyCurve]:
    rows: dict[str, list[tuple[int, float, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["pair_id"], []).append((int(row["band_index"]), float(row["mu"]), float(row["ratio"])))
    out = {}
    for pid, items in rows.items():
        items.sort()
        out[pid] = DiscrepancyCurve(np.array([m for _, m, _ in items]), np.array([r for _, _, r in items]))
    return out
