"""Array core: 2D DFT, finite-difference gradient checking and the tensor container format.

Arrays are ``torch.Tensor`` objects; autograd provides the reverse-mode gradient
tape. Parameters that are frozen carry ``requires_grad=False`` and therefore never
receive a materialized ``.grad``.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from typing import Callable, Mapping

import numpy as np
import torch

MAGIC = b"MCPT1"
_DTYPE_CODES = {torch.float32: 0, torch.float64: 1}
_CODE_DTYPES = {0: (torch.float32, "<f4"), 1: (torch.float64, "<f8")}


def _check_grid(x: torch.Tensor) -> None:
    if x.ndim < 2:
        raise ValueError(f"expected at least a 2D grid, got shape {tuple(x.shape)}")
    if x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"zero extent in grid of shape {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError("non-finite values in DFT input")


def dft2(x) -> torch.Tensor:
    """Unnormalized forward 2D DFT over the last two axes.

    Leading axes are treated as a batch. Real input gives a complex result of the
    matching precision (float32 -> complex64, float64 -> complex128).
    """
    x = torch.as_tensor(x)
    _check_grid(x)
    return torch.fft.fft2(x, norm="backward")


def idft2(X) -> torch.Tensor:
    """Inverse of :func:`dft2`, normalized by ``1/(H*W)``."""
    X = torch.as_tensor(X)
    _check_grid(X)
    return torch.fft.ifft2(X, norm="backward")


def fftshift2(x: torch.Tensor) -> torch.Tensor:
    """Move the DC bin of the last two axes to the grid center."""
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifftshift2(x: torch.Tensor) -> torch.Tensor:
    return torch.fft.ifftshift(x, dim=(-2, -1))


# ---------------------------------------------------------------------------
# gradient checking


def parameter_errors(
    fn: Callable[[Mapping[str, torch.Tensor]], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Relative disagreement between autograd and central differences, per parameter.

    For each named tensor the analytic gradient ``a`` and the central-difference
    estimate ``c`` are compared over the probed coordinates as
    ``||a - c|| / max(||a||, ||c||, 1e-12)``.

    Parameters
    ----------
    fn : callable
        Maps a dict of named tensors to a scalar tensor. Must be deterministic.
    params : mapping
        Point at which to check. Values are cloned; callers' tensors are untouched.
    step : float
        Central-difference step ``h``.
    max_entries : int, optional
        Probe at most this many coordinates per tensor, chosen with ``seed``.

    Raises
    ------
    ValueError
        If ``step <= 0`` or two evaluations of ``fn`` at the same point differ.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = OrderedDict(
        (name, t.detach().clone().requires_grad_(True)) for name, t in params.items()
    )
    out = fn(point)
    if out.numel() != 1:
        raise ValueError("fn must return a scalar")
    again = fn({k: v.detach() for k, v in point.items()})
    if out.detach().item() != again.detach().item():
        raise ValueError("fn is not deterministic: repeated evaluations differ")
    names = list(point)
    grads = torch.autograd.grad(out, [point[k] for k in names], allow_unused=True)

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    with torch.no_grad():
        base = {k: v.detach().clone() for k, v in point.items()}
        for name, g in zip(names, grads):
            t = base[name]
            if g is None:
                g = torch.zeros_like(t)
            flat_idx = np.arange(t.numel())
            if max_entries is not None and t.numel() > max_entries:
                flat_idx = np.sort(rng.choice(t.numel(), size=max_entries, replace=False))
            analytic = g.reshape(-1)[torch.as_tensor(flat_idx)].double()
            numeric = torch.empty_like(analytic)
            for n, idx in enumerate(flat_idx):
                orig = t.reshape(-1)[idx].item()
                t.reshape(-1)[idx] = orig + step
                f_plus = fn(base).item()
                t.reshape(-1)[idx] = orig - step
                f_minus = fn(base).item()
                t.reshape(-1)[idx] = orig
                numeric[n] = (f_plus - f_minus) / (2.0 * step)
            diff = torch.linalg.vector_norm(analytic - numeric).item()
            scale = max(
                torch.linalg.vector_norm(analytic).item(),
                torch.linalg.vector_norm(numeric).item(),
                1e-12,
            )
            errors[name] = diff / scale
    return errors


def grad_check(fn, params, step: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Maximum over parameters of the relative error reported by :func:`parameter_errors`."""
    errors = parameter_errors(fn, params, step=step, max_entries=max_entries, seed=seed)
    return max(errors.values()) if errors else 0.0


# ---------------------------------------------------------------------------
# tensor container


def dumps_tensors(tensors: Mapping[str, torch.Tensor]) -> bytes:
    """Serialize named real tensors to the MCPT1 container layout.

    Layout (little-endian): magic ``MCPT1``, u32 entry count, then per entry
    u16 name length, UTF-8 name, u8 dtype code (0=f32, 1=f64), u8 rank,
    u64 extents, raw row-major payload.
    """
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        t = torch.as_tensor(t).detach().cpu()
        if t.dtype not in _DTYPE_CODES:
            raise ValueError(f"unsupported dtype {t.dtype} for {name!r}")
        code = _DTYPE_CODES[t.dtype]
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", code, t.ndim))
        buf.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        buf.write(np.ascontiguousarray(t.numpy(), dtype=_CODE_DTYPES[code][1]).tobytes())
    return buf.getvalue()


def loads_tensors(data: bytes) -> "OrderedDict[str, torch.Tensor]":
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not an MCPT1 tensor container")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("truncated tensor container")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out: OrderedDict[str, torch.Tensor] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _CODE_DTYPES:
            raise ValueError(f"unknown dtype code {code} for {name!r}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        torch_dtype, np_dtype = _CODE_DTYPES[code]
        count_el = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(count_el * np.dtype(np_dtype).itemsize), dtype=np_dtype)
        out[name] = torch.from_numpy(arr.reshape(shape).copy()).to(torch_dtype)
    if pos != len(data):
        raise ValueError("trailing bytes after tensor container")
    return out


def save_tensors(path, tensors: Mapping[str, torch.Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_tensors(tensors))


def load_tensors(path) -> "OrderedDict[str, torch.Tensor]":
    with open(path, "rb") as fh:
        return loads_tensors(fh.read())
