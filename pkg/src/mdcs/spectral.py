"""Frequency-domain features: DCT, FFT amplitude, Haar DWT, log scaling and
per-branch normalization."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np


class Transform(str, enum.Enum):
    DCT = "dct"
    FFT_AMPLITUDE = "fft"
    DWT_HAAR = "dwt"


class Branch(str, enum.Enum):
    SPATIAL = "spatial"
    FREQUENCY = "frequency"


STD_FLOOR = 1e-8


@dataclass(frozen=True)
class SpectralFeature:
    map: np.ndarray  # [C, N, N]
    transform: Transform
    log_scaled: bool
    source_size: int


@dataclass(frozen=True)
class BranchStats:
    mean: np.ndarray  # [C]
    std: np.ndarray  # [C], already floored
    branch: Branch


def _square(channel: np.ndarray, op: str) -> np.ndarray:
    arr = np.asarray(channel, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"{op}: expected square trailing dims, got shape {arr.shape}")
    if arr.shape[-1] < 1:
        raise ValueError(f"{op}: empty input")
    return arr


@lru_cache(maxsize=32)
def dct_matrix(n: int) -> np.ndarray:
    """Rows ``C(i) * cos((2a + 1) i pi / 2n)`` for i, a in ``range(n)``."""
    i = np.arange(n)[:, None]
    a = np.arange(n)[None, :]
    m = np.cos((2 * a + 1) * i * np.pi / (2 * n))
    m[0] *= 1.0 / np.sqrt(2.0)
    m.setflags(write=False)
    return m


def dct2d(channel) -> np.ndarray:
    """2-D DCT with overall factor ``1/sqrt(2N)`` and ``C(0) = 1/sqrt(2)``.

    Evaluated separably: 1-D transforms along rows, then along columns.  This
    scaling is not orthonormal (a constant N x N image of ones maps to
    ``N / 2`` at the origin).  Leading dimensions are treated as a batch.
    """
    x = _square(channel, "dct2d")
    n = x.shape[-1]
    m = dct_matrix(n)
    rows = x @ m.T  # transform along b
    return (m @ rows) / np.sqrt(2.0 * n)


def dct2d_direct(channel) -> np.ndarray:
    """Quadruple-sum evaluation of :func:`dct2d`, O(N^4); used as a reference."""
    x = _square(channel, "dct2d_direct")
    if x.ndim != 2:
        raise ValueError("dct2d_direct takes a single N x N channel")
    n = x.shape[0]
    out = np.zeros((n, n))
    c = lambda k: 1.0 / np.sqrt(2.0) if k == 0 else 1.0  # noqa: E731
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for a in range(n):
                ca = np.cos((2 * a + 1) * i * np.pi / (2 * n))
                for b in range(n):
                    acc += x[a, b] * ca * np.cos((2 * b + 1) * j * np.pi / (2 * n))
            out[i, j] = c(i) * c(j) * acc / np.sqrt(2.0 * n)
    return out


def fft_amplitude2d(channel, center_shift: bool = False) -> np.ndarray:
    """Magnitude of the unnormalized 2-D DFT, DC at (0, 0) unless shifted.

    ``center_shift`` moves DC to the middle and is meant for heatmaps only.
    """
    x = _square(channel, "fft_amplitude2d")
    amp = np.abs(np.fft.fft2(x))
    if center_shift:
        amp = np.fft.fftshift(amp, axes=(-2, -1))
    return amp


def dwt_haar2d(channel) -> np.ndarray:
    """Single-level orthonormal Haar transform tiled as ``[LL LH; HL HH]``.

    For each 2 x 2 block ``[[p, q], [r, s]]``: LL = (p+q+r+s)/2,
    LH = (p-q+r-s)/2 (horizontal detail), HL = (p+q-r-s)/2 (vertical
    detail), HH = (p-q-r+s)/2.
    """
    x = _square(channel, "dwt_haar2d")
    n = x.shape[-1]
    if n % 2:
        raise ValueError(f"dwt_haar2d: size must be even, got {n}")
    p = x[..., 0::2, 0::2]
    q = x[..., 0::2, 1::2]
    r = x[..., 1::2, 0::2]
    s = x[..., 1::2, 1::2]
    top = np.concatenate([(p + q + r + s) / 2, (p - q + r - s) / 2], axis=-1)
    bottom = np.concatenate([(p + q - r - s) / 2, (p - q - r + s) / 2], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def idwt_haar2d(coeffs) -> np.ndarray:
    """Inverse of :func:`dwt_haar2d`."""
    c = _square(coeffs, "idwt_haar2d")
    n = c.shape[-1]
    if n % 2:
        raise ValueError(f"idwt_haar2d: size must be even, got {n}")
    k = n // 2
    ll, lh = c[..., :k, :k], c[..., :k, k:]
    hl, hh = c[..., k:, :k], c[..., k:, k:]
    out = np.empty_like(c)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


_TRANSFORMS = {
    Transform.DCT: dct2d,
    Transform.FFT_AMPLITUDE: fft_amplitude2d,
    Transform.DWT_HAAR: dwt_haar2d,
}


def apply_transform(x, transform: Transform | str) -> np.ndarray:
    return _TRANSFORMS[Transform(transform)](x)


def log_scale(coeffs) -> np.ndarray:
    """``ln(1 + |c|)``: zero-safe, sign-collapsing, monotone in magnitude."""
    return np.log1p(np.abs(np.asarray(coeffs, dtype=np.float64)))


def spectral_feature(image, transform: Transform | str = Transform.DCT) -> SpectralFeature:
    """Per-channel log-scaled spectrum of a [C, N, N] image."""
    img = _square(image, "spectral_feature")
    t = Transform(transform)
    return SpectralFeature(
        map=log_scale(apply_transform(img, t)),
        transform=t,
        log_scaled=True,
        source_size=img.shape[-1],
    )


def fit_branch_stats(view: Sequence[np.ndarray] | np.ndarray, branch: Branch | str) -> BranchStats:
    """Per-channel mean and floored std over a stack of [C, N, N] arrays."""
    if len(view) == 0:
        raise ValueError("fit_branch_stats: empty corpus view")
    stack = np.asarray(view, dtype=np.float64)
    if stack.ndim != 4:
        raise ValueError(f"fit_branch_stats: expected [M, C, N, N], got {stack.shape}")
    mean = stack.mean(axis=(0, 2, 3))
    std = np.maximum(stack.std(axis=(0, 2, 3)), STD_FLOOR)
    return BranchStats(mean=mean, std=std, branch=Branch(branch))


def apply_normalization(x, stats: BranchStats) -> np.ndarray:
    """``(x - mean) / std`` per channel.

    Not idempotent: applying the same stats twice shifts and scales again.
    Works on [C, N, N] or [M, C, N, N].
    """
    arr = np.asarray(x, dtype=np.float64)
    shape = (-1, 1, 1)
    return (arr - stats.mean.reshape(shape)) / stats.std.reshape(shape)


def average_spectrum(frames: Sequence[np.ndarray], transform: Transform | str = Transform.DCT) -> np.ndarray:
    """Elementwise mean of ``log_scale(transform(frame))`` over frames."""
    if len(frames) == 0:
        raise ValueError("average_spectrum: no frames")
    shape = np.shape(frames[0])
    total = None
    for k, frame in enumerate(frames):
        if np.shape(frame) != shape:
            raise ValueError(f"average_spectrum: frame {k} has shape {np.shape(frame)}, expected {shape}")
        spec = log_scale(apply_transform(frame, transform))
        total = spec if total is None else total + spec
    return total / len(frames)


def radial_bands(n: int, transform: Transform | str = Transform.DCT, n_bands: int = 4) -> np.ndarray:
    """Band index (0 = lowest) of every coefficient position in an N x N map.

    The radius is measured from the DC position in units of the largest
    representable frequency.  FFT indices are folded (k and N - k are the
    same frequency); DWT maps use raw index radius.
    """
    idx = np.arange(n, dtype=np.float64)
    if Transform(transform) is Transform.FFT_AMPLITUDE:
        idx = np.minimum(idx, n - idx)
    r = np.hypot(idx[:, None], idx[None, :])
    rmax = r.max() if r.max() > 0 else 1.0
    band = np.floor(r / rmax * n_bands).astype(int)
    return np.minimum(band, n_bands - 1)


def band_means(spectrum: np.ndarray, transform: Transform | str = Transform.DCT, n_bands: int = 4) -> np.ndarray:
    """Mean value of an N x N (or [..., N, N]) map inside each radial band."""
    spec = np.asarray(spectrum, dtype=np.float64)
    bands = radial_bands(spec.shape[-1], transform, n_bands)
    return np.array([spec[..., bands == k].mean() for k in range(n_bands)])
