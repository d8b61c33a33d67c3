"""Pilot sampling, delay-domain truncation, segmentation and normalization.

All functions accept a leading batch axis: a matrix ``(N_a, W)`` or a stack
``(N, N_a, W)`` works the same way.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PilotConfig:
    n_f: int = 1024
    delta_f: float = 15e3
    dr_f: int = 12
    offset: int = 0

    def __post_init__(self):
        if self.n_f < 1 or self.dr_f < 1:
            raise ValueError("n_f and dr_f must be positive")
        if not 0 <= self.offset < self.dr_f:
            raise ValueError("pilot offset must lie in [0, dr_f)")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.n_f, self.dr_f)

    @property
    def m_f(self) -> int:
        return len(self.indices)

    @property
    def tap_width(self) -> float:
        """Delay resolution (s) of the pilot-domain transform."""
        return 1.0 / (self.m_f * self.dr_f * self.delta_f)


@dataclass(frozen=True)
class TruncationConfig:
    n_t: int = 32
    stages: int = 4

    def validate(self, pilots: PilotConfig) -> None:
        if not 0 < self.n_t <= pilots.m_f:
            raise ValueError(f"n_t={self.n_t} must lie in (0, m_f={pilots.m_f}]")
        if self.n_t % 2 ** self.stages:
            raise ValueError(f"n_t={self.n_t} not divisible by 2^{self.stages}")


@dataclass(frozen=True)
class SegmentationConfig:
    k: int
    n_a: int

    def __post_init__(self):
        if self.k < 1 or self.n_a % self.k:
            raise ValueError(f"base number K={self.k} does not divide N_a={self.n_a}")

    @property
    def n_segments(self) -> int:
        return self.n_a // self.k


@dataclass(frozen=True)
class NormScale:
    max_abs: float

    def __post_init__(self):
        if not self.max_abs > 0:
            raise ValueError("normalization scale must be positive")


def dft_matrix(m: int) -> np.ndarray:
    """Unitary ``m``-point transform used for the pilot -> delay map.

    The kernel is ``exp(+2j pi j k / m) / sqrt(m)``: a path whose frequency
    response rotates as ``exp(-2j pi f tau)`` lands at tap ``tau / tap_width``.
    """
    j = np.arange(m)
    return np.exp(2j * np.pi * np.outer(j, j) / m) / np.sqrt(m)


def downsample_pilots(h_full: np.ndarray, cfg: PilotConfig) -> np.ndarray:
    if h_full.shape[-1] != cfg.n_f:
        raise ValueError(f"expected {cfg.n_f} subcarriers, got {h_full.shape[-1]}")
    return h_full[..., cfg.indices]


def to_delay_truncated(h_pilot: np.ndarray, trunc: TruncationConfig | int) -> np.ndarray:
    """``(h_pilot @ F)[..., :n_t]`` with F from :func:`dft_matrix`."""
    n_t = trunc if isinstance(trunc, int) else trunc.n_t
    if n_t > h_pilot.shape[-1]:
        raise ValueError(f"cannot keep {n_t} taps out of {h_pilot.shape[-1]}")
    # x @ F == sqrt(m) * ifft(x) for this kernel
    return np.fft.ifft(h_pilot, axis=-1, norm="ortho")[..., :n_t]


def delay_to_pilot_freq(h_hat: np.ndarray, cfg: PilotConfig | int) -> np.ndarray:
    """Zero-pad the delay taps back to ``m_f`` and undo the unitary transform."""
    m_f = cfg if isinstance(cfg, int) else cfg.m_f
    pad = [(0, 0)] * (h_hat.ndim - 1) + [(0, m_f - h_hat.shape[-1])]
    return np.fft.fft(np.pad(h_hat, pad), axis=-1, norm="ortho")


def segment(h: np.ndarray, cfg: SegmentationConfig | int) -> list[np.ndarray]:
    """Split the antenna axis (second to last) into consecutive blocks of K rows."""
    k = cfg if isinstance(cfg, int) else cfg.k
    n_a = h.shape[-2]
    if k < 1 or n_a % k:
        raise ValueError(f"base number K={k} does not divide N_a={n_a}")
    return [h[..., i * k:(i + 1) * k, :] for i in range(n_a // k)]


def concatenate(parts: list[np.ndarray]) -> np.ndarray:
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ValueError(f"segments disagree in shape: {sorted(shapes)}")
    return np.concatenate(parts, axis=-2)


def split_complex(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return h.real.copy(), h.imag.copy()


def combine_complex(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    if re.shape != im.shape:
        raise ValueError(f"real part {re.shape} and imaginary part {im.shape} differ")
    out = np.empty(re.shape, dtype=np.result_type(re.dtype, im.dtype, np.complex64))
    out.real = re
    out.imag = im
    return out


def fit_norm(train: np.ndarray) -> NormScale:
    """Largest absolute real or imaginary entry over the training set."""
    if train.size == 0:
        raise ValueError("empty training set")
    max_abs = float(max(np.abs(train.real).max(), np.abs(train.imag).max()))
    if max_abs == 0.0:
        raise ValueError("training set is identically zero")
    return NormScale(max_abs)


def apply_norm(x: np.ndarray, scale: NormScale) -> np.ndarray:
    return x / scale.max_abs


def undo_norm(x: np.ndarray, scale: NormScale) -> np.ndarray:
    return x * scale.max_abs


def to_segments(h: np.ndarray, k: int, dtype=np.float32) -> np.ndarray:
    """Complex ``(N, N_a, N_t)`` -> real model inputs ``(N * 2 * N_a/K, K, N_t)``.

    Ordering is (sample, real/imag, segment), which :func:`from_segments` inverts.
    """
    n, n_a, n_t = h.shape
    if n_a % k:
        raise ValueError(f"base number K={k} does not divide N_a={n_a}")
    parts = np.stack([h.real, h.imag], axis=1)  # (N, 2, N_a, N_t)
    return parts.reshape(n * 2 * (n_a // k), k, n_t).astype(dtype)


def from_segments(segs: np.ndarray, n_a: int) -> np.ndarray:
    """Inverse of :func:`to_segments`: stitch segments back and recombine re/im."""
    total, k, n_t = segs.shape
    per_sample = 2 * (n_a // k)
    if n_a % k or total % per_sample:
        raise ValueError("segment count does not match the antenna layout")
    parts = segs.reshape(total // per_sample, 2, n_a, n_t)
    return combine_complex(parts[:, 0], parts[:, 1])


def delay_energy_fraction(h_pilot: np.ndarray, n_t: int) -> np.ndarray:
    """Share of each sample's pilot-domain energy that falls in the first ``n_t`` taps."""
    taps = np.abs(np.fft.ifft(h_pilot, axis=-1, norm="ortho")) ** 2
    kept = taps[..., :n_t].sum(axis=(-2, -1))
    return kept / taps.sum(axis=(-2, -1))
