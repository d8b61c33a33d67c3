"""Geometric multipath channel generator and the binary dataset format.

Channels are drawn as a sum of plane waves impinging on a uniform planar
array.  Path delays sit on the pilot delay grid, so every path lands in a
single delay tap after the pilot-domain transform in :mod:`dcacsi.preprocess`
and the energy of a channel is fully contained in the first ``max_delay``
taps.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

DATASET_MAGIC = b"CSIDCA01"
DATASET_VERSION = 1
# magic, version, n_a, width, count, precision, domain, n_train, n_val, n_test
_HEADER = struct.Struct("<8sIIIQBBQQQ")
_PRECISIONS = {1: np.dtype("<c8"), 2: np.dtype("<c16")}
DOMAINS = ("frequency", "delay")


class DatasetFormatError(ValueError):
    """The file is not a readable channel dataset."""


@dataclass(frozen=True)
class ArrayGeometry:
    """UPA with ``n_vertical`` rows of ``n_horizontal`` elements.

    Antennas are flattened row-major over (vertical, horizontal), so the first
    ``n_horizontal`` antennas form the first row of the array.
    """

    n_horizontal: int = 8
    n_vertical: int = 4
    spacing: float = 0.5  # in wavelengths

    def __post_init__(self):
        if self.n_horizontal < 1 or self.n_vertical < 1:
            raise ValueError("array needs at least one element per axis")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def n_antennas(self) -> int:
        return self.n_horizontal * self.n_vertical


@dataclass(frozen=True)
class ScenarioParams:
    num_paths: int
    max_delay: float  # seconds
    delay_decay: float  # 1/seconds, exponential power-delay profile
    azimuth_spread: float  # radians, per-path spread around the cluster centre
    elevation_spread: float
    carrier_offset_seed: int = 0  # salt mixed into every per-sample seed
    line_of_sight: bool = True
    rician_k: float = 1.0  # LOS-to-scattered power ratio when line_of_sight
    azimuth_range: float = math.pi / 3  # cluster centre drawn in +-range
    elevation_range: float = math.pi / 6

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("need at least one path")
        if self.max_delay < 0 or self.delay_decay < 0:
            raise ValueError("delays and decay must be non-negative")


def delay_resolution(n_f: int, delta_f: float, dr_f: int) -> float:
    """Width in seconds of one delay tap of the pilot-domain transform."""
    m_f = math.ceil(n_f / dr_f)
    return 1.0 / (m_f * dr_f * delta_f)


def check_energy_cap(scen: ScenarioParams, n_f: int, delta_f: float, dr_f: int, n_t: int) -> None:
    """Reject scenarios whose delay support would spill past the first ``n_t`` taps."""
    bin_width = delay_resolution(n_f, delta_f, dr_f)
    last_tap = math.floor(scen.max_delay / bin_width + 1e-9)
    if last_tap >= n_t:
        raise ValueError(
            f"max_delay {scen.max_delay:.3e}s reaches tap {last_tap}, "
            f"beyond the {n_t} retained taps")


def scenario_preset(name: str, n_f: int = 1024, delta_f: float = 15e3, dr_f: int = 12) -> ScenarioParams:
    """``indoor`` (short delay spread, few paths) or ``outdoor`` (long spread, many paths)."""
    tap = delay_resolution(n_f, delta_f, dr_f)
    if name == "indoor":
        return ScenarioParams(num_paths=6, max_delay=8 * tap, delay_decay=1.0 / (3 * tap),
                              azimuth_spread=0.25, elevation_spread=0.08,
                              carrier_offset_seed=1, line_of_sight=True, rician_k=2.0)
    if name == "outdoor":
        return ScenarioParams(num_paths=20, max_delay=24 * tap, delay_decay=1.0 / (8 * tap),
                              azimuth_spread=0.4, elevation_spread=0.12,
                              carrier_offset_seed=2, line_of_sight=True, rician_k=0.5)
    raise ValueError(f"unknown scenario {name!r}; expected 'indoor' or 'outdoor'")


def steering_vector(geom: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-modulus UPA response, flattened row-major over (vertical, horizontal)."""
    m = np.arange(geom.n_vertical)[:, None]
    n = np.arange(geom.n_horizontal)[None, :]
    phase = 2 * np.pi * geom.spacing * (
        m * np.sin(elevation) + n * np.cos(elevation) * np.sin(azimuth))
    return np.exp(1j * phase).reshape(-1)


def channel_from_paths(geom: ArrayGeometry, gains, delays, azimuths, elevations,
                       n_f: int, delta_f: float) -> np.ndarray:
    """Sum of plane waves: ``H[a, f] = sum_p g_p a_p[a] exp(-j 2 pi f delta_f tau_p)``."""
    gains = np.atleast_1d(np.asarray(gains, dtype=np.complex128))
    delays = np.atleast_1d(np.asarray(delays, dtype=np.float64))
    steer = np.stack([steering_vector(geom, az, el)
                      for az, el in zip(np.atleast_1d(azimuths), np.atleast_1d(elevations))], axis=1)
    freq = np.arange(n_f) * delta_f
    phasors = np.exp(-2j * np.pi * delays[:, None] * freq[None, :])
    return (steer * gains) @ phasors


def _sample_rng(seed: int, index: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, salt, index]))


def generate_channel(geom: ArrayGeometry, scen: ScenarioParams, n_f: int = 1024,
                     delta_f: float = 15e3, seed=0, dr_f: int = 12, n_t: int = 32,
                     normalize: bool = True) -> np.ndarray:
    """Draw one complex ``N_a x N_f`` downlink channel.

    ``seed`` may be an int or a ``numpy.random.Generator``.  With ``normalize``
    the realization is scaled to ``||H||_F^2 = N_a * N_f``.
    """
    check_energy_cap(scen, n_f, delta_f, dr_f, n_t)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tap = delay_resolution(n_f, delta_f, dr_f)
    last_tap = math.floor(scen.max_delay / tap + 1e-9)
    n_paths = scen.num_paths

    delays = rng.integers(0, last_tap + 1, size=n_paths) * tap
    power = np.exp(-scen.delay_decay * delays)
    if scen.line_of_sight:
        delays[0] = 0.0
        if n_paths == 1:
            power[0] = 1.0
        else:
            k_factor = scen.rician_k
            power[1:] /= power[1:].sum() * (1.0 + k_factor)
            power[0] = k_factor / (1.0 + k_factor)
    else:
        power /= power.sum()
    gains = np.sqrt(power / 2) * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
    if scen.line_of_sight:
        gains[0] = np.sqrt(power[0]) * np.exp(2j * np.pi * rng.random())

    az0 = rng.uniform(-scen.azimuth_range, scen.azimuth_range)
    el0 = rng.uniform(-scen.elevation_range, scen.elevation_range)
    azimuths = az0 + scen.azimuth_spread * rng.standard_normal(n_paths)
    elevations = el0 + scen.elevation_spread * rng.standard_normal(n_paths)
    if scen.line_of_sight:
        azimuths[0], elevations[0] = az0, el0

    h = channel_from_paths(geom, gains, delays, azimuths, elevations, n_f, delta_f)
    if normalize:
        energy = np.vdot(h, h).real
        if energy > 0:
            h *= np.sqrt(h.size / energy)
    return h


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def split_sizes(count: int, ratios=(4, 2, 1)) -> tuple[int, int, int]:
    """Train/val/test sizes in the given ratio; the test split takes the remainder."""
    total = sum(ratios)
    n_train = round(count * ratios[0] / total)
    n_val = round(count * ratios[1] / total)
    return n_train, n_val, count - n_train - n_val


@dataclass
class ChannelDataset:
    """Stack of complex matrices ``(count, N_a, width)`` plus split bookkeeping."""

    samples: np.ndarray
    n_train: int = 0
    n_val: int = 0
    n_test: int = 0
    domain: str = "frequency"

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise ValueError(f"samples must be (count, N_a, width), got {self.samples.shape}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.n_train + self.n_val + self.n_test not in (0, self.count):
            raise ValueError("split sizes do not add up to the sample count")

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    def split(self, name: str) -> np.ndarray:
        """One of ``train``, ``val``, ``test`` or ``all``."""
        a, b = self.n_train, self.n_train + self.n_val
        if name == "all":
            return self.samples
        if self.n_train + self.n_val + self.n_test == 0:
            raise ValueError("dataset carries no split sizes")
        return {"train": self.samples[:a], "val": self.samples[a:b],
                "test": self.samples[b:]}[name]

    def with_antennas(self, n_a: int) -> "ChannelDataset":
        """Keep the first ``n_a`` antennas (the first rows of the array)."""
        if not 0 < n_a <= self.n_antennas:
            raise ValueError(f"cannot keep {n_a} of {self.n_antennas} antennas")
        return replace(self, samples=self.samples[:, :n_a])


def iter_channels(geom: ArrayGeometry, scen: ScenarioParams, count: int, seed: int,
                  start: int = 0, **kwargs) -> Iterator[np.ndarray]:
    """Yield realizations ``start .. start+count-1`` of the stream named by ``seed``."""
    for index in range(start, start + count):
        rng = _sample_rng(seed, index, scen.carrier_offset_seed)
        yield generate_channel(geom, scen, seed=rng, **kwargs)


def generate_dataset(geom: ArrayGeometry, scen: ScenarioParams, count: int, seed: int,
                     ratios=(4, 2, 1), dtype=np.complex64, **kwargs) -> ChannelDataset:
    """``count`` independent channels; sample ``i`` depends only on (seed, scenario, i)."""
    if count <= 0:
        raise ValueError("count must be positive")
    n_f = kwargs.get("n_f", 1024)
    out = np.empty((count, geom.n_antennas, n_f), dtype=dtype)
    for i, h in enumerate(iter_channels(geom, scen, count, seed, **kwargs)):
        out[i] = h
    n_train, n_val, n_test = split_sizes(count, ratios)
    return ChannelDataset(out, n_train, n_val, n_test)


def save_dataset(ds: ChannelDataset, path) -> None:
    if ds.samples.dtype == np.complex64:
        tag = 1
    elif ds.samples.dtype == np.complex128:
        tag = 2
    else:
        raise ValueError(f"unsupported sample dtype {ds.samples.dtype}")
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.n_antennas, ds.width, ds.count,
                          tag, DOMAINS.index(ds.domain), ds.n_train, ds.n_val, ds.n_test)
    payload = np.ascontiguousarray(ds.samples, dtype=_PRECISIONS[tag])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_dataset(path) -> ChannelDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file shorter than the header")
    magic, version, n_a, width, count, tag, domain, n_train, n_val, n_test = \
        _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if tag not in _PRECISIONS or domain >= len(DOMAINS):
        raise DatasetFormatError(f"{path}: bad precision/domain tag {tag}/{domain}")
    dtype = _PRECISIONS[tag]
    expected = count * n_a * width * dtype.itemsize
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise DatasetFormatError(
            f"{path}: payload has {len(body)} bytes, header promises {expected}")
    if n_train + n_val + n_test not in (0, count):
        raise DatasetFormatError(f"{path}: split sizes do not match count")
    samples = np.frombuffer(body, dtype=dtype).reshape(count, n_a, width)
    return ChannelDataset(samples.astype(dtype.newbyteorder("="), copy=True),
                          n_train, n_val, n_test, DOMAINS[domain])
