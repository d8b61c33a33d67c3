"""Reconstruction NMSE, beam/delay correlation analysis and the array-size sweep."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import preprocess as pp
from .channel_gen import ArrayGeometry
from .scenet import SCEnet

DB_FLOOR = -100.0


def to_db(linear, floor: float = DB_FLOOR):
    """``10 log10`` with exact zeros (and anything below ``floor``) clamped to ``floor``."""
    lin = np.asarray(linear, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = np.maximum(10.0 * np.log10(lin), floor)
    return float(out) if out.ndim == 0 else out


def nmse_per_sample(truth: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """``||estimate - truth||_F^2 / ||truth||_F^2`` for every sample along axis 0."""
    if truth.shape != estimate.shape:
        raise ValueError(f"truth {truth.shape} and estimate {estimate.shape} differ")
    axes = tuple(range(1, truth.ndim))
    ref = (np.abs(truth) ** 2).sum(axis=axes)
    if np.any(ref == 0):
        raise ValueError("NMSE undefined for a zero-norm truth sample")
    return (np.abs(estimate - truth) ** 2).sum(axis=axes) / ref


def nmse(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Mean over samples of the per-sample normalized squared error (linear)."""
    return float(nmse_per_sample(truth, estimate).mean())


@dataclass
class NmseResult:
    linear: list  # one entry per rate, CR 2 first
    count: int
    scenario: str = ""
    k: int = 0
    n_a: int = 0

    def __post_init__(self):
        if any(v < 0 for v in self.linear):
            raise ValueError("linear NMSE cannot be negative")

    @property
    def db(self) -> list[float]:
        return [to_db(v) for v in self.linear]

    @property
    def compression_ratios(self) -> list[int]:
        return [2 ** i for i in range(1, len(self.linear) + 1)]


def reconstruct(model: SCEnet, h_norm: np.ndarray) -> list[np.ndarray]:
    """Normalized truncated CSI ``(N, N_a, N_t)`` -> complex reconstruction per rate."""
    n_a = h_norm.shape[1]
    segs = pp.to_segments(h_norm, model.cfg.k, model.dtype)
    out = model.forward_all_rates(segs)
    return [pp.from_segments(r, n_a) for r in out.reconstructions]


def evaluate_model(model: SCEnet, h_pilot: np.ndarray, scale: pp.NormScale,
                   scenario: str = "") -> NmseResult:
    """Full feedback chain on pilot CSI ``(N, N_a, M_f)``, scored in the pilot domain.

    Truncate, normalize, segment, encode/decode every rate, stitch, undo the
    normalization, zero-pad back to ``M_f`` and compare with the input.
    """
    n, n_a, m_f = h_pilot.shape
    if n_a % model.cfg.k:
        raise ValueError(f"base number K={model.cfg.k} does not divide N_a={n_a}")
    h_t = pp.apply_norm(pp.to_delay_truncated(h_pilot, model.cfg.n_t), scale)
    linear = []
    for rec in reconstruct(model, h_t):
        est = pp.delay_to_pilot_freq(pp.undo_norm(rec.astype(np.complex128), scale), m_f)
        linear.append(nmse(h_pilot, est))
    return NmseResult(linear, n, scenario, model.cfg.k, n_a)


def scalability_eval(model: SCEnet, h_pilot: np.ndarray, scale: pp.NormScale,
                     antenna_counts=(8, 16, 32), scenario: str = "") -> dict[int, NmseResult]:
    """Apply one model segment-wise to the first ``n_a`` antennas for every ``n_a``."""
    for n_a in antenna_counts:
        if n_a % model.cfg.k:
            raise ValueError(f"base number K={model.cfg.k} does not divide N_a={n_a}")
        if n_a > h_pilot.shape[1]:
            raise ValueError(f"dataset has only {h_pilot.shape[1]} antennas, asked for {n_a}")
    return {n_a: evaluate_model(model, h_pilot[:, :n_a], scale, scenario)
            for n_a in antenna_counts}


# ---------------------------------------------------------------------------
# correlation analysis
# ---------------------------------------------------------------------------

def beam_basis(geom: ArrayGeometry) -> np.ndarray:
    """Orthonormal 2-D DFT beams over the array, one per column.

    Antennas are ordered row-major (vertical, horizontal), matching
    :func:`channel_gen.steering_vector`, so the basis is ``kron(F_V, F_H)``.
    """
    def unitary_dft(m):
        j = np.arange(m)
        return np.exp(-2j * np.pi * np.outer(j, j) / m) / np.sqrt(m)

    return np.kron(unitary_dft(geom.n_vertical), unitary_dft(geom.n_horizontal))


def beam_cross_correlation(h: np.ndarray, geom: ArrayGeometry | None = None) -> np.ndarray:
    """Normalized beam-domain correlation magnitudes of a dataset ``(N, N_a, T)``.

    Entry (m, n) is ``|E[b_m conj(b_n)]| / sqrt(E|b_m|^2 E|b_n|^2)`` with the
    expectation over samples and delay taps.
    """
    if h.ndim != 3 or h.shape[0] == 0:
        raise ValueError("expected a non-empty (N, N_a, T) dataset")
    n_a = h.shape[1]
    if geom is None:
        geom = ArrayGeometry(n_horizontal=n_a, n_vertical=1)
    if geom.n_antennas != n_a:
        raise ValueError(f"geometry has {geom.n_antennas} antennas, data has {n_a}")
    basis = beam_basis(geom)
    b = np.einsum("am,nat->mnt", basis.conj(), h.astype(np.complex128)).reshape(n_a, -1)
    cov = b @ b.conj().T / b.shape[1]
    power = cov.diagonal().real
    if np.any(power <= 0):
        raise ValueError("a beam carries no energy; correlation undefined")
    corr = np.abs(cov) / np.sqrt(np.outer(power, power))
    np.fill_diagonal(corr, 1.0)
    return corr


def delay_tap_correlation(h: np.ndarray, max_lag: int | None = None) -> np.ndarray:
    """Per-antenna autocorrelation of delay magnitude profiles versus tap lag.

    Each ``|h[n, a, :]|`` profile has its mean removed and is normalized to
    unit lag-0 correlation; curves are averaged over samples.  Constant
    profiles carry no shape and are skipped.

    Returns:
        Array ``(N_a, max_lag + 1)``; column 0 is 1.
    """
    n, n_a, taps = h.shape
    if n == 0:
        raise ValueError("empty dataset")
    if max_lag is None:
        max_lag = taps - 1
    if not 0 <= max_lag < taps:
        raise ValueError(f"max_lag must lie in [0, {taps})")
    p = np.abs(h).astype(np.float64)
    p -= p.mean(axis=-1, keepdims=True)
    energy = (p * p).sum(axis=-1)
    valid = energy > 1e-12 * max(energy.max(), 1e-300)
    curves = np.empty((n_a, max_lag + 1))
    for lag in range(max_lag + 1):
        r = (p[..., :taps - lag] * p[..., lag:]).sum(axis=-1)
        ratio = np.where(valid, r / np.where(valid, energy, 1.0), 0.0)
        curves[:, lag] = ratio.sum(axis=0) / np.maximum(valid.sum(axis=0), 1)
    return curves


def curve_similarity(curves: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows."""
    norms = np.linalg.norm(curves, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero curve has no direction")
    unit = curves / norms[:, None]
    return unit @ unit.T


@dataclass
class CorrelationReport:
    beam_corr: np.ndarray
    delay_curves: np.ndarray
    similarity: np.ndarray = field(init=False)

    def __post_init__(self):
        self.similarity = curve_similarity(self.delay_curves)

    @property
    def mean_off_diagonal(self) -> float:
        n = self.beam_corr.shape[0]
        return float((self.beam_corr.sum() - np.trace(self.beam_corr)) / (n * (n - 1)))

    @property
    def min_similarity(self) -> float:
        return float(self.similarity.min())


def correlation_report(h_delay: np.ndarray, geom: ArrayGeometry | None = None,
                       max_lag: int | None = None) -> CorrelationReport:
    return CorrelationReport(beam_cross_correlation(h_delay, geom),
                             delay_tap_correlation(h_delay, max_lag))
