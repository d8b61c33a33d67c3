"""End-to-end steps shared by the command line and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel_gen as cg
from . import preprocess as pp
from .config import ConfigError, RunConfig
from .scenet import SCEnet
from .training import Checkpoint, TrainReport, derive_seed, train


def generate(cfg: RunConfig, count: int | None = None,
             seed_label: str = "data") -> cg.ChannelDataset:
    """Full-band dataset for ``cfg``; split sizes follow ``cfg.split``."""
    count = cfg.count if count is None else count
    return cg.generate_dataset(cfg.geometry, cfg.scenario_params, count,
                               derive_seed(cfg.seed, seed_label), cfg.split,
                               n_f=cfg.n_f, delta_f=cfg.delta_f, dr_f=cfg.dr_f, n_t=cfg.n_t)


def pilot_channels(samples: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Full-band ``(N, N_a, N_f)`` -> pilot CSI ``(N, N_a, M_f)`` in double precision."""
    return pp.downsample_pilots(samples, cfg.pilots).astype(np.complex128)


def delay_channels(ds: cg.ChannelDataset, cfg: RunConfig, n_a: int | None = None) -> np.ndarray:
    """Truncated delay-domain CSI ``(N, n_a, N_t)`` from either kind of dataset file."""
    n_a = cfg.n_a if n_a is None else n_a
    if n_a > ds.n_antennas:
        raise ConfigError(f"dataset has {ds.n_antennas} antennas, config asks for {n_a}")
    h = ds.samples[:, :n_a]
    if ds.domain == "delay":
        if ds.width != cfg.n_t:
            raise ConfigError(f"delay-domain dataset keeps {ds.width} taps, config has "
                              f"n_t={cfg.n_t}")
        return h.astype(np.complex128)
    if ds.width != cfg.n_f:
        raise ConfigError(f"dataset has {ds.width} subcarriers, config has n_f={cfg.n_f}")
    return pp.to_delay_truncated(pilot_channels(h, cfg), cfg.n_t)


def to_delay_dataset(ds: cg.ChannelDataset, cfg: RunConfig) -> cg.ChannelDataset:
    h = delay_channels(ds, cfg, ds.n_antennas)
    return cg.ChannelDataset(h.astype(np.complex64), ds.n_train, ds.n_val, ds.n_test, "delay")


@dataclass
class TrainedRun:
    model: SCEnet
    report: TrainReport
    scale: pp.NormScale


def run_training(cfg: RunConfig, ds: cg.ChannelDataset, out_dir=None,
                 resume: Checkpoint | None = None) -> TrainedRun:
    """Normalize, train and (optionally) checkpoint one configuration."""
    cfg.validate()
    if ds.n_train == 0 or ds.n_val == 0:
        raise ConfigError("dataset needs non-empty train and validation splits")
    h = delay_channels(ds, cfg)
    a, b = ds.n_train, ds.n_train + ds.n_val
    scale = pp.fit_norm(h[:a])
    if resume is not None:
        scale = pp.NormScale(resume.meta["norm_scale"])
    model = SCEnet(cfg.model, seed=derive_seed(cfg.seed, "init"))
    meta = {"config_hash": cfg.config_hash(), "config": cfg.canonical(),
            "norm_scale": scale.max_abs}
    report = train(pp.apply_norm(h[:a], scale), pp.apply_norm(h[a:b], scale), model,
                   cfg.train, out_dir=out_dir, resume=resume, meta=meta)
    return TrainedRun(model, report, scale)
