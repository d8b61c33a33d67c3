"""Weighted multi-rate training loop and checkpoint files."""
from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core as nn
from . import preprocess as pp
from .evaluate import nmse, to_db
from .scenet import SCEnet, SCEnetConfig, backward, forward

log = logging.getLogger(__name__)

DEFAULT_RATE_WEIGHTS = (30 / 39, 6 / 39, 2 / 39, 1 / 39)

CKPT_MAGIC = b"SCEP0001"
CKPT_VERSION = 1
# magic, arch sha256, version, epoch, adam step, seed, n_arrays, config bytes, meta bytes
_CKPT_HEADER = struct.Struct("<8s32sIQQQIII")


class CheckpointError(ValueError):
    """Unreadable checkpoint or one that belongs to another architecture."""


class TrainingDiverged(nn.NonFiniteError):
    def __init__(self, epoch: int, msg: str = ""):
        super().__init__(f"training diverged in epoch {epoch}{': ' + msg if msg else ''}")
        self.epoch = epoch


def derive_seed(seed: int, label: str) -> int:
    """Independent 63-bit sub-seed for a named purpose ("data", "init", "shuffle", ...)."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 200
    lr: float = 1e-3
    lr_after: float = 5e-4
    lr_switch_epoch: int = 300
    rate_weights: tuple = DEFAULT_RATE_WEIGHTS
    squared: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if abs(sum(self.rate_weights) - 1.0) > 1e-9 or min(self.rate_weights) < 0:
            raise ValueError(f"rate weights must be non-negative and sum to 1: {self.rate_weights}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.lr if epoch < self.lr_switch_epoch else self.lr_after


def weighted_loss(targets, outputs, weights, squared: bool = True):
    """Batch mean of ``sum_s W_s ||T - Y_s||_F^2`` and its gradient w.r.t. each ``Y_s``.

    With ``squared=False`` the plain Frobenius norm is used instead.
    """
    if len(outputs) != len(weights):
        raise ValueError(f"{len(outputs)} outputs but {len(weights)} rate weights")
    b = targets.shape[0]
    loss = 0.0
    grads = []
    for w, y in zip(weights, outputs):
        if y.shape != targets.shape:
            raise ValueError(f"output {y.shape} does not match target {targets.shape}")
        r = y - targets
        sq = (r * r).reshape(b, -1).sum(axis=1)
        if squared:
            loss += w * float(sq.sum()) / b
            grads.append((2.0 * w / b) * r)
        else:
            norm = np.sqrt(sq)
            loss += w * float(norm.sum()) / b
            safe = np.where(norm > 0, norm, 1.0).reshape((b,) + (1,) * (r.ndim - 1))
            grads.append((w / b) * r / safe)
    return loss, grads


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_loss, nmse_db per rate)
    wall_time: float = 0.0
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    def to_csv(self, s: int = 4) -> str:
        cols = ["epoch", "loss"] + [f"nmse_cr{2 ** i}" for i in range(1, s + 1)]
        lines = [",".join(cols)]
        for epoch, loss, _, db in self.rows:
            lines.append(",".join([str(epoch), f"{loss:.8e}"] + [f"{v:.4f}" for v in db]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path, s: int = 4) -> None:
        Path(path).write_text(self.to_csv(s))


def validate(model: SCEnet, val_segments: np.ndarray, n_a: int, weights, squared=True):
    """Weighted loss and per-rate delay-domain NMSE (dB) on validation segments."""
    out = model.forward_all_rates(val_segments)
    loss, _ = weighted_loss(val_segments, out.reconstructions, weights, squared)
    truth = pp.from_segments(val_segments, n_a)
    return loss, [to_db(nmse(truth, pp.from_segments(r, n_a))) for r in out.reconstructions]


def train(train_channels: np.ndarray, val_channels: np.ndarray, model: SCEnet,
          cfg: TrainConfig, out_dir=None, resume: "Checkpoint | None" = None,
          meta: dict | None = None) -> TrainReport:
    """Optimize ``model`` in place.

    Args:
        train_channels: normalized truncated CSI, complex (N, N_a, N_t).
        val_channels: same layout, used for best-checkpoint selection.
        model: the network; its parameters are updated in place.
        cfg: optimization settings.
        out_dir: if given, ``best.ckpt`` and ``last.ckpt`` are written there.
        resume: continue from this checkpoint (params, Adam state, epoch).
        meta: extra key/values stored in every checkpoint.

    Returns:
        The report for the epochs run by this call.
    """
    n_a = train_channels.shape[1]
    k = model.cfg.k
    if len(cfg.rate_weights) != model.cfg.s:
        raise ValueError(f"{len(cfg.rate_weights)} rate weights for S={model.cfg.s}")
    x_train = pp.to_segments(train_channels, k, model.dtype)
    x_val = pp.to_segments(val_channels, k, model.dtype)
    if cfg.batch_size > len(x_train):
        raise ValueError(f"batch size {cfg.batch_size} exceeds {len(x_train)} training segments")

    opt = nn.Adam(lr=cfg.lr)
    start_epoch = 0
    report = TrainReport()
    if resume is not None:
        resume.restore(model, opt)
        start_epoch = resume.epoch
        report.best_val_loss = resume.meta.get("best_val_loss", float("inf"))
        report.best_epoch = resume.meta.get("best_epoch", 0)
    meta = dict(meta or {})
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    shuffle_seed = derive_seed(cfg.seed, "shuffle")
    t0 = time.perf_counter()
    for epoch in range(start_epoch, cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(x_train))
        total = 0.0
        try:
            for start in range(0, len(order), cfg.batch_size):
                xb = x_train[order[start:start + cfg.batch_size]]
                out, cache = forward(model.params, model.cfg, xb)
                loss, drecons = weighted_loss(xb, out.reconstructions, cfg.rate_weights,
                                              cfg.squared)
                if not np.isfinite(loss):
                    raise nn.NonFiniteError("non-finite loss")
                opt.step(model.params, backward(model.params, model.cfg, drecons, cache))
                total += loss * len(xb)
            val_loss, nmse_db = validate(model, x_val, n_a, cfg.rate_weights, cfg.squared)
        except nn.NonFiniteError as exc:
            raise TrainingDiverged(epoch + 1, str(exc)) from exc
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch + 1, "non-finite validation loss")

        train_loss = total / len(x_train)
        report.rows.append((epoch + 1, train_loss, val_loss, nmse_db))
        log.info("epoch %d lr %.1e loss %.4e val %.4e nmse %s", epoch + 1, opt.lr,
                 train_loss, val_loss, " ".join(f"{v:.2f}" for v in nmse_db))
        improved = val_loss < report.best_val_loss
        if improved:
            report.best_val_loss = val_loss
            report.best_epoch = epoch + 1
        if out_dir is not None:
            meta.update(best_val_loss=report.best_val_loss, best_epoch=report.best_epoch)
            ckpt = Checkpoint.capture(model, opt, epoch + 1, cfg.seed, meta)
            if improved:
                ckpt.save(out_dir / "best.ckpt")
            ckpt.save(out_dir / "last.ckpt")
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: SCEnetConfig
    params: dict
    adam_m: dict
    adam_v: dict
    adam_t: int
    epoch: int
    seed: int
    meta: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model: SCEnet, opt: nn.Adam, epoch: int, seed: int, meta=None):
        m, v = opt.state_arrays(model.params)
        names = list(model.params)
        return cls(model.cfg, {n: a.copy() for n, a in model.params.items()},
                   dict(zip(names, (a.copy() for a in m))), dict(zip(names, (a.copy() for a in v))),
                   opt.t, epoch, seed, dict(meta or {}))

    def restore(self, model: SCEnet, opt: nn.Adam | None = None) -> None:
        if model.cfg.arch_hash() != self.config.arch_hash():
            raise CheckpointError("checkpoint architecture does not match the model")
        for name, arr in self.params.items():
            model.params[name][...] = arr
        if opt is not None:
            opt.m = {n: a.astype(model.params[n].dtype) for n, a in self.adam_m.items()}
            opt.v = {n: a.astype(model.params[n].dtype) for n, a in self.adam_v.items()}
            opt.t = self.adam_t

    def model(self) -> SCEnet:
        return SCEnet(self.config, {n: a.copy() for n, a in self.params.items()})

    def to_bytes(self) -> bytes:
        config_text = self.config.canonical().encode()
        meta_text = json.dumps(self.meta, sort_keys=True).encode()
        parts = [_CKPT_HEADER.pack(CKPT_MAGIC, self.config.arch_hash(), CKPT_VERSION,
                                   self.epoch, self.adam_t, self.seed, len(self.params),
                                   len(config_text), len(meta_text)),
                 config_text, meta_text]
        for name, arr in self.params.items():
            raw = name.encode()
            parts.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for store in (self.params, self.adam_m, self.adam_v):
            for name in self.params:
                parts.append(np.ascontiguousarray(store[name], dtype="<f4").tobytes())
        return b"".join(parts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes, expect: SCEnetConfig | None = None) -> "Checkpoint":
        try:
            (magic, arch, version, epoch, adam_t, seed, n_arrays, n_cfg, n_meta) = \
                _CKPT_HEADER.unpack_from(raw)
        except struct.error as exc:
            raise CheckpointError("checkpoint shorter than its header") from exc
        if magic != CKPT_MAGIC or version != CKPT_VERSION:
            raise CheckpointError(f"not a checkpoint (magic {magic!r}, version {version})")
        off = _CKPT_HEADER.size
        config_text = raw[off:off + n_cfg].decode()
        off += n_cfg
        meta = json.loads(raw[off:off + n_meta].decode() or "{}")
        off += n_meta
        config = SCEnetConfig.from_canonical(config_text)
        if config.arch_hash() != arch:
            raise CheckpointError("embedded architecture does not match its hash")
        if expect is not None and expect.arch_hash() != arch:
            raise CheckpointError("checkpoint was written for a different architecture")
        try:
            layout = []
            for _ in range(n_arrays):
                name_len, ndim = struct.unpack_from("<HB", raw, off)
                off += 3
                name = raw[off:off + name_len].decode()
                off += name_len
                shape = struct.unpack_from(f"<{ndim}I", raw, off)
                off += 4 * ndim
                layout.append((name, shape))
            stores = []
            for _ in range(3):
                store = {}
                for name, shape in layout:
                    n = int(np.prod(shape))
                    if off + 4 * n > len(raw):
                        raise CheckpointError("checkpoint is truncated")
                    store[name] = np.frombuffer(raw, "<f4", n, off).reshape(shape).astype(np.float32)
                    off += 4 * n
                stores.append(store)
        except struct.error as exc:
            raise CheckpointError("checkpoint is truncated") from exc
        if off != len(raw):
            raise CheckpointError("trailing bytes after checkpoint payload")
        return cls(config, stores[0], stores[1], stores[2], adam_t, epoch, seed, meta)

    @classmethod
    def load(cls, path, expect: SCEnetConfig | None = None) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes(), expect)
