"""Successive convolutional encoder with multi-rate decoders.

The encoder applies one FCDS block (three 1xk convolutions, the last with a
width stride of 2) ``S`` times with the same weights; the output after the
i-th application, flattened, is the rate-i codeword with compression ratio
``2**i``.  Each rate has its own decoder: FC -> 1x3 conv -> RefineBlocks ->
FC.  The optional dense variant adds a length-preserving FC after every
FCDS application.

Parameters live in a flat ``dict[str, ndarray]``; every forward/backward
routine takes that dict explicitly so the same code runs on float32 training
weights and on float64 copies for gradient checking.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nn
from .nn_core import LayerSpec

REFINE_CHANNELS = (16, 8)
_INFER_CHUNK = 2048


@dataclass(frozen=True)
class SCEnetConfig:
    k: int = 32
    n_t: int = 32
    s: int = 4
    dense: bool = False
    refine_blocks: int = 5
    slope: float = nn.DEFAULT_SLOPE
    kernels: tuple = (7, 5, 3)
    hidden: int = 2

    def __post_init__(self):
        if self.k < 1 or self.s < 1:
            raise ValueError("K and S must be positive")
        if self.n_t % 2 ** self.s:
            raise ValueError(f"N_t={self.n_t} is not divisible by 2^S={2 ** self.s}")
        if self.refine_blocks < 1:
            raise ValueError("need at least one RefineBlock")
        if len(self.kernels) != 3 or any(k % 2 == 0 for k in self.kernels):
            raise ValueError("FCDS needs three odd kernel widths")
        if not 0 < self.slope < 1:
            raise ValueError("activation slope must lie in (0, 1)")

    @property
    def segment_size(self) -> int:
        return self.k * self.n_t

    def codeword_length(self, rate: int) -> int:
        return self.segment_size // 2 ** rate

    def canonical(self) -> str:
        return (f"S = {self.s}\nK = {self.k}\nN_t = {self.n_t}\ndense = {int(self.dense)}\n"
                f"refine_blocks = {self.refine_blocks}\nslope = {self.slope!r}\n"
                f"kernels = {','.join(map(str, self.kernels))}\nhidden = {self.hidden}\n")

    def arch_hash(self) -> bytes:
        return hashlib.sha256(self.canonical().encode()).digest()

    @classmethod
    def from_canonical(cls, text: str) -> "SCEnetConfig":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines())
        kv = {k.strip(): v.strip() for k, v in kv.items()}
        return cls(k=int(kv["K"]), n_t=int(kv["N_t"]), s=int(kv["S"]),
                   dense=bool(int(kv["dense"])), refine_blocks=int(kv["refine_blocks"]),
                   slope=float(kv["slope"]),
                   kernels=tuple(int(x) for x in kv["kernels"].split(",")),
                   hidden=int(kv["hidden"]))


@dataclass
class MultiRateOutput:
    codewords: list = field(default_factory=list)  # rate i: (B, K*N_t/2^i)
    reconstructions: list = field(default_factory=list)  # rate i: (B, K, N_t)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def param_shapes(cfg: SCEnetConfig) -> dict[str, tuple]:
    k7, k5, k3 = cfg.kernels
    hid = cfg.hidden
    shapes: dict[str, tuple] = {
        "enc.conv1.w": (hid, 1, k7), "enc.conv1.b": (hid,),
        "enc.conv2.w": (hid, hid, k5), "enc.conv2.b": (hid,),
        "enc.conv3.w": (1, hid, k3), "enc.conv3.b": (1,),
    }
    if cfg.dense:
        for i in range(1, cfg.s + 1):
            n = cfg.codeword_length(i)
            shapes[f"enc.dense{i}.w"] = (n, n)
            shapes[f"enc.dense{i}.b"] = (n,)
    full = cfg.segment_size
    c1, c2 = REFINE_CHANNELS
    for i in range(1, cfg.s + 1):
        d = f"dec{i}"
        shapes[f"{d}.fc_in.w"] = (full, cfg.codeword_length(i))
        shapes[f"{d}.fc_in.b"] = (full,)
        shapes[f"{d}.conv.w"] = (1, 1, 3)
        shapes[f"{d}.conv.b"] = (1,)
        for j in range(cfg.refine_blocks):
            r = f"{d}.rb{j}"
            shapes[f"{r}.conv1.w"] = (c1, 1, 3)
            shapes[f"{r}.conv1.b"] = (c1,)
            shapes[f"{r}.conv2.w"] = (c2, c1, 3)
            shapes[f"{r}.conv2.b"] = (c2,)
            shapes[f"{r}.conv3.w"] = (1, c2, 3)
            shapes[f"{r}.conv3.b"] = (1,)
        shapes[f"{d}.fc_out.w"] = (full, full)
        shapes[f"{d}.fc_out.b"] = (full,)
    return shapes


def init_params(cfg: SCEnetConfig, seed=0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def _accumulate(grads, name, dw, db):
    if name + ".w" in grads:
        grads[name + ".w"] += dw
        grads[name + ".b"] += db
    else:
        grads[name + ".w"] = dw.copy()
        grads[name + ".b"] = db.copy()


# ---------------------------------------------------------------------------
# blocks: each forward returns (y, cache); backward accumulates into grads
# ---------------------------------------------------------------------------

def _conv_f(p, name, x, stride=1):
    return nn.conv1xk_forward(x, p[name + ".w"], p[name + ".b"], stride)


def _conv_b(grads, name, dy, cache):
    dx, dw, db = nn.conv1xk_backward(dy, cache)
    _accumulate(grads, name, dw, db)
    return dx


def _fc_f(p, name, x):
    return nn.fc_forward(x, p[name + ".w"], p[name + ".b"])


def _fc_b(grads, name, dy, cache):
    dx, dw, db = nn.fc_backward(dy, cache)
    _accumulate(grads, name, dw, db)
    return dx


def fcds_forward(p, x, slope=nn.DEFAULT_SLOPE):
    """One FCDS application: (B, K, L, 1) -> (B, K, L/2, 1)."""
    if x.shape[2] % 2:
        raise ValueError(f"FCDS needs an even width, got {x.shape[2]}")
    h, c1 = _conv_f(p, "enc.conv1", x)
    h, a1 = nn.leaky_relu_forward(h, slope)
    h, c2 = _conv_f(p, "enc.conv2", h)
    h, a2 = nn.leaky_relu_forward(h, slope)
    h, c3 = _conv_f(p, "enc.conv3", h, stride=2)
    h, a3 = nn.leaky_relu_forward(h, slope)
    return h, (c1, a1, c2, a2, c3, a3)


def fcds_backward(grads, dy, cache):
    c1, a1, c2, a2, c3, a3 = cache
    g = nn.leaky_relu_backward(dy, a3)
    g = _conv_b(grads, "enc.conv3", g, c3)
    g = nn.leaky_relu_backward(g, a2)
    g = _conv_b(grads, "enc.conv2", g, c2)
    g = nn.leaky_relu_backward(g, a1)
    return _conv_b(grads, "enc.conv1", g, c1)


def refine_forward(p, name, x, slope=nn.DEFAULT_SLOPE):
    """Residual unit ``act(x + conv3(act(conv2(act(conv1(x))))))`` on (B, K, L, 1)."""
    h, c1 = _conv_f(p, name + ".conv1", x)
    h, a1 = nn.leaky_relu_forward(h, slope)
    h, c2 = _conv_f(p, name + ".conv2", h)
    h, a2 = nn.leaky_relu_forward(h, slope)
    h, c3 = _conv_f(p, name + ".conv3", h)
    y, a3 = nn.leaky_relu_forward(h + x, slope)
    return y, (c1, a1, c2, a2, c3, a3)


def refine_backward(grads, name, dy, cache):
    c1, a1, c2, a2, c3, a3 = cache
    g_sum = nn.leaky_relu_backward(dy, a3)
    g = _conv_b(grads, name + ".conv3", g_sum, c3)
    g = nn.leaky_relu_backward(g, a2)
    g = _conv_b(grads, name + ".conv2", g, c2)
    g = nn.leaky_relu_backward(g, a1)
    return g_sum + _conv_b(grads, name + ".conv1", g, c1)


def encode_forward(p, cfg: SCEnetConfig, x):
    """(B, K, N_t) segments -> list of S codewords plus the cache."""
    b = x.shape[0]
    h = x.reshape(b, cfg.k, cfg.n_t, 1)
    codewords, caches = [], []
    for i in range(1, cfg.s + 1):
        h, cf = fcds_forward(p, h, cfg.slope)
        cd = None
        if cfg.dense:
            z, fc_cache = _fc_f(p, f"enc.dense{i}", h.reshape(b, -1))
            z, act_cache = nn.leaky_relu_forward(z, cfg.slope)
            h = z.reshape(h.shape)
            cd = (fc_cache, act_cache)
        codewords.append(h.reshape(b, -1))
        caches.append((cf, cd, h.shape))
    return codewords, caches


def encode_backward(grads, cfg: SCEnetConfig, dcodewords, caches):
    """Backward through the taps; ``dcodewords[i]`` may be None for unused rates."""
    dh = None
    for i in range(cfg.s, 0, -1):
        cf, cd, shape = caches[i - 1]
        dq = dcodewords[i - 1]
        if dh is None:
            input_dtype = cf[0][0].dtype  # padded conv input held in the cache
            g = np.zeros(shape, input_dtype) if dq is None else dq.reshape(shape)
        else:
            g = dh if dq is None else dh + dq.reshape(shape)
        if cd is not None:
            fc_cache, act_cache = cd
            gz = nn.leaky_relu_backward(g.reshape(shape[0], -1), act_cache)
            g = _fc_b(grads, f"enc.dense{i}", gz, fc_cache).reshape(shape)
        dh = fcds_backward(grads, g, cf)
    return dh.reshape(dh.shape[0], cfg.k, cfg.n_t)


def decode_forward(p, cfg: SCEnetConfig, rate: int, q):
    b = q.shape[0]
    if q.shape[1] != cfg.codeword_length(rate):
        raise ValueError(f"rate-{rate} codeword must have length "
                         f"{cfg.codeword_length(rate)}, got {q.shape[1]}")
    d = f"dec{rate}"
    h, c_in = _fc_f(p, d + ".fc_in", q)
    h, c_conv = _conv_f(p, d + ".conv", h.reshape(b, cfg.k, cfg.n_t, 1))
    h, a_conv = nn.leaky_relu_forward(h, cfg.slope)
    rb_caches = []
    for j in range(cfg.refine_blocks):
        h, c = refine_forward(p, f"{d}.rb{j}", h, cfg.slope)
        rb_caches.append(c)
    y, c_out = _fc_f(p, d + ".fc_out", h.reshape(b, -1))
    return y.reshape(b, cfg.k, cfg.n_t), (c_in, c_conv, a_conv, rb_caches, c_out)


def decode_backward(grads, cfg: SCEnetConfig, rate: int, dy, cache):
    c_in, c_conv, a_conv, rb_caches, c_out = cache
    d = f"dec{rate}"
    b = dy.shape[0]
    g = _fc_b(grads, d + ".fc_out", dy.reshape(b, -1), c_out).reshape(b, cfg.k, cfg.n_t, 1)
    for j in reversed(range(cfg.refine_blocks)):
        g = refine_backward(grads, f"{d}.rb{j}", g, rb_caches[j])
    g = nn.leaky_relu_backward(g, a_conv)
    g = _conv_b(grads, d + ".conv", g, c_conv)
    return _fc_b(grads, d + ".fc_in", g.reshape(b, -1), c_in)


def forward(p, cfg: SCEnetConfig, x):
    """Encode once, decode every tap. Returns (MultiRateOutput, cache)."""
    codewords, enc_cache = encode_forward(p, cfg, x)
    recons, dec_caches = [], []
    for i, q in enumerate(codewords, start=1):
        y, c = decode_forward(p, cfg, i, q)
        recons.append(y)
        dec_caches.append(c)
    return MultiRateOutput(codewords, recons), (enc_cache, dec_caches)


def backward(p, cfg: SCEnetConfig, drecons, cache) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its gradient w.r.t. each reconstruction."""
    enc_cache, dec_caches = cache
    grads: dict[str, np.ndarray] = {}
    dq = [decode_backward(grads, cfg, i, dy, c)
          for i, (dy, c) in enumerate(zip(drecons, dec_caches), start=1)]
    encode_backward(grads, cfg, dq, enc_cache)
    # keep parameter order stable for the optimizer and checkpoints
    return {name: grads[name] for name in p}


# ---------------------------------------------------------------------------
# model wrapper
# ---------------------------------------------------------------------------

class SCEnet:
    """Parameters plus the architecture they belong to."""

    def __init__(self, cfg: SCEnetConfig, params: dict | None = None, seed=0,
                 dtype=np.float32):
        self.cfg = cfg
        if params is None:
            params = init_params(cfg, seed, dtype)
        expected = param_shapes(cfg)
        if list(params) != list(expected) or any(
                params[n].shape != s for n, s in expected.items()):
            raise ValueError("parameter set does not match the architecture")
        self.params = params

    def encode(self, x: np.ndarray) -> list[np.ndarray]:
        return encode_forward(self.params, self.cfg, self._as_input(x))[0]

    def decode(self, q: np.ndarray, rate: int) -> np.ndarray:
        q = np.asarray(q, dtype=self.dtype)
        squeeze = q.ndim == 1
        y = decode_forward(self.params, self.cfg, rate, q[None] if squeeze else q)[0]
        return y[0] if squeeze else y

    def forward_all_rates(self, x: np.ndarray) -> MultiRateOutput:
        """Inference on one segment (K, N_t) or a batch (B, K, N_t), chunked."""
        x = self._as_input(x)
        out = MultiRateOutput([[] for _ in range(self.cfg.s)], [[] for _ in range(self.cfg.s)])
        for start in range(0, x.shape[0], _INFER_CHUNK):
            res, _ = forward(self.params, self.cfg, x[start:start + _INFER_CHUNK])
            for i in range(self.cfg.s):
                out.codewords[i].append(res.codewords[i])
                out.reconstructions[i].append(res.reconstructions[i])
        out.codewords = [np.concatenate(c) for c in out.codewords]
        out.reconstructions = [np.concatenate(r) for r in out.reconstructions]
        return out

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def _as_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.cfg.k, self.cfg.n_t):
            raise ValueError(f"segments must be ({self.cfg.k}, {self.cfg.n_t}), got {x.shape[1:]}")
        return x

    # complexity -----------------------------------------------------------

    def encoder_specs(self) -> list[LayerSpec]:
        k7, k5, k3 = self.cfg.kernels
        hid = self.cfg.hidden
        act = LayerSpec("leaky_relu")
        specs = []
        for i in range(1, self.cfg.s + 1):
            specs += [LayerSpec("conv1xk", 1, hid, k7, shared="enc.conv1"), act,
                      LayerSpec("conv1xk", hid, hid, k5, shared="enc.conv2"), act,
                      LayerSpec("conv1xk", hid, 1, k3, stride=2, shared="enc.conv3"), act]
            if self.cfg.dense:
                n = self.cfg.codeword_length(i)
                specs += [LayerSpec("fully_connected", n, n), act]
        return specs

    def decoder_specs(self, rate: int) -> list[LayerSpec]:
        full = self.cfg.segment_size
        c1, c2 = REFINE_CHANNELS
        act = LayerSpec("leaky_relu")
        specs = [LayerSpec("fully_connected", self.cfg.codeword_length(rate), full),
                 LayerSpec("conv1xk", 1, 1, 3), act]
        for _ in range(self.cfg.refine_blocks):
            specs += [LayerSpec("residual_block_marker"),
                      LayerSpec("conv1xk", 1, c1, 3), act,
                      LayerSpec("conv1xk", c1, c2, 3), act,
                      LayerSpec("conv1xk", c2, 1, 3),
                      LayerSpec("residual_block_marker"), act]
        specs.append(LayerSpec("fully_connected", full, full))
        return specs

    def complexity(self) -> dict[str, tuple[int, int]]:
        """``{part: (params, flops)}`` for the encoder and every decoder."""
        seg_shape = (1, self.cfg.k, self.cfg.n_t)
        enc = self.encoder_specs()
        out = {"encoder": (nn.count_params(enc), nn.count_flops(enc, seg_shape))}
        for i in range(1, self.cfg.s + 1):
            dec = self.decoder_specs(i)
            out[f"decoder{i}"] = (nn.count_params(dec),
                                  nn.count_flops(dec, (self.cfg.codeword_length(i),)))
        return out

    def n_allocated(self, prefix: str = "") -> int:
        return sum(a.size for n, a in self.params.items() if n.startswith(prefix))


def loss_and_grads(p, cfg: SCEnetConfig, x, targets, weights, squared: bool = True):
    """Weighted multi-rate loss and its parameter gradients for parameter set ``p``."""
    from .training import weighted_loss

    out, cache = forward(p, cfg, x)
    loss, drecons = weighted_loss(targets, out.reconstructions, weights, squared)
    return loss, backward(p, cfg, drecons, cache)


def model_grad_check(model: SCEnet, x, weights=None, eps: float = 1e-5, targets=None,
                     bias_jitter: float = 0.1, seed: int = 0) -> float:
    """End-to-end finite-difference check of every parameter, in float64.

    Freshly initialized biases are zero and the shared encoder shrinks its
    input at every stage, so many pre-activations sit within ``eps`` of the
    activation kink and central differences straddle it.  Unless
    ``bias_jitter`` is 0 the check therefore runs at a generic point: a copy
    of the parameters with biases drawn from U(-bias_jitter, bias_jitter).
    """
    cfg = model.cfg
    x = np.asarray(x, dtype=np.float64)
    if targets is None:
        targets = x
    if weights is None:
        weights = np.full(cfg.s, 1.0 / cfg.s)
    params = {n: np.array(a, dtype=np.float64) for n, a in model.params.items()}
    if bias_jitter:
        rng = np.random.default_rng(seed)
        for name, arr in params.items():
            if name.endswith(".b"):
                arr[...] = rng.uniform(-bias_jitter, bias_jitter, arr.shape)
    return nn.grad_check(lambda p: loss_and_grads(p, cfg, x, targets, weights),
                         params, eps)
