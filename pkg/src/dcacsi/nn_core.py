"""Small numpy layer library with hand-written adjoints.

Activations are laid out channels-last as ``(batch, height, width, channels)``
where height is the antenna axis of a segment and width is the delay axis.  Convolutions
only ever run along the width.  Every ``*_forward`` returns ``(y, cache)`` and
the matching ``*_backward`` consumes the cache, so one set of weights can be
applied several times (the encoder does exactly that) by keeping one cache
per application and summing the parameter gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_SLOPE = 0.3


class NonFiniteError(ArithmeticError):
    """Raised when NaN or Inf shows up in activations or gradients."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _pad_flat(x: np.ndarray, pad: int) -> np.ndarray:
    """(B, H, L, C) -> zero-separated 2-D sequence of shape (B*H*(L+2*pad), C)."""
    b, h, width, c = x.shape
    xp = np.zeros((b * h, width + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + width] = x.reshape(b * h, width, c)
    return xp.reshape(-1, c)


def _unpad_flat(yf: np.ndarray, shape: tuple, pad: int) -> np.ndarray:
    b, h, width, _ = shape
    c = yf.shape[1]
    return yf.reshape(b * h, width + 2 * pad, c)[:, pad:pad + width].reshape(b, h, width, c)


def conv1xk_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """1 x k convolution along the width axis with zero "same" padding.

    ``y[b, r, t, o] = bias[o] + sum_{i,u} w[o, i, u] * x[b, r, stride*t + u - (k-1)/2, i]``

    Args:
        x: input of shape (B, H, L, C_in), channels last.
        w: kernel of shape (C_out, C_in, k), k odd.
        b: bias of shape (C_out,).
        stride: 1, or 2 to halve the width (L must then be even).

    Returns:
        y of shape (B, H, L // stride, C_out) and the cache for the backward pass.
    """
    c_out, c_in, k = w.shape
    if x.ndim != 4 or x.shape[3] != c_in:
        raise ValueError(f"conv input shape {x.shape} does not match kernel {w.shape}")
    if k % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {k}")
    if b.shape != (c_out,):
        raise ValueError(f"bias shape {b.shape} does not match {c_out} output channels")
    if stride not in (1, 2) or x.shape[2] % stride:
        raise ValueError(f"width {x.shape[2]} incompatible with stride {stride}")
    pad = (k - 1) // 2
    wk = np.ascontiguousarray(w.transpose(2, 1, 0))  # (k, C_in, C_out)
    xf = _pad_flat(x, pad)
    n = xf.shape[0] - 2 * pad
    # output row r of the flat sequence is centred on input row r + pad;
    # rows landing on padding are garbage and get cropped
    if c_in == 1:
        cols = np.stack([xf[u:u + n, 0] for u in range(k)], axis=1)
        acc = cols @ wk[:, 0, :]
    else:
        cols = None
        acc = xf[0:n] @ wk[0]
        for u in range(1, k):
            acc += xf[u:u + n] @ wk[u]
    yf = np.empty((xf.shape[0], c_out), dtype=acc.dtype)
    yf[pad:pad + n] = acc
    y = _unpad_flat(yf, x.shape[:3] + (c_out,), pad)
    if stride == 2:
        y = y[:, :, ::2]
    y = y + b
    _check_finite(y, "conv output")
    return y, (xf, cols, wk, stride, x.shape)


def conv1xk_backward(dy: np.ndarray, cache):
    """Adjoint of :func:`conv1xk_forward`. Returns ``(dx, dw, db)``."""
    xf, cols, wk, stride, shape = cache
    k, c_in, c_out = wk.shape
    pad = (k - 1) // 2
    b, h, width, _ = shape
    if stride == 2:
        full = np.zeros((b, h, width, c_out), dtype=dy.dtype)
        full[:, :, ::2] = dy
        dy = full
    dyf = _pad_flat(dy, pad)
    n = dyf.shape[0] - 2 * pad
    dyv = dyf[pad:pad + n]
    db = dyv.sum(axis=0)
    dxf = np.zeros_like(xf)
    if cols is not None:
        dwk = (cols.T @ dyv)[:, None, :]
        dcols = dyv @ wk[:, 0, :].T
        for u in range(k):
            dxf[u:u + n, 0] += dcols[:, u]
    else:
        dwk = np.stack([xf[u:u + n].T @ dyv for u in range(k)])
        if c_out == 1:
            # numpy is very slow on matmuls or broadcasts with a unit inner
            # axis, so gather the k shifted gradients into columns instead
            g = np.zeros(dyf.shape[0] + 2 * pad, dtype=dyf.dtype)
            g[pad:pad + dyf.shape[0]] = dyf[:, 0]
            rows = dxf.shape[0]
            shifted = np.stack([g[2 * pad - u:2 * pad - u + rows] for u in range(k)], axis=1)
            dxf += shifted @ wk[:, :, 0]
        else:
            for u in range(k):
                dxf[u:u + n] += dyv @ wk[u].T
    dx = _unpad_flat(dxf, shape, pad)
    return dx, dwk.transpose(2, 1, 0), db


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Fully connected layer ``y = x W^T + b`` on a (B, n) batch."""
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"fc input shape {x.shape} does not match weight {w.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
    y = x @ w.T + b
    _check_finite(y, "fc output")
    return y, (x, w)


def fc_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def leaky_relu_forward(x: np.ndarray, slope: float = DEFAULT_SLOPE):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    # derivative at exactly 0 is taken as the slope
    deriv = (x > 0).astype(x.dtype)
    deriv *= 1.0 - slope
    deriv += slope
    # max(x, slope*x) == leaky relu for slope < 1; np.where is far slower here
    return np.maximum(x, slope * x), deriv


def leaky_relu_backward(dy: np.ndarray, cache):
    return dy * cache


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            _check_finite(g, f"gradient of {name}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self, params: Mapping[str, np.ndarray]):
        """Moment arrays in parameter order, zero-filled for untouched entries."""
        m = [self.m.get(n, np.zeros_like(p)) for n, p in params.items()]
        v = [self.v.get(n, np.zeros_like(p)) for n, p in params.items()]
        return m, v


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||a|| + ||n||)``, 0 when both are zero."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(loss: Callable[[], float], arr: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central differences of ``loss()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss()
        flat[i] = orig - eps
        down = loss()
        flat[i] = orig
        grad.flat[i] = (up - down) / (2.0 * eps)
    return grad


def grad_check(loss_and_grads: Callable[[Mapping[str, np.ndarray]], tuple],
               params: Mapping[str, np.ndarray], eps: float = 1e-3,
               names: Iterable[str] | None = None) -> float:
    """Largest relative error between reverse-mode and finite-difference gradients.

    ``loss_and_grads(params)`` must return ``(loss, grads)`` with ``grads`` keyed
    like ``params``.  The parameters are copied to float64 before checking, so
    the caller's arrays are left alone.
    """
    p64 = {n: np.array(a, dtype=np.float64) for n, a in params.items()}
    _, grads = loss_and_grads(p64)
    worst = 0.0
    for name in (names if names is not None else p64):
        num = numeric_grad(lambda: float(loss_and_grads(p64)[0]), p64[name], eps)
        worst = max(worst, relative_error(np.asarray(grads[name], np.float64), num))
    return worst


# ---------------------------------------------------------------------------
# analytic complexity counting
# ---------------------------------------------------------------------------

LAYER_KINDS = ("conv1xk", "fully_connected", "leaky_relu", "residual_block_marker")


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer for parameter and FLOP accounting.

    For ``fully_connected`` layers ``c_in``/``c_out`` hold the input/output
    lengths.  Layers that carry the same ``shared`` tag own a single parameter
    set, so they are counted once by :func:`count_params` but once per
    application by :func:`count_flops`.
    """

    kind: str
    c_in: int = 1
    c_out: int = 1
    k: int = 1
    stride: int = 1
    shared: str | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv1xk" and (self.k % 2 == 0 or self.stride not in (1, 2)):
            raise ValueError(f"bad conv spec k={self.k} stride={self.stride}")

    @property
    def n_params(self) -> int:
        if self.kind == "conv1xk":
            return self.c_in * self.c_out * self.k + self.c_out
        if self.kind == "fully_connected":
            return self.c_out * self.c_in + self.c_out
        return 0


def count_params(specs: Sequence[LayerSpec]) -> int:
    total = 0
    seen: set[str] = set()
    for spec in specs:
        if spec.shared is not None:
            if spec.shared in seen:
                continue
            seen.add(spec.shared)
        total += spec.n_params
    return total


def count_flops(specs: Sequence[LayerSpec], input_shape: tuple[int, ...]) -> int:
    """Multiply-accumulates times two, at the given input shape.

    ``input_shape`` is ``(C, H, L)`` or a flat ``(n,)``.  A convolution fed a
    flat vector reshapes it to one channel with the height of the last seen
    3-D shape (or 1 if none was seen), mirroring how the decoder unflattens.
    Activations and the residual sum are not counted.
    """
    shape = tuple(input_shape)
    height = shape[1] if len(shape) == 3 else 1
    flops = 0
    for spec in specs:
        if spec.kind == "conv1xk":
            if len(shape) == 1:
                shape = (1, height, shape[0] // height)
            c, height, width = shape
            if c != spec.c_in:
                raise ValueError(f"conv expects {spec.c_in} channels, got {c}")
            width_out = width // spec.stride
            flops += 2 * height * width_out * spec.k * spec.c_in * spec.c_out
            shape = (spec.c_out, height, width_out)
        elif spec.kind == "fully_connected":
            n = int(np.prod(shape))
            if n != spec.c_in:
                raise ValueError(f"fc expects length {spec.c_in}, got {n}")
            flops += 2 * spec.c_in * spec.c_out
            shape = (spec.c_out,)
    return flops
