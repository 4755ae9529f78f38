"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus a closure that routes upstream gradients
into its parents. Calling ``backward()`` on a scalar root walks the graph
in reverse topological order. Heavy layers (conv2d, maxpool, batchnorm,
LSTM, the pair distance) are single fused nodes with hand-written
backward passes; everything else composes from the small primitives.

Ops preserve dtype: a float32 graph trains in float32 (with float64
accumulation inside reductions), and the same code run on float64 leaves
produces float64 gradients, which is what the finite-difference tests
rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InvalidInput, NumericsError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn", "_spent")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._spent = False

    # -- convenience -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; the real work lives in the module-level functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- engine ------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise InvalidInput(f"backward root must be scalar, got shape {self.data.shape}")
        if self._spent:
            raise InvalidInput("this graph was already consumed; rebuild it before backward")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
            if node._parents:
                node.grad = None  # free intermediate grads as we go
            node._spent = True
            # drop the closure so buffers it captured are reclaimed now,
            # not when the whole graph goes out of scope
            node._backward_fn = None


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr)


def _accum(t: Tensor, g: np.ndarray):
    t.grad = g if t.grad is None else t.grad + g


def _op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Build an op output. Branches with no gradient demand fold to constants."""
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._parents = live
    out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _op(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _op(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _op(-a.data, (a,), bwd)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _op(data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _op(data, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0)

    def bwd(g):
        _accum(x, g * (x.data > 0))

    return _op(data, (x,), bwd)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum with float64 accumulation, cast back to the input dtype."""
    x = as_tensor(x)
    data = np.sum(x.data, axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.dtype)
    if axis is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axis, int):
        axes = (axis % x.ndim,)
    else:
        axes = tuple(ax % x.ndim for ax in axis)

    def bwd(g):
        kshape = list(x.shape)
        for ax in axes:
            kshape[ax] = 1
        _accum(x, np.broadcast_to(np.reshape(g, kshape), x.shape))

    return _op(np.asarray(data), (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    elif isinstance(axis, int):
        count = x.shape[axis]
    else:
        count = 1
        for ax in axis:
            count *= x.shape[ax]
    s = tsum(x, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    data = np.reshape(x.data, shape)

    def bwd(g):
        _accum(x, np.reshape(g, x.shape))

    return _op(data, (x,), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; the backward pass scatters into zeros."""
    x = as_tensor(x)
    axis = axis % x.ndim
    if not (0 <= start < stop <= x.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    index = tuple(slice(None) if ax != axis else slice(start, stop) for ax in range(x.ndim))
    data = np.ascontiguousarray(x.data[index])

    def bwd(g):
        full = np.zeros_like(x.data)
        full[index] = g
        _accum(x, full)

    return _op(data, (x,), bwd)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    parts = [as_tensor(p) for p in parts]
    axis = axis % parts[0].ndim
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index = tuple(
                    slice(None) if ax != axis else slice(int(lo), int(hi))
                    for ax in range(p.ndim)
                )
                _accum(p, g[index])

    return _op(data, tuple(parts), bwd)


# ---------------------------------------------------------------------------
# fused network layers
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded stride-1 2-D convolution (cross-correlation) via im2col.

    x: (B, C, H, W), w: (F, C, kh, kw) with odd kernel sides, b: (F,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D x and w, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"channel mismatch: x has {C}, w expects {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"same padding needs odd kernels, got {kh}x{kw}")
    if b.shape != (F,):
        raise ShapeError(f"bias must be ({F},), got {b.shape}")
    ph, pw = kh // 2, kw // 2

    def im2col():
        # (B, C, H, W, kh, kw) windows -> (B, C*kh*kw, H*W); one strided copy.
        # Rebuilt on demand so the buffer (the largest in the whole net) is
        # never held across the life of the graph.
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * kh * kw, H * W)
        return np.ascontiguousarray(cols)

    w2 = w.data.reshape(F, C * kh * kw)
    cols = im2col()
    out = np.matmul(w2, cols).reshape(B, F, H, W) + b.data.reshape(1, F, 1, 1)
    del cols

    def bwd(g):
        g2 = g.reshape(B, F, H * W)
        if b.requires_grad:
            _accum(b, np.sum(g, axis=(0, 2, 3), dtype=np.float64).astype(b.dtype))
        if w.requires_grad:
            cols = im2col()
            dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            del cols
            _accum(w, dw.reshape(F, C, kh, kw))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)  # (B, C*kh*kw, H*W)
            dc = dcols.reshape(B, C, kh, kw, H, W)
            dxp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + H, j : j + W] += dc[:, :, i, j]
            _accum(x, dxp[:, :, ph : ph + H, pw : pw + W])

    return _op(out, (x, w, b), bwd)


def maxpool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling with floor semantics (odd trailing rows
    and columns are dropped). Ties go to the first element in row-major
    window order."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    k = kernel
    Ho, Wo = H // k, W // k
    if Ho == 0 or Wo == 0:
        raise ShapeError(f"input {H}x{W} too small for {k}x{k} pooling")
    xt = x.data[:, :, : Ho * k, : Wo * k].reshape(B, C, Ho, k, Wo, k)
    xw = np.ascontiguousarray(xt.transpose(0, 1, 2, 4, 3, 5)).reshape(B, C, Ho, Wo, k * k)
    idx = xw.argmax(axis=4).astype(np.int32)  # held for backward; keep it small
    out = np.take_along_axis(xw, idx[..., None], axis=4)[..., 0]

    def bwd(g):
        dxw = np.zeros((B, C, Ho, Wo, k * k), dtype=g.dtype)
        np.put_along_axis(dxw, idx[..., None], g[..., None], axis=4)
        dxt = dxw.reshape(B, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros_like(x.data)
        dx[:, :, : Ho * k, : Wo * k] = dxt.reshape(B, C, Ho * k, Wo * k)
        _accum(x, dx)

    return _op(out, (x,), bwd)


@dataclass
class BatchNormState:
    """Running statistics owned by a batchnorm layer, updated in train mode."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, n_features: int, momentum: float = 0.9, eps: float = 1e-5):
        return cls(
            running_mean=np.zeros(n_features, dtype=np.float32),
            running_var=np.ones(n_features, dtype=np.float32),
            momentum=momentum,
            eps=eps,
        )


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str,
    channel_axis: int = 1,
) -> Tensor:
    """Batch normalization over every axis except ``channel_axis``.

    Train mode uses biased batch variance and folds it into the running
    stats as ``running = momentum * running + (1 - momentum) * batch``.
    Inference mode normalizes with the stored running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    ch = channel_axis % x.ndim
    n_feat = x.shape[ch]
    if gamma.shape != (n_feat,) or beta.shape != (n_feat,):
        raise ShapeError(
            f"gamma/beta must be ({n_feat},), got {gamma.shape} and {beta.shape}"
        )
    axes = tuple(ax for ax in range(x.ndim) if ax != ch)
    bshape = tuple(n_feat if ax == ch else 1 for ax in range(x.ndim))
    gamma_b = gamma.data.reshape(bshape)
    beta_b = beta.data.reshape(bshape)

    if mode == "train":
        if x.shape[0] < 2:
            raise InvalidInput(
                f"batchnorm in train mode needs a batch of >= 2, got {x.shape[0]}"
            )
        n = 1
        for ax in axes:
            n *= x.shape[ax]
        mean = np.mean(x.data, axis=axes, keepdims=True, dtype=np.float64).astype(x.dtype)
        xc = x.data - mean
        var = np.mean(xc * xc, axis=axes, keepdims=True, dtype=np.float64).astype(x.dtype)
        invstd = 1.0 / np.sqrt(var + state.eps)
        out = gamma_b * (xc * invstd) + beta_b
        del xc  # xhat is cheap to rebuild; holding it doubles the layer's footprint
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mean.reshape(n_feat)
        state.running_var = m * state.running_var + (1.0 - m) * var.reshape(n_feat)

        def bwd(g):
            xhat = (x.data - mean) * invstd
            if gamma.requires_grad:
                _accum(
                    gamma,
                    np.sum(g * xhat, axis=axes, dtype=np.float64).astype(gamma.dtype),
                )
            if beta.requires_grad:
                _accum(beta, np.sum(g, axis=axes, dtype=np.float64).astype(beta.dtype))
            if x.requires_grad:
                gx = g * gamma_b
                term_mean = np.mean(gx, axis=axes, keepdims=True, dtype=np.float64).astype(x.dtype)
                term_proj = np.mean(gx * xhat, axis=axes, keepdims=True, dtype=np.float64).astype(x.dtype)
                _accum(x, invstd * (gx - term_mean - xhat * term_proj))

        return _op(out, (x, gamma, beta), bwd)

    rm = state.running_mean.reshape(bshape).astype(x.dtype)
    rv = state.running_var.reshape(bshape).astype(x.dtype)
    invstd = 1.0 / np.sqrt(rv + state.eps)
    out = gamma_b * ((x.data - rm) * invstd) + beta_b

    def bwd_infer(g):
        if gamma.requires_grad:
            xhat = (x.data - rm) * invstd
            _accum(gamma, np.sum(g * xhat, axis=axes, dtype=np.float64).astype(gamma.dtype))
        if beta.requires_grad:
            _accum(beta, np.sum(g, axis=axes, dtype=np.float64).astype(beta.dtype))
        if x.requires_grad:
            _accum(x, g * gamma_b * invstd)

    return _op(out, (x, gamma, beta), bwd_infer)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: surviving activations are scaled by 1/(1-rate) at
    train time so inference is the identity."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    keep = rng.random(x.shape) >= rate  # bool mask: an eighth of a float copy
    inv = 1.0 / (1.0 - rate)
    data = np.where(keep, x.data * x.data.dtype.type(inv), x.data.dtype.type(0.0))

    def bwd(g):
        _accum(x, np.where(keep, g * g.dtype.type(inv), g.dtype.type(0.0)))

    return _op(data, (x,), bwd)


def lstm_layer(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Single LSTM layer over a full sequence, returning every hidden state.

    x: (B, T, D), wx: (D, 4H), wh: (H, 4H), b: (4H,). Gate blocks are
    ordered [input, forget, cell, output] along the 4H axis. Initial h and
    c are zero. The input projection for all timesteps is one matmul; the
    backward pass accumulates dWx/dWh/dx with stacked matmuls and only the
    recurrent term walks the sequence.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    if x.ndim != 3:
        raise ShapeError(f"lstm expects (B, T, D), got {x.shape}")
    B, T, D = x.shape
    if wx.ndim != 2 or wx.shape[0] != D or wx.shape[1] % 4 != 0:
        raise ShapeError(f"wx must be ({D}, 4H), got {wx.shape}")
    H = wx.shape[1] // 4
    if wh.shape != (H, 4 * H):
        raise ShapeError(f"wh must be ({H}, {4 * H}), got {wh.shape}")
    if b.shape != (4 * H,):
        raise ShapeError(f"bias must be ({4 * H},), got {b.shape}")

    x2 = np.ascontiguousarray(x.data.reshape(B * T, D))
    # (T, B, 4H); overwritten in place with activated gates step by step,
    # then reused as the dZ buffer during backward to cap peak memory
    zbuf = np.ascontiguousarray((x2 @ wx.data + b.data).reshape(B, T, 4 * H).transpose(1, 0, 2))
    hs = np.empty((T, B, H), dtype=x.dtype)
    cs = np.empty((T, B, H), dtype=x.dtype)
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    for t in range(T):
        z = zbuf[t]
        z += h @ wh.data
        i = expit(z[:, :H])
        f = expit(z[:, H : 2 * H])
        gc = np.tanh(z[:, 2 * H : 3 * H])
        o = expit(z[:, 3 * H :])
        c = f * c + i * gc
        h = o * np.tanh(c)
        z[:, :H] = i
        z[:, H : 2 * H] = f
        z[:, 2 * H : 3 * H] = gc
        z[:, 3 * H :] = o
        hs[t] = h
        cs[t] = c
    out = np.ascontiguousarray(hs.transpose(1, 0, 2))

    def bwd(gout):
        dh_next = np.zeros((B, H), dtype=gout.dtype)
        dc_next = np.zeros((B, H), dtype=gout.dtype)
        gseq = gout.transpose(1, 0, 2)  # (T, B, H) view
        for t in range(T - 1, -1, -1):
            gates = zbuf[t]
            i = gates[:, :H]
            f = gates[:, H : 2 * H]
            gc = gates[:, 2 * H : 3 * H]
            o = gates[:, 3 * H :]
            tc = np.tanh(cs[t])
            c_prev = cs[t - 1] if t > 0 else np.zeros((B, H), dtype=gout.dtype)
            dh = gseq[t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * gc
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            dzi = di * i * (1.0 - i)
            dzf = df * f * (1.0 - f)
            dzg = dg * (1.0 - gc * gc)
            dzo = do * o * (1.0 - o)
            # overwrite the gate cache for step t with dz_t
            gates[:, :H] = dzi
            gates[:, H : 2 * H] = dzf
            gates[:, 2 * H : 3 * H] = dzg
            gates[:, 3 * H :] = dzo
            dh_next = gates @ wh.data.T
        dz2 = np.ascontiguousarray(zbuf.transpose(1, 0, 2)).reshape(B * T, 4 * H)
        if wx.requires_grad:
            _accum(wx, x2.T @ dz2)
        if wh.requires_grad:
            hprev = np.zeros((T, B, H), dtype=gout.dtype)
            hprev[1:] = hs[:-1]
            hp2 = hprev.transpose(1, 0, 2).reshape(B * T, H)
            _accum(wh, hp2.T @ dz2)
        if b.requires_grad:
            _accum(b, np.sum(dz2, axis=0, dtype=np.float64).astype(b.dtype))
        if x.requires_grad:
            _accum(x, (dz2 @ wx.data.T).reshape(B, T, D))

    return _op(out, (x, wx, wh, b), bwd)


# ---------------------------------------------------------------------------
# metric head
# ---------------------------------------------------------------------------


def euclidean_distance(f1: Tensor, f2: Tensor) -> Tensor:
    """Rowwise L2 distance between two (B, E) embedding batches -> (B,).

    At zero distance the true derivative does not exist; the subgradient
    zero is used so identical pairs produce no pull in either direction.
    """
    f1, f2 = as_tensor(f1), as_tensor(f2)
    if f1.shape != f2.shape or f1.ndim != 2:
        raise ShapeError(f"expected matching (B, E) inputs, got {f1.shape} and {f2.shape}")
    diff = f1.data - f2.data
    d = np.sqrt(np.sum(diff * diff, axis=1, dtype=np.float64)).astype(f1.dtype)

    def bwd(g):
        safe = np.where(d > 0, d, 1.0)
        k = np.where(d > 0, g / safe, 0.0).astype(f1.dtype)[:, None]
        if f1.requires_grad:
            _accum(f1, k * diff)
        if f2.requires_grad:
            _accum(f2, -k * diff)

    return _op(d, (f1, f2), bwd)


def contrastive_loss(d: Tensor, indicator: np.ndarray, margin: float = 1.0) -> Tensor:
    """mean( I * d^2 + (1 - I) * relu(margin - d)^2 ) over the batch.

    I = 1 marks a same-class pair (pulled together), I = 0 a cross-class
    pair (pushed apart until the margin). Both zero cases are exact: a
    coincident positive pair and a separated-past-margin negative pair
    contribute literally 0.0.
    """
    d = as_tensor(d)
    if margin <= 0:
        raise ConfigError(f"margin must be positive, got {margin}")
    ind = np.asarray(indicator)
    if ind.shape != d.shape:
        raise ShapeError(f"indicator shape {ind.shape} != distance shape {d.shape}")
    if not np.all((ind == 0) | (ind == 1)):
        raise InvalidInput("indicator values must be 0 or 1")
    if np.any(d.data < 0):
        raise InvalidInput("distances must be non-negative")
    same = Tensor(ind.astype(d.dtype))
    other = Tensor((1 - ind).astype(d.dtype))
    pull = mul(same, mul(d, d))
    hinge = relu(add(neg(d), float(margin)))
    push = mul(other, mul(hinge, hinge))
    return tmean(add(pull, push))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Adam:
    """Adam with bias correction; update denominator is sqrt(v_hat) + eps."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.params = dict(params)
        self.state = {
            name: AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
            for name, p in self.params.items()
        }

    def step(self):
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} != param shape {p.data.shape} for {name}"
                )
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter {name}")
            s = self.state[name]
            s.t += 1
            s.m = self.beta1 * s.m + (1.0 - self.beta1) * g
            s.v = self.beta2 * s.v + (1.0 - self.beta2) * (g * g)
            m_hat = s.m / (1.0 - self.beta1**s.t)
            v_hat = s.v / (1.0 - self.beta2**s.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
