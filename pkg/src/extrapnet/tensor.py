"""Small dense-tensor engine with reverse-mode autodiff.

Only the operations the residual networks need are provided: 1-D and 2-D
stride-1 cross-correlation without bias, ReLU, elementwise addition and a
per-position two-class cross-entropy. Every op accepts an optional leading
batch axis so training can run on mini-batches.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeConsumedError",
    "NonFiniteError",
    "no_grad",
    "conv1d",
    "conv2d",
    "conv_channels_last",
    "channels_last",
    "channels_first",
    "add_batch_axis",
    "drop_batch_axis",
    "relu",
    "add",
    "mul",
    "tensor_sum",
    "per_position_cross_entropy",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class TapeConsumedError(RuntimeError):
    """Raised when backward is replayed over an already consumed graph."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


_ids = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_id", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._id = next(_ids)
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, op: str, backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


class Tape:
    """Ordered record of the ops that produced a scalar loss.

    Nodes are kept in creation order; backward replays them in reverse.
    A tape is single-use: after `replay` the intermediate closures are
    dropped and a second replay raises `TapeConsumedError`.
    """

    def __init__(self, loss: Tensor):
        self.loss = loss
        seen = set()
        nodes = []
        stack = [loss]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._consumed:
                raise TapeConsumedError("backward called on a consumed tape")
            if t._backward is not None:
                nodes.append(t)
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._id)
        self.records = nodes

    def __len__(self):
        return len(self.records)

    def ops(self) -> list[str]:
        return [t._op for t in self.records]

    def replay(self):
        grads = {id(self.loss): np.ones_like(self.loss.data)}
        for node in reversed(self.records):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    _accumulate(parent, pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        for node in self.records:
            node._backward = None
            node._parents = ()
            node._consumed = True


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise TapeConsumedError("backward called on a consumed tape")
    if loss.is_leaf:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return
    Tape(loss).replay()


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(np.maximum(x.data, 0), (x,), "relu",
                 lambda g: (g * mask,))


def tensor_sum(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), "sum",
                 lambda g: (np.broadcast_to(g, shape),))


# --- convolution -----------------------------------------------------------

def _columns(xp: np.ndarray, ksize, dilation: int, out_sp) -> np.ndarray:
    """im2col of channel-last `xp` (N, *S, C): (N, *out_sp, prod(K) * C), taps major."""
    taps = []
    for offs in itertools.product(*(range(k) for k in ksize)):
        sl = (slice(None),) + tuple(slice(o * dilation, o * dilation + n) for o, n in zip(offs, out_sp))
        taps.append(xp[sl])
    return np.concatenate(taps, axis=-1)


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    # (O, C, *K) -> (prod(K) * C, O), matching the tap-major column order
    return np.moveaxis(w, (0, 1), (-1, -2)).reshape(-1, w.shape[0])


def _out_extent(spatial_shape, ksize, dilation: int):
    return tuple(s - (k - 1) * dilation for s, k in zip(spatial_shape, ksize))


def _correlate(xp: np.ndarray, w: np.ndarray, dilation: int) -> np.ndarray:
    """Valid cross-correlation of channel-last `xp` (N, *S, C) with `w` (O, C, *K)."""
    ksize = w.shape[2:]
    out_sp = _out_extent(xp.shape[1:-1], ksize, dilation)
    cols = _columns(xp, ksize, dilation, out_sp)
    out = cols.reshape(-1, cols.shape[-1]) @ _weight_matrix(w)
    return out.reshape((xp.shape[0],) + out_sp + (w.shape[0],))


def _kernel_grad(xp: np.ndarray, g: np.ndarray, ksize, dilation: int) -> np.ndarray:
    cols = _columns(xp, ksize, dilation, g.shape[1:-1])
    gm = cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    gm = gm.reshape(tuple(ksize) + (xp.shape[-1], g.shape[-1]))
    return np.ascontiguousarray(np.moveaxis(gm, (-1, -2), (0, 1)))


def _pad_spatial(x: np.ndarray, amount) -> np.ndarray:
    if not any(amount):
        return np.ascontiguousarray(x)
    out = np.zeros((x.shape[0],) + tuple(s + 2 * a for s, a in zip(x.shape[1:-1], amount)) + x.shape[-1:],
                   dtype=x.dtype)
    out[(slice(None),) + tuple(slice(a, a + s) for a, s in zip(amount, x.shape[1:-1]))] = x
    return out


def conv_channels_last(x, w, padding: int = 1, dilation: int = 1) -> Tensor:
    """Stride-1 cross-correlation on channel-last data.

    x: (N, *S, C); w: (O, C, *K) with odd K. Returns (N, *S_out, O) where
    S_out = S + 2 * padding - dilation * (K - 1).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    spatial = w.data.ndim - 2
    name = f"conv{spatial}d"
    if dilation < 1 or padding < 0:
        raise ValueError(f"{name}: dilation must be >= 1 and padding >= 0")
    if x.data.ndim != spatial + 2:
        raise ShapeError(f"{name}: input {x.shape} does not match kernel {w.shape}")
    ksize = w.shape[2:]
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"{name}: input has {x.shape[-1]} channels, kernel expects {w.shape[1]}")
    if any(k % 2 == 0 for k in ksize):
        raise ShapeError(f"{name}: kernel extents must be odd, got {ksize}")
    reach = max((k - 1) * dilation for k in ksize)
    if padding > reach:
        raise ValueError(f"{name}: padding {padding} exceeds kernel reach {reach}")
    padded = tuple(s + 2 * padding for s in x.shape[1:-1])
    if any(e < 1 for e in _out_extent(padded, ksize, dilation)):
        raise ShapeError(f"{name}: input {x.shape} too small for kernel {w.shape}")
    xp = _pad_spatial(x.data, (padding,) * spatial)
    wd = w.data
    out = _correlate(xp, wd, dilation)

    def _bw(g):
        gx = gw = None
        if x.requires_grad:
            # stride-1 input gradient: correlate the re-padded output grad
            # with the spatially flipped, channel-transposed kernel
            q = tuple((k - 1) * dilation - padding for k in ksize)
            flip = (slice(None), slice(None)) + (slice(None, None, -1),) * spatial
            wt = np.ascontiguousarray(wd[flip].swapaxes(0, 1))
            gx = _correlate(_pad_spatial(g, q), wt, dilation)
        if w.requires_grad:
            gw = _kernel_grad(xp, g, ksize, dilation)
        return gx, gw

    return _make(out, (x, w), name, _bw)


def channels_last(x) -> Tensor:
    """(N, C, *S) -> (N, *S, C)."""
    x = _as_tensor(x)
    return _make(np.ascontiguousarray(np.moveaxis(x.data, 1, -1)), (x,), "to_channels_last",
                 lambda g: (np.moveaxis(g, -1, 1),))


def channels_first(x) -> Tensor:
    """(N, *S, C) -> (N, C, *S)."""
    x = _as_tensor(x)
    return _make(np.ascontiguousarray(np.moveaxis(x.data, -1, 1)), (x,), "to_channels_first",
                 lambda g: (np.moveaxis(g, 1, -1),))


def add_batch_axis(x) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data[None], (x,), "add_batch_axis", lambda g: (g[0],))


def drop_batch_axis(x) -> Tensor:
    x = _as_tensor(x)
    if x.shape[0] != 1:
        raise ShapeError(f"cannot drop batch axis of size {x.shape[0]}")
    return _make(x.data[0], (x,), "drop_batch_axis", lambda g: (g[None],))


def _conv(x, w, padding: int, dilation: int, spatial: int, name: str) -> Tensor:
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 2 + spatial:
        raise ShapeError(f"{name}: kernel must have {2 + spatial} dims, got {w.shape}")
    unbatched = x.data.ndim == 1 + spatial
    if not unbatched and x.data.ndim != 2 + spatial:
        raise ShapeError(f"{name}: input must have {1 + spatial} or {2 + spatial} dims, got {x.shape}")
    if (x.shape[0] if unbatched else x.shape[1]) != w.shape[1]:
        raise ShapeError(f"{name}: input has {x.shape[0 if unbatched else 1]} channels, "
                         f"kernel expects {w.shape[1]}")
    xb = add_batch_axis(x) if unbatched else x
    out = channels_first(conv_channels_last(channels_last(xb), w, padding, dilation))
    return drop_batch_axis(out) if unbatched else out


def conv1d(x, kernel, padding: int = 1, dilation: int = 1) -> Tensor:
    """Stride-1 1-D cross-correlation. x: (C, L) or (N, C, L); kernel: (O, C, K)."""
    return _conv(x, kernel, padding, dilation, 1, "conv1d")


def conv2d(x, kernel, padding: int = 1, dilation: int = 1) -> Tensor:
    """Stride-1 2-D cross-correlation. x: (C, H, W) or (N, C, H, W); kernel: (O, C, Kh, Kw)."""
    return _conv(x, kernel, padding, dilation, 2, "conv2d")


# --- loss ------------------------------------------------------------------

def per_position_cross_entropy(logits, target) -> Tensor:
    """Mean two-class cross-entropy over every output position.

    `logits` has the class axis first (2, *P) or second when batched
    (N, 2, *P); `target` holds {0, 1} with the matching position shape.
    """
    logits = _as_tensor(logits)
    t = np.asarray(target)
    z = logits.data
    cls_axis = 0 if z.ndim == t.ndim + 1 and z.shape[0] == 2 and z.shape[1:] == t.shape else None
    if cls_axis is None:
        if z.ndim == t.ndim + 1 and z.shape[1] == 2 and z.shape[:1] + z.shape[2:] == t.shape:
            cls_axis = 1
        else:
            raise ShapeError(f"cross-entropy: logits {z.shape} do not match target {t.shape}")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("cross-entropy: target values must be 0 or 1")
    t = t.astype(bool)
    z0 = np.take(z, 0, axis=cls_axis)
    z1 = np.take(z, 1, axis=cls_axis)
    hi = np.maximum(z0, z1)
    lse = hi + np.log(np.exp(z0 - hi) + np.exp(z1 - hi))
    picked = np.where(t, z1, z0)
    n = picked.size
    loss = np.asarray((lse - picked).sum() / n, dtype=z.dtype)

    def _bw(g):
        p1 = np.exp(z1 - lse)
        d1 = (p1 - t) * (g / n)
        return (np.stack([-d1, d1], axis=cls_axis).astype(z.dtype, copy=False),)

    return _make(loss, (logits,), "cross_entropy", _bw)


# --- verification ----------------------------------------------------------

def grad_check(f, params: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    `f` maps the parameter tensor to a scalar Tensor and must be
    deterministic. The error per coordinate is
    |autodiff - fd| / max(1, |fd|).
    """
    params.data = np.ascontiguousarray(params.data)
    params.grad = None
    params.requires_grad = True
    loss = f(params)
    backward(loss)
    auto = np.zeros_like(params.data) if params.grad is None else params.grad.copy()
    params.grad = None
    flat = params.data.reshape(-1)
    fd = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(params).data)
            flat[i] = orig - eps
            down = float(f(params).data)
            flat[i] = orig
            fd[i] = (up - down) / (2 * eps)
    err = np.abs(auto.reshape(-1) - fd) / np.maximum(1.0, np.abs(fd))
    return float(err.max()) if err.size else 0.0
