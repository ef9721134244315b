"""Recurrent and feed-forward residual networks for the three tasks.

Layout shared by every model: one encoder conv, a stack of 4-layer residual
blocks (skip every two layers), and a 3-layer conv head producing two logits
per position. The recurrent variant owns a single block that it applies
repeatedly; the feed-forward variant owns one block per application.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .tensor import Tensor, add, add_batch_axis, channels_first, channels_last, conv_channels_last, drop_batch_axis, no_grad, relu

TASKS = ("prefix", "maze", "chess")
VARIANTS = ("recurrent", "feedforward")

_TASK_DEFAULTS = {
    "prefix": dict(input_channels=1, width=120, head_channels=(60, 30, 2)),
    "maze": dict(input_channels=3, width=128, head_channels=(32, 8, 2)),
    "chess": dict(input_channels=12, width=512, head_channels=(32, 8, 2)),
}


@dataclass(frozen=True)
class NetSpec:
    """Architecture description.

    `iterations` is the train-time iteration count k for recurrent nets and
    the number of residual blocks for feed-forward nets.
    """

    task: str
    variant: str = "recurrent"
    width: int = 0
    iterations: int = 10
    dilation: int = 1
    input_channels: int = 0
    head_channels: tuple[int, ...] = field(default=())
    kernel_size: int = 3

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        defaults = _TASK_DEFAULTS[self.task]
        if not self.width:
            object.__setattr__(self, "width", defaults["width"])
        if not self.input_channels:
            object.__setattr__(self, "input_channels", defaults["input_channels"])
        if not self.head_channels:
            object.__setattr__(self, "head_channels", defaults["head_channels"])
        object.__setattr__(self, "head_channels", tuple(int(c) for c in self.head_channels))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.width < 1:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")
        if len(self.head_channels) != 3 or self.head_channels[-1] != 2:
            raise ValueError(f"head must be 3 layers ending in 2 channels, got {self.head_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    @property
    def spatial_dims(self) -> int:
        return 1 if self.task == "prefix" else 2

    @property
    def effective_depth(self) -> int:
        return effective_depth(self.iterations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_channels"] = list(self.head_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NetSpec:
        d = dict(d)
        if "head_channels" in d:
            d["head_channels"] = tuple(d["head_channels"])
        return cls(**d)


def effective_depth(iterations: int) -> int:
    """Conv layers executed: encoder + 4 per block/iteration + 3 head layers."""
    return 1 + 4 * iterations + 3


def blocks_for_depth(depth: int) -> int:
    if depth < 8 or (depth - 4) % 4:
        raise ValueError(f"depth {depth} is not of the form 4k + 4 with k >= 1")
    return (depth - 4) // 4


@dataclass
class IterationTrace:
    logits: list[np.ndarray]
    confidences: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.logits)


class Net:
    def __init__(self, spec: NetSpec, encoder: Tensor, blocks: list[list[Tensor]], head: list[Tensor]):
        self.spec = spec
        self.encoder = encoder
        self.blocks = blocks
        self.head = head
        self.conv_calls = 0
        self._pad = spec.dilation * (spec.kernel_size - 1) // 2

    # parameters -------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("encoder", self.encoder)]
        for b, block in enumerate(self.blocks):
            out += [(f"block{b}.conv{j}", w) for j, w in enumerate(block)]
        out += [(f"head{j}", w) for j, w in enumerate(self.head)]
        return out

    def parameters(self) -> list[Tensor]:
        return [w for _, w in self.named_parameters()]

    def zero_grad(self):
        for w in self.parameters():
            w.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: w.data.copy() for name, w in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            raise KeyError(f"parameter names differ: {sorted(set(own) ^ set(state))}")
        for name, w in own.items():
            arr = np.asarray(state[name])
            if arr.shape != w.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {w.shape}")
            w.data = arr.astype(w.dtype, copy=True)

    def astype(self, dtype) -> Net:
        for w in self.parameters():
            w.data = w.data.astype(dtype)
            w.grad = None
        return self

    @property
    def dtype(self):
        return self.encoder.dtype

    # forward ----------------------------------------------------------
    def conv(self, x, w):
        self.conv_calls += 1
        return conv_channels_last(x, w, padding=self._pad, dilation=self.spec.dilation)

    def encode(self, x: Tensor) -> Tensor:
        return relu(self.conv(channels_last(x), self.encoder))

    def block(self, h: Tensor, weights: list[Tensor]) -> Tensor:
        for j in (0, 2):
            out = relu(self.conv(h, weights[j]))
            out = self.conv(out, weights[j + 1])
            h = relu(add(out, h))
        return h

    def decode(self, h: Tensor) -> Tensor:
        out = relu(self.conv(h, self.head[0]))
        out = relu(self.conv(out, self.head[1]))
        return channels_first(self.conv(out, self.head[2]))

    def _check_input(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        nd = self.spec.spatial_dims
        if x.data.ndim not in (nd + 1, nd + 2):
            raise ValueError(f"{self.spec.task} net expects {nd + 1}-d or batched input, got {x.shape}")
        ch = x.shape[0] if x.data.ndim == nd + 1 else x.shape[1]
        if ch != self.spec.input_channels:
            raise ValueError(f"expected {self.spec.input_channels} input channels, got {ch}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        return x

    def iterate(self, x, m: int, keep_all: bool = False):
        """Run the body for `m` iterations; return final logits or all per-iteration logits.

        Accepts (C, *S) or batched (N, C, *S) input; logits mirror the batching.
        """
        x = self._check_input(x)
        unbatched = x.data.ndim == self.spec.spatial_dims + 1
        if unbatched:
            x = add_batch_axis(x)
        outs = self._iterate(x, m, keep_all)
        if unbatched:
            outs = [drop_batch_axis(o) for o in outs] if keep_all else drop_batch_axis(outs)
        return outs

    def _iterate(self, x: Tensor, m: int, keep_all: bool):
        if m < 1:
            raise ValueError("iterations must be >= 1")
        if self.spec.variant == "feedforward" and m != len(self.blocks):
            raise ValueError(f"feed-forward net has {len(self.blocks)} blocks, cannot run {m} iterations")
        h = self.encode(x)
        outs = []
        for i in range(m):
            weights = self.blocks[0] if self.spec.variant == "recurrent" else self.blocks[i]
            h = self.block(h, weights)
            if keep_all:
                outs.append(self.decode(h))
        return outs if keep_all else self.decode(h)

    def __call__(self, x) -> Tensor:
        return forward(self, x)

    def __repr__(self):
        s = self.spec
        return f"Net({s.task}, {s.variant}, width={s.width}, k={s.iterations}, params={param_count(self)})"


def _kaiming(rng: np.random.Generator, shape, gain: float) -> Tensor:
    fan_in = int(np.prod(shape[1:]))
    w = rng.standard_normal(shape) * (gain / np.sqrt(fan_in))
    return Tensor(w, requires_grad=True)


# Gain 1 rather than the ReLU-standard sqrt(2): with no normalization layers, the
# sqrt(2) scale compounds through the residual stack and the initial logits explode.
INIT_GAIN = 1.0


def build(spec: NetSpec, seed: int = 0, gain: float | None = None) -> Net:
    """Create a network with fan-in scaled normal kernels drawn from `seed`.

    Kernel std is gain / sqrt(fan_in); the default gain is INIT_GAIN.
    """
    gain = INIT_GAIN if gain is None else gain
    rng = np.random.default_rng(seed)
    ks = (spec.kernel_size,) * spec.spatial_dims
    enc = _kaiming(rng, (spec.width, spec.input_channels) + ks, gain)
    n_blocks = 1 if spec.variant == "recurrent" else spec.iterations
    blocks = [[_kaiming(rng, (spec.width, spec.width) + ks, gain) for _ in range(4)] for _ in range(n_blocks)]
    head = []
    c_in = spec.width
    for c_out in spec.head_channels:
        head.append(_kaiming(rng, (c_out, c_in) + ks, gain))
        c_in = c_out
    return Net(spec, enc, blocks, head)


def forward(net: Net, x) -> Tensor:
    """Training-time forward: k iterations (or all blocks), head applied once."""
    return net.iterate(x, net.spec.iterations)


def forward_iterations(net: Net, x, m: int) -> IterationTrace:
    """Apply the recurrent block `m` times and read out the head after each iteration."""
    if net.spec.variant != "recurrent" and m != len(net.blocks):
        raise ValueError(f"feed-forward net has {len(net.blocks)} blocks, cannot run {m} iterations")
    with no_grad():
        outs = net.iterate(x, m, keep_all=True)
    return IterationTrace([o.data for o in outs])


def param_count(net: Net) -> int:
    return int(sum(w.data.size for w in net.parameters()))


def receptive_radius(spec: NetSpec, m: int | None = None) -> int:
    """Half-width of the input window seen by one output position after `m` iterations."""
    m = spec.iterations if m is None else m
    return effective_depth(m) * spec.dilation * (spec.kernel_size - 1) // 2


def with_iterations(spec: NetSpec, k: int) -> NetSpec:
    return replace(spec, iterations=k)
