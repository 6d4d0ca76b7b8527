"""Small layer library on top of the tensor core.

Modules register parameters and submodules by attribute assignment; state
is flat name -> array, which is also the checkpoint layout. All parameter
initialization draws from an explicit generator so construction order fully
determines the weights.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for n, p in self._params.items():
            yield prefix + n, p
        for n, m in self._children.items():
            yield from m.named_parameters(prefix + n + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def requires_grad_(self, flag):
        for p in self.parameters():
            p.requires_grad = bool(flag)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise T.ShapeError(f"param {name}: {arr.shape} != {p.data.shape}")
            p.data = arr.copy()


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._items = []
        for m in mods:
            self.append(m)

    def append(self, m):
        self._children[str(len(self._items))] = m
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _param(arr):
    return Tensor(arr.astype(np.float32), requires_grad=True)


class Linear(Module):
    """Affine map on the trailing axis: x[..., cin] -> x[..., cout]."""

    def __init__(self, cin, cout, rng, bias=True):
        super().__init__()
        std = np.sqrt(1.0 / cin)
        self.w = _param(rng.standard_normal((cin, cout)) * std)
        self.b = _param(np.zeros(cout)) if bias else None

    def forward(self, x):
        out = T.matmul(x, self.w)
        return out + self.b if self.b is not None else out

    __call__ = forward


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        std = np.sqrt(2.0 / (cin * k * k))
        self.w = _param(rng.standard_normal((cout, cin, k, k)) * std)
        self.b = _param(np.zeros(cout)) if bias else None

    def forward(self, x):
        out = T.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        if self.b is not None:
            out = out + T.reshape(self.b, 1, -1, 1, 1)
        return out

    __call__ = forward


class GroupNorm(Module):
    """Single-group normalization over (C, H, W) with per-channel affine."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = _param(np.ones((1, channels, 1, 1)))
        self.beta = _param(np.zeros((1, channels, 1, 1)))

    def forward(self, x):
        return T.groupnorm(x, self.gamma, self.beta, eps=self.eps)

    __call__ = forward


class ResBlock(Module):
    """Two 3x3 convs with pre-norm SiLU, optional per-step embedding bias."""

    def __init__(self, cin, cout, rng, temb_dim=None):
        super().__init__()
        self.norm1 = GroupNorm(cin)
        self.conv1 = Conv2d(cin, cout, 3, rng)
        self.temb_proj = Linear(temb_dim, cout, rng) if temb_dim else None
        self.norm2 = GroupNorm(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng)
        self.skip = Conv2d(cin, cout, 1, rng, bias=False) if cin != cout else None

    def forward(self, x, temb=None):
        h = self.conv1(T.silu(self.norm1(x)))
        if temb is not None and self.temb_proj is not None:
            bias = self.temb_proj(T.silu(temb))
            h = h + T.reshape(bias, bias.shape[0], -1, 1, 1)
        h = self.conv2(T.silu(self.norm2(h)))
        s = self.skip(x) if self.skip is not None else x
        return h + s

    __call__ = forward


class Downsample(Module):
    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv = Conv2d(cin, cout, 4, rng, stride=2, pad=1)

    def forward(self, x):
        return self.conv(x)

    __call__ = forward


class Upsample(Module):
    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv = Conv2d(cin, cout, 3, rng)

    def forward(self, x):
        return self.conv(T.upsample2x(x))

    __call__ = forward
