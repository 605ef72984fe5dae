"""Parameter containers: a minimal ``Module`` plus conv and norm layers."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .functional import ConvSpec
from .tensor import Parameter, Tensor, default_dtype, relu


class Module:
    """Attribute-registered parameters, buffers and children.

    Registration order is attribute assignment order, which keeps
    ``named_parameters`` deterministic for checkpoints and optimizers.
    """

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in getattr(self, "_buffers", {}).items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unknown = set(state) - set(own) - set(bufs)
        if missing or unknown:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unknown={sorted(unknown)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)
        for name, b in bufs.items():
            b[...] = state[name]

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for key, buf in getattr(m, "_buffers", {}).items():
                m._buffers[key] = buf.astype(dtype)
        return self

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def reduced_width(channels: int) -> int:
    """Hidden width of attention perceptrons: reduction ratio max(C/4, 1)."""
    ratio = max(channels // 4, 1)
    return max(channels // ratio, 1)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


class Conv2d(Module):
    def __init__(self, spec: ConvSpec, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        self.spec = spec
        fan_in = spec.weight_shape[1] * spec.kernel_h * spec.kernel_w
        if zero_init:
            w = np.zeros(spec.weight_shape, dtype=default_dtype())
        else:
            w = kaiming_uniform(rng, spec.weight_shape, fan_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(spec.out_channels, dtype=default_dtype())) if spec.bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.spec, self.weight, self.bias)


def conv3x3(cin, cout, rng, dilation=1, bias=True) -> Conv2d:
    return Conv2d(ConvSpec.same(cin, cout, 3, dilation, bias=bias), rng)


def conv1x1(cin, cout, rng, bias=True) -> Conv2d:
    return Conv2d(ConvSpec.same(cin, cout, 1, bias=bias), rng)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        dt = default_dtype()
        self.weight = Parameter(np.ones(channels, dtype=dt))
        self.bias = Parameter(np.zeros(channels, dtype=dt))
        self._buffers = {"running_mean": np.zeros(channels, dtype=dt),
                         "running_var": np.ones(channels, dtype=dt)}
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.weight, self.bias, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        dt = default_dtype()
        self.weight = Parameter(np.ones(channels, dtype=dt))
        self.bias = Parameter(np.zeros(channels, dtype=dt))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class ConvBNReLU(Module):
    def __init__(self, spec: ConvSpec, rng):
        super().__init__()
        self.conv = Conv2d(spec, rng)
        self.bn = BatchNorm2d(spec.out_channels)

    def forward(self, x):
        return relu(self.bn(self.conv(x)))
