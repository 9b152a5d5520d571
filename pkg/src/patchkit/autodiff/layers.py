"""Neural network layers built on the autodiff tensor core.

All parameters are float64 tensors with ``requires_grad`` set. Layers
are deterministic given their inputs, parameters, mode, and, where
randomness is involved (dropout), an explicit numpy Generator.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "BatchNorm1d",
    "Conv1d",
    "ConvTranspose1d",
    "Dense",
    "Dropout",
    "GELU",
    "LeakyReLU",
    "Module",
    "ReLU",
    "Sequential",
    "frozen",
]


@contextmanager
def frozen(*modules: "Module"):
    """Temporarily clear ``requires_grad`` on all parameters of ``modules``.

    Gradients still flow through the frozen layers to their inputs; only
    the parameter gradients are skipped.
    """
    params = [p for m in modules for p in m.parameters().values()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


class Module:
    """Named container of parameters and submodules with a training flag."""

    def __init__(self, name: str = ""):
        self.name = name or type(self).__name__.lower()
        self.training = True
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def register_parameter(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r} in {self.name}")
        param = Tensor(value, requires_grad=True)
        self._params[name] = param
        return param

    def register_module(self, name: str, module: "Module") -> "Module":
        if name in self._modules:
            raise ValueError(f"duplicate submodule name {name!r} in {self.name}")
        self._modules[name] = module
        return module

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        """Flat mapping of dotted parameter paths to tensors."""
        out: dict[str, Tensor] = {}
        for name, param in self._params.items():
            out[prefix + name] = param
        for name, module in self._modules.items():
            out.update(module.parameters(prefix + name + "."))
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters().values():
            param.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameter values plus non-trainable buffers (for checkpoints)."""
        out = {name: p.data for name, p in self.parameters().items()}
        out.update(self.buffers())
        return out

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, module in self._modules.items():
            out.update(module.buffers(prefix + name + "."))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, param in self.parameters().items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            if arrays[name].shape != param.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: "
                    f"{arrays[name].shape} vs {param.data.shape}"
                )
            param.data = arrays[name].astype(np.float64).copy()
        self._load_buffers(arrays, "")

    def _load_buffers(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        for name, module in self._modules.items():
            module._load_buffers(arrays, prefix + name + ".")

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        return self.forward(x, rng)

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    """Affine layer: (B, n_in) -> (B, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out
        self.weight = self.register_parameter("weight", _uniform_init(rng, (n_in, n_out), n_in))
        self.bias = self.register_parameter("bias", _uniform_init(rng, (n_out,), n_in))

    def forward(self, x, rng=None):
        return T.matmul(x, self.weight) + self.bias


class Conv1d(Module):
    """1-D convolution: (B, C_in, L) -> (B, C_out, L_out).

    Stride, kernel, and padding are fixed at construction; padding is the
    symmetric amount needed for L_out = ceil(L / stride) at the nominal
    input length when ``padding`` is None.
    """

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int,
        rng: np.random.Generator,
        padding: int | None = None,
        name: str = "conv",
    ):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride = kernel, stride
        self.padding = (kernel - 1) // 2 if padding is None else padding
        fan_in = c_in * kernel
        self.weight = self.register_parameter(
            "weight", _uniform_init(rng, (c_out, c_in, kernel), fan_in)
        )
        self.bias = self.register_parameter("bias", _uniform_init(rng, (c_out,), fan_in))

    def forward(self, x, rng=None):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    """1-D transposed convolution: (B, C_in, L) -> (B, C_out, L_out)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int,
        rng: np.random.Generator,
        padding: int | None = None,
        output_padding: int = 0,
        name: str = "tconv",
    ):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride = kernel, stride
        self.padding = (kernel - 1) // 2 if padding is None else padding
        self.output_padding = output_padding
        fan_in = c_in * kernel
        self.weight = self.register_parameter(
            "weight", _uniform_init(rng, (c_in, c_out, kernel), fan_in)
        )
        self.bias = self.register_parameter("bias", _uniform_init(rng, (c_out,), fan_in))

    def forward(self, x, rng=None):
        return T.conv_transpose1d(
            x, self.weight, self.bias, self.stride, self.padding, self.output_padding
        )


class ReLU(Module):
    def forward(self, x, rng=None):
        return T.relu(x)


class LeakyReLU(Module):
    def __init__(self, negative_slope: float = 0.01, name: str = "leakyrelu"):
        super().__init__(name)
        self.negative_slope = negative_slope

    def forward(self, x, rng=None):
        return T.leaky_relu(x, self.negative_slope)


class GELU(Module):
    def forward(self, x, rng=None):
        return T.gelu(x)


class Dropout(Module):
    """Inverted dropout; identity in evaluation mode."""

    def __init__(self, p: float = 0.1, name: str = "dropout"):
        super().__init__(name)
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p

    def forward(self, x, rng=None):
        if not self.training or self.p == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an explicit rng")
        keep = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(keep)


class BatchNorm1d(Module):
    """Per-channel normalization over (N, C) or (N, C, L) inputs.

    Training mode normalizes with batch statistics and updates running
    statistics with the configured momentum; evaluation mode uses the
    running statistics and is deterministic.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.register_parameter("gamma", np.ones(channels))
        self.beta = self.register_parameter("beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {
            prefix + "running_mean": self.running_mean,
            prefix + "running_var": self.running_var,
        }

    def _load_buffers(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        self.running_mean = arrays[prefix + "running_mean"].astype(np.float64).copy()
        self.running_var = arrays[prefix + "running_var"].astype(np.float64).copy()

    def forward(self, x, rng=None):
        reduce_axes = (0,) if x.data.ndim == 2 else (0, 2)
        shape = (1, self.channels) if x.data.ndim == 2 else (1, self.channels, 1)
        if self.training:
            mu = T.mean(x, axis=reduce_axes, keepdims=True)
            centered = x - mu
            var = T.mean(centered * centered, axis=reduce_axes, keepdims=True)
            self.running_mean += self.momentum * (mu.data.reshape(-1) - self.running_mean)
            self.running_var += self.momentum * (var.data.reshape(-1) - self.running_var)
            inv = (var + self.eps) ** -0.5
            xhat = centered * inv
        else:
            mu = Tensor(self.running_mean.reshape(shape))
            inv = Tensor(1.0 / np.sqrt(self.running_var.reshape(shape) + self.eps))
            xhat = (x - mu) * inv
        return xhat * self.gamma.reshape(shape) + self.beta.reshape(shape)


class Sequential(Module):
    def __init__(self, layers: list[Module], name: str = "seq"):
        super().__init__(name)
        self.layers = layers
        for i, layer in enumerate(layers):
            self.register_module(f"{i}.{layer.name}", layer)

    def forward(self, x, rng=None):
        for layer in self.layers:
            x = layer(x, rng)
        return x
