"""Layers, sequential networks and the two stock architectures.

Images travel through networks as tensors of shape (N, C, H, W); dense
layers take (N, features).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Layer:
    def parameters(self) -> list[Tensor]:
        return []

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def manifest(self) -> list[str]:
        raise NotImplementedError


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, zero=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = int(n_in), int(n_out)
        if zero:
            self.weight = Tensor(np.zeros((self.n_out, self.n_in)), requires_grad=True)
            self.bias = Tensor(np.zeros(self.n_out), requires_grad=True)
        else:
            self.weight = _uniform(rng, (self.n_out, self.n_in), self.n_in)
            self.bias = _uniform(rng, (self.n_out,), self.n_in)

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        if x.data.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"dense layer expects (N, {self.n_in}), got {x.shape}")
        return T.dense(x, self.weight, self.bias)

    def manifest(self):
        return [f"dense {self.n_in} {self.n_out}"]


class Conv2d(Layer):
    def __init__(self, c_in, c_out, kernel=3, rng=None, zero=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.kernel = int(c_in), int(c_out), int(kernel)
        if self.kernel % 2 == 0:
            raise ValueError("conv2d kernel size must be odd")
        shape = (self.c_out, self.c_in, self.kernel, self.kernel)
        fan_in = self.c_in * self.kernel * self.kernel
        if zero:
            self.weight = Tensor(np.zeros(shape), requires_grad=True)
            self.bias = Tensor(np.zeros(self.c_out), requires_grad=True)
        else:
            self.weight = _uniform(rng, shape, fan_in)
            self.bias = _uniform(rng, (self.c_out,), fan_in)

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        if x.data.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"conv2d expects (N, {self.c_in}, H, W), got {x.shape}")
        return T.conv2d(x, self.weight, self.bias)

    def manifest(self):
        return [f"conv2d {self.c_in} {self.c_out} {self.kernel}"]


class ReLU(Layer):
    def __call__(self, x):
        return T.relu(x)

    def manifest(self):
        return ["relu"]


class LeakyReLU(Layer):
    def __init__(self, slope=0.01):
        self.slope = float(slope)

    def __call__(self, x):
        return T.leaky_relu(x, self.slope)

    def manifest(self):
        return [f"leaky_relu {self.slope!r}"]


class UpsampleNearest(Layer):
    def __init__(self, factor=2):
        self.factor = int(factor)

    def __call__(self, x):
        return T.upsample_nearest(x, self.factor)

    def manifest(self):
        return [f"upsample_nearest {self.factor}"]


class ChannelNorm(Layer):
    def __init__(self, channels, eps=1e-5):
        self.channels = int(channels)
        self.eps = eps
        self.gamma = Tensor(np.ones(self.channels), requires_grad=True)
        self.beta = Tensor(np.zeros(self.channels), requires_grad=True)

    def parameters(self):
        return [self.gamma, self.beta]

    def __call__(self, x):
        if x.data.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(f"channel_norm expects (N, {self.channels}, H, W), got {x.shape}")
        return T.channel_norm(x, self.gamma, self.beta, self.eps)

    def manifest(self):
        return [f"channel_norm {self.channels}"]


class Reshape(Layer):
    """Reshape every sample; the batch axis is kept."""

    def __init__(self, *shape):
        self.shape = tuple(int(s) for s in shape)

    def __call__(self, x):
        return T.reshape(x, (x.shape[0],) + self.shape)

    def manifest(self):
        return ["reshape " + " ".join(str(s) for s in self.shape)]


class Residual(Layer):
    """``x + body(x)``."""

    def __init__(self, body: "Network"):
        self.body = body

    def parameters(self):
        return self.body.parameters()

    def __call__(self, x):
        return T.residual_add(x, self.body(x))

    def manifest(self):
        return ["residual {"] + ["  " + line for line in self.body.manifest()] + ["}"]


class Network(Layer):
    def __init__(self, layers=()):
        self.layers = list(layers)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def __call__(self, x):
        x = T.as_tensor(x)
        for layer in self.layers:
            x = layer(x)
        return x

    forward = __call__

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def manifest(self):
        out = []
        for layer in self.layers:
            out.extend(layer.manifest())
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def forward(net: Network, x) -> Tensor:
    return net(x)


def network_from_manifest(lines) -> Network:
    """Rebuild an architecture (with default initialization) from manifest lines."""
    lines = [ln.strip() for ln in lines if ln.strip() and not ln.strip().startswith("#")]
    net, pos = _parse_block(lines, 0)
    if pos != len(lines):
        raise ValueError("unbalanced residual block in manifest")
    return net


def _parse_block(lines, pos):
    layers = []
    while pos < len(lines):
        parts = lines[pos].split()
        name, args = parts[0], parts[1:]
        pos += 1
        if name == "}":
            return Network(layers), pos
        if name == "dense":
            layers.append(Dense(int(args[0]), int(args[1])))
        elif name == "conv2d":
            layers.append(Conv2d(int(args[0]), int(args[1]), int(args[2])))
        elif name == "relu":
            layers.append(ReLU())
        elif name == "leaky_relu":
            layers.append(LeakyReLU(float(args[0])))
        elif name == "upsample_nearest":
            layers.append(UpsampleNearest(int(args[0])))
        elif name == "channel_norm":
            layers.append(ChannelNorm(int(args[0])))
        elif name == "reshape":
            layers.append(Reshape(*(int(a) for a in args)))
        elif name == "residual":
            body, pos = _parse_block(lines, pos)
            layers.append(Residual(body))
        else:
            raise ValueError(f"unknown layer {name!r} in manifest")
    return Network(layers), pos


def build_denoiser(channels=16, depth=3, seed=0, kernel=3, residual=True, zero_last=False) -> Network:
    """Small CNN image-to-image map on (N, 1, H, W).

    ``depth`` counts convolutions. With ``residual`` the body is wrapped as
    ``x + body(x)``; with ``zero_last`` the final convolution starts at zero
    so the network starts as the identity (or as zero without ``residual``).
    """
    if channels < 1 or depth < 1:
        raise ValueError("channels and depth must be positive")
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    if depth == 1:
        layers.append(Conv2d(1, 1, kernel, rng, zero=zero_last))
    else:
        layers += [Conv2d(1, channels, kernel, rng), ReLU()]
        for _ in range(depth - 2):
            layers += [Conv2d(channels, channels, kernel, rng), ReLU()]
        layers.append(Conv2d(channels, 1, kernel, rng, zero=zero_last))
    body = Network(layers)
    return Network([Residual(body)]) if residual else body


def build_decoder(k, stages=2, seed=0, image_shape=(16, 16), channels=8, kernel=3) -> Network:
    """Upsampling decoder mapping latents (N, k) to images (N, 1, H, W).

    Each stage is nearest-neighbour 2x upsampling, a convolution, ReLU and
    channel normalization; a final 1x1 convolution mixes channels into one
    image. When ``k`` equals ``channels * h0 * w0`` the latent is reshaped
    directly into the coarsest feature map; otherwise a dense layer maps it
    there.
    """
    h, w = image_shape
    f = 2**stages
    if stages < 0 or h % f or w % f:
        raise ValueError(f"image shape {image_shape} not divisible by 2**{stages}")
    if k < 0 or channels < 1:
        raise ValueError("latent size must be >= 0 and channels >= 1")
    rng = np.random.default_rng(seed)
    h0, w0 = h // f, w // f
    layers: list[Layer] = []
    if k != channels * h0 * w0:
        layers.append(Dense(k, channels * h0 * w0, rng))
    layers.append(Reshape(channels, h0, w0))
    for _ in range(stages):
        layers += [UpsampleNearest(2), Conv2d(channels, channels, kernel, rng), ReLU(), ChannelNorm(channels)]
    layers.append(Conv2d(channels, 1, 1, rng))
    return Network(layers)
