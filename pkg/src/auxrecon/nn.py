"""Module tree, parameter naming, and the transformer building blocks."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Parameter, Tensor, gelu, layernorm, softmax


class Module:
    """Parameters and sub-modules are discovered from instance attributes.

    Attribute insertion order fixes the parameter order, so naming and
    checkpoint layout are deterministic. Lists of modules are indexed
    (``blocks.0.attn.q.weight``).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                value.name = name
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{name}.{i}"
                        yield item.name, item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in state.items():
            if name not in own:
                continue
            p = own[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match parameter {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype).copy()


def _param(arr, dtype) -> Parameter:
    return Parameter(np.asarray(arr, dtype=dtype), dtype=dtype)


class Linear(Module):
    """y = x W + b with W stored as [in, out]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64, zero: bool = False):
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(d_out), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        self.gain = _param(np.ones(dim), dtype)
        self.bias = _param(np.zeros(dim), dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gain, self.bias, self.eps)


class Attention(Module):
    """Multi-head self-attention over the token axis of a ``[G, T, dim]`` input.

    Groups never exchange information; the caller decides what a group is
    (one frame, or all frames flattened together).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        g, t, d = x.shape
        h = self.heads
        hd = d // h

        def split(y):
            return y.reshape(g, t, h, hd).transpose(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
        out = softmax(scores, axis=-1) @ v
        return self.proj(out.transpose(0, 2, 1, 3).reshape(g, t, d))


class TransformerLayer(Module):
    """Pre-norm attention + 2-layer GELU feed-forward, both residual."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, dtype=np.float64):
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = Attention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.fc1 = Linear(dim, dim * mlp_ratio, rng, dtype)
        self.fc2 = Linear(dim * mlp_ratio, dim, rng, dtype)

    def feed_forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(self.norm2(x))))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.feed_forward(x)
