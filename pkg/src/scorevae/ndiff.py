"""Small dense networks with sinusoidal time features, plus gradient helpers.

Reverse-mode differentiation is delegated to torch autograd; this module
fixes the network family, the initialisation and the shape contracts the
rest of the package relies on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ShapeError


class Activation(str, enum.Enum):
    GELU = "gelu"
    TANH = "tanh"
    IDENTITY = "identity"


_ACT = {
    Activation.GELU: lambda h: torch.nn.functional.gelu(h),  # exact erf form
    Activation.TANH: torch.tanh,
    Activation.IDENTITY: lambda h: h,
}


@dataclass(frozen=True)
class NetSpec:
    """Layer widths run from input (without time features) to output.

    ``layer_widths=(2, 64, 64, 2)`` is a net with two hidden layers. The
    final layer is always linear.
    """

    layer_widths: tuple[int, ...]
    activation: Activation = Activation.GELU
    time_features: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ShapeError(f"need at least input and output widths >= 1, got {widths}")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.time_features < 0:
            raise ShapeError("time_features must be >= 0")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activation": self.activation.value,
                "time_features": self.time_features}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(tuple(d["layer_widths"]), Activation(d["activation"]), int(d["time_features"]))


def time_embedding(t: torch.Tensor, n_features: int) -> torch.Tensor:
    """[sin(2^k pi t), cos(2^k pi t)] for k < n_features, shape (batch, 2 n_features)."""
    freqs = math.pi * 2.0 ** torch.arange(n_features, dtype=t.dtype)
    ang = t.reshape(-1, 1) * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class MLP(nn.Module):
    def __init__(self, spec: NetSpec, generator: torch.Generator | None = None,
                 zero_last: bool = False, dtype=torch.float32):
        super().__init__()
        self.spec = spec
        widths = list(spec.layer_widths)
        widths[0] += 2 * spec.time_features
        self.layers = nn.ModuleList(
            nn.Linear(i, o, dtype=dtype) for i, o in zip(widths[:-1], widths[1:]))
        with torch.no_grad():
            for layer in self.layers:
                fan_in = layer.weight.shape[1]
                layer.weight.copy_(torch.randn(layer.weight.shape, generator=generator, dtype=dtype)
                                   * math.sqrt(2.0 / fan_in))
                layer.bias.zero_()
            if zero_last:
                self.layers[-1].weight.zero_()
        self._act = _ACT[spec.activation]

    def forward(self, x: torch.Tensor, t: torch.Tensor | float | None = None) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.spec.in_width:
            raise ShapeError(f"expected input of shape (batch, {self.spec.in_width}), "
                             f"got {tuple(x.shape)}")
        if self.spec.time_features:
            if t is None:
                raise ShapeError("network expects a time input")
            if not isinstance(t, torch.Tensor):
                t = torch.tensor(float(t), dtype=x.dtype)
            t = t.to(x.dtype).reshape(-1)
            if t.numel() == 1:
                t = t.expand(x.shape[0])
            elif t.numel() != x.shape[0]:
                raise ShapeError(f"time batch {t.numel()} does not match input batch {x.shape[0]}")
            x = torch.cat([x, time_embedding(t, self.spec.time_features)], dim=-1)
        h = x
        for layer in self.layers[:-1]:
            h = self._act(layer(h))
        return self.layers[-1](h)


def forward(net: MLP, x: torch.Tensor, t=None) -> torch.Tensor:
    return net(x, t)


def grad_input(scalar_fn, x: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
    """Gradient of ``scalar_fn(x)`` (a scalar, or a batch summed) with respect to x."""
    with torch.enable_grad():
        x = x.detach().requires_grad_(True) if not x.requires_grad else x
        out = scalar_fn(x)
        if out.dim() > 0:
            out = out.sum()
        (g,) = torch.autograd.grad(out, x, create_graph=create_graph)
    return g


def grad_params(scalar_fn, params) -> list[torch.Tensor]:
    """Gradient of the scalar ``scalar_fn()`` with respect to each tensor in ``params``.

    Parameters the scalar does not depend on get a zero gradient.
    """
    params = list(params)
    with torch.enable_grad():
        out = scalar_fn()
        grads = torch.autograd.grad(out, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def flat_parameters(module: nn.Module) -> np.ndarray:
    """Parameters in ``named_parameters`` order, as one float32 vector."""
    with torch.no_grad():
        parts = [p.detach().reshape(-1).to(torch.float32).numpy() for p in module.parameters()]
    return np.concatenate(parts) if parts else np.zeros(0, np.float32)


def load_flat_parameters(module: nn.Module, flat: np.ndarray) -> None:
    n = sum(p.numel() for p in module.parameters())
    if flat.size != n:
        raise ShapeError(f"module has {n} parameters, vector has {flat.size}")
    offset = 0
    with torch.no_grad():
        for p in module.parameters():
            k = p.numel()
            p.copy_(torch.from_numpy(np.ascontiguousarray(flat[offset:offset + k]))
                    .reshape(p.shape).to(p.dtype))
            offset += k


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


@dataclass
class Ema:
    """Exponential moving average of a module's parameters.

    The effective rate is min(rate, (1 + n) / (10 + n)) after n updates, so
    short runs are not dominated by the initial weights.
    """

    module: nn.Module
    rate: float = 0.999
    shadow: list[torch.Tensor] = field(init=False)
    n_updates: int = field(init=False, default=0)

    def __post_init__(self):
        self.shadow = [p.detach().clone() for p in self.module.parameters()]

    @torch.no_grad()
    def update(self):
        rate = min(self.rate, (1.0 + self.n_updates) / (10.0 + self.n_updates))
        self.n_updates += 1
        for s, p in zip(self.shadow, self.module.parameters()):
            s.mul_(rate).add_(p.detach(), alpha=1.0 - rate)

    @torch.no_grad()
    def copy_to(self, module: nn.Module):
        for s, p in zip(self.shadow, module.parameters()):
            p.copy_(s)
