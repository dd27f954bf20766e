"""Variance-preserving forward diffusion and reverse-time integration.

The forward process is

    dx = -1/2 beta(t) x dt + sqrt(beta(t)) dw,    beta linear in t,

whose transition kernel is N(a(t) x0, sigma(t)^2 I) with a^2 + sigma^2 = 1.
Functions accept python floats or torch tensors for ``t``; tensors are
broadcast against the leading (batch) axis of the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import torch

from .errors import DomainError, NumericDivergence

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_T_EPS = 1e-3


@dataclass(frozen=True)
class SdeSpec:
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_end: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise DomainError(
                f"need 0 < beta_min <= beta_max, got {self.beta_min}, {self.beta_max}")
        if self.t_end <= 0:
            raise DomainError(f"t_end must be positive, got {self.t_end}")
        if self.dim < 1:
            raise DomainError(f"dim must be >= 1, got {self.dim}")

    def with_dim(self, dim: int) -> "SdeSpec":
        return SdeSpec(self.beta_min, self.beta_max, self.t_end, dim)


class KernelParams(NamedTuple):
    """Signal coefficient ``a`` and noise std ``sigma`` of p(x_t | x_0)."""

    a: float | torch.Tensor
    sigma: float | torch.Tensor


def _check_time(spec: SdeSpec, t, lo: float = 0.0):
    if isinstance(t, torch.Tensor):
        if t.numel() == 0:
            return
        tmin, tmax = float(t.min()), float(t.max())
    else:
        tmin = tmax = float(t)
    if not (lo <= tmin and tmax <= spec.t_end) or math.isnan(tmin) or math.isnan(tmax):
        raise DomainError(f"t must lie in [{lo}, {spec.t_end}], got range [{tmin}, {tmax}]")


def _exp(v):
    return torch.exp(v) if isinstance(v, torch.Tensor) else math.exp(v)


def _sqrt(v):
    return torch.sqrt(v) if isinstance(v, torch.Tensor) else math.sqrt(v)


def _neg_expm1(v):
    # 1 - exp(-v), accurate for small v
    return -torch.expm1(-v) if isinstance(v, torch.Tensor) else -math.expm1(-v)


def beta(spec: SdeSpec, t):
    """Linear noise rate beta(t)."""
    _check_time(spec, t)
    return spec.beta_min + (t / spec.t_end) * (spec.beta_max - spec.beta_min)


def integrated_beta(spec: SdeSpec, t):
    """Closed-form integral of beta over [0, t]."""
    _check_time(spec, t)
    return spec.beta_min * t + 0.5 * (spec.beta_max - spec.beta_min) * t * t / spec.t_end


def perturb_params(spec: SdeSpec, t) -> KernelParams:
    big_b = integrated_beta(spec, t)
    return KernelParams(_exp(-0.5 * big_b), _sqrt(_neg_expm1(big_b)))


def diffusion(spec: SdeSpec, t):
    """g(t) = sqrt(beta(t))."""
    return _sqrt(beta(spec, t))


def drift(spec: SdeSpec, x: torch.Tensor, t) -> torch.Tensor:
    return -0.5 * _col(beta(spec, t), x) * x


def divergence_drift(spec: SdeSpec, t):
    """Divergence of the drift; independent of x because the drift is linear."""
    return -0.5 * beta(spec, t) * spec.dim


def _col(v, x: torch.Tensor):
    # reshape a per-sample coefficient so it broadcasts over trailing dims of x
    if isinstance(v, torch.Tensor) and v.dim() > 0:
        return v.reshape(v.shape + (1,) * (x.dim() - v.dim()))
    return v


def sample_perturbed(spec: SdeSpec, x0: torch.Tensor, t, generator: torch.Generator | None = None,
                     noise: torch.Tensor | None = None) -> torch.Tensor:
    """Draw x_t ~ N(a x0, sigma^2 I). ``noise`` overrides the standard-normal draw."""
    a, sigma = perturb_params(spec, t)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return _col(a, x0) * x0 + _col(sigma, x0) * noise


def transition_score(spec: SdeSpec, x_t: torch.Tensor, x0: torch.Tensor, t) -> torch.Tensor:
    """Score of the perturbation kernel, -(x_t - a x0) / sigma^2."""
    a, sigma = perturb_params(spec, t)
    var = sigma * sigma
    if (var <= 0).any() if isinstance(var, torch.Tensor) else var <= 0:
        raise DomainError("transition score is singular at t = 0 (sigma = 0)")
    return -(x_t - _col(a, x0) * x0) / _col(var, x_t)


def prior_logdensity(x: torch.Tensor) -> torch.Tensor:
    """Log density of the standard-normal prior, summed over the last axis."""
    d = x.shape[-1]
    return -0.5 * ((x * x).sum(-1) + d * LOG_2PI)


def reverse_step_em(spec: SdeSpec, x: torch.Tensor, t: float, dt: float, score: torch.Tensor,
                    generator: torch.Generator | None = None, stochastic: bool = True) -> torch.Tensor:
    """One Euler-Maruyama step of the reverse SDE, from t to t - dt."""
    if not 0 < dt <= t + 1e-12:
        raise DomainError(f"need 0 < dt <= t, got dt={dt}, t={t}")
    if not (torch.isfinite(x).all() and torch.isfinite(score).all()):
        raise NumericDivergence(f"non-finite state or score at t={t}", t=t)
    b = beta(spec, t)
    x_new = x - (-0.5 * b * x - b * score) * dt
    if stochastic:
        x_new = x_new + math.sqrt(b * dt) * torch.randn(x.shape, generator=generator, dtype=x.dtype)
    return x_new


def time_grid(spec: SdeSpec, n_steps: int, t_eps: float = DEFAULT_T_EPS) -> list[float]:
    """Uniform grid from t_end down to t_eps (n_steps + 1 points)."""
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    if not 0 <= t_eps < spec.t_end:
        raise DomainError(f"t_eps must lie in [0, {spec.t_end}), got {t_eps}")
    dt = (spec.t_end - t_eps) / n_steps
    return [spec.t_end - i * dt for i in range(n_steps)] + [t_eps]


def integrate_reverse(score_field: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
                      spec: SdeSpec, n_steps: int, generator: torch.Generator | None = None,
                      n_samples: int = 1, t_eps: float = DEFAULT_T_EPS,
                      x_init: torch.Tensor | None = None, dtype=torch.float64,
                      stochastic: bool = True) -> torch.Tensor:
    """Sample by integrating the reverse SDE from the N(0, I) prior at t_end to t_eps.

    ``score_field(x, t)`` receives the state batch and a per-sample time
    tensor. Returns an ``(n_samples, dim)`` tensor.
    """
    grid = time_grid(spec, n_steps, t_eps)
    if x_init is None:
        x = torch.randn((n_samples, spec.dim), generator=generator, dtype=dtype)
    else:
        x = x_init.clone()
    for i in range(n_steps):
        t, dt = grid[i], grid[i] - grid[i + 1]
        tt = torch.full((x.shape[0],), t, dtype=x.dtype)
        s = score_field(x, tt)
        if not torch.isfinite(s).all():
            raise NumericDivergence(f"score field returned non-finite values at step {i}, t={t:.6g}",
                                    step=i, t=t)
        x = reverse_step_em(spec, x, t, dt, s, generator, stochastic=stochastic)
    return x
