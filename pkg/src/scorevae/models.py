"""Parameterised components: prior score model, time-dependent encoder,
corrector / conditional score network and the Gaussian VAE decoder."""

from __future__ import annotations

import math

import torch
from torch import nn

from . import diffproc
from .diffproc import SdeSpec
from .errors import NumericDivergence, ShapeError
from .ndiff import MLP, NetSpec, grad_input

LOG_SIGMA_MIN = -7.0
LOG_SIGMA_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _as_time(t, x: torch.Tensor) -> torch.Tensor:
    if not isinstance(t, torch.Tensor):
        t = torch.tensor(float(t), dtype=x.dtype)
    t = t.to(x.dtype).reshape(-1)
    return t.expand(x.shape[0]) if t.numel() == 1 else t


class ScoreModel(nn.Module):
    """Unconditional score s(x_t, t).

    With ``scale_by_sigma`` the network output is divided by the kernel std,
    so the net predicts (minus) the noise rather than the raw score.
    """

    def __init__(self, net_spec: NetSpec, sde: SdeSpec, generator=None, scale_by_sigma=True,
                 zero_last=True, dtype=torch.float32):
        super().__init__()
        if net_spec.in_width != net_spec.out_width:
            raise ShapeError("score network must map data dimension to itself")
        self.sde = sde
        self.scale_by_sigma = scale_by_sigma
        self.net = MLP(net_spec, generator, zero_last=zero_last, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.net.spec.in_width

    def forward(self, x, t):
        t = _as_time(t, x)
        out = self.net(x, t)
        if self.scale_by_sigma:
            out = out / diffproc.perturb_params(self.sde, t).sigma.reshape(-1, 1)
        return out

    def score(self, x, t):
        return self(x, t)


class TimeEncoder(nn.Module):
    """Diagonal Gaussian q_t(z | x_t) = N(mu(x_t, t), diag(sigma(x_t, t)^2)).

    With ``net_spec.time_features == 0`` the encoder ignores t; the VAE and
    DiffDecoder baselines use it that way. The output layer starts at zero,
    so an untrained encoder is the N(0, I) latent prior and contributes a
    zero score.
    """

    def __init__(self, net_spec: NetSpec, generator=None, dtype=torch.float32, zero_last=True):
        super().__init__()
        if net_spec.out_width % 2:
            raise ShapeError("encoder output width must be 2 * latent_dim")
        self.net = MLP(net_spec, generator, zero_last=zero_last, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.net.spec.in_width

    @property
    def latent_dim(self) -> int:
        return self.net.spec.out_width // 2

    def encode(self, x, t=0.0):
        t = _as_time(t, x) if self.net.spec.time_features else None
        out = self.net(x, t)
        mu, log_sigma = out[:, :self.latent_dim], out[:, self.latent_dim:]
        return mu, torch.exp(torch.clamp(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))

    def forward(self, x, t=0.0):
        return self.encode(x, t)

    def log_prob(self, z, x, t):
        mu, sigma = self.encode(x, t)
        return gaussian_logdensity(z, mu, sigma)

    def sample(self, x0, generator=None, noise=None, mean_latent=False):
        mu, sigma = self.encode(x0, 0.0)
        if mean_latent:
            return mu
        if noise is None:
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        return mu + sigma * noise


class ConditionalScoreModel(nn.Module):
    """Network (x_t, z, t) -> data-space vector.

    Serves as the DiffDecoder's conditional score and, zero-initialised,
    as the ScoreVAE+ corrector.
    """

    def __init__(self, dim: int, latent_dim: int, hidden: tuple[int, ...], sde: SdeSpec,
                 time_features: int = 4, activation="gelu", generator=None,
                 scale_by_sigma=True, zero_last=False, dtype=torch.float32):
        super().__init__()
        spec = NetSpec((dim + latent_dim, *hidden, dim), activation, time_features)
        self.dim, self.latent_dim = dim, latent_dim
        self.sde = sde
        self.scale_by_sigma = scale_by_sigma
        self.net = MLP(spec, generator, zero_last=zero_last, dtype=dtype)

    def forward(self, x, z, t):
        t = _as_time(t, x)
        out = self.net(torch.cat([x, z], dim=-1), t)
        if self.scale_by_sigma:
            out = out / diffproc.perturb_params(self.sde, t).sigma.reshape(-1, 1)
        return out


class Corrector(ConditionalScoreModel):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("zero_last", True)
        super().__init__(*args, **kwargs)


class VaeDecoder(nn.Module):
    """Mean of the Gaussian decoder; the covariance is fixed to the identity."""

    def __init__(self, net_spec: NetSpec, generator=None, zero_last=False, dtype=torch.float32):
        super().__init__()
        self.net = MLP(net_spec, generator, zero_last=zero_last, dtype=dtype)

    def forward(self, z):
        return self.net(z)


class VAE(nn.Module):
    def __init__(self, encoder: TimeEncoder, decoder: VaeDecoder):
        super().__init__()
        self.encoder, self.decoder = encoder, decoder


class DiffDecoder(nn.Module):
    """Conditional score network trained jointly with a t=0 encoder."""

    def __init__(self, encoder: TimeEncoder, score_net: ConditionalScoreModel):
        super().__init__()
        self.encoder, self.score_net = encoder, score_net


def gaussian_logdensity(z, mu, sigma):
    """Diagonal Gaussian log density summed over the last axis."""
    u = (z - mu) / sigma
    return (-0.5 * u * u - torch.log(sigma) - _HALF_LOG_2PI).sum(-1)


def score(model, x_t, t):
    out = model.score(x_t, t)
    if not torch.isfinite(out).all():
        raise NumericDivergence("score model produced non-finite output")
    return out


def encode(enc: TimeEncoder, x_t, t):
    return enc.encode(x_t, t)


def sample_latent(enc, x0, generator=None, mean_latent=False):
    return enc.sample(x0, generator, mean_latent=mean_latent)


def encoder_logdensity(enc, z, x_t, t):
    return enc.log_prob(z, x_t, t)


def encoder_score(enc, z, x_t, t, create_graph=False):
    """grad_x log q_t(z | x) for every row of the batch.

    ``enc`` may be any object with ``log_prob(z, x, t)`` built from torch ops.
    With ``create_graph`` the result stays differentiable in the encoder's
    parameters, which the encoder objective needs.
    """
    return grad_input(lambda x: enc.log_prob(z, x, t), x_t, create_graph=create_graph)


def vae_decode(dec: VaeDecoder, z):
    return dec(z)
