"""Training objectives and the likelihood lower bound.

Every loss draws its Monte Carlo variables through :class:`Draws`, so two
losses can be evaluated on identical randomness by passing the same draws.
Per-sample ``*_terms`` functions are exposed next to the batch-mean losses;
tests use them with quadrature weights.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch

from . import diffproc
from .compose import ComposedScore, conditional_score
from .diffproc import DEFAULT_T_EPS, SdeSpec
from .errors import DomainError


class Weighting(str, enum.Enum):
    LIKELIHOOD = "likelihood"  # lambda(t) = g(t)^2 = beta(t)
    SIMPLE = "simple"  # lambda(t) = sigma(t)^2


def weight(spec: SdeSpec, kind: Weighting, t):
    kind = Weighting(kind)
    if kind is Weighting.LIKELIHOOD:
        return diffproc.beta(spec, t)
    return diffproc.perturb_params(spec, t).sigma ** 2


@dataclass
class Draws:
    """One (t, noise, latent noise) triple per data point."""

    t: torch.Tensor
    noise: torch.Tensor
    z_noise: torch.Tensor | None = None

    def __len__(self):
        return self.t.shape[0]


def sample_draws(n: int, dim: int, spec: SdeSpec, generator: torch.Generator | None = None,
                 latent_dim: int = 0, t_eps: float = DEFAULT_T_EPS, dtype=torch.float32) -> Draws:
    t = t_eps + (spec.t_end - t_eps) * torch.rand(n, generator=generator, dtype=dtype)
    noise = torch.randn((n, dim), generator=generator, dtype=dtype)
    z_noise = torch.randn((n, latent_dim), generator=generator, dtype=dtype) if latent_dim else None
    return Draws(t, noise, z_noise)


@dataclass
class LossReport:
    total: torch.Tensor
    dsm_term: torch.Tensor
    kl_term: torch.Tensor
    n_samples: int

    def item(self) -> dict:
        return {"total": float(self.total), "dsm": float(self.dsm_term), "kl": float(self.kl_term)}


def kl_diag_gaussian(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) per row (summed over the last axis)."""
    if (sigma <= 0).any():
        raise DomainError("sigma must be strictly positive")
    return 0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * torch.log(sigma)).sum(-1)


def _latent(encoder, x0, z_noise):
    mu, sigma = encoder.encode(x0, 0.0)
    return mu + sigma * z_noise, mu, sigma


def _draws(batch, spec, generator, latent_dim, t_eps, draws):
    if draws is None:
        draws = sample_draws(batch.shape[0], batch.shape[1], spec, generator, latent_dim,
                             t_eps, batch.dtype)
    if len(draws) != batch.shape[0]:
        raise ValueError("draws and batch sizes differ")
    return draws


def _residual_terms(spec, x0, draws, lam, score_fn):
    x_t = diffproc.sample_perturbed(spec, x0, draws.t, noise=draws.noise)
    target = diffproc.transition_score(spec, x_t, x0, draws.t)
    r = target - score_fn(x_t, draws.t)
    return 0.5 * lam * (r * r).sum(-1)


def dsm_terms(model, x0, spec, weighting, draws):
    lam = weight(spec, weighting, draws.t)
    return _residual_terms(spec, x0, draws, lam, model.score)


def dsm_loss(model, batch, spec: SdeSpec, weighting=Weighting.SIMPLE, generator=None,
             t_eps=DEFAULT_T_EPS, draws: Draws | None = None) -> LossReport:
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    draws = _draws(batch, spec, generator, 0, t_eps, draws)
    terms = dsm_terms(model, batch, spec, weighting, draws)
    zero = torch.zeros((), dtype=batch.dtype)
    return LossReport(terms.mean(), terms.mean(), zero, batch.shape[0])


def cde_terms(model, encoder, x0, spec, weighting, draws, deterministic=False):
    """Per-sample conditional DSM and KL terms.

    ``encoder`` is a Gaussian encoder (``encode`` returning mean and std) or,
    with ``deterministic``, any callable x0 -> z; the KL is then zero.
    """
    if deterministic:
        z = encoder(x0)
        kl = torch.zeros(x0.shape[0], dtype=x0.dtype)
    else:
        z, mu, sigma = _latent(encoder, x0, draws.z_noise)
        kl = kl_diag_gaussian(mu, sigma)
    lam = weight(spec, weighting, draws.t)
    dsm = _residual_terms(spec, x0, draws, lam, lambda x, t: model(x, z, t))
    return dsm, kl


def cde_loss(model, encoder, batch, spec: SdeSpec, weighting=Weighting.SIMPLE, generator=None,
             beta: float = 0.0, t_eps=DEFAULT_T_EPS, draws: Draws | None = None,
             deterministic=False) -> LossReport:
    if beta < 0:
        raise DomainError("beta must be >= 0")
    latent = 0 if deterministic else encoder.latent_dim
    draws = _draws(batch, spec, generator, latent, t_eps, draws)
    dsm, kl = cde_terms(model, encoder, batch, spec, weighting, draws, deterministic)
    return LossReport(dsm.mean() + beta * kl.mean(), dsm.mean(), kl.mean(), batch.shape[0])


def scorevae_terms(encoder, prior, x0, spec, draws, corrector=None, train_encoder=True):
    """Per-sample likelihood-weighted DSM residual of the composed score, and KL at t=0.

    The latent is drawn from the t=0 encoder on clean x0 (reparameterised),
    then the composed score is matched to the kernel score at (x_t, t).
    """
    with torch.set_grad_enabled(train_encoder and torch.is_grad_enabled()):
        z, mu, sigma = _latent(encoder, x0, draws.z_noise)
        kl = kl_diag_gaussian(mu, sigma)
    cs = ComposedScore(prior, encoder, corrector, z)
    lam = diffproc.beta(spec, draws.t)
    dsm = _residual_terms(
        spec, x0, draws, lam,
        lambda x, t: conditional_score(cs, x, t, create_graph=train_encoder))
    return dsm, kl


def scorevae_loss(encoder, prior, batch, spec: SdeSpec, beta: float = 0.01, generator=None,
                  t_eps=DEFAULT_T_EPS, draws: Draws | None = None, corrector=None) -> LossReport:
    """Encoder objective: mean residual term + beta * mean KL. Gradients reach the encoder only."""
    if beta < 0:
        raise DomainError("beta must be >= 0")
    draws = _draws(batch, spec, generator, _latent_dim(encoder, batch), t_eps, draws)
    dsm, kl = scorevae_terms(encoder, prior, batch, spec, draws, corrector)
    return LossReport(dsm.mean() + beta * kl.mean(), dsm.mean(), kl.mean(), batch.shape[0])


def corrector_loss(corrector, encoder, prior, batch, spec: SdeSpec, beta: float = 0.01,
                   generator=None, t_eps=DEFAULT_T_EPS, draws: Draws | None = None) -> LossReport:
    """Same objective with the corrector added; encoder and prior stay frozen.

    The KL term is reported (and included in ``total``) but carries no
    gradient, since it does not depend on the corrector.
    """
    draws = _draws(batch, spec, generator, _latent_dim(encoder, batch), t_eps, draws)
    dsm, kl = scorevae_terms(encoder, prior, batch, spec, draws, corrector, train_encoder=False)
    kl = kl.detach()
    return LossReport(dsm.mean() + beta * kl.mean(), dsm.mean(), kl.mean(), batch.shape[0])


def vae_terms(encoder, decoder, x0, z_noise):
    z, mu, sigma = _latent(encoder, x0, z_noise)
    diff = x0 - decoder(z)
    return 0.5 * (diff * diff).sum(-1), kl_diag_gaussian(mu, sigma)


def vae_beta_elbo(encoder, decoder, batch, beta: float = 0.01, generator=None,
                  z_noise: torch.Tensor | None = None) -> LossReport:
    """Negative beta-ELBO with a unit-covariance Gaussian decoder, up to (d/2) ln 2 pi."""
    if beta < 0:
        raise DomainError("beta must be >= 0")
    if z_noise is None:
        z_noise = torch.randn((batch.shape[0], encoder.latent_dim), generator=generator,
                              dtype=batch.dtype)
    rec, kl = vae_terms(encoder, decoder, batch, z_noise)
    return LossReport(rec.mean() + beta * kl.mean(), rec.mean(), kl.mean(), batch.shape[0])


def _latent_dim(encoder, batch):
    if hasattr(encoder, "latent_dim"):
        return encoder.latent_dim
    return encoder.encode(batch[:1], 0.0)[0].shape[-1]


@dataclass
class BoundEstimate:
    value: float
    stderr: float
    kl: float


def likelihood_bound(encoder, prior, x0: torch.Tensor, spec: SdeSpec, n_mc: int,
                     generator: torch.Generator | None = None, corrector=None,
                     t_eps: float = 1e-4, chunk: int = 100_000) -> BoundEstimate:
    """Monte Carlo lower bound on ln p(x0) under the composed decoder.

        E_z[ E ln pi(x_T) + 1/2 int_0^T E( -g^2 |target - s|^2 + g^2 |target|^2 + 2 div f ) dt ]
        - KL(q_0(z | x0) || N(0, I))

    with the time integral estimated as (T - t_eps) E_{t ~ U(t_eps, T)}.
    """
    if n_mc < 1:
        raise DomainError("n_mc must be >= 1")
    x0 = x0.reshape(1, -1)
    dim = x0.shape[1]
    dtype = x0.dtype
    with torch.no_grad():
        mu, sigma = encoder.encode(x0, 0.0)
        kl = float(kl_diag_gaussian(mu, sigma)[0])
    span = spec.t_end - t_eps
    a_end, s_end = diffproc.perturb_params(spec, spec.t_end)
    values = []
    done = 0
    while done < n_mc:
        n = min(chunk, n_mc - done)
        draws = sample_draws(n, dim, spec, generator, mu.shape[-1], t_eps, dtype)
        x_end = a_end * x0 + s_end * torch.randn((n, dim), generator=generator, dtype=dtype)
        xs = x0.expand(n, dim)
        z = mu + sigma * draws.z_noise
        cs = ComposedScore(prior, encoder, corrector, z)
        x_t = diffproc.sample_perturbed(spec, xs, draws.t, noise=draws.noise)
        target = diffproc.transition_score(spec, x_t, xs, draws.t)
        s = conditional_score(cs, x_t, draws.t).detach()
        g2 = diffproc.beta(spec, draws.t)
        r = target - s
        inner = (-g2 * (r * r).sum(-1) + g2 * (target * target).sum(-1)
                 + 2.0 * diffproc.divergence_drift(spec.with_dim(dim), draws.t))
        values.append(diffproc.prior_logdensity(x_end) + 0.5 * span * inner)
        done += n
    v = torch.cat(values).to(torch.float64)
    return BoundEstimate(float(v.mean()) - kl, float(v.std() / math.sqrt(n_mc)), kl)
