"""Bayes-rule composition of a prior score and an encoder into a decoder score.

    grad log p(x_t | z) = grad log p(x_t) + grad log p(z | x_t)

The prior supplies the first term, autodiff of the encoder's log density
the second, and an optional corrector absorbs what the Gaussian encoder
family cannot represent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import torch

from . import diffproc
from .diffproc import DEFAULT_T_EPS, SdeSpec
from .errors import NumericDivergence
from .models import encoder_score


@dataclass
class ComposedScore:
    prior: Any  # has .score(x, t)
    encoder: Any  # has .log_prob(z, x, t) and .sample(x0, ...)
    corrector: Any = None  # callable (x, z, t), optional
    z: torch.Tensor | None = None

    def with_latent(self, z: torch.Tensor) -> "ComposedScore":
        return ComposedScore(self.prior, self.encoder, self.corrector, z)

    def __call__(self, x_t, t):
        return conditional_score(self, x_t, t)


def conditional_score(cs: ComposedScore, x_t, t, z=None, create_graph=False):
    """Sum of prior score, encoder score and corrector output.

    The prior is evaluated without tracking gradients: it is frozen
    whenever the composition is used.
    """
    z = cs.z if z is None else z
    if z is None:
        raise ValueError("composed score needs a latent condition z")
    with torch.no_grad():
        out = cs.prior.score(x_t, t)
    out = out + encoder_score(cs.encoder, z, x_t, t, create_graph=create_graph)
    if cs.corrector is not None:
        out = out + cs.corrector(x_t, z, t)
    return out


def reconstruct(cs: ComposedScore, spec: SdeSpec, x0: torch.Tensor, n_steps: int,
                generator: torch.Generator | None = None, t_eps: float = DEFAULT_T_EPS,
                mean_latent: bool = False) -> torch.Tensor:
    """Encode x0 to a latent and decode it with the conditional reverse SDE.

    Sampling starts from the unconditional N(0, I) prior.
    """
    with torch.no_grad():
        z = cs.encoder.sample(x0, generator, mean_latent=mean_latent).detach()
    conditioned = cs.with_latent(z)

    def field(x, t):
        s = conditional_score(conditioned, x, t).detach()
        if not torch.isfinite(s).all():
            raise NumericDivergence("composed score is non-finite")
        return s

    return diffproc.integrate_reverse(field, spec, n_steps, generator, n_samples=x0.shape[0],
                                      t_eps=t_eps, dtype=x0.dtype)
