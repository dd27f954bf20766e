"""Linear-Gaussian world with closed-form scores.

Data x0 ~ N(m, C), latent z | x0 ~ N(A x0 + b, s^2 I), diffused with the VP
kernel x_t = a x0 + sigma eps. Every density in play is Gaussian, so the
marginal, posterior and conditional scores are all exact. The conditional
score is computed straight from the joint of (x_t, z), not as a sum, so the
Bayes identity can be tested against it.

Everything here is numpy float64 and deliberately avoids the torch code it
is used to check. ``AnalyticPrior`` and ``AnalyticEncoder`` are thin torch
adapters so that the analytic components can be dropped into the model
interfaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .diffproc import SdeSpec
from .errors import DomainError, NumericDivergence

MAX_CONDITION = 1e8


@dataclass(frozen=True)
class GaussianWorld:
    m: np.ndarray
    C: np.ndarray
    A: np.ndarray
    b: np.ndarray
    s: float
    spec: SdeSpec

    def __post_init__(self):
        m = np.asarray(self.m, float).reshape(-1)
        C = np.atleast_2d(np.asarray(self.C, float))
        A = np.atleast_2d(np.asarray(self.A, float))
        b = np.asarray(self.b, float).reshape(-1)
        d, k = m.size, b.size
        if C.shape != (d, d) or A.shape != (k, d):
            raise DomainError(f"inconsistent shapes m{m.shape} C{C.shape} A{A.shape} b{b.shape}")
        if not np.allclose(C, C.T, atol=1e-12):
            raise DomainError("data covariance must be symmetric")
        eig = np.linalg.eigvalsh(C)
        if eig.min() <= 0:
            raise DomainError("data covariance must be positive definite")
        if eig.max() / eig.min() > MAX_CONDITION:
            raise DomainError("data covariance is too ill-conditioned")
        if self.s <= 0:
            raise DomainError("encoder noise std must be positive")
        for name, val in (("m", m), ("C", C), ("A", A), ("b", b)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "s", float(self.s))
        if self.spec.dim != d:
            object.__setattr__(self, "spec", self.spec.with_dim(d))

    @property
    def dim(self) -> int:
        return self.m.size

    @property
    def latent_dim(self) -> int:
        return self.b.size


def kernel(spec: SdeSpec, t):
    """(a, sigma^2) of the VP kernel, computed independently of diffproc."""
    t = np.asarray(t, float)
    if t.size and (t.min() < 0 or t.max() > spec.t_end):
        raise DomainError(f"t outside [0, {spec.t_end}]")
    big_b = spec.beta_min * t + 0.5 * (spec.beta_max - spec.beta_min) * t**2 / spec.t_end
    return np.exp(-0.5 * big_b), -np.expm1(-big_b)


def _spd_solve(M, v, what):
    """Solve M u = v for stacks of symmetric positive definite M."""
    ev = np.linalg.eigvalsh(M)
    if (ev[..., 0] <= 0).any() or (ev[..., -1] / ev[..., 0] > 1e12).any():
        raise NumericDivergence(f"{what} is numerically singular")
    return np.linalg.solve(M, v[..., None])[..., 0]


def _batch(x, t):
    """Promote x to (B, n) and t to (B,); remember whether to squeeze."""
    x = np.asarray(x, float)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x)
    tt = np.broadcast_to(np.asarray(t, float).reshape(-1), (x2.shape[0],))
    return x2, tt, squeeze


def _moments(w: GaussianWorld, t):
    """Per-row (a, Sigma_x, K, Sigma_z) at times t of shape (B,)."""
    a, var = kernel(w.spec, t)
    sig_x = a[:, None, None] ** 2 * w.C + var[:, None, None] * np.eye(w.dim)
    cross = a[:, None, None] * (w.A @ w.C)  # Cov(z, x_t): (B, latent, data)
    sig_z = w.A @ w.C @ w.A.T + w.s**2 * np.eye(w.latent_dim)
    return a, sig_x, cross, sig_z


def _out(v, squeeze):
    return v[0] if squeeze else v


def marginal_score(w: GaussianWorld, x, t):
    """grad log p_t(x); x has shape (dim,) or (B, dim), t scalar or (B,)."""
    x2, tt, sq = _batch(x, t)
    a, sig_x, _, _ = _moments(w, tt)
    return _out(-_spd_solve(sig_x, x2 - a[:, None] * w.m, "marginal covariance"), sq)


def marginal_logdensity(w: GaussianWorld, x, t=0.0):
    x2, tt, sq = _batch(x, t)
    a, sig_x, _, _ = _moments(w, tt)
    diff = x2 - a[:, None] * w.m
    _, logdet = np.linalg.slogdet(sig_x)
    quad = np.einsum("bi,bi->b", diff, _spd_solve(sig_x, diff, "marginal covariance"))
    return _out(-0.5 * (quad + logdet + w.dim * math.log(2 * math.pi)), sq)


def _optimal(w: GaussianWorld, tt):
    a, sig_x, cross, sig_z = _moments(w, tt)
    # K Sigma_x^-1, using symmetry of Sigma_x
    gain = np.swapaxes(np.linalg.solve(sig_x, np.swapaxes(cross, 1, 2)), 1, 2)
    offset = w.A @ w.m + w.b - np.einsum("bkd,d->bk", gain, w.m) * a[:, None]
    S = sig_z - gain @ np.swapaxes(cross, 1, 2)
    return gain, offset, 0.5 * (S + np.swapaxes(S, 1, 2))


def optimal_encoder(w: GaussianWorld, t: float):
    """Exact p(z | x_t) = N(M x_t + offset, S) at a single time."""
    gain, offset, S = _optimal(w, np.array([float(t)]))
    return gain[0], offset[0], S[0]


def posterior_score(w: GaussianWorld, z, x, t):
    """grad_x log p(z | x_t)."""
    x2, tt, sq = _batch(x, t)
    z2 = np.atleast_2d(np.asarray(z, float))
    gain, offset, S = _optimal(w, tt)
    resid = z2 - np.einsum("bkd,bd->bk", gain, x2) - offset
    u = _spd_solve(S, resid, "posterior covariance")
    return _out(np.einsum("bk,bkd->bd", u, gain), sq)


def conditional_params(w: GaussianWorld, z, t):
    """Mean (B, dim) and covariance (B, dim, dim) of p(x_t | z) from the joint Gaussian."""
    z2 = np.atleast_2d(np.asarray(z, float))
    tt = np.broadcast_to(np.asarray(t, float).reshape(-1), (z2.shape[0],))
    a, sig_x, cross, sig_z = _moments(w, tt)
    gain = np.swapaxes(np.linalg.solve(sig_z, cross), 1, 2)  # K^T Sigma_z^-1
    mean = a[:, None] * w.m + np.einsum("bdk,bk->bd", gain, z2 - (w.A @ w.m + w.b))
    cov = sig_x - gain @ cross
    return mean, 0.5 * (cov + np.swapaxes(cov, 1, 2))


def conditional_score(w: GaussianWorld, z, x, t):
    """grad_x log p(x_t | z), directly from the Gaussian p(x_t | z)."""
    x2, tt, sq = _batch(x, t)
    mean, cov = conditional_params(w, np.broadcast_to(np.atleast_2d(z), (x2.shape[0], w.latent_dim)), tt)
    return _out(-_spd_solve(cov, x2 - mean, "conditional covariance"), sq)


def log_marginal_x0(w: GaussianWorld, x0):
    return marginal_logdensity(w, x0, 0.0)


def random_world(rng: np.random.Generator, dim: int, latent_dim: int,
                 spec: SdeSpec | None = None, s_range=(0.3, 1.5)) -> GaussianWorld:
    """Random well-conditioned world; retries until the condition guard passes."""
    spec = (spec or SdeSpec()).with_dim(dim)
    while True:
        L = rng.normal(size=(dim, dim))
        C = L @ L.T / dim + 0.2 * np.eye(dim)
        try:
            return GaussianWorld(rng.normal(size=dim), C, rng.normal(size=(latent_dim, dim)),
                                 rng.normal(size=latent_dim), rng.uniform(*s_range), spec)
        except DomainError:
            continue


def standard_latent_world(rng: np.random.Generator, dim: int, latent_dim: int, s: float = 0.6,
                          spec: SdeSpec | None = None) -> GaussianWorld:
    """World whose latent marginal p(z) is exactly N(0, I).

    A = c R C^{-1/2} with R having orthonormal rows gives A C A^T = c^2 I;
    choosing c^2 = 1 - s^2 and b = -A m makes z standard normal.
    """
    if latent_dim > dim or not 0 < s < 1:
        raise DomainError("need latent_dim <= dim and 0 < s < 1")
    spec = (spec or SdeSpec()).with_dim(dim)
    L = rng.normal(size=(dim, dim))
    C = L @ L.T / dim + 0.3 * np.eye(dim)
    evals, evecs = np.linalg.eigh(C)
    c_inv_half = evecs @ np.diag(evals**-0.5) @ evecs.T
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    A = math.sqrt(1 - s * s) * q[:latent_dim] @ c_inv_half
    m = rng.normal(size=dim)
    return GaussianWorld(m, C, A, -A @ m, s, spec)


class AnalyticPrior:
    """Exact marginal score as a torch-callable score model."""

    def __init__(self, world: GaussianWorld):
        self.world = world

    def score(self, x: torch.Tensor, t) -> torch.Tensor:
        out = marginal_score(self.world, x.detach().numpy(), _times(t, x))
        return torch.from_numpy(np.atleast_2d(out)).to(x.dtype)


class AnalyticEncoder:
    """Exact latent posterior p(z | x_t), full covariance.

    ``log_prob`` is written in torch so autograd can differentiate it with
    respect to x.
    """

    def __init__(self, world: GaussianWorld):
        self.world = world

    def log_prob(self, z, x, t):
        gain, offset, S = _optimal(self.world, _times(t, x))
        as_t = lambda v: torch.as_tensor(v, dtype=x.dtype)
        prec = as_t(np.linalg.inv(S))
        logdet = as_t(np.linalg.slogdet(S)[1])
        r = z - torch.einsum("bkd,bd->bk", as_t(gain), x) - as_t(offset)
        quad = torch.einsum("bk,bkl,bl->b", r, prec, r)
        return -0.5 * (quad + logdet + self.world.latent_dim * math.log(2 * math.pi))

    def encode(self, x, t=0.0):
        """Mean and marginal std of p(z | x_t) per row."""
        gain, offset, S = _optimal(self.world, _times(t, x))
        mu = np.einsum("bkd,bd->bk", gain, x.detach().numpy()) + offset
        sd = np.sqrt(np.diagonal(S, axis1=1, axis2=2))
        return torch.from_numpy(mu).to(x.dtype), torch.from_numpy(sd.copy()).to(x.dtype)

    def sample(self, x0, generator=None, noise=None, mean_latent=False):
        """Draw from p(z | x0), which is exactly N(A x0 + b, s^2 I)."""
        mu, sd = self.encode(x0, 0.0)
        if mean_latent:
            return mu
        if noise is None:
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        return mu + sd * noise


class AnalyticConditionalScore:
    """Exact grad log p(x_t | z) as a callable (x, z, t)."""

    def __init__(self, world: GaussianWorld):
        self.world = world

    def __call__(self, x, z, t):
        out = conditional_score(self.world, z.detach().numpy(), x.detach().numpy(), _times(t, x))
        return torch.from_numpy(np.atleast_2d(out)).to(x.dtype)


def _times(t, x) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().reshape(-1).numpy().astype(float)
    t = np.asarray(t, float).reshape(-1)
    return np.broadcast_to(t, (x.shape[0],)) if t.size == 1 else t
