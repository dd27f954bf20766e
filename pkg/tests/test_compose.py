import numpy as np
import pytest
import torch

from scorevae import oracle
from scorevae.compose import ComposedScore, conditional_score, reconstruct
from scorevae.diffproc import SdeSpec, integrate_reverse
from scorevae.models import Corrector, ScoreModel, TimeEncoder, encoder_score
from scorevae.ndiff import NetSpec

F64 = torch.float64
SPEC2 = SdeSpec(0.1, 20.0, 1.0, 2)


def _nets(seed=0):
    g = torch.Generator().manual_seed(seed)
    prior = ScoreModel(NetSpec((2, 16, 16, 2), "gelu", 2), SPEC2, g, zero_last=False, dtype=F64)
    enc = TimeEncoder(NetSpec((2, 16, 6), "gelu", 2), g, zero_last=False, dtype=F64)
    return prior, enc


def test_requires_latent():
    prior, enc = _nets()
    with pytest.raises(ValueError):
        conditional_score(ComposedScore(prior, enc), torch.zeros(1, 2, dtype=F64), 0.5)


def test_x_independent_encoder_gives_prior_score():
    prior, _ = _nets()
    enc = TimeEncoder(NetSpec((2, 16, 6), "gelu", 2), torch.Generator().manual_seed(3), dtype=F64)
    with torch.no_grad():
        enc.net.layers[-1].bias.normal_()  # constant mean and std, no x dependence
    x, z = torch.randn(8, 2, dtype=F64), torch.randn(8, 3, dtype=F64)
    t = torch.rand(8, dtype=F64)
    assert torch.equal(conditional_score(ComposedScore(prior, enc, z=z), x, t), prior.score(x, t))


def test_composition_is_additive_bitwise():
    prior, enc = _nets()
    x, z = torch.randn(8, 2, dtype=F64), torch.randn(8, 3, dtype=F64)
    t = torch.rand(8, dtype=F64) * 0.9 + 0.05
    got = conditional_score(ComposedScore(prior, enc, z=z), x, t)
    assert torch.equal(got, prior.score(x, t) + encoder_score(enc, z, x, t))


def test_zero_corrector_is_neutral():
    prior, enc = _nets()
    corr = Corrector(2, 3, (16,), SPEC2, generator=torch.Generator().manual_seed(1), dtype=F64)
    x, z = torch.randn(8, 2, dtype=F64), torch.randn(8, 3, dtype=F64)
    t = torch.rand(8, dtype=F64) * 0.9 + 0.05
    with_c = conditional_score(ComposedScore(prior, enc, corr, z), x, t)
    assert torch.equal(with_c, conditional_score(ComposedScore(prior, enc, None, z), x, t))
    with torch.no_grad():
        corr.net.layers[-1].bias.fill_(0.5)
    shifted = conditional_score(ComposedScore(prior, enc, corr, z), x, t)
    assert torch.equal(shifted, with_c + corr(x, z, t))


def test_analytic_components_reproduce_oracle(rng):
    for _ in range(30):
        w = oracle.random_world(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        cs = ComposedScore(oracle.AnalyticPrior(w), oracle.AnalyticEncoder(w))
        x = rng.normal(size=(4, w.dim))
        z = rng.normal(size=(4, w.latent_dim))
        t = rng.uniform(1e-3, 1.0, size=4)
        got = conditional_score(cs, torch.from_numpy(x), torch.from_numpy(t), torch.from_numpy(z)).numpy()
        ref = oracle.conditional_score(w, z, x, t)
        assert np.abs(got - ref).max() / np.abs(ref).max() < 1e-9


def test_conditional_sampling_matches_analytic_posterior(rng):
    """Fixed z, analytic composition: sample mean within 4 SE of the p(x|z) mean."""
    w = oracle.random_world(rng, 2, 1, s_range=(0.5, 0.8))
    z = np.array([0.4])
    n, t_eps = 10_000, 1e-3
    cs = ComposedScore(oracle.AnalyticPrior(w), oracle.AnalyticEncoder(w),
                       z=torch.from_numpy(np.tile(z, (n, 1))))
    x = integrate_reverse(lambda v, t: conditional_score(cs, v, t).detach(), w.spec, 1000,
                          torch.Generator().manual_seed(7), n, t_eps).numpy()
    mean, cov = oracle.conditional_params(w, z[None], t_eps)
    se = np.sqrt(np.diag(cov[0]) / n)
    assert np.all(np.abs(x.mean(0) - mean[0]) < 4 * se)
    assert np.allclose(np.cov(x.T), cov[0], atol=0.1 * np.abs(cov[0]).max())


def test_reconstruct_smoke_and_determinism():
    prior, enc = _nets()
    x0 = torch.randn(6, 2, dtype=F64)
    cs = ComposedScore(prior, enc)
    out = reconstruct(cs, SPEC2, x0, 1, torch.Generator().manual_seed(0))
    assert out.shape == x0.shape and torch.isfinite(out).all()
    a = reconstruct(cs, SPEC2, x0, 30, torch.Generator().manual_seed(4))
    b = reconstruct(cs, SPEC2, x0, 30, torch.Generator().manual_seed(4))
    assert torch.equal(a, b)
    c = reconstruct(cs, SPEC2, x0, 30, torch.Generator().manual_seed(4), mean_latent=True)
    assert not torch.equal(a, c)
