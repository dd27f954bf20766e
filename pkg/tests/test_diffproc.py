import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scorevae import diffproc
from scorevae.diffproc import SdeSpec
from scorevae.errors import DomainError, NumericDivergence

from fd import central_diff

# 30-digit mpmath evaluations of the closed forms
A_T1 = 0.00657158649492961501
SIGMA_T1 = 0.99997840689233868011
A_HALF = 0.28118288079675237585
SIGMA_HALF = 0.95965420206803624666
T_A_HALF = 0.36827276926518535439  # a(t) = 0.5 under the default schedule
LOG_2PI_HALF = 0.91893853320467274178


def test_spec_validation():
    with pytest.raises(ValueError):
        SdeSpec(0.0, 20.0)
    with pytest.raises(ValueError):
        SdeSpec(2.0, 1.0)
    with pytest.raises(ValueError):
        SdeSpec(0.1, 20.0, t_end=0.0)
    with pytest.raises(ValueError):
        SdeSpec(0.1, 20.0, dim=0)


def test_beta_schedule(spec):
    assert diffproc.beta(spec, 0.0) == pytest.approx(0.1, abs=1e-15)
    assert diffproc.beta(spec, 1.0) == pytest.approx(20.0, abs=1e-15)
    assert diffproc.beta(spec, 0.5) == pytest.approx(10.05, abs=1e-12)


@pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, float("nan")])
def test_beta_domain(spec, t):
    with pytest.raises(DomainError):
        diffproc.beta(spec, t)
    with pytest.raises(DomainError):
        diffproc.perturb_params(spec, t)


def test_perturb_params_values(spec):
    a, s = diffproc.perturb_params(spec, 0.0)
    assert (a, s) == (1.0, 0.0)
    assert diffproc.integrated_beta(spec, 1.0) == pytest.approx(10.05, abs=1e-12)
    a, s = diffproc.perturb_params(spec, 1.0)
    assert a == pytest.approx(A_T1, rel=1e-13)
    assert s == pytest.approx(SIGMA_T1, rel=1e-13)
    assert diffproc.integrated_beta(spec, 0.5) == pytest.approx(2.5375, abs=1e-12)
    a, s = diffproc.perturb_params(spec, 0.5)
    assert a == pytest.approx(A_HALF, rel=1e-13)
    assert s == pytest.approx(SIGMA_HALF, rel=1e-13)


def test_vp_identity_tensor(spec):
    t = torch.linspace(0, 1, 1001, dtype=torch.float64)
    a, s = diffproc.perturb_params(spec, t)
    assert torch.max(torch.abs(a * a + s * s - 1)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(bmin=st.floats(0.01, 5.0), extra=st.floats(0.0, 30.0), t_end=st.floats(0.1, 5.0),
       frac=st.floats(0.0, 1.0))
def test_vp_identity_property(bmin, extra, t_end, frac):
    spec = SdeSpec(bmin, bmin + extra, t_end)
    a, s = diffproc.perturb_params(spec, frac * t_end)
    assert 0 < a <= 1 and 0 <= s <= 1  # s rounds to 1.0 once B(t) exceeds ~37
    assert abs(a * a + s * s - 1) < 1e-12


def test_sample_perturbed_t0_exact(spec, gen):
    x0 = torch.randn(7, 3, generator=gen, dtype=torch.float64)
    assert torch.equal(diffproc.sample_perturbed(spec, x0, 0.0, gen), x0)


def test_sample_perturbed_moments(spec, gen):
    n = 100_000
    x0 = torch.tensor([[1.5, -2.0]], dtype=torch.float64).expand(n, 2)
    for t in (0.3, 1.0):
        a, s = diffproc.perturb_params(spec, t)
        xt = diffproc.sample_perturbed(spec, x0, t, gen)
        mean, var = xt.mean(0), xt.var(0)
        se = s / math.sqrt(n)
        assert torch.all(torch.abs(mean - a * x0[0]) < 4 * se)
        # variance of a sample variance is 2 s^4 / (n - 1) for Gaussians
        assert torch.all(torch.abs(var - s * s) < 4 * s * s * math.sqrt(2 / (n - 1)))


def test_sample_perturbed_deterministic(spec):
    x0 = torch.ones(5, 2, dtype=torch.float64)
    t = torch.linspace(0.1, 0.9, 5, dtype=torch.float64)
    a = diffproc.sample_perturbed(spec, x0, t, torch.Generator().manual_seed(3))
    b = diffproc.sample_perturbed(spec, x0, t, torch.Generator().manual_seed(3))
    assert torch.equal(a, b)


def test_transition_score_examples(spec):
    x0 = torch.tensor([[2.0]], dtype=torch.float64)
    a, _ = diffproc.perturb_params(spec, T_A_HALF)
    assert a == pytest.approx(0.5, abs=1e-14)
    s = diffproc.transition_score(spec, torch.tensor([[2.0]], dtype=torch.float64), x0, T_A_HALF)
    assert float(s) == pytest.approx(-4.0 / 3.0, abs=1e-12)
    mean = diffproc.sample_perturbed(spec, x0, T_A_HALF, noise=torch.zeros_like(x0))
    assert float(diffproc.transition_score(spec, mean, x0, T_A_HALF)) == 0.0


def test_transition_score_linear(spec, gen):
    x0 = torch.randn(4, 3, generator=gen, dtype=torch.float64)
    d = torch.randn(4, 3, generator=gen, dtype=torch.float64)
    a, _ = diffproc.perturb_params(spec, 0.4)
    s1 = diffproc.transition_score(spec, a * x0 + d, x0, 0.4)
    s2 = diffproc.transition_score(spec, a * x0 + 2.5 * d, x0, 0.4)
    assert torch.allclose(2.5 * s1, s2, rtol=1e-13, atol=0)


def test_transition_score_singular_at_zero(spec):
    x = torch.zeros(1, 1, dtype=torch.float64)
    with pytest.raises(DomainError):
        diffproc.transition_score(spec, x, x, 0.0)


def test_transition_score_matches_kernel_log_density(spec, rng):
    for _ in range(20):
        t = float(rng.uniform(0.01, 1.0))
        x0 = rng.normal(size=3)
        xt = rng.normal(size=3)
        a, s = diffproc.perturb_params(spec, t)

        def logk(v):
            return -0.5 * np.sum((v - a * x0) ** 2) / s**2

        fd = central_diff(logk, xt, h=1e-5 * s)
        got = diffproc.transition_score(spec, torch.tensor(xt[None]), torch.tensor(x0[None]), t)
        assert np.max(np.abs(got.numpy()[0] - fd)) / np.max(np.abs(fd)) < 1e-6


def test_prior_logdensity():
    assert float(diffproc.prior_logdensity(torch.zeros(1, dtype=torch.float64))) == pytest.approx(
        -LOG_2PI_HALF, abs=1e-15)
    assert float(diffproc.prior_logdensity(torch.zeros(2, dtype=torch.float64))) == pytest.approx(
        -2 * LOG_2PI_HALF, abs=1e-15)
    r = torch.linspace(0, 50, 200, dtype=torch.float64)[:, None]
    lp = diffproc.prior_logdensity(r)
    assert torch.all(lp[1:] < lp[:-1])


def test_divergence_drift():
    assert diffproc.divergence_drift(SdeSpec(0.1, 20.0, 1.0, 1), 0.5) == pytest.approx(-5.025)
    assert diffproc.divergence_drift(SdeSpec(0.1, 20.0, 1.0, 2), 0.0) == pytest.approx(-0.1)


def test_reverse_step_null_dynamics():
    spec = SdeSpec(1e-14, 1e-14)
    x = torch.tensor([[0.3, -1.2]], dtype=torch.float64)
    out = diffproc.reverse_step_em(spec, x, 1.0, 0.1, torch.zeros_like(x), stochastic=False)
    assert torch.allclose(out, x, rtol=0, atol=1e-14)


def test_reverse_step_unit_gaussian_field(spec):
    # with score -x the deterministic step is x (1 - beta dt / 2); the exact
    # solution of dx/dt = -beta x / 2 backwards over the step is
    # x exp(-(B(t) - B(t - dt)) / 2), so the one-step error is O(dt^2)
    x = torch.tensor([[1.7]], dtype=torch.float64)
    t = 0.6
    for dt in (1e-2, 1e-3):
        b = diffproc.beta(spec, t)
        out = diffproc.reverse_step_em(spec, x, t, dt, -x, stochastic=False)
        assert float(out) == pytest.approx(1.7 * (1 - 0.5 * b * dt), rel=1e-14)
        exact = 1.7 * math.exp(-0.5 * (diffproc.integrated_beta(spec, t)
                                       - diffproc.integrated_beta(spec, t - dt)))
        assert abs(float(out) - exact) < 1.7 * (0.5 * 20 * dt) ** 2


def test_reverse_step_errors(spec):
    x = torch.zeros(1, 1, dtype=torch.float64)
    with pytest.raises(NumericDivergence):
        diffproc.reverse_step_em(spec, x, 0.5, 0.1, torch.full_like(x, float("inf")))
    with pytest.raises(DomainError):
        diffproc.reverse_step_em(spec, x, 0.1, 0.2, x)


def test_reverse_step_deterministic(spec):
    x = torch.ones(3, 2, dtype=torch.float64)
    a = diffproc.reverse_step_em(spec, x, 0.5, 0.01, -x, torch.Generator().manual_seed(9))
    b = diffproc.reverse_step_em(spec, x, 0.5, 0.01, -x, torch.Generator().manual_seed(9))
    assert torch.equal(a, b)


def test_time_grid(spec):
    grid = diffproc.time_grid(spec, 4, 0.2)
    assert grid == pytest.approx([1.0, 0.8, 0.6, 0.4, 0.2])
    with pytest.raises(DomainError):
        diffproc.time_grid(spec, 0)


def test_integrate_reverse_smoke_and_determinism(spec):
    def field(x, t):
        return -x

    out = diffproc.integrate_reverse(field, spec, 1, torch.Generator().manual_seed(0), 5)
    assert out.shape == (5, 1) and torch.isfinite(out).all()
    a = diffproc.integrate_reverse(field, spec, 50, torch.Generator().manual_seed(1), 8)
    b = diffproc.integrate_reverse(field, spec, 50, torch.Generator().manual_seed(1), 8)
    assert torch.equal(a, b)


def test_integrate_reverse_reports_divergence(spec):
    def field(x, t):
        return torch.where(t[:, None] < 0.5, torch.full_like(x, float("nan")), -x)

    with pytest.raises(NumericDivergence) as info:
        diffproc.integrate_reverse(field, spec, 10, torch.Generator().manual_seed(0), 2)
    assert info.value.step == 6
    assert info.value.t == pytest.approx(1.0 - 6 * 0.0999)
