"""A tour of the linear-Gaussian world, where every score has a closed form.

Data x0 ~ N(m, C); the encoder is z | x0 ~ N(A x0 + b, s^2 I). Diffusing x0
with the VP process keeps everything Gaussian, so the marginal score, the
latent posterior score and the conditional score p(x_t | z) are all exact.

The walkthrough
  1. checks Bayes' rule for scores on one world,
  2. builds the composed score (prior + encoder term) from the analytic
     pieces and compares it with the oracle,
  3. samples x0 given a latent with the reverse SDE and compares the sample
     moments with the exact conditional p(x0 | z).

Run:  python demos/oracle_walkthrough.py
"""

import numpy as np
import torch

from scorevae import oracle
from scorevae.compose import ComposedScore, conditional_score
from scorevae.diffproc import integrate_reverse

rng = np.random.default_rng(7)
world = oracle.random_world(rng, dim=2, latent_dim=1)
print("data mean", world.m.round(3), "encoder A", world.A.round(3), "s", round(world.s, 3))

# 1. Bayes' rule for scores at a random point
x, z, t = rng.normal(size=(1, 2)), rng.normal(size=(1, 1)), 0.4
lhs = oracle.marginal_score(world, x, t) + oracle.posterior_score(world, z, x, t)
rhs = oracle.conditional_score(world, z, x, t)
print("marginal + posterior", lhs.round(6), "conditional", rhs.round(6))

# 2. the same quantity through the composition used for decoding
cs = ComposedScore(oracle.AnalyticPrior(world), oracle.AnalyticEncoder(world))
got = conditional_score(cs, torch.from_numpy(x), torch.tensor([t], dtype=torch.float64),
                        torch.from_numpy(z)).numpy()
print("composed score", got.round(6), "max abs diff", float(np.abs(got - rhs).max()))

# 3. conditional sampling: x0 | z by integrating the composed score
z0 = torch.tensor([[0.8]], dtype=torch.float64).expand(5000, 1)
gen = torch.Generator().manual_seed(0)
samples = integrate_reverse(cs.with_latent(z0), world.spec, 1000, gen, 5000).numpy()
mean, cov = oracle.conditional_params(world, z0[:1].numpy(), 0.0)
print("sample mean", samples.mean(0).round(3), "exact", np.asarray(mean).reshape(-1).round(3))
print("sample cov\n", np.cov(samples.T).round(3), "\nexact\n", np.asarray(cov).reshape(2, 2).round(3))
