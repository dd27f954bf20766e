import math

import numpy as np
import pytest
import torch

from scorevae import ndiff
from scorevae.errors import ShapeError
from scorevae.ndiff import MLP, Activation, Ema, NetSpec

from fd import central_diff, rel_err


def _net(widths, act="gelu", tf=0, seed=0, dtype=torch.float64):
    return MLP(NetSpec(widths, act, tf), torch.Generator().manual_seed(seed), dtype=dtype)


def test_netspec_validation_and_roundtrip():
    with pytest.raises(ShapeError):
        NetSpec((3,))
    with pytest.raises(ShapeError):
        NetSpec((3, 0, 2))
    with pytest.raises(ValueError):
        NetSpec((3, 2), "relu")
    spec = NetSpec((3, 8, 2), Activation.TANH, 2)
    assert NetSpec.from_dict(spec.to_dict()) == spec


def test_identity_net():
    net = _net((3, 3), "identity")
    with torch.no_grad():
        net.layers[0].weight.copy_(torch.eye(3, dtype=torch.float64))
    x = torch.randn(5, 3, dtype=torch.float64)
    assert torch.equal(net(x), x)


def test_zero_net():
    net = _net((3, 16, 16, 2), tf=3)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    assert torch.equal(net(torch.randn(4, 3, dtype=torch.float64), 0.3), torch.zeros(4, 2, dtype=torch.float64))


def test_zero_last_layer():
    net = MLP(NetSpec((2, 8, 2)), zero_last=True)
    assert torch.equal(net(torch.randn(3, 2)), torch.zeros(3, 2))


def test_shape_error_names_widths():
    net = _net((3, 4, 2))
    with pytest.raises(ShapeError, match=r"\(batch, 3\).*\(5, 4\)"):
        net(torch.zeros(5, 4, dtype=torch.float64))
    timed = _net((3, 4, 2), tf=2)
    with pytest.raises(ShapeError):
        timed(torch.zeros(5, 3, dtype=torch.float64))
    with pytest.raises(ShapeError):
        timed(torch.zeros(5, 3, dtype=torch.float64), torch.zeros(4, dtype=torch.float64))


def test_time_embedding_values():
    t = torch.tensor([0.25], dtype=torch.float64)
    emb = ndiff.time_embedding(t, 3)[0].numpy()
    ang = np.pi * np.array([1, 2, 4]) * 0.25
    assert np.allclose(emb, np.concatenate([np.sin(ang), np.cos(ang)]), atol=1e-15)


def test_forward_continuous_in_t():
    net = _net((2, 32, 32, 2), tf=4)
    x = torch.randn(10, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    for t in np.linspace(0, 1 - 1e-6, 11):
        assert torch.max(torch.abs(net(x, float(t)) - net(x, float(t) + 1e-6))) < 1e-3


def test_forward_bit_deterministic():
    x = torch.randn(6, 3, dtype=torch.float64)
    a = _net((3, 16, 2), tf=2, seed=4)(x, 0.4)
    b = _net((3, 16, 2), tf=2, seed=4)(x, 0.4)
    assert torch.equal(a, b)


def test_gelu_is_exact_erf_form():
    net = _net((1, 1, 1), "gelu")
    with torch.no_grad():
        net.layers[0].weight.fill_(1.0)
        net.layers[1].weight.fill_(1.0)
    for v in (-2.0, -0.3, 0.0, 0.7, 3.1):
        expect = 0.5 * v * (1 + math.erf(v / math.sqrt(2)))
        assert float(net(torch.tensor([[v]], dtype=torch.float64)).detach()) == pytest.approx(expect, abs=1e-15)


def test_init_statistics():
    net = MLP(NetSpec((400, 400, 1)), torch.Generator().manual_seed(0), dtype=torch.float64)
    w = net.layers[0].weight.detach()
    assert float(w.var()) == pytest.approx(2 / 400, rel=0.02)
    assert torch.all(net.layers[0].bias == 0)


def test_grad_input_closed_forms():
    x = torch.randn(4, 3, dtype=torch.float64)
    g = ndiff.grad_input(lambda v: 0.5 * (v * v).sum(), x)
    assert torch.equal(g, x)
    w = torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64)
    g = ndiff.grad_input(lambda v: v @ w + 3.0, x)
    assert torch.equal(g, w.expand(4, 3))


def test_grad_input_matches_fd(rng):
    for seed in range(10):
        net = _net((3, 16, 16, 2), tf=2, seed=seed)
        x = rng.normal(size=(1, 3))
        t = float(rng.uniform())
        f = lambda v: float(net(torch.from_numpy(v), t).pow(2).sum().detach())  # noqa: E731
        g = ndiff.grad_input(lambda v: net(v, t).pow(2).sum(), torch.from_numpy(x))
        assert rel_err(g.numpy(), central_diff(f, x, 1e-6)) < 1e-6


def test_grad_params_constant_is_zero():
    net = _net((2, 4, 1))
    grads = ndiff.grad_params(lambda: torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
                              + 0 * net.layers[0].weight.sum(), net.parameters())
    assert all(torch.count_nonzero(g) == 0 for g in grads)


def test_grad_params_least_squares_closed_form(rng):
    net = _net((3, 2), "identity")
    x = torch.from_numpy(rng.normal(size=(1, 3)))
    y = torch.from_numpy(rng.normal(size=(1, 2)))
    gw, gb = ndiff.grad_params(lambda: (net(x) - y).pow(2).sum(), net.parameters())
    w, b = net.layers[0].weight.detach(), net.layers[0].bias.detach()
    r = (x @ w.T + b - y)[0]
    assert torch.allclose(gw, 2 * torch.outer(r, x[0]), rtol=1e-14, atol=1e-15)
    assert torch.allclose(gb, 2 * r, rtol=1e-14, atol=1e-15)


def test_flat_parameters_roundtrip():
    a, b = _net((3, 5, 2), seed=1, dtype=torch.float32), _net((3, 5, 2), seed=2, dtype=torch.float32)
    flat = ndiff.flat_parameters(a)
    assert flat.dtype == np.float32 and flat.size == ndiff.count_parameters(a) == 3 * 5 + 5 + 5 * 2 + 2
    ndiff.load_flat_parameters(b, flat)
    assert np.array_equal(ndiff.flat_parameters(b), flat)
    with pytest.raises(ShapeError):
        ndiff.load_flat_parameters(b, flat[:-1])


def test_ema_warmup_and_rate():
    net = _net((1, 1), "identity")
    ema = Ema(net, 0.999)
    with torch.no_grad():
        net.layers[0].weight.fill_(1.0)
        net.layers[0].bias.fill_(0.0)
    ema.shadow = [torch.zeros_like(s) for s in ema.shadow]
    ema.update()  # effective rate 1/10
    assert float(ema.shadow[0]) == pytest.approx(0.9)
    ema.n_updates = 10**6
    ema.update()  # warmup exhausted, rate 0.999
    assert float(ema.shadow[0]) == pytest.approx(0.9 * 0.999 + 0.001)
    target = _net((1, 1), "identity", seed=5)
    ema.copy_to(target)
    assert float(target.layers[0].weight) == pytest.approx(0.9 * 0.999 + 0.001)
