"""Training loops for every component.

Order for the main method is prior -> encoder -> corrector; each stage
loads the earlier checkpoints frozen. Every loop is a pure function of the
config and seed, so repeated runs produce byte-identical checkpoints.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import torch

from .. import data as datasets
from ..diffproc import SdeSpec
from ..errors import ConfigError, DomainError, NumericDivergence
from ..models import (VAE, ConditionalScoreModel, Corrector, DiffDecoder, ScoreModel,
                      TimeEncoder, VaeDecoder)
from ..ndiff import Ema, NetSpec, count_parameters, flat_parameters, load_flat_parameters
from ..objectives import Weighting, cde_loss, corrector_loss, dsm_loss, scorevae_loss, vae_beta_elbo
from .checkpoint import Checkpoint, save_checkpoint
from .config import ExperimentConfig

log = logging.getLogger(__name__)

_STAGE_SEED = {"prior": 1, "encoder": 2, "corrector": 3, "vae": 4, "diffdecoder": 5}


def load_data(cfg: ExperimentConfig):
    """(train, test) datasets; they depend on the data section only."""
    d = cfg.data
    out = []
    for part, n in ((0, d.n_train), (1, d.n_test)):
        rng = np.random.default_rng([d.seed, part])
        if d.kind == "gmm_ring":
            ds = datasets.gmm_ring(n, d.modes, d.radius, d.std, rng)
        elif d.kind == "checkerboard":
            ds = datasets.checkerboard(n, d.squares, rng)
        elif d.kind == "gaussian":
            ds = datasets.gaussian(n, d.dim, rng, std=d.std)
        elif d.kind == "idx":
            if not d.path:
                raise ConfigError("idx dataset needs data.path")
            try:
                full = datasets.idx_load(d.path, d.image_size)
            except DomainError as exc:
                raise ConfigError(f"data.image_size: {exc}") from exc
            idx = rng.permutation(len(full))[:n]
            ds = datasets.Dataset(full.samples[idx], full.kind)
        else:
            raise ConfigError(f"unknown dataset kind {d.kind!r}")
        out.append(ds)
    return out[0], out[1]


def architecture(cfg: ExperimentConfig, dim: int) -> dict:
    n = cfg.nets
    return {"dim": dim, "latent_dim": cfg.latent_dim, "activation": n.activation,
            "time_features": n.time_features,
            "prior_hidden": list(n.prior_hidden), "encoder_hidden": list(n.encoder_hidden),
            "corrector_hidden": list(n.corrector_hidden), "decoder_hidden": list(n.decoder_hidden),
            "diffdecoder_hidden": list(n.diffdecoder_hidden),
            "sde": {"beta_min": cfg.sde.beta_min, "beta_max": cfg.sde.beta_max,
                    "t_end": cfg.sde.t_end, "dim": dim}}


def build(kind: str, arch: dict, generator: torch.Generator | None = None) -> torch.nn.Module:
    d, k = arch["dim"], arch["latent_dim"]
    act, tf = arch["activation"], arch["time_features"]
    sde = SdeSpec(**arch["sde"])

    def encoder(time_features):
        return TimeEncoder(NetSpec((d, *arch["encoder_hidden"], 2 * k), act, time_features), generator)

    if kind == "prior":
        return ScoreModel(NetSpec((d, *arch["prior_hidden"], d), act, tf), sde, generator)
    if kind == "encoder":
        return encoder(tf)
    if kind == "corrector":
        return Corrector(d, k, tuple(arch["corrector_hidden"]), sde, tf, act, generator)
    if kind == "vae":
        return VAE(encoder(0), VaeDecoder(NetSpec((k, *arch["decoder_hidden"], d), act, 0), generator))
    if kind == "diffdecoder":
        return DiffDecoder(encoder(0), ConditionalScoreModel(
            d, k, tuple(arch["diffdecoder_hidden"]), sde, tf, act, generator))
    raise ValueError(f"unknown component kind {kind!r}")


def to_checkpoint(kind: str, module: torch.nn.Module, arch: dict, cfg: ExperimentConfig,
                  iteration: int, **extra) -> Checkpoint:
    meta = {"arch": arch, "iteration": iteration, "seed": cfg.seed, "beta": cfg.beta,
            "net_params": count_parameters(module), **extra}
    return Checkpoint(kind, flat_parameters(module), meta)


def from_checkpoint(ckpt: Checkpoint, kind: str | None = None) -> torch.nn.Module:
    if kind is not None and ckpt.kind != kind:
        raise ConfigError(f"expected a {kind} checkpoint, got {ckpt.kind}")
    module = build(ckpt.kind, ckpt.meta["arch"])
    load_flat_parameters(module, ckpt.params)
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def stage_generator(cfg: ExperimentConfig, stage: str) -> torch.Generator:
    return torch.Generator().manual_seed(cfg.seed * 1000 + _STAGE_SEED[stage])


def fit(module: torch.nn.Module, loss_fn, data: torch.Tensor, n_iters: int, cfg: ExperimentConfig,
        generator: torch.Generator, stage: str) -> list[tuple]:
    """Adam + EMA loop; leaves the EMA weights in ``module``. Returns the loss curve."""
    params = [p for p in module.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.optim.learning_rate)
    ema = Ema(module, cfg.optim.ema_rate)
    curve = []
    n = data.shape[0]
    for it in range(n_iters):
        batch = data[torch.randint(0, n, (cfg.optim.batch_size,), generator=generator)]
        report = loss_fn(batch, generator)
        values = [float(v.detach()) for v in (report.total, report.dsm_term, report.kl_term)]
        if not math.isfinite(values[0]):
            raise NumericDivergence(f"{stage}: loss became non-finite at iteration {it}", step=it)
        opt.zero_grad(set_to_none=True)
        report.total.backward()
        if cfg.optim.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.optim.grad_clip)
        opt.step()
        ema.update()
        curve.append((it, *values))
        if it % 500 == 0:
            log.info("%s iter %d loss %.5f", stage, it, curve[-1][1])
    ema.copy_to(module)
    return curve


def _finish(kind, module, arch, cfg, curve, out_dir, name=None) -> Checkpoint:
    ckpt = to_checkpoint(kind, module, arch, cfg, len(curve))
    if out_dir is not None:
        out_dir = Path(out_dir)
        name = name or kind
        save_checkpoint(ckpt, out_dir / f"{name}.ckpt")
        write_curve(curve, out_dir / f"{name}_loss.csv")
    return ckpt


def write_curve(curve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["iteration,total,dsm,kl"] + [f"{i},{a:.9g},{b:.9g},{c:.9g}" for i, a, b, c in curve]
    path.write_text("\n".join(lines) + "\n")


def _tensor(ds) -> torch.Tensor:
    return torch.as_tensor(ds.samples, dtype=torch.float32)


def train_prior(cfg: ExperimentConfig, out_dir=None, return_curve=False):
    train, _ = load_data(cfg)
    arch = architecture(cfg, train.dim)
    gen = stage_generator(cfg, "prior")
    model = build("prior", arch, gen)
    spec = cfg.sde_spec(train.dim)
    t_eps = cfg.sampler.t_eps
    curve = fit(model, lambda b, g: dsm_loss(model, b, spec, Weighting.SIMPLE, g, t_eps),
                _tensor(train), cfg.optim.prior_iters, cfg, gen, "prior")
    ckpt = _finish("prior", model, arch, cfg, curve, out_dir)
    return (ckpt, curve) if return_curve else ckpt


def train_encoder(cfg: ExperimentConfig, prior: Checkpoint, out_dir=None, return_curve=False):
    train, _ = load_data(cfg)
    arch = architecture(cfg, train.dim)
    prior_model = from_checkpoint(prior, "prior")
    gen = stage_generator(cfg, "encoder")
    enc = build("encoder", arch, gen)
    spec = cfg.sde_spec(train.dim)
    t_eps = cfg.sampler.t_eps
    curve = fit(enc, lambda b, g: scorevae_loss(enc, prior_model, b, spec, cfg.beta, g, t_eps),
                _tensor(train), cfg.optim.encoder_iters, cfg, gen, "encoder")
    ckpt = _finish("encoder", enc, arch, cfg, curve, out_dir)
    return (ckpt, curve) if return_curve else ckpt


def train_corrector(cfg: ExperimentConfig, prior: Checkpoint, encoder: Checkpoint, out_dir=None,
                    return_curve=False):
    train, _ = load_data(cfg)
    arch = architecture(cfg, train.dim)
    prior_model = from_checkpoint(prior, "prior")
    enc = from_checkpoint(encoder, "encoder")
    gen = stage_generator(cfg, "corrector")
    corr = build("corrector", arch, gen)
    spec = cfg.sde_spec(train.dim)
    t_eps = cfg.sampler.t_eps
    curve = fit(corr, lambda b, g: corrector_loss(corr, enc, prior_model, b, spec, cfg.beta, g, t_eps),
                _tensor(train), cfg.optim.corrector_iters, cfg, gen, "corrector")
    ckpt = _finish("corrector", corr, arch, cfg, curve, out_dir)
    return (ckpt, curve) if return_curve else ckpt


def train_vae(cfg: ExperimentConfig, out_dir=None, return_curve=False):
    train, _ = load_data(cfg)
    arch = architecture(cfg, train.dim)
    gen = stage_generator(cfg, "vae")
    vae = build("vae", arch, gen)

    def loss(b, g):
        return vae_beta_elbo(vae.encoder, vae.decoder, b, cfg.beta, g)

    curve = fit(vae, loss, _tensor(train), cfg.optim.vae_iters, cfg, gen, "vae")
    ckpt = _finish("vae", vae, arch, cfg, curve, out_dir)
    return (ckpt, curve) if return_curve else ckpt


def train_diffdecoder(cfg: ExperimentConfig, out_dir=None, return_curve=False):
    """Joint conditional score network + encoder; ``cfg.beta`` weights the KL term.

    Saved as ``diffdecoder.ckpt``, or ``diffdecoder_b0.ckpt`` when beta is 0.
    """
    train, _ = load_data(cfg)
    arch = architecture(cfg, train.dim)
    gen = stage_generator(cfg, "diffdecoder")
    dd = build("diffdecoder", arch, gen)
    spec = cfg.sde_spec(train.dim)
    t_eps = cfg.sampler.t_eps

    def loss(b, g):
        return cde_loss(dd.score_net, dd.encoder, b, spec, Weighting.SIMPLE, g, cfg.beta, t_eps)

    curve = fit(dd, loss, _tensor(train), cfg.optim.diffdecoder_iters, cfg, gen, "diffdecoder")
    name = "diffdecoder" if cfg.beta > 0 else "diffdecoder_b0"
    ckpt = _finish("diffdecoder", dd, arch, cfg, curve, out_dir, name)
    return (ckpt, curve) if return_curve else ckpt


def train_all(cfg: ExperimentConfig, out_dir=None, methods=("scorevae", "scorevae+", "vae",
                                                             "diffdecoder", "diffdecoder_b0")) -> dict:
    """Train everything the listed methods need; returns checkpoints keyed by file stem."""
    ckpts = {}
    if {"scorevae", "scorevae+"} & set(methods):
        ckpts["prior"] = train_prior(cfg, out_dir)
        ckpts["encoder"] = train_encoder(cfg, ckpts["prior"], out_dir)
    if "scorevae+" in methods:
        ckpts["corrector"] = train_corrector(cfg, ckpts["prior"], ckpts["encoder"], out_dir)
    if "vae" in methods:
        ckpts["vae"] = train_vae(cfg, out_dir)
    if "diffdecoder" in methods:
        ckpts["diffdecoder"] = train_diffdecoder(cfg, out_dir)
    if "diffdecoder_b0" in methods:
        ckpts["diffdecoder_b0"] = train_diffdecoder(cfg.replace(beta=0.0), out_dir)
    return ckpts
