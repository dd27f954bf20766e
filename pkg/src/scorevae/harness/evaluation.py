"""Reconstruction and the L2 metric table."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .. import diffproc
from ..compose import ComposedScore, reconstruct
from ..errors import ShapeError
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .train import from_checkpoint

# row order and labels of the comparison table
METHODS = ("vae", "scorevae", "scorevae+", "diffdecoder", "diffdecoder_b0")
LABELS = {
    "vae": "VAE",
    "scorevae": "ScoreVAE",
    "scorevae+": "ScoreVAE+",
    "diffdecoder": "DiffDecoder",
    "diffdecoder_b0": "DiffDecoder",
}


def l2_per_sample(x, x_hat) -> np.ndarray:
    x, x_hat = np.asarray(x, float), np.asarray(x_hat, float)
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return np.linalg.norm(x - x_hat, axis=-1)


def mean_l2(x, x_hat) -> float:
    return float(l2_per_sample(x, x_hat).mean())


def reconstruct_vae(vae_ckpt: Checkpoint, x: torch.Tensor, generator, mean_latent=False):
    vae = from_checkpoint(vae_ckpt, "vae")
    with torch.no_grad():
        z = vae.encoder.sample(x, generator, mean_latent=mean_latent)
        return vae.decoder(z)


def reconstruct_scorevae(prior: Checkpoint, encoder: Checkpoint, x: torch.Tensor,
                         cfg: ExperimentConfig, generator, corrector: Checkpoint | None = None,
                         mean_latent=False):
    cs = ComposedScore(from_checkpoint(prior, "prior"), from_checkpoint(encoder, "encoder"),
                       from_checkpoint(corrector, "corrector") if corrector is not None else None)
    return reconstruct(cs, cfg.sde_spec(x.shape[1]), x, cfg.sampler.n_steps, generator,
                       cfg.sampler.t_eps, mean_latent)


def reconstruct_diffdecoder(dd_ckpt: Checkpoint, x: torch.Tensor, cfg: ExperimentConfig, generator,
                            mean_latent=False):
    dd = from_checkpoint(dd_ckpt, "diffdecoder")
    with torch.no_grad():
        z = dd.encoder.sample(x, generator, mean_latent=mean_latent)
        return diffproc.integrate_reverse(
            lambda xt, t: dd.score_net(xt, z, t), cfg.sde_spec(x.shape[1]), cfg.sampler.n_steps,
            generator, x.shape[0], cfg.sampler.t_eps, dtype=x.dtype)


def reconstruct_method(method: str, ckpts: dict, x: torch.Tensor, cfg: ExperimentConfig,
                       mean_latent: bool | None = None) -> torch.Tensor:
    """Reconstruct ``x`` with one method; the eval seed fixes all sampling noise."""
    mean_latent = cfg.sampler.mean_latent if mean_latent is None else mean_latent
    gen = torch.Generator().manual_seed(cfg.eval_seed)
    if method == "vae":
        return reconstruct_vae(ckpts["vae"], x, gen, mean_latent)
    if method == "scorevae":
        return reconstruct_scorevae(ckpts["prior"], ckpts["encoder"], x, cfg, gen,
                                    mean_latent=mean_latent)
    if method == "scorevae+":
        return reconstruct_scorevae(ckpts["prior"], ckpts["encoder"], x, cfg, gen,
                                    ckpts["corrector"], mean_latent)
    if method in ("diffdecoder", "diffdecoder_b0"):
        return reconstruct_diffdecoder(ckpts[method], x, cfg, gen, mean_latent)
    raise ValueError(f"unknown method {method!r}")


def evaluate(ckpts: dict, test: np.ndarray, cfg: ExperimentConfig, methods=None) -> list[dict]:
    """Mean per-sample L2 of each method whose checkpoints are present."""
    x = torch.as_tensor(test, dtype=torch.float32)
    rows = []
    for method in methods or METHODS:
        needed = {"vae": ["vae"], "scorevae": ["prior", "encoder"],
                  "scorevae+": ["prior", "encoder", "corrector"],
                  "diffdecoder": ["diffdecoder"], "diffdecoder_b0": ["diffdecoder_b0"]}[method]
        if not all(k in ckpts for k in needed):
            continue
        x_hat = reconstruct_method(method, ckpts, x, cfg).detach().numpy()
        beta = ckpts[needed[-1]].meta.get("beta", cfg.beta)
        rows.append({"method": method, "label": LABELS[method], "beta": beta,
                     "l2": mean_l2(test, x_hat)})
    return rows


def format_table(rows: list[dict]) -> str:
    names = [f"{r['label']} (beta={r['beta']:g})" for r in rows]
    width = max([len(n) for n in names] + [len("method")])
    lines = [f"{'method':<{width}}  {'L2':>10}", "-" * (width + 12)]
    lines += [f"{n:<{width}}  {r['l2']:>10.4f}" for n, r in zip(names, rows)]
    return "\n".join(lines) + "\n"


def write_table(rows: list[dict], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv = ["method,beta,l2"] + [f"{r['method']},{r['beta']:g},{r['l2']:.9g}" for r in rows]
    (out_dir / "metrics.csv").write_text("\n".join(csv) + "\n")
    (out_dir / "metrics.txt").write_text(format_table(rows))
