"""Command line entry point.

    scorevae train-prior --config toy.ini --out runs/toy
    scorevae train-encoder --config toy.ini --out runs/toy
    scorevae eval --config toy.ini --out runs/toy

Exit codes: 0 success, 2 config error, 3 numeric divergence (or a failed
oracle check), 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .. import diffproc, oracle
from ..errors import ConfigError, FormatError, NumericDivergence
from . import emit, evaluation, train
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, dump_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "beta", None) is not None:
        changes["beta"] = args.beta
    if args.mean_latent:
        changes["sampler.mean_latent"] = True
    return cfg.replace(**changes) if changes else cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ckpt(args, name):
    path = getattr(args, name, None) or Path(args.out) / f"{name}.ckpt"
    return load_checkpoint(path)


def _available(out: Path) -> dict:
    names = ("prior", "encoder", "corrector", "vae", "diffdecoder", "diffdecoder_b0")
    return {n: load_checkpoint(out / f"{n}.ckpt") for n in names if (out / f"{n}.ckpt").exists()}


def cmd_train(args):
    cfg = _config(args)
    out = _out(args)
    (out / "config.ini").write_text(dump_config(cfg))
    stage = args.command.removeprefix("train-")
    if stage == "prior":
        train.train_prior(cfg, out)
    elif stage == "encoder":
        train.train_encoder(cfg, _ckpt(args, "prior"), out)
    elif stage == "corrector":
        train.train_corrector(cfg, _ckpt(args, "prior"), _ckpt(args, "encoder"), out)
    elif stage == "vae":
        train.train_vae(cfg, out)
    elif stage == "diffdecoder":
        train.train_diffdecoder(cfg, out)
    print(f"wrote {stage} checkpoint to {out}")


def cmd_reconstruct(args):
    cfg = _config(args)
    out = _out(args)
    _, test = train.load_data(cfg)
    x = torch.as_tensor(test.samples, dtype=torch.float32)
    x_hat = evaluation.reconstruct_method(args.method, _available(out), x, cfg).detach().numpy()
    suffix = ".pgm" if test.kind.value == "images" else ".csv"
    emit.emit_images(test.samples, out / f"original{suffix}")
    emit.emit_images(x_hat, out / f"reconstruction_{args.method}{suffix}")
    print(f"{args.method}: mean L2 {evaluation.mean_l2(test.samples, x_hat):.6f}")


def cmd_sample(args):
    cfg = _config(args)
    out = _out(args)
    prior = train.from_checkpoint(_ckpt(args, "prior"), "prior")
    dim = prior.dim
    gen = torch.Generator().manual_seed(cfg.eval_seed)
    with torch.no_grad():
        x = diffproc.integrate_reverse(prior.score, cfg.sde_spec(dim), cfg.sampler.n_steps, gen,
                                       args.n, cfg.sampler.t_eps, dtype=torch.float32)
    path = emit.emit_images(x.numpy(), out / f"samples{'.pgm' if args.pgm else '.csv'}")
    print(f"wrote {args.n} samples to {path}")


def cmd_eval(args):
    cfg = _config(args)
    out = _out(args)
    _, test = train.load_data(cfg)
    rows = evaluation.evaluate(_available(out), test.samples, cfg)
    evaluation.write_table(rows, out)
    print(evaluation.format_table(rows), end="")


def cmd_oracle_check(args):
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    worst = 0.0
    for _ in range(args.n_worlds):
        d = int(rng.integers(1, 5))
        k = int(rng.integers(1, 5))
        w = oracle.random_world(rng, d, k)
        x = rng.normal(size=(4, d))
        z = rng.normal(size=(4, k))
        t = rng.uniform(0.0, 1.0, size=4)
        lhs = oracle.marginal_score(w, x, t) + oracle.posterior_score(w, z, x, t)
        worst = max(worst, float(np.abs(lhs - oracle.conditional_score(w, z, x, t)).max()))
    ok = worst < 1e-9
    print(f"bayes identity over {args.n_worlds} worlds: max abs error {worst:.3e} "
          f"[{'PASS' if ok else 'FAIL'}]")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scorevae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment config (defaults used if omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="runs/default", help="output / checkpoint directory")
        p.add_argument("--mean-latent", action="store_true",
                       help="decode the encoder mean instead of a sampled latent")
        return p

    for stage in ("prior", "encoder", "corrector", "vae", "diffdecoder"):
        p = common(sub.add_parser(f"train-{stage}"))
        p.add_argument("--beta", type=float, help="override the KL weight")
        if stage in ("encoder", "corrector"):
            p.add_argument("--prior", help="prior checkpoint (default OUT/prior.ckpt)")
        if stage == "corrector":
            p.add_argument("--encoder", help="encoder checkpoint (default OUT/encoder.ckpt)")
        p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("reconstruct"))
    p.add_argument("--method", default="scorevae", choices=evaluation.METHODS)
    p.set_defaults(func=cmd_reconstruct)

    p = common(sub.add_parser("sample"))
    p.add_argument("--prior", help="prior checkpoint (default OUT/prior.ckpt)")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--pgm", action="store_true", help="write a PGM image grid")
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("eval"))
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("oracle-check"))
    p.add_argument("--n-worlds", type=int, default=1000)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericDivergence as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
