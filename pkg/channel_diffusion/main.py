"""Channel Diffusion: command-line entry point.

Subcommands:
    gen          generate (or import) a channel dataset
    train        train an unconditional score model
    train-cond   train a conditional (classifier-free) score model
    train-vae    train the CSI VAE and its latent denoiser
    estimate     estimate one channel from pilots (diffusion vs baselines)
    extrapolate  extrapolate one channel from a sub-array mask
    feedback     run VAE feedback round trips and report NMSE
    eval         run an experiment config (or a sweep) and write CSVs
    plot         render charts and the PDF report from a results CSV
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np
from pydantic import ValidationError

from .core import (
    ChannelDiffusionError,
    configure_torch,
    derive_seed,
    get_settings,
    numpy_rng,
    torch_generator,
)
from .jobs import load_experiment_config, run_experiment, sweep
from .schemas import FeedbackConfig, SamplerConfig, TrainingJobConfig
from .schemas.base import PilotKind
from .services import (
    ChannelDataset,
    build_score_model,
    estimate_channel,
    extrapolate,
    feedback_roundtrip,
    generate_named_dataset,
    import_channels,
    load_checkpoint,
    load_dataset,
    load_vae,
    ls_estimate,
    make_condition,
    make_mask,
    make_pilots,
    make_sde,
    nmse,
    observe,
    plot_results,
    posterior_sample,
    save_checkpoint,
    save_dataset,
    save_vae,
    train,
    train_conditional,
    train_latent_denoiser,
    vae_train,
)


logger = logging.getLogger("channel_diffusion")


# =============================================================================
# HELPERS
# =============================================================================


def _training_config(args: argparse.Namespace) -> TrainingJobConfig:
    config = (
        TrainingJobConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
        if args.config
        else TrainingJobConfig()
    )
    if args.steps is not None:
        config.train = config.train.model_copy(update={"steps": args.steps})
    if args.seed is not None:
        config.train = config.train.model_copy(update={"seed": args.seed})
    return config


def _sampler_config(args: argparse.Namespace, **overrides: Any) -> SamplerConfig:
    data: dict[str, Any] = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    data.update({k: v for k, v in overrides.items() if v is not None})
    return SamplerConfig.model_validate(data)


def _feedback_config(args: argparse.Namespace) -> FeedbackConfig:
    data: dict[str, Any] = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = {
        "bits_per_dim": args.bits,
        "feedback_snr_db": args.snr,
        "latent_denoise_enabled": args.denoise,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    return FeedbackConfig.model_validate(data)


def _out_dir(args: argparse.Namespace, default: Path) -> Path:
    return Path(args.out) if args.out else default


def _emit(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# =============================================================================
# COMMANDS
# =============================================================================


def cmd_gen(args: argparse.Namespace) -> None:
    settings = get_settings()
    root_seed = args.seed if args.seed is not None else 0
    if args.import_path:
        ds = import_channels(args.import_path, args.scene, key=args.key)
    else:
        # same derivation as the experiment runner, so roles never share a stream
        seed = derive_seed(root_seed, "dataset", args.scene, args.role)
        ds = generate_named_dataset(args.scene, args.n, seed)
    path = save_dataset(ds, _out_dir(args, settings.data_dir / f"{args.scene}-{args.role}"))
    _emit({"path": str(path), "n_samples": len(ds), "shape": list(ds.shape)})


def cmd_train(args: argparse.Namespace, conditional: bool = False) -> None:
    settings = get_settings()
    config = _training_config(args)
    dataset = load_dataset(args.dataset)
    network = config.network
    if conditional and network.cond_channels == 0:
        network = network.model_copy(update={"cond_channels": 3})
    sde = make_sde(config.sde)
    model = build_score_model(network, sde, seed=config.train.seed)
    if conditional:
        ckpt = train_conditional(model, dataset, sde, config.train, p_drop=config.p_drop)
    else:
        ckpt = train(model, dataset, sde, config.train)
    name = "score_cond.pt" if conditional else "score.pt"
    path = save_checkpoint(ckpt, _out_dir(args, settings.checkpoint_dir) / name)
    _emit({"checkpoint": str(path), "final_loss": ckpt.history[-1]})


def cmd_train_vae(args: argparse.Namespace) -> None:
    settings = get_settings()
    config = _training_config(args)
    dataset = load_dataset(args.dataset)
    out = _out_dir(args, settings.checkpoint_dir)

    vae = vae_train(dataset, config.latent_dim, config.vae_beta, config.train, config.vae_hidden)
    vae_path = save_vae(vae, out / "vae.pt")
    latent_ckpt = train_latent_denoiser(
        vae,
        dataset,
        config.sde,
        config.latent_train or config.train,
        net_config=config.latent_network,
    )
    latent_path = save_checkpoint(latent_ckpt, out / "latent_score.pt")
    _emit({
        "vae": str(vae_path),
        "latent_score": str(latent_path),
        "recon_nmse_db": vae.recon_nmse_db,
        "compression_ratio": vae.compression_ratio,
    })


def _pick_channel(dataset: ChannelDataset, index: int) -> np.ndarray:
    if not 0 <= index < len(dataset):
        raise ChannelDiffusionError(f"index {index} outside dataset of {len(dataset)}")
    return dataset[index].astype(np.complex128)


def cmd_estimate(args: argparse.Namespace) -> None:
    seed = args.seed if args.seed is not None else 0
    ckpt = load_checkpoint(get_settings().checkpoint_path(args.checkpoint))
    dataset = load_dataset(args.dataset)
    H = _pick_channel(dataset, args.index)
    pilots = make_pilots(H.shape[1], args.n_pilots, PilotKind(args.pilots), seed)
    obs = observe(H, pilots, args.snr, numpy_rng(seed, "observation", args.index))
    cfg = _sampler_config(args)

    result = posterior_sample(
        ckpt.score_fn(), obs, pilots, ckpt.model.sde, cfg, torch_generator(seed, "estimate")
    )
    estimate = estimate_channel(result)
    per_sample = [nmse(sample, H) for sample in estimate.samples]
    _emit({
        "nmse_db": nmse(estimate.mean, H),
        "per_sample_nmse_db": per_sample,
        "ls_nmse_db": nmse(ls_estimate(obs, pilots), H),
        "aborted_chains": estimate.aborted,
    })


def cmd_extrapolate(args: argparse.Namespace) -> None:
    seed = args.seed if args.seed is not None else 0
    ckpt = load_checkpoint(get_settings().checkpoint_path(args.checkpoint))
    dataset = load_dataset(args.dataset)
    H = _pick_channel(dataset, args.index)
    mask = make_mask(args.mask, H.shape, numpy_rng(seed, "mask", args.index))
    cfg = _sampler_config(args, cfg_weight=args.cfg_weight)
    estimate = extrapolate(ckpt, make_condition(H, mask), cfg, torch_generator(seed, "extrapolate"))
    unobserved = ~mask
    _emit({
        "observed_fraction": float(mask.mean()),
        "nmse_db": nmse(estimate.mean, H),
        "unobserved_nmse_db": (
            nmse(estimate.mean[unobserved], H[unobserved]) if unobserved.any() else None
        ),
    })


def cmd_feedback(args: argparse.Namespace) -> None:
    settings = get_settings()
    seed = args.seed if args.seed is not None else 0
    vae = load_vae(settings.checkpoint_path(args.vae))
    latent = (
        load_checkpoint(settings.checkpoint_path(args.latent_checkpoint))
        if args.latent_checkpoint
        else None
    )
    fcfg = _feedback_config(args)
    dataset = load_dataset(args.dataset)
    n = min(args.n, len(dataset))
    reports = [
        feedback_roundtrip(
            dataset[i].astype(np.complex128),
            vae,
            latent,
            fcfg,
            numpy_rng(seed, "feedback", i),
            torch_generator(seed, "latent", i),
        )
        for i in range(n)
    ]
    linear = np.mean([10 ** (r.nmse_db / 10) for r in reports])
    _emit({
        "n": n,
        "nmse_db": 10 * math.log10(linear),
        "payload_bits": reports[0].payload_bits if reports else 0,
        "vae_recon_nmse_db": vae.recon_nmse_db,
        "first": reports[0].to_dict() if reports else None,
    })


def cmd_eval(args: argparse.Namespace) -> None:
    if not args.config:
        raise ChannelDiffusionError("eval needs --config <experiment.json>")
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = Path(args.out) if args.out else None
    if args.sweep:
        grid = json.loads(Path(args.sweep).read_text(encoding="utf-8"))
        records = sweep(cfg, grid, out)
    else:
        records = run_experiment(cfg, out)
    _emit({"records": len(records)})


def cmd_plot(args: argparse.Namespace) -> None:
    out = _out_dir(args, Path(args.results).parent / "plots")
    written = plot_results(args.results, out, pdf=not args.no_pdf)
    if not written:
        print("No methods found in results; nothing to plot")
    _emit({"files": [str(p) for p in written]})


# =============================================================================
# CLI ENTRY POINT
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="channel-diffusion",
        description="Score-based diffusion for MIMO channel estimation, extrapolation and feedback",
    )
    parser.add_argument("--config", help="JSON config for the subcommand")
    parser.add_argument("--seed", type=int, default=None, help="Root seed override")
    parser.add_argument("--out", help="Output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate or import a channel dataset")
    gen.add_argument("--scene", default="urban-los")
    gen.add_argument("--n", type=int, default=20_000)
    gen.add_argument("--role", default="train", help="Dataset name suffix (train/test)")
    gen.add_argument("--import-path", help="Import a .npy/.npz/.mat channel array instead")
    gen.add_argument("--key", default="channels", help="Array key inside .npz/.mat files")
    gen.set_defaults(handler=cmd_gen)

    for name, handler in (
        ("train", cmd_train),
        ("train-cond", lambda a: cmd_train(a, conditional=True)),
        ("train-vae", cmd_train_vae),
    ):
        p = sub.add_parser(name, help=f"{name} from a dataset directory")
        p.add_argument("--dataset", required=True)
        p.add_argument("--steps", type=int, default=None)
        p.set_defaults(handler=handler)

    est = sub.add_parser("estimate", help="Estimate one channel from noisy pilots")
    est.add_argument("--checkpoint", required=True)
    est.add_argument("--dataset", required=True)
    est.add_argument("--index", type=int, default=0)
    est.add_argument("--snr", type=float, default=10.0)
    est.add_argument("--n-pilots", type=int, default=32)
    est.add_argument("--pilots", choices=[k.value for k in PilotKind], default="qpsk")
    est.set_defaults(handler=cmd_estimate)

    ext = sub.add_parser("extrapolate", help="Extrapolate one channel from a sub-array")
    ext.add_argument("--checkpoint", required=True)
    ext.add_argument("--dataset", required=True)
    ext.add_argument("--index", type=int, default=0)
    ext.add_argument("--mask", default="random:0.5")
    ext.add_argument("--cfg-weight", type=float, default=None)
    ext.set_defaults(handler=cmd_extrapolate)

    fb = sub.add_parser("feedback", help="VAE feedback round trips")
    fb.add_argument("--vae", required=True)
    fb.add_argument("--latent-checkpoint")
    fb.add_argument("--dataset", required=True)
    fb.add_argument("--bits", type=int, default=None)
    fb.add_argument("--snr", type=float, default=None, help="Feedback link SNR in dB")
    fb.add_argument("--denoise", action=argparse.BooleanOptionalAction, default=None)
    fb.add_argument("--n", type=int, default=100)
    fb.set_defaults(handler=cmd_feedback)

    ev = sub.add_parser("eval", help="Run an experiment config")
    ev.add_argument("--sweep", help="JSON object of field -> list of values")
    ev.set_defaults(handler=cmd_eval)

    pl = sub.add_parser("plot", help="Charts and PDF report from results.csv")
    pl.add_argument("--results", required=True)
    pl.add_argument("--no-pdf", action="store_true")
    pl.set_defaults(handler=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    """CLI entry point."""
    settings = get_settings()
    logging.basicConfig(level=settings.log_level, format=settings.log_format)
    configure_torch(settings)

    args = build_parser().parse_args(argv)
    handler: Callable[[argparse.Namespace], None] = args.handler
    try:
        handler(args)
    except (ChannelDiffusionError, ValidationError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
