"""Command-line surface: train, predict, evaluate, gradcheck, inspect.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure. Every file written embeds the resolved config hash and the tool
version, so results stay attributable to the exact settings that produced
them.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from trajflow import __version__
from trajflow.checkpoint import load_checkpoint, read_header, save_checkpoint
from trajflow.config import RunConfig, load_config, save_config
from trajflow.data import (
    load_dataset,
    observation_window,
    rotation_normalize,
    split_train_val,
    window_trajectories,
)
from trajflow.errors import (
    CheckpointError,
    ConfigError,
    DatasetParseError,
    InvalidInputError,
    NumericError,
)
from trajflow.flows import FlowConfig, FlowModel
from trajflow.metrics import evaluate_model, rank_by_likelihood, sample_tracks
from trajflow.training import fit, grad_check, save_history

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


class DataError(Exception):
    """Dataset-level failure (missing file, empty windowing result)."""


def _stamp(cfg_hash: str) -> str:
    return f"tool_version={__version__} config_hash={cfg_hash}"


def _load_windows(path, format, scale, t_obs, t_pred, step, min_future):
    try:
        trajectories = load_dataset(path, format=format, scale=scale)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc
    windows = [
        rotation_normalize(w)
        for w in window_trajectories(trajectories, t_obs, t_pred, step, min_future)
    ]
    if not windows:
        raise DataError(f"dataset {path} produced no windows for these settings")
    return windows


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    out_dir = Path(args.out or cfg.output.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.hash()

    windows = _load_windows(
        cfg.data.train_path, cfg.data.format, cfg.data.scale,
        cfg.data.t_obs, cfg.data.t_pred, cfg.data.step, min_future=None,
    )
    train_set, val_set = split_train_val(
        windows, cfg.train.validation_fraction, cfg.train.seed
    )
    if not train_set or not val_set:
        raise DataError("train/validation split left an empty side; adjust the fraction")

    model = FlowModel(cfg.flow_config(), seed=cfg.train.seed)
    result = fit(
        train_set, val_set, model, cfg.train, cfg.noise,
        augment_cfg=cfg.augment.to_augment_config(),
    )

    meta = {"run_config": cfg.as_dict(), "run_config_hash": cfg_hash}
    model.load_state_dict(result.final_state)
    save_checkpoint(model, out_dir / "model_final.ckpt", extra_meta=meta)
    model.load_state_dict(result.best_state)
    save_checkpoint(
        model, out_dir / "model_best.ckpt",
        extra_meta={**meta, "best_epoch": result.best_epoch},
    )
    save_history(result.history, out_dir / "history.csv", meta={"stamp": _stamp(cfg_hash)})
    save_config(cfg, out_dir / "config.toml", comment=_stamp(cfg_hash))
    if result.diverged:
        print(f"training aborted early (non-finite loss); last good state saved to {out_dir}")
        return EXIT_NUMERIC
    print(f"trained {len(result.history)} epochs; checkpoints in {out_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    header = read_header(args.checkpoint)
    cfg_hash = header.get("config_hash", "unknown")
    try:
        trajectories = load_dataset(args.dataset, format=args.format, scale=args.scale)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {args.dataset}") from exc
    if not trajectories:
        raise DataError(f"no observed tracks in {args.dataset}")

    generator = torch.Generator()
    generator.manual_seed(args.seed)
    out_path = Path(args.out or "predictions.txt")
    with open(out_path, "w") as fh:
        fh.write(f"# trajflow predictions {_stamp(cfg_hash)}\n")
        fh.write(f"# samples_per_agent={args.top_k or args.samples}\n")
        fh.write("# columns: agent_id sample_idx log_likelihood step x y\n")
        for traj in trajectories:
            window = observation_window(traj.positions)
            tracks, lls = sample_tracks(model, window, args.samples, generator)
            if args.top_k is not None:
                if args.top_k > args.samples:
                    raise ConfigError("--top-k must not exceed --samples")
                order = np.argsort(-lls, kind="stable")[: args.top_k]
                tracks, lls = tracks[order], lls[order]
            for s, (track, ll) in enumerate(zip(tracks, lls)):
                for t, (x, y) in enumerate(track):
                    fh.write(
                        f"{traj.agent_id} {s} {float(ll)!r} {t} {float(x)!r} {float(y)!r}\n"
                    )
    print(f"wrote predictions for {len(trajectories)} agents to {out_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    header = read_header(args.checkpoint)
    cfg_hash = header.get("config_hash", "unknown")
    data_meta = header.get("meta", {}).get("run_config", {}).get("data", {})
    t_obs = args.t_obs or data_meta.get("t_obs", 8)
    min_future = args.min_future or data_meta.get("min_future", 2)
    t_pred = model.config.dim // 2

    windows = _load_windows(
        args.dataset, args.format, args.scale, t_obs, t_pred,
        step=data_meta.get("step", 1), min_future=min_future,
    )
    generator = torch.Generator()
    generator.manual_seed(args.seed)
    quarters = sorted({max(0, round(t_pred * q) - 1) for q in (0.25, 0.5, 0.75, 1.0)})
    report = evaluate_model(
        model, windows, args.samples, generator,
        oracle_steps=tuple(quarters), top_k_of=args.top_k_of,
    )

    out_dir = Path(args.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.txt", "w") as fh:
        fh.write(f"# trajflow evaluation {_stamp(cfg_hash)}\n")
        fh.write("# columns: dataset n_windows min_ade min_fde\n")
        fh.write(
            f"{Path(args.dataset).name} {report.n_windows} "
            f"{report.mean_min_ade!r} {report.mean_min_fde!r}\n"
        )
        fh.write("# oracle top 10%: horizon_step mean_error\n")
        for step, value in sorted(report.oracle.items()):
            fh.write(f"oracle {step} {value!r}\n")
    with open(out_dir / "rank_curve.txt", "w") as fh:
        fh.write(f"# trajflow rank curve {_stamp(cfg_hash)}\n")
        fh.write("# columns: rank mean_ade mean_fde\n")
        for rank, (ade, fde) in enumerate(report.rank_curve, start=1):
            fh.write(f"{rank} {float(ade)!r} {float(fde)!r}\n")
    print(
        f"evaluated {report.n_windows} windows: "
        f"minADE {report.mean_min_ade:.4f} minFDE {report.mean_min_fde:.4f} -> {out_dir}"
    )
    return EXIT_OK


def gradcheck_model(seed: int = 0) -> FlowModel:
    """Desk-scale model: every parameter group is cheap enough to difference."""
    config = FlowConfig(
        dim=4, n_layers=2, k_bins=4, support_b=4.0,
        cond_dim=16, conditioner_hidden=8, conditioner_depth=1,
    )
    return FlowModel(config, seed=seed, out_init_scale=0.05)


def cmd_gradcheck(args) -> int:
    tolerance = args.tolerance
    model = gradcheck_model(args.seed)
    rng = np.random.default_rng(args.seed)
    observed = torch.as_tensor(rng.normal(size=(4, 4, 2)))
    future = torch.as_tensor(rng.uniform(-3, 3, size=(4, 4)))
    report = grad_check(
        model, observed, future, tolerance=tolerance, limit_per_group=args.limit
    )
    lines = [
        f"{name} {err:.3e} {'ok' if err < tolerance else 'FAIL'}"
        for name, err in sorted(report.max_rel_error.items())
    ]
    text = "\n".join(lines)
    print(text)
    print(f"worst {report.worst:.3e} tolerance {tolerance:g} "
          f"-> {'PASS' if report.passed else 'FAIL'}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(f"# trajflow gradcheck tool_version={__version__} "
                     f"tolerance={tolerance!r}\n")
            fh.write(text + "\n")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_inspect(args) -> int:
    header = read_header(args.checkpoint)
    print(f"format_version: {header['format_version']}")
    print(f"tool_version:   {header['tool_version']}")
    print(f"config_hash:    {header['config_hash']}")
    print(f"alpha:          {header['alpha']}")
    for key, value in sorted(header["config"].items()):
        print(f"config.{key}: {value}")
    n_params = sum(
        int(np.prod(a["shape"])) for a in header["arrays"] if a["dtype"] == "<f8"
    )
    print(f"parameters:     {n_params}")
    print(f"arrays:         {len(header['arrays'])}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajflow", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a config file")
    train.add_argument("--config", required=True)
    train.add_argument("--out", default=None)
    train.add_argument("--seed", type=int, default=None)
    train.set_defaults(func=cmd_train)

    predict = sub.add_parser("predict", help="sample futures for observed tracks")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--dataset", required=True)
    predict.add_argument("--format", default="eth-ucy-text")
    predict.add_argument("--scale", type=float, default=1.0)
    predict.add_argument("--samples", type=int, default=20)
    predict.add_argument("--top-k", type=int, default=None)
    predict.add_argument("--seed", type=int, default=0)
    predict.add_argument("--out", default=None)
    predict.set_defaults(func=cmd_predict)

    evaluate = sub.add_parser("evaluate", help="compute metrics on a dataset")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--format", default="eth-ucy-text")
    evaluate.add_argument("--scale", type=float, default=1.0)
    evaluate.add_argument("--samples", type=int, default=20)
    evaluate.add_argument("--top-k-of", type=int, default=None)
    evaluate.add_argument("--t-obs", type=int, default=None)
    evaluate.add_argument("--min-future", type=int, default=None)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", default=None)
    evaluate.set_defaults(func=cmd_evaluate)

    gradcheck = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gradcheck.add_argument("--tolerance", type=float, default=1e-3)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument(
        "--limit", type=int, default=None,
        help="check at most this many entries per parameter group",
    )
    gradcheck.add_argument("--out", default=None)
    gradcheck.set_defaults(func=cmd_gradcheck)

    inspect = sub.add_parser("inspect", help="print checkpoint metadata")
    inspect.add_argument("--checkpoint", required=True)
    inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError,
        DatasetParseError,
        InvalidInputError,
        CheckpointError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
