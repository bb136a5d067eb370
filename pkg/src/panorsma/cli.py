"""Experiment runner: training curves, evaluation sweeps, CDFs, and frame metrics.

Exit codes: 0 ok, 2 configuration error, 3 data error. Plots are left to
external tools; every command emits CSV/JSON plus a manifest sufficient to
replay the run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, fov, qos
from .config import ConfigError, ExperimentConfig, load_config
from .env import StreamingEnv
from .fov import TraceFormatError
from .metrics import FrameFormatError, load_frame, wmse, ws_psnr, ws_ssim
from .quality import fit_surrogate, load_samples, save_model
from .rl.ppo import AgentParams, evaluate, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class DataError(Exception):
    """Missing or malformed input data."""


def _write_manifest(out_dir: Path, cfg: ExperimentConfig, command: str,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    manifest.update(extra or {})
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    if getattr(args, "scheme", None):
        updates["schemes"] = tuple(args.scheme)
    return dataclasses.replace(cfg, **updates) if updates else cfg


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, cfg, "train", {"workers": args.workers})

    for scheme in cfg.schemes:
        env_cfg = cfg.env_config(scheme)

        def factory(worker_seed, _cfg=env_cfg):
            return StreamingEnv(_cfg, seed=worker_seed)

        print(f"[train] scheme={scheme} seed={cfg.seed} epochs={cfg.ppo.epochs}")
        result = train(factory, cfg.ppo, seed=cfg.seed, n_workers=args.workers,
                       progress=(lambda ep, r: print(f"  episode {ep}: reward {r:.4f}"))
                       if args.verbose else None)
        ckpt = out_dir / f"checkpoint_{scheme.lower()}.json"
        result.agent.save(ckpt, config=dataclasses.asdict(cfg.ppo),
                          update_counter=result.update_counter)
        log_path = out_dir / f"train_log_{scheme.lower()}.csv"
        rows = [
            [row["episode"], row["mean_reward"], scheme, cfg.quality_kind,
             row["actor_loss"], row["critic_loss"], row["grad_norm"],
             row["noise_scale"]]
            for row in result.log_rows
        ]
        _write_csv(log_path, ["episode", "mean_reward", "scheme", "metric_kind",
                              "actor_loss", "critic_loss", "grad_norm",
                              "noise_scale"], rows)
        print(f"[train] wrote {ckpt} and {log_path}")
    return EXIT_OK


# -- eval / sweep -------------------------------------------------------------


def _load_checkpoint(path, env) -> AgentParams:
    try:
        agent, _, _ = AgentParams.load(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if agent.obs_dim != env.observation_dim or agent.act_dim != env.action_dim:
        raise DataError(
            f"checkpoint dims ({agent.obs_dim}, {agent.act_dim}) do not match the "
            f"environment ({env.observation_dim}, {env.action_dim})"
        )
    return agent


def _collect_scores(env, agent: AgentParams, episodes: int):
    """Per-user-slot ScoreBreakdowns from deterministic evaluation episodes."""
    runs = evaluate(env, agent, episodes)
    rows = []
    for episode in runs:
        for slot, result in enumerate(episode):
            for user, b in enumerate(result.per_user):
                rows.append((slot, user, b))
    return rows


def _summary_row(score_rows) -> dict:
    totals = [b.total for _, _, b in score_rows]
    return {
        "mean_total": float(np.mean(totals)),
        "mean_f_t": float(np.mean([b.delay_score for _, _, b in score_rows])),
        "mean_f_q": float(np.mean([b.quality_score for _, _, b in score_rows])),
    }


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, cfg, "eval", {"checkpoint": str(args.checkpoint)})

    score_rows_all = []
    cdf_rows = []
    summary_rows = []
    for scheme in cfg.schemes:
        env = StreamingEnv(cfg.env_config(scheme), seed=cfg.seed)
        agent = _load_checkpoint(args.checkpoint, env)
        score_rows = _collect_scores(env, agent, cfg.eval_episodes)
        for slot, user, b in score_rows:
            score_rows_all.append([slot, user, scheme, b.data_bits, b.delay_s,
                                   b.delay_score, b.quality_db, b.quality_score,
                                   b.total])
        cdf = qos.score_cdf([b.total for _, _, b in score_rows])
        cdf_rows.extend([[scheme, float(t), float(f)]
                         for t, f in zip(cdf.thresholds, cdf.fractions)])
        summary = _summary_row(score_rows)
        summary_rows.append([scheme, summary["mean_total"], summary["mean_f_t"],
                             summary["mean_f_q"]])

    _write_csv(out_dir / "scores.csv", qos.SCORE_CSV_HEADER, score_rows_all)
    _write_csv(out_dir / "total_score_cdf.csv", ["scheme", "threshold", "fraction"],
               cdf_rows)
    _write_csv(out_dir / "summary.csv", ["scheme", "mean_total", "mean_f_t",
                                         "mean_f_q"], summary_rows)
    print(f"[eval] wrote scores, CDF and summary CSVs to {out_dir}")
    return EXIT_OK


def _sweep_points(cfg: ExperimentConfig):
    """(axis, value, modified config) triples for every configured sweep point."""
    for kappa in cfg.sweep.kappa:
        yield "kappa", kappa, dataclasses.replace(
            cfg, qos=dataclasses.replace(cfg.qos, kappa=kappa))
    for bw in cfg.sweep.bandwidth_hz:
        yield "bandwidth_hz", bw, dataclasses.replace(
            cfg, channel=dataclasses.replace(cfg.channel, bandwidth_hz=bw))
    for t_max in cfg.sweep.t_max_s:
        yield "t_max_s", t_max, dataclasses.replace(
            cfg, qos=dataclasses.replace(cfg.qos, t_max_s=t_max))
    for q_min in cfg.sweep.q_min_db:
        yield "q_min_db", q_min, dataclasses.replace(
            cfg, qos=dataclasses.replace(cfg.qos, q_min_db=q_min))


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, cfg, "sweep", {"checkpoint": str(args.checkpoint)})

    summary_rows = []
    cdf_rows = []
    for axis, value, point_cfg in _sweep_points(cfg):
        for scheme in cfg.schemes:
            env = StreamingEnv(point_cfg.env_config(scheme), seed=cfg.seed)
            agent = _load_checkpoint(args.checkpoint, env)
            score_rows = _collect_scores(env, agent, cfg.eval_episodes)
            summary = _summary_row(score_rows)
            summary_rows.append([axis, value, scheme, summary["mean_total"],
                                 summary["mean_f_t"], summary["mean_f_q"]])
            cdf = qos.score_cdf([b.total for _, _, b in score_rows])
            cdf_rows.extend([[axis, value, scheme, float(t), float(f)]
                             for t, f in zip(cdf.thresholds, cdf.fractions)])

    _write_csv(out_dir / "sweep_summary.csv",
               ["axis", "value", "scheme", "mean_total", "mean_f_t", "mean_f_q"],
               summary_rows)
    _write_csv(out_dir / "sweep_cdf.csv",
               ["axis", "value", "scheme", "threshold", "fraction"], cdf_rows)
    print(f"[sweep] wrote sweep summary and CDFs to {out_dir}")
    return EXIT_OK


# -- metrics ------------------------------------------------------------------


def _metric_pairs(path_a: Path, path_b: Path):
    if path_a.is_dir() != path_b.is_dir():
        raise DataError("metrics arguments must both be files or both directories")
    if not path_a.is_dir():
        return [(path_a.name, path_a, path_b)]
    names_a = {p.name for p in path_a.iterdir() if p.is_file()}
    names_b = {p.name for p in path_b.iterdir() if p.is_file()}
    missing = sorted(names_a.symmetric_difference(names_b))
    if missing:
        raise DataError(f"unpaired file(s): {', '.join(missing)}")
    if not names_a:
        raise DataError("no files to compare")
    return [(name, path_a / name, path_b / name) for name in sorted(names_a)]


def _fmt_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def cmd_metrics(args) -> int:
    pairs = _metric_pairs(Path(args.path_a), Path(args.path_b))
    rows = []
    for name, file_a, file_b in pairs:
        x = load_frame(file_a)
        y = load_frame(file_b)
        rows.append([name, _fmt_db(ws_psnr(x, y)), _fmt_db(ws_ssim(x, y)),
                     f"{wmse(x, y):.10g}"])
    out = Path(args.out) if args.out else None
    if out:
        _write_csv(out, ["pair", "ws_psnr_db", "ws_ssim_db", "wmse"], rows)
        print(f"[metrics] wrote {out}")
    else:
        print("pair,ws_psnr_db,ws_ssim_db,wmse")
        for row in rows:
            print(",".join(str(v) for v in row))
    return EXIT_OK


# -- fit-quality / trace-synth --------------------------------------------------


def cmd_fit_quality(args) -> int:
    try:
        kind, samples = load_samples(args.samples)
    except FileNotFoundError:
        raise DataError(f"sample file not found: {args.samples}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    model = fit_surrogate(samples, degree=args.degree, kind=kind)
    save_model(model, args.out)
    print(f"[fit-quality] degree {args.degree}, rms residual "
          f"{model.fit_residual:.4f} dB -> {args.out}")
    return EXIT_OK


def cmd_trace_synth(args) -> int:
    trace = fov.synth_head_trace(args.seed, args.duration, args.dt)
    fov.save_head_trace(trace, args.out)
    print(f"[trace-synth] {len(trace)} samples -> {args.out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panorsma",
        description="Simulate and optimize multi-user panoramic streaming.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one policy per scheme")
    p_train.add_argument("--config", help="experiment config JSON")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out", help="output directory")
    p_train.add_argument("--scheme", action="append",
                         choices=["RSMA", "NOMA", "OFDMA"])
    p_train.add_argument("--workers", type=int, default=1)
    p_train.add_argument("--verbose", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config")
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--out")
    p_eval.add_argument("--scheme", action="append",
                        choices=["RSMA", "NOMA", "OFDMA"])
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="evaluate over configured parameter grids")
    p_sweep.add_argument("--checkpoint", required=True)
    p_sweep.add_argument("--config")
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--scheme", action="append",
                         choices=["RSMA", "NOMA", "OFDMA"])
    p_sweep.set_defaults(func=cmd_sweep)

    p_metrics = sub.add_parser("metrics", help="weighted PSNR/SSIM of image pairs")
    p_metrics.add_argument("path_a")
    p_metrics.add_argument("path_b")
    p_metrics.add_argument("--out")
    p_metrics.set_defaults(func=cmd_metrics)

    p_fit = sub.add_parser("fit-quality", help="fit a quality surrogate from samples")
    p_fit.add_argument("samples")
    p_fit.add_argument("--degree", type=int, default=2)
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit_quality)

    p_trace = sub.add_parser("trace-synth", help="synthesize a head-motion trace")
    p_trace.add_argument("--seed", type=int, default=0)
    p_trace.add_argument("--duration", type=float, default=60.0)
    p_trace.add_argument("--dt", type=float, default=0.1)
    p_trace.add_argument("--out", required=True)
    p_trace.set_defaults(func=cmd_trace_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TraceFormatError, FrameFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
