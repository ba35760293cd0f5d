"""Command-line entry point ``koopquant``.

Subcommands::

    simulate            generate a random-input trajectory set (.npz)
    identify            fit a lifted predictor from a trajectory set
    predict             open-loop prediction error of a predictor on data
    mpc                 closed-loop MPC run of a predictor on its plant
    sweep               Monte-Carlo word-length sweep from a YAML config
    validate-quantizer  check the dither error moment law empirically

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import yaml

from .dynamics import TrajectorySet, generate_training_set
from .errors import ConfigError, NumericalError
from .harness import (
    ExperimentConfig,
    _Context,
    _mpc_scenario,
    build_dictionary,
    derive_seed,
    emit_outputs,
    fit_predictor,
    load_config,
    run_sweep,
)
from .ident import LinearPredictor, assemble_snapshots, default_quantizers
from .mpc import run_closed_loop
from .predictor import PredictionRun, evaluate_predictor, rollout
from .quantization import DitherStream, build_quantizer, dither_quantize, error_moment_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not numerical ones
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    over = {}
    for key in ("plant", "master_seed", "n_traj", "steps", "workers", "output_dir"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "paper_scale", False):
        over["paper_scale"] = True
    if over:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **over})
    return cfg


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    plant = cfg.make_plant()
    data = generate_training_set(plant, cfg.n_traj, cfg.steps, cfg.master_seed)
    data.save_npz(args.out)
    if args.csv:
        data.to_csv(args.csv)
    _print({"plant": plant.name, "n_traj": data.n_traj, "steps": data.horizon, "out": args.out})
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg = _config(args)
    data = TrajectorySet.load_npz(args.data)
    plant = cfg.make_plant() if data.plant == cfg.plant else ExperimentConfig(
        plant=data.plant, dictionary=cfg.dictionary).make_plant()
    d = build_dictionary(cfg, plant)
    mode = args.mode
    if mode == "none":
        s = assemble_snapshots(data, d, "none")
    else:
        if args.word_length is None:
            raise ConfigError("--word-length is required for quantized modes")
        qs = default_quantizers(data, d, args.word_length, mode, cfg.margin, cfg.shared_resolution)
        stream = DitherStream(derive_seed(cfg.master_seed, "dither", args.word_length, args.seed))
        s = assemble_snapshots(data, d, mode, args.word_length, qs, stream)
    p = fit_predictor(s, d, data)
    p.meta.update({"plant": plant.name, "quantization": s.quantization_tag})
    p.save(args.out)
    _print({"N": p.N, "m": p.m, "mode": mode, "word_length": args.word_length, "out": args.out})
    return EXIT_OK


def cmd_predict(args) -> int:
    p = LinearPredictor.load(args.predictor)
    data = TrajectorySet.load_npz(args.data)
    err = evaluate_predictor(p, data, args.horizon)
    if args.csv:
        X, U = data.trajectories[0]
        T = U.shape[1] if args.horizon is None else min(args.horizon, U.shape[1])
        PredictionRun(rollout(p, X[:, 0], U[:, :T]), X[:, : T + 1]).to_csv(args.csv)
    _print({"prediction_error": err, "n_traj": data.n_traj})
    return EXIT_OK


def cmd_mpc(args) -> int:
    cfg = _config(args)
    if cfg.mpc is None:
        raise ConfigError("config has no mpc section")
    plant = cfg.make_plant()
    if args.predictor:
        p = LinearPredictor.load(args.predictor)
    else:
        p = _Context(cfg).reference
    mcfg, x0, duration, _ = _mpc_scenario(cfg, plant)
    res = run_closed_loop(plant, p, mcfg, x0, duration)
    if args.out:
        res.to_csv(args.out)
    _print({"J": res.J, "max_kkt": res.max_kkt, "soft_violation_steps": res.soft_violation_steps})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    result = run_sweep(cfg)
    paths = emit_outputs(result, cfg.output_dir, svg=args.svg)
    _print({"records": len(result.records), "slopes": result.slopes(), "outputs": paths})
    return EXIT_OK


def cmd_validate_quantizer(args) -> int:
    if args.eps <= 0 or args.samples < 2 or args.dim < 1:
        raise ConfigError("need eps > 0, samples >= 2 and dim >= 1")
    q = build_quantizer(-0.5 * args.eps * 2 ** args.word_length, 0.5 * args.eps * 2 ** args.word_length,
                        args.word_length)
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(q.x_min + q.resolution_eps, q.x_max - q.resolution_eps, size=(args.dim, args.samples))
    w = DitherStream(args.seed).sample(q.resolution_eps, x.shape)
    rep = error_moment_report(dither_quantize(q, x, w) - x, q.resolution_eps)
    out = rep.to_dict()
    out["passed"] = bool(rep.max_abs_z() <= args.z_max)
    _print(out)
    return EXIT_OK if out["passed"] else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="koopquant", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--plant", choices=["pendulum", "vdp", "motor", "kdv"])
        sp.add_argument("--master-seed", dest="master_seed", type=int)

    sp = sub.add_parser("simulate", help="generate training trajectories")
    common(sp)
    sp.add_argument("--n-traj", dest="n_traj", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out", required=True, help="output .npz")
    sp.add_argument("--csv", help="also write one CSV per trajectory into this directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("identify", help="fit a predictor from trajectories")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=["none", "state-input", "observable"], default="none")
    sp.add_argument("--word-length", dest="word_length", type=int)
    sp.add_argument("--seed", type=int, default=0, help="dither seed index")
    sp.add_argument("--out", required=True, help="output predictor .npz")
    sp.set_defaults(func=cmd_identify)

    sp = sub.add_parser("predict", help="open-loop prediction error")
    sp.add_argument("--predictor", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--csv", help="write the first trajectory's rollout here")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("mpc", help="closed-loop MPC run")
    common(sp)
    sp.add_argument("--predictor", help="predictor .npz (default: fit unquantized from the config)")
    sp.add_argument("--out", help="closed-loop CSV")
    sp.set_defaults(func=cmd_mpc)

    sp = sub.add_parser("sweep", help="Monte-Carlo word-length sweep")
    common(sp)
    sp.add_argument("--paper-scale", dest="paper_scale", action="store_true",
                    help="200 trajectories x 1000 steps x 50 seeds")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out", dest="output_dir")
    sp.add_argument("--svg", action="store_true", help="also render SVG charts")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate-quantizer", help="empirical dither error moments")
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--word-length", dest="word_length", type=int, default=8)
    sp.add_argument("--samples", type=int, default=1_000_000)
    sp.add_argument("--dim", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--z-max", dest="z_max", type=float, default=4.0)
    sp.set_defaults(func=cmd_validate_quantizer)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, yaml.YAMLError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
