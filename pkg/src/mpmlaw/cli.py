"""Command-line entry points: generate ground truth, train, evaluate, export.

Exit codes: 0 ok, 2 user error (arguments, files, config), 3 numerical
divergence. All commands are deterministic given --seed; NCLAW_THREADS caps
worker threads and NCLAW_BACKEND picks the kernel backend.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import backend
from .errors import GradientDiverged, MpmlawError, SimulationDiverged
from .mpm import run
from .neural_law import NeuralLaw, init_params, load_params, save_params
from .scenarios import build_particles, load_scenario
from .trajectory import export_csv, export_ply_sequence, read_trajectory, write_trajectory
from .training import TrainConfig, position_loss, train


class UserError(Exception):
    pass


def _load_scenario_checked(path):
    p = Path(path)
    if not p.exists():
        raise UserError(f"scenario file not found: {p}")
    try:
        return load_scenario(p)
    except Exception as e:
        raise UserError(f"invalid scenario {p}: {e}") from e


def cmd_generate(args) -> int:
    scenario = _load_scenario_checked(args.scenario)
    if args.steps is not None:
        from dataclasses import replace

        scenario = replace(scenario, steps=args.steps)
    if args.seed is not None:
        from dataclasses import replace

        scenario = replace(scenario, seed=args.seed)
    particles, laws = build_particles(scenario)
    config = scenario.sim_config()
    t0 = time.time()
    traj = run(particles, laws, config, scenario.steps, full_state=True)
    elapsed = time.time() - t0
    write_trajectory(args.out, traj)
    print(f"wrote {traj.frame_count} frames x {traj.particle_count} particles "
          f"to {args.out} ({elapsed:.2f}s)")
    return 0


def _load_train_config(path, epochs, seed) -> TrainConfig:
    cfg = TrainConfig()
    if path is not None:
        import yaml

        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        unknown = set(raw) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise UserError(f"unknown train config keys: {sorted(unknown)}")
        cfg = TrainConfig(**raw)
    if epochs is not None:
        cfg.epochs = epochs
    if seed is not None:
        cfg.seed = seed
    return cfg


def cmd_train(args) -> int:
    scenario = _load_scenario_checked(args.scenario)
    gt_path = Path(args.ground_truth)
    if not gt_path.exists():
        raise UserError(f"ground-truth trajectory not found: {gt_path}")
    gt = read_trajectory(gt_path)
    if not gt.has_full_state:
        raise UserError("training needs a full-state trajectory (teacher forcing)")
    train_cfg = _load_train_config(args.train_config, args.epochs, args.seed)
    template, _ = build_particles(scenario)
    if template.count != gt.particle_count:
        raise UserError(
            f"scenario produces {template.count} particles, trajectory has {gt.particle_count}"
        )
    params = init_params(train_cfg.seed, stress_scale=args.stress_scale)
    law = NeuralLaw(params)
    sim_config = scenario.sim_config()
    try:
        train(law, gt, template, sim_config, train_cfg,
              metrics_path=args.metrics, log=print)
    except (SimulationDiverged, GradientDiverged) as e:
        save_params(args.out, params)  # checkpoint of the last completed update
        print(f"training diverged: {e}", file=sys.stderr)
        return 3
    save_params(args.out, params)
    print(f"wrote checkpoint to {args.out}")
    return 0


def cmd_eval(args) -> int:
    scenario = _load_scenario_checked(args.scenario)
    gt_path = Path(args.ground_truth)
    if not gt_path.exists():
        raise UserError(f"ground-truth trajectory not found: {gt_path}")
    gt = read_trajectory(gt_path)
    particles, laws = build_particles(scenario)
    if args.checkpoint == "classic":
        law_set = laws
    else:
        ckpt = Path(args.checkpoint)
        if not ckpt.exists():
            raise UserError(f"checkpoint not found: {ckpt}")
        law_set = NeuralLaw(load_params(ckpt))
    steps = gt.frame_count - 1
    sim = run(particles, law_set, scenario.sim_config(), steps, full_state=False)
    mse_every = position_loss(sim, gt, every=args.every)
    per_frame = np.mean(np.sum((sim.positions - gt.positions) ** 2, axis=-1), axis=-1)
    print(f"mse_every_{args.every}: {mse_every:.8e}")
    if args.report:
        with open(args.report, "w") as f:
            f.write("frame,mse\n")
            for n, v in enumerate(per_frame):
                f.write(f"{n},{v:.8e}\n")
        print(f"wrote per-frame series to {args.report}")
    else:
        for n in range(0, len(per_frame), max(1, steps // 10)):
            print(f"frame {n}: mse {per_frame[n]:.8e}")
    return 0


def cmd_export(args) -> int:
    path = Path(args.trajectory)
    if not path.exists():
        raise UserError(f"trajectory not found: {path}")
    traj = read_trajectory(path)
    if args.format == "csv":
        out = export_csv(traj, args.out, stem=path.stem)
        print(f"wrote {out}")
    else:
        paths = export_ply_sequence(traj, args.out, stem=path.stem)
        print(f"wrote {len(paths)} ply files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpmlaw", description=__doc__)
    ap.add_argument("--deterministic", action="store_true", default=True,
                    help="force deterministic reductions (always on for the CPU kernels)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a scenario with its classic laws")
    g.add_argument("scenario")
    g.add_argument("out")
    g.add_argument("--steps", type=int, default=None)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit the learnable law to a trajectory")
    t.add_argument("ground_truth")
    t.add_argument("scenario")
    t.add_argument("out")
    t.add_argument("--train-config", default=None)
    t.add_argument("--metrics", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--stress-scale", type=float, default=1e5)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="roll out a checkpoint and score against ground truth")
    e.add_argument("checkpoint", help="checkpoint path, or 'classic' for the scenario's laws")
    e.add_argument("scenario")
    e.add_argument("ground_truth")
    e.add_argument("--every", type=int, default=5)
    e.add_argument("--report", default=None)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="convert a trajectory for external viewers")
    x.add_argument("trajectory")
    x.add_argument("--format", choices=("csv", "ply"), default="csv")
    x.add_argument("--out", default=".")
    x.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    backend.configure_threads()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SimulationDiverged, GradientDiverged) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return 3
    except MpmlawError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
