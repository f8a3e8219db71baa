"""Command-line entry point.

Exit codes: 0 ok, 2 usage, 3 input error, 4 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from pydantic import ValidationError

from screwsplat import __version__
from screwsplat.config import ControlConfig, FitConfig, InitConfig, LossConfig, Settings, SynthConfig
from screwsplat.control import GoalSpec, control_to_goal, estimate_state, plan_trajectory
from screwsplat.embedders import ToyEmbedder
from screwsplat.errors import InputError, NonFiniteLossError, NumericError
from screwsplat.metrics import evaluate
from screwsplat.renderer import render_model
from screwsplat.scenes import (
    dataset_views,
    hemisphere_cameras,
    load_dataset,
    parse_spec,
    preset,
    save_dataset,
    synthesize,
)
from screwsplat.splat_model import load_model, save_model
from screwsplat.trainer import fit
from screwsplat.utils import load_png, parse_floats, parse_size, save_png

logger = logging.getLogger("screwsplat")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    """Flags parse but do not fit together."""


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, default=str))


def _echo_config(args: argparse.Namespace, resolved: dict | None = None) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "handler"}
    if resolved:
        payload["resolved"] = resolved
    _write_json(Path(args.out_dir) / "config.json", payload)


# -- subcommands --


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        spec = parse_spec(Path(args.spec).read_text())
    else:
        spec = preset(args.preset)
    width, height = args.size
    cfg = SynthConfig.build(n_cameras=args.cameras, n_configs=args.configs, width=width, height=height)
    dataset = synthesize(spec, cfg, args.seed)
    path = save_dataset(dataset, args.out_dir)
    _echo_config(args, {"synth": cfg.model_dump()})
    print(path)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    fit_values = {"seed": args.seed, "checkpoint_interval": args.checkpoint_interval}
    if args.iters is not None:
        fit_values["iterations"] = args.iters
    cfg = FitConfig.desk(**fit_values) if args.desk else FitConfig.build(**fit_values)
    loss_values = {} if args.beta is None else {"beta": args.beta}
    loss_cfg = LossConfig.real_capture(**loss_values) if args.real_capture else LossConfig.build(**loss_values)
    init_values = {} if args.gaussians is None else {"n_gaussians": args.gaussians}
    if args.real_capture:
        init_cfg = InitConfig.real_capture(**init_values)
    elif args.desk:
        init_cfg = InitConfig.desk(**init_values)
    else:
        init_cfg = InitConfig.build(**init_values)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(args, {"fit": cfg.model_dump(), "loss": loss_cfg.model_dump(), "init": init_cfg.model_dump()})
    model = fit(
        dataset.observations,
        cfg,
        loss_cfg,
        init_cfg,
        log_path=out_dir / "loss.csv",
        checkpoint_dir=out_dir / "checkpoints" if cfg.checkpoint_interval else None,
        dump_dir=out_dir,
    )
    out = Path(args.out) if args.out else out_dir / "model.json"
    save_model(model, out)
    print(out)
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    if args.theta is not None:
        theta = args.theta
        if len(theta) != model.n_screws:
            raise UsageError(f"--theta has {len(theta)} values, model has {model.n_screws} screws")
        theta = torch.tensor(theta, dtype=torch.float64)
    else:
        if not 0 <= args.config < model.n_configs:
            raise UsageError(f"--config must be in [0, {model.n_configs})")
        theta = args.config
    width, height = args.size
    if args.orbit:
        cameras = hemisphere_cameras(args.orbit, image_size=(width, height))
    else:
        if not args.dataset:
            raise UsageError("--camera needs --dataset")
        cameras = load_dataset(args.dataset).manifest.cameras
        if not 0 <= args.camera < len(cameras):
            raise UsageError(f"--camera must be in [0, {len(cameras)})")
        cameras = [cameras[args.camera]]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(args)
    with torch.no_grad():
        for i, cam in enumerate(cameras):
            save_png(render_model(model, theta, cam), out_dir / f"render_{i:03d}.png")
    print(out_dir)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    if dataset.gt_model is None:
        raise FileNotFoundError(f"{args.dataset}/gt_model.json is missing")
    report = evaluate(
        model,
        dataset.gt_model,
        dataset.manifest.gt_screws,
        dataset.holdout,
        seed=args.seed,
        object_name=dataset.manifest.spec.name,
    )
    out = Path(args.out) if args.out else Path(args.out_dir) / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.model_dump_json(indent=1))
    _echo_config(args)
    print(report.csv_row())
    return EXIT_OK


def _current_views(args: argparse.Namespace):
    wanted = [int(c) for c in args.cameras] if args.cameras else None
    return dataset_views(load_dataset(args.dataset), args.config, wanted)


def _control_cfg(args: argparse.Namespace) -> ControlConfig:
    return ControlConfig.build(n_calls=args.calls, n_random=args.random)


def cmd_estimate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    views = _current_views(args)
    theta = estimate_state(model, views, args.seed, _control_cfg(args))
    _write_json(Path(args.out) if args.out else Path(args.out_dir) / "theta.json", {"theta": theta.tolist()})
    _echo_config(args)
    print(json.dumps(theta.tolist()))
    return EXIT_OK


def cmd_control(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    views = _current_views(args)
    goals = [load_png(p) for p in args.goal]
    if len(goals) == 1 and len(views) > 1:
        views = views[:1]
    if len(goals) != len(views):
        raise UsageError(f"{len(goals)} goal images for {len(views)} views")
    embedder = ToyEmbedder()
    goal = GoalSpec.from_exemplars([c for c, _ in views], [img for _, img in views], goals, embedder)
    cfg = _control_cfg(args)
    theta = control_to_goal(model, goal, embedder, args.seed, cfg)
    payload = {"theta": theta.tolist()}
    if args.screw is not None:
        current = estimate_state(model, views, args.seed, cfg)
        trajectory = plan_trajectory(
            model, args.screw, float(current[args.screw]), float(theta[args.screw]),
            cfg.trajectory_offset, cfg.trajectory_steps, robot_base=cfg.robot_base,
        )
        payload["trajectory"] = trajectory.model_dump()
    _write_json(Path(args.out) if args.out else Path(args.out_dir) / "control.json", payload)
    _echo_config(args)
    print(json.dumps(payload["theta"]))
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    cfg = ControlConfig()
    trajectory = plan_trajectory(
        model,
        args.screw,
        args.theta_c,
        args.theta_t,
        cfg.trajectory_offset if args.offset is None else args.offset,
        args.steps,
        robot_base=cfg.robot_base,
    )
    out = Path(args.out) if args.out else Path(args.out_dir) / "trajectory.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trajectory.model_dump_json(indent=1))
    _echo_config(args)
    print(out)
    return EXIT_OK


# -- parser --


def _size_arg(text: str) -> tuple[int, int]:
    try:
        return parse_size(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _floats_arg(text: str) -> list[float]:
    try:
        return parse_floats(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out-dir")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser(settings: Settings | None = None) -> argparse.ArgumentParser:
    settings = settings or Settings()
    parser = argparse.ArgumentParser(prog="screwsplat", description="Articulated object recognition with screw splats")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_common(parser)
    parser.set_defaults(
        seed=settings.default_seed, out_dir=".", threads=settings.threads, log_level=settings.log_level.value
    )
    # repeated on every subcommand; SUPPRESS keeps a value given before the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _add_common(common)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset")
    src.add_argument("--spec", help="ObjectSpec JSON file")
    p.add_argument("--cameras", type=int, default=8)
    p.add_argument("--configs", type=int, default=5)
    p.add_argument("--size", type=_size_arg, default="64x64", help="WIDTHxHEIGHT")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit a model to a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--gaussians", type=int)
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--desk", action="store_true", help="desk-scale schedule and model size")
    p.add_argument("--real-capture", action="store_true")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("render", parents=[common], help="render a model at given joint angles")
    p.add_argument("--model", required=True)
    which = p.add_mutually_exclusive_group()
    which.add_argument("--theta", type=_floats_arg, help="comma-separated joint angles")
    which.add_argument("--config", type=int, default=0)
    view = p.add_mutually_exclusive_group(required=True)
    view.add_argument("--camera", type=int)
    view.add_argument("--orbit", type=int)
    p.add_argument("--dataset")
    p.add_argument("--size", type=_size_arg, default="64x64", help="WIDTHxHEIGHT")
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model against a dataset's ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_eval)

    for name, handler, help_text in (
        ("estimate", cmd_estimate, "estimate the current joint state"),
        ("control", cmd_control, "find joint angles that reach a goal exemplar"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--model", required=True)
        p.add_argument("--dataset", required=True, help="dataset holding the current-state views")
        p.add_argument("--config", type=int, default=0, help="configuration whose views are the current state")
        p.add_argument("--cameras", type=_floats_arg, help="comma-separated camera indices")
        p.add_argument("--calls", type=int, default=50)
        p.add_argument("--random", type=int, default=10)
        p.add_argument("--out")
        if name == "control":
            p.add_argument("--goal", nargs="+", required=True, help="goal exemplar PNG(s), one per view")
            p.add_argument("--screw", type=int, help="also plan a trajectory along this screw")
        p.set_defaults(handler=handler)

    p = sub.add_parser("plan", parents=[common], help="plan a tip trajectory along one screw")
    p.add_argument("--model", required=True)
    p.add_argument("--screw", type=int, required=True)
    p.add_argument("--theta-c", type=float, required=True)
    p.add_argument("--theta-t", type=float, required=True)
    p.add_argument("--offset", type=float)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_plan)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    torch.set_num_threads(max(1, args.threads))
    np.seterr(all="ignore")

    try:
        return args.handler(args)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as e:
        print(f"Error: {e}; state dumped to {e.dump_path}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, FileNotFoundError, ValidationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
