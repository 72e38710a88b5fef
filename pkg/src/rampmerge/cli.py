"""Command-line entry point: ``rampmerge <subcommand> [flags]``.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator

from .belief import BeliefParams, eval_belief, split_dataset, train_belief
from .config import RunConfig, load_config
from .env import MergeEnv, TrajectoryWriter, with_mode
from .errors import (
    CheckpointError,
    CheckpointNotFoundError,
    ConfigError,
    ContractError,
    DatasetParseError,
)
from .gradchecks import CHECKS, COMPONENTS
from .numerics import Xoshiro256pp, checkpoint_to_json, derive_seed, load_checkpoint
from .qlearn import BeliefEncoder, QParams, QPolicy, evaluate, run_training, write_metrics
from .scripted import ScriptedController, dataset_read, dataset_write, generate_dataset

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
GRAD_TOLERANCE = 1e-5

class UsageError(Exception):
    """Bad flags or missing required inputs (exit 2)."""


@contextmanager
def _atomic_path(path: str | Path) -> Iterator[Path]:
    """Yield a temporary sibling of ``path`` and move it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        # mkstemp creates 0600 files; give outputs the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_text(path: str | Path, text: str) -> None:
    with _atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def _print_json(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=False))


def _load_belief(path: str | None) -> BeliefParams:
    if path is None:
        raise UsageError("--belief is required")
    try:
        return BeliefParams.from_checkpoint(load_checkpoint(path))
    except CheckpointNotFoundError as exc:
        raise UsageError(f"belief checkpoint not found: {path}") from exc
    except (KeyError, ContractError) as exc:
        raise UsageError(f"{path} is not a belief checkpoint") from exc


def _env_config(cfg: RunConfig, mode: str | None):
    return with_mode(cfg.env, mode) if mode else cfg.env


def _make_controller(cfg: RunConfig, env_cfg, policy: str, belief_path: str | None, seed: int):
    if policy == "scripted":
        return ScriptedController(env_cfg, cfg.scripted)
    belief = _load_belief(belief_path)
    if policy == "random":
        theta = QParams.init(
            Xoshiro256pp(derive_seed(seed, "random-policy")),
            belief.hidden_size,
            tuple(cfg.train.hidden),
            env_cfg.accel_bounds,
            env_cfg.steering_bounds,
            cfg.train.eps_A,
        )
    else:
        try:
            theta = QParams.from_checkpoint(load_checkpoint(policy))
        except CheckpointNotFoundError as exc:
            raise UsageError(f"policy must be 'scripted', 'random' or an existing Q checkpoint: {policy}") from exc
        except (KeyError, ContractError) as exc:
            raise UsageError(f"{policy} is not a Q-network checkpoint") from exc
        if theta.state_dim != belief.hidden_size:
            raise UsageError("Q-network input size does not match the belief state size")
    return QPolicy(theta, BeliefEncoder(belief))


# --- subcommands ------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace, cfg: RunConfig) -> int:
    n = args.episodes if args.episodes is not None else cfg.data.episodes
    if n < 1:
        raise UsageError("--episodes must be >= 1")
    out = args.out or cfg.output.data
    ds = generate_dataset(cfg.env, n, args.seed, cfg.scripted, cfg.data.modes, cfg.data.action_noise)
    with _atomic_path(out) as tmp:
        dataset_write(ds, tmp)
    _print_json({"episodes": len(ds), "steps": ds.n_steps, "success_rate": ds.success_rate(), "out": str(out)})
    return EXIT_OK


def cmd_train_belief(args: argparse.Namespace, cfg: RunConfig) -> int:
    data = args.data or cfg.output.data
    if not Path(data).exists():
        raise UsageError(f"dataset not found: {data}")
    ds = dataset_read(data)
    if len(ds) < 2:
        raise UsageError("belief training needs a dataset with at least 2 episodes")
    hyper = cfg.belief if args.epochs is None else replace(cfg.belief, epochs=args.epochs)
    params, history = train_belief(ds, hyper, args.seed)
    out = args.out or cfg.output.belief
    losses = args.losses or cfg.output.belief_losses
    with _atomic_path(losses) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "heldout_loss"])
            for rec in history:
                w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.heldout_loss)])
    _write_text(out, checkpoint_to_json(params.to_checkpoint()))
    for rec in history:
        print(f"epoch {rec.epoch} train_loss {rec.train_loss:.6g} heldout_loss {rec.heldout_loss:.6g}")
    _, held = split_dataset(ds, hyper.holdout_fraction, args.seed)
    ev = eval_belief(params, held)
    _print_json({"heldout_model_mse": ev.model_mse, "heldout_persistence_mse": ev.persistence_mse, "ratio": ev.ratio})
    return EXIT_OK


def cmd_train_dqn(args: argparse.Namespace, cfg: RunConfig) -> int:
    belief = _load_belief(args.belief or cfg.output.belief)
    train = cfg.train
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if args.episodes is not None:
        train = replace(train, episodes=args.episodes)
    env_cfg = _env_config(cfg, args.mode)
    try:
        train.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    result = run_training(env_cfg, belief, train)
    out = args.out or cfg.output.qnet
    metrics = args.metrics or cfg.output.metrics
    with _atomic_path(metrics) as tmp:
        write_metrics(result.rows, tmp)
    _write_text(out, checkpoint_to_json(result.theta.to_checkpoint()))
    recent = result.episodes[-100:]
    _print_json(
        {
            "episodes": len(result.episodes),
            "env_steps": len(result.rows),
            "train_iterations": result.learner.iterations,
            "recent_success_rate": sum(r.event == "merged" for r in recent) / len(recent),
            "out": str(out),
            "metrics": str(metrics),
        }
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    env_cfg = _env_config(cfg, args.mode)
    controller = _make_controller(cfg, env_cfg, args.policy, args.belief, args.seed)
    ev = evaluate(env_cfg, controller, args.episodes, args.seed)
    _print_json(ev.summary())
    return EXIT_OK


def cmd_rollout(args: argparse.Namespace, cfg: RunConfig) -> int:
    env_cfg = _env_config(cfg, args.mode)
    controller = _make_controller(cfg, env_cfg, args.policy, args.belief, args.seed)
    env = MergeEnv(env_cfg)
    obs = env.reset(args.seed)
    controller.reset()
    with _atomic_path(args.out) as tmp:
        with open(tmp, "w", newline="") as fh:
            writer = TrajectoryWriter(fh)
            while True:
                action = env_cfg.clamp(controller.act(obs))
                res = env.step(action)
                writer.write(env.state.t, res.observation, action, res.reward, res.terminal, res.event)
                obs = res.observation
                if res.terminal:
                    break
    _print_json({"event": env.event, "steps": env.state.t, "out": str(args.out)})
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace, cfg: RunConfig) -> int:
    names = COMPONENTS if args.component == "all" else (args.component,)
    status = EXIT_OK
    for name in names:
        res = CHECKS[name](args.seed, corrupt=args.corrupt_gradient)
        verdict = "ok" if res.max_rel_error <= GRAD_TOLERANCE else "FAIL"
        print(f"{name} max_rel_error {res.max_rel_error:.3e} tensor {res.tensor} {verdict}")
        if verdict == "FAIL":
            print(f"gradient check failed for {name}: tensor {res.tensor}", file=sys.stderr)
            status = EXIT_CHECK
    return status


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rampmerge", description="On-ramp merge learning toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        return p

    p = add("gen-data", "generate a scripted trajectory dataset (JSON Lines)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = add("train-belief", "fit the recurrent belief model on a dataset")
    p.add_argument("--data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--losses", help="per-epoch loss CSV")
    p.add_argument("--epochs", type=int, help="override belief.epochs")
    p.set_defaults(func=cmd_train_belief)

    p = add("train-dqn", "train the Q-network on top of a frozen belief model")
    p.add_argument("--belief")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--episodes", type=int, help="override train.episodes")
    p.add_argument("--mode", choices=("cooperative", "neutral", "adversarial"))
    p.add_argument("--out")
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_train_dqn)

    p = add("evaluate", "noiseless evaluation; prints metrics JSON")
    p.add_argument("--belief")
    p.add_argument("--policy", required=True, help="'scripted', 'random' or a Q checkpoint path")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("cooperative", "neutral", "adversarial"))
    p.set_defaults(func=cmd_evaluate)

    p = add("rollout", "write one episode's trajectory CSV")
    p.add_argument("--belief")
    p.add_argument("--policy", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("cooperative", "neutral", "adversarial"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = add("grad-check", "finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--component", choices=(*COMPONENTS, "all"), default="all")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
