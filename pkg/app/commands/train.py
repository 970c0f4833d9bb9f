"""
train: optimize the network on one scene and write metrics and checkpoints.
"""

import argparse

from app.commands.common import load_document
from app.core.config import settings
from app.core.errors import UsageError
from app.io.scenes import load_scene
from app.schemas.train import TrainConfig
from app.services.trainer import Trainer

NAME = "train"
HELP = "train on a scene directory"


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scene", required=True, help="scene directory")
    parser.add_argument("--config", help="TrainConfig JSON (defaults when omitted)")
    parser.add_argument("--out", required=True, help="run directory for metrics.csv and checkpoints")
    parser.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    parser.add_argument("--steps", type=int, help="override the configured step count")


def handle(args: argparse.Namespace) -> int:
    config = load_document(args.config, TrainConfig)
    if args.steps is not None:
        if args.steps < 0:
            raise UsageError(f"--steps must be non-negative, got {args.steps}")
        config = config.model_copy(update={"steps": args.steps})
    if args.seed is not None:
        config = config.model_copy(update={"seed": settings.SEED})
    trainer = Trainer(load_scene(args.scene), config, args.out)
    if args.resume:
        trainer.resume()
    trainer.run()
    return 0
