"""
gen-scene: ray-trace a synthetic scene directory from a SceneSpec document.
"""

import argparse

from app.commands.common import load_document
from app.core.config import settings
from app.io.scenes import save_scene
from app.schemas.scene import SceneSpec
from app.services.synthlab import generate_scene

NAME = "gen-scene"
HELP = "generate a synthetic scene with analytic ground truth"


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec", help="SceneSpec JSON (defaults to a textured sphere on an 8-camera ring)")
    parser.add_argument("--out", required=True, help="scene directory to write")


def handle(args: argparse.Namespace) -> int:
    spec = load_document(args.spec, SceneSpec)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": settings.SEED})
    save_scene(args.out, generate_scene(spec))
    return 0
