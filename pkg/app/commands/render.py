"""
render: render a target view of a scene from chosen source views.
"""

import argparse
from pathlib import Path

from loguru import logger

from app.commands.common import parse_ids
from app.core.errors import UsageError
from app.io.images import write_pfm, write_pgm, write_ppm
from app.io.scenes import load_scene
from app.models.frustum import dump_debug
from app.models.network import render_view
from app.services.trainer import load_model
from app.tensor.array import Graph, precision

NAME = "render"
HELP = "render a target view from a trained run"


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--run", required=True, help="training run directory")
    parser.add_argument("--scene", required=True, help="scene directory")
    parser.add_argument("--views", required=True, help="comma-separated source view ids")
    parser.add_argument("--target", type=int, required=True, help="view id whose camera is rendered")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--dump-frustums", action="store_true", help="also write per-level frustum depth maps")


def handle(args: argparse.Namespace) -> int:
    model, _ = load_model(args.run)
    scene = load_scene(args.scene)
    views = parse_ids(args.views)
    if len(views) < 2:
        raise UsageError("render needs at least 2 source views")
    if not 0 <= args.target < len(scene):
        raise UsageError(f"target {args.target} outside the scene's {len(scene)} views")
    images, cams = scene.select(views)

    with precision(model.precision), Graph.suspend():
        context = model.encode(images, cams)
    color, depth, mask = render_view(model, None, None, scene.cams[args.target], context=context)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.target:04d}"
    write_ppm(out / f"{stem}.ppm", color)
    write_pfm(out / f"{stem}.pfm", depth)
    write_pgm(out / f"{stem}_mask.pgm", mask.astype(float))
    if args.dump_frustums:
        dump_debug(context.frustums, out / "frustums")
    logger.info(f"rendered view {args.target} from {views}: {int(mask.sum())} of {mask.size} pixels hit")
    return 0
