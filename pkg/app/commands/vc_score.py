"""
vc-score: rank every k-view combination of a camera layout by VC score.
"""

import argparse
import sys
from pathlib import Path

from loguru import logger
from pydantic import ValidationError

from app.core.errors import UsageError
from app.io.cameras import read_camera_dir
from app.io.scenes import load_scene
from app.io.tracks import read_tracks
from app.schemas.vcscore import GaussianParams
from app.services.vcscore import rank_combinations

NAME = "vc-score"
HELP = "rank view combinations by view-combination score"


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scene", help="scene directory (cams/ and tracks.txt)")
    parser.add_argument("--cams", help="directory of *_cam.txt files, used with --tracks")
    parser.add_argument("--tracks", help="track file, used with --cams")
    parser.add_argument("--k", type=int, required=True, help="views per combination")
    parser.add_argument("--out", help="ranking CSV (stdout when omitted)")
    parser.add_argument("--sample", type=int, help="score S random combinations instead of all")
    parser.add_argument("--theta0", type=float, default=5.0, help="peak baseline angle in degrees")
    parser.add_argument("--sigma1", type=float, default=1.0, help="spread below the peak")
    parser.add_argument("--sigma2", type=float, default=10.0, help="spread above the peak")


def handle(args: argparse.Namespace) -> int:
    # Resolve the camera layout and tracks
    if args.scene:
        if args.cams or args.tracks:
            raise UsageError("use either --scene or --cams/--tracks, not both")
        scene = load_scene(args.scene)
        if scene.tracks is None:
            raise UsageError(f"{args.scene}: scene has no tracks.txt")
        cams, tracks = scene.cams, scene.tracks
    elif args.cams and args.tracks:
        cams, tracks = read_camera_dir(args.cams), read_tracks(args.tracks)
    else:
        raise UsageError("vc-score needs --scene DIR or both --cams DIR and --tracks FILE")

    try:
        g = GaussianParams(theta0=args.theta0, sigma1=args.sigma1, sigma2=args.sigma2)
    except ValidationError as exc:
        raise UsageError(f"invalid Gaussian parameters: {exc.errors()[0]['msg']}") from None

    ranking = rank_combinations(range(len(cams)), args.k, cams, tracks, g, sample=args.sample)
    if args.out:
        Path(args.out).write_text(ranking.to_csv())
        logger.info(f"wrote {len(ranking.combinations)} combinations to {args.out}")
    else:
        sys.stdout.write(ranking.to_csv())
    logger.info(f"favorable {list(ranking.best.views)} ({ranking.best.score:.4f}), "
                f"unfavorable {list(ranking.worst.views)} ({ranking.worst.score:.4f})")
    return 0
