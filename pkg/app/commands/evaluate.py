"""
eval: score held-out views rendered from a favorable, normal, unfavorable or
explicit source set.
"""

import argparse
from pathlib import Path

from loguru import logger

from app.commands.common import parse_ids
from app.core.errors import UsageError
from app.io.scenes import Scene, load_scene
from app.services.metrics import summarize
from app.services.synthlab import make_rigs
from app.services.trainer import evaluate_heldout, load_model
from app.services.vcscore import rank_combinations, vc_score

NAME = "eval"
HELP = "evaluate depth against ground truth on held-out views"
NAMED_SETS = ("favorable", "normal", "unfavorable")


def configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--run", required=True, help="training run directory")
    parser.add_argument("--scene", required=True, help="scene directory with depth maps")
    parser.add_argument("--set", dest="view_set", required=True,
                        help="favorable | normal | unfavorable | comma-separated view ids")
    parser.add_argument("--k", type=int, help="source views for named sets (default: the run's n_source_views)")
    parser.add_argument("--targets", help="comma-separated target ids (default: every held-out view)")
    parser.add_argument("--out", help="report JSON")


def resolve_sources(scene: Scene, label: str, k: int) -> list[int]:
    """Named sets come from the VC ranking of the scene's tracks; anything else is an id list."""
    if label not in NAMED_SETS:
        return parse_ids(label)
    if scene.tracks is None:
        raise UsageError(f"--set {label} needs scene tracks")
    if label == "normal":
        middle = rank_combinations(range(len(scene)), k, scene.cams, scene.tracks).group("normal")
        if not middle:
            raise UsageError(f"too few {k}-view combinations to form a normal group")
        return list(middle[0].views)
    favorable, unfavorable = make_rigs(scene, k)
    return list((favorable if label == "favorable" else unfavorable).views)


def handle(args: argparse.Namespace) -> int:
    model, meta = load_model(args.run)
    scene = load_scene(args.scene)
    k = args.k or meta.config.n_source_views
    sources = resolve_sources(scene, args.view_set, k)
    targets = parse_ids(args.targets) if args.targets else None

    per_view = evaluate_heldout(model, scene, sources, targets)
    score = vc_score(sources, scene.cams, scene.tracks) if scene.tracks is not None and len(sources) >= 2 else None
    report = summarize(args.view_set, sources, per_view, score)
    if args.out:
        Path(args.out).write_text(report.model_dump_json(indent=2))
    logger.info(f"{args.view_set} {sources}: MAE {report.mae:.4f}, Chamfer {report.chamfer:.4f}, "
                f"inliers {report.inlier_rates}")
    return 0
