"""
Training: losses, source-view sampling, the optimization loop and checkpoints.

A run directory holds
    metrics.csv         step,total,color,depth
    checkpoint.recon    parameters and Adam moments (UFOR0001 / UFOR0002)
    checkpoint.json     step, Adam counter, rng state, loss EMA and the config
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from loguru import logger
from pydantic import ValidationError

from app.core.errors import EmptyBatchError, FormatError, TrainingDivergedError, UsageError
from app.geometry.camera import generate_rays, pixel_grid
from app.io.scenes import Scene
from app.models.frustum import FrustumSet, level_scale
from app.models.network import ReconNetwork, render_view
from app.models.renderer import RenderOutput
from app.schemas.report import ViewMetrics
from app.schemas.train import CheckpointMeta, TrainConfig
from app.services.metrics import evaluate
from app.services.vcscore import best_sources, pairwise_matrix
from app.tensor import ops
from app.tensor.array import DenseArray, Graph, precision
from app.tensor.checkpoint import load_arrays, save_arrays
from app.tensor.optim import Adam

METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.recon"
SIDECAR_FILE = "checkpoint.json"
METRICS_HEADER = "step,total,color,depth"
PARAM_PREFIX = "param."


@dataclass
class LossTerms:
    total: DenseArray
    color: float
    depth: float


# ==================== losses ====================

def _masked_mean(values: DenseArray, mask: np.ndarray) -> DenseArray:
    mask = np.broadcast_to(mask, values.shape)
    return ops.sum(ops.where(mask, values, 0.0)) * (1.0 / max(int(mask.sum()), 1))


def frustum_depth_pairs(frustums: FrustumSet, gt_depths: Sequence[np.ndarray]) -> list[list[tuple[DenseArray, np.ndarray]]]:
    """
    Per cascade level, (predicted depth, ground truth) for every reference view.
    Pixel i of a level with stride s sits on full-resolution pixel s * i.
    """
    pairs = []
    for level in frustums.volumes:
        row = []
        for vol in level:
            stride = int(round(1.0 / level_scale(vol.level)))
            gt = np.asarray(gt_depths[vol.ref_view])[::stride, ::stride]
            row.append((vol.depth, gt[:vol.depth.shape[0], :vol.depth.shape[1]]))
        pairs.append(row)
    return pairs


def compute_loss(pred: RenderOutput, gt_color: np.ndarray, gt_depth: np.ndarray, alpha_depth: float = 1.0,
                 frustum_pairs: Sequence[Sequence[tuple[DenseArray, np.ndarray]]] = ()) -> LossTerms:
    """
    total = MSE(color) + alpha_depth * (MAE(rendered depth) + sum over levels of MAE(frustum depth)).

    - Color uses rays with at least one valid source view.
    - Depth terms use pixels whose ground-truth depth is positive.
    - Raises EmptyBatchError when no ray is valid.
    """
    valid = np.asarray(pred.ray_valid, dtype=bool)
    if not valid.any():
        raise EmptyBatchError(f"none of the {len(valid)} rays sees a valid source view")
    gt_color = np.asarray(gt_color, dtype=np.float64).reshape(-1, 3)
    gt_depth = np.asarray(gt_depth, dtype=np.float64).reshape(-1)

    # Color term
    diff = pred.color - gt_color
    color_loss = _masked_mean(diff * diff, valid[:, None])

    # Depth terms
    depth_valid = valid & (gt_depth > 0)
    depth_loss = _masked_mean(ops.abs(pred.z_depth - gt_depth), depth_valid)
    for level in frustum_pairs:
        errors = [(ops.abs(depth - gt), gt > 0) for depth, gt in level]
        count = sum(int(m.sum()) for _, m in errors)
        if count == 0:
            continue
        level_sum = None
        for err, mask in errors:
            term = ops.sum(ops.where(mask, err, 0.0))
            level_sum = term if level_sum is None else level_sum + term
        depth_loss = depth_loss + level_sum * (1.0 / count)

    total = color_loss + depth_loss * alpha_depth
    return LossTerms(total, color_loss.item(), depth_loss.item())


# ==================== view sampling ====================

def sample_views(num_views: int, k: int, mode: Literal["best", "random"], rng: np.random.Generator,
                 matrix: np.ndarray | None = None) -> tuple[int, list[int]]:
    """
    Draw a target view uniformly, then k source views among the rest:
    uniformly without replacement ("random") or the k views scoring highest
    with the target ("best", needs the pairwise score matrix).
    """
    if num_views <= k:
        raise UsageError(f"need more than {k} views to pick a target and {k} sources, have {num_views}")
    target = int(rng.integers(num_views))
    rest = [v for v in range(num_views) if v != target]
    if mode == "best":
        if matrix is None:
            raise UsageError("best-set sampling needs the pairwise score matrix (scene tracks)")
        return target, best_sources(target, rest, k, matrix)
    picked = rng.choice(len(rest), size=k, replace=False)
    return target, sorted(rest[p] for p in picked)


# ==================== checkpoints ====================

def save_checkpoint(run_dir: Path, model: ReconNetwork, optimizer: Adam, meta: CheckpointMeta) -> None:
    arrays = {f"{PARAM_PREFIX}{name}": p.data for name, p in model.named_parameters()}
    arrays.update(optimizer.state())
    save_arrays(run_dir / CHECKPOINT_FILE, arrays, double=meta.precision == "double")
    tmp = run_dir / f"{SIDECAR_FILE}.tmp"
    tmp.write_text(meta.model_dump_json(indent=2))
    os.replace(tmp, run_dir / SIDECAR_FILE)
    logger.info(f"checkpoint at step {meta.step} written to {run_dir}")


def read_meta(run_dir: str | os.PathLike) -> CheckpointMeta:
    path = Path(run_dir) / SIDECAR_FILE
    if not path.exists():
        raise FormatError(f"{run_dir}: no {SIDECAR_FILE}; not a training run directory")
    try:
        return CheckpointMeta.model_validate_json(path.read_text())
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc.errors()[0]['msg']}") from None


def restore_parameters(model: ReconNetwork, arrays: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        key = f"{PARAM_PREFIX}{name}"
        if key not in arrays:
            raise FormatError(f"checkpoint lacks parameter {name!r}")
        p.value = arrays[key]


def load_model(run_dir: str | os.PathLike) -> tuple[ReconNetwork, CheckpointMeta]:
    """Rebuild the model of a run directory from its last checkpoint."""
    meta = read_meta(run_dir)
    arrays, _ = load_arrays(Path(run_dir) / CHECKPOINT_FILE)
    with precision(meta.precision):
        model = ReconNetwork(meta.config.model, seed=meta.config.seed)
        restore_parameters(model, arrays)
    return model.eval(), meta


# ==================== training loop ====================

class Trainer:
    """
    Single-writer optimization loop over one scene.

    All randomness (view sets, ray subsets, stratified jitter) comes from one
    generator seeded by the config, so a double-precision run resumed from a
    checkpoint continues bit-identically.
    """

    def __init__(self, scene: Scene, config: TrainConfig, run_dir: str | os.PathLike):
        self.scene = scene
        self.config = config
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        if len(scene) <= config.n_source_views:
            raise UsageError(f"scene has {len(scene)} views; training with {config.n_source_views} "
                             "sources needs at least one more for the target")
        with precision(config.precision):
            self.model = ReconNetwork(config.model, seed=config.seed)
        self.optimizer = Adam(list(self.model.named_parameters()), lr=config.lr)
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self.ema: dict[str, float] | None = None
        self.matrix = None
        if config.sampling_mode == "best":
            if scene.tracks is None:
                raise UsageError("best-set sampling needs scene tracks")
            self.matrix = pairwise_matrix(scene.cams, scene.tracks)

    # ---- persistence ----
    def meta(self) -> CheckpointMeta:
        return CheckpointMeta(step=self.step, adam_t=self.optimizer.t, precision=self.config.precision,
                              rng_state=self.rng.bit_generator.state, ema=self.ema, config=self.config)

    def checkpoint(self) -> None:
        save_checkpoint(self.run_dir, self.model, self.optimizer, self.meta())

    def resume(self) -> None:
        """Restore parameters, Adam moments, step, rng and loss EMA from the run directory."""
        meta = read_meta(self.run_dir)
        if meta.precision != self.config.precision:
            raise UsageError(f"checkpoint precision {meta.precision} differs from config {self.config.precision}")
        arrays, _ = load_arrays(self.run_dir / CHECKPOINT_FILE)
        restore_parameters(self.model, arrays)
        self.optimizer.load_state(arrays, meta.adam_t)
        self.rng.bit_generator.state = meta.rng_state
        self.step = meta.step
        self.ema = meta.ema
        self._truncate_metrics()
        logger.info(f"resumed from step {self.step}")

    def _truncate_metrics(self) -> None:
        path = self.run_dir / METRICS_FILE
        if not path.exists():
            return
        rows = path.read_text().splitlines()[1:]
        kept = [r for r in rows if r and int(r.split(",")[0]) <= self.step]
        path.write_text("\n".join([METRICS_HEADER, *kept]) + "\n")

    def _append_metrics(self, terms: LossTerms) -> None:
        path = self.run_dir / METRICS_FILE
        if not path.exists():
            path.write_text(METRICS_HEADER + "\n")
        with path.open("a") as fh:
            fh.write(f"{self.step},{terms.total.item()!r},{terms.color!r},{terms.depth!r}\n")

    # ---- optimization ----
    def train_step(self) -> LossTerms:
        cfg = self.config
        scene = self.scene

        # Pick views and a ray subset of the target
        target, sources = sample_views(len(scene), cfg.n_source_views, cfg.sampling_mode, self.rng, self.matrix)
        images, cams = scene.select(sources)
        target_cam = scene.cams[target]
        pixels = pixel_grid(target_cam.width, target_cam.height)
        idx = np.sort(self.rng.choice(len(pixels), size=min(cfg.rays_per_step, len(pixels)), replace=False))
        rays = generate_rays(target_cam, pixels[idx])
        gt_color = scene.images[target].reshape(-1, 3)[idx]
        gt_depth = scene.depths[target].reshape(-1)[idx] if scene.depths is not None else np.zeros(len(idx))

        # Forward, loss and backward
        with Graph() as graph:
            ctx = self.model.encode(images, cams)
            out = self.model.render_rays(ctx, rays, target_cam, rng=self.rng)
            pairs = frustum_depth_pairs(ctx.frustums, scene.depths[sources]) if scene.depths is not None else ()
            terms = compute_loss(out, gt_color, gt_depth, cfg.alpha_depth, pairs)
        if not math.isfinite(terms.total.item()):
            raise TrainingDivergedError(f"non-finite loss at step {self.step + 1}; "
                                        f"last good checkpoint kept in {self.run_dir}")
        graph.backward(terms.total)
        self.optimizer.step()
        self.step += 1
        return terms

    def _update_ema(self, terms: LossTerms) -> None:
        values = {"total": terms.total.item(), "color": terms.color, "depth": terms.depth}
        if self.ema is None:
            self.ema = values
        else:
            d = self.config.ema_decay
            self.ema = {k: d * self.ema[k] + (1.0 - d) * v for k, v in values.items()}

    def run(self, steps: int | None = None) -> CheckpointMeta:
        """Train until `steps` (default config.steps) total steps; checkpoints at step 0 and periodically."""
        cfg = self.config
        goal = cfg.steps if steps is None else steps
        with precision(cfg.precision):
            if self.step == 0 and not (self.run_dir / SIDECAR_FILE).exists():
                self.checkpoint()
            while self.step < goal:
                terms = self.train_step()
                self._update_ema(terms)
                self._append_metrics(terms)
                if self.step % cfg.log_every == 0 or self.step == goal:
                    logger.info(f"step {self.step}/{goal}: total {terms.total.item():.5f} "
                                f"color {terms.color:.5f} depth {terms.depth:.5f} "
                                f"(ema {self.ema['total']:.5f})")
                if self.step % cfg.checkpoint_every == 0 or self.step == goal:
                    self.checkpoint()
        return self.meta()


# ==================== evaluation ====================

def evaluate_heldout(model: ReconNetwork, scene: Scene, sources: Sequence[int],
                     targets: Sequence[int] | None = None) -> list[ViewMetrics]:
    """
    Render every held-out target (default: all views not in `sources`) from
    the source set and score its depth against the scene's ground truth.
    """
    if scene.depths is None:
        raise UsageError("evaluation needs ground-truth depth maps")
    sources = sorted(int(v) for v in sources)
    if targets is None:
        targets = [v for v in range(len(scene)) if v not in sources]
    if not targets:
        raise UsageError("no held-out target view to evaluate")
    images, cams = scene.select(sources)
    results = []
    with precision(model.precision), Graph.suspend():
        context = model.encode(images, cams)
    for target in targets:
        color, depth, mask = render_view(model, None, None, scene.cams[target], context=context)
        metrics = evaluate(depth, scene.depths[target], scene.cams[target], mask, target=target, sources=sources,
                           pred_color=color, gt_color=scene.images[target])
        logger.info(f"view {target} from {sources}: MAE {metrics.mae:.4f}, Chamfer {metrics.chamfer:.4f}")
        results.append(metrics)
    return results
