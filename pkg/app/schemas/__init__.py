"""
Pydantic schemas package.
"""

from app.schemas.scene import PrimitiveSpec, RigSpec, SceneSpec, TextureSpec
from app.schemas.train import CheckpointMeta, ModelConfig, TrainConfig
from app.schemas.vcscore import CombinationRanking, GaussianParams, RankedCombination
from app.schemas.report import EvalReport, ViewMetrics

__all__ = [
    "PrimitiveSpec",
    "RigSpec",
    "SceneSpec",
    "TextureSpec",
    "CheckpointMeta",
    "ModelConfig",
    "TrainConfig",
    "CombinationRanking",
    "GaussianParams",
    "RankedCombination",
    "EvalReport",
    "ViewMetrics",
]
