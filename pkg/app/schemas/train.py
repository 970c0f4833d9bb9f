"""
Pydantic schemas for model and training configuration documents.
"""

from pydantic import BaseModel, Field, ConfigDict, model_validator
from typing import Literal, Optional


class ModelConfig(BaseModel):
    """Network sizes. Defaults follow the full-size plan; desk runs shrink them."""
    channels: tuple[int, int, int] = Field(default=(32, 16, 8), description="Pyramid channels, coarse to fine")
    hypotheses: list[int] = Field(default=[48, 32, 8], min_length=1, max_length=3,
                                  description="Depth hypotheses per cascade level, coarse to fine")
    range_shrink: float = Field(default=0.5, gt=0, le=1, description="Hypothesis span factor per finer level")
    attention_blocks: int = Field(default=4, ge=0, description="Matching transformer blocks (self/cross alternating)")
    heads: int = Field(default=8, ge=1, description="Attention heads")
    volume_channels: int = Field(default=8, ge=1, description="Channels of the regularized volume")
    groups: int = Field(default=4, ge=1, description="Similarity groups")
    token_dim: int = Field(default=32, ge=4, description="Aggregation/ray transformer width")
    token_heads: int = Field(default=4, ge=1, description="Heads of the aggregation/ray transformers")
    aggregator_blocks: int = Field(default=2, ge=0, description="Self-attention blocks over view tokens")
    ray_blocks: int = Field(default=2, ge=0, description="Self-attention blocks along each ray")
    coarse_samples: int = Field(default=64, ge=2, description="Coarse samples per ray")
    fine_samples: int = Field(default=64, ge=0, description="Fine samples per ray")
    pe_octaves: int = Field(default=6, ge=1, description="Octaves of the depth-offset encoding")
    sdf_hidden: int = Field(default=32, ge=4, description="Hidden width of the SDF head")
    init_sharpness: float = Field(default=4.0, gt=0, description="Initial NeuS sharpness s")

    @model_validator(mode="after")
    def divisible_widths(self):
        if self.channels[0] % self.groups:
            raise ValueError("coarsest channel count must be divisible by groups")
        for c in self.channels:
            if c % self.heads:
                raise ValueError(f"channel count {c} not divisible by {self.heads} heads")
        if self.token_dim % self.token_heads:
            raise ValueError("token_dim must be divisible by token_heads")
        return self

    @property
    def levels(self) -> int:
        return len(self.hypotheses)


class TrainConfig(BaseModel):
    """Schema for `train --config`."""
    n_source_views: int = Field(default=4, ge=2, description="Source views per step")
    rays_per_step: int = Field(default=512, ge=1, description="Target rays per step")
    steps: int = Field(default=2000, ge=0, description="Optimization steps")
    lr: float = Field(default=1e-4, gt=0, description="Adam learning rate")
    alpha_depth: float = Field(default=1.0, ge=0, description="Depth loss weight")
    sampling_mode: Literal["best", "random"] = Field(default="random", description="Source view sampling")
    seed: int = Field(default=0, description="Training seed")
    precision: Literal["single", "double"] = Field(default="single", description="Float precision")
    checkpoint_every: int = Field(default=200, ge=1, description="Steps between checkpoints")
    log_every: int = Field(default=10, ge=1, description="Steps between progress log lines")
    ema_decay: float = Field(default=0.9, ge=0, lt=1, description="Running loss smoothing")
    model: ModelConfig = Field(default_factory=ModelConfig)

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "n_source_views": 3,
                "rays_per_step": 512,
                "steps": 2000,
                "lr": 1e-4,
                "alpha_depth": 1.0,
                "sampling_mode": "random",
                "model": {"hypotheses": [32, 16, 8], "coarse_samples": 32, "fine_samples": 32},
            }
        }
    )


class CheckpointMeta(BaseModel):
    """JSON sidecar written next to every checkpoint."""
    step: int = Field(..., ge=0)
    adam_t: int = Field(..., ge=0, description="Adam step counter")
    precision: Literal["single", "double"]
    rng_state: dict = Field(..., description="numpy bit generator state of the training rng")
    ema: Optional[dict[str, float]] = Field(default=None, description="Smoothed total/color/depth losses")
    config: TrainConfig
