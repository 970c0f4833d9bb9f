"""
Pydantic schemas for evaluation reports.
"""

from pydantic import BaseModel, Field, ConfigDict
from typing import Optional


class ViewMetrics(BaseModel):
    """Metrics for one evaluated target view."""
    target: int
    sources: list[int]
    mae: float = Field(..., ge=0, description="Depth MAE in world units over GT-valid pixels")
    inlier_rates: dict[str, float] = Field(..., description="Fraction of pixels within 1%/2%/5% of depth range")
    chamfer: float = Field(..., ge=0, description="Bidirectional mean nearest-neighbor distance")
    valid_pixels: int = Field(..., ge=0)
    color_mse: Optional[float] = Field(default=None, ge=0, description="Color MSE when a rendering was evaluated")


class EvalReport(BaseModel):
    """Schema for `eval --out report.json`."""
    set_label: str = Field(..., description="favorable, normal, unfavorable or explicit ids")
    sources: list[int]
    vc_score: Optional[float] = Field(default=None, description="VC score of the source set when tracks exist")
    mae: float = Field(..., ge=0)
    inlier_rates: dict[str, float]
    chamfer: float = Field(..., ge=0)
    per_view: list[ViewMetrics]

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "set_label": "favorable",
                "sources": [0, 1, 2],
                "vc_score": 38.2,
                "mae": 0.041,
                "inlier_rates": {"1%": 0.42, "2%": 0.71, "5%": 0.93},
                "chamfer": 0.035,
                "per_view": [],
            }
        }
    )
