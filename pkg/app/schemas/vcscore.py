"""
Pydantic schemas for view-combination scoring.
"""

from pydantic import BaseModel, Field, ConfigDict
from typing import Literal

Group = Literal["favorable", "normal", "unfavorable"]


class GaussianParams(BaseModel):
    """Piecewise Gaussian over baseline angles (degrees)."""
    theta0: float = Field(default=5.0, description="Peak angle")
    sigma1: float = Field(default=1.0, gt=0, description="Spread below the peak")
    sigma2: float = Field(default=10.0, gt=0, description="Spread above the peak")

    model_config = ConfigDict(frozen=True)


class RankedCombination(BaseModel):
    """One scored view combination."""
    views: tuple[int, ...]
    score: float
    group: Group

    def csv_row(self) -> str:
        return f"{' '.join(str(v) for v in self.views)};{self.score!r};{self.group}"


class CombinationRanking(BaseModel):
    """Combinations sorted by descending score and split into terciles."""
    k: int = Field(..., ge=1)
    sampled: bool = Field(default=False, description="True when built from a random subset of combinations")
    combinations: list[RankedCombination]

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "k": 3,
                "sampled": False,
                "combinations": [
                    {"views": [0, 1, 2], "score": 41.7, "group": "favorable"},
                    {"views": [0, 3, 5], "score": 0.4, "group": "unfavorable"},
                ],
            }
        }
    )

    def group(self, label: Group) -> list[RankedCombination]:
        return [c for c in self.combinations if c.group == label]

    @property
    def best(self) -> RankedCombination:
        return self.combinations[0]

    @property
    def worst(self) -> RankedCombination:
        return self.combinations[-1]

    def to_csv(self) -> str:
        return "views;score;group\n" + "".join(c.csv_row() + "\n" for c in self.combinations)
