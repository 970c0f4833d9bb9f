"""
Pydantic schemas for synthetic scene specifications.
"""

from pydantic import BaseModel, Field, ConfigDict, field_validator
from typing import Literal, Optional

Vec3 = tuple[float, float, float]


class TextureSpec(BaseModel):
    """Procedural surface texture."""
    kind: Literal["checker", "noise"] = Field(default="checker", description="Texture pattern")
    frequency: float = Field(default=8.0, gt=0, description="Cycles per primitive")
    palette: tuple[Vec3, Vec3] = Field(
        default=((0.9, 0.8, 0.2), (0.1, 0.3, 0.8)),
        description="Two RGB colors in [0, 1] the pattern alternates between",
    )

    @field_validator("palette")
    @classmethod
    def colors_in_unit_range(cls, value):
        for color in value:
            if any(c < 0 or c > 1 for c in color):
                raise ValueError("palette colors must lie in [0, 1]")
        return value


class PrimitiveSpec(BaseModel):
    """The single analytic object in the scene."""
    kind: Literal["sphere", "box", "plane"] = Field(default="sphere", description="Primitive type")
    center: Vec3 = Field(default=(0.0, 0.0, 0.0), description="World-space center")
    size: float = Field(default=1.0, gt=0, description="Sphere radius, box half-extent or plane half-width")
    normal: Vec3 = Field(default=(0.0, 0.0, 1.0), description="Plane normal (plane only)")
    texture: TextureSpec = Field(default_factory=TextureSpec)

    @field_validator("normal")
    @classmethod
    def normal_nonzero(cls, value):
        if sum(c * c for c in value) < 1e-12:
            raise ValueError("normal must be non-zero")
        return value


class RigSpec(BaseModel):
    """A ring of cameras looking at the primitive center."""
    count: int = Field(default=8, ge=2, description="Number of cameras")
    radius: float = Field(default=4.0, gt=0, description="Distance from the primitive center")
    elevation: float = Field(default=20.0, gt=-90, lt=90, description="Ring elevation in degrees")
    azimuths: Optional[list[float]] = Field(default=None, description="Angular positions in degrees; evenly spaced if omitted")
    fov: float = Field(default=40.0, gt=1, lt=170, description="Horizontal field of view in degrees")
    depth_num: int = Field(default=48, ge=2, description="Depth hypothesis count written to camera files")

    @field_validator("azimuths")
    @classmethod
    def azimuth_count(cls, value, info):
        if value is not None and len(value) != info.data.get("count", len(value)):
            raise ValueError("azimuths must list exactly `count` angles")
        return value

    def angles(self) -> list[float]:
        if self.azimuths is not None:
            return list(self.azimuths)
        return [360.0 * i / self.count for i in range(self.count)]


class SceneSpec(BaseModel):
    """Schema for `gen-scene --spec`."""
    primitive: PrimitiveSpec = Field(default_factory=PrimitiveSpec)
    rig: RigSpec = Field(default_factory=RigSpec)
    width: int = Field(default=64, ge=4, description="Image width in pixels")
    height: int = Field(default=64, ge=4, description="Image height in pixels")
    light: Vec3 = Field(default=(0.4, -0.3, 0.85), description="Direction towards the light")
    num_tracks: int = Field(default=400, ge=1, description="Surface samples drawn for tracks")
    seed: int = Field(default=0, description="Texture noise and track sampling seed")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "primitive": {"kind": "sphere", "center": [0, 0, 0], "size": 1.0,
                              "texture": {"kind": "checker", "frequency": 8}},
                "rig": {"count": 8, "radius": 4.0, "elevation": 20.0, "fov": 40.0},
                "width": 64,
                "height": 64,
                "seed": 0,
            }
        }
    )
