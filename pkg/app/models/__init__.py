"""
Network models package.
"""

from app.models.backbone import Backbone
from app.models.frustum import CascadeFrustum, FrustumSet
from app.models.network import SceneContext, ReconNetwork, render_view
from app.models.renderer import AnalyticSDF, RenderOutput

__all__ = [
    "Backbone",
    "CascadeFrustum",
    "FrustumSet",
    "SceneContext",
    "ReconNetwork",
    "render_view",
    "AnalyticSDF",
    "RenderOutput",
]
