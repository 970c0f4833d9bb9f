"""
Synthetic scenes with analytic ground truth.

A single sphere, box or plane is ray-traced from a ring of cameras aimed at
its center. Shading is Lambertian under one directional light with a black
background. Depth maps are exact camera-frame z values (0 where the ray
misses), and tracks are surface samples kept with the views that see them
unoccluded.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.errors import SceneError, UsageError
from app.geometry.camera import Camera, generate_rays, look_at, pixel_grid, project
from app.geometry.tracks import TrackSet
from app.io.scenes import Scene
from app.models.renderer import AnalyticSDF
from app.schemas.scene import PrimitiveSpec, RigSpec, SceneSpec, TextureSpec
from app.schemas.vcscore import GaussianParams, RankedCombination
from app.services.vcscore import rank_combinations

DEPTH_MARGIN = 1.2
VISIBILITY_TOL = 1e-6
NOISE_WAVES = 6
UP = np.array([0.0, 0.0, 1.0])


def bounding_radius(primitive: PrimitiveSpec) -> float:
    if primitive.kind == "sphere":
        return primitive.size
    if primitive.kind == "box":
        return primitive.size * math.sqrt(3.0)
    return primitive.size * math.sqrt(2.0)


def primitive_sdf(primitive: PrimitiveSpec) -> AnalyticSDF:
    return AnalyticSDF(primitive.kind, primitive.center, primitive.size, primitive.normal)


def ring_cameras(rig: RigSpec, center, width: int, height: int, bound: float) -> list[Camera]:
    """
    Cameras on a circle of `rig.radius` around `center` at the ring
    elevation, looking at the center with world +z up. The depth range
    covers a sphere of radius `bound` around the center with some margin.
    """
    center = np.asarray(center, dtype=np.float64)
    f = 0.5 * width / math.tan(math.radians(rig.fov) / 2.0)
    K = np.array([[f, 0.0, (width - 1) / 2.0], [0.0, f, (height - 1) / 2.0], [0.0, 0.0, 1.0]])
    depth_max = rig.radius + DEPTH_MARGIN * bound
    depth_min = max(rig.radius - DEPTH_MARGIN * bound, 0.05 * rig.radius)
    elevation = math.radians(rig.elevation)
    cams = []
    for azimuth in rig.angles():
        a = math.radians(azimuth)
        offset = np.array([math.cos(elevation) * math.cos(a), math.cos(elevation) * math.sin(a), math.sin(elevation)])
        cams.append(look_at(center + rig.radius * offset, center, UP, K, width, height,
                            depth_min, depth_max, rig.depth_num))
    return cams


# ==================== ray casting ====================

def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def cast_rays(primitive: PrimitiveSpec, origins: np.ndarray, directions: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    First intersection of unit rays with the primitive.
    Returns (t (M,), normals (M, 3), hit (M,)); t is inf for misses.
    """
    c = np.asarray(primitive.center, dtype=np.float64)
    o = origins - c
    d = directions
    M = len(o)
    t = np.full(M, np.inf)
    normals = np.zeros((M, 3))

    if primitive.kind == "sphere":
        b = np.einsum("ij,ij->i", d, o)
        cc = np.einsum("ij,ij->i", o, o) - primitive.size ** 2
        disc = b * b - cc
        hit = disc >= 0
        root = -b - np.sqrt(np.where(hit, disc, 0.0))
        hit &= root > 0
        t = np.where(hit, root, np.inf)
        p = o + np.where(hit, t, 0.0)[:, None] * d
        normals = p / primitive.size

    elif primitive.kind == "box":
        s = primitive.size
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-s - o) * inv
            t2 = (s - o) * inv
        lo = np.nanmax(np.minimum(t1, t2), axis=1)
        hi = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (lo <= hi) & (lo > 0)
        t = np.where(hit, lo, np.inf)
        p = o + np.where(hit, t, 0.0)[:, None] * d
        axis = np.argmax(np.abs(p) / s, axis=1)
        normals[np.arange(M), axis] = np.sign(p[np.arange(M), axis])

    else:
        n = np.asarray(primitive.normal, dtype=np.float64)
        n /= np.linalg.norm(n)
        denom = d @ n
        facing = np.abs(denom) > 1e-12
        root = np.where(facing, -(o @ n) / np.where(facing, denom, 1.0), -1.0)
        p = o + root[:, None] * d
        u, v = _plane_basis(n)
        inside = (np.abs(p @ u) <= primitive.size) & (np.abs(p @ v) <= primitive.size)
        hit = facing & (root > 0) & inside
        t = np.where(hit, root, np.inf)
        normals = np.where((denom > 0)[:, None], -n, n) * np.ones((M, 1))

    return t, normals, hit


# ==================== shading ====================

def texture_albedo(texture: TextureSpec, primitive: PrimitiveSpec, points: np.ndarray, seed: int) -> np.ndarray:
    """Palette color (M, 3) at surface points from a 3D pattern anchored on the primitive."""
    q = (points - np.asarray(primitive.center)) / (2.0 * primitive.size) + 0.5 + 0.25 / texture.frequency
    if texture.kind == "checker":
        cells = np.floor(texture.frequency * q).astype(np.int64).sum(axis=1)
        mix = (cells % 2).astype(np.float64)
    else:
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(NOISE_WAVES, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        phases = rng.uniform(0.0, 2.0 * math.pi, NOISE_WAVES)
        waves = np.sin(2.0 * math.pi * texture.frequency * (q @ dirs.T) + phases)
        mix = np.clip(0.5 + 0.5 * waves.mean(axis=1) * math.sqrt(NOISE_WAVES) / 2.0, 0.0, 1.0)
    c0, c1 = (np.asarray(c, dtype=np.float64) for c in texture.palette)
    return (1.0 - mix)[:, None] * c0 + mix[:, None] * c1


def render_truth(spec: SceneSpec, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Shaded image (H, W, 3) and exact z depth (H, W) of the primitive from one camera."""
    W, H = cam.width, cam.height
    rays = generate_rays(cam, pixel_grid(W, H))
    t, normals, hit = cast_rays(spec.primitive, rays.origins, rays.directions)
    points = rays.origins + np.where(hit, t, 0.0)[:, None] * rays.directions
    light = np.asarray(spec.light, dtype=np.float64)
    light /= np.linalg.norm(light)
    shade = 0.5 + 0.5 * np.maximum(normals @ light, 0.0)
    albedo = texture_albedo(spec.primitive.texture, spec.primitive, points, spec.seed)
    image = np.where(hit[:, None], albedo * shade[:, None], 0.0)
    depth = np.where(hit, rays.t_to_depth(cam, np.where(hit, t, 0.0)), 0.0)
    return image.reshape(H, W, 3), depth.reshape(H, W)


# ==================== tracks ====================

def sample_surface(primitive: PrimitiveSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the primitive's surface."""
    c = np.asarray(primitive.center, dtype=np.float64)
    if primitive.kind == "sphere":
        d = rng.normal(size=(count, 3))
        return c + primitive.size * d / np.linalg.norm(d, axis=1, keepdims=True)
    if primitive.kind == "box":
        face_axis = rng.integers(0, 3, count)
        face_sign = rng.choice([-1.0, 1.0], count)
        p = rng.uniform(-primitive.size, primitive.size, size=(count, 3))
        p[np.arange(count), face_axis] = face_sign * primitive.size
        return c + p
    n = np.asarray(primitive.normal, dtype=np.float64)
    u, v = _plane_basis(n / np.linalg.norm(n))
    a = rng.uniform(-primitive.size, primitive.size, size=(count, 2))
    return c + a[:, :1] * u + a[:, 1:] * v


def visible_views(primitive: PrimitiveSpec, cams: list[Camera], points: np.ndarray) -> list[frozenset[int]]:
    """Per point, the views that project it inside the image with no occluder in front."""
    seen = np.zeros((len(points), len(cams)), dtype=bool)
    for i, cam in enumerate(cams):
        _, _, inside = project(cam, points)
        offset = points - cam.center
        dist = np.linalg.norm(offset, axis=1)
        t, _, hit = cast_rays(primitive, np.broadcast_to(cam.center, points.shape), offset / dist[:, None])
        seen[:, i] = inside & hit & (np.abs(t - dist) <= VISIBILITY_TOL * max(1.0, float(dist.max())))
    return [frozenset(np.flatnonzero(row).tolist()) for row in seen]


def make_tracks(spec: SceneSpec, cams: list[Camera]) -> TrackSet:
    rng = np.random.default_rng(spec.seed)
    points = sample_surface(spec.primitive, spec.num_tracks, rng)
    views = visible_views(spec.primitive, cams, points)
    keep = [n for n, vs in enumerate(views) if len(vs) >= 2]
    logger.debug(f"kept {len(keep)} of {len(points)} surface samples seen by at least 2 views")
    return TrackSet(points[keep], [views[n] for n in keep])


# ==================== scenes and rigs ====================

def generate_scene(spec: SceneSpec) -> Scene:
    """
    Ray-trace the scene from every ring camera.

    - Raises SceneError when a camera sits inside the primitive.
    - Images, depth maps and tracks are deterministic under `spec.seed`.
    """
    primitive = spec.primitive
    cams = ring_cameras(spec.rig, primitive.center, spec.width, spec.height, bounding_radius(primitive))

    # Validate camera placement
    if primitive.kind != "plane":
        sdf = primitive_sdf(primitive)
        inside = [i for i, cam in enumerate(cams) if sdf(cam.center[None])[0] <= 0]
        if inside:
            raise SceneError(f"camera(s) {inside} lie inside the {primitive.kind}; increase the rig radius")

    with ThreadPoolExecutor(max_workers=max(1, settings.THREADS)) as pool:
        rendered = list(pool.map(lambda cam: render_truth(spec, cam), cams))
    images = np.stack([r[0] for r in rendered])
    depths = np.stack([r[1] for r in rendered])
    tracks = make_tracks(spec, cams)
    logger.info(f"generated {primitive.kind} scene: {len(cams)} views at {spec.width}x{spec.height}, "
                f"{len(tracks)} tracks")
    return Scene(cams, images, depths, tracks, spec)


def make_rigs(scene: Scene, k: int, g: GaussianParams = GaussianParams()
              ) -> tuple[RankedCombination, RankedCombination]:
    """The highest and lowest scoring k-view combinations of the scene's cameras."""
    if scene.tracks is None:
        raise UsageError("ranking view combinations needs tracks")
    n = len(scene)
    if k > n:
        raise UsageError(f"k={k} exceeds the {n} cameras of the rig")
    if k < n < 2 * k:
        raise SceneError(f"a ring of {n} cameras is too small to separate {k}-view rigs; it needs at least {2 * k}")
    ranking = rank_combinations(range(n), k, scene.cams, scene.tracks, g)
    return ranking.best, ranking.worst
