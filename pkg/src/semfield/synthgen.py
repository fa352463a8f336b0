"""Procedural ground-truth scenes and an analytic ray-cast oracle.

A scene is an enclosed room (the world bounds act as walls, labelled with the
background class) containing spheres, axis-aligned boxes and axis-aligned
planes, each carrying a class id, a unique instance id and an albedo.
Shading is flat Lambertian plus ambient; an optional specular lobe exercises
view-dependent colour. The oracle produces RGB, depth (ray distance), class
and instance images, replacing any real captured dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from semfield import kernels
from semfield.colors import class_palette
from semfield.dataset import Dataset, Frame
from semfield.errors import ConfigError, DomainError
from semfield.geometry import Camera, Pose, Ray, pixel_directions


@dataclass
class Primitive:
    shape: str  # "sphere" | "box" | "plane"
    params: np.ndarray  # sphere: [cx,cy,cz,r]; box: [lo,hi]; plane: [axis,offset]
    class_id: int
    instance_id: int
    albedo: np.ndarray  # (3,) in [0, 1]


@dataclass
class SceneModel:
    primitives: list[Primitive]
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    background_class: int = 0
    background_albedo: np.ndarray = field(
        default_factory=lambda: np.array([0.75, 0.75, 0.75]))
    light_dir: np.ndarray = field(
        default_factory=lambda: np.array([0.35, -0.85, 0.4]) / np.linalg.norm([0.35, -0.85, 0.4]))
    ambient: float = 0.3
    specular: float = 0.0  # view-dependent lobe, off by default

    def __post_init__(self):
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=np.float64)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=np.float64)
        seen = set()
        for p in self.primitives:
            if p.instance_id in seen:
                raise ConfigError(f"duplicate instance id {p.instance_id}")
            seen.add(p.instance_id)
        self._packed = None

    @property
    def centre(self) -> np.ndarray:
        return 0.5 * (self.bounds_lo + self.bounds_hi)

    def packed(self):
        """Primitive arrays in the layout the ray-cast kernel expects."""
        if self._packed is None:
            spheres, boxes, p_axes, p_offs = [], [], [], []
            order = []
            for p in self.primitives:
                if p.shape == "sphere":
                    spheres.append(p.params)
            for p in self.primitives:
                if p.shape == "box":
                    boxes.append(p.params)
            for p in self.primitives:
                if p.shape == "plane":
                    p_axes.append(int(p.params[0]))
                    p_offs.append(p.params[1])
            order = ([p for p in self.primitives if p.shape == "sphere"]
                     + [p for p in self.primitives if p.shape == "box"]
                     + [p for p in self.primitives if p.shape == "plane"])
            self._packed = (
                np.array(spheres, dtype=np.float64).reshape(-1, 4),
                np.array(boxes, dtype=np.float64).reshape(-1, 6),
                np.array(p_axes, dtype=np.int64),
                np.array(p_offs, dtype=np.float64),
                order,
            )
        return self._packed


@dataclass
class SceneSpec:
    num_primitives: int
    num_classes: int  # including the background class
    bounds_lo: tuple = (-2.0, 0.0, -2.0)
    bounds_hi: tuple = (2.0, 2.2, 2.0)
    ambient: float = 0.3
    specular: float = 0.0


@dataclass
class TrajectorySpec:
    num_poses: int
    radius_min: float = 1.2
    radius_max: float = 1.7
    height_min: float = 0.8
    height_max: float = 1.6
    revolutions: float = 1.0


def generate_scene(spec: SceneSpec, seed: int) -> SceneModel:
    """Deterministically generate a room scene from a seed.

    Classes cycle over the foreground ids so that several instances share a
    class whenever num_primitives exceeds the number of foreground classes;
    with >= 4 primitives a shared class is forced even when there are enough
    classes to go around (region-wise corruption needs one)."""
    if spec.num_classes < 2:
        raise ConfigError("need at least 2 classes (background + 1 foreground)")
    if spec.num_primitives < 1:
        raise ConfigError("need at least 1 primitive")
    rng = np.random.default_rng(seed)
    lo = np.asarray(spec.bounds_lo, dtype=np.float64)
    hi = np.asarray(spec.bounds_hi, dtype=np.float64)
    if not np.all(hi > lo):
        raise ConfigError("degenerate world bounds")
    palette = class_palette(spec.num_classes)
    n_fg = spec.num_classes - 1
    class_ids = [1 + (i % n_fg) for i in range(spec.num_primitives)]
    if spec.num_primitives >= 4 and len(set(class_ids)) == spec.num_primitives:
        class_ids[1] = class_ids[0]

    margin = 0.35
    centres: list[np.ndarray] = []
    prims: list[Primitive] = []
    for i in range(spec.num_primitives):
        size = rng.uniform(0.22, 0.4)
        if np.any(lo + margin + size >= hi - margin - size):
            raise ConfigError("world bounds too small for requested primitives")
        # rejection-sample a centre keeping primitives apart (best effort)
        for _ in range(64):
            c = rng.uniform(lo + margin + size, hi - margin - size)
            c[1] = rng.uniform(lo[1] + size + 0.02,
                              min(lo[1] + size + 1.0, hi[1] - margin - size))
            if all(np.linalg.norm(c - o) > size + 0.45 for o in centres):
                break
        centres.append(c)
        albedo = np.clip(palette[class_ids[i]] + rng.uniform(-0.06, 0.06, 3), 0.05, 0.98)
        if i % 2 == 0:
            prims.append(Primitive("sphere", np.array([*c, size]),
                                   class_ids[i], i + 1, albedo))
        else:
            half = rng.uniform(0.6, 1.0, 3) * size
            prims.append(Primitive("box", np.concatenate([c - half, c + half]),
                                   class_ids[i], i + 1, albedo))
    return SceneModel(primitives=prims, bounds_lo=lo, bounds_hi=hi,
                      ambient=spec.ambient, specular=spec.specular)


def make_trajectory(spec: TrajectorySpec, seed: int,
                    centre=(0.0, 1.0, 0.0)) -> list[Pose]:
    """Roll-free orbit around the scene centre, hand-held-style wobble."""
    if spec.num_poses < 2:
        raise ConfigError("need at least 2 poses")
    rng = np.random.default_rng(seed)
    centre = np.asarray(centre, dtype=np.float64)
    n = spec.num_poses
    az = np.linspace(0.0, 2 * np.pi * spec.revolutions, n, endpoint=False)
    az = az + rng.uniform(0, 2 * np.pi)
    r_mid = 0.5 * (spec.radius_min + spec.radius_max)
    r_amp = 0.5 * (spec.radius_max - spec.radius_min)
    radius = r_mid + r_amp * np.sin(az * 2.0 + rng.uniform(0, 2 * np.pi))
    height = np.interp(np.sin(az * 1.5 + rng.uniform(0, 2 * np.pi)),
                       [-1, 1], [spec.height_min, spec.height_max])
    poses = []
    for k in range(n):
        eye = centre + np.array([radius[k] * np.cos(az[k]),
                                 height[k] - centre[1],
                                 radius[k] * np.sin(az[k])])
        poses.append(Pose.look_at(eye, centre))
    return poses


# ---------------------------------------------------------------------------
# ray casting and shading
# ---------------------------------------------------------------------------

def _lookup_tables(scene: SceneModel):
    _, _, _, _, order = scene.packed()
    n = len(order)
    albedo = np.empty((n + 1, 3))
    class_id = np.empty(n + 1, dtype=np.int64)
    instance_id = np.empty(n + 1, dtype=np.int64)
    for i, p in enumerate(order):
        albedo[i] = p.albedo
        class_id[i] = p.class_id
        instance_id[i] = p.instance_id
    albedo[n] = scene.background_albedo  # shell and miss
    class_id[n] = scene.background_class
    instance_id[n] = 0
    return albedo, class_id, instance_id


def raycast_batch(scene: SceneModel, origins, dirs, t_far: float):
    """Vectorised oracle: nearest-hit rgb/depth/class/instance for each ray."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    spheres, boxes, p_axes, p_offs, order = scene.packed()
    t, hit_id, normals = kernels.raycast(
        origins, dirs, spheres, boxes, p_axes, p_offs,
        scene.bounds_lo, scene.bounds_hi, t_far)
    albedo_tab, class_tab, inst_tab = _lookup_tables(scene)
    idx = np.where(hit_id >= 0, hit_id, len(order))
    albedo = albedo_tab[idx]
    lambert = np.maximum(0.0, -(normals @ scene.light_dir))
    shade = scene.ambient + (1.0 - scene.ambient) * lambert
    shade = np.where(hit_id == -2, 1.0, shade)  # true miss: flat albedo
    rgb = albedo * shade[:, None]
    if scene.specular > 0:
        refl = scene.light_dir - 2.0 * (normals @ scene.light_dir)[:, None] * normals
        spec = np.maximum(0.0, -np.einsum("ij,ij->i", refl, dirs)) ** 16
        spec = np.where(hit_id == -2, 0.0, spec)
        rgb = rgb + scene.specular * spec[:, None]
    return (np.clip(rgb, 0.0, 1.0), t,
            class_tab[idx].astype(np.uint8), inst_tab[idx].astype(np.uint8))


def raycast_gt(scene: SceneModel, ray: Ray) -> dict:
    """Single-ray oracle; see raycast_batch."""
    rgb, t, cls, inst = raycast_batch(scene, ray.origin[None], ray.direction[None],
                                      ray.t_far)
    return {"rgb": rgb[0], "depth": float(t[0]), "class_id": int(cls[0]),
            "instance_id": int(inst[0])}


def raycast_images(scene: SceneModel, camera: Camera, pose: Pose, t_far: float):
    dirs = pixel_directions(camera, pose)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    rgb, t, cls, inst = raycast_batch(scene, origins, dirs, t_far)
    h, w = camera.height, camera.width
    return (rgb.reshape(h, w, 3), t.reshape(h, w).astype(np.float32),
            cls.reshape(h, w), inst.reshape(h, w))


def render_sequence(scene: SceneModel, camera: Camera, trajectory,
                    t_far: float = 20.0, num_classes: int | None = None) -> Dataset:
    """One oracle frame per pose; RGB quantised to 8 bit so that on-disk
    round trips are exact."""
    if not trajectory:
        raise DomainError("empty trajectory")
    if num_classes is None:
        num_classes = max([scene.background_class]
                         + [p.class_id for p in scene.primitives]) + 1
    frames = []
    for pose in trajectory:
        rgb, depth, cls, inst = raycast_images(scene, camera, pose, t_far)
        rgb8 = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
        frames.append(Frame(rgb=rgb8.astype(np.float32) / 255.0, label=cls,
                            pose=pose, instance=inst, depth=depth))
    return Dataset(camera=camera, frames=frames, num_classes=num_classes)
