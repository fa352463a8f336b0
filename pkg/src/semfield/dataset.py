"""On-disk dataset format, loading/validation, splits and key-frame selection.

Directory layout::

    camera.json   {width, height, fx, fy, cx, cy, num_classes, class_names[]}
    frames.json   ordered [{rgb, label, instance?, depth?, pose: 16 row-major}]
    *.png         rgb as 8-bit colour, labels/instances as 8-bit grayscale
    *.pfm         depth as little-endian 32-bit float, metres

Label value 255 is the void (unlabelled) class and never counts as a real
class id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from semfield.errors import ConfigError, DataError, DomainError
from semfield.geometry import Camera, Pose

VOID = 255


# ---------------------------------------------------------------------------
# PFM I/O (little-endian float32)
# ---------------------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise DomainError("PFM writer expects a 2D array")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")  # negative scale = little endian
        # PFM stores rows bottom-up
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise DataError(f"{path}: not a grayscale PFM file")
        dims = f.readline().split()
        if len(dims) != 2:
            raise DataError(f"{path}: malformed PFM dimensions")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        buf = f.read(w * h * 4)
        if len(buf) != w * h * 4:
            raise DataError(f"{path}: truncated PFM payload")
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(buf, dtype=dt).reshape(h, w).astype(np.float32)
    return data[::-1].copy()


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    label: np.ndarray  # (H, W) uint8, 255 = void
    pose: Pose
    instance: np.ndarray | None = None  # (H, W) uint8
    depth: np.ndarray | None = None  # (H, W) float32, metres


@dataclass
class Dataset:
    camera: Camera
    frames: list[Frame]
    num_classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(self.num_classes)]
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 1 or self.num_classes > 255:
            raise DataError("num_classes must be in 1..255")
        if len(self.class_names) != self.num_classes:
            raise DataError("class_names length does not match num_classes")
        shape = (self.camera.height, self.camera.width)
        for i, fr in enumerate(self.frames):
            if fr.rgb.shape != shape + (3,):
                raise DataError(f"frame {i}: rgb shape {fr.rgb.shape} != {shape}")
            if fr.label.shape != shape:
                raise DataError(f"frame {i}: label shape mismatch")
            bad = (fr.label != VOID) & (fr.label >= self.num_classes)
            if bad.any():
                y, x = np.argwhere(bad)[0]
                raise DataError(
                    f"frame {i}: label id {fr.label[y, x]} >= {self.num_classes} "
                    f"at pixel ({x}, {y})")
            if fr.instance is not None and fr.instance.shape != shape:
                raise DataError(f"frame {i}: instance shape mismatch")
            if fr.depth is not None and fr.depth.shape != shape:
                raise DataError(f"frame {i}: depth shape mismatch")

    def __len__(self) -> int:
        return len(self.frames)

    def save(self, path, overwrite: bool = False) -> None:
        path = Path(path)
        if path.exists() and any(path.iterdir()) and not overwrite:
            raise DataError(f"{path} exists and is not empty (use overwrite)")
        path.mkdir(parents=True, exist_ok=True)
        cam = self.camera
        with open(path / "camera.json", "w") as f:
            json.dump({
                "width": cam.width, "height": cam.height,
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "num_classes": self.num_classes,
                "class_names": self.class_names,
            }, f, indent=2)
        entries = []
        for i, fr in enumerate(self.frames):
            entry = {"rgb": f"rgb_{i:04d}.png", "label": f"label_{i:04d}.png",
                     "pose": [float(v) for v in fr.pose.matrix().reshape(-1)]}
            rgb8 = np.clip(np.round(fr.rgb * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(rgb8).save(path / entry["rgb"])
            Image.fromarray(fr.label, mode="L").save(path / entry["label"])
            if fr.instance is not None:
                entry["instance"] = f"instance_{i:04d}.png"
                Image.fromarray(fr.instance, mode="L").save(path / entry["instance"])
            if fr.depth is not None:
                entry["depth"] = f"depth_{i:04d}.pfm"
                write_pfm(path / entry["depth"], fr.depth)
            entries.append(entry)
        with open(path / "frames.json", "w") as f:
            json.dump(entries, f, indent=2)


def load(path) -> Dataset:
    path = Path(path)
    cam_file = path / "camera.json"
    frames_file = path / "frames.json"
    for p in (cam_file, frames_file):
        if not p.exists():
            raise DataError(f"missing {p}")
    try:
        with open(cam_file) as f:
            cam_info = json.load(f)
        with open(frames_file) as f:
            entries = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed JSON header in {path}: {e}") from e
    try:
        camera = Camera(cam_info["width"], cam_info["height"], cam_info["fx"],
                        cam_info["fy"], cam_info["cx"], cam_info["cy"])
        num_classes = int(cam_info["num_classes"])
        class_names = list(cam_info.get("class_names", []))
    except (KeyError, DomainError) as e:
        raise DataError(f"invalid camera.json: {e}") from e

    frames = []
    for i, entry in enumerate(entries):
        try:
            rgb = np.asarray(Image.open(path / entry["rgb"]).convert("RGB"),
                             dtype=np.float32) / 255.0
            label = np.asarray(Image.open(path / entry["label"]).convert("L"),
                               dtype=np.uint8)
            pose = Pose.from_matrix(np.array(entry["pose"]).reshape(4, 4))
        except (KeyError, FileNotFoundError, DomainError, ValueError) as e:
            raise DataError(f"frame {i}: {e}") from e
        instance = depth = None
        if "instance" in entry:
            instance = np.asarray(Image.open(path / entry["instance"]).convert("L"),
                                  dtype=np.uint8)
        if "depth" in entry:
            depth = read_pfm(path / entry["depth"])
        frames.append(Frame(rgb=rgb, label=label, pose=pose,
                            instance=instance, depth=depth))
    return Dataset(camera=camera, frames=frames, num_classes=num_classes,
                   class_names=class_names)


# ---------------------------------------------------------------------------
# splits and key-frame selection
# ---------------------------------------------------------------------------

def split(n_frames, stride: int):
    """Every ``stride``-th frame trains; test frames are the midpoints
    between consecutive train indices (our convention, documented in the
    README)."""
    if isinstance(n_frames, Dataset):
        n_frames = len(n_frames)
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    train = list(range(0, n_frames, stride))
    train_set = set(train)
    test = []
    for a, b in zip(train, train[1:]):
        mid = (a + b) // 2
        if mid not in train_set:
            test.append(mid)
    return train, test


@dataclass(frozen=True)
class SupervisionMask:
    """Which training frames contribute semantic labels. Photometric
    supervision always uses every training frame."""

    train_indices: tuple
    labelled: tuple

    def is_labelled(self, frame_idx: int) -> bool:
        return frame_idx in self.labelled


def select_keyframes(train_indices, sparsity_ratio: float = 0.0,
                     explicit=None) -> SupervisionMask:
    """Keep ceil((1 - ratio) * N) evenly spaced training frames as labelled
    key-frames (first frame pinned). ``explicit`` overrides with a manual
    index list, e.g. the hand-picked two-key-frame setup."""
    train_indices = list(train_indices)
    if explicit is not None:
        bad = set(explicit) - set(train_indices)
        if bad:
            raise ConfigError(f"explicit key-frames {sorted(bad)} not in training set")
        return SupervisionMask(tuple(train_indices), tuple(sorted(explicit)))
    if not (0 <= sparsity_ratio < 1):
        raise ConfigError("sparsity_ratio must be in [0, 1)")
    n = len(train_indices)
    if n == 0:
        raise ConfigError("empty training set")
    keep = int(np.ceil((1.0 - sparsity_ratio) * n))
    if keep >= n:
        picked = train_indices
    elif keep == 1:
        picked = [train_indices[0]]
    else:
        pos = np.round(np.linspace(0, n - 1, keep)).astype(int)
        picked = [train_indices[p] for p in sorted(set(pos.tolist()))]
    return SupervisionMask(tuple(train_indices), tuple(picked))
