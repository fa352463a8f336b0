import numpy as np
import pytest

from semfield.dataset import Dataset, Frame
from semfield.field import EncodingConfig, FieldConfig, FieldParams
from semfield.geometry import Camera, Pose


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    """Small float64 field used by gradient and forward tests."""
    return FieldConfig(num_classes=3, encoding=EncodingConfig(l_pos=2, l_dir=1),
                       trunk_width=8, trunk_depth=2, skip_at=1, head_width=8,
                       dtype="float64")


@pytest.fixture
def tiny_params(tiny_config):
    return FieldParams.init(tiny_config, seed=0)


def make_dataset(n_frames=4, width=8, height=6, num_classes=3, seed=0,
                 with_depth=True, with_instance=True):
    """Small synthetic dataset with arbitrary (but valid) content."""
    rng = np.random.default_rng(seed)
    camera = Camera.from_hfov(width, height, 90.0)
    frames = []
    for i in range(n_frames):
        pose = Pose.look_at(eye=(np.cos(i), 1.0, 2.0 + np.sin(i)),
                            target=(0.0, 1.0, 0.0))
        frames.append(Frame(
            rgb=(rng.integers(0, 256, (height, width, 3)).astype(np.float32)
                 / 255.0),
            label=rng.integers(0, num_classes, (height, width)).astype(np.uint8),
            pose=pose,
            instance=(rng.integers(0, 4, (height, width)).astype(np.uint8)
                      if with_instance else None),
            depth=(rng.uniform(0.5, 3.0, (height, width)).astype(np.float32)
                   if with_depth else None)))
    return Dataset(camera=camera, frames=frames, num_classes=num_classes)
