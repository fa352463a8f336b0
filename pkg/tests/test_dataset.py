import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semfield import dataset as ds_mod
from semfield.dataset import (VOID, Dataset, read_pfm, select_keyframes, split,
                              write_pfm)
from semfield.errors import ConfigError, DataError

from conftest import make_dataset


class TestPfm:
    def test_round_trip(self, tmp_path, rng):
        data = rng.uniform(0.0, 10.0, (6, 8)).astype(np.float32)
        write_pfm(tmp_path / "d.pfm", data)
        np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), data)

    def test_bad_header_rejected(self, tmp_path):
        (tmp_path / "bad.pfm").write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 48)
        with pytest.raises(DataError):
            read_pfm(tmp_path / "bad.pfm")

    def test_truncated_payload_rejected(self, tmp_path):
        (tmp_path / "short.pfm").write_bytes(b"Pf\n4 4\n-1.0\n" + b"\0" * 8)
        with pytest.raises(DataError):
            read_pfm(tmp_path / "short.pfm")


class TestSaveLoad:
    def test_round_trip_byte_identical_labels(self, tmp_path):
        ds = make_dataset()
        ds.save(tmp_path / "d")
        loaded = ds_mod.load(tmp_path / "d")
        assert len(loaded) == len(ds)
        for a, b in zip(loaded.frames, ds.frames):
            np.testing.assert_array_equal(a.label, b.label)
            np.testing.assert_array_equal(a.instance, b.instance)
            np.testing.assert_array_equal(a.depth, b.depth)
            np.testing.assert_array_equal(a.rgb, b.rgb)  # rgb is 8-bit quantised
            np.testing.assert_allclose(a.pose.matrix(), b.pose.matrix())

    def test_label_id_at_num_classes_rejected(self, tmp_path):
        ds = make_dataset(num_classes=3)
        ds.frames[1].label[2, 5] = 3  # == num_classes
        with pytest.raises(DataError, match=r"frame 1.*label id 3.*\(5, 2\)"):
            ds.validate()

    def test_void_labels_accepted(self):
        ds = make_dataset(num_classes=3)
        ds.frames[0].label[:] = VOID
        ds.validate()

    def test_optional_depth(self, tmp_path):
        ds = make_dataset(with_depth=False, with_instance=False)
        ds.save(tmp_path / "d")
        loaded = ds_mod.load(tmp_path / "d")
        assert loaded.frames[0].depth is None
        assert loaded.frames[0].instance is None

    def test_missing_files_rejected(self, tmp_path):
        with pytest.raises(DataError, match="camera.json"):
            ds_mod.load(tmp_path)
        ds = make_dataset()
        ds.save(tmp_path / "d")
        (tmp_path / "d" / "rgb_0002.png").unlink()
        with pytest.raises(DataError, match="frame 2"):
            ds_mod.load(tmp_path / "d")

    def test_malformed_json_rejected(self, tmp_path):
        ds = make_dataset()
        ds.save(tmp_path / "d")
        (tmp_path / "d" / "frames.json").write_text("{not json")
        with pytest.raises(DataError, match="malformed"):
            ds_mod.load(tmp_path / "d")

    def test_existing_output_needs_overwrite(self, tmp_path):
        ds = make_dataset()
        ds.save(tmp_path / "d")
        with pytest.raises(DataError, match="overwrite"):
            ds.save(tmp_path / "d")
        ds.save(tmp_path / "d", overwrite=True)


class TestSplit:
    def test_every_fifth_frame_trains(self):
        train, test = split(10, 5)
        assert train == [0, 5]
        assert test == [2]  # midpoint between the two train frames

    def test_stride_one_all_train(self):
        train, test = split(6, 1)
        assert train == [0, 1, 2, 3, 4, 5]
        assert test == []

    def test_stride_larger_than_sequence(self):
        train, test = split(4, 10)
        assert train == [0]
        assert test == []

    def test_reference_split_sizes(self):
        # 200-frame sequence with stride 5: 40 train, 39 midpoints
        train, test = split(200, 5)
        assert len(train) == 40
        assert all(t % 5 == 0 for t in train)
        assert len(test) == 39
        assert not set(train) & set(test)


class TestSelectKeyframes:
    def test_ratio_zero_keeps_all(self):
        mask = select_keyframes([0, 5, 10], 0.0)
        assert mask.labelled == (0, 5, 10)

    def test_ninety_percent_sparsity(self):
        train = list(range(0, 900, 5))  # 180 training frames
        mask = select_keyframes(train, 0.9)
        assert len(mask.labelled) == 18  # ceil(0.1 * 180)
        assert mask.labelled[0] == train[0]
        gaps = np.diff(mask.labelled)
        assert gaps.max() - gaps.min() <= 5  # evenly spaced

    def test_two_keyframe_setup(self):
        train = list(range(0, 100, 5))
        ratio = 1.0 - 2.0 / len(train)
        mask = select_keyframes(train, ratio)
        assert len(mask.labelled) == 2
        assert mask.labelled == (train[0], train[-1])

    def test_explicit_override(self):
        mask = select_keyframes([0, 5, 10, 15], explicit=[5, 15])
        assert mask.labelled == (5, 15)
        assert mask.is_labelled(5) and not mask.is_labelled(0)

    def test_explicit_outside_training_set_rejected(self):
        with pytest.raises(ConfigError):
            select_keyframes([0, 5], explicit=[3])

    def test_invalid_ratio_rejected(self):
        with pytest.raises(ConfigError):
            select_keyframes([0, 5], 1.0)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 120), ratio=st.floats(0.0, 0.99))
def test_keyframe_endpoints_kept_property(n, ratio):
    # first frame always kept; with >= 2 kept frames the last is kept too
    train = list(range(0, 5 * n, 5))
    mask = select_keyframes(train, ratio)
    expected = int(np.ceil((1.0 - ratio) * n))
    assert mask.labelled[0] == train[0]
    assert len(mask.labelled) <= expected
    if expected >= 2:
        assert mask.labelled[-1] == train[-1]
