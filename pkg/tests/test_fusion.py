import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semfield.dataset import VOID
from semfield.errors import ConfigError, DomainError
from semfield.fusion import (SimulatedCnnSpec, average_fuse, bayesian_fuse,
                             fuse_to_frame, simulate_cnn_probs)
from semfield.geometry import Camera, Pose

from conftest import make_dataset


class TestBayesianFuse:
    def test_hand_case_two_identical_views(self):
        # [0.6, 0.4]^2 renormalised: (0.36, 0.16) / 0.52
        fused = bayesian_fuse([[0.6, 0.4], [0.6, 0.4]])
        np.testing.assert_allclose(fused, [0.36 / 0.52, 0.16 / 0.52])

    def test_opposing_views_cancel(self):
        fused = bayesian_fuse([[0.6, 0.4], [0.4, 0.6]])
        np.testing.assert_allclose(fused, [0.5, 0.5])

    def test_one_hot_is_absorbing(self):
        fused = bayesian_fuse([[1.0, 0.0, 0.0], [0.2, 0.5, 0.3]])
        assert fused.argmax() == 0
        assert fused[0] > 0.999

    def test_uniform_is_neutral_element(self, rng):
        p = rng.dirichlet(np.ones(4))
        fused = bayesian_fuse([p, np.full(4, 0.25)])
        np.testing.assert_allclose(fused, p, atol=1e-12)

    def test_order_invariance(self, rng):
        views = [rng.dirichlet(np.ones(3)) for _ in range(4)]
        np.testing.assert_allclose(bayesian_fuse(views),
                                   bayesian_fuse(views[::-1]))

    def test_invalid_distribution_rejected(self):
        with pytest.raises(DomainError):
            bayesian_fuse([[0.7, 0.7]])
        with pytest.raises(DomainError):
            bayesian_fuse(np.zeros((0, 3)))


class TestAverageFuse:
    def test_mean_of_views(self):
        fused = average_fuse([[0.6, 0.4], [0.2, 0.8]])
        np.testing.assert_allclose(fused, [0.4, 0.6])

    def test_single_view_identity(self):
        np.testing.assert_allclose(average_fuse([[0.3, 0.7]]), [0.3, 0.7])

    def test_commutative(self, rng):
        a = rng.dirichlet(np.ones(5))
        b = rng.dirichlet(np.ones(5))
        np.testing.assert_allclose(average_fuse([a, b]), average_fuse([b, a]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n_views=st.integers(1, 6))
def test_fusion_outputs_are_distributions(seed, n_views):
    rng = np.random.default_rng(seed)
    views = rng.dirichlet(np.ones(4), size=n_views)
    for fused in (bayesian_fuse(views), average_fuse(views)):
        assert (fused >= 0).all()
        assert fused.sum() == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_bayesian_sharpens_agreeing_views(seed):
    """Repeating a view never lowers the probability of its argmax class."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(3))
    fused = bayesian_fuse([p, p])
    assert fused[p.argmax()] >= p.max() - 1e-12


class TestSimulateCnnProbs:
    def _dataset(self):
        return make_dataset(n_frames=3, width=12, height=10, num_classes=3,
                            with_instance=True)

    def test_shapes_and_normalisation(self, rng):
        ds = self._dataset()
        spec = SimulatedCnnSpec(pixel_noise=0.1, region_noise=0.0)
        probs = simulate_cnn_probs(ds, [0, 2], spec, rng)
        assert set(probs) == {0, 2}
        assert probs[0].shape == (10, 12, 3)
        np.testing.assert_allclose(probs[0].sum(axis=-1), 1.0, atol=1e-6)

    def test_softening_values(self, rng):
        ds = self._dataset()
        spec = SimulatedCnnSpec(pixel_noise=0.0, region_noise=0.0,
                                soften_eta=0.1)
        probs = simulate_cnn_probs(ds, [1], spec, rng)[1]
        # clean labels, eta softening: 0.9 on the label, 0.05 on the rest
        top = probs.max(axis=-1)
        np.testing.assert_allclose(top, 0.9, atol=1e-6)
        assert (probs.argmax(axis=-1) == ds.frames[1].label).all()

    def test_noise_free_spec_reproduces_labels(self, rng):
        ds = self._dataset()
        spec = SimulatedCnnSpec(pixel_noise=0.0, region_noise=0.0)
        probs = simulate_cnn_probs(ds, [0, 1, 2], spec, rng)
        for idx in (0, 1, 2):
            assert (probs[idx].argmax(axis=-1) == ds.frames[idx].label).all()

    def test_pixel_noise_changes_some_argmaxes(self, rng):
        ds = self._dataset()
        spec = SimulatedCnnSpec(pixel_noise=0.3, region_noise=0.0)
        probs = simulate_cnn_probs(ds, [0], spec, rng)[0]
        disagree = (probs.argmax(axis=-1) != ds.frames[0].label).mean()
        assert disagree > 0.15

    def test_missing_instance_maps_rejected(self, rng):
        ds = make_dataset(n_frames=2, with_instance=False)
        with pytest.raises(ConfigError, match="instance"):
            simulate_cnn_probs(ds, [0], SimulatedCnnSpec(), rng)


def _flat_wall_dataset(n_frames=3, width=8, height=6, num_classes=3, dist=2.0):
    """Cameras at identical pose staring at a fronto-parallel wall: every
    view observes every target pixel at exactly the same depth."""
    from semfield.dataset import Dataset, Frame
    camera = Camera.from_hfov(width, height, 60.0)
    rng = np.random.default_rng(0)
    frames = []
    label = rng.integers(0, num_classes, (height, width)).astype(np.uint8)
    for _ in range(n_frames):
        frames.append(Frame(
            rgb=np.zeros((height, width, 3), dtype=np.float32),
            label=label.copy(),
            pose=Pose.identity(),
            depth=np.full((height, width), dist, dtype=np.float32)))
    return Dataset(camera=camera, frames=frames, num_classes=num_classes)


class TestFuseToFrame:
    def test_single_view_is_identity(self, rng):
        ds = _flat_wall_dataset(1)
        h, w, c = 6, 8, 3
        probs = {0: rng.dirichlet(np.ones(c), size=(h, w)).astype(np.float32)}
        depths = {0: ds.frames[0].depth}
        for method in ("bayesian", "average"):
            label, fused = fuse_to_frame(ds, probs, 0, method, depths, [0])
            np.testing.assert_allclose(fused, probs[0], atol=1e-6)
            np.testing.assert_array_equal(label, probs[0].argmax(axis=-1))

    def test_consensus_sharpens_bayesian(self, rng):
        ds = _flat_wall_dataset(3)
        h, w, c = 6, 8, 3
        base = rng.dirichlet(np.full(c, 5.0), size=(h, w)).astype(np.float32)
        probs = {i: base.copy() for i in range(3)}
        depths = {i: ds.frames[i].depth for i in range(3)}
        label, fused = fuse_to_frame(ds, probs, 0, "bayesian", depths,
                                     [0, 1, 2])
        np.testing.assert_array_equal(label, base.argmax(axis=-1))
        top = np.take_along_axis(fused, label[..., None].astype(int),
                                 axis=-1)[..., 0]
        base_top = base.max(axis=-1)
        assert (top >= base_top - 1e-6).all()

    def test_opposing_views_tie_to_class_zero(self):
        ds = _flat_wall_dataset(2, num_classes=2)
        h, w = 6, 8
        a = np.full((h, w, 2), [0.6, 0.4], dtype=np.float32)
        b = np.full((h, w, 2), [0.4, 0.6], dtype=np.float32)
        depths = {0: ds.frames[0].depth, 1: ds.frames[1].depth}
        label, fused = fuse_to_frame(ds, {0: a, 1: b}, 0, "bayesian", depths,
                                     [0, 1])
        np.testing.assert_allclose(fused, 0.5, atol=1e-6)
        np.testing.assert_array_equal(label, 0)  # argmax tie breaks low

    def test_depth_gate_excludes_inconsistent_views(self):
        ds = _flat_wall_dataset(2, num_classes=2)
        h, w = 6, 8
        a = np.full((h, w, 2), [0.6, 0.4], dtype=np.float32)
        b = np.full((h, w, 2), [0.1, 0.9], dtype=np.float32)
        depths = {0: ds.frames[0].depth,
                  1: ds.frames[1].depth + 1.0}  # violates the tau_d gate
        label, fused = fuse_to_frame(ds, {0: a, 1: b}, 0, "bayesian", depths,
                                     [0, 1])
        np.testing.assert_allclose(fused, a, atol=1e-6)
        np.testing.assert_array_equal(label, 0)

    def test_average_matches_oracle_mean(self):
        ds = _flat_wall_dataset(2, num_classes=2)
        h, w = 6, 8
        a = np.full((h, w, 2), [0.6, 0.4], dtype=np.float32)
        b = np.full((h, w, 2), [0.2, 0.8], dtype=np.float32)
        depths = {0: ds.frames[0].depth, 1: ds.frames[1].depth}
        _, fused = fuse_to_frame(ds, {0: a, 1: b}, 0, "average", depths,
                                 [0, 1])
        np.testing.assert_allclose(fused, np.full((h, w, 2), [0.4, 0.6]),
                                   atol=1e-6)

    def test_missing_inputs_rejected(self):
        ds = _flat_wall_dataset(2, num_classes=2)
        a = np.full((6, 8, 2), 0.5, dtype=np.float32)
        depths = {0: ds.frames[0].depth, 1: ds.frames[1].depth}
        with pytest.raises(ConfigError, match="probabilities"):
            fuse_to_frame(ds, {0: a}, 0, "bayesian", depths, [0, 1])
        with pytest.raises(ConfigError, match="depth"):
            fuse_to_frame(ds, {0: a, 1: a}, 0, "bayesian", {0: depths[0]},
                          [0, 1])
        with pytest.raises(ConfigError, match="method"):
            fuse_to_frame(ds, {0: a, 1: a}, 0, "product", depths, [0, 1])
