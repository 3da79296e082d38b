"""The demo backend's labeling rules and its equivalence to the main toolkit."""

import numpy as np
import pytest

from segbridge.demo import DEMO_CENTROIDS, DemoSegmenter, demo_segment, wrap_builtin_demo
from segbridge.errors import ModelContractError
from segbridge.model import load_model


def _solid(color, h=2, w=2):
    return np.tile(np.asarray(color, dtype=np.uint8), (h, w, 1))


class TestDemoSegmenter:
    def test_exact_centroid_colors(self):
        seg = DemoSegmenter()
        for cls, color in DEMO_CENTROIDS:
            labels = seg.segment(_solid(color))
            assert labels.dtype == np.uint16
            assert (labels == cls).all()

    def test_shape_mirrors_input(self):
        labels = DemoSegmenter().segment(np.zeros((5, 9, 3), dtype=np.uint8))
        assert labels.shape == (5, 9)

    def test_ties_go_to_the_lowest_class(self):
        seg = DemoSegmenter(centroids=((2, (10, 0, 0)), (5, (30, 0, 0))))
        assert (seg.segment(_solid((20, 0, 0))) == 2).all()

    def test_centroid_order_does_not_matter(self):
        forward = DemoSegmenter(centroids=((2, (10, 0, 0)), (5, (30, 0, 0))))
        shuffled = DemoSegmenter(centroids=((5, (30, 0, 0)), (2, (10, 0, 0))))
        pixels = np.random.default_rng(3).integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
        assert np.array_equal(forward.segment(pixels), shuffled.segment(pixels))

    def test_extreme_colors_do_not_overflow(self):
        seg = DemoSegmenter(centroids=((0, (0, 0, 0)), (1, (255, 255, 255))))
        assert (seg.segment(_solid((255, 255, 255))) == 1).all()
        assert (seg.segment(_solid((0, 0, 0))) == 0).all()

    def test_grayscale_is_a_contract_error(self):
        with pytest.raises(ModelContractError, match="3"):
            DemoSegmenter().segment(np.zeros((4, 4, 1), dtype=np.uint8))


class TestWrapBuiltinDemo:
    def test_config_loads_and_matches_the_class(self):
        cfg = wrap_builtin_demo()
        segment = load_model(cfg)
        pixels = np.random.default_rng(9).integers(0, 256, size=(6, 7, 3)).astype(np.uint8)
        assert np.array_equal(segment(pixels), DemoSegmenter().segment(pixels))
        assert np.array_equal(segment(pixels), demo_segment(pixels))


class TestCrossPackageEquivalence:
    """demo_segment must be bit-identical to the toolkit's builtin oracle."""

    def test_matches_palette_segmenter_on_random_images(self):
        segevo_oracle = pytest.importorskip("segevo.oracle")
        segevo_imaging = pytest.importorskip("segevo.imaging")
        builtin = segevo_oracle.PaletteSegmenter()
        rng = np.random.default_rng(40)
        for _ in range(100):
            h = int(rng.integers(1, 40))
            w = int(rng.integers(1, 40))
            pixels = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
            ours = demo_segment(pixels)
            theirs = builtin.segment(segevo_imaging.Image(pixels)).labels
            assert np.array_equal(ours, theirs)

    def test_centroid_tables_are_the_same(self):
        segevo_oracle = pytest.importorskip("segevo.oracle")
        assert DEMO_CENTROIDS == segevo_oracle.DEFAULT_CENTROIDS

    def test_jitter_free_scene_reproduces_ground_truth(self):
        dataset_io = pytest.importorskip("segevo.dataset_io")
        spec = dataset_io.SceneSpec(
            height=24, width=24,
            regions=(dataset_io.SceneRegion(class_id=2, top=4, left=4,
                                            height=12, width=16),))
        image, truth = dataset_io.synth_scene(spec, seed=0)
        assert np.array_equal(demo_segment(image.samples), truth.labels)
