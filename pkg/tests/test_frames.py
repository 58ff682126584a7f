"""Difference-frame stages against brute-force oracles and closed forms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cyclex.frames import (
    Component,
    FrameConfig,
    abs_diff,
    connected_components,
    frame_pipeline,
    gaussian_blur,
    gaussian_kernel,
    threshold_mask,
    threshold_sweep,
    top_k_frames,
)
from tests.test_kernels import flood_fill_oracle


def test_abs_diff_trivials():
    a = np.random.default_rng(0).random((8, 8))
    assert np.array_equal(abs_diff(a, a), np.zeros((8, 8)))
    np.testing.assert_allclose(abs_diff(np.ones((4, 4)), np.zeros((4, 4))), 255.0)
    with pytest.raises(ValueError):
        abs_diff(a, np.zeros((4, 4)))


def test_abs_diff_commutative_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.random((6, 6)), rng.random((6, 6))
        assert np.array_equal(abs_diff(a, b), abs_diff(b, a))


def test_blur_preserves_constants_and_max():
    cfg = FrameConfig()
    const = np.full((10, 10), 123.0)
    np.testing.assert_allclose(gaussian_blur(const, cfg), const, rtol=1e-12)
    rng = np.random.default_rng(2)
    img = rng.random((12, 12)) * 255
    assert gaussian_blur(img, cfg).max() <= img.max() + 1e-9


def test_blur_single_pixel_reproduces_kernel_footprint():
    cfg = FrameConfig(blur_size=5, blur_sigma=1.0)
    img = np.zeros((11, 11))
    img[5, 5] = 1.0
    out = gaussian_blur(img, cfg)
    k = gaussian_kernel(5, 1.0)
    np.testing.assert_allclose(out[3:8, 3:8], np.outer(k, k), atol=1e-12)
    assert out[0, 0] == 0.0


def test_threshold_trivials():
    img = np.random.default_rng(3).random((8, 8)) * 255
    assert not threshold_mask(img, 255).any()
    assert threshold_mask(img, -1).all()
    board = np.zeros((8, 8))
    board[::2, ::2] = 200.0
    assert np.array_equal(threshold_mask(board, 95.0), board == 200.0)


def test_components_trivial_cases():
    assert connected_components(np.zeros((5, 5), bool)) == []
    two = np.zeros((10, 10), bool)
    two[1:4, 1:4] = True
    two[6:9, 6:9] = True
    comps = connected_components(two, 8)
    assert sorted(c.area for c in comps) == [9, 9]
    diag = np.zeros((4, 4), bool)
    diag[1, 1] = diag[2, 2] = True
    assert len(connected_components(diag, 8)) == 1
    assert len(connected_components(diag, 4)) == 2


@pytest.mark.parametrize("connectivity", [4, 8])
def test_components_match_flood_fill_on_random_masks(connectivity):
    rng = np.random.default_rng(4)
    for _ in range(60):
        mask = rng.random((32, 32)) < rng.uniform(0.2, 0.7)
        comps = connected_components(mask, connectivity)
        labels, n = flood_fill_oracle(mask, connectivity)
        assert len(comps) == n
        for lab, comp in zip(range(1, n + 1), comps):
            ys, xs = np.nonzero(labels == lab)
            assert comp.area == ys.size
            assert comp.box == (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)


def test_top_k_selection_and_ties():
    comps = [
        Component(area=5, box=(0, 0, 5, 1)),
        Component(area=9, box=(0, 4, 3, 7)),
        Component(area=9, box=(4, 2, 7, 5)),
        Component(area=2, box=(7, 7, 9, 8)),
    ]
    frame = top_k_frames(comps, k=2)
    # ties by top-left y then x: the area-9 box at y=2 precedes the one at y=4
    assert frame.boxes == ((4, 2, 7, 5, 9), (0, 4, 3, 7, 9))
    assert len(top_k_frames(comps, k=10).boxes) == 4


def test_top_k_matches_sort_oracle_on_random_masks():
    rng = np.random.default_rng(5)
    for _ in range(30):
        mask = rng.random((24, 24)) < 0.45
        comps = connected_components(mask, 8)
        frame = top_k_frames(comps, 5)
        want = sorted(comps, key=lambda c: (-c.area, c.box[1], c.box[0]))[:5]
        assert frame.boxes == tuple((*c.box, c.area) for c in want)


def test_pipeline_identical_inputs_give_no_boxes():
    img = np.random.default_rng(6).random((32, 32))
    assert frame_pipeline(img, img, FrameConfig()).boxes == ()


def test_pipeline_single_blob_box():
    """A 10x10 intensity-0.8 blob must yield exactly one box with IoU >= 0.5."""
    rng = np.random.default_rng(7)
    base = rng.random((64, 64)) * 0.05
    edited = base.copy()
    edited[20:30, 30:40] += 0.8
    frame = frame_pipeline(base, edited, FrameConfig())  # defaults 5x5, L=95, K=5
    assert len(frame.boxes) == 1
    x0, y0, x1, y1, area = frame.boxes[0]
    bx = (30, 20, 40, 30)
    ix = max(0, min(x1, bx[2]) - max(x0, bx[0]))
    iy = max(0, min(y1, bx[3]) - max(y0, bx[1]))
    inter = ix * iy
    union = (x1 - x0) * (y1 - y0) + 100 - inter
    assert inter / union >= 0.5


def test_pipeline_equals_composed_stages():
    rng = np.random.default_rng(8)
    a, b = rng.random((32, 32)), rng.random((32, 32))
    cfg = FrameConfig(threshold=40.0, k=3)
    direct = frame_pipeline(a, b, cfg)
    composed = top_k_frames(
        connected_components(
            threshold_mask(gaussian_blur(abs_diff(a, b), cfg), cfg.threshold),
            cfg.connectivity,
        ),
        cfg.k,
    )
    assert direct == composed


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (16, 16), elements=st.floats(0, 255)),
    st.floats(0, 254),
    st.floats(1, 254),
)
def test_threshold_monotonicity(img, l1, delta):
    l2 = min(l1 + delta, 255.0)
    m1, m2 = threshold_mask(img, l1), threshold_mask(img, l2)
    assert not np.any(m2 & ~m1)  # mask(L2) subset of mask(L1)


def test_box_count_bounded_and_boxes_cover_mask_pixels():
    rng = np.random.default_rng(9)
    for _ in range(10):
        a, b = rng.random((24, 24)), rng.random((24, 24))
        cfg = FrameConfig(threshold=30.0, k=4)
        frame = frame_pipeline(a, b, cfg)
        assert len(frame.boxes) <= cfg.k
        mask = threshold_mask(gaussian_blur(abs_diff(a, b), cfg), cfg.threshold)
        for x0, y0, x1, y1, _ in frame.boxes:
            assert mask[y0:y1, x0:x1].any()


def test_frame_config_validation_and_overrides():
    with pytest.raises(ValueError):
        FrameConfig(blur_size=4)
    with pytest.raises(ValueError):
        FrameConfig(threshold=300)
    with pytest.raises(ValueError):
        FrameConfig(k=0)
    with pytest.raises(ValueError):
        FrameConfig(connectivity=5)
    cfg = FrameConfig(threshold_per_finding={"effusion": 80.0})
    assert cfg.for_finding("effusion").threshold == 80.0
    assert cfg.for_finding("cardiomegaly").threshold == 95.0


def test_threshold_sweep_reports_rows():
    rng = np.random.default_rng(10)
    a = rng.random((32, 32))
    b = a.copy()
    b[10:20, 10:20] += 0.6
    rows = threshold_sweep(a, b, FrameConfig(), [50.0, 95.0, 200.0])
    assert [r["threshold"] for r in rows] == [50.0, 95.0, 200.0]
    assert rows[0]["mask_area"] >= rows[1]["mask_area"] >= rows[2]["mask_area"]
