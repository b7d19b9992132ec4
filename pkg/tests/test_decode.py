import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from textkp.decode import _local_peaks, find_peaks
from textkp.geometry import KeypointKind, build_label_bundle
from textkp.labelmaps import HeatmapStack, perturb_stack, render_labels


def test_single_pixel_peak():
    stack = HeatmapStack.empty(12, 10)
    stack.data[1, 7, 5] = 1.0
    (kp,) = find_peaks(stack, 0.3)
    assert kp.position == (5.0, 7.0)
    assert kp.kind is KeypointKind.CHARACTER and kp.score == 1.0


def test_single_pixel_peak_without_smoothing():
    stack = HeatmapStack.empty(12, 10)
    stack.data[1, 7, 5] = 1.0
    (kp,) = find_peaks(stack, 0.3, smoothing=0)
    assert kp.position == (5.0, 7.0)


def test_all_zero_stack():
    assert find_peaks(HeatmapStack.empty(20, 20)) == []


def test_plateau_collapses_to_smallest_yx():
    heat = np.zeros((8, 8))
    heat[3:5, 2:5] = 0.8
    assert _local_peaks(heat).tolist() == [[3, 2]]


def test_threshold_range():
    with pytest.raises(ValueError):
        find_peaks(HeatmapStack.empty(4, 4), 1.0)


@pytest.mark.parametrize("s", [1, 2, 4])
def test_camel_roundtrip(camel_placed, s):
    bundle = build_label_bundle(camel_placed)
    stack = render_labels([bundle], 160, 80, downsample=s)
    kps = find_peaks(stack)
    assert len(kps) == 7
    truth = {k.position: k for k in bundle.keypoints}
    for kp in kps:
        best = min(truth, key=lambda p: np.hypot(p[0] - kp.position[0], p[1] - kp.position[1]))
        # integer map pixels: within half a map pixel per axis
        assert max(abs(best[0] - kp.position[0]), abs(best[1] - kp.position[1])) <= 0.5 * s
        assert truth[best].kind is kp.kind


def test_links_recovered_exactly(camel_placed):
    bundle = build_label_bundle(camel_placed)
    kps = find_peaks(render_labels([bundle], 160, 80))
    by_pos = {k.position: ls for k, ls in zip(bundle.keypoints, bundle.links)}
    for kp in kps:
        assert kp.links == by_pos[kp.position]


def test_end_keypoints_lack_outward_links(camel_placed):
    kps = find_peaks(render_labels([build_label_bundle(camel_placed)], 160, 80))
    left = [k for k in kps if k.kind is KeypointKind.LEFT][0]
    right = [k for k in kps if k.kind is KeypointKind.RIGHT][0]
    assert left.links.left is None and left.links.right is not None
    assert right.links.right is None and right.links.left is not None


def test_suppression_removes_close_duplicates():
    stack = HeatmapStack.empty(40, 20)
    stack.data[1, 10, 10] = 1.0
    stack.data[1, 10, 13] = 0.9
    stack.link_valid[2:, 10, 10] = True
    stack.data[8:12, 10, 10] = [0, -8, 0, 8]  # d = 16
    assert len(find_peaks(stack, smoothing=0)) == 2
    # radius sqrt(16) = 4 covers the second peak
    assert len(find_peaks(stack, smoothing=0, suppress=1.0)) == 1


@given(st.integers(0, 200), st.floats(0.05, 0.5), st.floats(0.05, 0.5))
def test_threshold_monotone(seed, t1, t2):
    rng = np.random.default_rng(seed)
    stack = HeatmapStack.empty(24, 18)
    stack.data[1:4] = rng.random((3, 18, 24)) ** 3
    lo, hi = sorted((t1, t2))
    assert len(find_peaks(stack, hi)) <= len(find_peaks(stack, lo))


def test_noise_offsets_stay_small(camel_placed):
    bundle = build_label_bundle(camel_placed)
    stack = render_labels([bundle], 160, 80)
    truth = np.array([k.position for k in bundle.keypoints])
    for seed in range(10):
        kps = find_peaks(perturb_stack(stack, 0.05, seed))
        pos = np.array([k.position for k in kps])
        d = np.hypot(*(pos[:, None, :] - truth[None]).transpose(2, 0, 1)).min(axis=1)
        assert d.max() <= 2.0
