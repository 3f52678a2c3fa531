import numpy as np
import pytest

from dropstereo import (OpticalConfig, RasterGray, SolverParams, detect_drops, disk_mask,
                        initial_volume, render_synthetic, solve_fixed_volume)
from dropstereo.formats import DetectParams
from dropstereo.raytrace import ScenePlane, SceneSpec
from dropstereo.scenes import make_texture


def iou(a, b):
    return (a & b).sum() / (a | b).sum()


@pytest.fixture(scope="module")
def big_drop_scene(config):
    # one in-focus drop, diameter 320, against a strongly blurred background
    h, w = 420, 420
    mask = disk_mask(160, shape=(h, w), center=(210, 210))
    hf, _ = solve_fixed_volume(mask, initial_volume(mask, 0.25),
                               SolverParams(max_iters=2500), config)
    tex = make_texture("noise", 1024, 2, seed=21, low=0.05, high=0.95)
    scene = SceneSpec(width=w, height=h,
                      planes=(ScenePlane(depth=3000.0, texture=tex, scale=16.0),),
                      blur_radius=8.0)
    image = render_synthetic(scene, [(mask, hf)], config)
    return mask, image


def test_detect_large_drop_with_good_iou(big_drop_scene):
    mask, image = big_drop_scene
    found = detect_drops(image)
    assert len(found) == 1
    assert iou(found[0].membership, mask.membership) >= 0.9


def test_detect_masks_are_wellformed(big_drop_scene):
    mask, image = big_drop_scene
    found = detect_drops(image)
    for m in found:
        # DropMask construction enforces 4-connectivity; check bounds
        i0, i1, j0, j1 = m.bbox()
        assert 0 <= i0 and i1 <= image.height and 0 <= j0 and j1 <= image.width


def test_detect_gain_invariance(big_drop_scene):
    mask, image = big_drop_scene
    for gain in (0.5, 1.5):
        found = detect_drops(RasterGray(np.clip(image.pixels * gain, 0, 1)))
        assert len(found) == 1
        assert iou(found[0].membership, mask.membership) >= 0.85


def test_detect_small_drop_filtered_by_default_diameter(config):
    h, w = 200, 200
    mask = disk_mask(50, shape=(h, w), center=(100, 100))
    hf, _ = solve_fixed_volume(mask, initial_volume(mask, 0.25),
                               SolverParams(max_iters=1500), config)
    tex = make_texture("noise", 1024, 2, seed=22, low=0.05, high=0.95)
    scene = SceneSpec(width=w, height=h,
                      planes=(ScenePlane(depth=3000.0, texture=tex, scale=16.0),),
                      blur_radius=8.0)
    image = render_synthetic(scene, [(mask, hf)], config)
    assert detect_drops(image) == []  # diameter 100 < default minimum 300
    # desk-scale drops cover less of the frame, so the blurred background
    # dominates the gradient percentiles; raise them along with the size cut
    found = detect_drops(image, DetectParams(min_diameter=60.0, low_percentile=85.0,
                                             high_percentile=95.0))
    assert len(found) == 1
    assert iou(found[0].membership, mask.membership) >= 0.85


def test_detect_blank_image_finds_nothing():
    assert detect_drops(RasterGray(np.full((64, 64), 0.5))) == []


def test_detect_multiple_drops_disjoint(config):
    h, w = 340, 640
    m1 = disk_mask(110, shape=(h, w), center=(170, 160))
    m2 = disk_mask(110, shape=(h, w), center=(170, 480))
    sp = SolverParams(max_iters=2000)
    hf1, _ = solve_fixed_volume(m1, initial_volume(m1, 0.25), sp, config)
    hf2, _ = solve_fixed_volume(m2, initial_volume(m2, 0.25), sp, config)
    tex = make_texture("noise", 1024, 2, seed=23, low=0.05, high=0.95)
    scene = SceneSpec(width=w, height=h,
                      planes=(ScenePlane(depth=3000.0, texture=tex, scale=16.0),),
                      blur_radius=8.0)
    image = render_synthetic(scene, [(m1, hf1), (m2, hf2)], config)
    found = detect_drops(image, DetectParams(min_diameter=150.0))
    assert len(found) == 2
    assert not (found[0].membership & found[1].membership).any()
    ious = sorted([iou(found[0].membership, m1.membership),
                   iou(found[1].membership, m1.membership)], reverse=True)
    assert ious[0] >= 0.85
