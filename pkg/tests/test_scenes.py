import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gvfnav.grid import Box, Scene
from gvfnav.scenes import (
    SceneGenerationError,
    SceneSpec,
    band_density,
    density,
    generate_scene,
    save_scene,
)


def _planar_gap(a: Box, b: Box) -> float:
    gap = np.maximum(np.maximum(np.subtract(a.min, b.max), np.subtract(b.min, a.max)), 0.0)[:2]
    return float(np.hypot(*gap))


def test_forced_pillar_only():
    # aligned on cell boundaries: 10 x 10 x 30 cells of a 300 x 100 x 30 grid
    pillar = Box((4.0, 4.0, 0.0), (5.0, 5.0, 3.0))
    scene = generate_scene(SceneSpec(target_density=0.0, forced=[pillar]))
    assert scene.obstacles == [pillar]
    assert density(scene) == 3000 / (300 * 100 * 30)
    assert band_density(scene) == density(scene)


def test_seed_seven_density():
    scene = generate_scene(SceneSpec(target_density=0.30, seed=7))
    assert 0.27 <= density(scene) <= 0.33


@pytest.mark.parametrize("style", ["pillars-2d", "irregular-3d"])
@pytest.mark.parametrize("target", [0.1, 0.3, 0.5])
def test_density_within_tolerance(style, target):
    assert abs(density(generate_scene(SceneSpec(style=style, target_density=target, seed=11))) - target) <= 0.03


def test_same_spec_same_scene():
    a = generate_scene(SceneSpec(seed=5))
    b = generate_scene(SceneSpec(seed=5))
    assert a.to_json() == b.to_json()
    assert a.to_json() != generate_scene(SceneSpec(seed=6)).to_json()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["pillars-2d", "irregular-3d"]))
def test_end_corridors_free(seed, style):
    spec = SceneSpec(style=style, seed=seed)
    for obs in generate_scene(spec).obstacles:
        for p in (spec.start, spec.goal):
            gap = np.maximum(np.maximum(np.subtract(obs.min, p), np.subtract(p, obs.max)), 0.0)
            assert np.linalg.norm(gap) > spec.corridor_radius


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_pillars_keep_min_gap(seed):
    spec = SceneSpec(seed=seed)
    boxes = generate_scene(spec).obstacles
    assert all(b.min[2] == 0.0 and b.max[2] == spec.extent[2] for b in boxes)
    for i, a in enumerate(boxes):
        for b in boxes[i + 1 :]:
            assert _planar_gap(a, b) >= spec.min_gap - 1e-9


def test_bad_specs():
    with pytest.raises(ValueError):
        SceneSpec(target_density=0.7)
    with pytest.raises(ValueError):
        SceneSpec(style="maze")


def test_unreachable_density_errors():
    tiny = SceneSpec(extent=(3.0, 3.0, 3.0), target_density=0.5, seed=1)
    with pytest.raises(SceneGenerationError):
        generate_scene(tiny)


def test_save_scene_round_trip(tmp_path):
    spec = SceneSpec(seed=2)
    scene = generate_scene(spec)
    save_scene(scene, tmp_path / "s.json", spec)
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["density"] == density(scene) and data["start"] == [1.0, 5.0, 1.5]
    assert Scene.load(tmp_path / "s.json").to_json() == scene.to_json()
