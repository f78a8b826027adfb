import numpy as np
import pytest

from oracles import bilinear, naive_rasterize
from splattrack import io
from splattrack.errors import SceneSpecError
from splattrack.evaluation import evaluate, strided_queries
from splattrack.geom import integrate_deltas, project_points
from splattrack.splat import render_video
from splattrack.synth import (
    Blob,
    SceneSpec,
    generate_scene,
    standard_suite,
    translation_scene_indices,
)
from splattrack.track import Tracker


def _blob(px, py, z, vel_px, k, size=64, sigma=3.0, opacity=0.9, color=(0.8, 0.3, 0.2)):
    f = float(size)
    return Blob(position=((px - size / 2) * z / f, (py - size / 2) * z / f, z),
                scale=(sigma * z / f,) * 3, color=color, opacity=opacity,
                velocity=((vel_px[0] * z / f, vel_px[1] * z / f, 0.0),) * (k - 1))


def test_static_blob():
    spec = SceneSpec(32, 32, 5, (_blob(10.5, 20.0, 1.0, (0, 0), 5, size=32),))
    out = generate_scene(spec)
    gt = out.gt_tracks[0]
    np.testing.assert_allclose(gt.points, np.tile([10.5, 20.0], (5, 1)), atol=1e-12)
    assert gt.visible.all()
    for t in range(1, 5):
        np.testing.assert_array_equal(out.video[t], out.video[0])


def test_crossing_occlusion_matches_renderer():
    k = 16
    far = _blob(32.0, 30.0, 1.6, (0, 0), k, color=(0.2, 0.2, 0.9))
    near = _blob(32.0 - 1.6 * 7.5, 30.0, 0.8, (1.6, 0), k, sigma=4.0, opacity=0.95)
    out = generate_scene(SceneSpec(64, 64, k, (far, near)))
    gt_far = out.gt_tracks[0]
    expected = []
    for frame in integrate_deltas(out.gt_trajectory):
        _, _, w = naive_rasterize(frame, out.camera, frame.r)
        expected.append(not bilinear(w[1], gt_far.points[0]) > 0.5)
    assert gt_far.visible.tolist() == expected
    hidden = [t for t, v in enumerate(expected) if not v]
    assert hidden and set(hidden) <= set(range(5, 11))
    assert out.gt_tracks[1].visible.all()


def test_out_of_bounds_is_occluded():
    out = generate_scene(SceneSpec(32, 32, 6, (_blob(26.0, 16.0, 1.0, (2.0, 0), 6, size=32),)))
    xs = out.gt_tracks[0].points[:, 0]
    assert out.gt_tracks[0].visible.tolist() == [bool(x < 32) for x in xs]
    assert not out.gt_tracks[0].visible.all()


def test_deterministic_bytes(tmp_path):
    spec = standard_suite(3)[10]
    a, b = generate_scene(spec), generate_scene(spec)
    np.testing.assert_array_equal(a.video, b.video)
    io.write_frames(tmp_path / "a", a.video)
    io.write_frames(tmp_path / "b", b.video)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert io.dumps(io.gt_to_dict(a.gt_tracks, 64, 64)) == \
        io.dumps(io.gt_to_dict(b.gt_tracks, 64, 64))


def test_gt_is_projection_of_means():
    spec = standard_suite(0)[7]
    out = generate_scene(spec)
    means = np.stack([f.mu for f in integrate_deltas(out.gt_trajectory)])
    pix, _ = project_points(out.camera, means)
    for i, gt in enumerate(out.gt_tracks):
        np.testing.assert_array_equal(gt.points, pix[:, i])


def test_video_is_render_of_trajectory():
    out = generate_scene(standard_suite(0)[17])
    np.testing.assert_array_equal(out.video, render_video(out.gt_trajectory, out.camera))


def test_behind_camera_names_frame():
    blob = Blob(position=(0, 0, 0.5), scale=(0.05,) * 3, color=(1, 1, 1), opacity=0.5,
                velocity=((0, 0, -0.2),) * 4)
    with pytest.raises(SceneSpecError, match="frame 3"):
        generate_scene(SceneSpec(16, 16, 5, (blob,)))


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(k=1),
    lambda d: d["blobs"][0].update(opacity=1.0),
    lambda d: d["blobs"][0].update(scale=[0.1, -0.1, 0.1]),
    lambda d: d["blobs"][0].update(velocity=[[0, 0, 0]] * 3),
    lambda d: d.pop("blobs"),
])
def test_invalid_specs(mutate):
    d = standard_suite(0)[0].to_dict()
    mutate(d)
    with pytest.raises(SceneSpecError):
        SceneSpec.from_dict(d)


def test_spec_round_trip_and_broadcast_velocity():
    for spec in standard_suite(1):
        assert SceneSpec.from_dict(io.loads(io.dumps(spec.to_dict()))) == spec
    d = {"width": 16, "height": 16, "k": 4,
         "blobs": [{"position": [0, 0, 1], "scale": [0.1] * 3, "color": [1, 0, 0],
                    "opacity": 0.5, "velocity": [0.01, 0, 0]}]}
    spec = SceneSpec.from_dict(d)
    assert spec.blobs[0].velocity == ((0.01, 0.0, 0.0),) * 3


class TestSuite:
    def test_stable_across_calls(self):
        assert standard_suite(0) == standard_suite(0)
        assert standard_suite(0) != standard_suite(1)

    def test_shape_and_validity(self):
        suite = standard_suite(0)
        assert len(suite) == 20
        for spec in suite:
            spec.validate()
            assert (spec.width, spec.height, spec.k) == (64, 64, 16)

    def test_coverage(self):
        suite = standard_suite(0)
        outs = [generate_scene(s) for s in suite]
        occluded = [i for i, o in enumerate(outs)
                    if any(not g.visible.all() for g in o.gt_tracks)]
        assert len(occluded) >= 4
        for i in translation_scene_indices():
            assert np.all(suite[i].trajectory().dmu[..., 2] == 0)
            assert np.all(suite[i].trajectory().dr == 0)
        assert any(np.any(s.trajectory().dmu[..., 2] != 0) for s in suite[5:9])
        assert all(np.any(s.trajectory().dr != 0) for s in suite[17:])

    def test_translation_self_consistency(self):
        for i in translation_scene_indices():
            out = generate_scene(standard_suite(0)[i])
            tracker = Tracker(out.gt_trajectory, out.camera)
            for gt in out.gt_tracks:
                for q in strided_queries(gt):
                    tr = tracker.track(q)
                    err = np.linalg.norm(tr.points - gt.points, axis=1)[gt.visible]
                    assert err.max() <= 1.0
                    rep = evaluate([tr], [gt])
                    assert rep["OA"] == 1.0
