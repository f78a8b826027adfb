import math

import numpy as np
import pytest

from splattrack import io
from splattrack.errors import ContractError, NumericalError
from splattrack.fit import FitConfig, fit_video, init_trajectory, psnr
from splattrack.geom import Camera, project_points
from splattrack.splat import render_loss_and_gradients
from splattrack.synth import generate_scene, standard_suite


@pytest.fixture(scope="module")
def small_scene():
    spec = standard_suite(0)[0].truncated(4)
    out = generate_scene(spec)
    return out.video[:, ::2, ::2].copy(), Camera.default(32, 32)


class TestPsnr:
    def test_identical_is_inf(self):
        a = np.random.default_rng(0).uniform(size=(4, 4, 3))
        assert psnr(a, a) == math.inf

    def test_zero_vs_one(self):
        assert psnr(np.zeros((3, 3)), np.ones((3, 3))) == 0.0

    def test_direct_formula(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(2, 8, 8, 3))
        mse = sum(float(x) ** 2 for x in (a - b).ravel()) / a.size
        assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))


class TestInit:
    def test_deterministic_bytes(self, small_scene):
        video, cam = small_scene
        a = init_trajectory(video, cam, FitConfig(n=32, seed=5))
        b = init_trajectory(video, cam, FitConfig(n=32, seed=5))
        assert io.dumps(io.trajectory_to_dict(a, cam)) == io.dumps(io.trajectory_to_dict(b, cam))

    def test_constant_color(self):
        cam = Camera.default(16, 16)
        video = np.broadcast_to([0.2, 0.7, 0.4], (3, 16, 16, 3))
        traj = init_trajectory(video, cam, FitConfig(n=20))
        np.testing.assert_array_equal(traj.r, np.broadcast_to([0.2, 0.7, 0.4], (20, 3)))
        np.testing.assert_array_equal(traj.o, 0.5)
        np.testing.assert_array_equal(traj.dmu, 0)
        np.testing.assert_array_equal(traj.phi, np.tile([1, 0, 0, 0], (20, 1)))

    def test_means_project_inside(self, small_scene):
        video, cam = small_scene
        for seed in range(5):
            traj = init_trajectory(video, cam, FitConfig(n=200, seed=seed))
            pix, z = project_points(cam, traj.mu)
            assert np.all((pix >= 0) & (pix < [cam.width, cam.height]))
            np.testing.assert_allclose(z, 1.0)

    def test_footprint(self):
        cam = Camera.default(64, 64)
        traj = init_trajectory(np.zeros((1, 64, 64, 3)), cam, FitConfig(n=64, init_depth=2.0))
        np.testing.assert_allclose(traj.s * cam.fx / 2.0, 64 / 8)

    def test_empty_video(self):
        with pytest.raises(ContractError):
            init_trajectory(np.zeros((0, 8, 8, 3)), Camera.default(8, 8), FitConfig())


class TestFit:
    def test_zero_iters_returns_init(self, small_scene):
        video, cam = small_scene
        cfg = FitConfig(n=16, iters=0, seed=3)
        traj, report = fit_video(video, cam, cfg)
        assert traj == init_trajectory(video, cam, cfg)
        assert report.loss_curve == []

    def test_constant_color_video(self):
        cam = Camera.default(16, 16)
        video = np.broadcast_to([0.3, 0.55, 0.8], (8, 16, 16, 3)).copy()
        _, report = fit_video(video, cam, FitConfig(n=16, iters=300))
        assert report.mean_psnr >= 40.0
        assert min(report.psnr_per_frame) >= 40.0

    def test_deterministic(self, small_scene):
        video, cam = small_scene
        cfg = FitConfig(n=16, iters=15, seed=2)
        a, ra = fit_video(video, cam, cfg)
        b, rb = fit_video(video, cam, cfg)
        assert a == b
        assert ra.loss_curve == rb.loss_curve

    def test_freeze_switches(self, small_scene):
        video, cam = small_scene
        both, _ = fit_video(video, cam, FitConfig(n=16, iters=10, freeze_dmu=True,
                                                  freeze_dr=True))
        assert np.all(both.dmu == 0) and np.all(both.dr == 0)
        only_mu, _ = fit_video(video, cam, FitConfig(n=16, iters=10, freeze_dmu=True))
        assert np.all(only_mu.dmu == 0) and np.any(only_mu.dr != 0)
        only_r, _ = fit_video(video, cam, FitConfig(n=16, iters=10, freeze_dr=True))
        assert np.all(only_r.dr == 0) and np.any(only_r.dmu != 0)

    def test_small_step_descends(self, small_scene):
        # The initialization puts every Gaussian at the same depth, where any
        # z step reorders compositing; start from a partly fitted state instead.
        video, cam = small_scene
        warm, _ = fit_video(video, cam, FitConfig(n=32, iters=40))
        gaps = np.diff(np.sort(warm.mu[:, 2]))
        assert gaps.min() > 1e-5
        lr = dict(lr_means=1e-6, lr_dmu=1e-6, lr_colors=1e-6, lr_dr=1e-6, lr_scales=1e-6,
                  lr_opacities=1e-6, lr_quats=1e-6)
        one, _ = fit_video(video, cam, FitConfig(n=32, iters=1, **lr), init=warm)
        before, _ = render_loss_and_gradients(warm, cam, video)
        after, _ = render_loss_and_gradients(one, cam, video)
        assert after <= before

    def test_quaternions_stay_unit(self, small_scene):
        video, cam = small_scene
        traj, _ = fit_video(video, cam, FitConfig(n=16, iters=20, lr_quats=0.05))
        np.testing.assert_allclose(np.linalg.norm(traj.phi, axis=1), 1, atol=1e-6)

    def test_report_consistent(self, small_scene):
        video, cam = small_scene
        traj, report = fit_video(video, cam, FitConfig(n=16, iters=5))
        assert len(report.loss_curve) == 5
        assert len(report.psnr_per_frame) == video.shape[0]
        assert report.final_loss == pytest.approx(render_loss_and_gradients(traj, cam, video)[0],
                                                  rel=1e-12)
        assert report.wall_time >= 0

    def test_nan_aborts_naming_group(self, small_scene):
        video, cam = small_scene
        bad = video.copy()
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises((NumericalError, ContractError)):
            fit_video(bad, cam, FitConfig(n=8, iters=2))

    def test_nan_gradient_message(self, small_scene, monkeypatch):
        from splattrack import fit as fit_mod
        real = fit_mod.render_loss_and_gradients

        def poisoned(*args, **kwargs):
            loss, grad = real(*args, **kwargs)
            grad.log_s[0, 0] = np.nan
            return loss, grad

        monkeypatch.setattr(fit_mod, "render_loss_and_gradients", poisoned)
        video, cam = small_scene
        with pytest.raises(NumericalError, match="log_s"):
            fit_video(video, cam, FitConfig(n=8, iters=2))

    @pytest.mark.parametrize("kwargs", [dict(n=0), dict(iters=-1), dict(lr_means=-1.0)])
    def test_config_validation(self, kwargs):
        with pytest.raises(ContractError):
            FitConfig(**kwargs)
