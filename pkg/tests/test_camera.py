import math

import numpy as np
import pytest
import torch
from scipy.linalg import expm

from splatvid.camera import (
    CameraDivergence,
    CameraModel,
    Intrinsics,
    OdeNet,
    integrate_poses,
    ode_derivative,
    pose_to_view,
    resample_intrinsics,
)

from oracles import dense_mlp


def random_net(seed=0, hidden=16):
    torch.manual_seed(seed)
    net = OdeNet(hidden, dtype=torch.float64)
    with torch.no_grad():
        net.l3.weight.normal_(0, 0.3)
        net.l3.bias.normal_(0, 0.1)
        net.gain.uniform_(0.5, 1.5)
    return net


class TestOdeNet:
    def test_zero_init_is_static(self):
        net = OdeNet(64, dtype=torch.float64)
        z0 = torch.tensor([0.9, 0.1, 0.0, 0.2, 0.3, -0.2, 0.1], dtype=torch.float64)
        assert torch.all(ode_derivative(net, z0, 0.3) == 0)
        poses = integrate_poses(net, z0, [0.0, 0.4, 1.0])
        expected = torch.cat([z0[:4] / z0[:4].norm(), z0[4:]])
        for z in poses[1:]:
            torch.testing.assert_close(z, expected, rtol=0, atol=1e-15)

    def test_deterministic(self):
        net = random_net()
        z = torch.linspace(-1, 1, 7, dtype=torch.float64)
        a = ode_derivative(net, z, 0.25)
        b = ode_derivative(net, z, 0.25)
        assert torch.equal(a, b)

    def test_matches_dense_reference(self):
        net = random_net(3)
        rng = np.random.default_rng(0)
        z = rng.normal(size=7)
        t = 0.61
        layers = [
            (net.l1.weight.tolist(), net.l1.bias.tolist(), math.tanh),
            (net.l2.weight.tolist(), net.l2.bias.tolist(), math.tanh),
            (net.l3.weight.tolist(), net.l3.bias.tolist(), math.tanh),
        ]
        ref = np.array(dense_mlp(list(z) + [t], layers)) * net.gain.detach().numpy()
        out = ode_derivative(net, torch.tensor(z), t).detach().numpy()
        np.testing.assert_allclose(out, ref, atol=1e-6)

    def test_non_finite_is_error(self):
        net = random_net()
        with torch.no_grad():
            net.gain[0] = float("nan")
        with pytest.raises(CameraDivergence):
            ode_derivative(net, torch.zeros(7, dtype=torch.float64), 0.0)


class TestIntegrate:
    def test_constant_field(self):
        c = torch.tensor([0.0, 0, 0, 0, 0.3, -0.2, 0.5], dtype=torch.float64)
        z0 = torch.tensor([1.0, 0, 0, 0, 1, 2, 3], dtype=torch.float64)
        times = [0.0, 0.13, 0.5, 0.77, 1.0]
        out = integrate_poses(lambda z, t: c, z0, times)
        for t, z in zip(times, out):
            torch.testing.assert_close(z, z0 + c * t, rtol=0, atol=1e-10)

    def test_linear_against_expm(self):
        rng = np.random.default_rng(1)
        A = rng.normal(scale=0.5, size=(7, 7))
        z0 = rng.normal(size=7)
        At = torch.tensor(A)
        out = integrate_poses(lambda z, t: At @ z, torch.tensor(z0), [1.0], renormalize=False)
        np.testing.assert_allclose(out[0].numpy(), expm(A) @ z0, atol=1e-6)

    def test_fourth_order_convergence(self):
        rng = np.random.default_rng(2)
        A = rng.normal(scale=1.0, size=(7, 7))
        z0 = rng.normal(size=7)
        At = torch.tensor(A)
        exact = expm(A) @ z0
        errs = []
        for steps in (8, 16):
            z = integrate_poses(lambda z, t: At @ z, torch.tensor(z0), [1.0], steps, renormalize=False)[0]
            errs.append(np.abs(z.numpy() - exact).max())
        assert errs[0] / errs[1] >= 12

    def test_time_consistency(self):
        net = random_net(4)
        z0 = torch.tensor([1.0, 0, 0, 0, 0, 0, 0], dtype=torch.float64)
        several = integrate_poses(net, z0, [0.0, 0.5, 1.0])
        alone = integrate_poses(net, z0, [0.5])
        assert torch.equal(several[1], alone[0])
        off_grid = integrate_poses(net, z0, [0.3, 0.301, 1.0])
        assert torch.equal(off_grid[2], several[2])

    def test_quaternion_stays_unit(self):
        net = random_net(5)
        z0 = torch.tensor([1.0, 0, 0, 0, 0, 0, 0], dtype=torch.float64)
        for z in integrate_poses(net, z0, np.linspace(0, 1, 9)):
            assert abs(z[:4].norm().item() - 1) < 1e-12

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            integrate_poses(lambda z, t: z, torch.zeros(7), [0.5, 0.2])

    def test_divergence_reports_step(self):
        def f(z, t):
            return z * 1e300

        with pytest.raises(CameraDivergence, match="step"):
            integrate_poses(f, torch.ones(7, dtype=torch.float64), [1.0], renormalize=False)

    def test_gradients_reach_z0_and_weights(self):
        net = random_net(6)
        z0 = torch.tensor([1.0, 0.1, 0, 0, 0.2, 0, 0], dtype=torch.float64, requires_grad=True)
        z = integrate_poses(net, z0, [0.8])[0]
        z.sum().backward()
        assert z0.grad.abs().sum() > 0 and net.l1.weight.grad.abs().sum() > 0


class TestPoseToView:
    def test_identity(self):
        R, T = pose_to_view(torch.tensor([1.0, 0, 0, 0, 0, 0, 0], dtype=torch.float64))
        assert torch.equal(R, torch.eye(3, dtype=torch.float64)) and torch.all(T == 0)

    def test_translation(self):
        R, T = pose_to_view(torch.tensor([1.0, 0, 0, 0, 1, 2, 3], dtype=torch.float64))
        assert torch.equal(R, torch.eye(3, dtype=torch.float64))
        assert T.tolist() == [1, 2, 3]

    def test_quarter_turn(self):
        c = math.cos(math.pi / 4)
        R, _ = pose_to_view(torch.tensor([c, 0, 0, c, 0, 0, 0], dtype=torch.float64))
        np.testing.assert_allclose(R.numpy() @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_degenerate(self):
        R, _ = pose_to_view(torch.zeros(7, dtype=torch.float64))
        assert torch.equal(R, torch.eye(3, dtype=torch.float64))


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(ValueError):
            Intrinsics(-1, 1, 5, 5, 10, 10)
        with pytest.raises(ValueError):
            Intrinsics(1, 1, 15, 5, 10, 10)

    def test_resample_identity(self):
        k = Intrinsics(100, 90, 50, 40, 100, 80)
        assert resample_intrinsics(k, 1, 1) == k

    def test_resample_linear(self):
        k = Intrinsics(100, 100, 50, 50, 100, 100)
        r = resample_intrinsics(k, 2, 1)
        assert (r.fx, r.cx, r.width) == (200, 100, 200)

    def test_resample_figure_config(self):
        k = Intrinsics.default(96, 96)
        r = resample_intrinsics(k, 1 / 1.5, 1.5)
        assert (r.width, r.height) == (64, 144)

    def test_resample_rejects(self):
        k = Intrinsics.default(4, 4)
        with pytest.raises(ValueError):
            resample_intrinsics(k, 0.01, 1)
        with pytest.raises(ValueError):
            resample_intrinsics(k, -1, 1)

    def test_levels(self):
        k = Intrinsics.default(96, 64).level(1)
        assert (k.width, k.height, k.fx) == (48, 32, 48)
        # a pixel center of level 1 sits on the even pixel center of level 0
        assert k.cx == pytest.approx((48 + 0.5) / 2)
        cam = CameraModel(96, 64, dtype=torch.float64)
        for level in (1, 2):
            got, want = cam.intrinsics(level), Intrinsics.default(96, 64).level(level)
            assert (got.width, got.height) == (want.width, want.height)
            np.testing.assert_allclose([got.fx, got.fy, got.cx, got.cy], [want.fx, want.fy, want.cx, want.cy],
                                       rtol=1e-12)


class TestCameraModel:
    def test_modes(self):
        for mode, n in (("none", 0), ("static", 3)):
            cam = CameraModel(32, 32, mode=mode)
            assert len(cam.trainable_parameters()) == n
        assert len(CameraModel(32, 32).trainable_parameters()) > 3
        with pytest.raises(ValueError):
            CameraModel(32, 32, mode="bogus")

    def test_initial_camera_is_identity(self):
        cam = CameraModel(32, 32, dtype=torch.float64)
        R, T = cam.view(0.7)
        assert torch.equal(R, torch.eye(3, dtype=torch.float64)) and torch.all(T == 0)
        k = cam.intrinsics()
        assert k.fx == pytest.approx(32, rel=1e-12) and k.cx == 16
