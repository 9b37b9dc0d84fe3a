import numpy as np
import pytest

from actionseg.motion import (
    FlowField,
    flow_divergence,
    flow_time_derivative,
    flow_vorticity,
    horn_schunck,
    load_flow,
    save_flow,
)

from oracles import naive_divergence, naive_vorticity

INNER = (slice(3, -3), slice(3, -3))


def sinusoid_pair(shift=(1, 0), size=64):
    # integer cycle counts keep the pattern exactly periodic over the frame
    x, y = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))
    def render(dx, dy):
        return (
            128.0
            + 50.0 * np.sin(2 * np.pi * 4 * (x - dx) / size)
            + 30.0 * np.sin(2 * np.pi * 5 * (y - dy) / size)
            + 20.0 * np.sin(2 * np.pi * 3 * ((x - dx) + (y - dy)) / size)
        )
    return render(0, 0), render(*shift)


class TestHornSchunck:
    def test_identical_frames_zero_flow(self):
        img = np.random.default_rng(0).uniform(0, 255, (20, 20))
        flow = horn_schunck(img, img, iters=30)
        np.testing.assert_array_equal(flow.u, 0.0)
        np.testing.assert_array_equal(flow.v, 0.0)

    def test_uniform_brightness_change_zero_flow(self):
        flow = horn_schunck(np.full((16, 16), 10.0), np.full((16, 16), 90.0), iters=30)
        np.testing.assert_array_equal(flow.u, 0.0)
        np.testing.assert_array_equal(flow.v, 0.0)

    def test_recovers_unit_horizontal_shift(self):
        img0, img1 = sinusoid_pair((1, 0))
        flow = horn_schunck(img0, img1, alpha=15.0, iters=200)
        epe = np.hypot(flow.u[INNER] - 1.0, flow.v[INNER]).mean()
        assert epe < 0.3

    def test_recovers_vertical_shift(self):
        img0, img1 = sinusoid_pair((0, 1))
        flow = horn_schunck(img0, img1)
        epe = np.hypot(flow.u[INNER], flow.v[INNER] - 1.0).mean()
        assert epe < 0.3

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            horn_schunck(np.zeros((4, 4)), np.zeros((5, 4)))

    def test_parameter_validation(self):
        img = np.zeros((4, 4))
        with pytest.raises(ValueError):
            horn_schunck(img, img, alpha=0.0)
        with pytest.raises(ValueError):
            horn_schunck(img, img, iters=0)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        img0 = rng.uniform(0, 255, (24, 24))
        img1 = rng.uniform(0, 255, (24, 24))
        a = horn_schunck(img0, img1, iters=50)
        b = horn_schunck(img0, img1, iters=50)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.v, b.v)

    @pytest.mark.parametrize("shift", [(0, 0), (7, 13), (23, 5)])
    def test_translation_equivariance_interior(self, shift):
        # shifting both (periodic, wrap-padded) inputs by the same offset
        # leaves the recovered interior field matching the same ground truth
        img0, img1 = sinusoid_pair((1, 1), size=48)
        flow = horn_schunck(
            np.roll(img0, shift, axis=(0, 1)), np.roll(img1, shift, axis=(0, 1))
        )
        inner = (slice(6, -6), slice(6, -6))
        epe = np.hypot(flow.u[inner] - 1.0, flow.v[inner] - 1.0).mean()
        assert epe < 0.1


class TestFlowDerivatives:
    def test_time_derivative_identical_fields(self):
        f = FlowField(np.ones((4, 4)), np.zeros((4, 4)))
        du, dv = flow_time_derivative(f, f)
        np.testing.assert_array_equal(du, 0.0)
        np.testing.assert_array_equal(dv, 0.0)

    def test_time_derivative_constant_difference(self):
        a = FlowField(np.zeros((4, 4)), np.zeros((4, 4)))
        b = FlowField(np.full((4, 4), 2.0), np.zeros((4, 4)))
        du, dv = flow_time_derivative(a, b)
        np.testing.assert_array_equal(du, 2.0)
        np.testing.assert_array_equal(dv, 0.0)

    def test_time_derivative_matches_elementwise_oracle(self):
        rng = np.random.default_rng(5)
        a = FlowField(rng.normal(size=(6, 7)), rng.normal(size=(6, 7)))
        b = FlowField(rng.normal(size=(6, 7)), rng.normal(size=(6, 7)))
        du, dv = flow_time_derivative(a, b)
        for y in range(6):
            for x in range(7):
                assert du[y, x] == b.u[y, x] - a.u[y, x]
                assert dv[y, x] == b.v[y, x] - a.v[y, x]

    def test_time_derivative_shape_mismatch(self):
        a = FlowField(np.zeros((4, 4)), np.zeros((4, 4)))
        b = FlowField(np.zeros((5, 4)), np.zeros((5, 4)))
        with pytest.raises(ValueError):
            flow_time_derivative(a, b)

    def test_divergence_constant_flow(self):
        f = FlowField(np.full((5, 5), 3.0), np.full((5, 5), -2.0))
        np.testing.assert_array_equal(flow_divergence(f), 0.0)

    def test_divergence_linear_field(self):
        x, y = np.meshgrid(np.arange(7, dtype=float), np.arange(6, dtype=float))
        f = FlowField(x, y)
        div = flow_divergence(f)
        np.testing.assert_allclose(div[1:-1, 1:-1], 2.0, atol=1e-12)

    def test_vorticity_constant_flow(self):
        f = FlowField(np.full((5, 5), 3.0), np.full((5, 5), 1.0))
        np.testing.assert_array_equal(flow_vorticity(f), 0.0)

    def test_vorticity_solid_rotation(self):
        x, y = np.meshgrid(np.arange(7, dtype=float), np.arange(6, dtype=float))
        f = FlowField(-y, x)
        vort = flow_vorticity(f)
        np.testing.assert_allclose(vort[1:-1, 1:-1], 2.0, atol=1e-12)

    @pytest.mark.parametrize("op,oracle", [
        (flow_divergence, naive_divergence),
        (flow_vorticity, naive_vorticity),
    ])
    def test_random_field_matches_loop_oracle(self, op, oracle):
        rng = np.random.default_rng(11)
        f = FlowField(rng.normal(size=(9, 12)), rng.normal(size=(9, 12)))
        np.testing.assert_allclose(op(f), oracle(f.u, f.v), atol=1e-12)

    @pytest.mark.parametrize("op", [flow_divergence, flow_vorticity])
    def test_linearity(self, op):
        rng = np.random.default_rng(13)
        f = FlowField(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
        g = FlowField(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
        a, b = 2.5, -1.25
        combo = FlowField(a * f.u + b * g.u, a * f.v + b * g.v)
        np.testing.assert_allclose(op(combo), a * op(f) + b * op(g), atol=1e-10)

    def test_too_small_field(self):
        f = FlowField(np.zeros((2, 5)), np.zeros((2, 5)))
        with pytest.raises(ValueError, match="too small"):
            flow_divergence(f)


class TestFlowDump:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        f = FlowField(rng.normal(size=(5, 8)), rng.normal(size=(5, 8)))
        save_flow(f, tmp_path / "f.flow")
        back = load_flow(tmp_path / "f.flow")
        np.testing.assert_array_equal(back.u, f.u)
        np.testing.assert_array_equal(back.v, f.v)

    def test_sidecar_contents(self, tmp_path):
        import json

        f = FlowField(np.zeros((3, 4)), np.zeros((3, 4)))
        save_flow(f, tmp_path / "f.flow")
        meta = json.loads((tmp_path / "f.flow.json").read_text())
        assert meta == {"width": 4, "height": 3, "order": "u-then-v", "dtype": "<f8"}
