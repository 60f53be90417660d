"""Node-model unit tests: static map, power expressions, linearizing
transform and first-order dynamics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcaprl.model import ModelParams

NODE = ModelParams.default()


def direct_static(m: ModelParams, pcap: float) -> float:
    # independent evaluation of the published static map
    return m.k_l * (1.0 - math.exp(-m.alpha * (m.a * pcap + m.b - m.beta)))


class TestModelParams:
    def test_default_values(self):
        assert (NODE.a, NODE.b, NODE.alpha, NODE.beta) == (0.95, 0.15, 0.041, 24.3)
        assert NODE.k_l == 47.9
        assert NODE.tau == pytest.approx(1.0 / 3.0)

    @pytest.mark.parametrize("field,value", [
        ("a", -1.0), ("alpha", 0.0), ("k_l", -5.0), ("tau", 0.0),
    ])
    def test_rejects_nonpositive(self, field, value):
        kwargs = NODE.to_dict()
        kwargs[field] = value
        with pytest.raises(ValueError):
            ModelParams(**kwargs)

    def test_rejects_beta_below_b(self):
        with pytest.raises(ValueError):
            ModelParams(a=1.0, b=5.0, alpha=0.05, beta=4.0, k_l=10.0, tau=0.5)

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "model.json"
        NODE.save_json(path)
        assert ModelParams.load_json(path) == NODE

    def test_from_dict_missing_field(self):
        with pytest.raises(ValueError, match="missing"):
            ModelParams.from_dict({"a": 1.0, "b": 0.0})


class TestStaticProgress:
    def test_saturates_at_gain(self):
        # far above the knee the exponential vanishes and progress -> k_l
        assert NODE.static_progress(1e6) == pytest.approx(47.9, rel=1e-12)

    def test_zero_at_knee(self):
        assert NODE.static_progress(NODE.knee_pcap) == pytest.approx(0.0, abs=1e-9)
        assert NODE.knee_pcap == pytest.approx(25.42, abs=0.01)

    def test_at_100_watts(self):
        assert NODE.static_progress(100.0) == pytest.approx(45.28, abs=0.005)
        assert NODE.static_progress(100.0) == direct_static(NODE, 100.0)

    def test_clamped_below_knee(self):
        assert NODE.static_progress(NODE.knee_pcap - 5.0) == 0.0

    def test_strictly_increasing_and_bounded(self):
        grid = np.linspace(NODE.pcap_min, NODE.pcap_max, 200)
        values = [NODE.static_progress(p) for p in grid]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert all(0.0 <= v < NODE.k_l for v in values)


class TestMeasuredPowerReward:
    def test_one_at_knee(self):
        assert NODE.measured_power_reward(NODE.knee_pcap) == pytest.approx(1.0, abs=1e-12)

    def test_at_100_watts(self):
        expected = math.exp(-0.041 * (0.95 * 100.0 + 0.15 - 24.3))
        assert NODE.measured_power_reward(100.0) == expected
        assert expected == pytest.approx(0.0548, abs=5e-5)

    def test_monotone_decreasing(self):
        grid = np.linspace(NODE.pcap_min, NODE.pcap_max, 100)
        values = [NODE.measured_power_reward(p) for p in grid]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_complement_of_normalized_progress(self):
        # algebraic identity with the static map wherever it is unclamped
        for pcap in np.linspace(NODE.pcap_min, NODE.pcap_max, 50):
            assert NODE.measured_power_reward(pcap) == pytest.approx(
                1.0 - NODE.static_progress(pcap) / NODE.k_l, abs=1e-12)


class TestPhysicalPower:
    def test_identity_calibration(self):
        m = ModelParams(a=1.0, b=0.0, alpha=0.05, beta=10.0, k_l=30.0, tau=0.5)
        assert m.physical_power(50.0) == 50.0

    def test_default_node(self):
        assert NODE.physical_power(100.0) == pytest.approx(95.15, abs=1e-12)
        assert NODE.physical_power(40.0) == pytest.approx(38.15, abs=1e-12)


class TestLinearizeDelinearize:
    def test_zero_at_knee(self):
        assert NODE.linearize_pcap(NODE.knee_pcap) == pytest.approx(0.0, abs=1e-12)

    def test_at_100_watts(self):
        assert NODE.linearize_pcap(100.0) == pytest.approx(0.9452, abs=1e-4)

    def test_round_trip_identity(self):
        for pcap in np.linspace(NODE.pcap_min, NODE.pcap_max, 200):
            back = NODE.delinearize_pcap(NODE.linearize_pcap(pcap))
            assert back == pytest.approx(pcap, abs=1e-9)

    def test_delinearize_zero_is_knee(self):
        # range includes the knee here, so no clamping applies
        m = ModelParams(a=1.0, b=0.0, alpha=0.05, beta=10.0, k_l=30.0, tau=0.5,
                        pcap_min=5.0, pcap_max=100.0)
        assert m.delinearize_pcap(0.0) == pytest.approx(10.0, abs=1e-12)

    def test_delinearize_clamps_to_range(self):
        # the default range excludes the knee, so u_l = 0 clamps to pcap_min
        assert NODE.delinearize_pcap(0.0) == NODE.pcap_min

    def test_delinearize_inverse_of_example(self):
        u = 0.9452
        expected = (NODE.beta - NODE.b - math.log(1.0 - u) / NODE.alpha) / NODE.a
        assert NODE.delinearize_pcap(u) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(100.0, abs=0.05)

    def test_delinearize_rejects_saturation(self):
        with pytest.raises(ValueError):
            NODE.delinearize_pcap(1.0)
        with pytest.raises(ValueError):
            NODE.delinearize_pcap(1.5)


class TestLinearStep:
    def test_coefficients_dt1(self):
        # dt=1, tau=1/3 reduce algebraically to (0.75*k_l, 0.25)
        assert NODE.linear_step(0.0, 1.0, 1.0) == pytest.approx(0.75 * NODE.k_l, rel=1e-12)
        assert NODE.linear_step(1.0, 0.0, 1.0) == pytest.approx(0.25, rel=1e-12)

    @given(dt=st.floats(0.01, 10.0), tau=st.floats(0.01, 10.0))
    @settings(max_examples=50)
    def test_convex_combination(self, dt, tau):
        m = ModelParams(a=1.0, b=0.0, alpha=0.05, beta=10.0, k_l=30.0, tau=tau)
        c_input = m.linear_step(0.0, 1.0, dt) / m.k_l
        c_state = m.linear_step(1.0, 0.0, dt)
        assert c_input + c_state == pytest.approx(1.0, abs=1e-12)

    def test_fixed_point(self):
        u = NODE.linearize_pcap(90.0)
        prog = 0.0
        for _ in range(80):
            prog = NODE.linear_step(prog, u, 1.0)
        assert prog == pytest.approx(NODE.k_l * u, abs=1e-9)
        # the steady state is invariant under further steps
        assert NODE.linear_step(NODE.k_l * u, u, 1.0) == pytest.approx(NODE.k_l * u, rel=1e-12)

    def test_converges_to_statics(self):
        rng = np.random.default_rng(7)
        for pcap in rng.uniform(NODE.pcap_min, NODE.pcap_max, 100):
            prog = 0.0
            u = NODE.linearize_pcap(pcap)
            for _ in range(60):
                prog = NODE.linear_step(prog, u, 1.0)
            assert abs(prog - NODE.static_progress(pcap)) < 1e-6

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            NODE.linear_step(0.0, 0.5, 0.0)
