import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quant_actuary.errors import AllShotsExcluded, CalibrationError, UsageError
from quant_actuary.noise import (
    CalibrationMatrix,
    NoiseModel,
    calibrate,
    clip_quasi,
    distribution_mean,
    forward_readout,
    mitigate,
    noisy_sample,
    postselect_weight,
)
from quant_actuary.optimizers import NelderMeadConfig
from quant_actuary.reinsurance import (
    AnsatzSpec,
    ShotMode,
    build_allocation_ansatz,
    estimate_variance,
    make_instance,
    optimize_allocation,
)
from quant_actuary.sim import Circuit, bitstring, run, sample

from .strategies import build_random_circuit


def within_binomial(count, shots, p, sigmas=3):
    return abs(count / shots - p) <= sigmas * math.sqrt(p * (1 - p) / shots)


class TestNoiseModel:
    def test_defaults_from_fidelities(self):
        m = NoiseModel()
        assert m.p1 == pytest.approx(0.003)
        assert m.p2 == pytest.approx(0.037)
        assert (m.r01, m.r10) == (0.02, 0.02)

    def test_range_checked(self):
        with pytest.raises(UsageError):
            NoiseModel(p1=1.5)
        with pytest.raises(UsageError):
            NoiseModel(r01=-0.1)


class TestNoisySample:
    def test_noiseless_matches_sample(self):
        circ = build_random_circuit(4, 40, np.random.default_rng(1))
        assert noisy_sample(circ, NoiseModel(0, 0, 0, 0), 4000, 9) == sample(run(circ), 4000, 9)

    def test_readout_zero_to_one(self):
        counts = noisy_sample(Circuit(1), NoiseModel(0, 0, 0.02, 0), 10**5, 2)
        assert abs(counts["1"] / 10**5 - 0.02) <= 0.002

    def test_readout_one_to_zero(self):
        shots = 20000
        counts = noisy_sample(Circuit(1).x(0), NoiseModel(0, 0, 0, 0.05), shots, 3)
        assert within_binomial(counts.get("0", 0), shots, 0.05)

    def test_repeatable(self):
        circ = Circuit(3).h(0).cx(0, 1).cx(1, 2)
        assert noisy_sample(circ, NoiseModel(), 3000, 4) == noisy_sample(circ, NoiseModel(), 3000, 4)

    def test_gate_noise_single_x(self):
        # one X then a Pauli with prob p1: X or Y flips the bit back (2/3 of p1)
        p1 = 0.3
        shots = 20000
        counts = noisy_sample(Circuit(1).x(0), NoiseModel(p1, 0, 0, 0), shots, 5)
        assert within_binomial(counts.get("0", 0), shots, 2 * p1 / 3, sigmas=4)


class TestCalibration:
    def test_noiseless_is_identity(self):
        cal = calibrate(NoiseModel(0, 0, 0, 0), 3, 2000, 1)
        np.testing.assert_allclose(cal.matrices, np.tile(np.eye(2), (3, 1, 1)), atol=0.01)

    def test_off_diagonals(self):
        cal = calibrate(NoiseModel(0, 0, 0.02, 0.02), 2, 10**5, 6)
        for m in cal.matrices:
            assert abs(m[1, 0] - 0.02) <= 0.003
            assert abs(m[0, 1] - 0.02) <= 0.003

    def test_singular(self):
        with pytest.raises(CalibrationError):
            calibrate(NoiseModel(0, 0, 0.6, 0), 1, 2000, 0)

    def test_columns_checked(self):
        with pytest.raises(CalibrationError):
            CalibrationMatrix(np.array([[[0.9, 0.1], [0.2, 0.9]]]))


class TestMitigate:
    def test_identity(self):
        counts = {"00": 30, "01": 20, "11": 50}
        out = mitigate(counts, CalibrationMatrix.identity(2))
        assert out == pytest.approx({"00": 0.3, "01": 0.2, "11": 0.5})

    def test_hand_inverse(self):
        M = np.array([[0.98, 0.05], [0.02, 0.95]])
        out = mitigate({"0": 52, "1": 48}, CalibrationMatrix(M[None]))
        # explicit 2x2 inverse: adj / det
        det = 0.98 * 0.95 - 0.05 * 0.02
        q0 = (0.95 * 0.52 - 0.05 * 0.48) / det
        q1 = (-0.02 * 0.52 + 0.98 * 0.48) / det
        assert out["0"] == pytest.approx(q0, abs=1e-12)
        assert out["1"] == pytest.approx(q1, abs=1e-12)

    def test_sampled_round_trip(self):
        model = NoiseModel(0, 0, 0.05, 0.08)
        circ = Circuit(2).ry(0, 1.2).cx(0, 1).ry(1, 0.5)
        exact = run(circ).probabilities()
        shots = 10**5
        out = mitigate(noisy_sample(circ, model, shots, 12), CalibrationMatrix.from_model(model, 2))
        for i, p in enumerate(exact):
            assert abs(out.get(bitstring(i, 2), 0.0) - p) <= 4 * math.sqrt(max(p, 1e-3) / shots) * 1.5

    def test_width_mismatch(self):
        with pytest.raises(UsageError):
            mitigate({"010": 1}, CalibrationMatrix.identity(2))

    def test_negative_entries_kept(self):
        out = mitigate({"0": 100}, CalibrationMatrix(np.array([[[0.9, 0.1], [0.1, 0.9]]])))
        assert out["1"] < 0
        assert sum(out.values()) == pytest.approx(1.0, abs=1e-12)
        assert clip_quasi(out) == {"0": 1.0}

    @given(
        st.integers(1, 5).flatmap(
            lambda n: st.tuples(
                st.lists(st.floats(0.0, 0.45), min_size=n, max_size=n),
                st.lists(st.floats(0.0, 0.45), min_size=n, max_size=n),
                st.integers(0, 2**32 - 1),
            )
        )
    )
    def test_exact_round_trip(self, case):
        r01, r10, seed = case
        n = len(r01)
        mats = np.array([[[1 - a, b], [a, 1 - b]] for a, b in zip(r01, r10)])
        cal = CalibrationMatrix(mats)
        p = np.random.default_rng(seed).dirichlet(np.ones(1 << n))
        noisy = forward_readout(p, cal)
        back = mitigate({bitstring(i, n): float(w) for i, w in enumerate(noisy)}, cal)
        recovered = np.array([back.get(bitstring(i, n), 0.0) for i in range(1 << n)])
        np.testing.assert_allclose(recovered, p, atol=1e-9)
        assert recovered.sum() == pytest.approx(1.0, abs=1e-9)


class TestPostselect:
    def test_filter(self):
        kept, frac = postselect_weight({"011": 5, "001": 3}, 2)
        assert kept == {"011": 5}
        assert frac == pytest.approx(5 / 8)

    def test_unchanged(self):
        counts = {"110": 2, "011": 7}
        assert postselect_weight(counts, 2) == (counts, 1.0)

    def test_all_excluded(self):
        with pytest.raises(AllShotsExcluded):
            postselect_weight({"000": 4}, 1)

    @given(st.dictionaries(st.text("01", min_size=4, max_size=4), st.integers(1, 50), min_size=1), st.integers(0, 4))
    def test_idempotent(self, counts, k):
        try:
            once, _ = postselect_weight(counts, k)
        except AllShotsExcluded:
            return
        twice, frac = postselect_weight(once, k)
        assert twice == once
        assert frac == 1.0

    def test_noisy_rbs_ansatz(self):
        inst = make_instance(6, 2024)
        spec = AnsatzSpec(6, 3)
        # near the optimum the noise bias toward the subspace average is large
        params = optimize_allocation(inst, spec, NelderMeadConfig(iterations=600)).final_params
        model = NoiseModel()
        counts = noisy_sample(build_allocation_ansatz(spec, params), model, 10**4, 1)
        _, frac = postselect_weight(counts, 3)
        assert 0 < frac < 1
        exact, _ = estimate_variance(params, inst, spec)
        raw, _ = estimate_variance(params, inst, spec, ShotMode(10**4, 1, model, postselect=False))
        fixed, _ = estimate_variance(
            params, inst, spec, ShotMode(10**4, 1, model, mitigation=True), CalibrationMatrix.from_model(model, 6)
        )
        assert abs(fixed - exact) < abs(raw - exact)


def test_distribution_mean():
    assert distribution_mean({"0": 3, "1": 1}, lambda b: float(b)) == pytest.approx(0.25)
    with pytest.raises(AllShotsExcluded):
        distribution_mean({}, float)
