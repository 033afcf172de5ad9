import math

import mpmath as mp
import numpy as np
import pytest
from scipy.stats import chi2

from twinbeam import (DetectorModel, NumericalInstabilityError, PhotonDistribution,
                      ResponseMatrix, TwinBeamParams, ZeroConditionError,
                      apply_response, build_response, conditional_theory,
                      response_element, sample_physical, twin_beam_joint)

SMALL = DetectorModel(20, 0.5, 1e-3)


def series_oracle(model, c, n, prec=2000):
    """The signed inclusion-exclusion series evaluated directly at high precision."""
    N, eta, D = model.n_pixels, model.efficiency, model.dark_per_pixel
    with mp.workprec(prec):
        total = mp.mpf(0)
        for l in range(c + 1):
            term = (mp.binomial(c, l) * (-1) ** l * (1 - mp.mpf(D)) ** (-l)
                    * (1 + mp.mpf(l) * eta / (N * (1 - mp.mpf(eta)))) ** n)
            total += term
        value = (mp.binomial(N, c) * (1 - mp.mpf(D)) ** N
                 * (1 - mp.mpf(eta)) ** n * (-1) ** c * total)
        return float(value)


def mean_count_oracle(model, n):
    """E[c | n] = N (1 - (1-D)(1 - eta/N)^n), from per-pixel silence probabilities."""
    N, eta, D = model.n_pixels, model.efficiency, model.dark_per_pixel
    return N * (1.0 - (1.0 - D) * (1.0 - eta / N) ** n)


def merged_chi_square_pvalue(observed, expected):
    """Chi-square p-value after pooling bins with expectation below 5."""
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        obs[-1] += acc_o
        exp[-1] += acc_e
    obs, exp = np.array(obs), np.array(exp)
    stat = np.sum((obs - exp) ** 2 / exp)
    dof = max(obs.size - 1, 1)
    return chi2.sf(stat, dof)


class TestResponseElement:
    def test_no_photons_no_counts(self):
        model = DetectorModel(100, 0.3, 2e-4)
        expected = (1 - model.dark_per_pixel) ** model.n_pixels
        assert response_element(model, 0, 0) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("c", [0, 1, 3, 7])
    @pytest.mark.parametrize("n", [0, 2, 9])
    def test_blind_detector_reduces_to_dark_binomial(self, c, n):
        model = DetectorModel(40, 0.0, 0.02)
        N, D = model.n_pixels, model.dark_per_pixel
        expected = (math.comb(N, c) * D ** c * (1 - D) ** (N - c))
        assert response_element(model, c, n, method="auto") == pytest.approx(expected, rel=1e-12)

    def test_alternating_raises_on_catastrophic_cancellation(self):
        big = DetectorModel.with_total_dark(6528, 0.22, 0.04)
        with pytest.raises(NumericalInstabilityError):
            response_element(big, 10, 10, method="alternating")

    def test_alternating_agrees_where_stable(self):
        # the float path promises relative error below 1e-6 when it returns
        checked = 0
        for c in range(8):
            for n in (0, 3, 10, 30):
                try:
                    stable = response_element(SMALL, c, n, method="alternating")
                except NumericalInstabilityError:
                    continue
                exact = response_element(SMALL, c, n, method="exact")
                assert stable == pytest.approx(exact, rel=2e-6, abs=1e-300)
                checked += 1
        assert checked >= 20

    @pytest.mark.parametrize("model", [SMALL, DetectorModel.with_total_dark(6528, 0.22, 0.04)])
    def test_exact_matches_series_oracle(self, model):
        for n in (0, 1, 5, 10):
            for c in (0, 1, 4, 9, 14):
                if c > model.n_pixels:
                    continue
                got = response_element(model, c, n, method="exact")
                ref = series_oracle(model, c, n)
                if ref > 1e-250:
                    assert got == pytest.approx(ref, rel=1e-10)
                else:
                    assert got <= 1e-250

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            response_element(SMALL, -1, 0)
        with pytest.raises(ValueError):
            response_element(SMALL, 21, 0)
        with pytest.raises(ValueError):
            response_element(SMALL, 0, -2)


class TestBuildResponse:
    def test_perfectly_quiet_detector(self):
        model = DetectorModel(30, 0.0, 0.0)
        response = build_response(model, n_max=12)
        assert np.allclose(response.T[0, :], 1.0)
        assert response.c_max == 0

    def test_column_sums_within_tolerance(self, signal_response):
        sums = signal_response.T.sum(axis=0)
        assert sums.min() >= 1 - 1e-9
        assert sums.max() <= 1 + 1e-12

    def test_extent_is_minimal(self):
        response = build_response(SMALL, n_max=15)
        trimmed = response.T[:-1, :]
        assert trimmed.sum(axis=0).min() < 1 - 1e-9

    def test_small_requested_extent_is_auto_extended(self):
        response = build_response(SMALL, n_max=15, c_max=1)
        assert response.c_max > 1
        assert response.T.sum(axis=0).min() >= 1 - 1e-9

    def test_matches_element_evaluation(self, signal_model, signal_response):
        # auto elements are accurate to 1e-6 on the float path, ~1e-13 when escalated
        for n in (0, 1, 10, 60, 150):
            for c in (0, 2, 8, 20, 40):
                got = signal_response.T[c, n]
                ref = response_element(signal_model, c, n, method="auto")
                assert got == pytest.approx(ref, rel=2e-6, abs=1e-280)

    def test_mean_count_identity(self, signal_model, signal_response):
        c = np.arange(signal_response.c_max + 1)
        for n in (0, 3, 25, 120):
            got = float(c @ signal_response.T[:, n])
            assert got == pytest.approx(mean_count_oracle(signal_model, n), rel=1e-9)


class TestApplyResponse:
    def test_near_ideal_detector_is_identity(self):
        model = DetectorModel(1_000_000, 1 - 1e-6, 0.0)
        response = build_response(model, n_max=6)
        probs = np.array([0.1, 0.2, 0.3, 0.2, 0.1, 0.05, 0.05])
        counts = apply_response(response, probs)
        assert np.max(np.abs(counts[:7] - probs)) < 1e-3

    def test_vacuum_gives_dark_binomial(self):
        model = DetectorModel(50, 0.4, 5e-3)
        response = build_response(model, n_max=4)
        counts = apply_response(response, np.array([1.0, 0.0, 0.0, 0.0, 0.0]))
        N, D = model.n_pixels, model.dark_per_pixel
        for c in range(4):
            expected = math.comb(N, c) * D ** c * (1 - D) ** (N - c)
            assert counts[c] == pytest.approx(expected, rel=1e-10)

    def test_dimension_mismatch(self):
        response = build_response(SMALL, n_max=5)
        with pytest.raises(ValueError):
            apply_response(response, np.zeros(40))

    def test_output_mass(self, signal_response, reference_joint):
        counts = apply_response(signal_response, reference_joint.signal_marginal())
        assert counts.sum() >= 1 - 1e-9 - 1e-10


class TestConditionalTheory:
    def test_perfect_pairing_ideal_detector_gives_fock(self):
        params = TwinBeamParams(M_p=2.0, B_p=1.0, M_s=1.0, B_s=1e-12, M_i=1.0, B_i=1e-12)
        joint = twin_beam_joint(params, n_max=40)
        ideal = DetectorModel(2_000_000, 1 - 1e-7, 0.0)
        response = build_response(ideal, n_max=40)
        for c_s in (1, 3):
            cond = conditional_theory(joint, response, c_s)
            assert cond.probs[c_s] > 1 - 1e-3

    def test_conditioning_on_vacuum_joint(self):
        probs = np.zeros((5, 5))
        probs[0, 0] = 1.0
        response = build_response(DetectorModel(50, 0.4, 1e-3), n_max=4)
        cond = conditional_theory(probs, response, 0)
        assert cond.probs[0] == pytest.approx(1.0, abs=1e-12)
        # without dark counts, positive readings from vacuum are impossible
        dark_free = build_response(DetectorModel(50, 0.4, 0.0), n_max=4)
        with pytest.raises(ZeroConditionError):
            conditional_theory(probs, dark_free, dark_free.c_max)

    def test_reference_means_rise_with_condition(self, reference_joint, signal_response):
        means = [conditional_theory(reference_joint, signal_response, c).mean
                 for c in range(10)]
        assert all(b >= a for a, b in zip(means, means[1:]))
        assert 6.0 < means[0] < 8.0
        assert 13.0 < means[9] < 15.5


class TestSamplePhysical:
    def test_blind_and_dark_free_cases(self):
        rng = np.random.default_rng(0)
        assert sample_physical(DetectorModel(10, 0.0, 0.0), 5, rng) == 0
        assert sample_physical(DetectorModel(10, 0.9, 0.0), 0, rng) == 0

    @pytest.mark.parametrize("model,n", [(SMALL, 10), (SMALL, 30),
                                         (DetectorModel.with_total_dark(6528, 0.22, 0.04), 10)])
    def test_histogram_matches_response_column(self, model, n):
        rng = np.random.default_rng(42)
        draws = sample_physical(model, n, rng, size=200_000)
        response = build_response(model, n_max=n)
        observed = np.bincount(draws, minlength=response.c_max + 1)
        expected = response.T[:, n] * draws.size
        assert merged_chi_square_pvalue(observed[:response.c_max + 1], expected) > 1e-3

    def test_scalar_and_vector_forms(self):
        rng = np.random.default_rng(3)
        assert isinstance(sample_physical(SMALL, 4, rng), int)
        assert sample_physical(SMALL, 4, rng, size=7).shape == (7,)


class TestResponseMatrixValidation:
    def test_rejects_bad_column_sums(self):
        with pytest.raises(ValueError):
            ResponseMatrix(np.array([[0.5, 0.4], [0.3, 0.4]]))

    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError):
            ResponseMatrix(np.array([[1.1, 1.0], [-0.1, 0.0]]))

    def test_accepts_identity(self):
        response = ResponseMatrix(np.eye(4))
        assert response.c_max == 3 and response.n_max == 3
