import numpy as np
import pytest

from twinbeam import (IdentifierSpec, MomentOrderError, VacuumError,
                      enumerate_identifiers, evaluate_identifier, fock_moments,
                      majorizes, mandel_rice_moments, minor_criteria,
                      minor_to_majorization, moment_matrix, poisson_moments,
                      thermal_moments)
from twinbeam.criteria import is_irreducible

# the full list with moment orders up to five, in enumeration order
FIFTEEN = [
    "R_{1,1}^{2,0}",
    "R_{2,1}^{3,0}", "R_{1,1,1}^{3,0,0}",
    "R_{3,1}^{4,0}", "R_{2,2}^{4,0}", "R_{2,1,1}^{4,0,0}", "R_{1,1,1,1}^{4,0,0,0}",
    "R_{2,2}^{3,1}",
    "R_{4,1}^{5,0}", "R_{3,2}^{5,0}", "R_{3,1,1}^{5,0,0}", "R_{2,2,1}^{5,0,0}",
    "R_{2,1,1,1}^{5,0,0,0}", "R_{1,1,1,1,1}^{5,0,0,0,0}", "R_{3,2}^{4,1}",
]


class TestMajorizes:
    def test_single_part_dominates_split(self):
        assert majorizes((3,), (2, 1))

    def test_balanced_does_not_dominate_skewed(self):
        assert not majorizes((2, 2), (3, 1))

    def test_reflexive_but_not_strictly(self):
        assert majorizes((2, 1), (2, 1))
        assert not majorizes((2, 1), (2, 1), strict=True)

    def test_unequal_sums_never_compare(self):
        assert not majorizes((3,), (2,))


class TestEnumeration:
    def test_minimal_order(self):
        specs = enumerate_identifiers(2)
        assert [s.name for s in specs] == ["R_{1,1}^{2,0}"]

    def test_order_three(self):
        specs = enumerate_identifiers(3)
        assert [s.name for s in specs] == [
            "R_{1,1}^{2,0}", "R_{2,1}^{3,0}", "R_{1,1,1}^{3,0,0}"]

    def test_order_five_is_the_fifteen(self):
        names = [s.name for s in enumerate_identifiers(5)]
        assert len(names) == 15
        assert set(names) == set(FIFTEEN)

    def test_counts_per_order(self):
        specs = enumerate_identifiers(5)
        counts = {}
        for s in specs:
            counts[s.order] = counts.get(s.order, 0) + 1
        assert counts == {2: 1, 3: 2, 4: 5, 5: 7}

    def test_every_spec_satisfies_the_invariants(self):
        for s in enumerate_identifiers(5):
            assert sum(s.lam) == sum(s.mu) == s.order
            assert majorizes(s.lam, s.mu, strict=True)
            assert not set(s.lam) & set(s.mu)
            assert is_irreducible(s.lam, s.mu)

    def test_reducible_pairs_are_excluded(self):
        # (2,2) vs (1,1,1,1) factors into two copies of (2) vs (1,1)
        assert not is_irreducible((2, 2), (1, 1, 1, 1))
        assert not is_irreducible((3, 2), (1, 1, 1, 1, 1))
        names = [s.name for s in enumerate_identifiers(5)]
        assert "R_{1,1,1,1}^{2,2,0,0}" not in names

    def test_deterministic_order(self):
        assert [s.name for s in enumerate_identifiers(5)] == \
            [s.name for s in enumerate_identifiers(5)]

    def test_rejects_tiny_order(self):
        with pytest.raises(ValueError):
            enumerate_identifiers(1)


class TestIdentifierSpec:
    def test_name_round_trip(self):
        for spec in enumerate_identifiers(5):
            again = IdentifierSpec.from_name(spec.name)
            assert again == spec

    def test_invalid_pairs_rejected(self):
        with pytest.raises(ValueError):
            IdentifierSpec(lam=(2, 1), mu=(1, 1, 1))  # shares the part 1
        with pytest.raises(ValueError):
            IdentifierSpec(lam=(2, 2), mu=(1, 1, 1, 1))  # reducible
        with pytest.raises(ValueError):
            IdentifierSpec(lam=(2, 2), mu=(3, 1))  # not majorizing
        with pytest.raises(ValueError):
            IdentifierSpec(lam=(3,), mu=(2,))  # unequal sums


class TestEvaluateIdentifier:
    def test_poisson_sits_exactly_on_the_boundary(self):
        m = poisson_moments(1.7, 5)
        for spec in enumerate_identifiers(5):
            assert abs(evaluate_identifier(spec, m).value) < 1e-12

    def test_fock_is_sub_poissonian(self):
        m = fock_moments(5, 2)
        result = evaluate_identifier(IdentifierSpec((2,), (1, 1)), m)
        assert result.value == pytest.approx(20 / 25 - 1, abs=1e-12)
        assert result.nonclassical

    def test_thermal_is_super_poissonian(self):
        m = thermal_moments(0.8, 2)
        result = evaluate_identifier(IdentifierSpec((2,), (1, 1)), m)
        assert result.value == pytest.approx(1.0, abs=1e-12)
        assert not result.nonclassical

    def test_fock_states_flag_all_fifteen(self):
        # below m=4 some factorial moments vanish on both sides of an
        # identifier, pinning it to exactly zero instead of a negative value
        specs = enumerate_identifiers(5)
        for m_level in range(1, 21):
            ms = fock_moments(m_level, 5)
            values = [evaluate_identifier(spec, ms).value for spec in specs]
            assert all(v <= 0 for v in values)
            if m_level >= 4:
                assert all(v < 0 for v in values)

    def test_vacuum_error(self):
        with pytest.raises(VacuumError):
            evaluate_identifier(IdentifierSpec((2,), (1, 1)), poisson_moments(0.0, 2))

    def test_missing_order_error(self):
        with pytest.raises(MomentOrderError):
            evaluate_identifier(IdentifierSpec((3,), (2, 1)), poisson_moments(1.0, 2))


class TestMomentMatrix:
    def test_poisson_two_by_two(self):
        mu = 1.4
        mm = moment_matrix(poisson_moments(mu, 2), (0, 1))
        assert np.allclose(mm.entries, [[1, mu], [mu, mu ** 2]])
        assert abs(mm.determinant()) < 1e-12 * mu ** 2

    def test_fock_two_by_two_determinant(self):
        mm = moment_matrix(fock_moments(5, 2), (0, 1))
        assert mm.determinant() == pytest.approx(-5.0, abs=1e-10)

    def test_three_by_three_needs_order_four(self):
        with pytest.raises(MomentOrderError):
            moment_matrix(poisson_moments(1.0, 3), (0, 1, 2))
        moment_matrix(poisson_moments(1.0, 4), (0, 1, 2))

    def test_normalization_leaves_sign(self):
        m = fock_moments(5, 2)
        raw = moment_matrix(m, (0, 1)).determinant()
        scaled = moment_matrix(m, (0, 1), normalized=True).determinant()
        assert np.sign(raw) == np.sign(scaled)


class TestMinorCriteria:
    def test_enumerated_subsets_for_order_five(self):
        results = minor_criteria(poisson_moments(1.0, 5))
        assert [r.index_set for r in results] == [(0, 1), (0, 2), (1, 2), (0, 1, 2)]

    def test_first_minor_is_the_variance_gap(self):
        m = fock_moments(4, 2)
        first = minor_criteria(m)[0]
        assert first.determinant == pytest.approx(m.moment(2) - m.moment(1) ** 2, rel=1e-12)
        assert first.nonclassical

    def test_thermal_flags_nothing(self):
        for r in minor_criteria(thermal_moments(1.0, 5)):
            assert r.determinant >= -1e-9
            assert not r.nonclassical


class TestMinorMapping:
    def test_mapping_examples(self):
        assert minor_to_majorization(0, 1) == IdentifierSpec((2,), (1, 1))
        assert minor_to_majorization(0, 2) == IdentifierSpec((4,), (2, 2))
        assert minor_to_majorization(1, 2) == IdentifierSpec((4, 2), (3, 3))

    def test_rejects_bad_powers(self):
        with pytest.raises(ValueError):
            minor_to_majorization(2, 1)
        with pytest.raises(ValueError):
            minor_to_majorization(1, 1)

    def test_sign_agreement_with_minors(self):
        rng = np.random.default_rng(12)
        pairs = [(0, 1), (0, 2), (1, 2)]
        for trial in range(60):
            if trial % 2 == 0:
                m = mandel_rice_moments(float(rng.uniform(0.05, 200)),
                                        float(rng.uniform(0.05, 8)), 5)
            else:
                m = fock_moments(int(rng.integers(1, 15)), 5)
            for k, l in pairs:
                det = moment_matrix(m, (k, l)).determinant()
                value = evaluate_identifier(minor_to_majorization(k, l), m).value
                scale = max(abs(det), 1e-30)
                if abs(det) < 1e-12 * scale:
                    continue
                assert (det < 0) == (value < 0)


class TestClassicalSafety:
    def test_random_classical_states_never_flagged(self):
        rng = np.random.default_rng(99)
        specs = enumerate_identifiers(5)
        for _ in range(200):
            m = mandel_rice_moments(float(rng.uniform(0.01, 300)),
                                    float(rng.uniform(0.01, 10)), 5)
            for spec in specs:
                assert evaluate_identifier(spec, m).value >= -1e-9
