import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from playereval.core import (ALWAYS, AttemptRecord, Constraint, Dataset, EstimandSpec,
                             InterventionDistribution, Kind, XCondition, conditioning_indices,
                             empirical_success_rate)
from playereval.errors import EmptyConditioningSet


def small():
    X = [[10.0], [20.0], [30.0], [40.0], [50.0], [60.0]]
    return Dataset(X, [1, 1, 2, 2, 1, 3], [1, 0, 1, 1, 1, 0], 3,
                   covariate_names=["distance"])


class TestRecords:
    def test_rejects_non_binary_outcome(self):
        with pytest.raises(ValueError):
            AttemptRecord((1.0,), 1, 2)

    def test_rejects_bad_player(self):
        with pytest.raises(ValueError):
            AttemptRecord((1.0,), 0, 1)

    def test_dataset_round_trip_through_records(self):
        d = small()
        again = Dataset.from_records(d.records, d.m, covariate_names=d.covariate_names)
        assert again == d

    def test_mixed_dimensions_rejected(self):
        recs = [AttemptRecord((1.0,), 1, 0), AttemptRecord((1.0, 2.0), 2, 1)]
        with pytest.raises(ValueError):
            Dataset.from_records(recs, 2)

    def test_player_out_of_range(self):
        with pytest.raises(ValueError):
            Dataset([[0.0]], [3], [1], 2)

    def test_needs_two_players(self):
        with pytest.raises(ValueError):
            Dataset([[0.0]], [1], [1], 1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((0, 1)), [], [], 2)

    def test_arrays_read_only(self):
        d = small()
        with pytest.raises(ValueError):
            d.Y[0] = 0

    def test_player_counts(self):
        assert small().player_counts().tolist() == [3, 2, 1]


class TestEmpiricalRate:
    def test_rate(self):
        assert empirical_success_rate(small(), 1) == pytest.approx(2 / 3)

    def test_with_condition(self):
        xc = XCondition((Constraint("distance", "ge", 30),))
        assert empirical_success_rate(small(), 1, xc) == 1.0

    def test_empty_raises(self):
        xc = XCondition((Constraint("distance", "gt", 100),))
        with pytest.raises(EmptyConditioningSet):
            empirical_success_rate(small(), 1, xc)


class TestConditioning:
    def test_direct_uses_all_players(self):
        spec = EstimandSpec(Kind.DIRECT, 1)
        assert conditioning_indices(small(), spec) == list(range(6))

    def test_indirect_uses_focal_player(self):
        spec = EstimandSpec("indirect", 2)
        assert conditioning_indices(small(), spec) == [2, 3]

    def test_x_condition_intersects(self):
        spec = EstimandSpec("rand", 1, XCondition((Constraint("distance", "lt", 45),)))
        assert conditioning_indices(small(), spec) == [0, 1]

    def test_empty_raises(self):
        spec = EstimandSpec("rand", 3, XCondition((Constraint(0, "lt", 15),)))
        with pytest.raises(EmptyConditioningSet):
            conditioning_indices(small(), spec)

    def test_default_a_condition(self):
        assert EstimandSpec("direct", 2).players(4) == frozenset({1, 2, 3, 4})
        assert EstimandSpec("rand", 2).players(4) == frozenset({2})

    def test_condition_serialisation(self):
        xc = XCondition((Constraint("distance", "ge", 30), Constraint(0, "ne", 40)))
        assert XCondition.from_list(xc.to_list()) == xc

    def test_unknown_operator(self):
        with pytest.raises(ValueError):
            Constraint("x", "approx", 1)

    def test_always_true(self):
        assert ALWAYS.always_true
        assert ALWAYS.mask(np.zeros((3, 2))).all()


class TestIntervention:
    @given(st.integers(2, 8), st.integers(1, 20), st.integers(0, 10 ** 6))
    def test_rows_sum_to_one(self, m, n, seed):
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(np.ones(m), size=n)
        for dist in (InterventionDistribution.uniform(), InterventionDistribution.observational(),
                     InterventionDistribution.degenerate(1 + seed % m)):
            P = dist.probabilities(m, n, pi)
            assert np.all(P >= 0)
            assert np.allclose(P.sum(axis=1), 1.0, atol=1e-10)

    def test_for_estimand(self):
        assert InterventionDistribution.for_estimand(EstimandSpec("direct", 2)).kind == "degenerate"
        assert InterventionDistribution.for_estimand(EstimandSpec("indirect", 2)).kind == \
            "observational"
        assert InterventionDistribution.for_estimand(EstimandSpec("rand", 2)).kind == "uniform"

    def test_observational_needs_propensity(self):
        with pytest.raises(ValueError):
            InterventionDistribution.observational().probabilities(3, 2)
