import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from playereval.stats import normal_quantile, two_sided_z


@pytest.mark.parametrize("level,z", [(0.95, 1.959964), (0.999, 3.290527), (0.975, 2.241403),
                                     (0.99, 2.575829)])
def test_two_sided_z_table_values(level, z):
    assert two_sided_z(level) == pytest.approx(z, abs=1e-6)


def test_level_zero_collapses():
    assert two_sided_z(0.0) == 0.0


@given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
def test_quantile_matches_reference(p):
    assert normal_quantile(p) == pytest.approx(norm.ppf(p), rel=1e-8, abs=1e-8)


@given(st.floats(min_value=1e-6, max_value=0.5 - 1e-6))
def test_quantile_antisymmetric(p):
    assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p), abs=1e-9)


def test_quantile_inverts_cdf():
    for p in np.linspace(0.001, 0.999, 37):
        x = normal_quantile(p)
        assert 0.5 * math.erfc(-x / math.sqrt(2)) == pytest.approx(p, abs=1e-14)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_quantile_domain(bad):
    with pytest.raises(ValueError):
        normal_quantile(bad)
