import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from playereval.errors import ConfigError, MissingColumn, NonBinaryOutcome, UnparseableValue
from playereval.ingest import (CovariateSpec, EligibilityRule, SchemaConfig, canonical_csv,
                               canonical_schema, load_csv, load_schema)

TOY = """player,dist,indoor,surface,y
A,30,1,grass,1
A,,0,turf,0
B,45,0,turf,1
B,50,1,hybrid,0
A,25,0,grass,1
"""


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def toy_schema(**kw):
    d = {"outcome": "y", "player": "player",
         "covariates": [{"name": "dist", "type": "numeric"},
                        {"name": "indoor", "type": "binary"},
                        {"name": "surface", "type": "categorical"}]}
    d.update(kw)
    return SchemaConfig.from_dict(d)


def bundled(name):
    return resources.files("playereval").joinpath("data", name)


class TestToy:
    def test_missing_row_dropped(self, tmp_path):
        data, rep = load_csv(write(tmp_path, TOY), toy_schema())
        assert data.n == 4
        assert rep.dropped_missing == 1 and rep.raw_rows == 5 and rep.kept == 4
        assert data.player_labels == ("A", "B")
        np.testing.assert_array_equal(data.A, [1, 2, 2, 1])
        np.testing.assert_array_equal(data.Y, [1, 1, 0, 1])

    def test_categorical_encoding(self, tmp_path):
        data, rep = load_csv(write(tmp_path, TOY), toy_schema())
        # three levels (grass, hybrid, turf), grass is the reference
        assert data.covariate_names == ("dist", "indoor", "surface=hybrid", "surface=turf")
        np.testing.assert_array_equal(data.X[:, 2:], [[0, 0], [0, 1], [1, 0], [0, 0]])
        assert rep.covariate_names == list(data.covariate_names)

    def test_constant_fill(self, tmp_path):
        schema = toy_schema(covariates=[{"name": "dist", "type": "numeric",
                                         "missing": {"constant_fill": 0}}])
        data, rep = load_csv(write(tmp_path, TOY), schema)
        assert data.n == 5 and rep.filled == {"dist": 1}
        assert data.X[1, 0] == 0.0

    def test_eligibility(self, tmp_path):
        schema = toy_schema(eligibility={"min_attempts": 2})
        text = TOY + "C,40,1,grass,1\n"
        data, rep = load_csv(write(tmp_path, text), schema)
        assert data.m == 2 and rep.dropped_ineligible == 1
        assert rep.dropped_players == ["C"]
        assert rep.raw_rows == rep.kept + rep.dropped_missing + rep.dropped_ineligible

    def test_auxiliary_rule(self, tmp_path):
        text = "p,x,games,y\n" + "".join(
            f"{p},{i},{g},{i % 2}\n" for p, g in (("A", 200), ("B", 10), ("C", 160))
            for i in range(4))
        rule = {"min_attempts": 1, "auxiliary": [{"column": "games", "op": "gt", "value": 150}]}
        schema = SchemaConfig.from_dict({"outcome": "y", "player": "p",
                                         "covariates": [{"name": "x"}], "eligibility": rule})
        data, rep = load_csv(write(tmp_path, text), schema)
        assert data.player_labels == ("A", "C")
        assert rep.dropped_ineligible == 4

    def test_outcome_spellings(self, tmp_path):
        text = "p,x,y\nA,1,TRUE\nA,2,no\nB,3,1.0\nB,4,0\n"
        schema = SchemaConfig("y", "p", ({"name": "x"},))
        data, _ = load_csv(write(tmp_path, text), schema)
        np.testing.assert_array_equal(data.Y, [1, 0, 1, 0])


class TestErrors:
    def test_missing_column(self, tmp_path):
        with pytest.raises(MissingColumn) as info:
            load_csv(write(tmp_path, TOY), toy_schema(outcome="made"))
        assert info.value.column == "made"

    def test_non_binary(self, tmp_path):
        with pytest.raises(NonBinaryOutcome) as info:
            load_csv(write(tmp_path, TOY.replace("B,45,0,turf,1", "B,45,0,turf,2")), toy_schema())
        assert info.value.row == 3 and info.value.value == "2"

    def test_unparseable(self, tmp_path):
        with pytest.raises(UnparseableValue) as info:
            load_csv(write(tmp_path, TOY.replace("B,50", "B,fifty")), toy_schema())
        assert (info.value.row, info.value.column) == (4, "dist")

    def test_bad_binary(self, tmp_path):
        with pytest.raises(UnparseableValue):
            load_csv(write(tmp_path, TOY.replace("A,30,1", "A,30,maybe")), toy_schema())

    def test_one_player_left(self, tmp_path):
        with pytest.raises(ConfigError):
            load_csv(write(tmp_path, TOY), toy_schema(eligibility={"min_attempts": 3}))

    @pytest.mark.parametrize("bad", [
        {"player": "p"},
        {"outcome": "y", "player": "y"},
        {"outcome": "y", "player": "p", "covariates": [{"name": "x", "type": "text"}]},
        {"outcome": "y", "player": "p", "eligibility": {"min_attempts": 0}},
        {"outcome": "y", "player": "p", "eligibility": {"mode": "some"}},
        {"outcome": "y", "player": "p",
         "covariates": [{"name": "x", "missing": {"median_fill": 1}}]},
    ])
    def test_schema_validation(self, bad):
        with pytest.raises(ConfigError):
            SchemaConfig.from_dict(bad)

    def test_schema_not_json(self, tmp_path):
        with pytest.raises(ConfigError):
            load_schema(write(tmp_path, "{not json", "s.json"))


class TestBundled:
    def test_kicker(self):
        schema = load_schema(bundled("kicker_schema.json"))
        data, rep = load_csv(bundled("kicker_synthetic.csv"), schema)
        assert rep.raw_rows == rep.kept + rep.dropped_missing + rep.dropped_ineligible
        assert data.m == rep.players_kept and rep.players_kept < rep.players_raw
        assert np.all(data.player_counts() >= 100)
        assert "wind" in rep.filled
        assert data.covariate_names[:2] == ("distance", "wind")
        assert all(name.startswith("roof=") for name in data.covariate_names[2:])

    def test_deterministic(self):
        schema = load_schema(bundled("kicker_schema.json"))
        d1, r1 = load_csv(bundled("kicker_synthetic.csv"), schema)
        d2, r2 = load_csv(bundled("kicker_synthetic.csv"), schema)
        assert d1 == d2 and r1 == r2

    def test_round_trip(self, tmp_path):
        schema = load_schema(bundled("kicker_schema.json"))
        data, _ = load_csv(bundled("kicker_synthetic.csv"), schema)
        path = write(tmp_path, canonical_csv(data))
        again, rep = load_csv(path, canonical_schema(data))
        assert again == data
        assert rep.dropped_missing == rep.dropped_ineligible == 0

    def test_schema_round_trip(self, tmp_path):
        schema = load_schema(bundled("kicker_schema.json"))
        path = write(tmp_path, json.dumps(schema.to_dict()), "s.json")
        assert load_schema(path) == schema


@given(st.lists(st.tuples(st.sampled_from(["p1", "p2", "p3"]),
                          st.one_of(st.just(""), st.integers(0, 99).map(str)),
                          st.sampled_from(["a", "b", "c", "NA"]),
                          st.integers(0, 1)), min_size=8, max_size=40),
       st.integers(1, 4))
def test_bookkeeping_balances(tmp_path_factory, rows, min_attempts):
    text = "who,x,cat,y\n" + "".join(f"{p},{x},{c},{y}\n" for p, x, c, y in rows)
    path = tmp_path_factory.mktemp("fuzz") / "d.csv"
    path.write_text(text)
    schema = SchemaConfig("y", "who", (CovariateSpec("x"), CovariateSpec("cat", "categorical")),
                          EligibilityRule(min_attempts))
    try:
        data, rep = load_csv(path, schema)
    except ConfigError:
        return
    assert rep.raw_rows == len(rows)
    assert rep.raw_rows == rep.kept + rep.dropped_missing + rep.dropped_ineligible
    assert data.n == rep.kept
    assert np.all(data.player_counts() >= min_attempts)
    again, _ = load_csv(write(path.parent, canonical_csv(data), "c.csv"), canonical_schema(data))
    assert again == data
