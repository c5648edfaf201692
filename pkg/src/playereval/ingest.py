"""Attempt-level CSV ingestion under a declarative JSON schema.

Example schema::

    {
      "outcome": "made",
      "player": "kicker",
      "covariates": [
        {"name": "distance", "type": "numeric"},
        {"name": "wind", "type": "numeric", "missing": {"constant_fill": 0}},
        {"name": "roof", "type": "categorical"}
      ],
      "eligibility": {"min_attempts": 100},
      "x_condition": [{"covariate": "distance", "op": "ge", "value": 30}]
    }
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .core import Dataset, XCondition, _OPS
from .errors import ConfigError, MissingColumn, NonBinaryOutcome, UnparseableValue

__all__ = ["CovariateSpec", "EligibilityRule", "SchemaConfig", "IngestReport", "load_csv",
           "load_schema", "canonical_csv", "canonical_schema"]

MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "null"})
_TRUE = {"1", "1.0", "true", "yes", "y"}
_FALSE = {"0", "0.0", "false", "no", "n"}
COVARIATE_TYPES = ("numeric", "binary", "categorical")


@dataclass(frozen=True)
class CovariateSpec:
    """``missing`` is ``"complete_case"`` or ``{"constant_fill": value}``."""
    name: str
    type: str = "numeric"
    missing: object = "complete_case"

    def __post_init__(self):
        if self.type not in COVARIATE_TYPES:
            raise ConfigError(f"covariate {self.name!r}: unknown type {self.type!r}")
        if self.missing != "complete_case":
            if not (isinstance(self.missing, dict) and set(self.missing) == {"constant_fill"}):
                raise ConfigError(f"covariate {self.name!r}: missing policy must be "
                                  "'complete_case' or {'constant_fill': value}")

    @property
    def fill_value(self):
        return None if self.missing == "complete_case" else self.missing["constant_fill"]


@dataclass(frozen=True)
class EligibilityRule:
    """Players need ``min_attempts`` kept attempts; ``auxiliary`` rules compare
    the per-player maximum of a column against a threshold and are combined
    with ``mode`` ("any" or "all")."""
    min_attempts: int = 1
    auxiliary: tuple = ()
    mode: str = "any"

    def __post_init__(self):
        if int(self.min_attempts) < 1:
            raise ConfigError("min_attempts must be >= 1")
        if self.mode not in ("any", "all"):
            raise ConfigError("eligibility mode must be 'any' or 'all'")
        rules = tuple(dict(r) for r in self.auxiliary)
        for r in rules:
            if set(r) != {"column", "op", "value"} or r["op"] not in _OPS:
                raise ConfigError(f"bad auxiliary eligibility rule {r!r}")
        object.__setattr__(self, "auxiliary", rules)


@dataclass(frozen=True)
class SchemaConfig:
    outcome: str
    player: str
    covariates: tuple = ()
    eligibility: EligibilityRule = field(default_factory=EligibilityRule)
    x_condition: XCondition = field(default_factory=XCondition)

    def __post_init__(self):
        covs = tuple(c if isinstance(c, CovariateSpec) else CovariateSpec(**c)
                     for c in self.covariates)
        object.__setattr__(self, "covariates", covs)
        names = [self.outcome, self.player, *(c.name for c in covs)]
        if len(set(names)) != len(names):
            raise ConfigError("schema column names must be unique")

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaConfig":
        try:
            elig = d.get("eligibility") or {}
            return cls(outcome=d["outcome"], player=d["player"],
                       covariates=tuple(d.get("covariates", ())),
                       eligibility=EligibilityRule(int(elig.get("min_attempts", 1)),
                                                   tuple(elig.get("auxiliary", ())),
                                                   elig.get("mode", "any")),
                       x_condition=XCondition.from_list(d.get("x_condition")))
        except KeyError as exc:
            raise ConfigError(f"schema lacks required field {exc.args[0]!r}") from None
        except TypeError as exc:
            raise ConfigError(f"malformed schema: {exc}") from None

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "player": self.player,
                "covariates": [asdict(c) for c in self.covariates],
                "eligibility": {"min_attempts": self.eligibility.min_attempts,
                                "auxiliary": list(self.eligibility.auxiliary),
                                "mode": self.eligibility.mode},
                "x_condition": self.x_condition.to_list()}


def load_schema(path) -> SchemaConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return SchemaConfig.from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema {path} is not valid JSON: {exc}") from None


@dataclass
class IngestReport:
    raw_rows: int
    dropped_missing: int
    dropped_ineligible: int
    kept: int
    filled: dict
    players_raw: int
    players_kept: int
    dropped_players: list
    covariate_names: list

    def to_dict(self) -> dict:
        return asdict(self)


def _missing(col: pd.Series) -> np.ndarray:
    return col.str.strip().isin(MISSING_TOKENS).to_numpy()


def _parse_numeric(col: pd.Series, name: str, missing: np.ndarray) -> np.ndarray:
    vals = pd.to_numeric(col.where(~missing, None), errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~missing & ~np.isfinite(vals))
    if bad.size:
        i = int(bad[0])
        raise UnparseableValue(i + 1, name, col.iloc[i])
    return vals


def _parse_binary(col: pd.Series, name: str, missing: np.ndarray) -> np.ndarray:
    low = col.str.strip().str.lower()
    out = np.full(len(col), np.nan)
    out[low.isin(_TRUE).to_numpy()] = 1.0
    out[low.isin(_FALSE).to_numpy()] = 0.0
    bad = np.flatnonzero(~missing & np.isnan(out))
    if bad.size:
        i = int(bad[0])
        raise UnparseableValue(i + 1, name, col.iloc[i])
    return out


def load_csv(path, schema: SchemaConfig):
    """Read a CSV into a Dataset.

    Rows missing the outcome, the player, or a ``complete_case`` covariate
    are dropped; ``constant_fill`` covariates get the configured value.
    Players failing the eligibility rule are then removed and the survivors
    are indexed ``1..m`` in sorted label order. Categorical covariates are
    one-hot encoded with the lexicographically first level as reference and
    columns named ``"<name>=<level>"``.

    Returns
    -------
    (Dataset, IngestReport)
    """
    if isinstance(schema, dict):
        schema = SchemaConfig.from_dict(schema)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"cannot parse CSV {path}: {exc}") from None
    aux_cols = [r["column"] for r in schema.eligibility.auxiliary]
    for col in [schema.outcome, schema.player, *(c.name for c in schema.covariates), *aux_cols]:
        if col not in df.columns:
            raise MissingColumn(col)
    n_raw = len(df)

    y_raw = df[schema.outcome]
    y_missing = _missing(y_raw)
    low = y_raw.str.strip().str.lower()
    y = np.full(n_raw, -1, dtype=np.int64)
    y[low.isin(_TRUE).to_numpy()] = 1
    y[low.isin(_FALSE).to_numpy()] = 0
    bad = np.flatnonzero(~y_missing & (y < 0))
    if bad.size:
        i = int(bad[0])
        raise NonBinaryOutcome(i + 1, y_raw.iloc[i])

    players = df[schema.player].str.strip()
    drop = y_missing | _missing(df[schema.player])
    filled = {}
    columns = []
    for spec in schema.covariates:
        col = df[spec.name]
        miss = _missing(col)
        if spec.fill_value is not None and miss.any():
            col = col.where(~miss, str(spec.fill_value))
            filled[spec.name] = int(miss.sum())
            miss = np.zeros(n_raw, dtype=bool)
        else:
            drop |= miss
        if spec.type == "numeric":
            columns.append((spec, _parse_numeric(col, spec.name, miss)))
        elif spec.type == "binary":
            columns.append((spec, _parse_binary(col, spec.name, miss)))
        else:
            columns.append((spec, col.str.strip().to_numpy()))
    dropped_missing = int(drop.sum())
    keep = ~drop

    counts = players[keep].value_counts()
    eligible = set(counts.index[counts >= schema.eligibility.min_attempts])
    if schema.eligibility.auxiliary:
        ok = set()
        for label in eligible:
            rows = keep & (players == label).to_numpy()
            checks = []
            for r in schema.eligibility.auxiliary:
                vals = _parse_numeric(df[r["column"]], r["column"], _missing(df[r["column"]]))
                checks.append(bool(_OPS[r["op"]](np.nanmax(vals[rows]), float(r["value"]))))
            if (any if schema.eligibility.mode == "any" else all)(checks):
                ok.add(label)
        eligible = ok
    is_eligible = players.isin(eligible).to_numpy()
    dropped_ineligible = int((keep & ~is_eligible).sum())
    keep &= is_eligible

    labels = sorted(eligible)
    index = {lab: i + 1 for i, lab in enumerate(labels)}
    A = np.array([index[p] for p in players[keep]], dtype=np.int64)
    blocks, names = [], []
    for spec, values in columns:
        v = values[keep]
        if spec.type == "categorical":
            levels = sorted(set(v.tolist()))
            for level in levels[1:]:
                blocks.append((v == level).astype(float))
                names.append(f"{spec.name}={level}")
        else:
            blocks.append(v.astype(float))
            names.append(spec.name)
    kept = int(keep.sum())
    X = np.column_stack(blocks) if blocks else np.zeros((kept, 0))
    report = IngestReport(n_raw, dropped_missing, dropped_ineligible, kept, filled,
                          int(players[~_missing(df[schema.player])].nunique()), len(labels),
                          sorted(set(players[~drop]) - eligible), names)
    if kept == 0:
        raise ConfigError("no records survive missing-value and eligibility filtering")
    if len(labels) < 2:
        raise ConfigError(f"need at least two eligible players, found {len(labels)}")
    return Dataset(X, A, y[keep], len(labels), labels, names), report


def canonical_csv(data: Dataset, outcome: str = "outcome", player: str = "player") -> str:
    """Encoded dataset as CSV: player label, covariates, outcome."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([player, *data.covariate_names, outcome])
    for x, a, yv in zip(data.X, data.A, data.Y):
        w.writerow([data.player_labels[a - 1], *(repr(float(v)) for v in x), int(yv)])
    return buf.getvalue()


def canonical_schema(data: Dataset, outcome: str = "outcome", player: str = "player") -> SchemaConfig:
    """Schema that re-ingests ``canonical_csv`` output into an equal Dataset."""
    return SchemaConfig(outcome, player,
                        tuple(CovariateSpec(name, "numeric") for name in data.covariate_names))
