"""Domain types: attempts, datasets, estimand specifications and interventions.

Players are indexed ``1..m`` everywhere in the public API. Nuisance matrices
store player ``a`` in column ``a - 1``.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyConditioningSet

__all__ = [
    "AttemptRecord", "Dataset", "Kind", "Constraint", "XCondition", "EstimandSpec",
    "InterventionDistribution", "empirical_success_rate", "conditioning_indices",
    "conditioning_mask",
]


class Kind(str, Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"
    RANDOM_REPLACEMENT = "rand"

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, Kind):
            return value
        aliases = {"direct": cls.DIRECT, "indirect": cls.INDIRECT, "rand": cls.RANDOM_REPLACEMENT,
                   "random": cls.RANDOM_REPLACEMENT, "random_replacement": cls.RANDOM_REPLACEMENT,
                   "randomreplacement": cls.RANDOM_REPLACEMENT}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown estimand kind {value!r}") from None


@dataclass(frozen=True)
class AttemptRecord:
    x: tuple
    a: int
    y: int

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if self.y not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.y!r}")
        if int(self.a) != self.a or self.a < 1:
            raise ValueError(f"player index must be a positive integer, got {self.a!r}")


class Dataset:
    """Immutable attempt-level data held as numpy arrays.

    Parameters
    ----------
    X : array of shape (n, p)
        Encoded covariates.
    A : array of shape (n,)
        Player indices in ``1..m``.
    Y : array of shape (n,)
        Binary outcomes.
    m : int
        Number of players.
    player_labels, covariate_names : sequences of str, optional
    """

    def __init__(self, X, A, Y, m: int, player_labels: Optional[Sequence[str]] = None,
                 covariate_names: Optional[Sequence[str]] = None):
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        A = np.asarray(A)
        Y = np.asarray(Y)
        n = len(A)
        if n == 0:
            raise ValueError("dataset must contain at least one record")
        if X.shape[0] != n or len(Y) != n:
            raise ValueError("X, A and Y must have the same number of rows")
        if m < 2:
            raise ValueError(f"need at least two players, got m={m}")
        if not np.all(np.isin(Y, (0, 1))):
            raise ValueError("outcomes must be 0 or 1")
        if np.any(A != np.round(A)) or A.min() < 1 or A.max() > m:
            raise ValueError(f"player indices must lie in 1..{m}")
        self.X = X
        self.A = A.astype(np.int64)
        self.Y = Y.astype(np.int64)
        for arr in (self.X, self.A, self.Y):
            arr.flags.writeable = False
        self.m = int(m)
        self.player_labels = tuple(player_labels) if player_labels is not None else \
            tuple(str(a) for a in range(1, m + 1))
        if len(self.player_labels) != m:
            raise ValueError("player_labels must have length m")
        self.covariate_names = tuple(covariate_names) if covariate_names is not None else \
            tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(self.covariate_names) != X.shape[1]:
            raise ValueError("covariate_names must match the covariate dimension")

    @classmethod
    def from_records(cls, records: Iterable[AttemptRecord], m: int, **kwargs) -> "Dataset":
        records = list(records)
        if not records:
            raise ValueError("dataset must contain at least one record")
        dims = {len(r.x) for r in records}
        if len(dims) != 1:
            raise ValueError("all records must share the same covariate dimension")
        X = np.array([r.x for r in records], dtype=float).reshape(len(records), dims.pop())
        return cls(X, [r.a for r in records], [r.y for r in records], m, **kwargs)

    @property
    def n(self) -> int:
        return len(self.A)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def records(self) -> list:
        return [AttemptRecord(tuple(x), int(a), int(y)) for x, a, y in zip(self.X, self.A, self.Y)]

    def player_counts(self) -> np.ndarray:
        """Attempt counts for players ``1..m`` (index 0 is player 1)."""
        return np.bincount(self.A - 1, minlength=self.m)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.A[idx], self.Y[idx], self.m,
                       self.player_labels, self.covariate_names)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.m == other.m and self.player_labels == other.player_labels
                and self.covariate_names == other.covariate_names
                and np.array_equal(self.X, other.X) and np.array_equal(self.A, other.A)
                and np.array_equal(self.Y, other.Y))

    __hash__ = None

    def __repr__(self):
        return f"Dataset(n={self.n}, p={self.p}, m={self.m})"


_OPS = {"eq": operator.eq, "ne": operator.ne, "lt": operator.lt, "le": operator.le,
        "gt": operator.gt, "ge": operator.ge}


@dataclass(frozen=True)
class Constraint:
    """Single covariate constraint, e.g. ``Constraint("distance", "ge", 40)``.

    ``covariate`` is a column name or a zero-based column position.
    """
    covariate: object
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown constraint operator {self.op!r}; use one of {sorted(_OPS)}")

    def column(self, names: Sequence[str]) -> int:
        if isinstance(self.covariate, (int, np.integer)):
            if not 0 <= self.covariate < len(names):
                raise ValueError(f"covariate position {self.covariate} out of range")
            return int(self.covariate)
        try:
            return list(names).index(self.covariate)
        except ValueError:
            raise ValueError(f"unknown covariate {self.covariate!r}") from None

    def to_dict(self) -> dict:
        return {"covariate": self.covariate, "op": self.op, "value": self.value}

    @classmethod
    def from_dict(cls, d) -> "Constraint":
        return cls(d["covariate"], d["op"], float(d["value"]))


@dataclass(frozen=True)
class XCondition:
    """Conjunction of covariate constraints defining the reference attempt set.

    The empty conjunction accepts every covariate vector.
    """
    constraints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def always_true(self) -> bool:
        return not self.constraints

    def mask(self, X, names: Optional[Sequence[str]] = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if names is None:
            names = [f"x{j + 1}" for j in range(X.shape[1])]
        out = np.ones(X.shape[0], dtype=bool)
        for c in self.constraints:
            out &= _OPS[c.op](X[:, c.column(names)], c.value)
        return out

    def __call__(self, x, names: Optional[Sequence[str]] = None) -> bool:
        return bool(self.mask(np.asarray(x, dtype=float).reshape(1, -1), names)[0])

    def to_list(self) -> list:
        return [c.to_dict() for c in self.constraints]

    @classmethod
    def from_list(cls, items) -> "XCondition":
        return cls(tuple(Constraint.from_dict(d) for d in (items or ())))


ALWAYS = XCondition()


@dataclass(frozen=True)
class EstimandSpec:
    """Which parameter to estimate, for which focal player, on which attempts.

    ``a_condition`` of ``None`` means the full player set for direct
    standardization and ``{focal_player}`` for the other two kinds.
    """
    kind: Kind
    focal_player: int
    x_condition: XCondition = field(default=ALWAYS)
    a_condition: Optional[frozenset] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if self.focal_player < 1:
            raise ValueError("focal_player must be >= 1")
        if self.a_condition is None and self.kind is not Kind.DIRECT:
            object.__setattr__(self, "a_condition", frozenset({self.focal_player}))
        elif self.a_condition is not None:
            object.__setattr__(self, "a_condition", frozenset(int(a) for a in self.a_condition))

    def players(self, m: int) -> frozenset:
        if self.a_condition is None:
            return frozenset(range(1, m + 1))
        return self.a_condition

    def label(self) -> str:
        return f"{self.kind.value}[{self.focal_player}]"


def conditioning_mask(data: Dataset, spec: EstimandSpec) -> np.ndarray:
    mask = spec.x_condition.mask(data.X, data.covariate_names)
    if spec.a_condition is not None:
        mask &= np.isin(data.A, sorted(spec.a_condition))
    return mask


def conditioning_indices(data: Dataset, spec: EstimandSpec) -> list:
    """Indices ``i`` with ``X_i`` in the covariate set and ``A_i`` in the player set."""
    idx = np.flatnonzero(conditioning_mask(data, spec))
    if idx.size == 0:
        raise EmptyConditioningSet(f"no records satisfy {spec.label()}")
    return idx.tolist()


def empirical_success_rate(data: Dataset, a: int, x_condition: Optional[XCondition] = None) -> float:
    x_condition = x_condition or ALWAYS
    mask = (data.A == a) & x_condition.mask(data.X, data.covariate_names)
    if not mask.any():
        raise EmptyConditioningSet(f"player {a} has no records in the conditioning set")
    return float(data.Y[mask].mean())


class InterventionDistribution:
    """Reference distribution over players used to reassign attempts.

    ``degenerate(a)`` always picks player ``a``; ``observational()`` follows the
    fitted assignment mechanism; ``uniform()`` picks each player with
    probability ``1/m``.
    """

    KINDS = ("degenerate", "observational", "uniform")

    def __init__(self, kind: str, player: Optional[int] = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown intervention kind {kind!r}")
        if kind == "degenerate" and (player is None or player < 1):
            raise ValueError("degenerate intervention needs a player index >= 1")
        self.kind = kind
        self.player = player

    @classmethod
    def degenerate(cls, a: int):
        return cls("degenerate", a)

    @classmethod
    def observational(cls):
        return cls("observational")

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def for_estimand(cls, spec: EstimandSpec) -> "InterventionDistribution":
        return {Kind.DIRECT: cls.degenerate(spec.focal_player),
                Kind.INDIRECT: cls.observational(),
                Kind.RANDOM_REPLACEMENT: cls.uniform()}[spec.kind]

    def probabilities(self, m: int, n: int = 1, propensity=None) -> np.ndarray:
        """Matrix of shape (n, m) with the reassignment probabilities per record."""
        if self.kind == "uniform":
            return np.full((n, m), 1.0 / m)
        if self.kind == "degenerate":
            if self.player > m:
                raise ValueError(f"player {self.player} outside 1..{m}")
            out = np.zeros((n, m))
            out[:, self.player - 1] = 1.0
            return out
        if propensity is None:
            raise ValueError("observational intervention needs a propensity matrix")
        pi = np.asarray(propensity, dtype=float)
        return pi / pi.sum(axis=1, keepdims=True)

    def __repr__(self):
        return f"InterventionDistribution({self.kind!r}, {self.player!r})"
