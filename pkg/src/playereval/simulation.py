"""Structural data-generating processes with exact oracles, and a Monte-Carlo
experiment runner for the estimators.

A DGP draws ``X`` from a covariate law, ``A`` from ``pi0(. | X)`` and ``Y``
from ``Bernoulli(mu0(A, X))``. Discrete DGPs list their support explicitly and
admit exact enumeration; continuous DGPs use independent uniform / normal
covariates, softmax propensities and a logistic outcome model with an
optional product term.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, softmax

from .core import ALWAYS, Dataset, EstimandSpec, Kind, XCondition
from .crossfit import FoldAssignment, LearnerConfig, NuisanceMatrices, derive_seed, \
    fit_nuisances, make_folds
from .errors import InvalidDgp, NonDiscreteDgp, PlayerEvalError
from .estimators import Estimator, estimate

__all__ = [
    "DgpSpec", "OracleValues", "generate", "exact_dataset", "oracle_exact", "oracle_mc",
    "oracle_values", "exact_eif_second_moment", "ExactPredictor", "exact_nuisances",
    "SCENARIOS", "scenario_learners", "ExperimentReport", "run_experiment", "load_fixture",
    "FIXTURES", "MIN_REPLICATIONS",
]

MIN_REPLICATIONS = 50
SCENARIOS = ("both_correct", "mu_misspecified", "pi_misspecified", "both_misspecified")
FIXTURES = {"four-cell": "four_cell.json", "four-cell-flat": "four_cell_flat.json",
            "ten-cell": "ten_cell.json", "kicker": "kicker_dgp.json"}


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Data-generating process.

    Discrete form: ``cells`` (k x p support points), ``cell_probs`` (k,),
    ``pi_table`` (k x m) and ``mu_table`` (k x m).

    Continuous form: ``covariates`` is a list like
    ``[{"dist": "uniform", "low": 0, "high": 1}, {"dist": "normal", "mean": 0, "sd": 1}]``;
    ``pi_coef`` (m x (1+p)) gives softmax scores ``b0 + b.x``; ``mu_coef``
    (m x (1+p)) and ``mu_interaction`` (m,) give
    ``logit mu0(a, x) = b0 + b.x + c * x1 * x2``.
    """
    m: int
    covariate_names: tuple
    kind: str = "discrete"
    cells: Optional[np.ndarray] = None
    cell_probs: Optional[np.ndarray] = None
    pi_table: Optional[np.ndarray] = None
    mu_table: Optional[np.ndarray] = None
    covariates: tuple = ()
    pi_coef: Optional[np.ndarray] = None
    mu_coef: Optional[np.ndarray] = None
    mu_interaction: Optional[np.ndarray] = None
    name: str = ""
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if self.m < 2:
            raise InvalidDgp("need m >= 2 players")
        if self.kind == "discrete":
            self._check_discrete()
        elif self.kind == "continuous":
            self._check_continuous()
        else:
            raise InvalidDgp(f"unknown DGP kind {self.kind!r}")

    def _check_discrete(self):
        cells = np.asarray(self.cells, dtype=float)
        if cells.ndim == 1:
            cells = cells.reshape(-1, 1)
        q = np.asarray(self.cell_probs, dtype=float)
        pi = np.asarray(self.pi_table, dtype=float)
        mu = np.asarray(self.mu_table, dtype=float)
        k = cells.shape[0]
        if q.shape != (k,) or pi.shape != (k, self.m) or mu.shape != (k, self.m):
            raise InvalidDgp("discrete tables have inconsistent shapes")
        if cells.shape[1] != len(self.covariate_names):
            raise InvalidDgp("covariate_names must match the cell dimension")
        if np.any(q < 0) or abs(q.sum() - 1) > 1e-10:
            raise InvalidDgp("cell probabilities must be non-negative and sum to one")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1) > 1e-10):
            raise InvalidDgp("propensity rows must be non-negative and sum to one")
        if np.any(mu < 0) or np.any(mu > 1):
            raise InvalidDgp("outcome probabilities must lie in [0, 1]")
        if len({tuple(c) for c in cells.tolist()}) != k:
            raise InvalidDgp("support points must be distinct")
        for name, arr in (("cells", cells), ("cell_probs", q), ("pi_table", pi),
                          ("mu_table", mu)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def _check_continuous(self):
        p = len(self.covariates)
        if p != len(self.covariate_names):
            raise InvalidDgp("covariate_names must match the covariate list")
        for c in self.covariates:
            if c.get("dist") not in ("uniform", "normal"):
                raise InvalidDgp(f"unsupported covariate distribution {c.get('dist')!r}")
        pi_coef = np.asarray(self.pi_coef, dtype=float)
        mu_coef = np.asarray(self.mu_coef, dtype=float)
        inter = np.zeros(self.m) if self.mu_interaction is None else \
            np.asarray(self.mu_interaction, dtype=float)
        if pi_coef.shape != (self.m, p + 1) or mu_coef.shape != (self.m, p + 1):
            raise InvalidDgp("coefficient arrays must be m x (1 + p)")
        if inter.shape != (self.m,) or (p < 2 and np.any(inter != 0)):
            raise InvalidDgp("mu_interaction needs length m and at least two covariates")
        object.__setattr__(self, "covariates", tuple(dict(c) for c in self.covariates))
        for name, arr in (("pi_coef", pi_coef), ("mu_coef", mu_coef), ("mu_interaction", inter)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    # -- true nuisances -----------------------------------------------------------------
    def cell_index(self, X) -> np.ndarray:
        """Support-point index of each row of ``X`` (discrete DGPs only)."""
        if not self.is_discrete:
            raise NonDiscreteDgp("continuous DGP has no finite support")
        X = np.asarray(X, dtype=float).reshape(-1, self.p)
        lookup = {tuple(c): i for i, c in enumerate(self.cells.tolist())}
        try:
            return np.array([lookup[tuple(r)] for r in X.tolist()], dtype=np.int64)
        except KeyError as exc:
            raise InvalidDgp(f"covariate vector {exc.args[0]} is not a support point") from None

    def true_pi(self, X) -> np.ndarray:
        if self.is_discrete:
            return self.pi_table[self.cell_index(X)]
        X = np.asarray(X, dtype=float).reshape(-1, self.p)
        scores = self.pi_coef[:, 0] + X @ self.pi_coef[:, 1:].T
        return softmax(scores, axis=1)

    def true_mu(self, X) -> np.ndarray:
        if self.is_discrete:
            return self.mu_table[self.cell_index(X)]
        X = np.asarray(X, dtype=float).reshape(-1, self.p)
        eta = self.mu_coef[:, 0] + X @ self.mu_coef[:, 1:].T
        if self.p >= 2:
            eta = eta + np.outer(X[:, 0] * X[:, 1], self.mu_interaction)
        return expit(eta)

    def true_mbar(self, X) -> np.ndarray:
        return np.sum(self.true_pi(X) * self.true_mu(X), axis=1)

    def with_tables(self, cell_probs=None, pi_table=None, mu_table=None) -> "DgpSpec":
        """Copy of a discrete DGP with some tables replaced."""
        if not self.is_discrete:
            raise NonDiscreteDgp("only discrete DGPs carry tables")
        return DgpSpec(self.m, self.covariate_names, "discrete", self.cells,
                       self.cell_probs if cell_probs is None else cell_probs,
                       self.pi_table if pi_table is None else pi_table,
                       self.mu_table if mu_table is None else mu_table,
                       name=self.name, seed=self.seed)

    # -- serialisation --------------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "m": self.m,
             "covariate_names": list(self.covariate_names), "seed": self.seed}
        if self.is_discrete:
            d.update(cells=self.cells.tolist(), cell_probs=self.cell_probs.tolist(),
                     pi_table=self.pi_table.tolist(), mu_table=self.mu_table.tolist())
        else:
            d.update(covariates=list(self.covariates), pi_coef=self.pi_coef.tolist(),
                     mu_coef=self.mu_coef.tolist(), mu_interaction=self.mu_interaction.tolist())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        try:
            kind = d.get("kind", "discrete")
            common = dict(m=int(d["m"]), covariate_names=d["covariate_names"], kind=kind,
                          name=d.get("name", ""), seed=int(d.get("seed", 0)))
            if kind == "discrete":
                return cls(cells=d["cells"], cell_probs=d["cell_probs"], pi_table=d["pi_table"],
                           mu_table=d["mu_table"], **common)
            return cls(covariates=tuple(d["covariates"]), pi_coef=d["pi_coef"],
                       mu_coef=d["mu_coef"], mu_interaction=d.get("mu_interaction"), **common)
        except KeyError as exc:
            raise InvalidDgp(f"DGP definition lacks field {exc.args[0]!r}") from None


def load_fixture(name: str) -> DgpSpec:
    """Load a bundled DGP by short name (see ``FIXTURES``) or from a JSON path."""
    if name in FIXTURES:
        text = resources.files("playereval").joinpath("data", FIXTURES[name]).read_text()
    else:
        try:
            with open(name) as fh:
                text = fh.read()
        except OSError:
            raise InvalidDgp(f"unknown fixture {name!r}; bundled: {sorted(FIXTURES)}") from None
    try:
        return DgpSpec.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InvalidDgp(f"fixture {name!r} is not valid JSON: {exc}") from None


# -- sampling -----------------------------------------------------------------------------

def _draw_covariates(dgp: DgpSpec, n: int, rng) -> np.ndarray:
    if dgp.is_discrete:
        idx = rng.choice(len(dgp.cell_probs), size=n, p=dgp.cell_probs)
        return dgp.cells[idx]
    cols = []
    for c in dgp.covariates:
        if c["dist"] == "uniform":
            cols.append(rng.uniform(c.get("low", 0.0), c.get("high", 1.0), size=n))
        else:
            cols.append(rng.normal(c.get("mean", 0.0), c.get("sd", 1.0), size=n))
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def generate(dgp: DgpSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. attempts; the three noise sources come from one
    seeded generator, so the dataset is a deterministic function of ``seed``."""
    if n < 1:
        raise InvalidDgp("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = _draw_covariates(dgp, n, rng)
    pi = dgp.true_pi(X)
    u_a = rng.random(n)
    A = np.minimum((np.cumsum(pi, axis=1) < u_a[:, None]).sum(axis=1), dgp.m - 1) + 1
    mu = dgp.true_mu(X)[np.arange(n), A - 1]
    Y = (rng.random(n) < mu).astype(np.int64)
    return Dataset(X, A, Y, dgp.m, covariate_names=dgp.covariate_names)


def exact_dataset(dgp: DgpSpec, n: int) -> Dataset:
    """Dataset whose empirical law equals the discrete DGP exactly.

    Every ``(cell, player)`` gets ``n * q * pi`` records of which
    ``n * q * pi * mu`` are successes; all counts must be integers.
    """
    if not dgp.is_discrete:
        raise NonDiscreteDgp("exact datasets need a finite-support DGP")
    X, A, Y = [], [], []
    for x in range(len(dgp.cell_probs)):
        for a in range(1, dgp.m + 1):
            count = n * dgp.cell_probs[x] * dgp.pi_table[x, a - 1]
            wins = count * dgp.mu_table[x, a - 1]
            c, w = round(count), round(wins)
            if abs(count - c) > 1e-9 or abs(wins - w) > 1e-9:
                raise InvalidDgp(f"n={n} does not give integer counts in cell {x}, player {a}")
            X.extend([dgp.cells[x]] * c)
            A.extend([a] * c)
            Y.extend([1] * w + [0] * (c - w))
    return Dataset(np.array(X).reshape(-1, dgp.p), A, Y, dgp.m,
                   covariate_names=dgp.covariate_names)


# -- oracles ------------------------------------------------------------------------------

def _reassigned(kind: Kind, a: int, pi: np.ndarray, mu: np.ndarray) -> np.ndarray:
    if kind is Kind.DIRECT:
        return mu[:, a - 1]
    if kind is Kind.INDIRECT:
        return np.sum(pi * mu, axis=1)
    return mu.mean(axis=1)


def _spec_weights(dgp: DgpSpec, spec: EstimandSpec) -> np.ndarray:
    """Unnormalised ``P(X = x, A in A', X in S)`` per support point."""
    S = spec.x_condition.mask(dgp.cells, dgp.covariate_names)
    players = sorted(spec.players(dgp.m))
    return dgp.cell_probs * S * dgp.pi_table[:, [b - 1 for b in players]].sum(axis=1)


def oracle_exact(dgp: DgpSpec, spec: EstimandSpec) -> float:
    """Identified parameter under the true law, by enumerating the support.

    ``P(X = x | A in A', X in S)`` follows from Bayes' rule on the covariate
    law and the propensity table; the reassigned outcome regression is then
    averaged against it.
    """
    if not dgp.is_discrete:
        raise NonDiscreteDgp("oracle_exact needs a finite-support DGP; use oracle_mc")
    if not 1 <= spec.focal_player <= dgp.m:
        raise ValueError("focal player outside 1..m")
    w = _spec_weights(dgp, spec)
    if w.sum() == 0:
        raise InvalidDgp(f"conditioning set of {spec.label()} has probability zero")
    f = _reassigned(spec.kind, spec.focal_player, dgp.pi_table, dgp.mu_table)
    return float(np.dot(w, f) / w.sum())


def exact_eif_second_moment(dgp: DgpSpec, spec: EstimandSpec) -> float:
    """``E[D(Z)^2]`` under the true law, the nonparametric efficiency bound."""
    if not dgp.is_discrete:
        raise NonDiscreteDgp("exact enumeration needs a finite-support DGP")
    psi = oracle_exact(dgp, spec)
    kappa = _spec_weights(dgp, spec).sum()
    S = spec.x_condition.mask(dgp.cells, dgp.covariate_names)
    players = sorted(spec.players(dgp.m))
    pi, mu, m, a = dgp.pi_table, dgp.mu_table, dgp.m, spec.focal_player
    f = _reassigned(spec.kind, a, pi, mu)
    total = 0.0
    for x in np.flatnonzero(S):
        pi_A = pi[x, [b - 1 for b in players]].sum()
        for b in range(1, m + 1):
            for y in (0.0, 1.0):
                prob = dgp.cell_probs[x] * pi[x, b - 1] * (mu[x, b - 1] if y else 1 - mu[x, b - 1])
                if prob == 0:
                    continue
                in_A = float(b in players)
                if spec.kind is Kind.INDIRECT:
                    d = pi_A * (y - f[x]) + in_A * (f[x] - psi)
                else:
                    g = (1.0 if b == a else 0.0) if spec.kind is Kind.DIRECT else 1.0 / m
                    d = g * pi_A / pi[x, b - 1] * (y - mu[x, b - 1]) + in_A * (f[x] - psi)
                total += prob * (d / kappa) ** 2
    return float(total)


def oracle_mc(dgp: DgpSpec, spec: EstimandSpec, draws: int = 10 ** 5, seed: int = 0) -> tuple:
    """Monte-Carlo plug-in of the true nuisances: ``(estimate, mc_se)``.

    The reassigned regression is averaged over simulated records that fall
    in the conditioning set.
    """
    if draws < 10 ** 4:
        raise ValueError("oracle_mc needs at least 10^4 draws")
    data = generate(dgp, draws, seed)
    S = spec.x_condition.mask(data.X, data.covariate_names)
    C = S & np.isin(data.A, sorted(spec.players(dgp.m)))
    if not C.any():
        raise InvalidDgp(f"no simulated record satisfies {spec.label()}")
    f = _reassigned(spec.kind, spec.focal_player, dgp.true_pi(data.X[C]), dgp.true_mu(data.X[C]))
    se = float(np.std(f, ddof=1) / np.sqrt(f.size)) if f.size > 1 else 0.0
    return float(np.mean(f)), se


@dataclass(frozen=True)
class OracleValues:
    """Exact parameters, efficiency bounds and contrasts for each player."""
    psi: dict
    eif_second_moment: dict
    contrasts: dict

    def to_dict(self) -> dict:
        def keyed(d):
            return {k: {str(a): v for a, v in per.items()} for k, per in d.items()}
        return {"psi": keyed(self.psi), "eif_second_moment": keyed(self.eif_second_moment),
                "contrasts": keyed(self.contrasts)}


def oracle_values(dgp: DgpSpec, x_condition: XCondition = ALWAYS) -> OracleValues:
    psi, moments, contrasts = {}, {}, {}
    for kind in Kind:
        psi[kind.value], moments[kind.value] = {}, {}
        for a in range(1, dgp.m + 1):
            spec = EstimandSpec(kind, a, x_condition)
            psi[kind.value][a] = oracle_exact(dgp, spec)
            moments[kind.value][a] = exact_eif_second_moment(dgp, spec)
    S = x_condition.mask(dgp.cells, dgp.covariate_names)
    for kind in (Kind.INDIRECT, Kind.RANDOM_REPLACEMENT):
        contrasts[kind.value] = {}
        for a in range(1, dgp.m + 1):
            w = dgp.cell_probs * S * dgp.pi_table[:, a - 1]
            rate = float(np.dot(w, dgp.mu_table[:, a - 1]) / w.sum())
            contrasts[kind.value][a] = rate - psi[kind.value][a]
    return OracleValues(psi, moments, contrasts)


# -- exact nuisances ----------------------------------------------------------------------

class ExactPredictor:
    """True nuisance functions exposed through the fold-predictor interface."""

    def __init__(self, dgp: DgpSpec):
        self.dgp = dgp
        self.m = dgp.m

    def predict_mu(self, X):
        return np.array(self.dgp.true_mu(X))

    def predict_mbar(self, X):
        return np.array(self.dgp.true_mbar(X))

    def predict_pi(self, X):
        return np.array(self.dgp.true_pi(X))


def exact_nuisances(dgp: DgpSpec, data: Dataset, folds: Optional[FoldAssignment] = None,
                    x_condition: XCondition = ALWAYS) -> NuisanceMatrices:
    """Nuisance matrices holding the true ``mu0``, ``m``, ``pi0`` for every record."""
    pred = ExactPredictor(dgp)
    player_marg = x_marg = None
    predictors = ()
    if folds is not None:
        player_marg = np.empty((folds.J, data.m))
        x_marg = np.empty(folds.J)
        mask = x_condition.mask(data.X, data.covariate_names)
        for j in range(folds.J):
            T = folds.training(j)
            player_marg[j] = np.bincount(data.A[T] - 1, minlength=data.m) / T.size
            x_marg[j] = mask[T].mean()
        predictors = tuple(pred for _ in range(folds.J))
    return NuisanceMatrices(pred.predict_mu(data.X), pred.predict_mbar(data.X),
                            pred.predict_pi(data.X), folds, player_marg, x_marg, x_condition,
                            predictors)


# -- experiments --------------------------------------------------------------------------

DEFAULT_LIBRARY = ({"kind": "mean"}, {"kind": "logistic", "ridge": 1e-6})
MEAN_ONLY = ({"kind": "mean"},)


def scenario_learners(scenario: str, library: Sequence[dict] = DEFAULT_LIBRARY,
                      stack_folds: int = 5) -> LearnerConfig:
    """Learner configuration for a misspecification scenario.

    A misspecified nuisance is fit with the mean-only learner; the outcome
    scenario restricts both the outcome regression and the marginal outcome
    regression.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    full = tuple(library)
    outcome = MEAN_ONLY if scenario in ("mu_misspecified", "both_misspecified") else full
    propensity = MEAN_ONLY if scenario in ("pi_misspecified", "both_misspecified") else full
    return LearnerConfig(outcome=outcome, propensity=propensity, marginal_outcome=outcome,
                         stack_folds=stack_folds)


REPORT_COLUMNS = ("scenario", "estimator", "estimand", "player", "n", "replications",
                  "failures", "truth", "mean_estimate", "bias", "empirical_se", "mc_se",
                  "mean_estimated_se", "se_ratio", "coverage", "bias_over_mc_se",
                  "max_abs_eif_mean")


@dataclass
class ExperimentReport:
    """Per-replication estimates plus per (estimator, estimand) summaries."""
    scenario: str
    n: int
    replications: int
    seed: int
    truths: dict
    estimates: dict
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    level: float = 0.95

    def row(self, estimator: str, estimand: str) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["estimand"] == estimand:
                return r
        raise KeyError((estimator, estimand))

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "n": self.n, "replications": self.replications,
                "seed": self.seed, "level": self.level, "warnings": list(self.warnings),
                "truths": self.truths, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS + ("warning",), lineterminator="\n")
        w.writeheader()
        flag = "; ".join(self.warnings)
        for r in self.rows:
            w.writerow({**{k: _fmt(r[k]) for k in REPORT_COLUMNS}, "warning": flag})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return "" if v is None else v


def _summarise(arr: np.ndarray, truth: float):
    """``arr`` holds one row per replication: estimate, se, ci_lo, ci_hi, eif mean."""
    arr = arr[np.isfinite(arr[:, 0])]
    est, se, lo, hi, eif_mean = arr.T
    R = est.size
    if R == 0:
        return dict(mean_estimate=np.nan, bias=np.nan, empirical_se=np.nan, mc_se=np.nan,
                    mean_estimated_se=np.nan, se_ratio=np.nan, coverage=np.nan,
                    bias_over_mc_se=np.nan, max_abs_eif_mean=np.nan)
    bias = float(est.mean() - truth)
    emp = float(np.std(est, ddof=1)) if R > 1 else np.nan
    mc = float(emp / np.sqrt(R)) if R > 1 else np.nan
    has_se = np.all(np.isfinite(se))
    mean_se = float(se.mean()) if has_se else np.nan
    cover = float(np.mean((lo <= truth) & (truth <= hi))) if has_se else np.nan
    return dict(mean_estimate=float(est.mean()), bias=bias, empirical_se=emp, mc_se=mc,
                mean_estimated_se=mean_se,
                se_ratio=mean_se / emp if has_se and emp > 0 else np.nan,
                coverage=cover, bias_over_mc_se=float(abs(bias) / mc) if mc > 0 else np.nan,
                max_abs_eif_mean=float(np.max(np.abs(eif_mean))) if has_se else np.nan)


def run_experiment(dgp: DgpSpec, scenario: str = "both_correct", n: int = 2000,
                   replications: int = 200, estimators=("substitution", "onestep", "tmle"),
                   seed: int = 0, kinds=tuple(Kind), player: int = 1, folds: int = 5,
                   library: Sequence[dict] = DEFAULT_LIBRARY, level: float = 0.95,
                   epsilon_pool: bool = True, x_condition: XCondition = ALWAYS,
                   truth_draws: int = 10 ** 6,
                   progress: Optional[Callable[[int], None]] = None) -> ExperimentReport:
    """Monte-Carlo study of the estimators against the oracle truth.

    Replication ``r`` draws its data with ``derive_seed(seed, r)`` and its
    folds with ``derive_seed(seed, r, 1)``, so results do not depend on the
    order in which replications run. A replication whose estimation raises
    a package error is counted under ``failures`` and excluded.
    """
    estimators = [Estimator.parse(e) for e in estimators]
    kinds = [Kind.parse(k) for k in kinds]
    config = scenario_learners(scenario, library)
    specs = {k: EstimandSpec(k, player, x_condition) for k in kinds}
    if dgp.is_discrete:
        truths = {k.value: oracle_exact(dgp, s) for k, s in specs.items()}
    else:
        truths = {k.value: oracle_mc(dgp, s, truth_draws, derive_seed(seed, 10 ** 9))[0]
                  for k, s in specs.items()}
    report_warnings = []
    if replications < MIN_REPLICATIONS:
        msg = f"replications={replications} is below the recommended minimum of {MIN_REPLICATIONS}"
        warnings.warn(msg)
        report_warnings.append(msg)

    keys = [(e.value, k.value) for e in estimators for k in kinds]
    store = {key: np.full((replications, 5), np.nan) for key in keys}
    failures = {key: 0 for key in keys}
    for r in range(replications):
        data = generate(dgp, n, derive_seed(seed, r))
        try:
            fa = make_folds(n, data.A, folds, derive_seed(seed, r, 1), m=data.m)
            nuis = fit_nuisances(data, fa, config, x_condition, seed=derive_seed(seed, r, 2))
        except PlayerEvalError:
            for key in keys:
                failures[key] += 1
            continue
        for k, spec in specs.items():
            for e in estimators:
                key = (e.value, k.value)
                try:
                    res = estimate(data, spec, nuis, e, level, epsilon_pool)
                except PlayerEvalError:
                    failures[key] += 1
                    continue
                lo, hi = res.ci if res.ci is not None else (np.nan, np.nan)
                eif_mean = np.nan if res.eif_mean is None else res.eif_mean
                store[key][r] = (res.psi, np.nan if res.se is None else res.se, lo, hi, eif_mean)
        if progress is not None:
            progress(r)

    rows = []
    for (e, k), arr in store.items():
        summary = _summarise(arr, truths[k])
        rows.append({"scenario": scenario, "estimator": e, "estimand": k, "player": player,
                     "n": n, "replications": replications, "failures": failures[(e, k)],
                     "truth": truths[k], **summary})
    estimates = {f"{e}/{k}": arr for (e, k), arr in store.items()}
    return ExperimentReport(scenario, n, replications, seed, truths, estimates, rows,
                            report_warnings, level)
