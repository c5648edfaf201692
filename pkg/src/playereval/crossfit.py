"""Player-stratified folds and cross-fitted nuisance predictions."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ALWAYS, Dataset, XCondition
from .errors import InsufficientPlayerData
from .learners import PROB_CLIP, clip_prob, fit_propensity, fit_super_learner

__all__ = [
    "FoldAssignment", "LearnerConfig", "NuisanceMatrices", "FoldPredictor", "make_folds",
    "default_fold_count", "fit_nuisances", "outcome_features", "derive_seed",
    "players_missing_from_training",
]


def derive_seed(*parts: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def default_fold_count(n: int) -> int:
    return 10 if n >= 5000 else 5


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """``fold[i]`` is the (0-based) validation fold of record ``i``."""
    J: int
    fold: np.ndarray
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.fold)

    def validation(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold == j)

    def training(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold != j)

    @property
    def validation_sets(self) -> list:
        return [self.validation(j) for j in range(self.J)]

    @property
    def training_sets(self) -> list:
        return [self.training(j) for j in range(self.J)]

    def __eq__(self, other):
        return isinstance(other, FoldAssignment) and self.J == other.J \
            and np.array_equal(self.fold, other.fold)


def players_missing_from_training(fold, players, J: int, m: Optional[int] = None) -> list:
    """Players absent from at least one training set ``T_j``."""
    fold = np.asarray(fold)
    players = np.asarray(players)
    universe = range(1, m + 1) if m is not None else sorted(set(players.tolist()))
    missing = []
    for a in universe:
        occupied = set(fold[players == a].tolist())
        # a player is missing from T_j exactly when all its records sit in V_j
        if len(occupied) <= 1:
            missing.append(a)
    return missing


def make_folds(n: int, players, J: int, seed: int = 0, m: Optional[int] = None) -> FoldAssignment:
    """Split ``0..n-1`` into J validation folds, stratified by player.

    Each player's records are shuffled with a seeded generator and dealt
    round-robin, continuing the deal where the previous player stopped, so
    fold sizes differ by at most one and every player with two or more
    records appears in every training set.
    """
    players = np.asarray(players)
    if len(players) != n:
        raise ValueError("players must have length n")
    if J < 2:
        raise ValueError("need at least two folds")
    if n < J:
        raise ValueError(f"cannot split {n} records into {J} folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=np.int64)
    offset = 0
    for a in sorted(set(players.tolist())):
        idx = np.flatnonzero(players == a)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = (offset + np.arange(idx.size)) % J
        offset = (offset + idx.size) % J
    missing = players_missing_from_training(fold, players, J, m)
    if missing:
        a = missing[0]
        raise InsufficientPlayerData(a, int(np.sum(players == a)))
    return FoldAssignment(J, fold, seed)


DEFAULT_CANDIDATES = (
    {"kind": "mean"},
    {"kind": "logistic", "ridge": 1e-6},
    {"kind": "boosted_stumps", "rounds": 50, "shrinkage": 0.1},
)


@dataclass(frozen=True)
class LearnerConfig:
    """Candidate libraries for the three nuisance regressions.

    ``marginal_outcome`` defaults to the outcome library. ``interactions``
    adds covariate-by-player products to the outcome design so a logistic
    candidate can fit player-specific slopes.
    """
    outcome: tuple = DEFAULT_CANDIDATES
    propensity: tuple = DEFAULT_CANDIDATES
    marginal_outcome: Optional[tuple] = None
    stack_folds: int = 5
    interactions: bool = True

    def __post_init__(self):
        object.__setattr__(self, "outcome", tuple(dict(c) for c in self.outcome))
        object.__setattr__(self, "propensity", tuple(dict(c) for c in self.propensity))
        if self.marginal_outcome is None:
            object.__setattr__(self, "marginal_outcome", self.outcome)
        else:
            object.__setattr__(self, "marginal_outcome",
                               tuple(dict(c) for c in self.marginal_outcome))
        if self.stack_folds < 2:
            raise ValueError("stack_folds must be >= 2")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "LearnerConfig":
        d = dict(d or {})
        kwargs = {}
        for key in ("outcome", "propensity", "marginal_outcome"):
            if d.get(key) is not None:
                kwargs[key] = tuple(d[key])
        for key in ("stack_folds", "interactions"):
            if key in d:
                kwargs[key] = d[key]
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {"outcome": list(self.outcome), "propensity": list(self.propensity),
                "marginal_outcome": list(self.marginal_outcome),
                "stack_folds": self.stack_folds, "interactions": self.interactions}


def outcome_features(X, players, m: int, interactions: bool = True) -> np.ndarray:
    """Design for the outcome regression: covariates, player one-hot, and
    optionally covariate-by-player products."""
    X = np.asarray(X, dtype=float)
    players = np.broadcast_to(np.asarray(players), (X.shape[0],))
    onehot = np.zeros((X.shape[0], m))
    onehot[np.arange(X.shape[0]), players - 1] = 1.0
    blocks = [X, onehot]
    if interactions and X.shape[1]:
        blocks.append((X[:, :, None] * onehot[:, None, :]).reshape(X.shape[0], -1))
    return np.hstack(blocks)


class FoldPredictor:
    """Nuisance functions fitted on one training fold, usable on any rows."""

    def __init__(self, outcome_model, marginal_model, propensity_model, m: int,
                 interactions: bool):
        self.outcome_model = outcome_model
        self.marginal_model = marginal_model
        self.propensity_model = propensity_model
        self.m = m
        self.interactions = interactions

    def predict_mu(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], self.m))
        for a in range(1, self.m + 1):
            out[:, a - 1] = self.outcome_model.predict(
                outcome_features(X, a, self.m, self.interactions))
        return clip_prob(out)

    def predict_mbar(self, X) -> np.ndarray:
        return clip_prob(self.marginal_model.predict(np.asarray(X, dtype=float)))

    def predict_pi(self, X) -> np.ndarray:
        return self.propensity_model.predict(np.asarray(X, dtype=float))


@dataclass(frozen=True, eq=False)
class NuisanceMatrices:
    """Out-of-sample nuisance predictions for every record and player.

    ``mu[i, a-1]`` and ``pi[i, a-1]`` come from the fold that held record
    ``i`` out. ``player_marginals[j, a-1]`` and ``x_marginals[j]`` are the
    empirical frequencies of player ``a`` and of the covariate condition in
    training set ``T_j``. ``predictors[j]`` re-evaluates fold ``j``'s fitted
    nuisances on arbitrary rows (needed by fold-wise targeting).
    """
    mu: np.ndarray
    m_bar: np.ndarray
    pi: np.ndarray
    folds: Optional[FoldAssignment] = None
    player_marginals: Optional[np.ndarray] = None
    x_marginals: Optional[np.ndarray] = None
    x_condition: XCondition = ALWAYS
    predictors: tuple = field(default=(), repr=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        m_bar = np.asarray(self.m_bar, dtype=float).ravel()
        if mu.ndim != 2 or pi.shape != mu.shape or m_bar.shape[0] != mu.shape[0]:
            raise ValueError("mu, pi must be n x m and m_bar length n")
        if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-10, rtol=0):
            raise ValueError("propensity rows must be non-negative and sum to one")
        for name, arr in (("mu", mu), ("m_bar", m_bar), ("pi", pi)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def m(self) -> int:
        return self.mu.shape[1]

    @property
    def fold_marginals(self) -> dict:
        return {"player": self.player_marginals, "x_condition": self.x_marginals}


def _fit_fold(data: Dataset, folds: FoldAssignment, j: int, config: LearnerConfig,
              x_condition: XCondition, seed: int):
    train = folds.training(j)
    val = folds.validation(j)
    X, A, Y, m = data.X, data.A, data.Y, data.m
    fold_seed = derive_seed(seed, j)
    Xt = X[train]
    outcome = fit_super_learner(outcome_features(Xt, A[train], m, config.interactions),
                                Y[train], config.outcome, config.stack_folds, fold_seed)
    marginal = fit_super_learner(Xt, Y[train], config.marginal_outcome, config.stack_folds,
                                 fold_seed + 1)
    propensity = fit_propensity(Xt, A[train], m, config.propensity, config.stack_folds,
                                fold_seed + 2)
    predictor = FoldPredictor(outcome, marginal, propensity, m, config.interactions)
    Xv = X[val]
    player_marg = np.bincount(A[train] - 1, minlength=m) / train.size
    x_marg = float(x_condition.mask(Xt, data.covariate_names).mean())
    return (val, predictor.predict_mu(Xv), predictor.predict_mbar(Xv), predictor.predict_pi(Xv),
            player_marg, x_marg, predictor)


def fit_nuisances(data: Dataset, folds: FoldAssignment, learner_config=None,
                  x_condition: XCondition = ALWAYS, seed: int = 0,
                  n_jobs: int = 1) -> NuisanceMatrices:
    """Cross-fit the outcome regression, marginal outcome regression and
    propensity model.

    For every fold ``j`` the three models are trained on ``T_j`` and evaluated
    on ``V_j`` for every player. Folds are independent; with ``n_jobs > 1``
    they run on a thread pool and are reassembled in fold order, so the
    result does not depend on scheduling.
    """
    if isinstance(learner_config, LearnerConfig):
        config = learner_config
    else:
        config = LearnerConfig.from_dict(learner_config)
    if folds.n != data.n:
        raise ValueError("fold assignment does not match the dataset size")
    n, m = data.n, data.m
    mu = np.empty((n, m))
    m_bar = np.empty(n)
    pi = np.empty((n, m))
    player_marg = np.empty((folds.J, m))
    x_marg = np.empty(folds.J)
    predictors = [None] * folds.J

    def work(j):
        return _fit_fold(data, folds, j, config, x_condition, seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, range(folds.J)))
    else:
        results = [work(j) for j in range(folds.J)]
    for j, (val, mu_v, mbar_v, pi_v, pm, xm, pred) in enumerate(results):
        mu[val] = mu_v
        m_bar[val] = mbar_v
        pi[val] = pi_v
        player_marg[j] = pm
        x_marg[j] = xm
        predictors[j] = pred
    return NuisanceMatrices(mu, m_bar, pi, folds, player_marg, x_marg, x_condition,
                            tuple(predictors))
