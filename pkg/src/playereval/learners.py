"""Probabilistic binary learners, a log-loss Super Learner and a one-vs-rest
propensity model.

Every learner predicts probabilities clipped to ``[PROB_CLIP, 1 - PROB_CLIP]``.
Candidate learners are described by plain dictionaries so they can live in a
JSON config file::

    {"kind": "mean"}
    {"kind": "logistic", "ridge": 1e-6}
    {"kind": "boosted_stumps", "rounds": 50, "shrinkage": 0.1}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from .errors import DegeneratePlayer, EmptyData, NonFinite, SingularSystem

PROB_CLIP = 1e-6
DEFAULT_RIDGE = 1e-6

__all__ = [
    "PROB_CLIP", "clip_prob", "log_loss", "BinaryLearnerModel", "MeanModel", "LogisticModel",
    "BoostedStumpsModel", "SuperLearnerModel", "PropensityModel", "fit_mean", "fit_logistic",
    "fit_boosted_stumps", "fit_candidate", "fit_super_learner", "fit_propensity",
    "project_to_simplex",
]


def clip_prob(p):
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def log_loss(y, p) -> float:
    """Mean Bernoulli negative log-likelihood."""
    y = np.asarray(y, dtype=float)
    p = clip_prob(np.asarray(p, dtype=float))
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _as_matrix(features, n: Optional[int] = None) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if n is None or X.size == n else X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError("features must be a 2-d array")
    return X


def _as_targets(targets) -> np.ndarray:
    y = np.asarray(targets, dtype=float).ravel()
    if y.size == 0:
        raise EmptyData("no training targets")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("targets must be 0/1")
    return y


class BinaryLearnerModel:
    kind = "base"

    def linear_predictor(self, features) -> np.ndarray:
        raise NotImplementedError

    def predict(self, features) -> np.ndarray:
        return clip_prob(expit(self.linear_predictor(features)))


@dataclass(frozen=True)
class MeanModel(BinaryLearnerModel):
    rate: float
    kind = "mean"

    def linear_predictor(self, features):
        n = _as_matrix(features).shape[0]
        return np.full(n, logit(clip_prob(self.rate)))

    def predict(self, features):
        n = _as_matrix(features).shape[0]
        return np.full(n, float(clip_prob(self.rate)))


@dataclass(frozen=True, eq=False)
class LogisticModel(BinaryLearnerModel):
    """Fitted logistic regression on the original feature scale."""
    intercept: float
    coef: np.ndarray
    converged: bool = True
    iterations: int = 0
    max_score: float = 0.0
    kind = "logistic"

    def linear_predictor(self, features, offset=None):
        X = _as_matrix(features)
        eta = self.intercept + X @ self.coef if X.shape[1] else np.full(X.shape[0], self.intercept)
        if offset is not None:
            eta = eta + np.asarray(offset, dtype=float)
        return eta

    def predict(self, features, offset=None):
        return clip_prob(expit(self.linear_predictor(features, offset)))


@dataclass(frozen=True)
class BoostedStumpsModel(BinaryLearnerModel):
    """Additive model of depth-one trees on the logit scale.

    ``stumps`` holds ``(feature, threshold, left, right)`` tuples; a feature of
    -1 marks a split-free round that shifts every prediction by ``left``.
    """
    init: float
    stumps: tuple
    shrinkage: float
    loss_trace: tuple = ()
    kind = "boosted_stumps"

    def linear_predictor(self, features):
        X = _as_matrix(features)
        F = np.full(X.shape[0], self.init)
        for f, thr, left, right in self.stumps:
            if f < 0:
                F += self.shrinkage * left
            else:
                F += self.shrinkage * np.where(X[:, f] <= thr, left, right)
        return F


def fit_mean(targets) -> MeanModel:
    y = np.asarray(targets, dtype=float).ravel()
    if y.size == 0:
        raise EmptyData("no training targets")
    return MeanModel(float(y.mean()))


def fit_logistic(features, targets, ridge: float = DEFAULT_RIDGE, offset=None,
                 intercept: bool = True, max_iter: int = 100, tol: float = 1e-9) -> LogisticModel:
    """Ridge-penalised logistic regression by Newton / IRLS.

    Features are standardised internally; the objective is the mean Bernoulli
    log-likelihood minus ``ridge / 2`` times the squared norm of the
    standardised slopes (the intercept is not penalised). Zero-variance
    columns are not identified and receive a coefficient of exactly 0.
    Iteration stops once the largest absolute entry of the penalised score is
    below ``tol`` or after ``max_iter`` Newton steps.
    """
    y = _as_targets(targets)
    n = y.size
    X = _as_matrix(features, n)
    if X.shape[0] != n:
        raise ValueError("features and targets have different lengths")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if not np.all(np.isfinite(X)):
        raise NonFinite("features contain non-finite values")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float).ravel()
    if not np.all(np.isfinite(off)):
        raise NonFinite("offset contains non-finite values")

    p = X.shape[1]
    center = X.mean(axis=0) if p else np.zeros(0)
    scale = X.std(axis=0) if p else np.zeros(0)
    active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    Z = (X[:, active] - center[active]) / scale[active]
    D = np.hstack([np.ones((n, 1)), Z]) if intercept else Z
    k = D.shape[1]
    pen = np.full(k, ridge)
    if intercept:
        pen[0] = 0.0

    def objective(theta):
        eta = off + D @ theta
        return np.mean(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(pen * theta ** 2)

    theta = np.zeros(k)
    if intercept:
        # start from the offset-free mean; Newton corrects for any offset
        theta[0] = logit(np.clip(y.mean(), 1e-3, 1 - 1e-3)) if offset is None else 0.0
    converged = k == 0
    it = 0
    score = np.zeros(k)
    obj = objective(theta) if k else 0.0
    while k and it < max_iter:
        mu = expit(off + D @ theta)
        score = D.T @ (y - mu) / n - pen * theta
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        w = mu * (1 - mu)
        H = (D * w[:, None]).T @ D / n + np.diag(pen)
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            raise SingularSystem("penalised normal equations are singular") from None
        if not np.all(np.isfinite(step)) or np.linalg.cond(H) > 1e15:
            raise SingularSystem("penalised normal equations are numerically singular")
        t = 1.0
        while True:
            cand = theta + t * step
            new_obj = objective(cand)
            if new_obj >= obj - 1e-15 * max(1.0, abs(obj)) or t < 1e-10:
                break
            t *= 0.5
        theta, obj = cand, new_obj
        it += 1
    else:
        if k:
            mu = expit(off + D @ theta)
            score = D.T @ (y - mu) / n - pen * theta
            converged = bool(np.max(np.abs(score)) < tol)

    coef = np.zeros(p)
    slopes = theta[1:] if intercept else theta
    coef[active] = slopes / scale[active]
    b0 = (theta[0] if intercept else 0.0) - float(np.sum(coef[active] * center[active]))
    return LogisticModel(float(b0), coef, converged, it,
                         float(np.max(np.abs(score))) if k else 0.0)


def fit_boosted_stumps(features, targets, rounds: int = 50, shrinkage: float = 0.1,
                       max_leaves: int = 2, reg_lambda: float = 1.0) -> BoostedStumpsModel:
    """Gradient boosting of depth-one trees on the logistic loss.

    Each round scans every midpoint between sorted unique feature values and
    keeps the split with the largest second-order loss reduction; leaf values
    are Newton steps ``sum(g) / (sum(h) + reg_lambda)``. Ties go to the lowest
    feature index, then the lowest threshold. No subsampling.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not 0 < shrinkage <= 1:
        raise ValueError("shrinkage must lie in (0, 1]")
    if max_leaves != 2:
        raise ValueError("only depth-one trees (max_leaves=2) are supported")
    y = _as_targets(targets)
    n = y.size
    X = _as_matrix(features, n)
    if not np.all(np.isfinite(X)):
        raise NonFinite("features contain non-finite values")

    init = float(logit(clip_prob(y.mean())))
    F = np.full(n, init)
    p = X.shape[1]
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    # split after sorted position k is allowed only between distinct values
    valid = xs[1:] > xs[:-1] if n > 1 else np.zeros((0, p), dtype=bool)
    thresholds = 0.5 * (xs[1:] + xs[:-1]) if n > 1 else np.zeros((0, p))

    stumps = []
    trace = [log_loss(y, expit(F))]
    for _ in range(rounds):
        prob = expit(F)
        g = y - prob
        h = prob * (1 - prob)
        G, Hs = g.sum(), h.sum()
        base = G * G / (Hs + reg_lambda)
        best = None
        if valid.any():
            GL = np.cumsum(g[order], axis=0)[:-1]
            HL = np.cumsum(h[order], axis=0)[:-1]
            GR, HR = G - GL, Hs - HL
            gain = GL ** 2 / (HL + reg_lambda) + GR ** 2 / (HR + reg_lambda) - base
            gain = np.where(valid, gain, -np.inf)
            # column-major flattening -> lowest feature first, then lowest threshold
            flat = int(np.argmax(gain.T))
            f, k = divmod(flat, gain.shape[0])
            if gain[k, f] > 1e-12:
                best = (f, k)
        if best is None:
            stumps.append((-1, 0.0, G / (Hs + reg_lambda), 0.0))
            F = F + shrinkage * stumps[-1][2]
        else:
            f, k = best
            left = GL[k, f] / (HL[k, f] + reg_lambda)
            right = GR[k, f] / (HR[k, f] + reg_lambda)
            thr = float(thresholds[k, f])
            stumps.append((f, thr, float(left), float(right)))
            F = F + shrinkage * np.where(X[:, f] <= thr, left, right)
        trace.append(log_loss(y, expit(F)))
    return BoostedStumpsModel(init, tuple(stumps), float(shrinkage), tuple(trace))


def fit_candidate(config: dict, features, targets) -> BinaryLearnerModel:
    """Fit one candidate learner described by a config dictionary."""
    kind = config.get("kind")
    if kind == "mean":
        return fit_mean(targets)
    if kind == "logistic":
        return fit_logistic(features, targets, ridge=config.get("ridge", DEFAULT_RIDGE))
    if kind == "boosted_stumps":
        return fit_boosted_stumps(features, targets, rounds=config.get("rounds", 50),
                                  shrinkage=config.get("shrinkage", 0.1),
                                  reg_lambda=config.get("reg_lambda", 1.0))
    raise ValueError(f"unknown learner kind {kind!r}")


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css - 1)[0][-1]
    tau = (css[rho] - 1) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


@dataclass(frozen=True, eq=False)
class SuperLearnerModel(BinaryLearnerModel):
    """Convex combination of candidate learners.

    ``cv_losses`` is empty when there is a single candidate, since no
    stacking is needed in that case.
    """
    models: tuple
    weights: np.ndarray
    configs: tuple
    cv_losses: tuple = ()
    ensemble_cv_loss: float = float("nan")
    cv_predictions: Optional[np.ndarray] = field(default=None, repr=False)
    kind = "super_learner"

    def predict(self, features):
        X = _as_matrix(features)
        out = np.zeros(X.shape[0])
        for w, model in zip(self.weights, self.models):
            if w > 0:
                out += w * model.predict(X)
        return clip_prob(out)

    def linear_predictor(self, features):
        return logit(self.predict(features))


def _simplex_log_loss_weights(P, y, iterations=500, step=0.1, tol=1e-9):
    """Projected gradient descent for the stacking weights.

    Starts at the best single candidate and only accepts loss-decreasing
    moves, so the result never does worse than that candidate. The step
    doubles after each accepted move and halves on rejection.
    """
    C = P.shape[1]

    def loss(w):
        return log_loss(y, P @ w)

    w = np.zeros(C)
    w[int(np.argmin([log_loss(y, P[:, c]) for c in range(C)]))] = 1.0
    cur = loss(w)
    t = step
    for _ in range(iterations):
        q = clip_prob(P @ w)
        grad = -((y / q - (1 - y) / (1 - q))[:, None] * P).mean(axis=0)
        while t > 1e-12:
            cand = project_to_simplex(w - t * grad)
            new = loss(cand)
            if new < cur:
                break
            t *= 0.5
        else:
            break
        improvement = cur - new
        w, cur = cand, new
        if improvement < tol:
            break
        t *= 2.0
    w = np.where(w < 1e-12, 0.0, w)
    return w / w.sum(), cur


def _cv_folds(n: int, K: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[perm] = np.arange(n) % K
    return fold


def fit_super_learner(features, targets, candidates: Sequence[dict], folds: int = 5,
                      seed: int = 0) -> SuperLearnerModel:
    """K-fold stacked ensemble under Bernoulli log loss.

    Each candidate is fit on K-1 folds and predicts the held-out fold; the
    simplex weights minimising the log loss of the averaged held-out
    probabilities are then found by projected gradient descent, and the
    candidates with non-zero weight are refit on all rows.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("at least one candidate learner is required")
    y = _as_targets(targets)
    X = _as_matrix(features, y.size)
    if len(candidates) == 1:
        model = fit_candidate(candidates[0], X, y)
        return SuperLearnerModel((model,), np.array([1.0]), tuple(candidates))
    if folds < 2:
        raise ValueError("folds must be >= 2")
    n = y.size
    if n < folds:
        raise ValueError(f"need at least {folds} rows for {folds}-fold stacking")
    fold = _cv_folds(n, folds, seed)
    P = np.zeros((n, len(candidates)))
    for k in range(folds):
        val = fold == k
        for c, cfg in enumerate(candidates):
            P[val, c] = fit_candidate(cfg, X[~val], y[~val]).predict(X[val])
    cv_losses = tuple(log_loss(y, P[:, c]) for c in range(P.shape[1]))
    weights, ens_loss = _simplex_log_loss_weights(P, y)
    models = tuple(fit_candidate(cfg, X, y) if w > 0 else None
                   for cfg, w in zip(candidates, weights))
    return SuperLearnerModel(models, weights, tuple(candidates), cv_losses, ens_loss, P)


@dataclass(frozen=True)
class PropensityModel:
    """One-vs-rest player assignment model; rows are normalised to sum to one."""
    models: tuple
    m: int

    def predict(self, features) -> np.ndarray:
        X = _as_matrix(features)
        raw = np.column_stack([mod.predict(X) for mod in self.models])
        pi = raw / raw.sum(axis=1, keepdims=True)
        pi = np.maximum(pi, PROB_CLIP)
        return pi / pi.sum(axis=1, keepdims=True)


def fit_propensity(features, players, m: int, candidates: Sequence[dict], folds: int = 5,
                   seed: int = 0) -> PropensityModel:
    players = np.asarray(players).ravel()
    if m < 2:
        raise ValueError("propensity model needs m >= 2 players")
    if players.size == 0:
        raise EmptyData("no training rows")
    if players.min() < 1 or players.max() > m:
        raise ValueError(f"player indices must lie in 1..{m}")
    X = _as_matrix(features, players.size)
    counts = np.bincount(players - 1, minlength=m)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0]) + 1
        raise DegeneratePlayer(f"player {missing} has no training observations")
    models = tuple(fit_super_learner(X, (players == a).astype(float), candidates, folds,
                                     seed + a)
                   for a in range(1, m + 1))
    return PropensityModel(models, m)
