"""Substitution, one-step and cross-fitted TMLE estimators of the direct,
indirect and random-replacement parameters, with EIF-based inference.

All three parameters share one form. With ``S`` the covariate condition,
``A'`` the player condition, ``g(a' | X)`` the reassignment distribution and
``kappa = P(A in A', X in S)``::

    psi = E[ sum_a' g(a'|X) mu(a', X) | A in A', X in S ]

and for direct / random replacement the influence function is::

    1(S)/kappa * [ sum_a' g(a'|X) 1(A=a') pi(A'|X)/pi(a'|X) (Y - mu(a', X))
                   + 1(A in A') (sum_a' g(a'|X) mu(a', X) - psi) ]

Indirect standardisation (``g = pi``) collapses to::

    1(S)/kappa * [ pi(A'|X) (Y - m(X)) + 1(A in A') (m(X) - psi) ]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .core import ALWAYS, Dataset, EstimandSpec, Kind, XCondition, conditioning_mask
from .crossfit import FoldAssignment, NuisanceMatrices
from .errors import (DegenerateEif, EmptyConditioningSet, FluctuationDiverged, NonDiscreteDgp,
                     NonFinite)
from .stats import two_sided_z

__all__ = [
    "Estimator", "EstimateResult", "ContrastResult", "estimate_substitution", "compute_eif",
    "estimate_onestep", "estimate_tmle", "estimate", "estimate_contrast", "wald_ci",
    "solve_fluctuation", "check_von_mises_remainder", "von_mises_terms", "EIF_TOL",
]

EIF_TOL = 1e-6
EPSILON_BOUND = 10.0
SMALL_SAMPLE = 10


class Estimator(str, Enum):
    SUBSTITUTION = "substitution"
    ONESTEP = "onestep"
    TMLE = "tmle"

    @classmethod
    def parse(cls, value) -> "Estimator":
        if isinstance(value, Estimator):
            return value
        v = str(value).lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == v:
                return member
        raise ValueError(f"unknown estimator {value!r}")


@dataclass(frozen=True, eq=False)
class EstimateResult:
    psi: float
    eif: np.ndarray
    se: Optional[float]
    ci: Optional[tuple]
    estimator: Estimator
    spec: EstimandSpec
    level: float = 0.95
    flags: frozenset = frozenset()
    epsilon: dict = field(default_factory=dict)

    @property
    def eif_mean(self) -> Optional[float]:
        return float(np.mean(self.eif)) if len(self.eif) else None

    def to_dict(self) -> dict:
        return {
            "player": self.spec.focal_player,
            "estimand": self.spec.kind.value,
            "estimator": self.estimator.value,
            "psi": self.psi,
            "se": self.se,
            "ci": list(self.ci) if self.ci is not None else None,
            "level": self.level,
            "eif_mean": self.eif_mean,
            "flags": sorted(self.flags),
        }


@dataclass(frozen=True, eq=False)
class ContrastResult:
    """Empirical success rate minus a counterfactual parameter."""
    delta: float
    se: float
    ci: Optional[tuple]
    kind: str
    spec: EstimandSpec
    empirical_rate: float
    psi: float
    eif: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    level: float = 0.95
    flags: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {"player": self.spec.focal_player, "kind": self.kind, "delta": self.delta,
                "se": self.se, "ci": list(self.ci) if self.ci is not None else None,
                "level": self.level, "empirical_rate": self.empirical_rate, "psi": self.psi,
                "flags": sorted(self.flags)}


def wald_ci(psi: float, eif, n: int, level: float = 0.95) -> tuple:
    """``psi +/- z_{(1+level)/2} * sd(eif) / sqrt(n)``."""
    if n < 2:
        raise ValueError("need n >= 2 for a Wald interval")
    sd = float(np.std(np.asarray(eif, dtype=float)))
    if sd == 0.0:
        raise DegenerateEif("influence function has zero variance")
    half = two_sided_z(level) * sd / np.sqrt(n)
    return (float(psi - half), float(psi + half))


class _Context:
    """Per-(data, spec, nuisances) quantities shared by every estimator."""

    def __init__(self, data: Dataset, spec: EstimandSpec, nuis: NuisanceMatrices):
        if nuis.n != data.n or nuis.m != data.m:
            raise ValueError("nuisance matrices do not match the dataset")
        if not 1 <= spec.focal_player <= data.m:
            raise ValueError(f"focal player {spec.focal_player} outside 1..{data.m}")
        self.data, self.spec, self.nuis = data, spec, nuis
        self.a = spec.focal_player
        self.S = spec.x_condition.mask(data.X, data.covariate_names)
        players = sorted(spec.players(data.m))
        self.in_A = np.isin(data.A, players)
        self.C = conditioning_mask(data, spec)
        if not self.C.any():
            raise EmptyConditioningSet(f"no records satisfy {spec.label()}")
        self.pi_Aprime = nuis.pi[:, [b - 1 for b in players]].sum(axis=1)
        self.rows = np.arange(data.n)
        if spec.kind is Kind.DIRECT:
            self.targets = [self.a]
        elif spec.kind is Kind.RANDOM_REPLACEMENT:
            self.targets = list(range(1, data.m + 1))
        else:
            self.targets = []

    def g(self, a_prime: int) -> float:
        if self.spec.kind is Kind.DIRECT:
            return 1.0 if a_prime == self.a else 0.0
        return 1.0 / self.data.m

    def reassigned_mean(self, mu: np.ndarray, m_bar: np.ndarray) -> np.ndarray:
        """Per-record ``sum_a' g(a'|X) mu(a', X)`` (``m(X)`` for indirect)."""
        if self.spec.kind is Kind.INDIRECT:
            return m_bar
        if self.spec.kind is Kind.DIRECT:
            return mu[:, self.a - 1]
        return mu.mean(axis=1)

    def kappa(self, marginals: str, folds: Optional[FoldAssignment] = None) -> np.ndarray:
        if marginals == "pooled":
            return np.full(self.data.n, self.C.mean())
        if marginals != "fold":
            raise ValueError("marginals must be 'pooled' or 'fold'")
        folds = folds or self.nuis.folds
        if folds is None:
            raise ValueError("fold-wise marginals need a fold assignment")
        per_fold = np.array([self.C[folds.training(j)].mean() for j in range(folds.J)])
        if np.any(per_fold == 0):
            raise EmptyConditioningSet("conditioning set empty in some training fold")
        return per_fold[folds.fold]


def _eif(ctx: _Context, psi: float, mu: np.ndarray, m_bar: np.ndarray, pi: np.ndarray,
         kappa: np.ndarray) -> np.ndarray:
    data = ctx.data
    Y = data.Y.astype(float)
    if ctx.spec.kind is Kind.INDIRECT:
        inner = ctx.pi_Aprime * (Y - m_bar) + ctx.in_A * (m_bar - psi)
    else:
        own = data.A - 1
        g_own = np.array([ctx.g(a) for a in range(1, data.m + 1)])[own]
        weight = g_own * ctx.pi_Aprime / pi[ctx.rows, own]
        resid = Y - mu[ctx.rows, own]
        inner = weight * resid + ctx.in_A * (ctx.reassigned_mean(mu, m_bar) - psi)
    eif = np.where(ctx.S, inner / kappa, 0.0)
    if not np.all(np.isfinite(eif)):
        raise NonFinite("influence function has non-finite entries")
    return eif


def compute_eif(data: Dataset, spec: EstimandSpec, nuisances: NuisanceMatrices, psi: float,
                marginals: str = "pooled") -> np.ndarray:
    """Per-record efficient influence function evaluated at ``psi``.

    ``marginals="pooled"`` normalises by the full-sample frequency of the
    conditioning set; ``"fold"`` uses the training-fold frequency of the
    record's validation fold.
    """
    if not np.isfinite(psi):
        raise NonFinite("psi must be finite")
    ctx = _Context(data, spec, nuisances)
    return _eif(ctx, psi, nuisances.mu, nuisances.m_bar, nuisances.pi,
                ctx.kappa(marginals))


def _finish(ctx: _Context, psi: float, eif: np.ndarray, estimator: Estimator, level: float,
            flags=(), epsilon=None) -> EstimateResult:
    n = ctx.data.n
    flags = set(flags)
    se = float(np.sqrt(np.mean(eif ** 2) / n))
    try:
        ci = wald_ci(psi, eif, n, level)
    except DegenerateEif:
        ci = None
        flags.add("degenerate_eif")
    if ctx.C.sum() < SMALL_SAMPLE:
        flags.add("small_sample")
    return EstimateResult(float(psi), eif, se, ci, estimator, ctx.spec, level,
                          frozenset(flags), dict(epsilon or {}))


def estimate_substitution(data: Dataset, spec: EstimandSpec,
                          nuisances: NuisanceMatrices) -> EstimateResult:
    """Plug-in average of the reassigned outcome regression over the
    conditioning set. Carries no influence function or standard error."""
    ctx = _Context(data, spec, nuisances)
    psi = float(ctx.reassigned_mean(nuisances.mu, nuisances.m_bar)[ctx.C].mean())
    flags = {"small_sample"} if ctx.C.sum() < SMALL_SAMPLE else set()
    return EstimateResult(psi, np.zeros(0), None, None, Estimator.SUBSTITUTION, spec,
                          flags=frozenset(flags))


def estimate_onestep(data: Dataset, spec: EstimandSpec, nuisances: NuisanceMatrices,
                     level: float = 0.95, marginals: str = "pooled") -> EstimateResult:
    """Plug-in plus the empirical mean of the influence function evaluated at
    the plug-in. May leave [0, 1]; such results carry the ``out_of_range`` flag."""
    ctx = _Context(data, spec, nuisances)
    kappa = ctx.kappa(marginals)
    mu, m_bar, pi = nuisances.mu, nuisances.m_bar, nuisances.pi
    plug_in = float(ctx.reassigned_mean(mu, m_bar)[ctx.C].mean())
    psi = plug_in + float(np.mean(_eif(ctx, plug_in, mu, m_bar, pi, kappa)))
    eif = _eif(ctx, psi, mu, m_bar, pi, kappa)
    flags = {"out_of_range"} if not 0.0 <= psi <= 1.0 else set()
    return _finish(ctx, psi, eif, Estimator.ONESTEP, level, flags)


def solve_fluctuation(y, offset, h, tol: float = 1e-10, max_iter: int = 50,
                      bound: float = EPSILON_BOUND) -> float:
    """Scalar MLE of ``eps`` in ``P(Y=1) = expit(offset + eps * h)``.

    Newton's method on the mean score with step halving on the
    log-likelihood; falls back to bisection on ``[-bound, bound]``.
    Raises FluctuationDiverged when the root lies outside that interval.
    """
    y = np.asarray(y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    h = np.asarray(h, dtype=float)
    keep = h != 0
    y, offset, h = y[keep], offset[keep], h[keep]
    if y.size == 0:
        return 0.0

    def score(e):
        return float(np.mean(h * (y - expit(offset + e * h))))

    def loglik(e):
        eta = offset + e * h
        return float(np.mean(y * eta - np.logaddexp(0.0, eta)))

    eps, ll = 0.0, loglik(0.0)
    for _ in range(max_iter):
        s = score(eps)
        if abs(s) < tol:
            if abs(eps) > bound:
                break
            return eps
        p = expit(offset + eps * h)
        info = float(np.mean(h * h * p * (1 - p)))
        if not info > 0 or not np.isfinite(info):
            break
        step = s / info
        t = 1.0
        while t > 1e-12:
            new_ll = loglik(eps + t * step)
            if new_ll >= ll:
                break
            t *= 0.5
        eps, ll = eps + t * step, new_ll
        if abs(eps) > 10 * bound:
            break

    lo, hi = -bound, bound
    s_lo, s_hi = score(lo), score(hi)
    if not (s_lo > 0 > s_hi):
        raise FluctuationDiverged(
            f"fluctuation parameter outside [-{bound}, {bound}]; check positivity")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s_mid = score(mid)
        if abs(s_mid) < tol or hi - lo < 1e-15:
            return mid
        if s_mid > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _target_pooled(ctx: _Context, kappa: np.ndarray):
    nuis = ctx.nuis
    Y = ctx.data.Y
    mu = np.array(nuis.mu)
    m_bar = np.array(nuis.m_bar)
    eps = {}
    if ctx.spec.kind is Kind.INDIRECT:
        h = np.where(ctx.S, ctx.pi_Aprime / kappa, 0.0)
        off = logit(m_bar)
        e = solve_fluctuation(Y, off, h)
        m_bar = expit(off + e * h)
        eps["m_bar"] = e
        return mu, m_bar, eps
    for a_prime in ctx.targets:
        col = a_prime - 1
        h_all = np.where(ctx.S, ctx.pi_Aprime / (kappa * nuis.pi[:, col]), 0.0)
        fit_rows = ctx.data.A == a_prime
        off = logit(mu[:, col])
        e = solve_fluctuation(Y[fit_rows], off[fit_rows], h_all[fit_rows])
        mu[:, col] = expit(off + e * h_all)
        eps[a_prime] = e
    return mu, m_bar, eps


def _target_by_fold(ctx: _Context, folds: FoldAssignment):
    """Fold-wise targeting: eps fit on T_j with fold-j nuisances, applied to V_j."""
    nuis = ctx.nuis
    if len(nuis.predictors) != folds.J:
        raise ValueError("fold-wise targeting needs the per-fold fitted predictors")
    data = ctx.data
    players = sorted(ctx.spec.players(data.m))
    mu = np.array(nuis.mu)
    m_bar = np.array(nuis.m_bar)
    eps = {}
    for j in range(folds.J):
        T = folds.training(j)
        V = folds.validation(j)
        kappa_j = ctx.C[T].mean()
        if kappa_j == 0:
            raise EmptyConditioningSet(f"conditioning set empty in training fold {j}")
        pred = nuis.predictors[j]
        XT = data.X[T]
        S_T = ctx.S[T]
        pi_T = pred.predict_pi(XT)
        piA_T = pi_T[:, [b - 1 for b in players]].sum(axis=1)
        if ctx.spec.kind is Kind.INDIRECT:
            h_T = np.where(S_T, piA_T / kappa_j, 0.0)
            e = solve_fluctuation(data.Y[T], logit(pred.predict_mbar(XT)), h_T)
            h_V = np.where(ctx.S[V], ctx.pi_Aprime[V] / kappa_j, 0.0)
            m_bar[V] = expit(logit(m_bar[V]) + e * h_V)
            eps[(j, "m_bar")] = e
            continue
        mu_T = pred.predict_mu(XT)
        for a_prime in ctx.targets:
            col = a_prime - 1
            rows = data.A[T] == a_prime
            h_T = np.where(S_T, piA_T / (kappa_j * pi_T[:, col]), 0.0)
            e = solve_fluctuation(data.Y[T][rows], logit(mu_T[rows, col]), h_T[rows])
            h_V = np.where(ctx.S[V], ctx.pi_Aprime[V] / (kappa_j * nuis.pi[V, col]), 0.0)
            mu[V, col] = expit(logit(mu[V, col]) + e * h_V)
            eps[(j, a_prime)] = e
    return mu, m_bar, eps


def estimate_tmle(data: Dataset, spec: EstimandSpec, nuisances: NuisanceMatrices,
                  folds: Optional[FoldAssignment] = None, level: float = 0.95,
                  epsilon_pool: bool = True) -> EstimateResult:
    """Cross-fitted targeted estimator.

    The outcome regression (``m`` for indirect standardisation) is fluctuated
    along a logistic submodel whose covariate is the residual weight of the
    influence function, one fluctuation per reassigned player, then
    substituted into the parameter.

    With ``epsilon_pool=True`` (default) each fluctuation is fit on the pooled
    out-of-sample predictions, which solves the empirical EIF equation. With
    ``epsilon_pool=False`` the fluctuation for fold ``j`` is fit on ``T_j``
    using fold ``j``'s own fits and applied to ``V_j``; the EIF equation then
    holds only approximately and ``targeting_incomplete`` is flagged when
    ``|mean(eif)| > 1e-6``.
    """
    ctx = _Context(data, spec, nuisances)
    if epsilon_pool:
        kappa = ctx.kappa("pooled")
        mu, m_bar, eps = _target_pooled(ctx, kappa)
    else:
        folds = folds or nuisances.folds
        if folds is None:
            raise ValueError("fold-wise targeting needs a fold assignment")
        kappa = ctx.kappa("fold", folds)
        mu, m_bar, eps = _target_by_fold(ctx, folds)
    psi = float(ctx.reassigned_mean(mu, m_bar)[ctx.C].mean())
    eif = _eif(ctx, psi, mu, m_bar, nuisances.pi, kappa)
    flags = {"targeting_incomplete"} if abs(eif.mean()) > EIF_TOL else set()
    return _finish(ctx, psi, eif, Estimator.TMLE, level, flags, eps)


def estimate(data: Dataset, spec: EstimandSpec, nuisances: NuisanceMatrices,
             estimator="tmle", level: float = 0.95, epsilon_pool: bool = True) -> EstimateResult:
    estimator = Estimator.parse(estimator)
    if estimator is Estimator.SUBSTITUTION:
        return estimate_substitution(data, spec, nuisances)
    if estimator is Estimator.ONESTEP:
        return estimate_onestep(data, spec, nuisances, level,
                                "pooled" if epsilon_pool else "fold")
    return estimate_tmle(data, spec, nuisances, level=level, epsilon_pool=epsilon_pool)


def estimate_contrast(data: Dataset, spec: EstimandSpec, nuisances: NuisanceMatrices,
                      folds: Optional[FoldAssignment] = None, level: float = 0.95,
                      epsilon_pool: bool = True) -> ContrastResult:
    """Empirical success rate on the conditioning set minus the TMLE of the
    indirect or random-replacement parameter."""
    if spec.kind is Kind.DIRECT:
        raise ValueError("contrasts are defined for indirect and random-replacement estimands")
    res = estimate_tmle(data, spec, nuisances, folds, level, epsilon_pool)
    C = conditioning_mask(data, spec)
    Y = data.Y.astype(float)
    rate = float(Y[C].mean())
    rate_eif = np.where(C, (Y - rate) / C.mean(), 0.0)
    eif = rate_eif - res.eif
    n = data.n
    delta = rate - res.psi
    se = float(np.sqrt(np.mean(eif ** 2) / n))
    flags = set(res.flags)
    try:
        ci = wald_ci(delta, eif, n, level)
    except DegenerateEif:
        ci = None
        flags.add("degenerate_eif")
    if C.sum() < SMALL_SAMPLE:
        flags.add("small_sample")
    kind = "IndirectContrast" if spec.kind is Kind.INDIRECT else "RandContrast"
    return ContrastResult(delta, se, ci, kind, spec, rate, res.psi, eif, level, frozenset(flags))


# -- von Mises expansion on finite-support laws ---------------------------------------------

def _law_arrays(law):
    if not getattr(law, "is_discrete", False):
        raise NonDiscreteDgp("exact enumeration needs a finite-support law")
    q = np.asarray(law.cell_probs, dtype=float)
    return q, np.asarray(law.pi_table, dtype=float), np.asarray(law.mu_table, dtype=float)


def _theta(q, pi, mu, S, a, a_prime):
    w = q * pi[:, a - 1] * S
    return float(np.sum(w * mu[:, a_prime - 1]) / np.sum(w))


def von_mises_terms(P, F, a: int, a_prime: int, x_condition: XCondition = ALWAYS) -> dict:
    """Exact terms of ``theta_F - theta_P = -E_P[D_F] + R(P, F)`` for
    ``theta(a, a') = E[mu(a', X) | A = a, X in S]`` on finite-support laws.

    ``E_P[D_F]`` is enumerated over every ``(x, A, Y)`` cell; ``R`` uses its
    closed form (a propensity-error times outcome-error product plus a
    marginal-error times parameter-error product).
    """
    qP, piP, muP = _law_arrays(P)
    qF, piF, muF = _law_arrays(F)
    S = x_condition.mask(P.cells, P.covariate_names).astype(float)
    thP = _theta(qP, piP, muP, S, a, a_prime)
    thF = _theta(qF, piF, muF, S, a, a_prime)
    kP = float(np.sum(qP * piP[:, a - 1] * S))
    kF = float(np.sum(qF * piF[:, a - 1] * S))

    e_pd = 0.0
    k, m = piP.shape
    for x in range(k):
        if not S[x]:
            continue
        for b in range(1, m + 1):
            for yv in (0.0, 1.0):
                prob = qP[x] * piP[x, b - 1] * (muP[x, b - 1] if yv else 1 - muP[x, b - 1])
                d = 0.0
                if b == a_prime:
                    d += piF[x, a - 1] / piF[x, a_prime - 1] * (yv - muF[x, a_prime - 1])
                if b == a:
                    d += muF[x, a_prime - 1] - thF
                e_pd += prob * d / kF

    ratio = piP[:, a_prime - 1] / piF[:, a_prime - 1] - piP[:, a - 1] / piF[:, a - 1]
    product = np.sum(qP * S * piF[:, a - 1] * ratio * (muP[:, a_prime - 1] - muF[:, a_prime - 1]))
    remainder = product / kF + (kP / kF - 1.0) * (thP - thF)
    return {"theta_P": thP, "theta_F": thF, "lhs": thF - thP, "eif_mean": e_pd,
            "remainder": float(remainder), "rhs": -e_pd + float(remainder)}


def check_von_mises_remainder(dgp, perturbed, a: int = 1, a_prime: int = 2,
                              x_condition: XCondition = ALWAYS) -> float:
    """Absolute gap between the two sides of the expansion; zero up to rounding."""
    t = von_mises_terms(dgp, perturbed, a, a_prime, x_condition)
    return abs(t["lhs"] - t["rhs"])
