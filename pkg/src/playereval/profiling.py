"""Post-estimation summaries: leaderboards, funnel plots, positivity
diagnostics and clustering of players by their propensity profiles."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateSe
from .stats import two_sided_z

__all__ = [
    "FUNNEL_LEVELS", "FunnelPoint", "FunnelGeometry", "funnel_geometry",
    "normalize_propensities", "DistanceMatrix", "propensity_distance", "Merge", "Dendrogram",
    "hierarchical_cluster", "parse_newick", "positivity_report", "leaderboard_rows",
    "leaderboard_csv", "funnel_csv",
]

FUNNEL_LEVELS = (0.975, 0.99, 0.999)


@dataclass(frozen=True)
class FunnelPoint:
    label: str
    estimate: float
    precision: float
    flags: frozenset = frozenset()

    @property
    def z(self) -> float:
        return self.estimate * self.precision


@dataclass(frozen=True)
class FunnelGeometry:
    """Points plus control-limit curves ``y = +/- z_c / precision``.

    ``curves[c]`` is an array of shape (k, 3) with columns precision, lower
    limit, upper limit.
    """
    points: tuple
    levels: tuple
    thresholds: dict
    curves: dict = field(repr=False)


def funnel_geometry(points: Sequence, levels: Sequence[float] = FUNNEL_LEVELS,
                    labels: Optional[Sequence[str]] = None, samples: int = 100) -> FunnelGeometry:
    """Funnel-plot geometry for contrasts centered at zero.

    Parameters
    ----------
    points : sequence of (estimate, se)
    levels : two-sided confidence levels of the control limits
    labels : optional point labels (defaults to "1", "2", ...)
    samples : number of precision values per control curve

    A point exceeds level ``c`` when ``|estimate| / se > z_{(1+c)/2}``.
    """
    levels = tuple(sorted(float(c) for c in levels))
    thresholds = {c: two_sided_z(c) for c in levels}
    pts = []
    for i, (est, se) in enumerate(points):
        if not se > 0 or not np.isfinite(se):
            raise DegenerateSe(f"point {i} has non-positive standard error {se!r}")
        precision = 1.0 / se
        z = abs(est) * precision
        flags = frozenset(c for c in levels if z > thresholds[c])
        label = labels[i] if labels is not None else str(i + 1)
        pts.append(FunnelPoint(label, float(est), precision, flags))
    curves = {}
    if pts:
        precs = [p.precision for p in pts]
        grid = np.linspace(min(precs), max(precs), samples)
        for c in levels:
            z = thresholds[c]
            curves[c] = np.column_stack([grid, -z / grid, z / grid])
    return FunnelGeometry(tuple(pts), levels, thresholds, curves)


def normalize_propensities(pi) -> np.ndarray:
    """Rescale each player's propensity column to sum to one over records."""
    pi = np.asarray(pi, dtype=float)
    return pi / pi.sum(axis=0, keepdims=True)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    labels: tuple

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["player", *self.labels])
        for lab, row in zip(self.labels, self.values):
            w.writerow([lab, *(repr(float(v)) for v in row)])
        return buf.getvalue()


def propensity_distance(pi_bar, labels: Optional[Sequence[str]] = None) -> DistanceMatrix:
    """Euclidean distances between player columns of normalised propensities."""
    P = np.asarray(pi_bar, dtype=float)
    m = P.shape[1]
    # pairwise differences rather than the Gram shortcut, which cancels badly
    D = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            D[a, b] = D[b, a] = float(np.sqrt(np.sum((P[:, a] - P[:, b]) ** 2)))
    labels = tuple(labels) if labels is not None else tuple(str(a) for a in range(1, m + 1))
    return DistanceMatrix(D, labels)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Agglomeration history in the usual linkage-matrix convention.

    Leaves are ids ``0..m-1``; the cluster formed by merge ``k`` gets id
    ``m + k``.
    """
    merges: tuple
    labels: tuple
    linkage: str = "complete"

    @property
    def m(self) -> int:
        return len(self.labels)

    def linkage_matrix(self) -> np.ndarray:
        return np.array([[g.left, g.right, g.height, g.size] for g in self.merges], dtype=float)

    def to_newick(self) -> str:
        m = self.m
        if m == 1:
            return f"{_newick_label(self.labels[0])};"
        heights = {i: 0.0 for i in range(m)}
        text = {i: _newick_label(self.labels[i]) for i in range(m)}
        for k, g in enumerate(self.merges):
            node = m + k
            heights[node] = g.height
            parts = []
            for child in (g.left, g.right):
                parts.append(f"{text.pop(child)}:{_num(g.height - heights[child])}")
            text[node] = f"({','.join(parts)})"
        return text[m + len(self.merges) - 1] + ";"


def _num(x: float) -> str:
    return repr(round(float(x), 12))


def _newick_label(label: str) -> str:
    if any(ch in label for ch in "(),:;' []"):
        return "'" + label.replace("'", "''") + "'"
    return label


def hierarchical_cluster(d, linkage: str = "complete",
                         labels: Optional[Sequence[str]] = None) -> Dendrogram:
    """Agglomerative clustering with complete, average or single linkage.

    At each step the pair of active clusters with the smallest linkage
    distance merges; ties go to the pair with the lowest ids
    (lexicographically).
    """
    if isinstance(d, DistanceMatrix):
        labels = labels or d.labels
        D = np.array(d.values, dtype=float)
    else:
        D = np.array(d, dtype=float)
    m = D.shape[0]
    if D.shape != (m, m):
        raise ValueError("distance matrix must be square")
    labels = tuple(labels) if labels is not None else tuple(str(a) for a in range(1, m + 1))
    if linkage not in ("complete", "average", "single"):
        raise ValueError(f"unknown linkage {linkage!r}")
    members = {i: [i] for i in range(m)}
    merges = []
    next_id = m
    while len(members) > 1:
        ids = sorted(members)
        best = None
        for ii, a in enumerate(ids):
            for b in ids[ii + 1:]:
                block = D[np.ix_(members[a], members[b])]
                if linkage == "complete":
                    h = block.max()
                elif linkage == "single":
                    h = block.min()
                else:
                    h = block.mean()
                if best is None or h < best[0]:
                    best = (float(h), a, b)
        h, a, b = best
        members[next_id] = members.pop(a) + members.pop(b)
        merges.append(Merge(a, b, h, len(members[next_id])))
        next_id += 1
    return Dendrogram(tuple(merges), labels, linkage)


def parse_newick(text: str):
    """Parse a Newick string into nested tuples ``(children, branch_length)``.

    Leaves are ``(label, branch_length)``; internal nodes are
    ``([child, ...], branch_length)``.
    """
    s = text.strip()
    if not s.endswith(";"):
        raise ValueError("Newick string must end with ';'")
    pos = 0

    def label():
        nonlocal pos
        if s[pos] == "'":
            out = []
            pos += 1
            while True:
                if s[pos] == "'":
                    if pos + 1 < len(s) and s[pos + 1] == "'":
                        out.append("'")
                        pos += 2
                        continue
                    pos += 1
                    return "".join(out)
                out.append(s[pos])
                pos += 1
        start = pos
        while s[pos] not in ",():;":
            pos += 1
        return s[start:pos]

    def length():
        nonlocal pos
        if s[pos] != ":":
            return None
        pos += 1
        start = pos
        while s[pos] not in ",();":
            pos += 1
        return float(s[start:pos])

    def node():
        nonlocal pos
        if s[pos] == "(":
            pos += 1
            children = [node()]
            while s[pos] == ",":
                pos += 1
                children.append(node())
            if s[pos] != ")":
                raise ValueError(f"expected ')' at position {pos}")
            pos += 1
            if s[pos] not in ":,);":
                label()
            return (children, length())
        return (label(), length())

    tree = node()
    if s[pos] != ";":
        raise ValueError(f"unexpected trailing text at position {pos}")
    return tree


def positivity_report(pi, thresholds=(1e-3, 1e-2)) -> dict:
    """Summary of all propensity entries: mean, min, max, type-7 quartiles
    and the fraction of entries below each threshold."""
    v = np.asarray(pi, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty propensity matrix")
    q1, q2, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {
        "count": int(v.size),
        "mean": math.fsum(v) / v.size,  # correctly rounded sum
        "min": float(v.min()),
        "q1": float(q1),
        "median": float(q2),
        "q3": float(q3),
        "max": float(v.max()),
        "fraction_below": {repr(float(t)): float(np.mean(v < t)) for t in thresholds},
    }


def leaderboard_rows(results: Sequence, labels: Sequence[str], empirical_rates: dict,
                     sort_kind: str = "direct", estimator: str = "tmle") -> list:
    """Leaderboard rows for one estimator: one row per player, wide by estimand,
    sorted by the ``sort_kind`` estimate in descending order (ties by player)."""
    by_player = {}
    for r in results:
        if r.estimator.value != estimator:
            continue
        a = r.spec.focal_player
        by_player.setdefault(a, {})[r.spec.kind.value] = r
    rows = []
    for a, per in by_player.items():
        row = {"player": a, "label": labels[a - 1], "empirical_rate": empirical_rates.get(a)}
        for kind in ("direct", "indirect", "rand"):
            r = per.get(kind)
            row[f"{kind}_psi"] = r.psi if r else None
            row[f"{kind}_se"] = r.se if r else None
            row[f"{kind}_ci_lo"] = r.ci[0] if r and r.ci else None
            row[f"{kind}_ci_hi"] = r.ci[1] if r and r.ci else None
        rows.append(row)

    def key(row):
        v = row.get(f"{sort_kind}_psi")
        return (v is None, -(v if v is not None else 0.0), row["player"])

    rows.sort(key=key)
    return rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def leaderboard_csv(rows: list) -> str:
    cols = ["rank", "player", "label", "empirical_rate"]
    for kind in ("direct", "indirect", "rand"):
        cols += [f"{kind}_psi", f"{kind}_se", f"{kind}_ci_lo", f"{kind}_ci_hi"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for rank, row in enumerate(rows, start=1):
        w.writerow({"rank": rank, **{c: _cell(row.get(c)) for c in cols[1:]}})
    return buf.getvalue()


def funnel_csv(geom: FunnelGeometry, kind: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimand", "label", "estimate", "se", "precision", "z",
                *[f"exceeds_{c}" for c in geom.levels]])
    for p in geom.points:
        w.writerow([kind, p.label, repr(p.estimate), repr(1.0 / p.precision), repr(p.precision),
                    repr(p.z), *[int(c in p.flags) for c in geom.levels]])
    return buf.getvalue()
