"""Command-line front end: ``playereval {estimate,simulate,cluster}``.

Exit codes: 0 success, 1 estimation error, 2 configuration or I/O error.
Errors are reported as a one-line JSON object on stderr (and written to
``error.json`` in the output directory when possible).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import Dataset, EstimandSpec, Kind, empirical_success_rate
from .crossfit import LearnerConfig, default_fold_count, fit_nuisances, make_folds
from .errors import (ConfigError, InvalidDgp, MissingColumn, NonBinaryOutcome, PlayerEvalError,
                     UnparseableValue)
from .estimators import Estimator, estimate, estimate_contrast
from .ingest import canonical_csv, load_csv, load_schema
from .profiling import (FUNNEL_LEVELS, funnel_csv, funnel_geometry, hierarchical_cluster,
                        leaderboard_csv, leaderboard_rows, normalize_propensities,
                        positivity_report, propensity_distance)
from .simulation import SCENARIOS, load_fixture, run_experiment
from .svg import dendrogram_svg, funnel_svg

EXIT_OK, EXIT_ESTIMATION, EXIT_CONFIG = 0, 1, 2
_CONFIG_ERRORS = (ConfigError, InvalidDgp, MissingColumn, NonBinaryOutcome, UnparseableValue,
                  OSError, ValueError, json.JSONDecodeError)


@dataclass
class RunConfig:
    """Everything a run depends on; its JSON form is hashed into the manifest."""
    command: str = "estimate"
    data: Optional[str] = None
    schema: Optional[str] = None
    out: str = "out"
    estimands: list = field(default_factory=lambda: ["direct", "indirect", "rand"])
    players: object = "all"
    estimators: list = field(default_factory=lambda: ["substitution", "onestep", "tmle"])
    learners: Optional[dict] = None
    folds: Optional[int] = None
    seed: int = 0
    level: float = 0.95
    funnel_levels: list = field(default_factory=lambda: list(FUNNEL_LEVELS))
    linkage: str = "complete"
    epsilon_pool: bool = True
    n_jobs: int = 1
    fixture: str = "four-cell"
    scenario: str = "both_correct"
    reps: int = 100
    n: int = 2000

    def validate(self):
        if self.folds is not None and int(self.folds) < 2:
            raise ConfigError("folds must be >= 2")
        if not 0 < float(self.level) < 1:
            raise ConfigError("level must lie in (0, 1)")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")
        if self.linkage not in ("complete", "average", "single"):
            raise ConfigError(f"unknown linkage {self.linkage!r}")
        if self.scenario not in SCENARIOS and self.scenario != "all":
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if int(self.reps) < 1 or int(self.n) < 10:
            raise ConfigError("reps must be >= 1 and n >= 10")
        try:
            self.kinds()
            self.estimator_list()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for c in self.funnel_levels:
            if not 0 < float(c) < 1:
                raise ConfigError("funnel levels must lie in (0, 1)")

    def kinds(self) -> list:
        return [Kind.parse(k) for k in _as_list(self.estimands)]

    def estimator_list(self) -> list:
        return [Estimator.parse(e) for e in _as_list(self.estimators)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _as_list(v) -> list:
    if isinstance(v, str):
        return [s.strip() for s in v.split(",") if s.strip()]
    return list(v)


def build_config(args: argparse.Namespace) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    unknown = set(base) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base["command"] = args.command
    for key in ("data", "schema", "out", "seed", "folds", "level", "estimands", "estimators",
                "players", "fixture", "scenario", "reps", "linkage", "n"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    cfg = RunConfig(**base)
    cfg.validate()
    return cfg


# -- outputs ------------------------------------------------------------------------------

class _Writer:
    """Writes artifacts into the output directory and records their checksums."""

    def __init__(self, out: str):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.checksums = {}

    def text(self, name: str, content: str):
        data = content.encode("utf-8")
        (self.out / name).write_bytes(data)
        self.checksums[name] = hashlib.sha256(data).hexdigest()

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False,
                                   default=_json_default) + "\n")

    def manifest(self, cfg: RunConfig):
        self.json(f"manifest_{cfg.command}.json", {
            "command": cfg.command, "config": cfg.to_dict(), "config_hash": cfg.hash(),
            "seed": cfg.seed, "version": __version__,
            "artifacts": dict(sorted(self.checksums.items()))})


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return None if not np.isfinite(o) else float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _resolve_players(spec, data: Dataset) -> list:
    if spec in (None, "all", ["all"]):
        return list(range(1, data.m + 1))
    out = []
    for tok in _as_list(spec) if not isinstance(spec, int) else [spec]:
        tok = str(tok)
        if tok in data.player_labels:
            out.append(data.player_labels.index(tok) + 1)
        elif tok.isdigit() and 1 <= int(tok) <= data.m:
            out.append(int(tok))
        else:
            raise ConfigError(f"unknown player {tok!r}")
    return sorted(set(out))


def _load_data(cfg: RunConfig):
    if not cfg.data or not cfg.schema:
        raise ConfigError("estimate needs both --data and --schema")
    for p in (cfg.schema, cfg.data):
        if not os.path.isfile(p):
            exc = ConfigError(f"file not found: {p}")
            exc.filename = p
            raise exc
    schema = load_schema(cfg.schema)
    data, report = load_csv(cfg.data, schema)
    return schema, data, report


def _fit(cfg: RunConfig, data: Dataset, x_condition):
    J = int(cfg.folds) if cfg.folds else default_fold_count(data.n)
    folds = make_folds(data.n, data.A, J, cfg.seed, data.m)
    learners = LearnerConfig.from_dict(cfg.learners)
    return folds, fit_nuisances(data, folds, learners, x_condition, cfg.seed, cfg.n_jobs)


def _propensity_csv(data: Dataset, pi: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(data.player_labels)
    w.writerows([repr(float(v)) for v in row] for row in pi)
    return buf.getvalue()


def cmd_estimate(cfg: RunConfig) -> int:
    schema, data, report = _load_data(cfg)
    xc = schema.x_condition
    kinds = cfg.kinds()
    estimators = cfg.estimator_list()
    players = _resolve_players(cfg.players, data)
    folds, nuis = _fit(cfg, data, xc)

    results, contrasts = [], []
    for a in players:
        for kind in kinds:
            spec = EstimandSpec(kind, a, xc)
            for e in estimators:
                results.append(estimate(data, spec, nuis, e, cfg.level, cfg.epsilon_pool))
            if kind is not Kind.DIRECT and Estimator.TMLE in estimators:
                contrasts.append(estimate_contrast(data, spec, nuis, folds, cfg.level,
                                                   cfg.epsilon_pool))

    w = _Writer(cfg.out)
    w.json("results.json", _clean({
        "n": data.n, "m": data.m, "folds": folds.J, "seed": cfg.seed, "level": cfg.level,
        "players": list(data.player_labels), "covariates": list(data.covariate_names),
        "ingest": report.to_dict(),
        "estimates": [dict(r.to_dict(), label=data.player_labels[r.spec.focal_player - 1])
                      for r in results],
        "contrasts": [dict(c.to_dict(), label=data.player_labels[c.spec.focal_player - 1])
                      for c in contrasts],
    }))
    rates = {}
    for a in players:
        try:
            rates[a] = empirical_success_rate(data, a, xc)
        except PlayerEvalError:
            rates[a] = None
    board_estimator = "tmle" if Estimator.TMLE in estimators else estimators[-1].value
    sort_kind = "direct" if Kind.DIRECT in kinds else kinds[0].value
    w.text("leaderboard.csv", leaderboard_csv(
        leaderboard_rows(results, data.player_labels, rates, sort_kind, board_estimator)))
    for kind in ("indirect", "rand"):
        cs = [c for c in contrasts if c.spec.kind.value == kind and c.se > 0]
        if not cs:
            continue
        geom = funnel_geometry([(c.delta, c.se) for c in cs], cfg.funnel_levels,
                               [data.player_labels[c.spec.focal_player - 1] for c in cs])
        w.text(f"funnel_{kind}.csv", funnel_csv(geom, kind))
        w.text(f"funnel_{kind}.svg", funnel_svg(geom, f"Funnel plot: {kind} contrast"))
    w.json("positivity.json", positivity_report(nuis.pi))
    w.text("propensities.csv", _propensity_csv(data, nuis.pi))
    w.text("data_canonical.csv", canonical_csv(data, schema.outcome, schema.player))
    w.manifest(cfg)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    dgp = load_fixture(cfg.fixture)
    scenarios = SCENARIOS if cfg.scenario == "all" else (cfg.scenario,)
    w = _Writer(cfg.out)
    csv_parts, reports = [], []
    for scenario in scenarios:
        rep = run_experiment(dgp, scenario, int(cfg.n), int(cfg.reps),
                             [e.value for e in cfg.estimator_list()], cfg.seed, cfg.kinds(),
                             folds=int(cfg.folds or 5), level=cfg.level,
                             epsilon_pool=cfg.epsilon_pool)
        text = rep.to_csv()
        csv_parts.append(text if not csv_parts else text.split("\n", 1)[1])
        reports.append(_clean(rep.to_dict()))
    w.text("simulation_report.csv", "".join(csv_parts))
    w.json("simulation_report.json", {"fixture": cfg.fixture, "reports": reports})
    w.manifest(cfg)
    return EXIT_OK


def cmd_cluster(cfg: RunConfig) -> int:
    prior = Path(cfg.out) / "propensities.csv"
    if cfg.data and cfg.schema:
        schema, data, _ = _load_data(cfg)
        _, nuis = _fit(cfg, data, schema.x_condition)
        pi, labels = np.asarray(nuis.pi), list(data.player_labels)
    elif prior.is_file():
        with open(prior, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        labels, pi = rows[0], np.array(rows[1:], dtype=float)
    else:
        raise ConfigError("cluster needs --data and --schema, or propensities.csv from a "
                          f"prior estimate run in {cfg.out}")
    dist = propensity_distance(normalize_propensities(pi), labels)
    tree = hierarchical_cluster(dist, cfg.linkage)
    w = _Writer(cfg.out)
    w.text("dendrogram.nwk", tree.to_newick() + "\n")
    w.text("dendrogram.svg", dendrogram_svg(tree))
    w.text("distances.csv", dist.to_csv())
    w.manifest(cfg)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "cluster": cmd_cluster}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="playereval",
                                     description="Causal player evaluation metrics.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--folds", type=int, help="cross-fitting folds J")
    common.add_argument("--level", type=float, help="confidence level")
    common.add_argument("--estimands", help="comma list of direct, indirect, rand")
    common.add_argument("--estimators", help="comma list of substitution, onestep, tmle")

    est = sub.add_parser("estimate", parents=[common], help="estimate player metrics")
    est.add_argument("--data")
    est.add_argument("--schema")
    est.add_argument("--players", help="comma list of labels or indices, or 'all'")

    sim = sub.add_parser("simulate", parents=[common], help="Monte-Carlo experiment")
    sim.add_argument("--fixture", help="bundled fixture name or DGP JSON path")
    sim.add_argument("--scenario", help=f"one of {', '.join(SCENARIOS)}, or 'all'")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--n", type=int, help="sample size per replication")

    clu = sub.add_parser("cluster", parents=[common], help="cluster players by propensity")
    clu.add_argument("--data")
    clu.add_argument("--schema")
    clu.add_argument("--linkage", choices=("complete", "average", "single"))
    return parser


def _error(exc: BaseException, code: int, out: Optional[str]) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("filename", "column", "row", "player"):
        v = getattr(exc, attr, None)
        if v is not None:
            payload[attr if attr != "filename" else "path"] = v
    line = json.dumps(payload, sort_keys=True, default=str)
    print(line, file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(line + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = getattr(args, "out", None)
    try:
        cfg = build_config(args)
        out = cfg.out
        return COMMANDS[cfg.command](cfg)
    except (TypeError,) as exc:
        return _error(ConfigError(f"invalid configuration: {exc}"), EXIT_CONFIG, out)
    except _CONFIG_ERRORS as exc:
        return _error(exc, EXIT_CONFIG, out)
    except PlayerEvalError as exc:
        return _error(exc, EXIT_ESTIMATION, out)


if __name__ == "__main__":
    sys.exit(main())
