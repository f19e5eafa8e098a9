"""Experiment configs, the run cross-product and regret-slope fitting."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from .adversary import KINDS, AdversarySpec, make_losses
from .errors import CapExceeded, ConfigError, DegenerateFit
from .fpl import LambdaMode
from .learner_det import best_policy_in_hindsight, run as run_det
from .learner_oracle import run_oracle
from .learner_stoch import run_stochastic
from .mdpio import MdpFile, load_mdp, parse_mdp
from .records import RunRecord, fmt, write_summary

CONFIG_VERSION = 1

_LAMBDA = {
    "oneOf": [
        {"enum": ["horizon", "doubling"]},
        {
            "type": "object",
            "properties": {"fixed": {"type": "number", "exclusiveMinimum": 0},
                           "first_order": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "mdp": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "algorithms": {"type": "array", "minItems": 1, "uniqueItems": True,
                       "items": {"enum": ["det", "stoch", "oracle"]}},
        "adversary": {
            "type": "object",
            "properties": {"kind": {"enum": list(KINDS)}, "params": {"type": "object"}},
            "required": ["kind"],
            "additionalProperties": False,
        },
        "horizons": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "lambda": _LAMBDA,
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "method": {"enum": ["dp", "lp"]},
        "write_runs": {"type": "boolean"},
        "workers": {"type": "integer", "minimum": 1},
    },
    "required": ["version", "mdp", "algorithms", "adversary", "horizons", "seeds", "lambda"],
    "additionalProperties": False,
}


def validate_config(doc) -> dict:
    """Raises ``ConfigError`` naming the offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(map(str, err.absolute_path)) or "<root>"
        raise ConfigError(f"config field {where}: {err.message}")
    return doc


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return validate_config(doc), path.parent


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def resolve_mdp(doc: dict, base: Path = Path(".")) -> MdpFile:
    try:
        if isinstance(doc["mdp"], str):
            return load_mdp(base / doc["mdp"])
        return parse_mdp(doc["mdp"])
    except (OSError, KeyError) as exc:
        raise ConfigError(f"config field mdp: {exc}") from exc


def run_one(doc: dict, spec: MdpFile, algo: str, horizon: int, seed: int) -> RunRecord:
    """A single run; the adversary is seeded by the run seed so learners face the same losses."""
    mdp = spec.mdp
    adv = doc["adversary"]
    losses = make_losses(AdversarySpec(adv["kind"], adv.get("params", {}), seed), mdp.num_states, mdp.num_actions, horizon)
    mode = LambdaMode.parse(doc["lambda"], horizon)
    if algo == "det":
        if spec.graph is None:
            raise ConfigError("config field algorithms: det needs a deterministic MDP")
        try:
            lstar = best_policy_in_hindsight(spec.graph, losses, spec.start_state).loss
        except CapExceeded:
            lstar = math.nan
        rec = run_det(spec.graph, losses, mode, spec.start_state, seed=seed, method=doc.get("method", "dp"), lstar=lstar)
    elif algo == "stoch":
        rec = run_stochastic(mdp, losses, mode, seed=seed)
    else:
        rec = run_oracle(mdp, losses, doc.get("alpha", mdp.exploring_mass), mode, seed=seed)
    rec.config_hash = config_hash(doc)
    rec.check()
    return rec


def _job(args):
    doc, base, algo, horizon, seed = args
    return run_one(doc, resolve_mdp(doc, base), algo, horizon, seed)


def run_experiment(doc: dict, base: Path = Path("."), out: Path | None = None) -> list[RunRecord]:
    """Execute the (algorithm, T, seed) cross-product.

    Records come back sorted by that key whatever the worker count; with
    ``out`` set, writes ``summary.csv``, ``aggregate.csv`` and (unless
    ``write_runs`` is false) ``runs/<algo>_T<T>_seed<seed>.csv``.
    """
    validate_config(doc)
    spec = resolve_mdp(doc, base)
    keys = [(a, t, s) for a in doc["algorithms"] for t in sorted(doc["horizons"]) for s in doc["seeds"]]
    workers = doc.get("workers", 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_job, [(doc, base, *k) for k in keys]))
    else:
        records = [run_one(doc, spec, *k) for k in keys]
    if out is not None:
        write_outputs(records, Path(out), doc.get("write_runs", True))
    return records


def write_outputs(records, out: Path, write_runs: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        write_summary(records, fh)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        write_aggregate(aggregate(records), fh)
    if write_runs:
        (out / "runs").mkdir(exist_ok=True)
        for rec in records:
            with open(out / "runs" / f"{rec.algo}_T{rec.horizon}_seed{rec.seed}.csv", "w", newline="") as fh:
                rec.write_rows(fh)


AGGREGATE_COLUMNS = ("algo", "T", "runs", "mean_regret", "std_regret", "mean_expected_regret",
                     "mean_switches", "std_switches")


def aggregate(records) -> list[dict]:
    groups: dict[tuple[str, int], list[RunRecord]] = {}
    for rec in records:
        groups.setdefault((rec.algo, rec.horizon), []).append(rec)
    rows = []
    for (algo, horizon), recs in groups.items():
        regret = np.array([r.regret for r in recs])
        # deterministic runs have no transition noise, so their expected regret is the realized one
        expected = np.array([r.extra.get("expected_regret", r.regret) for r in recs])
        switches = np.array([r.switches for r in recs], dtype=float)
        ddof = 1 if len(recs) > 1 else 0
        rows.append({
            "algo": algo, "T": horizon, "runs": len(recs),
            "mean_regret": float(regret.mean()), "std_regret": float(regret.std(ddof=ddof)),
            "mean_expected_regret": float(expected.mean()),
            "mean_switches": float(switches.mean()), "std_switches": float(switches.std(ddof=ddof)),
        })
    return rows


def write_aggregate(rows, stream) -> None:
    out = csv.writer(stream, lineterminator="\n")
    out.writerow(AGGREGATE_COLUMNS)
    for r in rows:
        out.writerow([r["algo"], r["T"], r["runs"]] + [fmt(r[c]) for c in AGGREGATE_COLUMNS[3:]])


def fit_regret_slope(points, floor: float = 1e-6) -> tuple[float, float, float]:
    """OLS of log(mean regret) on log(T); returns ``(slope, intercept, r2)``.

    ``points`` is a mapping ``T -> mean regret`` or a sequence of pairs.
    Mean regrets at or below zero are replaced by ``floor``.

    Raises:
        DegenerateFit: with fewer than four distinct horizons.
    """
    pairs = sorted(points.items() if isinstance(points, dict) else points)
    if len({t for t, _ in pairs}) < 4:
        raise DegenerateFit("need at least four distinct horizons")
    x = np.log([float(t) for t, _ in pairs])
    y = np.log([max(float(r), floor) for _, r in pairs])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / total if total > 0 else 1.0
    return float(slope), float(intercept), r2


def sweep(doc: dict, base: Path = Path("."), out: Path | None = None) -> dict[tuple[str, str], tuple[float, float, float]]:
    """Run the cross-product and fit regret slopes.

    Returns ``{(algo, statistic): (slope, intercept, r2)}`` where statistic is
    ``regret`` (realized) or ``expected_regret`` (expectation over transitions
    with the perturbations fixed).
    """
    records = run_experiment(doc, base, out)
    rows = aggregate(records)
    fits = {}
    for algo in doc["algorithms"]:
        for stat in ("regret", "expected_regret"):
            fits[algo, stat] = fit_regret_slope({r["T"]: r[f"mean_{stat}"] for r in rows if r["algo"] == algo})
    if out is not None:
        with open(Path(out) / "fit.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("algo", "statistic", "slope", "intercept", "r2"))
            for (algo, stat), (slope, icpt, r2) in fits.items():
                w.writerow((algo, stat, fmt(slope), fmt(icpt), fmt(r2)))
    return fits
