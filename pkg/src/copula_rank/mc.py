"""Replicated simulation harness.

Each replication r of an experiment draws its sample from the Philox
stream keyed (seed, r, lane), estimates with every requested estimator,
and records the error vector theta_hat - theta_true.  Failed replications
(solver non-convergence) are counted and excluded, never imputed; more
than 5% failures for any estimator aborts the experiment.  Aggregation is
a sequential reduction ordered by replication index, so reports are
byte-identical no matter how many workers ran the replications.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.linalg import LinAlgError

from .estimators import one_step, pilot_moment, ple_estimate, rank_transform
from .exceptions import (ConfigError, ConvergenceError, DomainError,
                         McExperimentError, ShapeError, SingularityError)
from .geometry import efficient_info, ple_influence
from .models import build_model, eval_geometry
from .sampler import MarginSpec, apply_margins, sample_copula

__all__ = [
    "McConfig",
    "McReport",
    "run_experiment",
    "run_grid",
    "summarize",
    "write_report_json",
    "write_errors_csv",
    "write_summary_csv",
]

_ESTIMATORS = ("ple", "one_step", "pilot_moment")
_FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class McConfig:
    model: dict
    theta_true: np.ndarray
    n: int
    replications: int
    estimators: tuple
    seed: int
    margins: tuple = ("uniform",)
    workers: int = 1
    keep_errors: bool = True
    lane: int = 0

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config: expected a JSON object")
        known = {"model", "theta_true", "n", "replications", "estimators",
                 "seed", "margins", "workers", "keep_errors", "output",
                 "theta_grid", "lane"}
        for key in raw:
            if key not in known:
                raise ConfigError(f"{key}: unexpected config field")
        if "model" not in raw:
            raise ConfigError("model: missing required field")
        model = build_model(raw["model"])
        if "theta_true" not in raw:
            raise ConfigError("theta_true: missing required field")
        theta = model.theta_vec(raw["theta_true"])
        if not model.domain_check(theta):
            raise ConfigError(f"theta_true: {theta.tolist()} outside the domain "
                              f"of {model.name}")
        n = raw.get("n")
        if not isinstance(n, int) or n < 2:
            raise ConfigError("n: expected an integer >= 2")
        reps = raw.get("replications")
        if not isinstance(reps, int) or reps < 1:
            raise ConfigError("replications: expected an integer >= 1")
        ests = raw.get("estimators", ["one_step"])
        if not ests or not all(e in _ESTIMATORS for e in ests):
            raise ConfigError(f"estimators: expected a nonempty subset of {_ESTIMATORS}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed: expected a nonnegative integer")
        margins = raw.get("margins", "uniform")
        if isinstance(margins, str):
            margins = (margins,)
        if "user" in margins:
            raise ConfigError("margins: 'user' margins require code-level setup")
        MarginSpec(kinds=tuple(margins))  # validates kinds
        workers = raw.get("workers", 1)
        if workers is not None and (not isinstance(workers, int) or workers < 1):
            raise ConfigError("workers: expected a positive integer")
        return cls(model=dict(raw["model"]), theta_true=theta, n=n,
                   replications=reps, estimators=tuple(ests), seed=seed,
                   margins=tuple(margins), workers=workers or 1,
                   keep_errors=bool(raw.get("keep_errors", True)),
                   lane=int(raw.get("lane", 0)))

    def echo(self):
        """The experiment parameters (not execution details like workers)."""
        return {
            "model": self.model,
            "theta_true": [float(v) for v in self.theta_true],
            "n": self.n,
            "replications": self.replications,
            "estimators": list(self.estimators),
            "seed": self.seed,
            "margins": list(self.margins),
            "lane": self.lane,
        }


@dataclass(frozen=True)
class McReport:
    config: dict
    estimators: tuple
    k: int
    bias: dict
    variance: dict
    n_variance: dict
    n_success: dict
    failures: dict
    eff_bound: object
    ple_bound: object
    errors: object = field(repr=False, default=None)

    def to_dict(self):
        def per_est(table):
            return {e: [float(v) for v in table[e]] for e in self.estimators}

        return {
            "config": self.config,
            "k": self.k,
            "bias": per_est(self.bias),
            "variance": per_est(self.variance),
            "n_variance": per_est(self.n_variance),
            "n_success": {e: int(self.n_success[e]) for e in self.estimators},
            "failures": {e: int(self.failures[e]) for e in self.estimators},
            "eff_bound": None if self.eff_bound is None
            else [float(v) for v in self.eff_bound],
            "ple_bound": None if self.ple_bound is None
            else [float(v) for v in self.ple_bound],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _replicate(payload, rep):
    """Run one replication; returns (rep, {estimator: error list or None},
    {estimator: failure message}).  Top-level so process pools can pickle it."""
    model = build_model(payload["model"])
    theta_true = np.asarray(payload["theta_true"], dtype=float)
    r_true = model.r_of_theta(theta_true)
    u = sample_copula(r_true, payload["n"], payload["seed"], rep=rep,
                      lane=payload["lane"])
    x = apply_margins(u, MarginSpec(kinds=tuple(payload["margins"])))
    errors = {}
    failures = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sample = rank_transform(x)
        # The one-step update is pinned to a pseudo-likelihood pilot: in high
        # dimensions a moment pilot leaves a visible finite-sample bias that
        # the single update does not remove, while the update from the PLE
        # re-centers the estimate.  The PLE solve is shared when both
        # estimators are requested.
        ple_cache = {}

        def _estimate(est):
            if est == "pilot_moment":
                return pilot_moment(model, sample)
            if "ple" not in ple_cache:
                ple_cache["ple"] = ple_estimate(model, sample)
            if est == "ple":
                return ple_cache["ple"]
            return one_step(model, sample, pilot=ple_cache["ple"].theta_hat)

        for est in payload["estimators"]:
            try:
                result = _estimate(est)
                errors[est] = (result.theta_hat - theta_true).tolist()
            except (ConvergenceError, SingularityError, DomainError,
                    LinAlgError) as exc:
                errors[est] = None
                failures[est] = f"{type(exc).__name__}: {exc}"
    return rep, errors, failures


def _bounds_at_truth(config):
    model = build_model(config.model)
    try:
        geom = eval_geometry(model, config.theta_true)
        _, eff_inv = efficient_info(geom)
        _, _, ple_cov = ple_influence(geom)
        return np.diag(eff_inv).copy(), np.diag(ple_cov).copy()
    except (SingularityError, LinAlgError):
        return None, None


def run_experiment(config):
    """Run a replicated experiment and aggregate into an McReport.

    `config` may be an McConfig or a raw dict.  Results are deterministic
    given the config, independently of the worker count.
    """
    if isinstance(config, dict):
        config = McConfig.from_dict(config)
    payload = {
        "model": config.model, "theta_true": [float(v) for v in config.theta_true],
        "n": config.n, "seed": config.seed, "lane": config.lane,
        "margins": list(config.margins), "estimators": list(config.estimators),
    }
    reps = config.replications
    if config.workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunk = max(1, reps // (8 * config.workers))
            raw = list(pool.map(partial(_replicate, payload), range(reps),
                                chunksize=chunk))
    else:
        raw = [_replicate(payload, rep) for rep in range(reps)]
    raw.sort(key=lambda item: item[0])

    k = len(config.theta_true)
    errs = np.full((reps, len(config.estimators), k), np.nan)
    failures = {e: 0 for e in config.estimators}
    messages = {e: [] for e in config.estimators}
    for rep, errors, fails in raw:
        for idx, est in enumerate(config.estimators):
            if errors[est] is None:
                failures[est] += 1
                if len(messages[est]) < 5:
                    messages[est].append(f"rep {rep}: {fails[est]}")
            else:
                errs[rep, idx, :] = errors[est]

    for est, count in failures.items():
        if count > _FAILURE_LIMIT * reps:
            raise McExperimentError(
                f"estimator {est!r} failed in {count}/{reps} replications "
                f"(> {_FAILURE_LIMIT:.0%}); first failures: {messages[est]}",
                failures=failures)

    bias, variance, n_variance, n_success = {}, {}, {}, {}
    for idx, est in enumerate(config.estimators):
        rows = errs[:, idx, :]
        good = rows[~np.isnan(rows[:, 0])]
        n_success[est] = good.shape[0]
        bias[est] = good.mean(axis=0) if good.size else np.full(k, np.nan)
        if good.shape[0] > 1:
            variance[est] = good.var(axis=0, ddof=1)
        else:
            variance[est] = np.zeros(k)
        n_variance[est] = config.n * variance[est]

    eff_bound, ple_bound = _bounds_at_truth(config)
    return McReport(
        config=config.echo(), estimators=config.estimators, k=k,
        bias=bias, variance=variance, n_variance=n_variance,
        n_success=n_success, failures=failures,
        eff_bound=eff_bound, ple_bound=ple_bound,
        errors=errs if config.keep_errors else None,
    )


def run_grid(raw_config, thetas, workers=None):
    """Run one experiment per grid point, on separate RNG lanes."""
    reports = []
    for lane, theta in enumerate(thetas):
        point = dict(raw_config)
        point.pop("theta_grid", None)
        point.pop("output", None)
        point["theta_true"] = theta if isinstance(theta, list) else [float(theta)]
        point["lane"] = lane
        if workers is not None:
            point["workers"] = workers
        reports.append(run_experiment(point))
    return reports


def summarize(reports):
    """Flatten reports into comparison rows keyed by (theta, n, estimator).

    All reports must share the model and estimator set.
    """
    rows = []
    if not reports:
        return rows
    first = reports[0]
    for rep in reports:
        if rep.config["model"] != first.config["model"]:
            raise ShapeError("summarize: reports mix different models")
        if tuple(rep.estimators) != tuple(first.estimators) or rep.k != first.k:
            raise ShapeError("summarize: reports mix estimator sets or shapes")
        for est in rep.estimators:
            rows.append({
                "theta": list(rep.config["theta_true"]),
                "n": rep.config["n"],
                "estimator": est,
                "bias": [float(v) for v in rep.bias[est]],
                "n_variance": [float(v) for v in rep.n_variance[est]],
                "eff_bound": None if rep.eff_bound is None
                else [float(v) for v in rep.eff_bound],
                "ple_bound": None if rep.ple_bound is None
                else [float(v) for v in rep.ple_bound],
                "failures": int(rep.failures[est]),
                "n_success": int(rep.n_success[est]),
            })
    return rows


def write_report_json(reports, path):
    """Write one report (dict) or a list of reports as deterministic JSON."""
    if isinstance(reports, McReport):
        obj = reports.to_dict()
    else:
        obj = [r.to_dict() for r in reports]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def write_errors_csv(reports, path):
    """Per-replication error matrix: lane, replication, estimator, err_1..err_k."""
    if isinstance(reports, McReport):
        reports = [reports]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if reports:
            k = reports[0].k
            writer.writerow(["lane", "replication", "estimator"]
                            + [f"err_{m + 1}" for m in range(k)])
        for rep_obj in reports:
            if rep_obj.errors is None:
                continue
            lane = rep_obj.config.get("lane", 0)
            for r in range(rep_obj.errors.shape[0]):
                for idx, est in enumerate(rep_obj.estimators):
                    vals = rep_obj.errors[r, idx, :]
                    out = ["" if np.isnan(v) else repr(float(v)) for v in vals]
                    writer.writerow([lane, r, est] + out)


def write_summary_csv(rows, path):
    """Comparison table as CSV, one row per (theta, n, estimator)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if not rows:
            return
        k = len(rows[0]["theta"])
        header = (["n", "estimator"]
                  + [f"theta_{m + 1}" for m in range(k)]
                  + [f"bias_{m + 1}" for m in range(k)]
                  + [f"n_var_{m + 1}" for m in range(k)]
                  + [f"eff_bound_{m + 1}" for m in range(k)]
                  + [f"ple_bound_{m + 1}" for m in range(k)]
                  + ["failures", "n_success"])
        writer.writerow(header)
        for row in rows:
            bounds = row["eff_bound"] if row["eff_bound"] is not None else [""] * k
            plev = row["ple_bound"] if row["ple_bound"] is not None else [""] * k
            writer.writerow([row["n"], row["estimator"]]
                            + [repr(float(v)) for v in row["theta"]]
                            + [repr(float(v)) for v in row["bias"]]
                            + [repr(float(v)) for v in row["n_variance"]]
                            + [v if v == "" else repr(float(v)) for v in bounds]
                            + [v if v == "" else repr(float(v)) for v in plev]
                            + [row["failures"], row["n_success"]])
