"""Rank-based estimation pipeline.

Data enter only through their column ranks: pseudo-observations
rank/(n+1), Gaussianized scores zhat = quantile(pseudo-observations), and
the normal-scores matrix Rhat = zhat' zhat / n.  Consequently every
estimator in this module is exactly invariant under strictly increasing
transformations of the raw columns.

The pseudo-likelihood estimator solves the k pseudo-score equations

    tr(dS_m(theta) (R(theta) - Rhat)) = 0,

and the one-step estimator adds the inverse efficient information times
the empirical mean of the efficient score to a root-n-consistent pilot.
The mean efficient score has the closed form tr(A*_m Rhat) / 2, since the
score is the quadratic form z' A*_m z / 2 with tr(A*_m R) = 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.optimize import minimize
from scipy.stats import rankdata

from .exceptions import (ConvergenceError, DegenerateMarginError, DomainError,
                         ShapeError, SingularityError)
from .geometry import efficient_info, efficient_score_matrices, ple_influence
from .models import eval_geometry
from .numcore import norm_quantile

__all__ = [
    "RankedSample",
    "EstimateResult",
    "rank_transform",
    "normal_scores_matrix",
    "sigma_n_sq",
    "ple_estimate",
    "pilot_moment",
    "one_step",
]


@dataclass(frozen=True)
class RankedSample:
    """An n x p data matrix reduced to ranks.

    ranks holds average ranks (so half-integers may appear when columns are
    tied); tie_columns records which columns had ties.  pseudo_obs is
    rank/(n+1), strictly inside (0,1), and zhat its Gaussianization.
    """

    n: int
    p: int
    ranks: np.ndarray
    pseudo_obs: np.ndarray
    zhat: np.ndarray
    tie_columns: tuple = ()

    @property
    def has_ties(self):
        return len(self.tie_columns) > 0


@dataclass(frozen=True)
class EstimateResult:
    theta_hat: np.ndarray
    method: str
    iterations: int
    converged: bool
    std_errors: Optional[np.ndarray] = None
    clamped: bool = False
    tie_warning: bool = False

    def to_dict(self):
        return {
            "theta_hat": [float(v) for v in np.atleast_1d(self.theta_hat)],
            "std_errors": None if self.std_errors is None
            else [float(v) for v in np.atleast_1d(self.std_errors)],
            "method": self.method,
            "converged": bool(self.converged),
            "tie_warning": bool(self.tie_warning),
        }


def rank_transform(data):
    """Column ranks, pseudo-observations rank/(n+1), and their Gaussianization.

    Ties get average ranks and a recorded warning; a constant column is a
    degenerate margin and raises.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2:
        raise ShapeError(f"data must be 2-d, got shape {data.shape}")
    n, p = data.shape
    if n < 2:
        raise DomainError("rank transform needs n >= 2 observations")
    if not np.all(np.isfinite(data)):
        raise DomainError("data must be finite")
    ranks = np.empty((n, p))
    ties = []
    for j in range(p):
        col = data[:, j]
        n_distinct = np.unique(col).size
        if n_distinct == 1:
            raise DegenerateMarginError(f"column {j} is constant")
        if n_distinct < n:
            ties.append(j)
        ranks[:, j] = rankdata(col, method="average")
    if ties:
        warnings.warn(f"ties in column(s) {ties}; average ranks used", RuntimeWarning,
                      stacklevel=2)
    pseudo = ranks / (n + 1.0)
    return RankedSample(n=n, p=p, ranks=ranks, pseudo_obs=pseudo,
                        zhat=norm_quantile(pseudo), tie_columns=tuple(ties))


def normal_scores_matrix(sample):
    """Rhat = zhat' zhat / n, the empirical second-moment matrix of the
    Gaussianized pseudo-observations.  For tie-free data its diagonal equals
    sigma_n_sq(n)."""
    m = sample.zhat.T @ sample.zhat / sample.n
    return 0.5 * (m + m.T)


def sigma_n_sq(n):
    """Mean of quantile(i/(n+1))^2 over i = 1..n; tends to 1 at rate log(n)/n."""
    grid = np.arange(1, n + 1) / (n + 1.0)
    z = norm_quantile(grid)
    return float(np.mean(z * z))


# ---------------------------------------------------------------------------
# Pseudo-likelihood estimation
# ---------------------------------------------------------------------------

def _pseudo_score(model, theta, rhat):
    """Vector of pseudo-score values tr(dS_m(theta)(R(theta) - Rhat)).

    Computed as -sum(dR_m * W) with W = S (R - Rhat) S, sharing one
    factorization across components.
    """
    r = model.r_of_theta(theta)
    c = cho_factor(r, lower=True)
    w = cho_solve(c, cho_solve(c, (r - rhat).T).T)
    return np.array([-np.sum(rd * w) for rd in model.r_dots(theta)])


def _mean_pseudo_negloglik(model, theta, rhat):
    """Mean negative pseudo-log-likelihood, up to an additive constant:
    (log det R + tr((S - I) Rhat)) / 2; +inf outside the domain."""
    if not model.domain_check(theta):
        return np.inf
    r = model.r_of_theta(theta)
    try:
        c = cho_factor(r, lower=True)
    except LinAlgError:
        return np.inf
    logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    s_rhat = cho_solve(c, rhat)
    return 0.5 * (logdet + float(np.trace(s_rhat)) - float(np.trace(rhat)))


def _fd_jacobian(model, theta, rhat, base):
    k = model.k
    jac = np.empty((k, k))
    for m in range(k):
        h = max(1e-6, 1e-8 * abs(theta[m]))
        up, dn = theta.copy(), theta.copy()
        up[m] += h
        dn[m] -= h
        if model.domain_check(up) and model.domain_check(dn):
            jac[:, m] = (_pseudo_score(model, up, rhat)
                         - _pseudo_score(model, dn, rhat)) / (2.0 * h)
        else:  # one-sided at the domain edge
            pt, sign = (up, 1.0) if model.domain_check(up) else (dn, -1.0)
            jac[:, m] = sign * (_pseudo_score(model, pt, rhat) - base) / h
    return jac


def _default_init(model, rhat):
    pilot = _moment_theta(model, rhat)
    if pilot is not None and model.domain_check(pilot):
        return pilot
    return np.asarray(model.default_init, dtype=float).copy()


def _ple_std_errors(model, theta, n):
    try:
        geom = eval_geometry(model, theta)
        _, _, cov = ple_influence(geom)
        return np.sqrt(np.maximum(np.diag(cov), 0.0) / n)
    except (SingularityError, LinAlgError):
        return None


def ple_estimate(model, sample, init=None, max_iter=100):
    """Pseudo-likelihood estimate by damped Newton on the pseudo-score
    equations, with a direct likelihood-maximization fallback.

    For the unrestricted family the solution is read off Rhat (its
    off-diagonal entries, in lower-triangle order) without iteration.
    Convergence means pseudo-score sup-norm <= 1e-8 * k.
    """
    rhat = normal_scores_matrix(sample)
    tol = 1e-8 * model.k

    if model.name == "unrestricted":
        from .models import lower_triangle_pairs
        theta = np.array([rhat[i, j] for i, j in lower_triangle_pairs(model.p)])
        return EstimateResult(
            theta_hat=theta, method="ple", iterations=0, converged=True,
            std_errors=_ple_std_errors(model, theta, sample.n),
            tie_warning=sample.has_ties)

    theta = model.theta_vec(_default_init(model, rhat) if init is None else init)
    if not model.domain_check(theta):
        raise DomainError(f"initial theta {theta} outside the domain of {model.name}")

    trace = []
    fallback_tried = False
    for iteration in range(max_iter):
        psi = _pseudo_score(model, theta, rhat)
        norm = float(np.max(np.abs(psi)))
        trace.append((theta.copy(), norm))
        if norm <= tol:
            return EstimateResult(
                theta_hat=theta, method="ple", iterations=iteration,
                converged=True, std_errors=_ple_std_errors(model, theta, sample.n),
                tie_warning=sample.has_ties)
        jac = _fd_jacobian(model, theta, rhat, psi)
        step, *_ = np.linalg.lstsq(jac, -psi, rcond=None)
        scale = 1.0
        moved = False
        while scale > 2.0 ** -30:
            cand = theta + scale * step
            if model.domain_check(cand):
                if float(np.max(np.abs(_pseudo_score(model, cand, rhat)))) < norm:
                    theta = cand
                    moved = True
                    break
            scale *= 0.5
        if not moved:
            if fallback_tried:
                break
            fallback_tried = True
            res = minimize(lambda t: _mean_pseudo_negloglik(model, t, rhat), theta,
                           method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-14,
                                    "maxiter": 4000, "maxfev": 4000})
            if model.domain_check(res.x):
                theta = np.asarray(res.x, dtype=float)

    psi = _pseudo_score(model, theta, rhat)
    norm = float(np.max(np.abs(psi)))
    trace.append((theta.copy(), norm))
    if norm <= tol:
        return EstimateResult(
            theta_hat=theta, method="ple", iterations=len(trace) - 1,
            converged=True, std_errors=_ple_std_errors(model, theta, sample.n),
            tie_warning=sample.has_ties)
    raise ConvergenceError(
        f"pseudo-score Newton did not converge for {model.name} "
        f"(final sup-norm {norm:.3e}, tolerance {tol:.3e})", trace=trace)


# ---------------------------------------------------------------------------
# Pilot and one-step
# ---------------------------------------------------------------------------

def _moment_theta(model, rhat):
    """Closed-form minimum-distance pilot where the family supports one."""
    if model.affine_generators is not None:
        design = np.column_stack([g.ravel() for g in model.affine_generators])
        theta, *_ = np.linalg.lstsq(design, (rhat - np.eye(model.p)).ravel(),
                                    rcond=None)
        return theta
    if model.name == "circular":
        first = [(0, 1), (1, 2), (2, 3), (0, 3)]
        return np.array([np.mean([rhat[i, j] for i, j in first])])
    return None


def _clamp_into_domain(model, theta, anchor):
    """Clamp theta into the domain: closed-form projection when the family
    has one, otherwise shrink toward the in-domain anchor."""
    clamped = model.clamp(theta)
    if clamped is not None and model.domain_check(clamped):
        return clamped
    scale = 1.0
    for _ in range(80):
        scale *= 0.5
        cand = anchor + scale * (theta - anchor)
        if model.domain_check(cand):
            return cand
    return anchor.copy()


def pilot_moment(model, sample):
    """Minimum-distance pilot: minimize ||R(theta) - Rhat||_F in closed form
    over affine families (circular uses the mean first-neighbor correlation).
    Falls back to ple_estimate for families without an averaging map."""
    rhat = normal_scores_matrix(sample)
    theta = _moment_theta(model, rhat)
    if theta is None:
        return ple_estimate(model, sample, init=model.default_init)
    clamped = False
    if not model.domain_check(theta):
        theta = _clamp_into_domain(model, theta,
                                   np.asarray(model.default_init, dtype=float))
        clamped = True
    return EstimateResult(theta_hat=theta, method="pilot_moment", iterations=0,
                          converged=True, clamped=clamped,
                          tie_warning=sample.has_ties)


def default_pilot(model, sample):
    """Pilot policy for the one-step estimator: the moment pilot for families
    with an averaging map, the pseudo-likelihood estimator otherwise."""
    result = pilot_moment(model, sample)
    return result.theta_hat


def one_step(model, sample, pilot=None, iterate_twice=False):
    """Efficient one-step update from a root-n-consistent pilot.

    theta_hat = pilot + I*^-1(pilot) mean_i efficient_score(pseudo_obs_i),
    with the mean efficient score computed as tr(A*_m Rhat) / 2.  A single
    update by default; `iterate_twice` repeats the update once from the
    updated point.  Updates leaving the domain are clamped to its
    eps-interior and flagged.
    """
    rhat = normal_scores_matrix(sample)
    pilot = default_pilot(model, sample) if pilot is None else model.theta_vec(pilot)
    if not model.domain_check(pilot):
        raise DomainError(f"pilot {pilot} outside the domain of {model.name}")

    theta = np.asarray(pilot, dtype=float).copy()
    clamped = False
    rounds = 2 if iterate_twice else 1
    for _ in range(rounds):
        geom = eval_geometry(model, theta)
        mats = efficient_score_matrices(geom)
        _, eff_inv = efficient_info(geom, eff_matrices=mats)
        mean_score = np.array([0.5 * np.sum(a * rhat) for a in mats])
        cand = theta + eff_inv @ mean_score
        if model.domain_check(cand):
            theta = cand
        else:
            theta = _clamp_into_domain(model, cand, theta)
            clamped = True
            break

    std = None
    try:
        geom = eval_geometry(model, theta)
        _, eff_inv = efficient_info(geom)
        std = np.sqrt(np.maximum(np.diag(eff_inv), 0.0) / sample.n)
    except (SingularityError, LinAlgError):
        pass
    return EstimateResult(theta_hat=theta, method="one_step", iterations=rounds,
                          converged=True, std_errors=std, clamped=clamped,
                          tie_warning=sample.has_ties)
