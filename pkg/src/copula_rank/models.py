"""Structured correlation models theta -> R(theta).

Built-in families: unrestricted, exchangeable, Toeplitz, circular (p=4),
factor (low-rank loadings), a one-parameter demonstration model that is
adaptive at theta=0, and custom affine families R(theta) = I + sum theta_m G_m
loaded from config.  A model evaluates into a `Geometry`: the matrices
R, S = R^-1, dR/dtheta_m and dS/dtheta_m at a fixed theta, which is the
working context for every downstream formula.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .exceptions import ConfigError, DomainError, ShapeError, SingularityError
from .numcore import InnerProductContext, check_symmetric

__all__ = [
    "CorrelationModel",
    "Geometry",
    "Assumption1Report",
    "build_model",
    "load_model",
    "unrestricted",
    "exchangeable",
    "toeplitz",
    "circular",
    "factor",
    "adaptivity_demo",
    "custom_affine",
    "lower_triangle_pairs",
    "validate_assumption1",
    "eval_geometry",
]

_EPS_DOMAIN = 1e-6  # margin keeping theta away from open-interval boundaries


def lower_triangle_pairs(p):
    """Index pairs (i, j), i > j, in row-major order: (1,0), (2,0), (2,1), ..."""
    return [(i, j) for i in range(1, p) for j in range(i)]


@dataclass(frozen=True)
class CorrelationModel:
    """A parametrization theta -> R(theta) with derivative structure.

    Fields
    ------
    name : family identifier
    p : dimension of the random vector
    k : parameter dimension
    default_init : a point well inside the domain, used to seed solvers
    descriptor : JSON-serializable dict that rebuilds the model via build_model
    notes : caveats attached to diagnostics (e.g. factor identifiability)
    affine_generators : for affine families, the constant matrices G_m with
        R(theta) = I + sum theta_m G_m; None otherwise
    """

    name: str
    p: int
    k: int
    corr_fn: Callable = field(repr=False)
    grad_fn: Optional[Callable] = field(repr=False, default=None)
    domain_fn: Optional[Callable] = field(repr=False, default=None)
    clamp_fn: Optional[Callable] = field(repr=False, default=None)
    default_init: np.ndarray = None
    descriptor: dict = field(default_factory=dict)
    notes: tuple = ()
    affine_generators: Optional[tuple] = field(repr=False, default=None)

    def theta_vec(self, theta):
        """Coerce theta to a validated 1-d float vector of length k."""
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if t.ndim != 1 or t.size != self.k:
            raise ShapeError(f"theta must have length {self.k}, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise DomainError("theta must be finite")
        return t

    def r_of_theta(self, theta):
        """Correlation matrix R(theta)."""
        return self.corr_fn(self.theta_vec(theta))

    def r_dot(self, theta, m):
        """Derivative matrix dR/dtheta_m; analytic where available, else
        central finite differences with step max(1e-6, 1e-8*|theta_m|)."""
        t = self.theta_vec(theta)
        if not 0 <= m < self.k:
            raise ShapeError(f"parameter index {m} out of range for k={self.k}")
        if self.grad_fn is not None:
            return self.grad_fn(t, m)
        h = max(1e-6, 1e-8 * abs(t[m]))
        up, dn = t.copy(), t.copy()
        up[m] += h
        dn[m] -= h
        return (self.corr_fn(up) - self.corr_fn(dn)) / (2.0 * h)

    def r_dots(self, theta):
        return tuple(self.r_dot(theta, m) for m in range(self.k))

    def domain_check(self, theta):
        """True if theta lies in the declared (numerically safe) domain."""
        try:
            t = self.theta_vec(theta)
        except (ShapeError, DomainError):
            return False
        if self.domain_fn is not None:
            return bool(self.domain_fn(t))
        return _pd_check(self.corr_fn(t))

    def clamp(self, theta):
        """Project theta onto the eps-interior of the domain, when the family
        has a box-shaped domain; returns None when no closed-form clamp exists."""
        if self.clamp_fn is None:
            return None
        return self.clamp_fn(self.theta_vec(theta))


def _pd_check(r, floor=1e-10):
    return bool(np.linalg.eigvalsh(r)[0] > floor)


def _offdiag(a):
    out = np.array(a, dtype=float)
    np.fill_diagonal(out, 0.0)
    return out


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------

def _affine_model(name, p, generators, descriptor, domain_fn=None, clamp_fn=None,
                  default_init=None, notes=()):
    gens = tuple(np.asarray(g, dtype=float) for g in generators)
    k = len(gens)

    def corr_fn(t):
        r = np.eye(p)
        for tm, g in zip(t, gens):
            r = r + tm * g
        return r

    def grad_fn(t, m):
        return gens[m].copy()

    init = np.zeros(k) if default_init is None else np.asarray(default_init, float)
    return CorrelationModel(
        name=name, p=p, k=k, corr_fn=corr_fn, grad_fn=grad_fn,
        domain_fn=domain_fn, clamp_fn=clamp_fn, default_init=init,
        descriptor=descriptor, notes=notes, affine_generators=gens,
    )


def unrestricted(p):
    """All p(p-1)/2 correlations free; theta lists the lower triangle row-major."""
    if p < 2:
        raise ConfigError("p: unrestricted model needs p >= 2")
    pairs = lower_triangle_pairs(p)
    gens = []
    for i, j in pairs:
        g = np.zeros((p, p))
        g[i, j] = g[j, i] = 1.0
        gens.append(g)
    return _affine_model("unrestricted", p, gens, {"family": "unrestricted", "p": p})


def exchangeable(p):
    """All off-diagonal entries equal theta; domain (-1/(p-1)+eps, 1-eps)."""
    if p < 2:
        raise ConfigError("p: exchangeable model needs p >= 2")
    lo = -1.0 / (p - 1) + _EPS_DOMAIN
    hi = 1.0 - _EPS_DOMAIN
    g = _offdiag(np.ones((p, p)))

    def domain_fn(t):
        return bool(lo <= t[0] <= hi)

    def clamp_fn(t):
        return np.clip(t, lo, hi)

    return _affine_model(
        "exchangeable", p, [g], {"family": "exchangeable", "p": p},
        domain_fn=domain_fn, clamp_fn=clamp_fn,
    )


def toeplitz(p):
    """R_ij = theta_|i-j|; k = p-1 free lag correlations."""
    if p < 2:
        raise ConfigError("p: toeplitz model needs p >= 2")
    gens = []
    for lag in range(1, p):
        g = np.zeros((p, p))
        for i in range(p - lag):
            g[i, i + lag] = g[i + lag, i] = 1.0
        gens.append(g)
    return _affine_model("toeplitz", p, gens, {"family": "toeplitz", "p": p})


def circular():
    """The p=4 one-parameter family with first neighbors theta and
    second neighbors theta^2 (nonlinear in theta)."""
    p = 4
    lo, hi = -1.0 + _EPS_DOMAIN, 1.0 - _EPS_DOMAIN
    first = np.zeros((p, p))
    for i, j in [(0, 1), (1, 2), (2, 3), (0, 3)]:
        first[i, j] = first[j, i] = 1.0
    second = np.zeros((p, p))
    for i, j in [(0, 2), (1, 3)]:
        second[i, j] = second[j, i] = 1.0

    def corr_fn(t):
        return np.eye(p) + t[0] * first + t[0] ** 2 * second

    def grad_fn(t, m):
        return first + 2.0 * t[0] * second

    def domain_fn(t):
        return bool(lo <= t[0] <= hi)

    def clamp_fn(t):
        return np.clip(t, lo, hi)

    return CorrelationModel(
        name="circular", p=p, k=1, corr_fn=corr_fn, grad_fn=grad_fn,
        domain_fn=domain_fn, clamp_fn=clamp_fn, default_init=np.zeros(1),
        descriptor={"family": "circular"},
    )


def factor(p, q, constraint="lower_triangular"):
    """Factor model R(theta) = I + offdiag(L L') with p x q loadings L.

    The raw parametrization (theta = L flattened row-major, k = p*q) is not
    identifiable for q >= 2 -- R(LO) = R(L) for orthogonal O -- so estimation
    needs a loading constraint; geometry and the efficiency diagnostics work
    on the raw parametrization, where the span test tolerates the rank
    deficiency of the derivative basis.
    """
    if p < 2:
        raise ConfigError("p: factor model needs p >= 2")
    if not 1 <= q < p:
        raise ConfigError("q: factor model needs 1 <= q < p")
    if constraint not in ("lower_triangular", "none"):
        raise ConfigError(f"constraint: unknown loading constraint {constraint!r}")
    k = p * q

    def corr_fn(t):
        load = t.reshape(p, q)
        return np.eye(p) + _offdiag(load @ load.T)

    def grad_fn(t, m):
        load = t.reshape(p, q)
        a, b = divmod(m, q)
        e = np.zeros((p, q))
        e[a, b] = 1.0
        return _offdiag(e @ load.T + load @ e.T)

    def domain_fn(t):
        return _pd_check(corr_fn(t))

    # Mildly staggered loadings: inside the domain with nonzero gradients,
    # and column-independent when q > 1.
    init = np.zeros((p, q))
    for j in range(q):
        init[:, j] = 0.5 / (j + 1) * np.cos(np.arange(p) + j)
    notes = (
        f"loading constraint for estimation: {constraint}",
        "unverified reparametrization condition",
    )
    return CorrelationModel(
        name="factor", p=p, k=k, corr_fn=corr_fn, grad_fn=grad_fn,
        domain_fn=domain_fn, default_init=init.ravel(),
        descriptor={"family": "factor", "p": p, "q": q, "constraint": constraint},
        notes=notes,
    )


def adaptivity_demo():
    """One-parameter p=3 model with R12 = R13 = theta^2 + 1/2, R23 = theta + 1/4.

    Built so that the derivative structure makes the model adaptive at
    theta = 0 despite R(0) being far from independence.
    """
    p = 3

    def corr_fn(t):
        th = t[0]
        a = th * th + 0.5
        b = th + 0.25
        return np.array([[1.0, a, a], [a, 1.0, b], [a, b, 1.0]])

    def grad_fn(t, m):
        th = t[0]
        return np.array([[0.0, 2 * th, 2 * th],
                         [2 * th, 0.0, 1.0],
                         [2 * th, 1.0, 0.0]])

    def domain_fn(t):
        return _pd_check(corr_fn(t))

    return CorrelationModel(
        name="adaptivity_demo", p=p, k=1, corr_fn=corr_fn, grad_fn=grad_fn,
        domain_fn=domain_fn, default_init=np.zeros(1),
        descriptor={"family": "adaptivity_demo"},
    )


def custom_affine(p, generators, name="custom_affine"):
    """Affine family R(theta) = I + sum theta_m G_m from user-supplied
    zero-diagonal symmetric generators."""
    if p < 2:
        raise ConfigError("p: custom_affine model needs p >= 2")
    gens = []
    if len(generators) == 0:
        raise ConfigError("generators: custom_affine needs k >= 1 generators")
    for i, g in enumerate(generators):
        try:
            g = check_symmetric(g, name=f"generators[{i}]")
        except ShapeError as exc:
            raise ConfigError(f"generators[{i}]: {exc}") from exc
        if g.shape[0] != p:
            raise ConfigError(f"generators[{i}]: dimension {g.shape[0]} != p = {p}")
        if np.any(np.diag(g) != 0.0):
            raise ConfigError(f"generators[{i}]: diagonal entries must be zero")
        gens.append(g)
    descriptor = {
        "family": "custom_affine", "p": p,
        "generators": [g.tolist() for g in gens],
    }
    return _affine_model(name, p, gens, descriptor)


_FAMILY_FIELDS = {
    "unrestricted": {"p"},
    "exchangeable": {"p"},
    "toeplitz": {"p"},
    "circular": set(),
    "factor": {"p", "q", "constraint"},
    "adaptivity_demo": set(),
    "custom_affine": {"p", "generators"},
}


def build_model(descriptor):
    """Build a CorrelationModel from a descriptor dict.

    Examples: {"family": "toeplitz", "p": 4} or
    {"family": "custom_affine", "p": 3, "generators": [[...], ...]}.
    Validation errors name the offending field.
    """
    if not isinstance(descriptor, dict):
        raise ConfigError("descriptor: expected a JSON object")
    if "family" not in descriptor:
        raise ConfigError("family: missing required field")
    fam = descriptor["family"]
    if fam not in _FAMILY_FIELDS:
        raise ConfigError(f"family: unknown family {fam!r}")
    allowed = _FAMILY_FIELDS[fam] | {"family"}
    for key in descriptor:
        if key not in allowed:
            raise ConfigError(f"{key}: unexpected field for family {fam!r}")

    def _int_field(key, required=True, default=None):
        if key not in descriptor:
            if required:
                raise ConfigError(f"{key}: missing required field")
            return default
        v = descriptor[key]
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        return v

    if fam == "unrestricted":
        return unrestricted(_int_field("p"))
    if fam == "exchangeable":
        return exchangeable(_int_field("p"))
    if fam == "toeplitz":
        return toeplitz(_int_field("p"))
    if fam == "circular":
        return circular()
    if fam == "factor":
        return factor(_int_field("p"), _int_field("q"),
                      constraint=descriptor.get("constraint", "lower_triangular"))
    if fam == "adaptivity_demo":
        return adaptivity_demo()
    # custom_affine
    gens = descriptor.get("generators")
    if gens is None:
        raise ConfigError("generators: missing required field")
    return custom_affine(_int_field("p"), gens)


def load_model(path):
    """Read a model descriptor JSON file and build the model."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            descriptor = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"descriptor: invalid JSON ({exc})") from exc
    return build_model(descriptor)


# ---------------------------------------------------------------------------
# Diagnostics and geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Assumption1Report:
    """Numerical check of the identifiability assumption at a point.

    Violations are reported, never thrown, so callers can present them.
    """

    model_name: str
    theta: np.ndarray
    unit_diag_error: float
    unit_diag_ok: bool
    min_eigenvalue: float
    positive_definite: bool
    rdot_rank: int
    rdot_min_singular: float
    rdot_independent: bool
    k: int
    notes: tuple
    passed: bool
    violated: tuple

    def to_dict(self):
        return {
            "criterion": "assumption1",
            "model": self.model_name,
            "theta": list(map(float, np.atleast_1d(self.theta))),
            "unit_diag_error": self.unit_diag_error,
            "min_eigenvalue": self.min_eigenvalue,
            "positive_definite": self.positive_definite,
            "rdot_rank": self.rdot_rank,
            "rdot_min_singular": self.rdot_min_singular,
            "rdot_independent": self.rdot_independent,
            "k": self.k,
            "violated": list(self.violated),
            "notes": list(self.notes),
            "verdict": "pass" if self.passed else "fail",
        }


def validate_assumption1(model, theta, pd_floor=1e-10, indep_rtol=1e-8):
    """Check R(theta) is a correlation matrix (unit diagonal, positive
    definite) and that the derivative matrices dR/dtheta_m are linearly
    independent, via the singular values of their vectorizations."""
    t = model.theta_vec(theta)
    r = model.r_of_theta(t)
    diag_err = float(np.max(np.abs(np.diag(r) - 1.0)))
    unit_ok = diag_err <= 1e-10
    min_eig = float(np.linalg.eigvalsh(r)[0])
    pd_ok = min_eig > pd_floor

    stack = np.column_stack([g.ravel() for g in model.r_dots(t)])
    svals = np.linalg.svd(stack, compute_uv=False)
    smax = float(svals[0]) if svals.size else 0.0
    smin = float(svals[-1]) if svals.size else 0.0
    tol = indep_rtol * max(1.0, smax)
    rank = int(np.sum(svals > tol))
    indep_ok = rank == model.k

    violated = []
    if not unit_ok:
        violated.append("unit_diagonal")
    if not pd_ok:
        violated.append("positive_definite")
    if not indep_ok:
        violated.append("rdot_independent")
    return Assumption1Report(
        model_name=model.name, theta=t,
        unit_diag_error=diag_err, unit_diag_ok=unit_ok,
        min_eigenvalue=min_eig, positive_definite=pd_ok,
        rdot_rank=rank, rdot_min_singular=smin, rdot_independent=indep_ok,
        k=model.k, notes=model.notes, passed=not violated,
        violated=tuple(violated),
    )


@dataclass(frozen=True)
class Geometry:
    """All matrices of the model evaluated at a fixed theta.

    r is the correlation matrix, s its inverse, r_dots/s_dots the parameter
    derivatives of each, and ctx the inner-product context built on r.
    """

    theta: np.ndarray
    r: np.ndarray
    s: np.ndarray
    r_dots: tuple
    s_dots: tuple
    ctx: InnerProductContext

    @property
    def p(self):
        return self.r.shape[0]

    @property
    def k(self):
        return len(self.r_dots)


def eval_geometry(model, theta):
    """Evaluate R, S = R^-1 and their theta-derivatives at theta.

    S is computed through a Cholesky factorization; failure raises a
    SingularityError carrying the smallest-eigenvalue estimate.
    """
    t = model.theta_vec(theta)
    r = model.r_of_theta(t)
    try:
        c = cho_factor(r, lower=True)
    except LinAlgError as exc:
        eig = float(np.linalg.eigvalsh(r)[0])
        raise SingularityError(
            f"R(theta) is not positive definite for {model.name} "
            f"(min eigenvalue {eig:.3e})", eigenvalue=eig) from exc
    s = cho_solve(c, np.eye(model.p))
    s = 0.5 * (s + s.T)
    r_dots = model.r_dots(t)
    s_dots = []
    for g in r_dots:
        sd = -s @ g @ s
        s_dots.append(0.5 * (sd + sd.T))
    return Geometry(theta=t, r=r, s=s, r_dots=tuple(r_dots),
                    s_dots=tuple(s_dots), ctx=InnerProductContext(r))
