"""Scalar normal functions and symmetric-matrix algebra.

Everything downstream is built on two ingredients: the standard normal
density/cdf/quantile trio, and the inner product

    <A, B> = 1/2 tr(A R B R)

on real symmetric p x p matrices, where R is a correlation matrix.  For
Z ~ N(0, R) this inner product equals Cov(Z'AZ/2, Z'BZ/2), which is why
Gram matrices built from it are information matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky as _cholesky
from scipy.linalg import LinAlgError
from scipy.special import erfcx, ndtr

from .exceptions import DomainError, ShapeError, SingularityError

__all__ = [
    "norm_pdf",
    "norm_cdf",
    "norm_quantile",
    "std_gauss",
    "InnerProductContext",
    "theta_inner",
    "gram",
    "span_residual",
    "check_symmetric",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)

# Coefficients of Acklam's rational approximation to the normal quantile.
# Raw relative error is ~1.15e-9 over (0,1); a single Halley refinement
# against the exact cdf pushes it to machine precision.
_ACK_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_ACK_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
    1.0,
)
_ACK_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_ACK_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
    1.0,
)
_ACK_P_LOW = 0.02425


def norm_pdf(x):
    """Standard normal density, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def norm_cdf(x):
    """Standard normal cdf, elementwise."""
    x = np.asarray(x, dtype=float)
    out = ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def _quantile_lower_half(p):
    """Quantile for p in (0, 0.5]; vectorized, returns values <= 0."""
    p = np.asarray(p, dtype=float)
    x = np.empty_like(p)

    tail = p < _ACK_P_LOW
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(p[tail]))
        x[tail] = np.polyval(_ACK_C, q) / np.polyval(_ACK_D, q)
    if np.any(~tail):
        q = p[~tail] - 0.5
        r = q * q
        x[~tail] = np.polyval(_ACK_A, r) * q / np.polyval(_ACK_B, r)

    # One Halley step, written so that nothing overflows deep in the tail:
    # with e = Phi(x) - p, the correction uses e * exp(x^2/2), computed as
    # erfcx(-x/sqrt(2))/2 - exp(log p + x^2/2).
    r = 0.5 * erfcx(-x / np.sqrt(2.0)) - np.exp(np.log(p) + 0.5 * x * x)
    u = r * _SQRT_2PI
    return x - u / (1.0 + 0.5 * x * u)


def norm_quantile(p):
    """Standard normal quantile function, elementwise.

    Parameters
    ----------
    p : float or array_like in the open interval (0, 1)

    Returns
    -------
    float or ndarray

    Raises
    ------
    DomainError
        If any entry lies outside (0, 1) or is not finite.
    """
    arr = np.asarray(p, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0)):
        raise DomainError("quantile argument must lie strictly inside (0, 1)")
    upper = arr > 0.5
    # 1 - p is exact for p in [0.5, 1], so the mirrored call loses nothing.
    out = np.where(upper, -_quantile_lower_half(np.where(upper, 1.0 - arr, 0.5)),
                   _quantile_lower_half(np.where(upper, 0.5, arr)))
    return float(out) if out.ndim == 0 else out


def std_gauss(kind, x):
    """Dispatch to the standard normal density, cdf or quantile.

    Parameters
    ----------
    kind : {"density", "cdf", "quantile"}
    x : float or array_like
    """
    if kind == "density":
        return norm_pdf(x)
    if kind == "cdf":
        return norm_cdf(x)
    if kind == "quantile":
        return norm_quantile(x)
    raise ValueError(f"unknown kind {kind!r}; expected density, cdf or quantile")


def check_symmetric(a, name="matrix", atol=1e-8):
    """Validate that `a` is a square symmetric 2-d array and return it as float."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=atol):
        raise ShapeError(f"{name} is not symmetric")
    return a


@dataclass(frozen=True)
class InnerProductContext:
    """Holds the correlation matrix R defining the inner product <A,B> = tr(ARBR)/2.

    Construction validates that R is symmetric with unit diagonal and admits
    a Cholesky factorization (i.e. is positive definite).
    """

    corr: np.ndarray
    chol: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        r = check_symmetric(self.corr, name="correlation matrix")
        if not np.allclose(np.diag(r), 1.0, rtol=0.0, atol=1e-10):
            raise ShapeError("correlation matrix must have unit diagonal")
        try:
            c = _cholesky(r, lower=True)
        except LinAlgError as exc:
            eig = float(np.linalg.eigvalsh(r)[0])
            raise SingularityError(
                f"correlation matrix is not positive definite (min eigenvalue {eig:.3e})",
                eigenvalue=eig,
            ) from exc
        object.__setattr__(self, "corr", r)
        object.__setattr__(self, "chol", c)

    @property
    def dim(self):
        return self.corr.shape[0]


def _require_dim(a, p, name):
    a = check_symmetric(a, name=name)
    if a.shape[0] != p:
        raise ShapeError(f"{name} has dim {a.shape[0]}, expected {p}")
    return a


def theta_inner(a, b, ctx):
    """Inner product <A, B> = tr(A R B R) / 2 on symmetric matrices.

    Parameters
    ----------
    a, b : (p, p) symmetric arrays
    ctx : InnerProductContext

    Returns
    -------
    float
    """
    r = ctx.corr
    p = ctx.dim
    a = _require_dim(a, p, "A")
    b = _require_dim(b, p, "B")
    ar = a @ r
    br = b @ r
    # tr(X Y) = sum(X * Y.T)
    return 0.5 * float(np.sum(ar * br.T))


def gram(basis, ctx):
    """Gram matrix of a list of symmetric matrices under `theta_inner`.

    The result is symmetric positive semidefinite, and positive definite
    exactly when the basis is linearly independent.
    """
    p = ctx.dim
    mats = [_require_dim(m, p, f"basis[{i}]") for i, m in enumerate(basis)]
    if not mats:
        raise ShapeError("basis must contain at least one matrix")
    prods = [m @ ctx.corr for m in mats]
    k = len(mats)
    out = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            out[i, j] = out[j, i] = 0.5 * np.sum(prods[i] * prods[j].T)
    return out


def span_residual(m, basis):
    """Least-squares projection of M onto span(basis) of symmetric matrices.

    Uses the Frobenius inner product (full vectorization counts each
    off-diagonal pair twice, which is the same geometry as upper triangles
    with sqrt(2) weights).  Rank-deficient bases are handled by the
    rank-revealing least-squares solve.

    Parameters
    ----------
    m : (p, p) symmetric array
    basis : sequence of (p, p) symmetric arrays; may be empty

    Returns
    -------
    residual_norm : float
        Frobenius norm of M - sum_m c_m basis[m].
    coefficients : (k,) ndarray
        The minimizing coefficients (minimum-norm solution if deficient).
    """
    m = check_symmetric(m, name="M")
    p = m.shape[0]
    if len(basis) == 0:
        return float(np.linalg.norm(m)), np.empty(0)
    mats = [_require_dim(b, p, f"basis[{i}]") for i, b in enumerate(basis)]
    design = np.column_stack([b.ravel() for b in mats])
    coeff, *_ = np.linalg.lstsq(design, m.ravel(), rcond=None)
    resid = m.ravel() - design @ coeff
    return float(np.linalg.norm(resid)), coeff
