"""Geometry of symmetric positive definite (SPD) matrices.

The set of C x C SPD matrices forms a Riemannian manifold under the
affine-invariant metric. Its tangent space at any point is the Euclidean
space of symmetric matrices. All operators here work on plain numpy
arrays and are pure functions: they never mutate their inputs, so they
are safe to call concurrently.

Matrix functions (exp, log, sqrt) are computed through the eigenvalue
decomposition: for a symmetric ``A = U diag(a) U^T``,
``f(A) = U diag(f(a)) U^T``.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConvergenceError, ValidationError

SYMMETRY_RTOL = 1e-10

# Relative floor applied to whitened spectra. Congruence by the inverse
# square root of a badly conditioned matrix can push eigenvalues that are
# mathematically positive a hair below zero in float64; values above the
# rejection threshold are treated as roundoff and clamped, anything more
# negative is a genuinely non-definite input.
EIG_FLOOR_RTOL = 1e-15
EIG_REJECT_RTOL = 1e-10

DEFAULT_MEAN_TOLERANCE = 1e-8
DEFAULT_MEAN_MAX_ITERATIONS = 200


def _as_square(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be a square 2-D array, got shape {a.shape}")
    return a


def symmetrize(a, name="matrix", rtol=SYMMETRY_RTOL):
    """Return (A + A^T)/2 after checking A is symmetric within tolerance.

    Asymmetry is measured as ||A - A^T||_F relative to ||A||_F. Below the
    tolerance it is considered floating-point noise and silently repaired;
    beyond it the input is rejected rather than repaired.
    """
    a = _as_square(a, name)
    norm = np.linalg.norm(a)
    asym = np.linalg.norm(a - a.T)
    if asym > rtol * max(norm, 1.0):
        raise ValidationError(
            f"{name} is not symmetric: relative asymmetry {asym / max(norm, 1e-300):.3e}"
        )
    return (a + a.T) / 2.0


def _eigh_spd(p, name):
    """Eigendecomposition of an SPD matrix, validating positivity."""
    p = symmetrize(p, name)
    w, u = np.linalg.eigh(p)
    if w[0] <= 0.0:
        raise ValidationError(
            f"{name} is not positive definite: smallest eigenvalue {w[0]:.3e}"
        )
    return w, u


def is_spd(a, rtol=SYMMETRY_RTOL):
    """True if ``a`` is symmetric within tolerance with all eigenvalues > 0."""
    try:
        _eigh_spd(a, "matrix")
    except ValidationError:
        return False
    return True


def matrix_exp(s):
    """Matrix exponential of a symmetric matrix; the result is SPD."""
    s = symmetrize(s, "tangent matrix")
    w, u = np.linalg.eigh(s)
    return (u * np.exp(w)) @ u.T


def matrix_log(p):
    """Matrix logarithm of an SPD matrix; the result is symmetric."""
    w, u = _eigh_spd(p, "matrix")
    return (u * np.log(w)) @ u.T


def matrix_sqrt(p):
    """Unique SPD square root of an SPD matrix."""
    w, u = _eigh_spd(p, "matrix")
    return (u * np.sqrt(w)) @ u.T


def matrix_invsqrt(p):
    """Inverse of the SPD square root of an SPD matrix."""
    w, u = _eigh_spd(p, "matrix")
    return (u / np.sqrt(w)) @ u.T


def _check_same_dim(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _clamped_positive(w, name):
    """Clamp roundoff-negative eigenvalues of a whitened spectrum."""
    top = w[-1]
    if top <= 0.0 or w[0] < -EIG_REJECT_RTOL * top:
        raise ValidationError(f"{name} is not positive definite")
    return np.maximum(w, top * EIG_FLOOR_RTOL)


def exp_map(base, tangent):
    """Map a tangent (symmetric) matrix at ``base`` onto the manifold.

    Computes ``base^1/2 Exp(base^-1/2 S base^-1/2) base^1/2``.
    """
    base = _as_square(base, "base")
    tangent = _as_square(tangent, "tangent")
    _check_same_dim(base, tangent)
    tangent = symmetrize(tangent, "tangent")
    w, u = _eigh_spd(base, "base")
    half = (u * np.sqrt(w)) @ u.T
    inv_half = (u / np.sqrt(w)) @ u.T
    inner = symmetrize(inv_half @ tangent @ inv_half, rtol=np.inf)
    return symmetrize(half @ matrix_exp(inner) @ half, rtol=np.inf)


def log_map(base, point):
    """Map a manifold point into the tangent space at ``base``.

    Computes ``base^1/2 Log(base^-1/2 P base^-1/2) base^1/2``; inverse of
    :func:`exp_map`, so ``log_map(P, P)`` is the zero matrix.
    """
    base = _as_square(base, "base")
    point = symmetrize(point, "point")
    _check_same_dim(base, point)
    w, u = _eigh_spd(base, "base")
    half = (u * np.sqrt(w)) @ u.T
    inv_half = (u / np.sqrt(w)) @ u.T
    inner = symmetrize(inv_half @ point @ inv_half, rtol=np.inf)
    wi, ui = np.linalg.eigh(inner)
    wi = _clamped_positive(wi, "point")
    inner_log = (ui * np.log(wi)) @ ui.T
    return symmetrize(half @ inner_log @ half, rtol=np.inf)


def distance(p1, p2):
    """Affine-invariant geodesic distance between two SPD matrices.

    Equals ``[sum_i log^2(lambda_i)]^(1/2)`` over the eigenvalues
    ``lambda_i`` of ``p1^-1 p2``. Computed by whitening with the Cholesky
    factor of ``p1`` (eigenvalues of ``L^-1 p2 L^-T``) instead of forming
    the product explicitly; the spectra coincide.
    """
    p1 = symmetrize(p1, "p1")
    p2 = symmetrize(p2, "p2")
    _check_same_dim(p1, p2)
    # The spectrum of p2 whitened by p1 is the inverse of p1 whitened by
    # p2, and the distance only sees squared logs, so either whitening
    # order works; fall back to the other factorization when the first
    # matrix is not numerically factorizable.
    try:
        chol, other, name = np.linalg.cholesky(p1), p2, "p2"
    except np.linalg.LinAlgError:
        try:
            chol, other, name = np.linalg.cholesky(p2), p1, "p1"
        except np.linalg.LinAlgError as exc:
            raise ValidationError(
                "neither matrix is positive definite") from exc
    tmp = solve_triangular(chol, other, lower=True)
    white = solve_triangular(chol, tmp.T, lower=True)
    w = np.linalg.eigvalsh((white + white.T) / 2.0)
    w = _clamped_positive(w, name)
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def karcher_mean(points, tolerance=DEFAULT_MEAN_TOLERANCE,
                 max_iterations=DEFAULT_MEAN_MAX_ITERATIONS):
    """Geometric (Karcher) mean of SPD matrices under the geodesic distance.

    Fixed-point iteration: starting from the arithmetic mean (SPD by
    convexity), repeatedly move along the mean tangent direction,
    ``G <- exp_map(G, mean_n log_map(G, P_n))``, until the Frobenius norm
    of that mean tangent step drops below ``tolerance``.

    Parameters
    ----------
    points : sequence of ndarray
        Nonempty collection of SPD matrices of equal dimension.
    tolerance : float
        Frobenius-norm threshold on the mean tangent step.
    max_iterations : int
        Iteration cap; exceeding it raises :class:`ConvergenceError`
        carrying the last iterate and residual.
    """
    if tolerance <= 0:
        raise ValidationError("tolerance must be positive")
    if max_iterations < 1:
        raise ValidationError("max_iterations must be at least 1")
    mats = [symmetrize(p, f"points[{i}]") for i, p in enumerate(points)]
    if not mats:
        raise ValidationError("karcher_mean requires at least one matrix")
    dim = mats[0].shape[0]
    for i, m in enumerate(mats):
        if m.shape[0] != dim:
            raise ValidationError(
                f"points[{i}] has dim {m.shape[0]}, expected {dim}")
    if len(mats) == 1:
        _eigh_spd(mats[0], "points[0]")
        return mats[0]

    mean = symmetrize(sum(mats) / len(mats), rtol=np.inf)
    residual = np.inf
    scale = 1.0
    previous = None
    for _ in range(max_iterations):
        w, u = _eigh_spd(mean, "mean iterate")
        half = (u * np.sqrt(w)) @ u.T
        inv_half = (u / np.sqrt(w)) @ u.T
        step = np.zeros_like(mean)
        for i, m in enumerate(mats):
            inner = symmetrize(inv_half @ m @ inv_half, rtol=np.inf)
            wi, ui = np.linalg.eigh(inner)
            wi = _clamped_positive(wi, f"points[{i}]")
            step += (ui * np.log(wi)) @ ui.T
        step /= len(mats)
        # residual is the Frobenius norm of the mean tangent step expressed
        # at the iterate, i.e. of mean_n log_map(G, P_n).
        residual = float(np.linalg.norm(half @ step @ half))
        if residual < tolerance:
            return mean
        if previous is not None and residual >= previous[3]:
            # The full step overshoots once points are spread far apart;
            # back off to the previous iterate with a smaller step. For
            # tightly clustered inputs this branch never triggers and the
            # iteration is the plain full-step scheme.
            mean, half, step, residual = previous
            scale *= 0.5
        else:
            previous = (mean, half, step, residual)
            scale = min(1.0, scale * 2.0)
        mean = symmetrize(half @ matrix_exp(scale * step) @ half, rtol=np.inf)
    raise ConvergenceError(
        f"geometric mean did not converge in {max_iterations} iterations "
        f"(residual {residual:.3e}, tolerance {tolerance:.3e})",
        last_iterate=mean,
        residual=residual,
    )


def condition_ratio(p):
    """Ratio of the largest to the smallest eigenvalue of an SPD matrix."""
    w, _ = _eigh_spd(p, "matrix")
    return float(w[-1] / w[0])
