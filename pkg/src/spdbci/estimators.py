"""Covariance estimation from a multichannel trial.

Four estimator families: the empirical sample covariance (SCM), a
per-sample normalized variant (NSCM), shrinkage toward a structured
target, and the maximum-likelihood fixed-point estimator. A trial is a
C x N array (channels x samples); every estimator centers it with the
sample mean over time before forming second moments.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericalError, ValidationError

DEGENERATE_SAMPLE_ENERGY = 1e-12
RANK_DEFICIENCY_RTOL = 1e-10

SHRINKAGE_TARGETS = ("ledoit", "blankertz", "schafer")


class RankDeficientCovarianceWarning(UserWarning):
    """Raised (as a warning) when an estimate is not numerically full rank."""


@dataclass(frozen=True)
class Trial:
    """A multichannel recording segment.

    ``values`` has shape (channels, samples); ``sample_rate`` is in Hz.
    """

    values: np.ndarray
    sample_rate: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError(f"trial values must be 2-D, got {values.ndim}-D")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"trial values must be nonempty, got {values.shape}")
        if not self.sample_rate > 0:
            raise ValidationError("sample_rate must be positive")
        object.__setattr__(self, "values", values)

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def samples(self):
        return self.values.shape[1]

    @property
    def duration(self):
        return self.samples / self.sample_rate


@dataclass(frozen=True)
class EstimatorSpec:
    """Which covariance estimator to run, with its parameters.

    ``kind`` is one of ``scm``, ``nscm``, ``shrinkage``, ``fixed_point``.
    For shrinkage, ``target`` picks the structured matrix and ``kappa``
    the mixing weight (``None`` selects the analytic intensity).
    ``blankertz_scale`` chooses the denominator of the Blankertz target:
    the dimension of the space of symmetric matrices C(C+1)/2 (default)
    or the channel count.
    """

    kind: str = "shrinkage"
    target: str = "schafer"
    kappa: float | None = None
    blankertz_scale: str = "matrix_space"
    fp_tolerance: float = 1e-6
    fp_max_iterations: int = 200

    def __post_init__(self):
        if self.kind not in ("scm", "nscm", "shrinkage", "fixed_point"):
            raise ValidationError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "shrinkage":
            if self.target not in SHRINKAGE_TARGETS:
                raise ValidationError(f"unknown shrinkage target {self.target!r}")
            if self.kappa is not None and not 0.0 <= self.kappa < 1.0:
                raise ValidationError("kappa must satisfy 0 <= kappa < 1")
        if self.blankertz_scale not in ("matrix_space", "channels"):
            raise ValidationError(
                f"unknown blankertz_scale {self.blankertz_scale!r}")
        if not self.fp_tolerance > 0:
            raise ValidationError("fp_tolerance must be positive")

    def to_dict(self):
        return {
            "kind": self.kind,
            "target": self.target,
            "kappa": self.kappa,
            "blankertz_scale": self.blankertz_scale,
            "fp_tolerance": self.fp_tolerance,
            "fp_max_iterations": self.fp_max_iterations,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def spec_from_name(name, kappa=None, blankertz_scale="matrix_space",
                   fp_tolerance=1e-6, fp_max_iterations=200):
    """Build an EstimatorSpec from a short CLI-style name.

    Plain estimators go by kind (``scm``, ``nscm``, ``fixed-point``);
    shrinkage variants go by target name (``ledoit``, ``blankertz``,
    ``schafer``).
    """
    key = name.strip().lower().replace("-", "_")
    if key in ("scm", "nscm", "fixed_point"):
        return EstimatorSpec(kind=key, fp_tolerance=fp_tolerance,
                             fp_max_iterations=fp_max_iterations)
    if key in SHRINKAGE_TARGETS:
        return EstimatorSpec(kind="shrinkage", target=key, kappa=kappa,
                             blankertz_scale=blankertz_scale)
    raise ValidationError(f"unknown estimator name {name!r}")


def _centered(trial):
    x = trial.values
    if trial.samples < 2:
        raise ValidationError("covariance estimation needs at least 2 samples")
    return x - x.mean(axis=1, keepdims=True)


def scm(trial):
    """Empirical sample covariance matrix, 1/(N-1) normalization.

    Always symmetric and positive semidefinite; strictly positive definite
    only when there are more (non-degenerate) samples than channels. A
    numerically rank-deficient result triggers
    :class:`RankDeficientCovarianceWarning` instead of silent repair.
    """
    xc = _centered(trial)
    n = trial.samples
    cov = (xc @ xc.T) / (n - 1)
    cov = (cov + cov.T) / 2.0
    w = np.linalg.eigvalsh(cov)
    if w[-1] <= 0.0 or w[0] < RANK_DEFICIENCY_RTOL * w[-1]:
        warnings.warn(
            f"sample covariance is rank deficient (eigenvalue range "
            f"[{w[0]:.3e}, {w[-1]:.3e}], {trial.channels} channels, "
            f"{n} samples)",
            RankDeficientCovarianceWarning,
            stacklevel=2,
        )
    return cov


def nscm(trial):
    """Sample covariance normalized by per-sample inter-channel energy.

    Each centered sample's outer product is divided by its squared norm
    before averaging, which makes the estimate invariant to a global
    rescaling of the trial. Samples with energy below
    ``DEGENERATE_SAMPLE_ENERGY`` are rejected.
    """
    xc = _centered(trial)
    c, n = xc.shape
    energy = np.sum(xc * xc, axis=0)
    bad = np.flatnonzero(energy < DEGENERATE_SAMPLE_ENERGY)
    if bad.size:
        raise ValidationError(
            f"degenerate sample at index {bad[0]}: inter-channel energy "
            f"{energy[bad[0]]:.3e} below {DEGENERATE_SAMPLE_ENERGY:.0e}")
    scaled = xc / np.sqrt(energy)
    cov = (c / n) * (scaled @ scaled.T)
    return (cov + cov.T) / 2.0


def _scm_moments(trial):
    """SCM plus the entrywise variance of its entries.

    The variance estimate follows the usual unbiased construction: with
    ``w_nij`` the product of centered channel samples and ``wbar`` its
    time average, ``Var(scm_ij) ~= n/(n-1)^3 * sum_n (w_nij - wbar_ij)^2``.
    """
    xc = _centered(trial)
    n = trial.samples
    wbar = (xc @ xc.T) / n
    sq = xc * xc
    second = sq @ sq.T
    var = (n / (n - 1.0) ** 3) * (second - n * wbar * wbar)
    cov = wbar * (n / (n - 1.0))
    return (cov + cov.T) / 2.0, var


def shrinkage_target(cov, target, blankertz_scale="matrix_space"):
    """Structured target matrix for the given SCM.

    ``ledoit``: v*I with v the trace of the SCM. ``blankertz``: v*I with
    v the trace divided by C(C+1)/2 (or by C with
    ``blankertz_scale='channels'``). ``schafer``: the diagonal of the SCM,
    which keeps per-channel scale heterogeneity.
    """
    c = cov.shape[0]
    if target == "ledoit":
        return np.trace(cov) * np.eye(c)
    if target == "blankertz":
        denom = c * (c + 1) / 2.0 if blankertz_scale == "matrix_space" else float(c)
        return (np.trace(cov) / denom) * np.eye(c)
    if target == "schafer":
        return np.diag(np.diag(cov))
    raise ValidationError(f"unknown shrinkage target {target!r}")


def analytic_kappa(trial, target, blankertz_scale="matrix_space"):
    """Analytic shrinkage intensity for the chosen target, clipped to [0, 1).

    Ratio of the summed sampling variance of the shrunk SCM entries to
    their squared distance from the target. Entries the target leaves
    untouched (the diagonal, for the ``schafer`` target) contribute to
    neither sum.
    """
    cov, var = _scm_moments(trial)
    tgt = shrinkage_target(cov, target, blankertz_scale)
    diff = cov - tgt
    if target == "schafer":
        off = ~np.eye(cov.shape[0], dtype=bool)
        num = float(np.sum(var[off]))
        den = float(np.sum(diff[off] ** 2))
    else:
        num = float(np.sum(var))
        den = float(np.sum(diff ** 2))
    if den <= 0.0:
        return 0.0
    return float(np.clip(num / den, 0.0, np.nextafter(1.0, 0.0)))


def shrinkage(trial, spec=None):
    """Convex combination of the SCM with a structured target.

    Returns ``kappa * target + (1 - kappa) * scm``. With an explicit
    ``spec.kappa`` that weight is used as-is; with ``kappa=None`` the
    analytic intensity from :func:`analytic_kappa` is applied. Use
    :func:`shrinkage_with_kappa` to also retrieve the weight used.
    """
    cov, _ = shrinkage_with_kappa(trial, spec)
    return cov


def shrinkage_with_kappa(trial, spec=None):
    """Like :func:`shrinkage` but also returns the kappa that was applied."""
    if spec is None:
        spec = EstimatorSpec(kind="shrinkage")
    if spec.kind != "shrinkage":
        raise ValidationError("spec.kind must be 'shrinkage'")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientCovarianceWarning)
        cov = scm(trial)
    tgt = shrinkage_target(cov, spec.target, spec.blankertz_scale)
    kappa = spec.kappa
    if kappa is None:
        kappa = analytic_kappa(trial, spec.target, spec.blankertz_scale)
    shrunk = kappa * tgt + (1.0 - kappa) * cov
    return (shrunk + shrunk.T) / 2.0, kappa


def _fixed_point_step(xc, sigma):
    """One iteration of the maximum-likelihood fixed-point map."""
    c, n = xc.shape
    try:
        quad = np.sum(xc * np.linalg.solve(sigma, xc), axis=0)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("fixed-point iterate became singular") from exc
    if np.any(quad <= 0.0):
        raise NumericalError("fixed-point quadratic form lost positivity")
    nxt = (c / n) * ((xc / quad) @ xc.T)
    return (nxt + nxt.T) / 2.0


def fixed_point(trial, tolerance=None, max_iterations=None, spec=None):
    """Maximum-likelihood covariance via fixed-point iteration.

    Each iteration reweights every centered sample's outer product by the
    inverse of its current Mahalanobis energy. Starts from the NSCM and
    stops when the relative Frobenius change falls below the tolerance.
    Requires strictly more samples than channels.
    """
    if spec is None:
        spec = EstimatorSpec(kind="fixed_point")
    tol = spec.fp_tolerance if tolerance is None else tolerance
    max_iter = spec.fp_max_iterations if max_iterations is None else max_iterations
    if not tol > 0:
        raise ValidationError("tolerance must be positive")
    if trial.samples <= trial.channels:
        raise ValidationError(
            f"fixed-point estimation needs more samples than channels "
            f"({trial.samples} samples, {trial.channels} channels)")
    xc = _centered(trial)
    sigma = nscm(trial)
    change = np.inf
    for _ in range(max_iter):
        nxt = _fixed_point_step(xc, sigma)
        change = np.linalg.norm(nxt - sigma) / np.linalg.norm(sigma)
        sigma = nxt
        if change < tol:
            return sigma
    raise ConvergenceError(
        f"fixed-point estimator did not converge in {max_iter} iterations "
        f"(relative change {change:.3e})",
        last_iterate=sigma,
        residual=float(change),
    )


def estimate(trial, spec):
    """Dispatch a trial to the estimator described by ``spec``."""
    if spec.kind == "scm":
        return scm(trial)
    if spec.kind == "nscm":
        return nscm(trial)
    if spec.kind == "shrinkage":
        return shrinkage(trial, spec)
    if spec.kind == "fixed_point":
        return fixed_point(trial, spec=spec)
    raise ValidationError(f"unknown estimator kind {spec.kind!r}")
