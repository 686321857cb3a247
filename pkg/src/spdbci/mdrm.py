"""Minimum-distance-to-mean classification on the SPD manifold.

Training estimates one geometric-mean covariance center per class from
labelled trials; classification assigns a trial to the class whose
center is nearest in geodesic distance. A distance-based outlier filter
("potato") can drop wildly atypical training covariances before the
centers are computed.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import manifold
from .errors import ConvergenceError, ManifestError, ShapeMismatchError, \
    UnsupportedVersionError, ValidationError
from .estimators import EstimatorSpec, estimate
from .preprocessing import (
    DEFAULT_FILTER_ORDER,
    DEFAULT_HALF_BANDWIDTH,
    extend_trial,
    trim_latency,
)

MODEL_FORMAT_VERSION = "MDRM v1"

DEFAULT_POTATO_Z = 2.5

# A mean pooled across classes sits between well-separated clusters, where
# the mean iteration converges slowly; such references only anchor
# distance z-scores or plot coordinates, so modest precision is plenty.
POOLED_MEAN_TOLERANCE = 1e-4
POOLED_MEAN_MAX_ITERATIONS = 300


@dataclass(frozen=True)
class PreprocSpec:
    """Preprocessing applied to every trial before covariance estimation.

    Recorded in the trained model so classification reproduces the
    training path exactly.
    """

    stim_freqs: tuple
    sample_rate: float
    half_bandwidth: float = DEFAULT_HALF_BANDWIDTH
    filter_order: int = DEFAULT_FILTER_ORDER
    latency_seconds: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "stim_freqs",
                           tuple(float(f) for f in self.stim_freqs))
        if self.latency_seconds < 0:
            raise ValidationError("latency must be nonnegative")

    def to_dict(self):
        return {
            "stim_freqs": list(self.stim_freqs),
            "sample_rate": self.sample_rate,
            "half_bandwidth": self.half_bandwidth,
            "filter_order": self.filter_order,
            "latency_seconds": self.latency_seconds,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(stim_freqs=tuple(d["stim_freqs"]),
                   sample_rate=d["sample_rate"],
                   half_bandwidth=d["half_bandwidth"],
                   filter_order=d["filter_order"],
                   latency_seconds=d["latency_seconds"])


@dataclass(frozen=True)
class ClassModel:
    """Trained class centers plus everything needed to reapply training
    preprocessing: estimator spec, preprocessing spec, mean solver config."""

    centers: tuple
    estimator_spec: EstimatorSpec
    preproc_spec: PreprocSpec
    mean_tolerance: float = manifold.DEFAULT_MEAN_TOLERANCE
    mean_max_iterations: int = manifold.DEFAULT_MEAN_MAX_ITERATIONS

    @property
    def class_count(self):
        return len(self.centers)

    @property
    def dim(self):
        return self.centers[0].shape[0]


@dataclass(frozen=True)
class PotatoResult:
    """Outcome of distance-based outlier filtering.

    ``degenerate`` is set when the distance spread was too small to score
    (all matrices effectively equidistant), in which case everything is
    kept.
    """

    kept: tuple
    rejected: tuple
    distances: tuple
    zscores: tuple
    degenerate: bool = False


def preprocess_trial(trial, preproc, latency_override=None):
    """Trim cue latency and build the frequency-stacked extended trial."""
    if abs(trial.sample_rate - preproc.sample_rate) > 1e-9:
        raise ValidationError(
            f"trial sample rate {trial.sample_rate} does not match the "
            f"model's {preproc.sample_rate}")
    latency = preproc.latency_seconds if latency_override is None \
        else latency_override
    if latency > 0:
        trial = trim_latency(trial, latency)
    return extend_trial(trial, preproc.stim_freqs, preproc.half_bandwidth,
                        preproc.filter_order)


def trial_covariance(trial, preproc, estimator_spec, latency_override=None):
    """Covariance of a trial after the model's preprocessing."""
    return estimate(preprocess_trial(trial, preproc, latency_override),
                    estimator_spec)


def _map_ordered(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def train(trial_set, estimator_spec=None, preproc_spec=None,
          potato_z=None, mean_tolerance=manifold.DEFAULT_MEAN_TOLERANCE,
          mean_max_iterations=manifold.DEFAULT_MEAN_MAX_ITERATIONS,
          threads=1):
    """Estimate per-class geometric-mean centers from labelled trials.

    Per trial: trim latency, band-pass stack, estimate covariance. Per
    class: geometric mean of that class's covariances. With ``potato_z``
    set, covariances are filtered once against the pooled geometric mean
    before the class centers are computed.

    Returns ``(model, report)`` where the report records the kappa values
    used (shrinkage) and, when the potato filter ran, per-class rejection
    counts so the caller can veto overzealous filtering.
    """
    if estimator_spec is None:
        estimator_spec = EstimatorSpec()
    if preproc_spec is None:
        preproc_spec = PreprocSpec(
            stim_freqs=tuple(trial_set.meta.get("stim_freqs", ())) or (13.0, 17.0, 21.0),
            sample_rate=trial_set.sample_rate)
    k = trial_set.class_count
    if k < 2:
        raise ValidationError("training needs at least 2 classes")
    labels = list(trial_set.labels)
    for cls in range(1, k + 1):
        if cls not in labels:
            raise ValidationError(f"class {cls} has no training trials")

    covs = _map_ordered(
        lambda t: trial_covariance(t, preproc_spec, estimator_spec),
        trial_set.trials, threads)

    report = {"trials": len(covs), "class_count": k}
    if potato_z is not None:
        potato = potato_filter(covs, z_threshold=potato_z)
        rejected_by_class = {cls: 0 for cls in range(1, k + 1)}
        for i in potato.rejected:
            rejected_by_class[labels[i]] += 1
        report["potato"] = {
            "z_threshold": potato_z,
            "kept": len(potato.kept),
            "rejected": len(potato.rejected),
            "rejected_by_class": rejected_by_class,
            "degenerate": potato.degenerate,
        }
        covs = [covs[i] for i in potato.kept]
        labels = [labels[i] for i in potato.kept]
        for cls in range(1, k + 1):
            if cls not in labels:
                raise ValidationError(
                    f"outlier filter removed every trial of class {cls}; "
                    f"lower the z threshold")

    def class_mean(cls):
        members = [cov for cov, lab in zip(covs, labels) if lab == cls]
        try:
            return manifold.karcher_mean(members, mean_tolerance,
                                         mean_max_iterations)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"class {cls} center did not converge: {exc}",
                last_iterate=exc.last_iterate,
                residual=exc.residual) from exc

    centers = _map_ordered(class_mean, list(range(1, k + 1)), threads)
    model = ClassModel(tuple(centers), estimator_spec, preproc_spec,
                       mean_tolerance, mean_max_iterations)
    return model, report


def classify_covariance(cov, model):
    """Nearest class center for a precomputed covariance.

    Returns ``(label, distances)`` with all class distances so callers
    can normalize or gate on them. Exact ties go to the lowest class
    index.
    """
    if cov.shape[0] != model.dim:
        raise ValidationError(
            f"covariance dim {cov.shape[0]} does not match model dim "
            f"{model.dim}")
    dists = np.array([manifold.distance(cov, center)
                      for center in model.centers])
    return int(np.argmin(dists)) + 1, dists


def classify(trial, model, latency_override=None):
    """Classify a raw trial with the model's recorded preprocessing."""
    cov = trial_covariance(trial, model.preproc_spec, model.estimator_spec,
                           latency_override)
    return classify_covariance(cov, model)


def potato_filter(covs, z_threshold=DEFAULT_POTATO_Z,
                  mean_tolerance=POOLED_MEAN_TOLERANCE,
                  mean_max_iterations=POOLED_MEAN_MAX_ITERATIONS):
    """Keep covariances whose distance to the pooled mean is unexceptional.

    The reference is the geometric mean of all inputs; matrix i is kept
    when the z-score of its distance to the reference is at most
    ``z_threshold``. A near-zero distance spread means nothing can be an
    outlier: everything is kept and the result is flagged degenerate.
    """
    if z_threshold <= 0:
        raise ValidationError("z_threshold must be positive")
    if len(covs) < 2:
        raise ValidationError("outlier filtering needs at least 2 matrices")
    reference = manifold.karcher_mean(covs, mean_tolerance, mean_max_iterations)
    dists = np.array([manifold.distance(cov, reference) for cov in covs])
    spread = float(dists.std())
    if spread < 1e-12:
        return PotatoResult(kept=tuple(range(len(covs))), rejected=(),
                            distances=tuple(dists),
                            zscores=tuple(np.zeros(len(covs))),
                            degenerate=True)
    z = (dists - dists.mean()) / spread
    kept = tuple(int(i) for i in np.flatnonzero(z <= z_threshold))
    rejected = tuple(int(i) for i in np.flatnonzero(z > z_threshold))
    return PotatoResult(kept=kept, rejected=rejected,
                        distances=tuple(float(d) for d in dists),
                        zscores=tuple(float(v) for v in z))


def save_model(model, path):
    """Serialize a model: one-line JSON header, then raw float64 centers."""
    header = {
        "version": MODEL_FORMAT_VERSION,
        "class_count": model.class_count,
        "dim": model.dim,
        "estimator_spec": model.estimator_spec.to_dict(),
        "preproc_spec": model.preproc_spec.to_dict(),
        "mean_tolerance": model.mean_tolerance,
        "mean_max_iterations": model.mean_max_iterations,
    }
    payload = b"".join(
        np.ascontiguousarray(c, dtype="<f8").tobytes(order="C")
        for c in model.centers)
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload
    Path(path).write_bytes(blob)
    return Path(path)


def load_model(path):
    """Read a model written by :func:`save_model`, bit-exactly."""
    blob = Path(path).read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise ManifestError(f"{path} has no model header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"unreadable model header: {exc}") from exc
    if header.get("version") != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported model version {header.get('version')!r}")
    k = int(header["class_count"])
    dim = int(header["dim"])
    payload = blob[newline + 1:]
    expected = k * dim * dim * 8
    if len(payload) != expected:
        raise ShapeMismatchError(
            f"model payload holds {len(payload)} bytes, header implies "
            f"{expected}")
    flat = np.frombuffer(payload, dtype="<f8")
    centers = tuple(flat[i * dim * dim:(i + 1) * dim * dim]
                    .reshape(dim, dim).copy() for i in range(k))
    return ClassModel(
        centers=centers,
        estimator_spec=EstimatorSpec.from_dict(header["estimator_spec"]),
        preproc_spec=PreprocSpec.from_dict(header["preproc_spec"]),
        mean_tolerance=header["mean_tolerance"],
        mean_max_iterations=header["mean_max_iterations"],
    )
