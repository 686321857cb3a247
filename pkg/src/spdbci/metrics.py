"""Evaluation metrics, the bootstrap benchmark, and tangent-space embedding.

The benchmark resamples a labelled trial set with replacement (stratified
by class), splits each replication 50/50 into train and test, crops to a
grid of trial lengths, and scores each covariance estimator with the
minimum-distance classifier. Reported per estimator and length: accuracy,
information transfer rate, matrix conditioning, and the discrimination
improvement over the plain sample covariance baseline.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import manifold
from .errors import ConvergenceError, ValidationError
from .estimators import EstimatorSpec, Trial, estimate, shrinkage_with_kappa
from .mdrm import (
    POOLED_MEAN_MAX_ITERATIONS,
    POOLED_MEAN_TOLERANCE,
    PreprocSpec,
    preprocess_trial,
)

DEFAULT_TRIAL_LENGTHS = tuple(0.5 * i for i in range(1, 11))


def accuracy(predicted, truth):
    """Percentage of matching entries between two equal-length label lists."""
    predicted = list(predicted)
    truth = list(truth)
    if not predicted or len(predicted) != len(truth):
        raise ValidationError(
            f"predicted and truth must be equal nonempty lengths, got "
            f"{len(predicted)} and {len(truth)}")
    hits = sum(p == t for p, t in zip(predicted, truth))
    return 100.0 * hits / len(truth)


def itr(accuracy_fraction, classes, selections_per_minute):
    """Information transfer rate in bits/min (Wolpaw bits per selection).

    ``B = log2 K + a log2 a + (1-a) log2((1-a)/(K-1))``, with the
    ``a in {0, 1}`` terms taken in the limit, multiplied by the selection
    rate and floored at zero.
    """
    a = float(accuracy_fraction)
    if not 0.0 <= a <= 1.0:
        raise ValidationError("accuracy fraction must lie in [0, 1]")
    if classes < 2:
        raise ValidationError("need at least 2 classes")
    if a >= 1.0:
        bits = math.log2(classes)
    elif a <= 0.0:
        bits = math.log2(classes) - math.log2(classes - 1)
    else:
        bits = (math.log2(classes) + a * math.log2(a)
                + (1.0 - a) * math.log2((1.0 - a) / (classes - 1)))
    return max(bits, 0.0) * selections_per_minute


def scores_from_distances(dists):
    """Map a class-distance vector to probability-like scores.

    Normalized distances are inverted so the nearest class scores the
    highest; the scores are nonnegative and sum to one.
    """
    dists = np.asarray(dists, dtype=float)
    k = dists.size
    if k < 2:
        raise ValidationError("need at least 2 classes")
    delta = dists / dists.sum()
    return (1.0 - delta) / (k - 1)


def idi(new_scores, baseline_scores, truth):
    """Integrated discrimination improvement of one scorer over a baseline.

    ``new_scores`` and ``baseline_scores`` are (trials x classes) arrays
    of probability-like scores; the event entries are the correct-class
    scores, the nonevent entries all the rest. The improvement is the gain
    in mean event/nonevent separation.
    """
    new_scores = np.asarray(new_scores, dtype=float)
    baseline_scores = np.asarray(baseline_scores, dtype=float)
    truth = np.asarray(truth, dtype=int)
    if new_scores.shape != baseline_scores.shape or new_scores.ndim != 2:
        raise ValidationError("score arrays must share a (trials, classes) shape")
    t, k = new_scores.shape
    if t < 1 or k < 2 or truth.shape != (t,):
        raise ValidationError("need >= 1 trial, >= 2 classes, matching truth")
    event_mask = np.zeros((t, k), dtype=bool)
    event_mask[np.arange(t), truth - 1] = True

    def separation(scores):
        return scores[event_mask].mean() - scores[~event_mask].mean()

    return float(separation(new_scores) - separation(baseline_scores))


# ---------------------------------------------------------------------------
# Bootstrap benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    """Replication count, trial-length grid, and estimators to compare.

    ``mean_tolerance`` is looser than the library-wide default because
    short-crop covariances spread widely on the manifold and make the
    mean solver slow; center precision of 1e-3 is far below the class
    distance scale, so classification results are unaffected.
    """

    replications: int = 1000
    trial_lengths_seconds: tuple = DEFAULT_TRIAL_LENGTHS
    estimators: tuple = (EstimatorSpec(kind="scm"),
                         EstimatorSpec(kind="shrinkage", target="schafer"))
    seed: int = 0
    mean_tolerance: float = 1e-3
    mean_max_iterations: int = 500

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError("replications must be positive")
        if not self.trial_lengths_seconds:
            raise ValidationError("at least one trial length is required")
        if any(length <= 0 for length in self.trial_lengths_seconds):
            raise ValidationError("trial lengths must be positive")


def estimator_label(spec):
    """Short display name of an estimator spec for report rows."""
    if spec.kind == "shrinkage":
        return spec.target
    return spec.kind


@dataclass(frozen=True)
class BenchRow:
    estimator: str
    length_seconds: float
    acc_mean: float
    acc_std: float
    itr_mean: float
    itr_std: float
    cond_mean: float
    idi_mean: float
    kappa_mean: float | None
    unconverged_means: int = 0


@dataclass
class BenchReport:
    rows: list
    replications: int
    seed: int

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("estimator,length_s,acc_mean,acc_std,itr_mean,itr_std,"
                     "cond_mean,idi_mean,kappa_mean,unconverged_means\n")
            for r in self.rows:
                kappa = "" if r.kappa_mean is None else repr(r.kappa_mean)
                fh.write(f"{r.estimator},{r.length_seconds!r},{r.acc_mean!r},"
                         f"{r.acc_std!r},{r.itr_mean!r},{r.itr_std!r},"
                         f"{r.cond_mean!r},{r.idi_mean!r},{kappa},"
                         f"{r.unconverged_means}\n")

    def to_json(self, path):
        doc = {
            "replications": self.replications,
            "seed": self.seed,
            "rows": [
                {
                    "estimator": r.estimator,
                    "length_s": r.length_seconds,
                    "acc_mean": r.acc_mean,
                    "acc_std": r.acc_std,
                    "itr_mean": r.itr_mean,
                    "itr_std": r.itr_std,
                    "cond_mean": r.cond_mean,
                    "idi_mean": r.idi_mean,
                    "kappa_mean": r.kappa_mean,
                    "unconverged_means": r.unconverged_means,
                }
                for r in self.rows
            ],
        }
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _crop(trial, length_seconds):
    count = int(np.floor(length_seconds * trial.sample_rate))
    if count > trial.samples:
        raise ValidationError(
            f"trial of {trial.samples} samples is shorter than the "
            f"requested {length_seconds} s crop")
    return Trial(trial.values[:, :count], trial.sample_rate)


def _covariance_cache(trial_set, preproc, specs, lengths, threads):
    """Covariance (and kappa) of every trial per length and estimator.

    Resampling reuses the same trials across replications, so each
    (length, estimator, trial) covariance is computed exactly once.
    """
    cache = {}
    kappas = {}
    for length in lengths:
        extended = [preprocess_trial(_crop(t, length), preproc)
                    for t in trial_set.trials]
        for spec in specs:
            key = (length, estimator_label(spec))

            def one(trial, spec=spec):
                if spec.kind == "shrinkage":
                    return shrinkage_with_kappa(trial, spec)
                return estimate(trial, spec), None

            results = _pmap(one, extended, threads)
            cache[key] = [cov for cov, _ in results]
            kap = [kappa for _, kappa in results if kappa is not None]
            kappas[key] = float(np.mean(kap)) if kap else None
    return cache, kappas


def _pmap(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_benchmark(trial_set, config=None, preproc=None, threads=1):
    """Bootstrap comparison of covariance estimators under MDRM.

    Resample indices for every replication are drawn up front from the
    seed, so results do not depend on execution order or thread count.
    The plain SCM is always evaluated as the baseline for the
    discrimination-improvement column.
    """
    config = config or BenchConfig()
    if preproc is None:
        preproc = PreprocSpec(
            stim_freqs=tuple(trial_set.meta.get("stim_freqs", ())) or (13.0, 17.0, 21.0),
            sample_rate=trial_set.sample_rate)
    k = trial_set.class_count
    min_duration = min(t.duration for t in trial_set.trials)
    for length in config.trial_lengths_seconds:
        if length > min_duration + 1e-9:
            raise ValidationError(
                f"trial length {length} s exceeds the shortest trial "
                f"({min_duration} s)")

    by_class = {}
    for i, lab in enumerate(trial_set.labels):
        by_class.setdefault(lab, []).append(i)
    for cls in range(1, k + 1):
        if len(by_class.get(cls, [])) < 2:
            raise ValidationError(
                f"class {cls} needs at least 2 trials for a train/test split")

    rng = np.random.default_rng(config.seed)
    splits = []
    for _ in range(config.replications):
        train_idx, test_idx = [], []
        for cls in range(1, k + 1):
            pool = by_class[cls]
            draw = rng.choice(pool, size=len(pool), replace=True)
            half = len(pool) - len(pool) // 2
            train_idx.extend(int(x) for x in draw[:half])
            test_idx.extend(int(x) for x in draw[half:])
        splits.append((train_idx, test_idx))

    baseline = EstimatorSpec(kind="scm")
    specs = list(config.estimators)
    if not any(estimator_label(s) == "scm" for s in specs):
        specs = specs + [baseline]
    lengths = list(config.trial_lengths_seconds)
    cache, kappas = _covariance_cache(trial_set, preproc, specs, lengths,
                                      threads)

    def evaluate_split(args):
        train_idx, test_idx, covs = args
        by_cls = {}
        for i in train_idx:
            by_cls.setdefault(trial_set.labels[i], []).append(covs[i])
        centers = []
        stalled = 0
        for cls in range(1, k + 1):
            try:
                centers.append(manifold.karcher_mean(
                    by_cls[cls], config.mean_tolerance,
                    config.mean_max_iterations))
            except ConvergenceError as exc:
                # Near-singular estimates (short crops of the unregularized
                # estimators) can stall the mean solver; score the last
                # iterate and surface the count in the report rather than
                # aborting the whole comparison.
                centers.append(exc.last_iterate)
                stalled += 1
        predictions = []
        scores = []
        for i in test_idx:
            dists = np.array([manifold.distance(covs[i], c) for c in centers])
            predictions.append(int(np.argmin(dists)) + 1)
            scores.append(scores_from_distances(dists))
        truth = [trial_set.labels[i] for i in test_idx]
        return predictions, np.array(scores), truth, stalled

    rows = []
    for length in lengths:
        scm_key = (length, "scm")
        scm_runs = _pmap(evaluate_split,
                         [(tr, te, cache[scm_key]) for tr, te in splits],
                         threads)
        for spec in config.estimators:
            label = estimator_label(spec)
            key = (length, label)
            if label == "scm":
                runs = scm_runs
            else:
                runs = _pmap(evaluate_split,
                             [(tr, te, cache[key]) for tr, te in splits],
                             threads)
            accs, itrs, idis = [], [], []
            stalled_total = 0
            for (preds, scores, truth, stalled), (_, scm_scores, _, _) in \
                    zip(runs, scm_runs):
                acc = accuracy(preds, truth)
                accs.append(acc)
                itrs.append(itr(acc / 100.0, k, 60.0 / length))
                idis.append(idi(scores, scm_scores, truth))
                stalled_total += stalled
            cond = float(np.mean([manifold.condition_ratio(c)
                                  for c in cache[key]]))
            rows.append(BenchRow(
                estimator=label,
                length_seconds=float(length),
                acc_mean=float(np.mean(accs)),
                acc_std=float(np.std(accs)),
                itr_mean=float(np.mean(itrs)),
                itr_std=float(np.std(itrs)),
                cond_mean=cond,
                idi_mean=float(np.mean(idis)),
                kappa_mean=kappas[key],
                unconverged_means=stalled_total,
            ))
    return BenchReport(rows=rows, replications=config.replications,
                       seed=config.seed)


# ---------------------------------------------------------------------------
# Tangent-space embedding
# ---------------------------------------------------------------------------

def _upper_vec(sym):
    """Upper-triangle vectorization preserving the Frobenius norm."""
    iu = np.triu_indices(sym.shape[0])
    weights = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return sym[iu] * weights


@dataclass
class Embedding:
    """2-D principal-component coordinates of tangent-mapped covariances."""

    coords: np.ndarray
    labels: list
    base: np.ndarray
    mean_vec: np.ndarray
    components: np.ndarray

    def project(self, covs):
        """Coordinates of additional SPD matrices in the same plane."""
        vecs = np.array([_upper_vec(manifold.log_map(self.base, c))
                         for c in covs])
        return (vecs - self.mean_vec) @ self.components.T


def tangent_embed(covs, labels=None):
    """Project covariances to 2-D through the tangent space at their mean.

    Each matrix is mapped into the tangent space at the pooled geometric
    mean, vectorized isometrically, centered, and projected onto the top
    two principal components.
    """
    covs = list(covs)
    if len(covs) < 3:
        raise ValidationError("embedding needs at least 3 matrices")
    if labels is None:
        labels = [0] * len(covs)
    labels = list(labels)
    if len(labels) != len(covs):
        raise ValidationError("labels must match the number of matrices")
    base = manifold.karcher_mean(covs, POOLED_MEAN_TOLERANCE,
                                 POOLED_MEAN_MAX_ITERATIONS)
    vecs = np.array([_upper_vec(manifold.log_map(base, c)) for c in covs])
    mean_vec = vecs.mean(axis=0)
    centered = vecs - mean_vec
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    if components.shape[0] < 2:
        components = np.vstack([components,
                                np.zeros((2 - components.shape[0],
                                          components.shape[1]))])
    # Deterministic sign: the strongest loading of each axis is positive.
    for row in range(2):
        pivot = np.argmax(np.abs(components[row]))
        if components[row, pivot] < 0:
            components[row] = -components[row]
    coords = centered @ components.T
    return Embedding(coords=coords, labels=labels, base=base,
                     mean_vec=mean_vec, components=components)


def write_embedding_csv(embedding, path, centers=None):
    """CSV of 2-D points with labels, plus optional class-center rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("kind,label,x,y\n")
        for (x, y), label in zip(embedding.coords, embedding.labels):
            fh.write(f"trial,{label},{x!r},{y!r}\n")
        if centers is not None:
            center_coords = embedding.project(centers)
            for cls, (x, y) in enumerate(center_coords, start=1):
                fh.write(f"center,{cls},{x!r},{y!r}\n")
