"""Synthetic SSVEP-like dataset generation and dataset file I/O.

Stimulus-class trials carry a class-frequency sinusoid (plus optional
harmonic overtones) mixed into all channels through a fixed random
orthogonal matrix, on top of 1/f background noise; rest-class trials are
noise only. An optional transition-carryover window makes the head of
each trial continue the previous trial's frequency, emulating the lag
between a cue change and the actual synchronization of the response.

Datasets are stored in the "EEGSET v1" layout: a ``manifest.json``
describing shapes and labels plus one raw little-endian float64 payload
per trial, and a ``labels.csv`` for external tooling.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ManifestError,
    MissingPayloadError,
    ShapeMismatchError,
    UnsupportedVersionError,
    ValidationError,
)
from .estimators import Trial

FORMAT_VERSION = "EEGSET v1"

_MANIFEST_KEYS = ("version", "channels", "sample_rate", "stim_freqs",
                  "labels", "samples", "payloads")


@dataclass(frozen=True)
class GenConfig:
    """Knobs of the synthetic generator. The seed fully determines output."""

    channels: int = 8
    sample_rate: float = 256.0
    stim_freqs: tuple = (13.0, 17.0, 21.0)
    trial_seconds: float = 6.0
    trials_per_class: int = 8
    snr_db: float = 10.0
    harmonics: int = 1
    transition_carryover_seconds: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1:
            raise ValidationError("channels must be positive")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        if len(self.stim_freqs) < 1:
            raise ValidationError("at least one stimulus frequency is required")
        if self.trial_seconds <= 0:
            raise ValidationError("trial_seconds must be positive")
        if self.trials_per_class < 1:
            raise ValidationError("trials_per_class must be positive")
        if not np.isfinite(self.snr_db):
            raise ValidationError("snr_db must be finite")
        if self.harmonics < 0:
            raise ValidationError("harmonics must be nonnegative")
        if self.transition_carryover_seconds < 0:
            raise ValidationError("transition carryover must be nonnegative")
        object.__setattr__(self, "stim_freqs",
                           tuple(float(f) for f in self.stim_freqs))

    @property
    def class_count(self):
        """Stimulus classes plus one resting class."""
        return len(self.stim_freqs) + 1

    def to_dict(self):
        return {
            "channels": self.channels,
            "sample_rate": self.sample_rate,
            "stim_freqs": list(self.stim_freqs),
            "trial_seconds": self.trial_seconds,
            "trials_per_class": self.trials_per_class,
            "snr_db": self.snr_db,
            "harmonics": self.harmonics,
            "transition_carryover_seconds": self.transition_carryover_seconds,
            "seed": self.seed,
        }


@dataclass
class TrialSet:
    """Labelled trials with generator/recording metadata.

    Labels run from 1 to K; for generated data classes 1..F are the
    stimulus frequencies in order and class K = F+1 is rest.
    """

    trials: list
    labels: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.trials) != len(self.labels):
            raise ValidationError(
                f"{len(self.trials)} trials but {len(self.labels)} labels")
        k = self.class_count
        for i, lab in enumerate(self.labels):
            if not 1 <= lab <= k:
                raise ValidationError(
                    f"label {lab} at index {i} outside [1, {k}]")

    @property
    def class_count(self):
        if "classes" in self.meta:
            return int(self.meta["classes"])
        return int(max(self.labels, default=0))

    @property
    def sample_rate(self):
        return self.trials[0].sample_rate

    def subset(self, indices):
        return TrialSet([self.trials[i] for i in indices],
                        [self.labels[i] for i in indices],
                        dict(self.meta))


def _pink_noise(rng, rows, n):
    """Unit-variance 1/f noise per row."""
    white = rng.standard_normal((rows, n))
    spec = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n)
    scale = np.zeros_like(freqs)
    scale[1:] = 1.0 / np.sqrt(freqs[1:])
    x = np.fft.irfft(spec * scale, n=n, axis=1)
    std = x.std(axis=1, keepdims=True)
    return x / np.maximum(std, 1e-30)


def generate(config):
    """Generate a deterministic labelled TrialSet from the config.

    The presentation order of trials is a seeded shuffle of a balanced
    label sequence; carryover couples each trial's head to the class of
    the trial presented immediately before it.
    """
    rng = np.random.default_rng(config.seed)
    c = config.channels
    fs = config.sample_rate
    n = int(round(config.trial_seconds * fs))
    freqs = config.stim_freqs
    nstim = len(freqs)
    k = config.class_count

    # Fixed random orthogonal mixing shared by all trials; sign-fixed so
    # the QR decomposition is unambiguous.
    gauss = rng.standard_normal((c, c))
    q, r = np.linalg.qr(gauss)
    mixing = q * np.sign(np.diag(r))
    noise_scale = rng.uniform(0.5, 1.5, size=c)
    amp = rng.uniform(0.3, 1.0, size=(nstim, c))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(nstim, c))

    labels = np.repeat(np.arange(1, k + 1), config.trials_per_class)
    rng.shuffle(labels)

    harmonic_gain = 1.0 / (1.0 + np.arange(config.harmonics + 1))
    noise_power = float(np.sum(noise_scale ** 2))
    sig_unit_power = 0.5 * np.sum(harmonic_gain ** 2) * np.sum(amp ** 2, axis=1)
    gain = np.sqrt(10.0 ** (config.snr_db / 10.0) * noise_power / sig_unit_power)

    def class_signal(label, t):
        """Source-space signal of a class over global time t; rest is silent."""
        if label is None or label == k:
            return np.zeros((c, t.size))
        f = freqs[label - 1]
        a = gain[label - 1] * amp[label - 1][:, None]
        ph = phase[label - 1][:, None]
        out = np.zeros((c, t.size))
        for h, g in enumerate(harmonic_gain):
            out += g * np.sin(2.0 * np.pi * f * (h + 1) * t[None, :] + ph)
        return a * out

    head = min(int(np.floor(config.transition_carryover_seconds * fs)), n)
    trials = []
    prev_label = None
    for idx, label in enumerate(labels):
        t = (idx * n + np.arange(n)) / fs
        sig = class_signal(int(label), t)
        if head > 0:
            # Crossfade: the previous trial's response rings out over the
            # head while the current one synchronizes, so the head is
            # dominated by the previous frequency.
            ramp = np.arange(head) / head
            carried = class_signal(prev_label, t[:head])
            sig[:, :head] = ramp * sig[:, :head] + (1.0 - ramp) * carried
        noise = _pink_noise(rng, c, n) * noise_scale[:, None]
        trials.append(Trial(mixing @ (sig + noise), fs))
        prev_label = int(label)

    meta = config.to_dict()
    meta["classes"] = k
    return TrialSet(trials, [int(x) for x in labels], meta)


def save(trial_set, path):
    """Write a TrialSet to ``path`` in the EEGSET v1 layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payloads = []
    for i, trial in enumerate(trial_set.trials):
        name = f"trial_{i:04d}.f64"
        data = np.ascontiguousarray(trial.values, dtype="<f8")
        (path / name).write_bytes(data.tobytes(order="C"))
        payloads.append(name)
    channels = trial_set.trials[0].channels if trial_set.trials else 0
    manifest = {
        "version": FORMAT_VERSION,
        "channels": channels,
        "sample_rate": trial_set.sample_rate if trial_set.trials else 0.0,
        "stim_freqs": list(trial_set.meta.get("stim_freqs", [])),
        "labels": list(trial_set.labels),
        "samples": [t.samples for t in trial_set.trials],
        "payloads": payloads,
        "meta": trial_set.meta,
    }
    with open(path / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(path / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial,label\n")
        for i, lab in enumerate(trial_set.labels):
            fh.write(f"{i},{lab}\n")
    return path


def load(path):
    """Read an EEGSET v1 dataset directory back into a TrialSet."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise ManifestError(f"no manifest.json in {path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest.json is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ManifestError("manifest.json must contain a JSON object")
    missing = [key for key in _MANIFEST_KEYS if key not in manifest]
    if missing:
        raise ManifestError(f"manifest.json lacks required keys: {missing}")
    if manifest["version"] != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported dataset version {manifest['version']!r} "
            f"(expected {FORMAT_VERSION!r})")
    labels = manifest["labels"]
    samples = manifest["samples"]
    payloads = manifest["payloads"]
    if not (len(labels) == len(samples) == len(payloads)):
        raise ManifestError(
            "labels, samples, and payloads must have equal lengths")
    channels = int(manifest["channels"])
    sample_rate = float(manifest["sample_rate"])
    trials = []
    for name, count in zip(payloads, samples):
        payload_path = path / name
        if not payload_path.is_file():
            raise MissingPayloadError(f"payload {name} referenced by "
                                      f"manifest.json is missing")
        raw = payload_path.read_bytes()
        expected = channels * int(count) * 8
        if len(raw) != expected:
            raise ShapeMismatchError(
                f"payload {name} holds {len(raw)} bytes, manifest implies "
                f"{expected} ({channels} channels x {count} samples)")
        values = np.frombuffer(raw, dtype="<f8").reshape(channels, int(count))
        trials.append(Trial(values.copy(), sample_rate))
    return TrialSet(trials, [int(x) for x in labels],
                    dict(manifest.get("meta", {})))


def stratified_split(trial_set, train_per_class):
    """Deterministic split: first ``train_per_class`` trials of each class
    (in presentation order) train, the rest test."""
    taken = {}
    train_idx, test_idx = [], []
    for i, lab in enumerate(trial_set.labels):
        if taken.get(lab, 0) < train_per_class:
            train_idx.append(i)
            taken[lab] = taken.get(lab, 0) + 1
        else:
            test_idx.append(i)
    return trial_set.subset(train_idx), trial_set.subset(test_idx)
