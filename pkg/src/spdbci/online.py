"""Curve-based online classification over a live multichannel stream.

The stream is band-pass stacked continuously (filter state persists
across epochs) and cut into overlapping sliding-window epochs. Each
epoch is classified against the trained class centers; the last ``d``
epoch labels and normalized distance profiles feed two gates:

* occurrence: the most recurrent label among the last ``d`` epochs must
  hold a fraction strictly above ``theta``;
* curve direction: the summed consecutive differences of the candidate
  class's normalized distance over those epochs must be negative, i.e.
  the covariance trajectory is moving toward that class center.

A decision is emitted only when the gates pass; the label/distance
history is then cleared so one sustained response cannot fire twice
from the same epochs.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .estimators import Trial, estimate
from .mdrm import classify_covariance
from .preprocessing import BandpassFilterBank, EpochPlan

DEFAULT_WINDOW_SECONDS = 3.6
DEFAULT_STEP_SECONDS = 0.2
DEFAULT_DEPTH = 5
DEFAULT_THETA = 0.7


@dataclass(frozen=True)
class OnlineConfig:
    """Streaming hyperparameters: window w, stride dN, history depth d,
    occurrence threshold theta, and whether the curve gate is active."""

    window_seconds: float = DEFAULT_WINDOW_SECONDS
    step_seconds: float = DEFAULT_STEP_SECONDS
    depth: int = DEFAULT_DEPTH
    theta: float = DEFAULT_THETA
    curve_criterion: bool = True

    def __post_init__(self):
        EpochPlan(self.window_seconds, self.step_seconds)
        if self.depth < 1:
            raise ValidationError("depth must be at least 1")
        if not 0.0 < self.theta <= 1.0:
            raise ValidationError("theta must lie in (0, 1]")

    def plan(self):
        return EpochPlan(self.window_seconds, self.step_seconds)


@dataclass(frozen=True)
class Decision:
    """An emitted classification: which class, when, and the gate values."""

    label: int
    epoch_index: int
    elapsed_seconds: float
    occurrence: float
    curve_sum: float
    end_sample: int


def min_buffered_samples(config, sample_rate):
    """Samples needed before any decision is possible: w_s + (d-1)*step_s."""
    plan = config.plan()
    return plan.window_samples(sample_rate) + \
        (config.depth - 1) * plan.step_samples(sample_rate)


def occurrence(labels, class_count):
    """Occurrence probabilities of the last-d epoch labels.

    Returns ``(rho, candidate)`` where ``rho[k-1]`` is the fraction of
    epochs labelled k and the candidate is the most recurrent label
    (ties to the lowest index).
    """
    labels = list(labels)
    if not labels:
        raise ValidationError("occurrence needs at least one label")
    rho = np.zeros(class_count)
    for lab in labels:
        rho[lab - 1] += 1.0
    rho /= len(labels)
    return rho, int(np.argmax(rho)) + 1


def curve_criterion(deltas, candidate):
    """Sum of consecutive differences of the candidate's normalized distance.

    ``deltas`` is the last-d sequence of normalized distance vectors.
    Returns ``(value, passed)``; the gate passes when the sum is strictly
    negative (trajectory approaching the candidate center).
    """
    deltas = list(deltas)
    if len(deltas) < 2:
        raise ValidationError("curve criterion needs at least two epochs")
    series = [vec[candidate - 1] for vec in deltas]
    value = 0.0
    for j in range(1, len(series)):
        value += series[j] - series[j - 1]
    return float(value), value < 0.0


class _GrowBuffer:
    """Append-only 2-D sample buffer with amortized O(1) growth."""

    def __init__(self, rows, capacity=4096):
        self._data = np.empty((rows, capacity))
        self._len = 0

    def __len__(self):
        return self._len

    def append(self, chunk):
        need = self._len + chunk.shape[1]
        if need > self._data.shape[1]:
            grown = np.empty((self._data.shape[0],
                              max(need, 2 * self._data.shape[1])))
            grown[:, :self._len] = self._data[:, :self._len]
            self._data = grown
        self._data[:, self._len:need] = chunk
        self._len = need

    def window(self, start, end):
        return self._data[:, start:end]


class OnlineState:
    """Single-stream state machine: push samples in, collect decisions out.

    One instance per stream, single writer. Decisions are immutable and
    may be handed to other threads freely.
    """

    def __init__(self, model, config=None):
        self.model = model
        self.config = config or OnlineConfig()
        preproc = model.preproc_spec
        n_freqs = len(preproc.stim_freqs)
        if model.dim % n_freqs != 0:
            raise ValidationError(
                f"model dim {model.dim} is not a multiple of the "
                f"{n_freqs} stimulus frequencies")
        self.channels = model.dim // n_freqs
        self.sample_rate = preproc.sample_rate
        self._bank = BandpassFilterBank(
            preproc.stim_freqs, self.channels, self.sample_rate,
            preproc.half_bandwidth, preproc.filter_order)
        plan = self.config.plan()
        self._w = plan.window_samples(self.sample_rate)
        self._step = plan.step_samples(self.sample_rate)
        self._buffer = _GrowBuffer(model.dim)
        self._labels = deque(maxlen=self.config.depth)
        self._deltas = deque(maxlen=self.config.depth)
        self.epoch_index = 0
        self.samples_seen = 0
        self.epoch_log = []

    def _next_boundary(self):
        return self._w + self.epoch_index * self._step

    def push_samples(self, frame):
        """Ingest a (channels x m) chunk; returns decisions it triggered.

        Epochs are cut strictly by absolute sample index, so the decision
        sequence does not depend on how the stream is chopped into
        frames.
        """
        frame = np.asarray(frame, dtype=float)
        if frame.ndim == 1:
            frame = frame[:, None]
        if frame.shape[0] != self.channels:
            raise ValidationError(
                f"frame has {frame.shape[0]} channels, stream expects "
                f"{self.channels}")
        self._buffer.append(self._bank.process(frame))
        self.samples_seen += frame.shape[1]
        decisions = []
        while self._next_boundary() <= self.samples_seen:
            end = self._next_boundary()
            decision = self._consume_epoch(end)
            if decision is not None:
                decisions.append(decision)
        return decisions

    def _consume_epoch(self, end):
        window = self._buffer.window(end - self._w, end)
        cov = estimate(Trial(window, self.sample_rate),
                       self.model.estimator_spec)
        label, dists = classify_covariance(cov, self.model)
        self._labels.append(label)
        self._deltas.append(dists / dists.sum())
        self.epoch_index += 1

        row = {"epoch": self.epoch_index, "end_sample": end,
               "end_seconds": end / self.sample_rate, "label": label,
               "candidate": None, "rho": None, "delta": None,
               "decided": False}
        decision = None
        if len(self._labels) == self.config.depth:
            rho, candidate = occurrence(self._labels, self.model.class_count)
            row["candidate"] = candidate
            row["rho"] = float(rho[candidate - 1])
            if self.config.depth >= 2:
                value, curve_ok = curve_criterion(self._deltas, candidate)
            else:
                # depth 1: the difference sum is empty, so the strict
                # negativity gate can never pass.
                value, curve_ok = 0.0, False
            row["delta"] = value
            if rho[candidate - 1] > self.config.theta and \
                    (curve_ok or not self.config.curve_criterion):
                decision = Decision(
                    label=candidate,
                    epoch_index=self.epoch_index,
                    elapsed_seconds=end / self.sample_rate,
                    occurrence=float(rho[candidate - 1]),
                    curve_sum=value,
                    end_sample=end,
                )
                row["decided"] = True
                self._labels.clear()
                self._deltas.clear()
        self.epoch_log.append(row)
        return decision


@dataclass
class TrialOutcome:
    """First decision reached while a given trial was streaming."""

    trial_index: int
    true_label: int
    decided_label: int | None
    delay_seconds: float | None

    @property
    def decided(self):
        return self.decided_label is not None

    @property
    def correct(self):
        return self.decided and self.decided_label == self.true_label


@dataclass
class StreamReport:
    """Per-trial outcomes plus the stream-level summary and epoch log."""

    outcomes: list
    decisions: list
    epoch_log: list
    accuracy: float | None
    mean_delay: float | None
    decided_count: int
    held_back_count: int


def evaluate_stream(trial_set, model, config=None):
    """Replay labelled trials back-to-back as one continuous recording.

    Each trial's outcome is the first decision whose closing sample falls
    inside that trial, with delay measured from trial onset; trials where
    the gates never fire are held back. Accuracy is reported over decided
    trials only.
    """
    config = config or OnlineConfig()
    state = OnlineState(model, config)
    boundaries = [0]
    for trial in trial_set.trials:
        boundaries.append(boundaries[-1] + trial.samples)
    decisions = []
    for trial in trial_set.trials:
        decisions.extend(state.push_samples(trial.values))

    outcomes = [TrialOutcome(i, lab, None, None)
                for i, lab in enumerate(trial_set.labels)]
    for decision in decisions:
        # attribute by the last sample the deciding epoch contains
        idx = int(np.searchsorted(boundaries, decision.end_sample - 1,
                                  side="right")) - 1
        idx = min(idx, len(outcomes) - 1)
        if outcomes[idx].decided_label is None:
            outcomes[idx].decided_label = decision.label
            start = boundaries[idx] / trial_set.sample_rate
            outcomes[idx].delay_seconds = decision.elapsed_seconds - start

    decided = [o for o in outcomes if o.decided]
    accuracy = None
    mean_delay = None
    if decided:
        accuracy = 100.0 * sum(o.correct for o in decided) / len(decided)
        mean_delay = float(np.mean([o.delay_seconds for o in decided]))
    return StreamReport(
        outcomes=outcomes,
        decisions=decisions,
        epoch_log=state.epoch_log,
        accuracy=accuracy,
        mean_delay=mean_delay,
        decided_count=len(decided),
        held_back_count=len(outcomes) - len(decided),
    )


def write_epoch_log(epoch_log, path):
    """Dump the per-epoch gating trace as CSV for post-hoc plotting."""
    def fmt(value):
        if value is None:
            return ""
        if isinstance(value, bool):
            return "1" if value else "0"
        if isinstance(value, float):
            return repr(value)
        return str(value)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,end_seconds,label,candidate,rho,delta,decided\n")
        for row in epoch_log:
            fh.write(",".join(fmt(row[key]) for key in
                              ("epoch", "end_seconds", "label", "candidate",
                               "rho", "delta", "decided")) + "\n")
