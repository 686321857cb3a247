"""Causal band-pass filtering, frequency stacking, and epoching.

A trial recorded on C channels is expanded into an F*C-row "extended"
trial by band-pass filtering it around each of the F stimulus
frequencies and stacking the filtered copies vertically. Covariances of
the extended trial then carry the per-frequency power structure that the
plain spatial covariance would miss.

Filtering is causal (forward-only) everywhere so that offline training
and online streaming see identically distorted signals. Offline, the
filter state starts from zero at each trial boundary; online, state
persists across epochs because epochs are windows into one continuously
filtered stream.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import FilterDesignError, ValidationError
from .estimators import Trial

DEFAULT_HALF_BANDWIDTH = 1.0
DEFAULT_FILTER_ORDER = 8


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth band-pass description.

    ``order`` is the order of the final band-pass filter and must be even
    (a band-pass of order 2k is built from a prototype of order k). The
    passband is ``center_freq +- half_bandwidth``.
    """

    center_freq: float
    half_bandwidth: float
    order: int
    sample_rate: float

    def __post_init__(self):
        if self.center_freq <= 0 or self.half_bandwidth <= 0:
            raise ValidationError("center_freq and half_bandwidth must be positive")
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        if self.order < 2 or self.order % 2 != 0:
            raise ValidationError("order must be an even integer >= 2")
        if self.center_freq + self.half_bandwidth >= self.sample_rate / 2.0:
            raise ValidationError(
                f"passband edge {self.center_freq + self.half_bandwidth} Hz "
                f"reaches the Nyquist frequency {self.sample_rate / 2.0} Hz")


@dataclass(frozen=True)
class EpochPlan:
    """Sliding-window layout: window length w and stride dN, in seconds.

    Windows must overlap (w > dN > 0). Sample counts are obtained by
    flooring seconds * sample_rate.
    """

    window_seconds: float
    step_seconds: float

    def __post_init__(self):
        if not self.window_seconds > self.step_seconds > 0:
            raise ValidationError(
                f"epoch plan requires window > step > 0, got "
                f"window={self.window_seconds}, step={self.step_seconds}")

    def window_samples(self, sample_rate):
        return int(np.floor(self.window_seconds * sample_rate))

    def step_samples(self, sample_rate):
        return int(np.floor(self.step_seconds * sample_rate))


def design_bandpass(spec):
    """Design a causal Butterworth band-pass as second-order sections.

    The passband is [center - hb, center + hb] at the spec's order.
    Designs whose poles leave the unit circle are rejected.
    """
    low = spec.center_freq - spec.half_bandwidth
    high = spec.center_freq + spec.half_bandwidth
    if low <= 0:
        raise FilterDesignError(
            f"low passband edge {low} Hz must be positive")
    sos = signal.butter(spec.order // 2, [low, high], btype="bandpass",
                        fs=spec.sample_rate, output="sos")
    _, poles, _ = signal.sos2zpk(sos)
    if np.any(np.abs(poles) >= 1.0):
        raise FilterDesignError(
            f"unstable design: pole magnitude {np.abs(poles).max():.6f} "
            f"for passband [{low}, {high}] Hz at order {spec.order}")
    return sos


class BandpassFilterBank:
    """Causal filter bank over a set of stimulus frequencies.

    Holds per-band recurrence state so a live stream can be filtered in
    arbitrary chunks with output identical to filtering it in one piece.
    One instance serves one stream (single writer); create a fresh
    instance per trial for offline use so state starts from zero.
    """

    def __init__(self, stim_freqs, channels, sample_rate,
                 half_bandwidth=DEFAULT_HALF_BANDWIDTH,
                 order=DEFAULT_FILTER_ORDER):
        if len(stim_freqs) < 1:
            raise ValidationError("at least one stimulus frequency is required")
        self.stim_freqs = tuple(float(f) for f in stim_freqs)
        self.channels = int(channels)
        self.sample_rate = float(sample_rate)
        self.half_bandwidth = float(half_bandwidth)
        self.order = int(order)
        self.sos = [
            design_bandpass(FilterSpec(f, self.half_bandwidth, self.order,
                                       self.sample_rate))
            for f in self.stim_freqs
        ]
        self.reset()

    def reset(self):
        self._state = [
            np.zeros((sos.shape[0], self.channels, 2)) for sos in self.sos
        ]

    def process(self, frame):
        """Filter a (channels x m) chunk; returns the (F*C x m) stacked output."""
        frame = np.asarray(frame, dtype=float)
        if frame.ndim != 2 or frame.shape[0] != self.channels:
            raise ValidationError(
                f"frame must have {self.channels} rows, got shape {frame.shape}")
        blocks = []
        for band, sos in enumerate(self.sos):
            out, self._state[band] = signal.sosfilt(
                sos, frame, axis=1, zi=self._state[band])
            blocks.append(out)
        return np.vstack(blocks)


def extend_trial(trial, stim_freqs, half_bandwidth=DEFAULT_HALF_BANDWIDTH,
                 order=DEFAULT_FILTER_ORDER):
    """Stack band-pass filtered copies of a trial, one block per frequency.

    Block f of the output holds the trial filtered around
    ``stim_freqs[f]``; the result has F*C rows and the original sample
    count. Filter state starts from zero (trial boundary).
    """
    bank = BandpassFilterBank(stim_freqs, trial.channels, trial.sample_rate,
                              half_bandwidth, order)
    return Trial(bank.process(trial.values), trial.sample_rate)


def trim_latency(trial, latency_seconds):
    """Drop the first floor(latency * fs) samples of a trial."""
    if latency_seconds < 0:
        raise ValidationError("latency must be nonnegative")
    skip = int(np.floor(latency_seconds * trial.sample_rate))
    if skip >= trial.samples:
        raise ValidationError(
            f"latency of {skip} samples leaves no data in a "
            f"{trial.samples}-sample trial")
    if skip == 0:
        return trial
    return Trial(trial.values[:, skip:], trial.sample_rate)


def epoch_stream(recording, plan):
    """Cut a recording into overlapping sliding-window epochs.

    Epoch boundaries sit at n = w_s, w_s + d_s, ... (sample counts from
    :class:`EpochPlan`); epoch i is the window of the last w_s samples
    before boundary n, so consecutive epochs overlap by w_s - d_s
    samples. A recording shorter than one window yields no epochs.
    """
    w_s = plan.window_samples(recording.sample_rate)
    d_s = plan.step_samples(recording.sample_rate)
    epochs = []
    for end in range(w_s, recording.samples + 1, d_s):
        epochs.append(Trial(recording.values[:, end - w_s:end],
                            recording.sample_rate))
    return epochs
