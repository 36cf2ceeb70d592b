"""STFT analysis/synthesis and WAV I/O.

Spectrogram data is laid out as ``(channel, frame, bin)``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.io import wavfile


@dataclass
class Spectrogram:
    data: np.ndarray
    frame_len: int
    frame_shift: int
    sample_rate: float
    n_samples: Optional[int] = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"spectrogram data must be (M, T, F), got {self.data.shape}")
        if self.data.shape[2] != self.frame_len // 2 + 1:
            raise ValueError("number of bins must equal frame_len // 2 + 1")
        if min(self.data.shape[:2]) < 1:
            raise ValueError("spectrogram needs at least one channel and one frame")

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_frames(self):
        return self.data.shape[1]

    @property
    def n_bins(self):
        return self.data.shape[2]

    def bin_frequencies(self):
        return np.arange(self.n_bins) * self.sample_rate / self.frame_len


def _window(kind, frame_len):
    if kind != "hann":
        raise ValueError(f"unsupported window {kind!r}")
    # periodic Hann: squared window sums to a constant at shift frame_len / 4
    return np.hanning(frame_len + 1)[:-1]


def _frame_count(n_padded, frame_len, frame_shift):
    return -(-(n_padded - frame_len) // frame_shift) + 1


def analyze(signal, frame_len=512, frame_shift=128, window="hann", sample_rate=16000.0):
    """Short-time Fourier transform of a ``(M, N)`` (or ``(N,)``) signal.

    The signal is padded with ``frame_len - frame_shift`` zeros in front, so
    every sample is covered by the same number of frames, and with zeros at
    the tail so the last frame is complete.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("signal must be a non-empty (channels, samples) array")
    if frame_shift > frame_len or frame_shift < 1:
        raise ValueError("frame_shift must lie in [1, frame_len]")
    if frame_len % frame_shift:
        raise ValueError("frame_shift must divide frame_len")
    n = x.shape[1]
    lead = frame_len - frame_shift
    n_frames = _frame_count(n + lead, frame_len, frame_shift)
    total = (n_frames - 1) * frame_shift + frame_len
    padded = np.zeros((x.shape[0], total))
    padded[:, lead:lead + n] = x
    idx = np.arange(frame_len)[None, :] + frame_shift * np.arange(n_frames)[:, None]
    frames = padded[:, idx] * _window(window, frame_len)
    return Spectrogram(np.fft.rfft(frames, axis=-1), frame_len, frame_shift, sample_rate, n)


def synthesize(spec, window="hann"):
    """Weighted overlap-add inverse of :func:`analyze`; returns ``(M, N)``."""
    frame_len, frame_shift = spec.frame_len, spec.frame_shift
    if frame_len % frame_shift or spec.n_bins != frame_len // 2 + 1:
        raise ValueError("inconsistent framing metadata")
    w = _window(window, frame_len)
    frames = np.fft.irfft(spec.data, n=frame_len, axis=-1) * w
    n_frames = spec.n_frames
    total = (n_frames - 1) * frame_shift + frame_len
    out = np.zeros((spec.n_channels, total))
    norm = np.zeros(total)
    for t in range(n_frames):
        sl = slice(t * frame_shift, t * frame_shift + frame_len)
        out[:, sl] += frames[:, t]
        norm[sl] += w ** 2
    lead = frame_len - frame_shift
    n = spec.n_samples if spec.n_samples is not None else n_frames * frame_shift
    out = out[:, lead:lead + n]
    norm = norm[lead:lead + n]
    return out / np.where(norm > 1e-12, norm, 1.0)


def read_wav(path):
    """Read a WAV file as ``(signal (M, N) float in [-1, 1], sample_rate)``."""
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(float) / 2147483648.0
    elif data.dtype.kind == "f":
        data = data.astype(float)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    return data.T, float(rate)


def write_wav(path, signal, sample_rate, sample_format="float32"):
    """Write a ``(M, N)`` or ``(N,)`` signal as PCM16 or 32-bit float WAV."""
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if sample_format == "float32":
        data = x.T.astype(np.float32)
    elif sample_format == "pcm16":
        data = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown sample format {sample_format!r}")
    wavfile.write(path, int(round(sample_rate)), data)
