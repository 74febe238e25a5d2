"""Shared numerical kernels: framing, windowing, spectra, mel filterbank,
DCT, autocorrelation, LPC and decimation.

All kernels are pure functions. Cached tables (filterbanks, windows) are
returned read-only so they can be shared between callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from . import SongSpeechEmotionError
from .audio_io import AudioClip


class SignalError(SongSpeechEmotionError, ValueError):
    """Raised when a kernel receives input outside its contract."""


class SilentFrameError(SignalError):
    """Raised by LPC when the frame has zero energy (unvoiced/undefined)."""


@dataclass(frozen=True)
class Spectrum:
    """A one-sided magnitude spectrum.

    Attributes:
        magnitudes: |X[k]| for k = 0..nfft/2.
        bin_hz: Frequency spacing between bins (sample_rate / nfft).
    """

    magnitudes: np.ndarray
    bin_hz: float

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(len(self.magnitudes)) * self.bin_hz

    @property
    def power(self) -> np.ndarray:
        return self.magnitudes ** 2

    @property
    def nfft(self) -> int:
        return 2 * (len(self.magnitudes) - 1)


@dataclass(frozen=True)
class FrameMatrix:
    """A per-utterance LLD matrix, frames x features.

    Attributes:
        values: Real matrix of shape (n_frames, n_columns).
        frame_hop_s: Hop between frame starts in seconds.
        frame_len_s: Frame length in seconds.
        column_names: One name per column.
        set_id: The feature set the columns belong to (G23, P34, L193), if any.
    """

    values: np.ndarray
    frame_hop_s: float
    frame_len_s: float
    column_names: tuple[str, ...] = field(default=())
    set_id: str | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise SignalError(f"frame matrix needs shape (n_frames >= 1, n_columns), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise SignalError("frame matrix contains non-finite values")
        names = tuple(self.column_names) or tuple(f"c{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise SignalError(f"{len(names)} column names for {values.shape[1]} columns")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


class LpcResult(NamedTuple):
    coefficients: np.ndarray
    gain: float


def next_pow2(n: int) -> int:
    """Return the smallest power of two >= n."""
    return 1 << max(0, int(n) - 1).bit_length()


def is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def frame_signal(samples: np.ndarray, win_samples: int, hop_samples: int) -> np.ndarray:
    """Cut a signal into overlapping frames.

    Every sample lands in at least one frame: signals shorter than one window
    become a single zero-padded frame, and a tail that does not fill a whole
    hop gets one more frame, zero-padded. When the hop divides L - win this
    is n_frames = 1 + (L - win) // hop.

    Returns:
        A (n_frames, win_samples) array.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise SignalError("cannot frame an empty signal")
    if win_samples <= 0 or hop_samples <= 0:
        raise SignalError(f"window and hop must be positive, got {win_samples}/{hop_samples}")

    n_frames = 1 + max(0, -(-(len(samples) - win_samples) // hop_samples))
    padded = np.zeros((n_frames - 1) * hop_samples + win_samples)
    padded[:len(samples)] = samples
    windows = np.lib.stride_tricks.sliding_window_view(padded, win_samples)
    return windows[::hop_samples].copy()


@lru_cache(maxsize=16)
def _hamming(n: int) -> np.ndarray:
    if n == 1:
        window = np.array([0.08])
    else:
        k = np.arange(n)
        window = 0.54 - 0.46 * np.cos(2 * np.pi * k / (n - 1))
    window.setflags(write=False)
    return window


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1)); a single point is 0.08."""
    if n < 1:
        raise SignalError(f"window length must be >= 1, got {n}")
    return _hamming(int(n))


def fft_power(frame: np.ndarray, nfft: int, sample_rate_hz: float = 1.0) -> Spectrum:
    """Magnitude spectrum |X[k]|, k = 0..nfft/2, of a zero-padded frame."""
    if not is_pow2(nfft):
        raise SignalError(f"nfft must be a power of two, got {nfft}")
    frame = np.asarray(frame, dtype=np.float64)
    if len(frame) > nfft:
        raise SignalError(f"frame of {len(frame)} samples does not fit nfft={nfft}")
    magnitudes = np.abs(np.fft.rfft(frame, n=nfft))
    return Spectrum(magnitudes, sample_rate_hz / nfft)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(
    nfft: int,
    fs: float,
    n_mels: int,
    f_lo: float = 0.0,
    f_hi: float | None = None,
    area_normalize: bool = False,
) -> np.ndarray:
    """Triangular mel filterbank of shape (n_mels, nfft/2 + 1).

    Filter edges are uniform on the mel scale and the triangles (peak 1) are
    evaluated at the exact bin frequencies, so a filter narrower than one bin
    still picks up the bin inside it.
    """
    f_hi = fs / 2 if f_hi is None else f_hi
    if not 0 <= f_lo < f_hi <= fs / 2:
        raise SignalError(f"need 0 <= f_lo < f_hi <= fs/2, got {f_lo}, {f_hi}, fs={fs}")

    bin_freqs = np.arange(nfft // 2 + 1) * fs / nfft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_mels + 2))

    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - left) / (center - left)
    falling = (right - bin_freqs) / (right - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.sum(axis=1) == 0)
    if empty.size:
        raise SignalError(
            f"{n_mels} mel filters are too many for nfft={nfft} at {fs} Hz "
            f"(filter {empty[0]} has zero width)"
        )
    if area_normalize:
        weights *= 2.0 / (right - left)

    weights.setflags(write=False)
    return weights


def dct_ii_ortho(v: np.ndarray, n_out: int) -> np.ndarray:
    """First n_out orthonormal DCT-II coefficients along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise SignalError("cannot transform an empty vector")
    if n_out > v.shape[-1]:
        raise SignalError(f"n_out={n_out} exceeds input length {v.shape[-1]}")
    return sp_fft.dct(v, type=2, norm="ortho", axis=-1)[..., :n_out]


def autocorr(frame: np.ndarray, max_lag: int) -> np.ndarray:
    """r[tau] = sum_n x[n] x[n + tau] for tau = 0..max_lag."""
    frame = np.asarray(frame, dtype=np.float64)
    if not 0 <= max_lag < len(frame):
        raise SignalError(f"max_lag must be in [0, {len(frame)}), got {max_lag}")
    nfft = next_pow2(2 * len(frame))
    spectrum = np.fft.rfft(frame, n=nfft)
    r = np.fft.irfft(spectrum.real ** 2 + spectrum.imag ** 2, n=nfft)
    return r[:max_lag + 1]


def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve the LPC normal equations from an autocorrelation sequence.

    Uses the convention A(z) = 1 + sum_k a[k] z^-k.

    Returns:
        (a, errors, reflection): a has `order` coefficients, errors[i] is the
        residual energy after order i (errors[0] = r[0]), reflection holds
        the per-order reflection coefficients.
    """
    r = np.asarray(r, dtype=np.float64)
    if r[0] <= 0:
        raise SilentFrameError("zero-energy frame has no LPC solution")

    a = np.zeros(order)
    reflection = np.zeros(order)
    errors = np.empty(order + 1)
    errors[0] = error = r[0]

    for i in range(order):
        if error <= r[0] * 1e-12:
            errors[i + 1:] = error
            break
        acc = r[i + 1] + np.dot(a[:i], r[i:0:-1])
        k = -acc / error
        a[:i] = a[:i] + k * a[:i][::-1]
        a[i] = k
        reflection[i] = k
        error *= 1.0 - k * k
        errors[i + 1] = error

    return a, errors, reflection


def lpc(frame: np.ndarray, order: int) -> LpcResult:
    """Autocorrelation-method LPC of one frame.

    Raises:
        SilentFrameError: If the frame has no energy.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if not 0 <= order < len(frame):
        raise SignalError(f"order must be in [0, {len(frame)}), got {order}")
    r = autocorr(frame, order)
    a, errors, _ = levinson_durbin(r, order)
    return LpcResult(a, max(0.0, float(errors[-1])))


def pre_emphasis(samples: np.ndarray, coefficient: float = 0.97) -> np.ndarray:
    """y[n] = x[n] - c x[n-1], with y[0] = x[0]."""
    samples = np.asarray(samples, dtype=np.float64)
    return sp_signal.lfilter([1.0, -coefficient], [1.0], samples)


@lru_cache(maxsize=8)
def _decimation_filter(fs: int, factor: int) -> np.ndarray:
    taps = sp_signal.firwin(20 * factor + 1, 0.45 * fs / factor, fs=fs)
    taps.setflags(write=False)
    return taps


def decimate(clip: AudioClip, factor: int) -> AudioClip:
    """Low-pass at 0.45 * (fs / factor), then keep every factor-th sample.

    The FIR filter is applied forward and backward so the output is not
    delayed against the input.
    """
    if factor < 1:
        raise SignalError(f"decimation factor must be >= 1, got {factor}")
    if factor == 1:
        return clip

    taps = _decimation_filter(clip.sample_rate_hz, factor)
    padlen = min(3 * len(taps), len(clip.samples) - 1)
    filtered = sp_signal.filtfilt(taps, [1.0], clip.samples, padlen=max(padlen, 0))
    return AudioClip(
        filtered[::factor],
        int(round(clip.sample_rate_hz / factor)),
        clip.source_path,
    )
