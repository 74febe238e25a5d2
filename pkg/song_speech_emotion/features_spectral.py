"""Frame-level spectral and cepstral LLDs for the 34-feature (pAA) and the
193-feature (L193) sets."""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import NamedTuple

import numpy as np

from .audio_io import AudioClip
from .dsp_core import (
    FrameMatrix,
    Spectrum,
    dct_ii_ortho,
    fft_power,
    frame_signal,
    hamming_window,
    mel_filterbank,
    next_pow2,
)

LOG_FLOOR = 1e-10
LOWEST_PITCH_HZ = 27.5

PAA_MFCC = 13
PAA_MELS = 40
L193_MFCC = 40
L193_MELS = 128
CHROMA_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")

PAA_COLUMNS = (
    ("zcr", "energy", "energy_entropy", "spectral_centroid", "spectral_spread",
     "spectral_entropy", "spectral_flux", "spectral_rolloff")
    + tuple(f"mfcc_{i}" for i in range(1, PAA_MFCC + 1))
    + tuple(f"chroma_{i}" for i in range(1, 13))
    + ("chroma_deviation",)
)

L193_COLUMNS = (
    tuple(f"mfcc_{i}" for i in range(1, L193_MFCC + 1))
    + tuple(f"chroma_{i}" for i in range(1, 13))
    + tuple(f"mel_{i}" for i in range(1, L193_MELS + 1))
    + tuple(f"contrast_{i}" for i in range(1, 8))
    + tuple(f"tonnetz_{i}" for i in range(1, 7))
)


@dataclass(frozen=True)
class FeatureParams:
    """Constants shared by all feature extractors.

    Attributes:
        win_s: Frame length in seconds.
        hop_s: Frame hop in seconds.
        rolloff_fraction: Cumulative magnitude fraction for spectral roll-off.
        energy_blocks: Number of sub-blocks for the entropy of energy.
        contrast_alpha: Fraction of band bins averaged for contrast peaks/valleys.
        contrast_first_edge_hz: Upper edge of the lowest contrast band.
        contrast_bands: Number of octave bands above the lowest band.
        mel_area_normalize: Scale mel triangles to unit area instead of peak 1.
        f0_min_hz: Lowest pitch searched.
        f0_max_hz: Highest pitch searched.
        voicing_threshold: Minimum normalized autocorrelation peak for voicing.
        silence_floor: Frames with r(0) at or below this are unvoiced.
        formant_rate_hz: Sample rate formant analysis runs at.
        lpc_order: LPC order for formant analysis.
        pre_emphasis: Pre-emphasis coefficient used before LPC.
        jitter_window_s: Span of periods used for per-frame jitter and shimmer.
    """

    win_s: float = 0.025
    hop_s: float = 0.010
    rolloff_fraction: float = 0.85
    energy_blocks: int = 10
    contrast_alpha: float = 0.02
    contrast_first_edge_hz: float = 200.0
    contrast_bands: int = 6
    mel_area_normalize: bool = False
    f0_min_hz: float = 60.0
    f0_max_hz: float = 600.0
    voicing_threshold: float = 0.45
    silence_floor: float = 1e-10
    formant_rate_hz: int = 16000
    lpc_order: int = 12
    pre_emphasis: float = 0.97
    jitter_window_s: float = 0.06

    def frame_sizes(self, sample_rate_hz: float) -> tuple[int, int, int]:
        """Return (window, hop, nfft) in samples at the given rate."""
        win = int(round(self.win_s * sample_rate_hz))
        hop = int(round(self.hop_s * sample_rate_hz))
        return win, hop, next_pow2(win)


DEFAULT_PARAMS = FeatureParams()


class SpectralStats(NamedTuple):
    centroid_hz: float
    spread_hz: float
    spectral_entropy: float
    flux: float
    rolloff_hz: float


def zcr(frame: np.ndarray) -> float:
    """Fraction of consecutive sample pairs whose sign differs."""
    frame = np.asarray(frame)
    if len(frame) < 2:
        return 0.0
    changes = np.count_nonzero(np.diff(np.signbit(frame)))
    return changes / (len(frame) - 1)


def energy(frame: np.ndarray) -> float:
    frame = np.asarray(frame, dtype=np.float64)
    return float(np.dot(frame, frame) / len(frame))


def _entropy_bits(weights: np.ndarray) -> float:
    total = weights.sum()
    if total <= 0:
        return 0.0
    p = weights[weights > 0] / total
    return float(-np.sum(p * np.log2(p)))


def energy_entropy(frame: np.ndarray, n_blocks: int = 10) -> float:
    """Shannon entropy (bits) of the normalized sub-block energies.

    The tail is zero-padded so the frame splits into n_blocks equal blocks.
    """
    if n_blocks < 1:
        raise ValueError(f"n_blocks must be >= 1, got {n_blocks}")
    frame = np.asarray(frame, dtype=np.float64)
    block = math.ceil(len(frame) / n_blocks)
    padded = np.zeros(block * n_blocks)
    padded[:len(frame)] = frame
    block_energy = np.sum(padded.reshape(n_blocks, block) ** 2, axis=1)
    return _entropy_bits(block_energy)


def _normalized(magnitudes: np.ndarray) -> np.ndarray:
    total = magnitudes.sum()
    return magnitudes / total if total > 0 else np.zeros_like(magnitudes)


def spectral_flux(spectrum: Spectrum, prev_spectrum: Spectrum | None) -> float:
    """Squared difference of sum-normalized magnitudes; 0 without a previous frame."""
    if prev_spectrum is None:
        return 0.0
    if len(prev_spectrum.magnitudes) != len(spectrum.magnitudes):
        raise ValueError("spectra must have the same length")
    diff = _normalized(spectrum.magnitudes) - _normalized(prev_spectrum.magnitudes)
    return float(np.dot(diff, diff))


def spectral_rolloff(spectrum: Spectrum, fraction: float = 0.85) -> float:
    """Lowest frequency at which the cumulative magnitude reaches `fraction`."""
    cumulative = np.cumsum(spectrum.magnitudes)
    total = cumulative[-1]
    if total <= 0:
        return 0.0
    index = np.searchsorted(cumulative, fraction * total, side="left")
    return float(min(index, len(cumulative) - 1) * spectrum.bin_hz)


def stft_stats(
    spectrum: Spectrum,
    prev_spectrum: Spectrum | None,
    rolloff_fraction: float = 0.85,
) -> SpectralStats:
    """Centroid, spread, entropy, flux and roll-off of one magnitude spectrum."""
    m = spectrum.magnitudes
    total = m.sum()
    flux = spectral_flux(spectrum, prev_spectrum)
    if total <= 0:
        return SpectralStats(0.0, 0.0, 0.0, flux, 0.0)

    f = spectrum.frequencies
    centroid = float(np.dot(f, m) / total)
    spread = float(np.sqrt(np.dot((f - centroid) ** 2, m) / total))
    return SpectralStats(
        centroid_hz=centroid,
        spread_hz=spread,
        spectral_entropy=_entropy_bits(m),
        flux=flux,
        rolloff_hz=spectral_rolloff(spectrum, rolloff_fraction),
    )


def _sample_rate(spectrum: Spectrum) -> float:
    return spectrum.bin_hz * spectrum.nfft


def mel_energies(spectrum: Spectrum, n_mels: int, area_normalize: bool = False) -> np.ndarray:
    """Mel-band power (the mel-scaled spectrogram column for one frame)."""
    bank = mel_filterbank(spectrum.nfft, _sample_rate(spectrum), n_mels, area_normalize=area_normalize)
    return bank @ spectrum.power


def log_mel_energies(spectrum: Spectrum, n_mels: int, area_normalize: bool = False) -> np.ndarray:
    """Natural log of mel-band power, floored at LOG_FLOOR times the loudest band.

    The floor scales with the frame, so a gain change shifts every value by
    the same amount. Silent frames use LOG_FLOOR itself.
    """
    power = mel_energies(spectrum, n_mels, area_normalize)
    peak = power.max()
    return np.log(np.maximum(power, LOG_FLOOR * peak if peak > 0 else LOG_FLOOR))


def mfcc(
    spectrum: Spectrum,
    n_mels: int,
    n_coeffs: int,
    area_normalize: bool = False,
) -> np.ndarray:
    """DCT-II (orthonormal) of log mel energies, first n_coeffs coefficients."""
    return dct_ii_ortho(log_mel_energies(spectrum, n_mels, area_normalize), n_coeffs)


def chroma12(spectrum: Spectrum, tuning_ref_hz: float = 440.0) -> np.ndarray:
    """Fold bin energies onto the 12 pitch classes (index 0 = C), peak 1.

    Bins below 27.5 Hz are ignored; an all-zero result stays zero.
    """
    f = spectrum.frequencies
    keep = f >= LOWEST_PITCH_HZ
    midi = np.round(12.0 * np.log2(f[keep] / tuning_ref_hz)).astype(int) + 69
    chroma = np.bincount(midi % 12, weights=spectrum.power[keep], minlength=12)
    peak = chroma.max()
    return chroma / peak if peak > 0 else chroma


def chroma_deviation(chroma: np.ndarray) -> float:
    return float(np.std(chroma))


def contrast_band_edges(
    sample_rate_hz: float,
    n_bands: int = 6,
    first_edge_hz: float = 200.0,
) -> np.ndarray:
    """Band edges [0, e, 2e, 4e, ..., fs/2] for n_bands octave bands plus the top band."""
    octave_edges = first_edge_hz * 2.0 ** np.arange(n_bands)
    return np.concatenate(([0.0], octave_edges, [sample_rate_hz / 2]))


def spectral_contrast(
    spectrum: Spectrum,
    n_bands: int = 6,
    alpha: float = 0.02,
    first_edge_hz: float = 200.0,
) -> np.ndarray:
    """Peak minus valley of log10 magnitudes in n_bands + 1 octave bands."""
    edges = contrast_band_edges(_sample_rate(spectrum), n_bands, first_edge_hz)
    f = spectrum.frequencies
    log_m = np.log10(np.maximum(spectrum.magnitudes, LOG_FLOOR))

    contrast = np.zeros(n_bands + 1)
    for band in range(n_bands + 1):
        low, high = edges[band], edges[band + 1]
        if band == n_bands:
            in_band = (f >= low) & (f <= high)
        else:
            in_band = (f >= low) & (f < high)
        values = np.sort(log_m[in_band])
        if values.size == 0:
            continue
        q = max(1, math.ceil(alpha * values.size))
        contrast[band] = values[-q:].mean() - values[:q].mean()
    return contrast


def _tonnetz_matrix() -> np.ndarray:
    p = np.arange(12)
    rows = []
    for radius, phi in ((1.0, 7 * np.pi / 6), (1.0, 3 * np.pi / 2), (0.5, 2 * np.pi / 3)):
        rows.append(radius * np.sin(p * phi))
        rows.append(radius * np.cos(p * phi))
    matrix = np.array(rows)
    matrix.setflags(write=False)
    return matrix


TONNETZ_MATRIX = _tonnetz_matrix()


def tonnetz6(chroma: np.ndarray) -> np.ndarray:
    """Project L1-normalized chroma onto fifths, minor and major thirds."""
    chroma = np.asarray(chroma, dtype=np.float64)
    total = np.abs(chroma).sum()
    if total == 0:
        return np.zeros(6)
    return TONNETZ_MATRIX @ (chroma / total)


def frame_spectrum(frame: np.ndarray, sample_rate_hz: float, nfft: int | None = None) -> Spectrum:
    """Hamming-windowed magnitude spectrum of one frame."""
    frame = np.asarray(frame, dtype=np.float64)
    nfft = nfft or next_pow2(len(frame))
    return fft_power(frame * hamming_window(len(frame)), nfft, sample_rate_hz)


def assemble_paa_frame(
    frame: np.ndarray,
    prev_spectrum: Spectrum | None,
    sample_rate_hz: float,
    params: FeatureParams = DEFAULT_PARAMS,
    spectrum: Spectrum | None = None,
) -> np.ndarray:
    """The 34 pAA LLDs of one frame, in PAA_COLUMNS order."""
    spectrum = spectrum or frame_spectrum(frame, sample_rate_hz)
    stats = stft_stats(spectrum, prev_spectrum, params.rolloff_fraction)
    chroma = chroma12(spectrum)
    return np.concatenate((
        [zcr(frame), energy(frame), energy_entropy(frame, params.energy_blocks)],
        stats,
        mfcc(spectrum, PAA_MELS, PAA_MFCC, params.mel_area_normalize),
        chroma,
        [chroma_deviation(chroma)],
    ))


def assemble_l193_frame(
    frame: np.ndarray,
    sample_rate_hz: float,
    params: FeatureParams = DEFAULT_PARAMS,
    spectrum: Spectrum | None = None,
) -> np.ndarray:
    """The 193 L193 LLDs of one frame, in L193_COLUMNS order."""
    spectrum = spectrum or frame_spectrum(frame, sample_rate_hz)
    chroma = chroma12(spectrum)
    return np.concatenate((
        mfcc(spectrum, L193_MELS, L193_MFCC, params.mel_area_normalize),
        chroma,
        mel_energies(spectrum, L193_MELS, params.mel_area_normalize),
        spectral_contrast(spectrum, params.contrast_bands, params.contrast_alpha,
                          params.contrast_first_edge_hz),
        tonnetz6(chroma),
    ))


def extract_paa(clip: AudioClip, params: FeatureParams = DEFAULT_PARAMS) -> FrameMatrix:
    """Frame a clip and stack its pAA LLDs into an (n_frames, 34) matrix.

    Frames are processed in order because spectral flux needs the previous
    frame's spectrum.
    """
    win, hop, nfft = params.frame_sizes(clip.sample_rate_hz)
    rows = []
    prev = None
    for frame in frame_signal(clip.samples, win, hop):
        spectrum = frame_spectrum(frame, clip.sample_rate_hz, nfft)
        rows.append(assemble_paa_frame(frame, prev, clip.sample_rate_hz, params, spectrum))
        prev = spectrum
    return FrameMatrix(np.array(rows), params.hop_s, params.win_s, PAA_COLUMNS, "P34")


def extract_l193(clip: AudioClip, params: FeatureParams = DEFAULT_PARAMS) -> FrameMatrix:
    """Frame a clip and stack its L193 LLDs into an (n_frames, 193) matrix."""
    win, hop, nfft = params.frame_sizes(clip.sample_rate_hz)
    rows = [
        assemble_l193_frame(frame, clip.sample_rate_hz, params,
                            frame_spectrum(frame, clip.sample_rate_hz, nfft))
        for frame in frame_signal(clip.samples, win, hop)
    ]
    return FrameMatrix(np.array(rows), params.hop_s, params.win_s, L193_COLUMNS, "L193")
