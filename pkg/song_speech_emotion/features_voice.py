"""Voice-quality and source/filter LLDs for the 23-feature GeMAPS-style set."""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from .audio_io import AudioClip
from .dsp_core import (
    FrameMatrix,
    SilentFrameError,
    Spectrum,
    autocorr,
    decimate,
    frame_signal,
    hamming_window,
    lpc,
    pre_emphasis,
)
from .features_spectral import (
    DEFAULT_PARAMS,
    LOG_FLOOR,
    PAA_MELS,
    FeatureParams,
    frame_spectrum,
    mfcc,
    spectral_flux,
)

logger = logging.getLogger(__name__)

HNR_LIMIT_DB = 60.0
FORMANT_MIN_HZ = 90.0
FORMANT_MAX_HZ = 5500.0
FORMANT_MAX_BW_HZ = 600.0
FALLBACK_LPC_ORDER = 10

GEMAPS_COLUMNS = (
    "intensity_db", "alpha_ratio_db", "hammarberg_db", "slope_0_500",
    "slope_500_1500", "spectral_flux", "mfcc_1", "mfcc_2", "mfcc_3", "mfcc_4",
    "f0_hz", "jitter", "shimmer", "hnr_db", "h1_h2_db", "h1_a3_db",
    "f1_hz", "f1_bw_hz", "f1_amp_db", "f2_hz", "f2_amp_db", "f3_hz", "f3_amp_db",
)


class F0Estimate(NamedTuple):
    f0_hz: float
    voiced: bool
    peak: float = 0.0


class Perturbation(NamedTuple):
    jitter: float
    shimmer: float
    sufficient: bool


class BandMeasures(NamedTuple):
    intensity_db: float
    alpha_ratio_db: float
    hammarberg_db: float
    slope_0_500: float
    slope_500_1500: float


class HarmonicDiffs(NamedTuple):
    h1_h2_db: float
    h1_a3_db: float
    voiced: bool


class Formants(NamedTuple):
    f1_hz: float
    f1_bw_hz: float
    f1_amp_db: float
    f2_hz: float
    f2_amp_db: float
    f3_hz: float
    f3_amp_db: float
    missing: bool


NO_FORMANTS = Formants(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, True)


def f0_autocorrelation(
    frame: np.ndarray,
    fs: float,
    f0_min: float = 60.0,
    f0_max: float = 600.0,
    voicing_threshold: float = 0.45,
    silence_floor: float = 1e-10,
) -> F0Estimate:
    """Pick the pitch lag with the highest r(tau)/r(0) in [fs/f0_max, fs/f0_min].

    The longest lag is capped by the frame length. The peak lag is refined
    by parabolic interpolation. Unvoiced frames return (0, False).
    """
    frame = np.asarray(frame, dtype=np.float64)
    lag_min = int(np.ceil(fs / f0_max))
    lag_max = min(int(np.floor(fs / f0_min)), len(frame) - 1)
    if lag_min > lag_max:
        return F0Estimate(0.0, False)

    r = autocorr(frame, lag_max)
    if r[0] <= silence_floor:
        return F0Estimate(0.0, False)

    normalized = r / r[0]
    lag = lag_min + int(np.argmax(normalized[lag_min:lag_max + 1]))
    peak = float(normalized[lag])
    if peak < voicing_threshold:
        return F0Estimate(0.0, False, peak)

    offset = 0.0
    if lag_min < lag < lag_max:
        left, centre, right = normalized[lag - 1:lag + 2]
        curvature = left - 2 * centre + right
        if curvature < 0:
            offset = 0.5 * (left - right) / curvature
    f0 = float(np.clip(fs / (lag + offset), f0_min, f0_max))
    return F0Estimate(f0, True, peak)


def find_period_peaks(samples: np.ndarray, fs: float, f0_hz: float) -> np.ndarray:
    """Locate one waveform peak per pitch period.

    The first peak is the maximum of the first period; each following peak
    is the maximum within 0.75-1.25 periods after the previous one. Picking
    stops when the next search window would run past the signal.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if f0_hz <= 0:
        return np.array([], dtype=int)
    period = fs / f0_hz
    first_span = int(round(period))
    if len(samples) < first_span or first_span < 1:
        return np.array([], dtype=int)

    peaks = [int(np.argmax(samples[:first_span]))]
    low_offset = int(round(0.75 * period))
    high_offset = int(round(1.25 * period))
    while peaks[-1] + high_offset < len(samples):
        low = peaks[-1] + low_offset
        high = peaks[-1] + high_offset + 1
        peaks.append(low + int(np.argmax(samples[low:high])))
    return np.array(peaks, dtype=int)


def jitter_shimmer_from_peaks(samples: np.ndarray, peaks: np.ndarray) -> Perturbation:
    """Local jitter and shimmer from per-period peak positions.

    Fewer than 3 periods give (0, 0) with the insufficient flag.
    """
    periods = np.diff(peaks).astype(np.float64)
    if len(periods) < 3:
        return Perturbation(0.0, 0.0, False)

    jitter = float(np.mean(np.abs(np.diff(periods))) / np.mean(periods))
    amplitudes = np.asarray(samples, dtype=np.float64)[peaks]
    mean_amplitude = np.mean(amplitudes)
    shimmer = float(np.mean(np.abs(np.diff(amplitudes))) / mean_amplitude) if mean_amplitude > 0 else 0.0
    return Perturbation(jitter, shimmer, True)


def jitter_shimmer(samples_voiced_region: np.ndarray, fs: float, f0_track) -> Perturbation:
    """Jitter and shimmer of one voiced region, seeded by its F0 track.

    Args:
        samples_voiced_region: The waveform of a voiced stretch.
        fs: Its sample rate.
        f0_track: A scalar F0 or a per-frame track; the median of the
            voiced (positive) entries seeds the period search.
    """
    track = np.atleast_1d(np.asarray(f0_track, dtype=np.float64))
    voiced = track[track > 0]
    if voiced.size == 0:
        return Perturbation(0.0, 0.0, False)
    peaks = find_period_peaks(samples_voiced_region, fs, float(np.median(voiced)))
    return jitter_shimmer_from_peaks(samples_voiced_region, peaks)


def hnr_from_correlation(r_hat: float) -> float:
    """10 log10(r / (1 - r)) with r clamped to [1e-6, 1 - 1e-6], result to +-60 dB."""
    r = float(np.clip(r_hat, 1e-6, 1.0 - 1e-6))
    return float(np.clip(10.0 * np.log10(r / (1.0 - r)), -HNR_LIMIT_DB, HNR_LIMIT_DB))


def hnr(frame: np.ndarray, fs: float, f0_hz: float) -> float:
    """Harmonics-to-noise ratio in dB at the pitch lag.

    The correlation at the lag is normalized by the energies of the two
    overlapping segments. Unvoiced frames return -60 dB.
    """
    if f0_hz <= 0:
        return -HNR_LIMIT_DB
    frame = np.asarray(frame, dtype=np.float64)
    lag = int(round(fs / f0_hz))
    if lag <= 0 or lag >= len(frame):
        return -HNR_LIMIT_DB
    head, tail = frame[:-lag], frame[lag:]
    denominator = np.sqrt(np.dot(head, head) * np.dot(tail, tail))
    if denominator <= 0:
        return -HNR_LIMIT_DB
    return hnr_from_correlation(np.dot(head, tail) / denominator)


def _band(spectrum: Spectrum, low: float, high: float) -> np.ndarray:
    f = spectrum.frequencies
    return (f >= low) & (f < high)


def _slope(spectrum: Spectrum, low: float, high: float) -> float:
    in_band = _band(spectrum, low, high)
    if np.count_nonzero(in_band) < 2:
        return 0.0
    level_db = 20.0 * np.log10(spectrum.magnitudes[in_band] + LOG_FLOOR)
    slope, _ = np.polyfit(spectrum.frequencies[in_band], level_db, 1)
    return float(slope)


def _band_max(spectrum: Spectrum, low: float, high: float) -> float:
    in_band = _band(spectrum, low, high)
    return float(spectrum.magnitudes[in_band].max()) if in_band.any() else 0.0


def band_measures(spectrum: Spectrum) -> BandMeasures:
    """Intensity, alpha ratio, Hammarberg index and the two spectral slopes.

    Bands are half-open [low, high); slopes are in dB per Hz.
    """
    power = spectrum.power
    low_energy = power[_band(spectrum, 50.0, 1000.0)].sum()
    high_energy = power[_band(spectrum, 1000.0, 5000.0)].sum()
    return BandMeasures(
        intensity_db=float(10.0 * np.log10(power.sum() + LOG_FLOOR)),
        alpha_ratio_db=float(10.0 * np.log10((low_energy + LOG_FLOOR) / (high_energy + LOG_FLOOR))),
        hammarberg_db=float(20.0 * np.log10(
            (_band_max(spectrum, 0.0, 2000.0) + LOG_FLOOR)
            / (_band_max(spectrum, 2000.0, 5000.0) + LOG_FLOOR)
        )),
        slope_0_500=_slope(spectrum, 0.0, 500.0),
        slope_500_1500=_slope(spectrum, 500.0, 1500.0),
    )


def _peak_near(spectrum: Spectrum, centre: float, half_width: float) -> float:
    f = spectrum.frequencies
    near = (f >= centre - half_width) & (f <= centre + half_width)
    return float(spectrum.magnitudes[near].max()) if near.any() else 0.0


def harmonic_diffs(spectrum: Spectrum, f0_hz: float, f3_hz: float) -> HarmonicDiffs:
    """H1-H2 and H1-A3 level differences in dB.

    H1 and H2 are the peaks within f0/4 of f0 and 2 f0; A3 is the peak
    within f0/2 of F3. Unvoiced frames give zeros; a missing F3 gives H1-A3 = 0.
    """
    if f0_hz <= 0:
        return HarmonicDiffs(0.0, 0.0, False)
    h1 = _peak_near(spectrum, f0_hz, f0_hz / 4)
    h2 = _peak_near(spectrum, 2 * f0_hz, f0_hz / 4)
    h1_h2 = 20.0 * np.log10((h1 + LOG_FLOOR) / (h2 + LOG_FLOOR))
    h1_a3 = 0.0
    if f3_hz > 0:
        a3 = _peak_near(spectrum, f3_hz, f0_hz / 2)
        h1_a3 = 20.0 * np.log10((h1 + LOG_FLOOR) / (a3 + LOG_FLOOR))
    return HarmonicDiffs(float(h1_h2), float(h1_a3), True)


def _stable_lpc(windowed: np.ndarray, order: int):
    coefficients, gain = lpc(windowed, order)
    roots = np.roots(np.concatenate(([1.0], coefficients)))
    if np.any(np.abs(roots) >= 1.0):
        return None
    return coefficients, gain, roots


def formants(frame: np.ndarray, fs: float, order: int = 12) -> Formants:
    """F1-F3 from the roots of the LPC polynomial.

    Expects a frame of a signal already decimated (16 kHz) and
    pre-emphasized. Candidates need 90-5500 Hz and a bandwidth under
    600 Hz. An unstable order-12 fit is retried at order 10; missing
    formants are reported as zeros with the `missing` flag set.
    """
    frame = np.asarray(frame, dtype=np.float64)
    windowed = frame * hamming_window(len(frame))
    try:
        fit = _stable_lpc(windowed, order)
        if fit is None and order != FALLBACK_LPC_ORDER:
            logger.debug("unstable LPC at order %d, retrying at %d", order, FALLBACK_LPC_ORDER)
            fit = _stable_lpc(windowed, FALLBACK_LPC_ORDER)
    except SilentFrameError:
        return NO_FORMANTS
    if fit is None:
        return NO_FORMANTS

    coefficients, gain, roots = fit
    roots = roots[roots.imag > 0]
    freqs = np.angle(roots) * fs / (2 * np.pi)
    bandwidths = -(fs / np.pi) * np.log(np.abs(roots))
    keep = (freqs >= FORMANT_MIN_HZ) & (freqs <= FORMANT_MAX_HZ) & (bandwidths < FORMANT_MAX_BW_HZ)
    order_by_freq = np.argsort(freqs[keep])
    freqs = freqs[keep][order_by_freq][:3]
    bandwidths = bandwidths[keep][order_by_freq][:3]

    # LPC envelope sqrt(gain) / |A(e^jw)| at each formant
    k = np.arange(1, len(coefficients) + 1)
    amplitudes = []
    for f in freqs:
        response = 1.0 + np.sum(coefficients * np.exp(-2j * np.pi * f / fs * k))
        level = np.sqrt(gain) / max(abs(response), LOG_FLOOR)
        amplitudes.append(20.0 * np.log10(max(level, LOG_FLOOR)))

    found = len(freqs)
    values = [0.0] * 7
    if found >= 1:
        values[0:3] = [freqs[0], bandwidths[0], amplitudes[0]]
    if found >= 2:
        values[3:5] = [freqs[1], amplitudes[1]]
    if found >= 3:
        values[5:7] = [freqs[2], amplitudes[2]]
    return Formants(*(float(v) for v in values), missing=found < 3)


def assemble_gemaps_frame(
    bands: BandMeasures,
    flux: float,
    mfcc4: np.ndarray,
    f0: F0Estimate,
    perturbation: Perturbation,
    hnr_db: float,
    harmonics: HarmonicDiffs,
    formant_values: Formants,
) -> np.ndarray:
    """The 23 GeMAPS LLDs of one frame, in GEMAPS_COLUMNS order."""
    return np.concatenate((
        bands,
        [flux],
        np.asarray(mfcc4)[:4],
        [f0.f0_hz, perturbation.jitter, perturbation.shimmer, hnr_db,
         harmonics.h1_h2_db, harmonics.h1_a3_db],
        formant_values[:7],
    ))


def _voiced_regions(voiced: np.ndarray) -> list[tuple[int, int]]:
    """Runs of consecutive voiced frames as (first, last) inclusive pairs."""
    regions = []
    start = None
    for index, flag in enumerate(voiced):
        if flag and start is None:
            start = index
        elif not flag and start is not None:
            regions.append((start, index - 1))
            start = None
    if start is not None:
        regions.append((start, len(voiced) - 1))
    return regions


def _frame_perturbations(
    samples: np.ndarray,
    fs: float,
    f0_track: np.ndarray,
    win: int,
    hop: int,
    params: FeatureParams,
) -> list[Perturbation]:
    """Per-frame jitter/shimmer from the periods of each voiced region."""
    result = [Perturbation(0.0, 0.0, False)] * len(f0_track)
    half_span = params.jitter_window_s * fs / 2

    for first, last in _voiced_regions(f0_track > 0):
        start, stop = first * hop, min(last * hop + win, len(samples))
        region = samples[start:stop]
        seed = float(np.median(f0_track[first:last + 1]))
        peaks = find_period_peaks(region, fs, seed) + start

        for index in range(first, last + 1):
            centre = index * hop + win / 2
            local = peaks[(peaks >= centre - half_span) & (peaks <= centre + half_span)]
            result[index] = jitter_shimmer_from_peaks(samples, local)
            if not result[index].sufficient:
                logger.debug("frame %d: insufficient periods for jitter/shimmer", index)
    return result


def extract_gemaps(clip: AudioClip, params: FeatureParams = DEFAULT_PARAMS) -> FrameMatrix:
    """Frame a clip and stack its GeMAPS LLDs into an (n_frames, 23) matrix.

    Spectral and source measures run at the clip rate; formants run on a
    decimated, pre-emphasized copy framed at the same times.
    """
    fs = clip.sample_rate_hz
    win, hop, nfft = params.frame_sizes(fs)
    frames = frame_signal(clip.samples, win, hop)
    n_frames = len(frames)

    factor = max(1, int(round(fs / params.formant_rate_hz)))
    reduced = decimate(clip, factor)
    emphasized = pre_emphasis(reduced.samples, params.pre_emphasis)
    win_d, hop_d, _ = params.frame_sizes(reduced.sample_rate_hz)
    needed = (n_frames - 1) * hop_d + win_d
    if len(emphasized) < needed:
        emphasized = np.concatenate((emphasized, np.zeros(needed - len(emphasized))))

    estimates = [
        f0_autocorrelation(frame, fs, params.f0_min_hz, params.f0_max_hz,
                           params.voicing_threshold, params.silence_floor)
        for frame in frames
    ]
    f0_track = np.array([estimate.f0_hz for estimate in estimates])
    perturbations = _frame_perturbations(clip.samples, fs, f0_track, win, hop, params)

    rows = []
    prev = None
    for index, frame in enumerate(frames):
        spectrum = frame_spectrum(frame, fs, nfft)
        f0 = estimates[index]
        formant_values = formants(
            emphasized[index * hop_d:index * hop_d + win_d],
            reduced.sample_rate_hz,
            params.lpc_order,
        )
        rows.append(assemble_gemaps_frame(
            band_measures(spectrum),
            spectral_flux(spectrum, prev),
            mfcc(spectrum, PAA_MELS, 4, params.mel_area_normalize),
            f0,
            perturbations[index],
            hnr(frame, fs, f0.f0_hz),
            harmonic_diffs(spectrum, f0.f0_hz, formant_values.f3_hz),
            formant_values,
        ))
        prev = spectrum

    return FrameMatrix(np.array(rows), params.hop_s, params.win_s, GEMAPS_COLUMNS, "G23")
