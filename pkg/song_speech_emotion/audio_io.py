"""A module for decoding PCM WAV files into mono floating-point clips."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import os
import struct
import warnings

import numpy as np
from scipy.io import wavfile

from . import SongSpeechEmotionError

logger = logging.getLogger(__name__)

SUPPORTED_BITS = (16, 24)
SUPPORTED_CHANNELS = (1, 2)

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioLoadError(SongSpeechEmotionError, OSError):
    """Raised when a WAV file cannot be decoded.

    Attributes:
        path: The file that failed to load.
        cause: A short description of what is wrong with it.
    """

    def __init__(self, path: str | os.PathLike, cause: str):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"{self.path}: {cause}")

    def __reduce__(self):
        return type(self), (self.path, self.cause)


@dataclass(frozen=True)
class AudioClip:
    """A decoded mono waveform.

    Attributes:
        samples: Float64 amplitudes in [-1, 1].
        sample_rate_hz: The sample rate read from the file header.
        source_path: The file the clip was decoded from, empty for
            synthetic clips.
    """

    samples: np.ndarray
    sample_rate_hz: int
    source_path: str = ""

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @classmethod
    def from_samples(
        cls,
        samples: np.ndarray,
        sample_rate_hz: int,
        source_path: str = "",
    ) -> AudioClip:
        """Build a clip from an in-memory signal (tests, decimation)."""
        return cls(np.asarray(samples, dtype=np.float64), int(sample_rate_hz), source_path)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class _WavHeader:
    format_tag: int
    channels: int
    sample_rate_hz: int
    bits_per_sample: int
    data_offset: int
    data_size: int


def _read_header(path: str, blob: bytes) -> _WavHeader:
    """Walk the RIFF chunks and return the format and data chunk layout."""
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise AudioLoadError(path, "not a RIFF/WAVE file")

    fmt = None
    offset = 12
    while offset + 8 <= len(blob):
        chunk_id = blob[offset:offset + 4]
        (chunk_size,) = struct.unpack("<I", blob[offset + 4:offset + 8])
        body = offset + 8

        if chunk_id == b"fmt ":
            if chunk_size < 16 or body + 16 > len(blob):
                raise AudioLoadError(path, "truncated fmt chunk")
            format_tag, channels, rate, _, _, bits = struct.unpack(
                "<HHIIHH", blob[body:body + 16]
            )
            if format_tag == _WAVE_FORMAT_EXTENSIBLE and chunk_size >= 40:
                # The sub-format GUID starts with the real format tag
                (format_tag,) = struct.unpack("<H", blob[body + 24:body + 26])
            fmt = (format_tag, channels, rate, bits)
        elif chunk_id == b"data":
            if fmt is None:
                raise AudioLoadError(path, "data chunk before fmt chunk")
            if body + chunk_size > len(blob):
                raise AudioLoadError(
                    path,
                    f"truncated data chunk ({len(blob) - body} of {chunk_size} bytes)",
                )
            return _WavHeader(*fmt, data_offset=body, data_size=chunk_size)

        offset = body + chunk_size + (chunk_size & 1)

    raise AudioLoadError(path, "no data chunk")


def load_wav(path: str | os.PathLike) -> AudioClip:
    """Decode a PCM WAV file into a normalized mono clip.

    Integer samples are divided by 2^(bits-1); stereo is reduced to mono by
    the per-sample mean of both channels.

    Args:
        path: The WAV file to read.

    Returns:
        The decoded AudioClip.

    Raises:
        AudioLoadError: If the file is missing, not PCM, has an unsupported
            bit depth or channel count, or its data chunk is truncated.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise AudioLoadError(path, "file does not exist")

    with open(path, "rb") as handle:
        blob = handle.read()
    header = _read_header(path, blob)

    if header.format_tag != _WAVE_FORMAT_PCM:
        raise AudioLoadError(path, f"unsupported codec (format tag {header.format_tag:#06x}), only PCM")
    if header.bits_per_sample not in SUPPORTED_BITS:
        raise AudioLoadError(path, f"unsupported bit depth {header.bits_per_sample}")
    if header.channels not in SUPPORTED_CHANNELS:
        raise AudioLoadError(path, f"unsupported channel count {header.channels}")

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            sample_rate, data = wavfile.read(path, mmap=False)
    except (ValueError, wavfile.WavFileWarning) as error:
        raise AudioLoadError(path, str(error)) from error

    if data.size == 0:
        raise AudioLoadError(path, "empty data chunk")

    # 24-bit PCM comes back left-justified in int32
    full_scale = 2.0 ** (8 * data.dtype.itemsize - 1)
    samples = data.astype(np.float64) / full_scale
    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    logger.debug("loaded %s: %d samples at %d Hz", path, len(samples), sample_rate)
    return AudioClip(samples, int(sample_rate), path)


def write_wav(path: str | os.PathLike, clip: AudioClip, bits: int = 16) -> None:
    """Write a clip as little-endian mono PCM.

    Samples are clipped to [-1, 1] and quantized with
    round(x * (2^(bits-1) - 1)).
    """
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {bits}")

    peak = 2 ** (bits - 1) - 1
    ints = np.round(np.clip(clip.samples, -1.0, 1.0) * peak).astype("<i4")
    if bits == 16:
        payload = ints.astype("<i2").tobytes()
    else:
        payload = ints.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()

    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload) + (len(payload) & 1), b"WAVE",
        b"fmt ", 16, _WAVE_FORMAT_PCM, 1, clip.sample_rate_hz,
        clip.sample_rate_hz * block_align, block_align, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload)
        if len(payload) & 1:
            handle.write(b"\x00")
