"""RAVDESS file naming and corpus scanning.

A RAVDESS stem is seven hyphen-separated two-digit fields:
modality-vocal_channel-emotion-intensity-statement-repetition-actor,
e.g. 03-01-05-02-01-01-12 is audio-only speech, angry, strong, actor 12.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from pathlib import Path
import re

from . import SongSpeechEmotionError

logger = logging.getLogger(__name__)

TASKS = ("speech", "song")
VOCAL_CHANNELS = {1: "speech", 2: "song"}

SPEECH_EMOTIONS = ("neutral", "calm", "happy", "sad", "angry", "fearful", "disgust", "surprised")
SONG_EMOTIONS = SPEECH_EMOTIONS[:6]
EMOTIONS = {"speech": SPEECH_EMOTIONS, "song": SONG_EMOTIONS}

EXPECTED_COUNTS = {"speech": 1440, "song": 1012}
N_ACTORS = 24

_STEM = re.compile(r"^(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})$")


class RavdessNameError(SongSpeechEmotionError, ValueError):
    """Raised for a stem that does not follow the RAVDESS naming grammar."""


class CorpusError(SongSpeechEmotionError, OSError):
    """Raised when a corpus directory holds no usable utterances."""


@dataclass(frozen=True)
class UtteranceRecord:
    path: Path
    vocal_channel: str
    emotion_label: int
    actor_id: int
    intensity: int
    statement: int
    repetition: int
    modality: int = 3

    @property
    def utterance_id(self) -> str:
        return self.path.stem

    @property
    def emotion(self) -> str:
        return EMOTIONS[self.vocal_channel][self.emotion_label]


def class_names(task: str) -> tuple[str, ...]:
    if task not in EMOTIONS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    return EMOTIONS[task]


def parse_ravdess_name(filename: str | Path) -> UtteranceRecord:
    """Decode a RAVDESS file name into an UtteranceRecord.

    Raises:
        RavdessNameError: If the stem is malformed or a code is outside its range.
    """
    path = Path(filename)
    match = _STEM.match(path.stem)
    if match is None:
        raise RavdessNameError(f"{path.name}: expected 7 hyphen-separated 2-digit fields")
    modality, channel, emotion, intensity, statement, repetition, actor = (int(g) for g in match.groups())

    if modality not in (1, 2, 3):
        raise RavdessNameError(f"{path.name}: modality code {modality:02d} is not 01-03")
    if channel not in VOCAL_CHANNELS:
        raise RavdessNameError(f"{path.name}: vocal channel code {channel:02d} is not 01 (speech) or 02 (song)")
    task = VOCAL_CHANNELS[channel]
    if not 1 <= emotion <= len(EMOTIONS[task]):
        raise RavdessNameError(f"{path.name}: emotion code {emotion:02d} is not in the {task} inventory")
    if intensity not in (1, 2) or statement not in (1, 2) or repetition not in (1, 2):
        raise RavdessNameError(f"{path.name}: intensity, statement and repetition must be 01 or 02")
    if not 1 <= actor <= N_ACTORS:
        raise RavdessNameError(f"{path.name}: actor {actor:02d} is not 01-{N_ACTORS}")

    return UtteranceRecord(path, task, emotion - 1, actor, intensity, statement, repetition, modality)


def scan_corpus(root: str | Path, task: str) -> list[UtteranceRecord]:
    """List every .wav utterance of `task` under root, sorted by relative path.

    Malformed file names are skipped with a warning; a count different from
    the published corpus size is reported but not fatal.
    """
    class_names(task)
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")

    records = []
    for path in sorted(root.rglob("*.wav"), key=lambda p: p.relative_to(root).as_posix()):
        try:
            record = parse_ravdess_name(path)
        except RavdessNameError as error:
            logger.warning("skipping %s", error)
            continue
        if record.vocal_channel == task:
            records.append(record)

    if not records:
        raise CorpusError(f"no {task} utterances found under {root}")
    if len(records) != EXPECTED_COUNTS[task]:
        logger.warning("found %d %s utterances, RAVDESS has %d", len(records), task, EXPECTED_COUNTS[task])
    else:
        logger.info("found %d %s utterances", len(records), task)
    return records
