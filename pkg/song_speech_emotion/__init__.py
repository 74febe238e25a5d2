"""Song and speech emotion recognition: feature sets, classifiers and the
cross-validated experiment grid."""


class SongSpeechEmotionError(Exception):
    """Base class for all errors raised by this package."""
