"""Exception hierarchy. The CLI reports ``type(exc).__name__`` as the error class."""


class CfpMelodyError(Exception):
    """Base class for every domain error raised by this package."""


class AudioReadError(CfpMelodyError):
    """The audio file could not be opened or read."""


class NotWavError(AudioReadError):
    """The file is not a RIFF/WAVE container."""


class UnsupportedEncodingError(AudioReadError):
    """The WAV container holds a sample encoding we do not decode."""


class EmptyAudioError(CfpMelodyError):
    pass


class AnnotationFormatError(CfpMelodyError):
    """Malformed or non-monotonic annotation file."""


class ManifestError(CfpMelodyError):
    pass


class ClipTooShortError(CfpMelodyError):
    pass


class ShapeError(CfpMelodyError):
    """Input arrays have the wrong shape or mismatched lengths."""


class ModelFormatError(CfpMelodyError):
    """Model file is truncated or its header is not recognised."""


class ModelVersionError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    """A layer in a model file does not have the expected shape."""


class DatasetError(CfpMelodyError):
    """Training data is empty or contains a single class."""


class DecodeModeError(CfpMelodyError):
    pass


class DumpFormatError(CfpMelodyError):
    pass
