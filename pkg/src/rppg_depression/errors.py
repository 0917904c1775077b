"""Exception hierarchy.

``DataError`` subclasses describe bad inputs (files, signals, matrices) and map
to exit code 2 in the CLI; ``UsageError`` maps to exit code 1.
"""


class RppgError(Exception):
    """Base class for all package errors."""


class UsageError(RppgError):
    pass


class DataError(RppgError, ValueError):
    pass


# ingest / synthesis
class MalformedManifest(DataError):
    pass


class DuplicateVideoId(MalformedManifest):
    pass


class ScoreOutOfRange(MalformedManifest):
    pass


class MalformedTrace(DataError):
    pass


class RaggedRegions(MalformedTrace):
    pass


class NonFiniteSample(MalformedTrace):
    pass


class InvalidConfig(DataError):
    pass


# signal processing
class TooShort(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class BandInvalid(DataError):
    pass


class ZeroMeanChannel(DataError):
    pass


class NoPeaks(DataError):
    pass


class InsufficientBeats(DataError):
    pass


# features / pipeline
class UnknownRegistryVersion(DataError):
    pass


class InsufficientSamples(DataError):
    pass


class EmptyPredictions(DataError):
    pass


# learning
class EmptyTrainingSet(DataError):
    pass


class DivergedTraining(DataError):
    pass


class RegistryMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class VideoSetMismatch(DataError):
    pass


class KeyMismatch(DataError):
    pass


# persistence
class UnsupportedFormatVersion(DataError):
    pass


class CorruptModelFile(DataError):
    pass
