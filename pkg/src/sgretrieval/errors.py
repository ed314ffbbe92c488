"""Exception hierarchy shared by all engine modules.

Every error carries a distinct CLI exit code so shell pipelines can tell
failure classes apart without parsing stderr.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine failures."""

    exit_code = 1


class ConfigInvalid(EngineError):
    exit_code = 2


class IoFailure(EngineError):
    exit_code = 3


class MissingBlob(EngineError):
    exit_code = 4


class DimMismatch(EngineError):
    exit_code = 5


class InvariantViolation(EngineError):
    exit_code = 6


class ShapeMismatch(EngineError):
    exit_code = 7


class HeadsDoNotDivide(EngineError):
    exit_code = 8


class BackwardWithoutForward(EngineError):
    exit_code = 9


class MissingGrad(EngineError):
    exit_code = 10


class EmptyCaptions(EngineError):
    exit_code = 11


class MissingGroundTruth(EngineError):
    exit_code = 12


class LengthMismatch(EngineError):
    exit_code = 13


class TooFewValues(EngineError):
    exit_code = 14


class ScoreCoverageIncomplete(EngineError):
    exit_code = 15


class MissingEdgeEmbedding(EngineError):
    exit_code = 16


class EmptyGraph(EngineError):
    exit_code = 17


class ZeroVisualActivation(EngineError):
    exit_code = 18


class InsufficientPairs(EngineError):
    exit_code = 19


class EmptyIndex(EngineError):
    exit_code = 20


class InsufficientData(EngineError):
    exit_code = 21
