"""Exception hierarchy shared by every chainact module."""

from __future__ import annotations


class ChainActError(Exception):
    """Base class for all errors raised by this package."""


# action_core
class OutOfRange(ChainActError, ValueError):
    pass


class InvalidBin(ChainActError, ValueError):
    pass


# codecs
class NotRepresentable(ChainActError, ValueError):
    def __init__(self, button: str, reason: str = "outside the raw-token subset"):
        super().__init__(f"{button!r} is not representable: {reason}")
        self.button = button


class BadLength(ChainActError, ValueError):
    pass


class WrongGroup(ChainActError, ValueError):
    def __init__(self, position: int, token: int):
        super().__init__(f"token {token} at position {position} belongs to another group")
        self.position = position
        self.token = token


class UnknownToken(ChainActError, ValueError):
    pass


class GrammarError(ChainActError, ValueError):
    def __init__(self, position: int, expected: str, text: str = ""):
        super().__init__(f"at offset {position}: expected {expected} in {text!r}")
        self.position = position
        self.expected = expected


class UnknownKeyName(ChainActError, ValueError):
    pass


class NonNumericDelta(ChainActError, ValueError):
    pass


class UnknownVerb(ChainActError, ValueError):
    pass


class CoordinateOutOfFrame(ChainActError, ValueError):
    pass


class SpaceMismatch(ChainActError, ValueError):
    pass


# labeler
class GroundTruthMissing(ChainActError, ValueError):
    pass


class CoverageGap(ChainActError, ValueError):
    pass


# latent_vq
class EmptyCodebook(ChainActError, ValueError):
    pass


class NumericalOverflow(ChainActError, ArithmeticError):
    pass


class UntrainedModel(ChainActError, RuntimeError):
    pass


class InvalidCode(ChainActError, ValueError):
    pass


# minegrid
class UnsatisfiableTask(ChainActError, ValueError):
    pass


class NoPath(ChainActError, RuntimeError):
    pass


# policy
class UnknownSpace(ChainActError, KeyError):
    pass


class UnsupportedAbstraction(ChainActError, ValueError):
    pass


class DatasetKindMismatch(ChainActError, ValueError):
    pass


# harness
class ModeModelMismatch(ChainActError, ValueError):
    pass


class SuiteMismatch(ChainActError, ValueError):
    pass


# cli
class ConfigError(ChainActError, ValueError):
    pass
