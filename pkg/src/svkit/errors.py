"""Exception hierarchy for the toolkit.

Every error raised on a contract violation derives from SvkitError so the
CLI can map them to exit code 2 (validation) or 1 (runtime) uniformly.
"""


class SvkitError(Exception):
    """Base class for all toolkit errors."""


# --- audio ---

class MissingFile(SvkitError):
    pass


class UnsupportedFormat(SvkitError):
    pass


class EmptyBuffer(SvkitError):
    pass


# --- augmentation ---

class InsufficientSpeakers(SvkitError):
    pass


class EmptyPool(SvkitError):
    pass


class SilentSignal(SvkitError):
    pass


class SilentNoise(SvkitError):
    pass


class RateMismatch(SvkitError):
    pass


class EmptyRIR(SvkitError):
    pass


# --- corpus ---

class UnreadableSource(SvkitError):
    pass


class MalformedRow(SvkitError):
    pass


class EmptyManifest(SvkitError):
    pass


class BadRatios(SvkitError):
    pass


class InsufficientUtterances(SvkitError):
    pass


class NotEnoughDistinctPairs(SvkitError):
    pass


# --- scoring ---

class BadMagic(SvkitError):
    pass


class DimMismatch(SvkitError):
    pass


class TruncatedFile(SvkitError):
    pass


class ZeroVector(SvkitError):
    pass


class LengthMismatch(SvkitError):
    pass


class DegenerateCohort(SvkitError):
    pass


class UnknownId(SvkitError):
    pass


class MissingClass(SvkitError):
    pass


# --- trainer ---

class DegenerateBatch(SvkitError):
    pass


class NonFiniteLoss(SvkitError):
    pass
