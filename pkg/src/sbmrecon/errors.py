"""Exception types raised by the library.

Everything derives from :class:`SbmReconError` so callers can catch the
whole family; most also derive from :class:`ValueError` because they signal
bad inputs.
"""


class SbmReconError(Exception):
    pass


class NonSymmetricQ(SbmReconError, ValueError):
    pass


class DegreeNotUniform(SbmReconError, ValueError):
    pass


class NotReversible(SbmReconError, ValueError):
    pass


class EntriesOutOfRange(SbmReconError, ValueError):
    pass


class SingularNoise(SbmReconError, ValueError):
    pass


class MissingNoisyLabels(SbmReconError, ValueError):
    pass


class DepthExceeded(SbmReconError, ValueError):
    pass


class ZeroMass(SbmReconError, ArithmeticError):
    pass


class DegenerateLeafPrior(SbmReconError, ValueError):
    pass


class TooLarge(SbmReconError, ValueError):
    pass


class InvalidRange(SbmReconError, ValueError):
    pass


class OutOfRange(SbmReconError, ValueError):
    pass


class EmptyCollection(SbmReconError, ValueError):
    pass


class ProbabilityOverflow(SbmReconError, ValueError):
    pass


class DegenerateRadius(SbmReconError, ValueError):
    pass


class SingularP(SbmReconError, ValueError):
    pass


class RadiusTooSmall(SbmReconError, ValueError):
    pass


class ConfigInvalid(SbmReconError, ValueError):
    pass


class MissingCommunityRepresentative(SbmReconError):
    """Some community had no representative in the sampled vertex subset.

    ``fallback`` carries the noise matrix callers should use instead
    (the identity) and ``missing`` lists the communities without one.
    """

    def __init__(self, message, fallback=None, missing=()):
        super().__init__(message)
        self.fallback = fallback
        self.missing = tuple(missing)
