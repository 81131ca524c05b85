"""Exception hierarchy for the calibration engine."""


class CalibrationError(Exception):
    """Base class for all errors raised by lanecal."""


class DegenerateSegment(CalibrationError):
    pass


class DegenerateVD(CalibrationError):
    pass


class CollinearPair(CalibrationError):
    pass


class UndefinedAngle(CalibrationError):
    pass


class EmptyInput(CalibrationError):
    pass


class RankDeficient(CalibrationError):
    pass


class TooFewSegments(CalibrationError):
    pass


class NoConsensus(CalibrationError):
    pass


class DimensionMismatch(CalibrationError):
    pass


class SingularInnovation(CalibrationError):
    pass


class NoInliers(CalibrationError):
    pass


class HorizonLine(CalibrationError):
    pass


class TangentSingularity(CalibrationError):
    pass


class TooFewBoundaries(CalibrationError):
    pass


class TooFewPairs(CalibrationError):
    pass


class NonConvergence(CalibrationError):
    pass


class NoPairs(CalibrationError):
    pass


class NonInvertibleHomography(CalibrationError):
    pass


class ConfigError(CalibrationError):
    pass


class FormatError(CalibrationError):
    """Malformed observation, intrinsics, trace or image file."""
