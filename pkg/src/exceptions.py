"""Exception hierarchy shared by the detector modules."""


class DetectorError(Exception):
    """Base class for every error raised by the library."""


class IngestError(DetectorError):
    """Raised when a response or dataset line cannot be turned into records."""


class DomainError(DetectorError, ValueError):
    """Raised when an input lies outside the domain of an operation."""


class TrainError(DetectorError):
    """Raised when WEPR training cannot produce a usable model."""


class SplitError(DetectorError):
    """Raised when a grouped train/test split is impossible."""


class MetricError(DetectorError):
    """Raised when a ranking metric is undefined for the given labels."""


class JudgeError(DetectorError):
    """Raised when a judge could not produce a label."""


class JudgeTransportError(JudgeError):
    """Raised when the judge endpoint could not be reached."""
