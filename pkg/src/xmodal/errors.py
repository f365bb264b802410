"""Exception hierarchy shared by all modules."""


class XModalError(Exception):
    """Base class for every error raised by this package."""


class FormatError(XModalError):
    pass


class CorruptFile(XModalError):
    pass


class InvalidValues(XModalError):
    pass


class MissingArtifact(XModalError):
    def __init__(self, message, pair_id=None):
        super().__init__(message)
        self.pair_id = pair_id


class DuplicateId(XModalError):
    pass


class InvalidConfig(XModalError):
    pass


class InvalidDataset(XModalError):
    pass


class ShapeError(XModalError):
    pass


class InvalidCache(XModalError):
    pass


class InvalidBatch(XModalError):
    pass


class InvalidMetric(XModalError):
    pass


class NumericalFailure(XModalError):
    pass


class EmptyIndex(XModalError):
    pass


class InvalidGroundTruth(XModalError):
    pass


class InsufficientData(XModalError):
    pass
