"""Exception types raised across the package."""


class RcdetError(Exception):
    """Base class for all library errors."""


class BehindCamera(RcdetError):
    """A point (or every corner of a box) lies behind the camera plane."""


class DegenerateBox(RcdetError):
    """A box operation is undefined, e.g. a zero-area enclosing box in GIoU."""


class InvalidDetection(RcdetError):
    """A preliminary detection cannot produce a valid frustum."""


class DegenerateLine(RcdetError):
    """Least-squares slope is undefined (vertical line or single point)."""


class EmptyCluster(RcdetError):
    """A feature extractor was asked to summarize a cluster with no points."""


class MixedChannelCounts(RcdetError):
    """Feature vectors with different lengths were passed to the rasterizer."""


class DimensionMismatch(RcdetError):
    """Array shapes are inconsistent with the layer configuration."""


class EmptyBatch(RcdetError):
    """A loss was evaluated on a batch with zero objects (all losses divide by M)."""


class NoCoveredBin(RcdetError):
    """An orientation target covers no bin, so the residual loss is undefined."""


class ParseError(RcdetError):
    """A scene or detections file is malformed; message names line and field."""


class SchemaVersionMismatch(RcdetError):
    """File schema header does not match the version this library writes."""


class ResultMismatch(RcdetError):
    """The batched and naive association paths disagreed during a benchmark."""


class EmptyGroundTruth(RcdetError):
    """Evaluation was requested against a ground truth set with no boxes."""
