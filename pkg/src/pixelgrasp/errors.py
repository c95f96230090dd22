"""Typed error hierarchy shared across the pipeline.

Every anticipated failure raises a subclass of PixelGraspError so callers
(and the CLI exit-code mapping) can distinguish bad data from bugs.
"""


class PixelGraspError(Exception):
    """Base class for all expected pipeline failures."""


# ---------------------------------------------------------------- parsing

class MissingHeaderField(PixelGraspError):
    pass


class PointCountMismatch(PixelGraspError):
    pass


class MalformedLine(PixelGraspError):
    def __init__(self, line_no, detail=""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {detail}" if detail else f"line {line_no}")


class TruncatedGroup(PixelGraspError):
    pass


class IndexOutOfRange(PixelGraspError):
    pass


# ------------------------------------------------------------- serialization

class BadMagic(PixelGraspError):
    pass


class LengthMismatch(PixelGraspError):
    pass


class CrcMismatch(PixelGraspError):
    pass


class VersionUnsupported(PixelGraspError):
    pass


class CountMismatch(PixelGraspError):
    pass


# ---------------------------------------------------------------- imaging

class AllPixelsInvalid(PixelGraspError):
    pass


class DegenerateRange(PixelGraspError):
    pass


class ImageTooSmall(PixelGraspError):
    pass


class DegenerateRect(PixelGraspError):
    pass


# ---------------------------------------------------------------- tensors

class ShapeMismatch(PixelGraspError):
    pass


class OddSpatialDims(PixelGraspError):
    pass


class NonScalarOutput(PixelGraspError):
    pass


class InvalidConfig(PixelGraspError):
    pass


# ------------------------------------------------------------- decode / sim

class NonPositiveDepth(PixelGraspError):
    pass


class EmptyMaps(PixelGraspError):
    pass


class EmptyDataset(PixelGraspError):
    pass


class PlacementFailed(PixelGraspError):
    pass


class EmptyTrials(PixelGraspError):
    pass


class MissingCheckpoint(PixelGraspError):
    pass
