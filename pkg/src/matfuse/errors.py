"""Typed errors raised across the package."""


class MatfuseError(Exception):
    """Base class for all package errors."""


class MissingCellParameter(MatfuseError):
    """A required _cell_length_* / _cell_angle_* tag is absent."""


class UnknownElement(MatfuseError):
    """Element symbol not present in the property table."""


class MalformedLoop(MatfuseError):
    """A CIF loop_ row does not match its declared columns."""


class EmptyStructure(MatfuseError):
    """CIF contained no atomic sites."""


class DegenerateCell(MatfuseError):
    """Cell parameters produce a (near-)zero volume."""


class EmptyGraph(MatfuseError):
    """Pooling requested over a graph with zero nodes."""


class EmptyCorpus(MatfuseError):
    """Vocabulary build over an empty corpus."""


class ShapeMismatch(MatfuseError):
    """Operands have incompatible shapes (both shapes in the message)."""


class NonScalarOutput(MatfuseError):
    """backward() called on a non-scalar tensor."""


class TooSmall(MatfuseError):
    """Dataset too small for the requested split fractions."""


class EmptySplit(MatfuseError):
    """Evaluation requested on an empty split."""


class NonFiniteLoss(MatfuseError):
    """Training loss became NaN/inf; carries the last good checkpoint path."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class ConfigError(MatfuseError):
    """Run configuration contains unknown keys or invalid values."""


class MissingArtifact(MatfuseError):
    """A referenced checkpoint/manifest/file does not exist."""
