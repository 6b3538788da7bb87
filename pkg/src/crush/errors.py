"""Exception types shared across the package."""


class CrushError(Exception):
    """Base class for errors raised by this package."""


class GraphFormatError(CrushError):
    """On-disk graph snapshot is missing, corrupt, or has the wrong version."""


class AnchorSkipped(CrushError):
    """The anchor cannot yield a positive sample (author has < 2 posts).

    Raised by the samplers so the training loop can skip the anchor and
    count it instead of aborting the phase.
    """


class CheckpointError(CrushError):
    """Checkpoint file is unreadable or its fingerprint does not match."""


class ConfigError(CrushError):
    """Invalid run configuration. Carries one message per offending field."""

    def __init__(self, field_errors):
        self.field_errors = list(field_errors)
        super().__init__("; ".join(self.field_errors))
