"""Exception hierarchy shared across the package.

Everything raised on purpose derives from :class:`PatchspotError`, so the
CLI can map library failures onto exit codes (2 for usage/data problems,
3 for numeric failures) without enumerating modules.
"""


class PatchspotError(Exception):
    """Base class for all errors raised by patchspot."""


class OutOfBounds(PatchspotError):
    """A requested patch crop extends past the slide image."""


class NegativeCount(PatchspotError):
    """Raw expression counts contain a negative value."""


class EmptyInput(PatchspotError):
    """An operation that needs data received none."""


class ParseError(PatchspotError):
    """A manifest, CSV, or archive file is malformed or inconsistent."""


class ShapeMismatch(PatchspotError):
    """Array dimensions do not match the declared contract."""


class TooFewPairs(PatchspotError):
    """Not enough patch-spot pairs for the requested split or batch size."""


class KOutOfRange(PatchspotError):
    """Neighbor count K is outside [1, bank size]."""


class TOutOfRange(PatchspotError):
    """Top-gene cutoff T is outside [1, gene count]."""


class FingerprintMismatch(PatchspotError):
    """An embedding bank was built by a different checkpoint than the one supplied."""


class NonFiniteInput(PatchspotError):
    """A numeric routine received NaN or infinite values."""


class NonFiniteLoss(PatchspotError):
    """Training produced a NaN/Inf loss; carries the offending epoch and batch."""

    def __init__(self, message: str, epoch: int | None = None, batch_index: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
