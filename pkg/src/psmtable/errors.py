"""Exception hierarchy for the table system.

Every error carries a stable ``name`` (its class name) so that other
surfaces (CLI, foreign-language bindings) can report the condition
without depending on Python exception identity.
"""


class PsmError(Exception):
    """Base class for all table-system errors."""

    @property
    def name(self) -> str:
        return type(self).__name__


# table-core
class AlreadyExists(PsmError):
    pass


class InvalidDesc(PsmError):
    pass


class LockHeld(PsmError):
    pass


class NotATable(PsmError):
    pass


class CorruptDescriptor(PsmError):
    pass


class RowOutOfRange(PsmError):
    pass


class TypeMismatch(PsmError):
    pass


class ShapeMismatch(PsmError):
    pass


class WrongMode(PsmError):
    pass


class UnknownColumn(PsmError):
    pass


class CellNeverWritten(PsmError):
    pass


class IoFailed(PsmError):
    pass


# tiled manager
class UnsupportedShape(PsmError):
    pass


# communicator
class CommError(PsmError):
    pass


class RendezvousTimeout(CommError):
    pass


class EnvMalformed(CommError):
    pass


class PeerLost(CommError):
    pass


class PayloadTooLarge(CommError):
    pass


# parallel segment manager
class DescMismatch(PsmError):
    pass


class RewriteUnsupported(PsmError):
    pass


class CoverageGap(PsmError):
    pass


class ShapeConflict(PsmError):
    pass


class OverlapError(PsmError):
    pass


class IndexCorrupt(PsmError):
    pass


class UnsupportedOperation(PsmError):
    def __init__(self, feature: str):
        super().__init__(feature)
        self.feature = feature
