"""Exception hierarchy.

Input problems derive from :class:`InputError` (CLI exit 1); outcomes where
no SKU can be recommended derive from :class:`NoFeasibleError` (CLI exit 2).
"""


class RightsizeError(Exception):
    pass


class InputError(RightsizeError, ValueError):
    pass


class NoFeasibleError(RightsizeError):
    pass


class MalformedCatalog(InputError):
    pass


class DuplicateSkuId(MalformedCatalog):
    pass


class EmptyCatalog(MalformedCatalog):
    pass


class FileTooLarge(InputError):
    pass


class NoCandidateSku(NoFeasibleError):
    pass


class MalformedRow(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownDimension(MalformedRow):
    pass


class EmptyTrace(InputError):
    pass


class GridMismatch(InputError):
    pass


class UnknownSku(InputError):
    pass


class UnknownGroup(InputError):
    pass


class TraceTooShort(InputError):
    pass


class IncompleteVector(InputError):
    pass


class EmptyGroupModel(InputError):
    pass


class WindowTooLong(InputError):
    pass


class NoFeasibleSku(NoFeasibleError):
    def __init__(self, message: str, binding: list[str] | None = None):
        self.binding = list(binding or [])
        super().__init__(message)
