"""Exception types shared across modules."""


class DataError(ValueError):
    """Input data is missing, inconsistent or out of policy."""


class SchemaError(DataError):
    pass


class FormatError(DataError):
    pass


class GapError(DataError):
    pass


class UsageError(ValueError):
    """An operation was called with arguments outside its contract."""
