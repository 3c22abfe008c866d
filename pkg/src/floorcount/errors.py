"""Exception types shared across the toolkit."""


class FloorcountError(Exception):
    """Base class for all toolkit errors."""


class DataError(FloorcountError):
    """Input data could not be used (maps to CLI exit status 2)."""


class MalformedDocument(DataError):
    pass


class MissingField(DataError):
    def __init__(self, name, detail=""):
        self.name = name
        super().__init__(f"missing field {name!r}" + (f": {detail}" if detail else ""))


class InvalidValue(DataError):
    def __init__(self, name, value, detail=""):
        self.name = name
        self.value = value
        super().__init__(f"invalid value for {name!r}: {value!r}" + (f" ({detail})" if detail else ""))


class EmptyInput(DataError):
    pass


class EmptyCollection(EmptyInput):
    pass


class EmptyPlan(EmptyInput):
    pass


class EmptyDataset(EmptyInput):
    pass


class DegenerateRing(DataError):
    pass


class InvalidCrop(DataError):
    pass


class InvalidSummary(DataError):
    pass


class InvalidMatrix(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TooFewRuns(DataError):
    pass


class NonFiniteLoss(FloorcountError):
    def __init__(self, epoch, log):
        self.epoch = epoch
        self.log = log
        super().__init__(f"non-finite loss at epoch {epoch}")


class ConfigError(FloorcountError):
    """Bad or missing configuration; ``field`` is a dotted path like ``paths.footprints``."""

    def __init__(self, field, detail):
        self.field = field
        super().__init__(f"{field}: {detail}")
