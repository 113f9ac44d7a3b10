"""Exception hierarchy. CLI exit codes are attached to the three top-level families."""


class DRDGError(Exception):
    exit_code = 1


class ConfigError(DRDGError, ValueError):
    exit_code = 2


class DataError(DRDGError, ValueError):
    exit_code = 3


class DivergenceError(DRDGError, RuntimeError):
    """A training loss became non-finite."""

    exit_code = 4

    def __init__(self, term: str, value: float, step: int | None = None):
        self.term = term
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss term {term!r}{where}: {value}")


class ShapeMismatchError(DataError):
    def __init__(self, field: str, expected, got):
        self.field = field
        super().__init__(f"shape mismatch in {field}: expected {tuple(expected)}, got {tuple(got)}")


class RangeError(DataError):
    def __init__(self, field: str, lo, hi, got_min, got_max):
        self.field = field
        super().__init__(
            f"{field} values out of range [{lo}, {hi}]: min={got_min}, max={got_max}"
        )


class MissingFileError(DataError):
    pass


class SchemaError(DataError):
    pass
