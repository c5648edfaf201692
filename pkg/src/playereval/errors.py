"""Exception hierarchy shared across the package."""


class PlayerEvalError(Exception):
    """Base class for all errors raised by playereval."""


class EmptyConditioningSet(PlayerEvalError):
    pass


class EmptyData(PlayerEvalError):
    pass


class SingularSystem(PlayerEvalError):
    pass


class NonFinite(PlayerEvalError):
    pass


class DegeneratePlayer(PlayerEvalError):
    pass


class InsufficientPlayerData(PlayerEvalError):
    def __init__(self, player, count, message=None):
        self.player = player
        self.count = count
        super().__init__(message or
                         f"player {player} has {count} observation(s) and is missing "
                         f"from at least one training fold")


class FluctuationDiverged(PlayerEvalError):
    pass


class DegenerateEif(PlayerEvalError):
    pass


class DegenerateSe(PlayerEvalError):
    pass


class NonDiscreteDgp(PlayerEvalError):
    pass


class InvalidDgp(PlayerEvalError):
    pass


class MissingColumn(PlayerEvalError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"required column {column!r} not found")


class NonBinaryOutcome(PlayerEvalError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(f"row {row}: outcome value {value!r} is not binary")


class UnparseableValue(PlayerEvalError):
    def __init__(self, row, column, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")


class ConfigError(PlayerEvalError):
    """Invalid run configuration, schema or fixture reference."""
