"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters: configuration problems (bad widths, unknown config keys), data
problems (malformed files, duplicate rows), and numeric failures
(non-finite values during evaluation or training).
"""


class ConfigError(ValueError):
    """Invalid configuration: shapes, widths, unknown keys, bad presets."""


class DataError(ValueError):
    """Malformed or inconsistent input data (CSV parse errors, duplicates)."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value.

    Carries the name of the primitive or pipeline stage that failed.
    """

    def __init__(self, where: str, detail: str = ""):
        self.where = where
        msg = f"non-finite value in '{where}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
