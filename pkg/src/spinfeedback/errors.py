class ConfigError(ValueError):
    """Invalid configuration value.  ``field`` names the offending key when known."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = ""
        if field is not None:
            where = f"{field}: "
        if line is not None:
            where = f"line {line}: " + where
        super().__init__(where + message)


class NoiseClockError(RuntimeError):
    pass


class SessionAbort(RuntimeError):
    """A correction produced an invalid control value."""

    def __init__(self, message, cycle):
        self.cycle = cycle
        super().__init__(f"cycle {cycle}: {message}")


class SchemaError(ValueError):
    pass


class EmptySpectrumError(ValueError):
    pass
