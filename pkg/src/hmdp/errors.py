"""Exception types shared across the package."""


class HmdpError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(HmdpError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class ValidationError(HmdpError):
    """A model failed structural validation; ``diagnostics`` lists every problem."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class NotWellDefined(HmdpError):
    pass


class GraphChange(HmdpError):
    pass


class EngineError(HmdpError):
    """Numerical engine failure (mapped to exit code 2 by the CLI)."""


class DivergentReward(EngineError):
    pass


class SuitabilityViolation(EngineError):
    pass


class CoverageGap(EngineError):
    pass


class CapExceeded(EngineError):
    pass


class IterationCapExceeded(EngineError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
