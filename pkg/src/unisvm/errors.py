"""Exception types raised by the library."""


class UniSVMError(Exception):
    pass


class InputError(UniSVMError, ValueError):
    """Bad user input: unknown names, invalid parameters, shape mismatches."""


class ParseError(InputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(UniSVMError, ArithmeticError):
    """A factorization broke down or an iterate stopped being finite."""


class CapacityError(UniSVMError, MemoryError):
    """A dense kernel matrix would exceed the configured size cap."""
