"""Exception hierarchy shared by every kernelforge module."""


class KernelForgeError(Exception):
    """Base class for all library errors."""


class DimensionError(KernelForgeError, IndexError):
    """A base kernel refers to an input dimension the data does not have."""

    def __init__(self, leaf, n_dims):
        self.leaf = leaf
        self.n_dims = n_dims
        super().__init__(
            f"kernel leaf {leaf} reads dimension {leaf.dim + 1} "
            f"but the inputs only have {n_dims} dimension(s)"
        )


class ParamLengthError(KernelForgeError, ValueError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"parameter vector has length {actual}, expected {expected}")


class ExprSyntaxError(KernelForgeError, ValueError):
    """Malformed kernel expression text."""

    def __init__(self, message, text, pos, expected=()):
        self.text = text
        self.pos = pos
        self.line = text.count("\n", 0, pos) + 1
        self.column = pos - (text.rfind("\n", 0, pos) + 1) + 1
        self.expected = tuple(expected)
        detail = f"{message} at line {self.line}, column {self.column}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class ConditioningError(KernelForgeError, ArithmeticError):
    """Cholesky factorization failed even at the largest allowed jitter."""

    def __init__(self, message, expr=None):
        self.expr = expr
        if expr is not None:
            message = f"{message} [kernel: {expr}]"
        super().__init__(message)


class DataError(KernelForgeError, ValueError):
    """Input data could not be read or failed validation."""
