"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of two operands are incompatible."""

    def __init__(self, message, shape_a=None, shape_b=None):
        if shape_a is not None or shape_b is not None:
            message = f"{message} (got {shape_a} and {shape_b})"
        super().__init__(message)
        self.shape_a = shape_a
        self.shape_b = shape_b


class SingularMatrixError(ValueError):
    """A triangular solve hit a zero (or sub-threshold) diagonal entry."""

    def __init__(self, column, detail=""):
        msg = f"singular upper-triangular matrix: zero pivot at column {column}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.column = column


class StructureError(ValueError):
    """A structured matrix violates the assumptions of a solver."""

    def __init__(self, message, block=None):
        if block is not None:
            message = f"{message} (block {block})"
        super().__init__(message)
        self.block = block


class ParseError(ValueError):
    """A text input could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ResidualError(ValueError):
    """A residual evaluation produced a non-finite or undefined value."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (residual index {index})"
        super().__init__(message)
        self.index = index
