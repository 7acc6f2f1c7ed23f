class NumericalError(ArithmeticError):
    """Raised when an iterative solver diverges or produces non-finite values."""
