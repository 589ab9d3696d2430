class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""
