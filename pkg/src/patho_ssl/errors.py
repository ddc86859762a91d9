"""Exception types shared across the pipeline."""


class DataFormatError(Exception):
    """A file or stream does not conform to its documented format."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
