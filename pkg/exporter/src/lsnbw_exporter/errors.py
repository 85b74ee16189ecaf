class ExportError(Exception):
    """Checkpoint conversion failed; the message itemizes every problem."""


class UnsupportedArchitectureError(ExportError):
    """The source model cannot be expressed as a lesionbench ModelSpec."""
