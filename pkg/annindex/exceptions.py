from django.core.exceptions import ValidationError


class UsageError(ValidationError):
    """ Raised when a caller violates a documented precondition
        (bad parameter, mismatched dimensions, unknown config key).
    """

    def __str__(self):
        return "; ".join(self.messages)


class DatasetLoadError(ValueError):
    """ A vector or ground-truth file could not be decoded.
        `offset` is the byte position where decoding stopped making sense.
    """
    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        location = ""
        if path is not None:
            location = f" ({path}"
            location += f" @ byte {offset})" if offset is not None else ")"
        super().__init__(f"{message}{location}")


class ReservoirAllocationError(MemoryError):
    def __init__(self, required_bytes):
        self.required_bytes = required_bytes
        super().__init__(
            f"cannot allocate reservoir arena: {required_bytes} bytes required")


class GraphValidationError(RuntimeError):
    """ A built or loaded graph violates a structural invariant. """
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(f"graph is malformed: {'; '.join(self.problems[:5])}")
