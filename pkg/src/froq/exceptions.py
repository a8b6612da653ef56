"""Exception hierarchy.

Every error raised on purpose by this package derives from :class:`FroqError`.
The CLI maps :class:`InputError` subclasses to exit code 2 and everything else
to exit code 3.
"""


class FroqError(Exception):
    """Base class for all package errors."""


class InputError(FroqError):
    """Bad user input: files, parameters, formats."""


class InvalidParameter(InputError, ValueError):
    pass


class InvalidScore(FroqError, ValueError):
    """A score vector or tensor contains NaN or Inf."""


class ShapeError(FroqError, ValueError):
    pass


class DegenerateInput(FroqError, ValueError):
    """Input carries no usable information (all ties, zero norm, ...)."""


class ModelFormatError(InputError):
    pass


class UnknownTap(InputError, LookupError):
    def __init__(self, tap_id, suggestions=()):
        self.tap_id = tap_id
        self.suggestions = list(suggestions)
        msg = f"unknown tap {tap_id!r}"
        if self.suggestions:
            msg += "; did you mean: " + ", ".join(self.suggestions)
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


class ImageFormatError(InputError):
    pass


class CompatibilityError(InputError):
    """Artifacts produced for a different model were combined."""


class AlignmentError(InputError):
    """Two inputs that must refer to the same images do not."""


class FormatVersionError(InputError):
    pass


class ConfigParseError(InputError):
    pass


class BatchError(FroqError):
    """Too many per-image failures in a batch job."""

    def __init__(self, failures, total):
        self.failures = list(failures)
        self.total = total
        lines = [f"{len(self.failures)} of {total} images failed:"]
        lines += [f"  {path}: {err}" for path, err in self.failures[:20]]
        super().__init__("\n".join(lines))


class IoError(FroqError, OSError):
    pass
