"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes: ``ConfigError``
-> 1, ``DataError`` -> 2, anything else deriving from ``GlosskitError`` -> 3.
"""


class GlosskitError(Exception):
    """Base class for all errors raised by glosskit."""


class ConfigError(GlosskitError, ValueError):
    pass


class DataError(GlosskitError, ValueError):
    pass


class RuntimeFailure(GlosskitError, RuntimeError):
    pass


class MalformedRecord(DataError):
    def __init__(self, line, reason=""):
        self.line = line
        self.reason = reason
        msg = f"malformed record at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class MisalignedGloss(DataError):
    def __init__(self, line, reason=""):
        self.line = line
        self.reason = reason
        msg = f"morpheme/gloss count mismatch at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class EmptyCorpus(DataError):
    pass


class UnassignedGenre(ConfigError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"genre {name!r} is assigned to neither the ID nor the OOD side")


class InvalidSpec(ConfigError):
    pass


class SequenceTooLong(DataError):
    pass


class IdOutOfRange(DataError):
    pass


class VocabMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ShapeMismatch(GlosskitError, ValueError):
    def __init__(self, op, *shapes):
        self.shapes = shapes
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class NonScalarLoss(GlosskitError, ValueError):
    pass
