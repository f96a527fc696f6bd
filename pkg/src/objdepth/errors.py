"""Exception hierarchy shared by every module."""


class ObjDepthError(Exception):
    """Base class; ``kind`` is the tag printed on the CLI error line."""

    kind = "error"


class InvalidArgumentError(ObjDepthError, ValueError):
    kind = "invalid-argument"


class EmptyGroundTruthError(ObjDepthError, ValueError):
    kind = "empty-ground-truth"


class DomainError(ObjDepthError, ValueError):
    kind = "domain"


class ConfigurationError(ObjDepthError, ValueError):
    kind = "configuration"


class ParseError(ObjDepthError, ValueError):
    kind = "parse"

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class DefinitionMissingError(ObjDepthError, ValueError):
    kind = "definition-missing"


class MissingEmbeddingError(ObjDepthError, KeyError):
    kind = "missing-embedding"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class CheckpointIncompatibleError(ObjDepthError, ValueError):
    kind = "checkpoint-incompatible"

    def __init__(self, diffs):
        self.diffs = list(diffs)
        super().__init__("; ".join(self.diffs))


class EvaluationError(ObjDepthError, RuntimeError):
    kind = "evaluation"


class NonFiniteLossError(ObjDepthError, FloatingPointError):
    kind = "non-finite-loss"
