from __future__ import annotations

from typing import Iterable, List


class RlCbfError(Exception):
    """Base class for every error raised by the rlcbf package."""


class UsageError(RlCbfError):
    pass


class ConfigError(RlCbfError):
    def __init__(self, problems: Iterable[str]):
        self.problems: List[str] = list(problems)
        super().__init__("; ".join(self.problems) or "invalid configuration")


class ShapeError(RlCbfError, ValueError):
    pass


class TrainingError(RlCbfError):
    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        if layer is not None:
            message = f"{message} (layer {layer})"
        super().__init__(message)


class ModelError(RlCbfError):
    pass


class QpSpecError(RlCbfError):
    pass


class SolverError(RlCbfError):
    def __init__(self, message: str, iterations: int = 0, working_set: Iterable[int] = (), point: Iterable[float] = ()):
        self.iterations = iterations
        self.working_set = list(working_set)
        self.point = list(point)
        super().__init__(f"{message} (iterations={iterations}, working_set={self.working_set})")


class DataError(RlCbfError):
    pass
