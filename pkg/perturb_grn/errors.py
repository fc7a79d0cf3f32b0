# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Exception hierarchy shared by every perturb_grn module."""


class PerturbGrnError(Exception):
    """Base class for all errors raised by perturb_grn."""


class ShapeError(PerturbGrnError, ValueError):
    """Operands have incompatible shapes."""


class CompositionError(PerturbGrnError, ValueError):
    """An objective was built from something the gradient engine cannot trace."""


class ValidationError(PerturbGrnError, ValueError):
    """An argument violates a domain constraint (sign, range, binary flags)."""


class ConfigError(PerturbGrnError, ValueError):
    """A configuration is incomplete, malformed or infeasible."""


class PairingError(PerturbGrnError, ValueError):
    """Optimal-transport pairing could not be formed."""


class CheckpointError(PerturbGrnError, ValueError):
    """A checkpoint file is corrupt, from another version or another config."""


class EvaluationError(PerturbGrnError, ValueError):
    """An evaluation request cannot be served by the given data."""


class DatasetFormatError(PerturbGrnError, ValueError):
    """An input TSV file does not conform to its format."""

    def __init__(
        self,
        message: str,
        *,
        path=None,
        row: int | None = None,
        column: str | None = None,
    ):
        self.path = path
        self.row = row
        self.column = column
        location = []
        if path is not None:
            location.append(str(path))
        if row is not None:
            location.append(f'row {row}')
        if column is not None:
            location.append(f'column {column!r}')
        if location:
            message = f'{message} ({", ".join(location)})'
        super().__init__(message)


class EdgeListParseError(PerturbGrnError, ValueError):
    """An edge-list TSV line could not be parsed."""

    def __init__(self, message: str, *, line: int):
        self.line = line
        super().__init__(f'line {line}: {message}')


class StateError(PerturbGrnError, RuntimeError):
    """A model is in a state that cannot serve the request (e.g. NaN weights)."""


class TrainingDivergedError(PerturbGrnError, RuntimeError):
    """The training loss became non-finite.

    ``state`` holds the last finite parameter snapshot (a state dict) and
    ``step`` the optimizer step at which divergence was detected.
    """

    def __init__(self, message: str, *, state: dict | None, step: int):
        self.state = state
        self.step = step
        super().__init__(message)
