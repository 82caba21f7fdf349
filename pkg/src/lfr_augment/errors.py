"""
Exception hierarchy shared by the model, graph, training and benchmark modules.
"""

from typing import Optional

import numpy as np


class LfrAugmentException(Exception):
    """Base exception for all semantic failures raised by lfr_augment."""


class DimensionError(LfrAugmentException):
    """Exception raised when a block or signal has the wrong shape."""

    def __init__(self, block: str, expected: tuple[int, ...], got: tuple[int, ...]):
        super().__init__(f"block {block}: expected shape {expected}, got {got}")
        self.block = block
        self.expected = expected
        self.got = got


class ModeViolationError(LfrAugmentException):
    """Exception raised when a D_zw block forbidden by the mode is nonzero."""


class UnsupportedModeError(LfrAugmentException):
    """Exception raised when evaluating a model whose latent loop cannot be resolved by substitution."""


class NumericOverflowError(LfrAugmentException):
    """Exception raised when a model evaluation produces non-finite values."""


class SimulationDivergedError(LfrAugmentException):
    """Exception raised when a simulated state leaves the admissible range."""

    def __init__(
        self,
        step: int,
        message: str,
        partial_outputs: Optional[np.ndarray] = None,
    ):
        super().__init__(f"simulation diverged at step {step}: {message}")
        self.step = step
        self.partial_outputs = partial_outputs


class ArityError(LfrAugmentException):
    """Exception raised when an encoder history has the wrong length."""


class ConstructionError(LfrAugmentException):
    """Exception raised for invalid structure or graph construction requests."""


class WellPosednessError(LfrAugmentException):
    """Exception raised when an interconnection fails the well-posedness conditions."""


class UnregisteredPrimitiveError(ConstructionError):
    """Exception raised when a tape operation names an unknown primitive."""


class NumericError(LfrAugmentException):
    """Exception raised when a tape node evaluates to a non-finite value."""

    def __init__(self, node_id: int, op: str):
        super().__init__(f"non-finite value at tape node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


class DataError(LfrAugmentException):
    """Exception raised for datasets that cannot support the requested operation."""


class DegenerateDataError(DataError):
    """Exception raised when a channel has zero variance."""


class RangeError(DataError):
    """Exception raised when a subsection start lies outside the valid range."""


class DivisionError(LfrAugmentException):
    """Exception raised when a regularization weight would divide by zero."""

    def __init__(self, parameter: str):
        super().__init__(
            f"nominal value of baseline parameter {parameter} is zero; cannot scale"
        )
        self.parameter = parameter


class InitializationError(LfrAugmentException):
    """Exception raised when a model cannot be initialized as its baseline."""


class TrainingAbortedError(LfrAugmentException):
    """Exception raised when the loss becomes non-finite during training."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class EvaluationDivergedError(LfrAugmentException):
    """Exception raised when evaluation diverges; carries the partial-horizon metric."""

    def __init__(self, step: int, partial_value: float):
        super().__init__(
            f"simulation diverged at step {step}; partial-horizon value {partial_value:.6g}"
        )
        self.step = step
        self.partial_value = partial_value


class SpecError(LfrAugmentException):
    """Exception raised for invalid excitation or benchmark specifications."""


class StageError(LfrAugmentException):
    """Exception raised by the training pipeline, tagged with the failing stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class CheckpointError(LfrAugmentException):
    """Exception raised when a checkpoint cannot be written or restored."""
