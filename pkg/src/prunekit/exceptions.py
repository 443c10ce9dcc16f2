"""Exception types.  Each carries a short machine-readable ``category``."""


class PruneKitError(Exception):
    category = "error"


class ShapeError(PruneKitError, ValueError):
    category = "shape"


class TrainingDivergenceError(PruneKitError, ArithmeticError):
    category = "divergence"


class CheckpointFormatError(PruneKitError, ValueError):
    category = "checkpoint"


class PlanError(PruneKitError, ValueError):
    """A reducing factor or pruning plan that cannot be applied to a network."""

    category = "plan"


class InfeasibleBudgetError(PruneKitError):
    category = "infeasible"

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table or []


class EmptyAdjustmentError(PruneKitError):
    category = "infeasible"


class NotFittedError(PruneKitError, AttributeError):
    category = "not-fitted"
