"""Kernel pruning of convolutional networks under weight budgets or target drops."""
from .exceptions import (
    CheckpointFormatError,
    EmptyAdjustmentError,
    InfeasibleBudgetError,
    PlanError,
    PruneKitError,
    ShapeError,
    TrainingDivergenceError,
)
from .go import GoConfig, GradientOptimization, SurrogateRegressor, optimize_r, run_go
from .harness import DatasetSpec, SRHarness, build_toy_vdsr, evaluate, fine_tune, generate_dataset
from .lwp import LayerWisePolishment, SegmentSplit, enumerate_balanced_adjustments, run_lwp, uniform_sweep
from .network import ConvLayer, Network, conv_forward, network_forward, psnr
from .pruning import (
    KernelPruner,
    NetworkSpec,
    PruningPlan,
    apply_plan,
    plan_from_factors,
    snap_to_architecture,
    uniform_factors,
    weights_remained,
)
from .sparsity import SparsityReport, build_report, kernel_sparsity, layer_mean_abs

__version__ = "0.1.0"
