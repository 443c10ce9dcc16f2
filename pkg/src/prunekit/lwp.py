"""Layer-wise polishment: pick kernel reducing factors under a weight budget.

Step one sweeps uniform reducing factors and keeps the best-scoring one that
fits the budget (``r_fix``).  Step two splits the layers into front, middle
and end segments and trades kernels between them (more pruning in front,
less in the middle and end) while holding the budget nearly constant.
"""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import EmptyAdjustmentError, InfeasibleBudgetError, ShapeError
from .pruning import (
    NetworkSpec,
    apply_plan,
    factors_from_counts,
    kept_counts,
    plan_from_factors,
    snap_to_architecture,
    uniform_factors,
    weights_remained,
)
from .sparsity import analyze_network
from .validation import check_is_fitted, check_network, check_positive

logger = logging.getLogger(__name__)

DEFAULT_DELTA_GRID = (0.0, 0.0625, 0.125, 0.1875)
DEFAULT_CANDIDATES = (0.12, 0.18, 0.25, 0.32, 0.38, 0.44, 0.50)
DEFAULT_SIGNS = (1, -1, -1)


@dataclass(frozen=True)
class SegmentSplit:
    front_len: int
    middle_len: int
    end_len: int

    def __post_init__(self):
        if min(self.front_len, self.middle_len, self.end_len) < 1:
            raise ValueError(f"every segment needs at least one layer: {self}")

    @classmethod
    def default(cls, n_layers):
        """30% of the layers in front, the rest halved with the end taking the odd one."""
        if n_layers < 3:
            raise ValueError(f"need at least 3 layers to split, got {n_layers}")
        front = max(1, int(0.3 * n_layers))
        rest = n_layers - front
        middle = max(1, rest // 2)
        return cls(front, middle, rest - middle)

    @classmethod
    def parse(cls, text):
        return cls(*(int(v) for v in str(text).replace(";", ",").split(",")))

    def __len__(self):
        return self.front_len + self.middle_len + self.end_len

    def segment_of_layers(self):
        return np.repeat([0, 1, 2], [self.front_len, self.middle_len, self.end_len])

    def expand(self, front, middle, end):
        """Per-layer vector with one value per segment."""
        return np.array([front, middle, end], dtype=np.float64)[self.segment_of_layers()]


@dataclass
class CandidateRow:
    stage: str
    r: np.ndarray
    kept: list
    weights_remained: float
    drop: float = float("nan")
    selected: bool = False
    delta: tuple = field(default=(0.0, 0.0, 0.0))


def _pick(rows, budget=None):
    feasible = [
        i for i, row in enumerate(rows)
        if budget is None or row.weights_remained <= budget + 1e-12
    ]
    if not feasible:
        return None
    return min(feasible, key=lambda i: (rows[i].drop, rows[i].weights_remained, i))


def _score(net, r, harness, reports):
    plan = plan_from_factors(net, r, reports)
    pruned = apply_plan(net, plan)
    return float(harness(pruned, r)), pruned


def uniform_sweep(net, candidates, budget, harness, multiple=4):
    """Score every uniform factor and select the best one within ``budget``.

    Returns ``(r_fix, rows)``.  ``harness(pruned_net, r)`` must fine-tune and
    return the performance drop of the pruned network.
    """
    check_network(net)
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate factor")
    if not 0 < budget <= 1:
        raise ValueError(f"budget must lie in (0, 1], got {budget}")
    spec = NetworkSpec.from_network(net)
    reports = analyze_network(net)
    rows = []
    for value in candidates:
        r = uniform_factors(spec, value)
        if multiple:
            r = snap_to_architecture(r, spec, multiple)
        drop, _ = _score(net, r, harness, reports)
        rows.append(CandidateRow("sweep", r, kept_counts(spec, r), weights_remained(spec, r), drop))
        logger.info("sweep r=%.4f kept=%s remained=%.4f drop=%.4f",
                    value, rows[-1].kept[0], rows[-1].weights_remained, drop)
    best = _pick(rows, budget)
    if best is None:
        table = [(row.r[0], row.weights_remained, row.drop) for row in rows]
        raise InfeasibleBudgetError(
            f"no candidate keeps weights remained <= {budget}: "
            + ", ".join(f"r={r:.3f}: {w:.4f}" for r, w, _ in table),
            table,
        )
    rows[best].selected = True
    return rows[best].r.copy(), rows


def enumerate_balanced_adjustments(r_fix, split, spec, delta_grid=DEFAULT_DELTA_GRID,
                                   tolerance=0.01, multiple=4, signs=DEFAULT_SIGNS):
    """Segment-shifted factors whose weight budget stays within ``tolerance`` of ``r_fix``.

    Each combination ``(d_front, d_middle, d_end)`` from ``delta_grid`` shifts
    the segments by ``signs[i] * d_i`` (front up, middle and end down by
    default).  The output layer keeps its ``r_fix`` value.  Results are
    snapped, de-duplicated and returned as ``(delta, r)`` pairs in grid order.
    """
    spec = spec if isinstance(spec, NetworkSpec) else NetworkSpec.from_network(spec)
    check_positive(tolerance, "tolerance")
    r_fix = np.asarray(r_fix, dtype=np.float64)
    if len(split) != len(spec) or len(r_fix) != len(spec):
        raise ShapeError(f"split covers {len(split)} layers, r has {len(r_fix)}, spec has {len(spec)}")
    if multiple:
        r_fix = snap_to_architecture(r_fix, spec, multiple)
    target = weights_remained(spec, r_fix)
    grid = sorted(set(float(d) for d in delta_grid) | {0.0})
    seen = set()
    out = []
    for delta in itertools.product(grid, repeat=3):
        shift = split.expand(*(s * d for s, d in zip(signs, delta)))
        shift[-1] = 0.0
        r = r_fix + shift
        if np.any(r < 0) or np.any(r >= 1):
            continue
        if multiple:
            r = snap_to_architecture(r, spec, multiple)
        try:
            kept = tuple(kept_counts(spec, r))
        except ValueError:
            continue
        if kept in seen:
            continue
        if abs(weights_remained(spec, r) - target) <= tolerance + 1e-12:
            seen.add(kept)
            out.append((delta, factors_from_counts(spec, kept)))
    if not out:
        raise EmptyAdjustmentError(
            "no segment adjustment stays within the budget tolerance; widen delta_grid or tolerance"
        )
    return out


@dataclass
class LWPResult:
    network: object
    r: np.ndarray
    rows: list
    selected: int


def run_lwp(net, candidates, budget, split, delta_grid, tolerance, harness, multiple=4,
            signs=DEFAULT_SIGNS):
    """Uniform sweep, segment rebalancing, then keep the lowest-drop candidate.

    The returned ``LWPResult.network`` is the pruned (not fine-tuned) winner;
    the harness is responsible for fine-tuning during scoring.
    """
    split = split or SegmentSplit.default(len(net))
    r_fix, rows = uniform_sweep(net, candidates, budget, harness, multiple)
    spec = NetworkSpec.from_network(net)
    reports = analyze_network(net)
    fix_row = next(row for row in rows if row.selected)
    adjustments = enumerate_balanced_adjustments(
        r_fix, split, spec, delta_grid, tolerance, multiple, signs
    )
    for delta, r in adjustments:
        if delta == (0.0, 0.0, 0.0):
            drop = fix_row.drop
        else:
            drop, _ = _score(net, r, harness, reports)
        rows.append(CandidateRow("adjust", r, kept_counts(spec, r), weights_remained(spec, r), drop,
                                 delta=delta))
    for row in rows:
        row.selected = False
    adjust_rows = [i for i, row in enumerate(rows) if row.stage == "adjust"]
    best = min(adjust_rows, key=lambda i: (rows[i].drop, rows[i].weights_remained, i))
    rows[best].selected = True
    winner = apply_plan(net, plan_from_factors(net, rows[best].r, reports))
    return LWPResult(winner, rows[best].r.copy(), rows, best)


REPORT_HEADER = ("stage", "index", "delta", "r", "kernels_per_layer", "weights_remained", "drop", "selected")


def report_table(rows):
    """Rows of the LWP CSV report, header first."""
    table = [REPORT_HEADER]
    for i, row in enumerate(rows):
        table.append((
            row.stage,
            i,
            ";".join(f"{d:.4f}" for d in row.delta),
            ";".join(f"{v:.4f}" for v in row.r),
            ";".join(str(k) for k in row.kept),
            f"{row.weights_remained:.6f}",
            f"{row.drop:.6f}",
            int(row.selected),
        ))
    return table


class LayerWisePolishment(TransformerMixin, BaseEstimator):
    """Budget-constrained kernel pruning estimator.

    ``fit(net, harness=...)`` runs the sweep and segment search and stores
    ``reducing_factor_``, ``rows_`` and ``pruned_network_``.  ``transform``
    prunes any network of the same architecture with the learned factors.
    """

    def __init__(self, budget=0.6, candidates=DEFAULT_CANDIDATES, split=None,
                 delta_grid=DEFAULT_DELTA_GRID, tolerance=0.01, multiple=4, signs=DEFAULT_SIGNS):
        self.budget = budget
        self.candidates = candidates
        self.split = split
        self.delta_grid = delta_grid
        self.tolerance = tolerance
        self.multiple = multiple
        self.signs = signs

    def fit(self, net, y=None, harness=None):
        if harness is None:
            raise ValueError("LayerWisePolishment.fit needs a harness callback")
        check_network(net)
        split = self.split
        if split is not None and not isinstance(split, SegmentSplit):
            split = SegmentSplit(*split)
        result = run_lwp(net, self.candidates, self.budget, split, self.delta_grid,
                         self.tolerance, harness, self.multiple, self.signs)
        self.reducing_factor_ = result.r
        self.rows_ = result.rows
        self.selected_ = result.selected
        self.pruned_network_ = result.network
        self.weights_remained_ = result.rows[result.selected].weights_remained
        self.drop_ = result.rows[result.selected].drop
        return self

    def transform(self, net):
        check_is_fitted(self, ["reducing_factor_"])
        return apply_plan(net, plan_from_factors(net, self.reducing_factor_))
