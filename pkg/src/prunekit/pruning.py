"""Reducing factors, pruning plans, budget accounting and architecture snapping.

A reducing factor ``r`` gives, per layer, the fraction of kernels to drop.
Kept counts are always integers: layer ``l`` keeps ``N_l - round(r_l * N_l)``
kernels (round half up).  The final layer produces the network output and
is never pruned.
"""
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import PlanError, ShapeError
from .network import ConvLayer, Network
from .sparsity import analyze_network
from .validation import check_is_fitted, check_network, check_reducing_factor


@dataclass(frozen=True)
class NetworkSpec:
    """Kernel tensor dimensions ``(N, C, H, W)`` for each layer."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(tuple(int(v) for v in dims) for dims in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ShapeError("a network spec needs at least one layer")
        for i, dims in enumerate(layers):
            if len(dims) != 4 or min(dims) < 1:
                raise ShapeError(f"layer {i}: dims must be four positive integers, got {dims}")
        for i in range(len(layers) - 1):
            if layers[i + 1][1] != layers[i][0]:
                raise ShapeError(
                    f"layer {i + 1} has C={layers[i + 1][1]} but layer {i} has N={layers[i][0]}"
                )

    def __len__(self):
        return len(self.layers)

    @classmethod
    def from_network(cls, net):
        return cls(tuple(net.dims))

    @classmethod
    def vdsr(cls, depth=20, width=64, channels=1):
        layers = [(width, channels, 3, 3)]
        layers += [(width, width, 3, 3)] * (depth - 2)
        layers.append((channels, width, 3, 3))
        return cls(tuple(layers))

    @classmethod
    def parse(cls, text):
        """Parse one ``N C H W`` (space or comma separated) line per layer.

        Blank lines and ``#`` comments are ignored.  A single line of the
        form ``vdsr DEPTH WIDTH`` expands to the VDSR-shaped stack.
        """
        layers = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].replace(",", " ").split()
            if not line:
                continue
            if line[0].lower() == "vdsr":
                depth = int(line[1]) if len(line) > 1 else 20
                width = int(line[2]) if len(line) > 2 else 64
                return cls.vdsr(depth, width)
            if len(line) != 4:
                raise ShapeError(f"expected 'N C H W', got {raw!r}")
            layers.append(tuple(int(v) for v in line))
        return cls(tuple(layers))

    @property
    def kernel_counts(self):
        return np.array([dims[0] for dims in self.layers], dtype=np.int64)

    @property
    def layer_sizes(self):
        """Diagonal of the budget matrix: ``N * C * H * W`` per layer."""
        return np.array([math.prod(dims) for dims in self.layers], dtype=np.int64)

    @property
    def total_weights(self):
        return int(self.layer_sizes.sum())


def _as_spec(spec_or_net):
    if isinstance(spec_or_net, NetworkSpec):
        return spec_or_net
    if isinstance(spec_or_net, Network):
        return NetworkSpec.from_network(spec_or_net)
    return NetworkSpec(tuple(spec_or_net))


def removal_count(r_l, n_kernels):
    return int(math.floor(r_l * n_kernels + 0.5))


def kept_counts(spec, r):
    """Integer number of kernels kept per layer under reducing factor ``r``."""
    spec = _as_spec(spec)
    r = check_reducing_factor(r, len(spec))
    kept = []
    for i, (n, r_l) in enumerate(zip(spec.kernel_counts, r)):
        k = int(n) - removal_count(r_l, int(n))
        if k < 1:
            raise PlanError(f"layer {i}: r={r_l} would remove all {n} kernels")
        kept.append(k)
    return kept


def factors_from_counts(spec, kept):
    """Effective reducing factor ``1 - kept/N`` for integer kept counts."""
    spec = _as_spec(spec)
    return np.array([1.0 - k / n for k, n in zip(kept, spec.kernel_counts)])


def uniform_factors(spec, value):
    """Same factor for every layer except the output layer, which stays at 0."""
    spec = _as_spec(spec)
    r = np.full(len(spec), float(value))
    r[-1] = 0.0
    return r


def remained_weight_count(spec, r):
    """Exact kernel-weight count surviving ``r``, as an integer.

    Evaluates ``[1, r'_{1:L-1}] D r'`` with ``r' = kept/N`` in exact rational
    arithmetic.  Layer ``l`` keeps ``D_ll * r'_{l-1} * r'_l`` weights, layer 1
    keeps its full input channels.
    """
    spec = _as_spec(spec)
    kept = kept_counts(spec, r)
    retained = [Fraction(k, int(n)) for k, n in zip(kept, spec.kernel_counts)]
    row = [Fraction(1)] + retained[:-1]
    total = sum(
        (row_l * int(d) * r_l for row_l, d, r_l in zip(row, spec.layer_sizes, retained)),
        Fraction(0),
    )
    if total.denominator != 1:
        raise ShapeError("layer channel counts are inconsistent with the layer dims")
    return int(total)


def weights_remained(spec, r):
    """Fraction of the unpruned kernel weights that survive ``r``."""
    spec = _as_spec(spec)
    return remained_weight_count(spec, r) / spec.total_weights


def snap_to_architecture(r, spec, multiple=4):
    """Round kept counts to the nearest multiple of ``multiple``.

    Kept counts are clamped to ``[max(1, multiple), N_l]`` and the effective
    factor ``1 - kept/N_l`` is returned.
    """
    if int(multiple) != multiple or multiple < 1:
        raise ValueError(f"multiple must be a positive integer, got {multiple}")
    multiple = int(multiple)
    spec = _as_spec(spec)
    r = check_reducing_factor(r, len(spec))
    kept = []
    for n, r_l in zip(spec.kernel_counts, r):
        n = int(n)
        target = (1.0 - r_l) * n
        k = multiple * int(math.floor(target / multiple + 0.5 + 1e-9))
        kept.append(min(n, max(max(1, multiple), k)))
    return factors_from_counts(spec, kept)


@dataclass(frozen=True)
class PruningPlan:
    """Ascending kept-kernel indices for every layer."""

    kept: tuple

    def __post_init__(self):
        object.__setattr__(self, "kept", tuple(tuple(int(i) for i in k) for k in self.kept))
        for l, idx in enumerate(self.kept):
            if not idx:
                raise PlanError(f"layer {l}: at least one kernel must be kept")
            if list(idx) != sorted(set(idx)):
                raise PlanError(f"layer {l}: kept indices must be unique and ascending")

    @classmethod
    def keep_all(cls, net):
        return cls(tuple(tuple(range(layer.n_kernels)) for layer in net.layers))

    @property
    def kept_counts(self):
        return [len(k) for k in self.kept]

    def to_dict(self):
        return {"kept": [list(k) for k in self.kept]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(tuple(k) for k in data["kept"]))


def plan_from_factors(net, r, reports=None):
    """Drop the ``round(r_l * N_l)`` most sparse kernels of every layer."""
    check_network(net)
    r = check_reducing_factor(r, len(net))
    if reports is None:
        reports = analyze_network(net)
    if len(reports) != len(net):
        raise ShapeError(f"{len(reports)} sparsity reports for {len(net)} layers")
    kept = []
    for l, (layer, report, r_l) in enumerate(zip(net.layers, reports, r)):
        n = layer.n_kernels
        if len(report.entries) != n:
            raise ShapeError(f"layer {l}: report has {len(report.entries)} entries for {n} kernels")
        drop = removal_count(r_l, n)
        if drop >= n:
            raise PlanError(f"layer {l}: r={r_l} would remove all {n} kernels")
        if drop and l == len(net) - 1:
            raise PlanError("the output layer cannot be pruned; its reducing factor must be 0")
        kept.append(tuple(sorted(k for k, _ in report.entries[drop:])))
    return PruningPlan(tuple(kept))


def apply_plan(net, plan):
    """Return a new network holding only the planned kernels, with inputs rewired."""
    check_network(net)
    if len(plan.kept) != len(net):
        raise PlanError(f"plan covers {len(plan.kept)} layers, network has {len(net)}")
    layers = []
    prev_kept = None
    for l, (layer, kept) in enumerate(zip(net.layers, plan.kept)):
        if kept[-1] >= layer.n_kernels:
            raise PlanError(f"layer {l}: kernel index {kept[-1]} out of range")
        rows = np.asarray(kept)
        kernels = layer.kernels[rows]
        if prev_kept is not None:
            kernels = kernels[:, np.asarray(prev_kept)]
        layers.append(ConvLayer(kernels.copy(), layer.bias[rows].copy(), layer.activation))
        prev_kept = kept
    return Network(layers, net.residual)


def prune(net, r, multiple=None, reports=None):
    """Snap (optional), plan and apply ``r``; returns ``(pruned_net, plan, effective_r)``."""
    if multiple is not None:
        r = snap_to_architecture(r, net, multiple)
    plan = plan_from_factors(net, r, reports)
    effective = factors_from_counts(net, plan.kept_counts)
    return apply_plan(net, plan), plan, effective


class KernelPruner(TransformerMixin, BaseEstimator):
    """Remove the most sparse kernels of every layer of a network.

    Parameters
    ----------
    reducing_factor : float or sequence of float
        Fraction of kernels removed per layer.  A scalar applies to every
        layer except the output layer.
    multiple : int or None
        If set, kept counts are snapped to multiples of this value.
    """

    def __init__(self, reducing_factor=0.0, multiple=None):
        self.reducing_factor = reducing_factor
        self.multiple = multiple

    def fit(self, net, y=None):
        check_network(net)
        if np.ndim(self.reducing_factor) == 0:
            r = uniform_factors(net, self.reducing_factor)
        else:
            r = check_reducing_factor(self.reducing_factor, len(net))
        if self.multiple is not None:
            r = snap_to_architecture(r, net, self.multiple)
        self.reports_ = analyze_network(net)
        self.plan_ = plan_from_factors(net, r, self.reports_)
        self.reducing_factor_ = factors_from_counts(net, self.plan_.kept_counts)
        self.weights_remained_ = weights_remained(net, self.reducing_factor_)
        return self

    def transform(self, net):
        check_is_fitted(self, ["plan_"])
        return apply_plan(net, self.plan_)
