"""Per-layer kernel redundancy: mean absolute weight and kernel sparsity."""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError
from .network import as_tensor4


@dataclass(frozen=True)
class SparsityReport:
    """Sparsity of every kernel in one layer, most redundant first.

    ``entries`` holds ``(kernel_index, sparsity)`` pairs sorted by sparsity
    descending, ties broken by ascending kernel index.
    """

    layer_index: int
    mean_abs: float
    entries: list = field(default_factory=list)

    @property
    def degenerate(self):
        """True for an all-zero layer, where no weight can fall below the mean."""
        return self.mean_abs == 0.0

    @property
    def order(self):
        return [k for k, _ in self.entries]

    def sparsity_of(self, kernel_index):
        for k, s in self.entries:
            if k == kernel_index:
                return s
        raise IndexError(kernel_index)


def layer_mean_abs(kernels):
    kernels = as_tensor4(kernels)
    if kernels.size == 0:
        raise ShapeError("cannot take the mean of an empty kernel tensor")
    return float(np.mean(np.abs(kernels), dtype=np.float64))


def _sparse_counts(kernels, mean_abs):
    flat = np.abs(kernels.reshape(kernels.shape[0], -1)).astype(np.float64)
    return np.count_nonzero(flat < mean_abs, axis=1)


def kernel_sparsity(kernels, kernel_index, mean_abs):
    """Fraction of kernel ``kernel_index``'s weights with ``|w| < mean_abs``."""
    kernels = as_tensor4(kernels)
    if not 0 <= kernel_index < kernels.shape[0]:
        raise IndexError(f"kernel index {kernel_index} out of range for {kernels.shape[0]} kernels")
    kernel = np.abs(kernels[kernel_index]).astype(np.float64)
    return np.count_nonzero(kernel < mean_abs) / kernel.size


def build_report(kernels, layer_index=0):
    kernels = as_tensor4(kernels)
    mean_abs = layer_mean_abs(kernels)
    per_kernel = kernels[0].size
    counts = _sparse_counts(kernels, mean_abs)
    order = sorted(range(len(counts)), key=lambda k: (-int(counts[k]), k))
    entries = [(k, int(counts[k]) / per_kernel) for k in order]
    return SparsityReport(layer_index, mean_abs, entries)


def analyze_network(net):
    """One :class:`SparsityReport` per layer of ``net``."""
    return [build_report(layer.kernels, i) for i, layer in enumerate(net.layers)]


def report_rows(reports):
    """Flatten reports into ``(layer, kernel, sparsity, rank)`` rows, rank 0 = most sparse."""
    rows = []
    for report in reports:
        for rank, (k, s) in enumerate(report.entries):
            rows.append((report.layer_index, k, s, rank))
    return rows
