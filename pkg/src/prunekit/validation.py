"""Input validation helpers shared by the estimators and functional API."""
import numbers

import numpy as np

from .exceptions import NotFittedError, PlanError, ShapeError
from .network import Network


def check_network(net):
    if not isinstance(net, Network):
        raise TypeError(f"expected a Network, got {type(net).__name__}")
    return net


def check_reducing_factor(r, n_layers=None):
    """Validate a per-layer reducing factor and return it as a float64 array."""
    arr = np.array(r, dtype=np.float64, copy=True).reshape(-1)
    if n_layers is not None and arr.shape[0] != n_layers:
        raise ShapeError(f"reducing factor has {arr.shape[0]} entries, network has {n_layers} layers")
    if not np.all(np.isfinite(arr)):
        raise PlanError("reducing factor contains non-finite values")
    if np.any(arr < 0) or np.any(arr >= 1):
        raise PlanError(f"reducing factors must lie in [0, 1), got {arr.tolist()}")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (strict and value == 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value}")
    return value


def check_is_fitted(estimator, attributes):
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


def parse_factor_list(text):
    """Parse ``"0.1,0.2"`` into a list of floats."""
    if isinstance(text, str):
        parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
        return [float(p) for p in parts]
    return [float(v) for v in text]
