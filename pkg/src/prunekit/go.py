"""Gradient optimization: reach a target performance drop with a learned surrogate.

A regression model ``R(r)`` is fitted to ``(r, drop)`` pairs gathered by
pruning and scoring a network at random reducing factors.  Its weights are
then frozen and gradient descent runs on the *input* ``r`` to bring
``|R(r) - target|`` under a margin.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_X_y

from .exceptions import TrainingDivergenceError
from .pruning import (
    NetworkSpec,
    apply_plan,
    factors_from_counts,
    plan_from_factors,
    prune,
    snap_to_architecture,
    weights_remained,
)
from .sparsity import analyze_network
from .validation import check_is_fitted, check_network, check_positive

logger = logging.getLogger(__name__)

R_MAX = 0.99
SURROGATE_KINDS = ("linear", "mlp")


@dataclass(frozen=True)
class TrainingPair:
    r: np.ndarray
    p: float


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """Regression surrogate mapping reducing factors to performance drop.

    ``kind="linear"`` fits ``w . r + b``.  ``kind="mlp"`` adds one tanh
    hidden layer on top of the same linear term, so it can always represent
    whatever the linear model can.  Both are trained full-batch on the mean
    squared error with Adam and a cosine-decayed step size, on inputs
    standardized per feature.  ``coef_`` and ``intercept_`` report the
    linear term in the original input units.
    """

    def __init__(self, kind="linear", hidden=16, epochs=5000, learning_rate=0.01, seed=0):
        self.kind = kind
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    def _forward(self, Z):
        out = Z @ self._w + self._b
        hid = None
        if self.kind == "mlp":
            hid = np.tanh(Z @ self._hidden_w.T + self._hidden_b)
            out = out + hid @ self._out_w
        return out, hid

    def _standardize(self, X):
        return (X - self.x_mean_) / self.x_scale_

    def fit(self, X, y):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"kind must be one of {SURROGATE_KINDS}, got {self.kind!r}")
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if len(X) < 2:
            raise ValueError("need at least two training pairs")
        rng = np.random.default_rng(self.seed)
        n, d = X.shape
        self.n_features_in_ = d
        self.x_mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        # constant columns (e.g. the pinned output layer) pass through unscaled
        self.x_scale_ = np.where(std > 0, std, 1.0)
        Z = self._standardize(X)
        self._w = np.zeros(d)
        self._b = np.array(float(np.mean(y)))
        params = [self._w, self._b]
        if self.kind == "mlp":
            self._hidden_w = rng.normal(0, 1 / math.sqrt(d), size=(self.hidden, d))
            self._hidden_b = np.zeros(self.hidden)
            self._out_w = np.zeros(self.hidden)
            params += [self._hidden_w, self._hidden_b, self._out_w]
        opt = _Adam(params, self.learning_rate)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            pred, hid = self._forward(Z)
            err = pred - y
            loss = float(np.mean(err ** 2))
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"surrogate training diverged at epoch {epoch}")
            self.loss_curve_.append(loss)
            g = 2.0 * err / n
            grads = [Z.T @ g, np.array(g.sum())]
            if self.kind == "mlp":
                g_hid = np.outer(g, self._out_w) * (1 - hid ** 2)
                grads += [g_hid.T @ Z, g_hid.sum(axis=0), hid.T @ g]
            lr = 0.5 * self.learning_rate * (1 + math.cos(math.pi * epoch / self.epochs))
            opt.step(params, grads, lr)
        self.coef_ = self._w / self.x_scale_
        self.intercept_ = float(self._b - self.coef_ @ self.x_mean_)
        self.final_loss_ = float(np.mean((self._forward(Z)[0] - y) ** 2))
        return self

    def predict(self, X):
        check_is_fitted(self, ["coef_"])
        X = check_array(X, dtype=np.float64)
        return self._forward(self._standardize(X))[0]

    def predict_one(self, r):
        return float(self.predict(np.asarray(r, dtype=np.float64)[None])[0])

    def input_gradient(self, r):
        """Gradient of the model output with respect to the input vector ``r``."""
        check_is_fitted(self, ["coef_"])
        z = self._standardize(np.asarray(r, dtype=np.float64))
        grad = self._w.copy()
        if self.kind == "mlp":
            hid = np.tanh(self._hidden_w @ z + self._hidden_b)
            grad += self._hidden_w.T @ (self._out_w * (1 - hid ** 2))
        return grad / self.x_scale_


def train_regression(pairs, kind="linear", epochs=5000, seed=0, learning_rate=0.01, hidden=16):
    """Fit a :class:`SurrogateRegressor` to ``TrainingPair`` objects."""
    pairs = list(pairs)
    X = np.stack([p.r for p in pairs])
    y = np.array([p.p for p in pairs])
    return SurrogateRegressor(kind, hidden, epochs, learning_rate, seed).fit(X, y)


def surrogate_input_gradient(model, r, target):
    """Gradient of ``|R(r) - target|`` w.r.t. ``r``; zero where ``R(r) == target``."""
    diff = model.predict_one(r) - target
    if diff == 0:
        return np.zeros_like(np.asarray(r, dtype=np.float64))
    return math.copysign(1.0, diff) * model.input_gradient(r)


@dataclass
class GoConfig:
    target_p: float
    alpha: float = 0.01
    margin: float = 0.01
    max_iters: int = 10_000
    r0: object = None

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        check_positive(self.margin, "margin")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


@dataclass
class OptimizeResult:
    r: np.ndarray
    trajectory: list
    converged: bool
    iterations: int


def _clamp(r):
    r = np.clip(r, 0.0, R_MAX)
    r[-1] = 0.0
    return r


def optimize_r(model, cfg, n_layers=None):
    """Descend ``|R(r) - P|`` in ``r`` from ``cfg.r0``.

    Every iterate is clamped to ``[0, 0.99]`` with the output layer pinned
    at 0.  ``trajectory`` holds ``(iteration, loss, r)`` per visited point.
    If the margin is never met the best iterate is returned with
    ``converged=False``.
    """
    n_layers = n_layers or model.n_features_in_
    if cfg.r0 is None:
        r = np.full(n_layers, 0.25)
    else:
        r = np.array(cfg.r0, dtype=np.float64).reshape(-1)
        if r.size == 1:
            r = np.full(n_layers, float(r[0]))
    r = _clamp(r)
    trajectory = []
    best_r, best_loss = r.copy(), math.inf
    for i in range(cfg.max_iters + 1):
        loss = abs(model.predict_one(r) - cfg.target_p)
        trajectory.append((i, loss, r.copy()))
        if loss < best_loss:
            best_r, best_loss = r.copy(), loss
        if loss < cfg.margin:
            return OptimizeResult(r, trajectory, True, i)
        if i == cfg.max_iters:
            break
        r = _clamp(r - cfg.alpha * surrogate_input_gradient(model, r, cfg.target_p))
    logger.warning("gradient optimization stopped after %d iterations (loss %.4g)", cfg.max_iters, best_loss)
    return OptimizeResult(best_r, trajectory, False, cfg.max_iters)


@dataclass
class DataConfig:
    n_samples: int = 64
    seed: int = 0
    low: float = 0.0
    high: float = 0.5
    multiple: int = 4
    surrogate: str = "linear"
    epochs: int = 5000
    train_seed: int = 0


def collect_training_data(net, n_samples, sampler_seed, harness, low=0.0, high=0.5, multiple=4):
    """Prune and score ``net`` at random reducing factors.

    Returns ``(pairs, n_failed)``; samples whose harness call raises are
    skipped with a warning.
    """
    check_network(net)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    spec = NetworkSpec.from_network(net)
    reports = analyze_network(net)
    rng = np.random.default_rng(sampler_seed)
    pairs = []
    failed = 0
    for i in range(n_samples):
        r = rng.uniform(low, high, size=len(spec))
        r[-1] = 0.0
        if multiple:
            r = snap_to_architecture(r, spec, multiple)
        try:
            pruned, plan, r = prune(net, r, reports=reports)
            p = float(harness(pruned, r))
            if not math.isfinite(p):
                raise ValueError(f"non-finite drop {p}")
        except Exception as exc:
            failed += 1
            logger.warning("sample %d skipped: %s", i, exc)
            continue
        pairs.append(TrainingPair(r, p))
    if failed:
        logger.warning("%d of %d samples failed", failed, n_samples)
    return pairs, failed


@dataclass
class GOResult:
    network: object
    pairs: list
    model: object
    optimized: OptimizeResult
    r: np.ndarray
    target: float
    predicted: float
    achieved: float
    weights_remained: float
    n_failed: int = 0
    extras: dict = field(default_factory=dict)


def run_go(net, cfg, data_cfg, harness):
    """Collect pairs, fit the surrogate, descend ``r``, snap, prune and score."""
    check_network(net)
    data_cfg = data_cfg or DataConfig()
    pairs, failed = collect_training_data(
        net, data_cfg.n_samples, data_cfg.seed, harness, data_cfg.low, data_cfg.high, data_cfg.multiple
    )
    if len(pairs) < 2:
        raise TrainingDivergenceError(f"only {len(pairs)} usable training pairs")
    model = train_regression(pairs, data_cfg.surrogate, data_cfg.epochs, data_cfg.train_seed)
    opt = optimize_r(model, cfg, len(net))
    r = opt.r
    if data_cfg.multiple:
        r = snap_to_architecture(r, net, data_cfg.multiple)
    plan = plan_from_factors(net, r)
    r = factors_from_counts(net, plan.kept_counts)
    pruned = apply_plan(net, plan)
    achieved = float(harness(pruned, r))
    tuned = getattr(harness, "last_network", None)
    if tuned is None:
        tuned = pruned
    return GOResult(tuned, pairs, model, opt, r, cfg.target_p, model.predict_one(r), achieved,
                    weights_remained(net, r), failed)


PAIRS_HEADER = ("sample", "p", "r")
TRAJECTORY_HEADER = ("iteration", "loss", "r")


def pairs_table(pairs):
    table = [PAIRS_HEADER]
    for i, pair in enumerate(pairs):
        table.append((i, f"{pair.p:.6f}", ";".join(f"{v:.4f}" for v in pair.r)))
    return table


def trajectory_table(trajectory):
    table = [TRAJECTORY_HEADER]
    for i, loss, r in trajectory:
        table.append((i, f"{loss:.6f}", ";".join(f"{v:.6f}" for v in r)))
    return table


class GradientOptimization(BaseEstimator):
    """Performance-constrained pruning estimator.

    ``fit(net, harness=...)`` gathers training pairs, fits the surrogate and
    searches for the reducing factor whose predicted drop meets
    ``target_drop``.  ``transform`` prunes a network with the found factor.
    """

    def __init__(self, target_drop=0.29, n_samples=64, surrogate="linear", alpha=0.01,
                 margin=0.01, r0=None, max_iters=10_000, seed=0, multiple=4,
                 sample_range=(0.0, 0.5), epochs=5000):
        self.target_drop = target_drop
        self.n_samples = n_samples
        self.surrogate = surrogate
        self.alpha = alpha
        self.margin = margin
        self.r0 = r0
        self.max_iters = max_iters
        self.seed = seed
        self.multiple = multiple
        self.sample_range = sample_range
        self.epochs = epochs

    def fit(self, net, y=None, harness=None):
        if harness is None:
            raise ValueError("GradientOptimization.fit needs a harness callback")
        cfg = GoConfig(self.target_drop, self.alpha, self.margin, self.max_iters, self.r0)
        low, high = self.sample_range
        data_cfg = DataConfig(self.n_samples, self.seed, low, high, self.multiple,
                              self.surrogate, self.epochs, self.seed)
        result = run_go(net, cfg, data_cfg, harness)
        self.result_ = result
        self.surrogate_ = result.model
        self.reducing_factor_ = result.r
        self.achieved_drop_ = result.achieved
        self.converged_ = result.optimized.converged
        self.pruned_network_ = result.network
        return self

    def transform(self, net):
        check_is_fitted(self, ["reducing_factor_"])
        return apply_plan(net, plan_from_factors(net, self.reducing_factor_))
