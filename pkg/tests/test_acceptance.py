"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are also
repeated at the end of the pytest report.  ``python tests/test_acceptance.py``
runs the same checks without pytest.
"""
import contextlib
import os
import sys
import time

import numpy as np
import pytest

from prunekit import checkpoint
from prunekit.cli import main
from prunekit.go import DataConfig, GoConfig, SurrogateRegressor, TrainingPair, run_go, train_regression
from prunekit.harness import DatasetSpec, SRHarness, build_toy_vdsr, fine_tune, generate_dataset, mean_factor_harness
from prunekit.lwp import SegmentSplit
from prunekit.network import loss_and_gradients, network_forward
from prunekit.pruning import (
    NetworkSpec,
    apply_plan,
    kept_counts,
    plan_from_factors,
    prune,
    remained_weight_count,
    snap_to_architecture,
    uniform_factors,
    weights_remained,
)
from prunekit.sparsity import build_report, kernel_sparsity, layer_mean_abs

sys.path.insert(0, os.path.dirname(__file__))
from conftest import random_net  # noqa: E402

RESULTS = []
VDSR = NetworkSpec.vdsr(20, 64)


@contextlib.contextmanager
def criterion(number, title):
    """Record and print one PASS/FAIL line; failures still propagate."""
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        line = f"criterion {number:>2} FAIL  {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        RESULTS.append(line)
        print(line)
        raise
    elapsed = time.perf_counter() - start
    extra = f" ({detail['info']})" if "info" in detail else ""
    line = f"criterion {number:>2} PASS  {title}{extra} [{elapsed:.2f}s]"
    RESULTS.append(line)
    print(line)


def test_criterion_01_uniform_budget_table():
    expected = {56: 76.6, 52: 66.1, 48: 56.3, 44: 47.4, 40: 39.2, 36: 31.7, 32: 25.1}
    factors = [0.12, 0.18, 0.25, 0.32, 0.38, 0.44, 0.50]
    with criterion(1, "uniform budget reproduces the seven-row table within 0.1 pp") as info:
        worst = 0.0
        for value, (kept, pct) in zip(factors, expected.items()):
            r = snap_to_architecture(uniform_factors(VDSR, value), VDSR, 4)
            assert kept_counts(VDSR, r)[:-1] == [kept] * 19
            got = 100 * weights_remained(VDSR, r)
            worst = max(worst, abs(got - pct))
            assert abs(got - pct) <= 0.1, (kept, got, pct)
        info["info"] = f"max error {worst:.3f} pp"


def test_criterion_02_segment_budget_table():
    rows = [
        ((0.25, 0.25, 0.25), 56.3),
        ((0.44, 0.18, 0.18), 55.4),
        ((0.44, 0.12, 0.25), 56.4),
        ((0.12, 0.18, 0.44), 58.6),
        ((0.18, 0.18, 0.38), 57.7),
        ((0.25, 0.44, 0.06), 55.9),
        ((0.18, 0.44, 0.12), 55.5),
    ]
    split = SegmentSplit(6, 7, 7)
    with criterion(2, "segment budgets under split (6,7,7) within 0.2 pp") as info:
        worst = 0.0
        for (front, middle, end), pct in rows:
            r = split.expand(front, middle, end)
            r[-1] = 0.0
            r = snap_to_architecture(r, VDSR, 4)
            got = 100 * weights_remained(VDSR, r)
            worst = max(worst, abs(got - pct))
            assert abs(got - pct) <= 0.2, ((front, middle, end), got, pct)
        info["info"] = f"max error {worst:.3f} pp"


def _direct_count(spec, r):
    kept = kept_counts(spec, r)
    total = 0
    prev = None
    for (n, c, h, w), k in zip(spec.layers, kept):
        total += k * (c if prev is None else prev) * h * w
        prev = k
    return total


def test_criterion_03_budget_matches_direct_count():
    rng = np.random.default_rng(3)
    with criterion(3, "budget numerator equals direct surviving-weight count on 100 specs"):
        for _ in range(100):
            depth = int(rng.integers(2, 9))
            channels = [int(rng.integers(1, 4))] + [int(rng.integers(1, 33)) for _ in range(depth)]
            ksize = int(rng.choice([1, 3, 5]))
            spec = NetworkSpec(tuple((channels[i + 1], channels[i], ksize, ksize) for i in range(depth)))
            multiple = int(rng.choice([1, 2, 4]))
            r = rng.uniform(0, 0.9, size=depth)
            r = snap_to_architecture(r, spec, multiple)
            count = remained_weight_count(spec, r)
            assert count == _direct_count(spec, r)
            assert weights_remained(spec, r) == count / spec.total_weights


def test_criterion_04_sparsity_oracle_and_scale_invariance():
    rng = np.random.default_rng(4)
    with criterion(4, "kernel sparsity matches a float64 oracle on 50 layers; scale invariant"):
        for _ in range(50):
            n, c = int(rng.integers(1, 17)), int(rng.integers(1, 9))
            kernels = rng.normal(0, rng.uniform(0.01, 2), size=(n, c, 3, 3)).astype(np.float32)
            kernels[rng.random(kernels.shape) < 0.2] = 0.0
            ref = kernels.astype(np.float64)
            mean = float(np.mean(np.abs(ref)))
            assert abs(layer_mean_abs(kernels) - mean) <= 1e-6 * max(1.0, mean)
            report = build_report(kernels)
            for k in range(n):
                oracle = sum(1 for v in ref[k].ravel() if abs(v) < mean) / ref[k].size
                assert abs(report.sparsity_of(k) - oracle) <= 1e-6
                assert abs(kernel_sparsity(kernels, k, layer_mean_abs(kernels)) - oracle) <= 1e-6
            scale = 2.0 ** int(rng.integers(-4, 5))
            scaled = build_report(kernels * np.float32(scale))
            assert scaled.entries == report.entries
            # indicator level: every weight keeps its below-mean status
            m2 = layer_mean_abs(kernels * np.float32(scale))
            assert np.array_equal(np.abs(ref) < mean, np.abs(ref * scale) < m2)


def test_criterion_05_zero_kernel_removal():
    rng = np.random.default_rng(5)
    with criterion(5, "removing all-zero kernels leaves output unchanged on 20 inputs") as info:
        worst = 0.0
        for trial in range(20):
            net = random_net(rng, [1, 8, 8, 6, 1], residual=bool(trial % 2))
            zeroed = []
            for l, layer in enumerate(net.layers[:-1]):
                k = int(rng.integers(layer.n_kernels))
                layer.kernels[k] = 0.0
                layer.bias[k] = 0.0
                zeroed.append(k)
            plan = plan_from_factors(net, np.zeros(len(net)))
            kept = [tuple(i for i in idx if l == len(net) - 1 or i != zeroed[l])
                    for l, idx in enumerate(plan.kept)]
            pruned = apply_plan(net, type(plan)(tuple(kept)))
            x = rng.uniform(0, 1, size=(2, 1, 10, 10)).astype(np.float32)
            diff = float(np.max(np.abs(network_forward(net, x) - network_forward(pruned, x))))
            worst = max(worst, diff)
            assert diff <= 1e-6
        info["info"] = f"max abs diff {worst:.2e}"


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def test_criterion_06_gradient_checks():
    rng = np.random.default_rng(6)
    with criterion(6, "conv and surrogate gradients match central differences within 1e-4") as info:
        net = random_net(rng, [1, 4, 3, 1], residual=True, dtype=np.float64)
        x = rng.uniform(0, 1, size=(2, 1, 6, 6))
        y = rng.uniform(0, 1, size=(2, 1, 6, 6))
        _, grads = loss_and_gradients(net, (x, y))
        eps = 1e-6
        worst = 0.0
        for arr, grad in zip(net.parameters(), grads):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                up, _ = loss_and_gradients(net, (x, y))
                flat[idx] = orig - eps
                down, _ = loss_and_gradients(net, (x, y))
                flat[idx] = orig
                err = _rel_err((up - down) / (2 * eps), gflat[idx])
                worst = max(worst, err)
                assert err <= 1e-4
        X = rng.uniform(0, 0.5, size=(40, 5))
        t = np.tanh(X @ rng.normal(size=5))
        model = SurrogateRegressor("mlp", hidden=8, epochs=300, seed=1).fit(X, t)
        for _ in range(5):
            r = rng.uniform(0, 0.5, size=5)
            g = model.input_gradient(r)
            for j in range(5):
                e = np.zeros(5)
                e[j] = 1e-6
                fd = (model.predict_one(r + e) - model.predict_one(r - e)) / 2e-6
                err = _rel_err(fd, g[j])
                worst = max(worst, err)
                assert err <= 1e-4
        info["info"] = f"max rel err {worst:.1e}"


def test_criterion_07_go_closed_loop_on_mock():
    with criterion(7, "GO pipeline hits a 0.1 target within margin plus snap granularity") as info:
        net = build_toy_vdsr(8, 32, seed=1)
        cfg = GoConfig(0.1)
        result = run_go(net, cfg, DataConfig(n_samples=32, seed=3), mean_factor_harness)
        granularity = float(np.mean([4 / layer.n_kernels for layer in net.layers[:-1]]))
        err = abs(result.achieved - 0.1)
        info["info"] = f"achieved {result.achieved:.4f}, allowed error {cfg.margin + granularity:.4f}"
        assert err <= cfg.margin + granularity


def test_criterion_08_planted_surrogate_recovery():
    rng = np.random.default_rng(8)
    with criterion(8, "linear surrogate recovers planted coefficients within 1e-3") as info:
        w = rng.uniform(-1, 1, size=6)
        X = rng.uniform(0, 0.5, size=(64, 6))
        y = X @ w + 0.2
        model = train_regression([TrainingPair(a, b) for a, b in zip(X, y)], "linear", epochs=5000, seed=0)
        err = float(np.max(np.abs(model.coef_ - w)))
        info["info"] = f"max coef error {err:.1e}, mse {model.final_loss_:.1e}"
        assert err <= 1e-3
        assert abs(model.intercept_ - 0.2) <= 1e-3
        assert model.final_loss_ < 1e-6


@pytest.mark.slow
def test_criterion_09_toy_premise():
    with criterion(9, "toy 6x16 net: fine-tuning helps, heavier pruning hurts more") as info:
        start = time.perf_counter()
        ds = generate_dataset(DatasetSpec(n_images=32, patch=16, seed=0))
        base, _ = fine_tune(build_toy_vdsr(6, 16, seed=0), ds, epochs=60, lr=0.05)
        harness = SRHarness(base, ds, epochs=20, lr=0.02)
        drops = {}
        for value in (0.25, 0.5):
            pruned, _, _ = prune(base, uniform_factors(base, value), multiple=4)
            tuned = harness(pruned)
            drops[value] = (harness.last_untuned.drop, tuned)
            assert tuned < harness.last_untuned.drop, (value, drops[value])
        assert drops[0.5][1] >= drops[0.25][1] - 0.05
        assert time.perf_counter() - start <= 300
        info["info"] = ", ".join(f"r={v}: {u:.3f} -> {t:.3f} dB" for v, (u, t) in drops.items())


RUN_ARGS = ["--images", "16", "--patch", "16", "--depth", "6", "--width", "16",
            "--pretrain-epochs", "20", "--seed", "3"]


@pytest.mark.slow
def test_criterion_10_determinism(tmp_path):
    with criterion(10, "repeated lwp and go runs give byte-identical CSV reports"):
        reports = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main(["lwp", *RUN_ARGS, "--budget", "0.6", "--candidates", "0.25,0.5",
                         "--out", str(out)]) == 0
            assert main(["go", *RUN_ARGS, "--samples", "8", "--surrogate-epochs", "500",
                         "--target-drop", "0.3", "--out", str(out)]) == 0
            reports.append([(out / name).read_bytes()
                            for name in ("lwp_report.csv", "go_pairs.csv", "go_trajectory.csv")])
        assert reports[0] == reports[1]


def test_criterion_11_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    with criterion(11, "checkpoint write-read-write is bit-identical on 20 networks"):
        for i in range(20):
            widths = [int(rng.integers(1, 4))] + [int(rng.integers(1, 9)) for _ in range(int(rng.integers(1, 6)))]
            dtype = np.float32 if i % 3 else np.float64
            residual = widths[0] == widths[-1] and bool(rng.integers(2))
            net = random_net(rng, widths, residual=residual, dtype=dtype)
            first = tmp_path / f"n{i}a.pkt"
            second = tmp_path / f"n{i}b.pkt"
            checkpoint.save(net, first)
            checkpoint.save(checkpoint.load(first), second)
            assert first.read_bytes() == second.read_bytes()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
