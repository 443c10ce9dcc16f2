import sys

import numpy as np
import pytest

from prunekit.network import ConvLayer, Network


def naive_conv(x, kernels, bias, relu=False):
    """Nested-loop 3x3 cross-correlation with zero padding 1, in float64."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    n_img, c_in, h, w = x.shape
    n_out = kernels.shape[0]
    out = np.zeros((n_img, n_out, h, w))
    for b in range(n_img):
        for k in range(n_out):
            for i in range(h):
                for j in range(w):
                    acc = float(bias[k])
                    for c in range(c_in):
                        for dy in range(3):
                            for dx in range(3):
                                y, xx = i + dy - 1, j + dx - 1
                                if 0 <= y < h and 0 <= xx < w:
                                    acc += x[b, c, y, xx] * kernels[k, c, dy, dx]
                    out[b, k, i, j] = max(acc, 0.0) if relu else acc
    return out


def random_net(rng, widths, residual=True, dtype=np.float32, scale=0.3):
    """Random sequential net; ``widths`` lists channel counts, e.g. [1, 4, 3, 1]."""
    layers = []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        kernels = rng.normal(0, scale, size=(widths[i + 1], widths[i], 3, 3)).astype(dtype)
        bias = rng.normal(0, 0.1, size=widths[i + 1]).astype(dtype)
        layers.append(ConvLayer(kernels, bias, "identity" if last else "relu"))
    return Network(layers, residual=residual)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
