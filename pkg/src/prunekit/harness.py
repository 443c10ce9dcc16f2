"""Toy super-resolution environment used to score pruned networks.

Images are smooth random fields (sums of seeded 2-D sinusoids) normalized to
[0, 1].  The network input is the image after a 2x box downsample and a
bilinear 2x upsample back to full size; the target is the clean image.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ShapeError
from .network import ConvLayer, Network, backward_and_step, network_forward, psnr

logger = logging.getLogger(__name__)

DEGRADATIONS = ("downsample2x_then_bilinear",)


@dataclass(frozen=True)
class DatasetSpec:
    n_images: int = 32
    patch: int = 16
    seed: int = 0
    degradation: str = "downsample2x_then_bilinear"
    test_fraction: float = 0.25
    n_waves: int = 4

    def __post_init__(self):
        if self.patch < 8 or self.patch % 2:
            raise ValueError(f"patch must be an even integer >= 8, got {self.patch}")
        if self.n_images < 2:
            raise ValueError("need at least two images for a train/test split")
        if self.degradation not in DEGRADATIONS:
            raise ValueError(f"unknown degradation {self.degradation!r}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")

    def key(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SRDataset:
    lowres: np.ndarray
    highres: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def train(self):
        return self.lowres[self.train_idx], self.highres[self.train_idx]

    @property
    def test(self):
        return self.lowres[self.test_idx], self.highres[self.test_idx]


@dataclass(frozen=True)
class HarnessResult:
    baseline_psnr: float
    pruned_psnr: float
    drop: float

    def to_dict(self):
        return asdict(self)


def box_downsample2x(img):
    h, w = img.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"image extent must be even, got {h}x{w}")
    return img.reshape(*img.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def _bilinear_axis(n_out):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0, n_out // 2 - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_out // 2 - 1)
    return lo, hi, src - lo


def bilinear_upsample2x(img):
    h, w = img.shape[-2:]
    y0, y1, fy = _bilinear_axis(2 * h)
    x0, x1, fx = _bilinear_axis(2 * w)
    rows = img[..., y0, :] * (1 - fy)[:, None] + img[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def degrade(img):
    return bilinear_upsample2x(box_downsample2x(img)).astype(np.float32)


def sinusoid_image(rng, patch, n_waves=4):
    yy, xx = np.mgrid[0:patch, 0:patch] / patch
    img = np.zeros((patch, patch))
    for _ in range(n_waves):
        fy, fx = rng.uniform(0.5, patch / 4, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.full_like(img, 0.5)
    return img.astype(np.float32)


def _split(n, test_fraction, seed):
    order = np.random.default_rng([seed, 1]).permutation(n)
    n_test = max(1, min(n - 1, int(math.ceil(n * test_fraction))))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def dataset_from_images(images, test_fraction=0.25, seed=0):
    """Pair each clean ``(h, w)`` image in [0, 1] with its degraded version."""
    high = np.stack([np.asarray(img, dtype=np.float32) for img in images])[:, None]
    low = np.stack([degrade(img[0]) for img in high])[:, None]
    train_idx, test_idx = _split(len(high), test_fraction, seed)
    return SRDataset(low, high, train_idx, test_idx)


def generate_dataset(spec=None, cache_dir=None):
    """Synthesize a paired ``(lowres, highres)`` dataset, deterministic in ``spec.seed``."""
    spec = spec or DatasetSpec()
    path = None
    if cache_dir is not None:
        path = os.path.join(cache_dir, f"sr-{spec.key()}.npz")
        if os.path.exists(path):
            with np.load(path) as data:
                return SRDataset(*(data[k] for k in ("lowres", "highres", "train_idx", "test_idx")))
    rng = np.random.default_rng(spec.seed)
    images = [sinusoid_image(rng, spec.patch, spec.n_waves) for _ in range(spec.n_images)]
    ds = dataset_from_images(images, spec.test_fraction, spec.seed)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(path, lowres=ds.lowres, highres=ds.highres,
                 train_idx=ds.train_idx, test_idx=ds.test_idx)
    return ds


def read_pgm(path):
    """Read a binary (P5) 8-bit PGM file into a float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos + 1)
    return (pixels.reshape(height, width) / maxval).astype(np.float32)


def load_image_dir(directory, patch=16, test_fraction=0.25, seed=0):
    """Cut non-overlapping ``patch``-sized crops from every ``*.pgm`` in ``directory``."""
    crops = []
    for name in sorted(os.listdir(directory)):
        if not name.lower().endswith(".pgm"):
            continue
        img = read_pgm(os.path.join(directory, name))
        for y in range(0, img.shape[0] - patch + 1, patch):
            for x in range(0, img.shape[1] - patch + 1, patch):
                crops.append(img[y:y + patch, x:x + patch])
    if len(crops) < 2:
        raise ValueError(f"{directory}: need at least two {patch}x{patch} crops")
    return dataset_from_images(crops, test_fraction, seed)


def build_toy_vdsr(depth=6, width=16, seed=0, channels=1):
    """VDSR-shaped residual net: ``channels -> width``, ``depth - 2`` hidden, ``width -> channels``."""
    if depth < 2 or width < 2:
        raise ShapeError(f"need depth >= 2 and width >= 2, got depth={depth}, width={width}")
    rng = np.random.default_rng(seed)
    dims = [(width, channels)] + [(width, width)] * (depth - 2) + [(channels, width)]
    layers = []
    for i, (n, c) in enumerate(dims):
        last = i == depth - 1
        std = 1e-3 if last else math.sqrt(2.0 / (9 * c))
        kernels = rng.normal(0.0, std, size=(n, c, 3, 3)).astype(np.float32)
        layers.append(ConvLayer(kernels, np.zeros(n, np.float32), "identity" if last else "relu"))
    return Network(layers, residual=True)


def mean_psnr(net, lowres, highres):
    out = network_forward(net, lowres)
    return float(np.mean([psnr(o, h) for o, h in zip(out, highres)]))


def evaluate(net_baseline, net_pruned, dataset):
    low, high = dataset.test
    base = mean_psnr(net_baseline, low, high)
    pruned = mean_psnr(net_pruned, low, high)
    return HarnessResult(base, pruned, base - pruned)


def fine_tune(net, dataset, epochs=3, lr=1e-3, batch_size=None):
    """Run ``epochs`` passes of SGD over the training split on a copy of ``net``.

    Returns ``(tuned_net, losses)`` with one pre-step loss per update.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    tuned = net.copy()
    low, high = dataset.train
    n = len(low)
    step = batch_size or n
    losses = []
    for _ in range(epochs):
        for start in range(0, n, step):
            batch = (low[start:start + step], high[start:start + step])
            losses.append(backward_and_step(tuned, batch, lr))
    return tuned, losses


class SRHarness:
    """Callback scoring a pruned network by its PSNR drop after fine-tuning.

    ``harness(pruned_net, r)`` fine-tunes a copy of ``pruned_net`` and returns
    the test-set PSNR drop against ``baseline``.  The last result (before and
    after fine-tuning) is kept on ``last_result`` and ``last_untuned``.
    """

    def __init__(self, baseline, dataset, epochs=3, lr=1e-3, batch_size=None):
        self.baseline = baseline
        self.dataset = dataset
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.last_network = None
        self.last_result = None
        self.last_untuned = None

    def __call__(self, pruned, r=None):
        self.last_untuned = evaluate(self.baseline, pruned, self.dataset)
        tuned, _ = fine_tune(pruned, self.dataset, self.epochs, self.lr, self.batch_size)
        self.last_network = tuned
        self.last_result = evaluate(self.baseline, tuned, self.dataset)
        return self.last_result.drop

    def tune(self, pruned):
        """Fine-tune ``pruned`` the same way the callback does."""
        tuned, _ = fine_tune(pruned, self.dataset, self.epochs, self.lr, self.batch_size)
        return tuned


def mean_factor_harness(pruned, r):
    """Closed-form stand-in scorer: the drop equals ``mean(r)``."""
    return float(np.mean(r))
