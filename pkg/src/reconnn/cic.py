"""Convolution-in-convolution regressor.

Each contour image is cut into a grid of patches. Every patch runs through
its own small conv/mixed-pool stack; the per-patch feature maps are tiled
back into their grid positions and a shared head reduces them to one
scalar, the predicted peak temperature.

The per-patch stacks are realised as grouped convolutions over a
patch-major channel layout, so patch ``p`` only ever sees the filters of
group ``p``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from .errors import GridError, ShapeError, TrainingError
from .metrics import MetricsReport, regression_metrics
from .nn import checkpoint
from .nn.layers import (Conv2D, Dense, Flatten, Layer, MixedPool2D, ReLU, Sequential,
                        register)
from .nn.optim import AdamState, adam_step


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    patch_h: int
    patch_w: int

    @classmethod
    def for_image(cls, height: int, width: int, rows: int, cols: int) -> "PatchGrid":
        if rows < 1 or cols < 1 or height % rows or width % cols:
            raise GridError(f"{rows}x{cols} grid does not tile a {height}x{width} image")
        return cls(rows, cols, height // rows, width // cols)

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.rows * self.patch_h, self.cols * self.patch_w


def cut_image(image, grid: PatchGrid) -> list:
    """Row-major list of patches; the last two axes of ``image`` are (H, W)."""
    image = np.asarray(image)
    if image.shape[-2:] != grid.image_hw:
        raise GridError(f"grid {grid.rows}x{grid.cols} of {grid.patch_h}x{grid.patch_w} "
                        f"does not tile image of size {image.shape[-2:]}")
    ph, pw = grid.patch_h, grid.patch_w
    return [image[..., r * ph:(r + 1) * ph, c * pw:(c + 1) * pw].copy()
            for r in range(grid.rows) for c in range(grid.cols)]


def tile_patches(patches, grid: PatchGrid) -> np.ndarray:
    rows = [np.concatenate(patches[r * grid.cols:(r + 1) * grid.cols], axis=-1)
            for r in range(grid.rows)]
    return np.concatenate(rows, axis=-2)


@register
class PatchCut(Layer):
    """(C, H, W) -> (P*C, ph, pw), channel index ``p * C + c`` for row-major patch p."""

    kind = "patch_cut"

    def __init__(self, rows, cols):
        super().__init__()
        self.rows, self.cols = int(rows), int(cols)

    def hyper(self):
        return {"rows": self.rows, "cols": self.cols}

    def _build(self, in_shape, rng):
        c, h, w = in_shape
        g = PatchGrid.for_image(h, w, self.rows, self.cols)
        return (g.n_patches * c, g.patch_h, g.patch_w)

    def forward(self, x, train=True):
        B, C, H, W = x.shape
        R, Q = self.rows, self.cols
        y = x.reshape(B, C, R, H // R, Q, W // Q).transpose(0, 2, 4, 1, 3, 5)
        return np.ascontiguousarray(y).reshape(B, R * Q * C, H // R, W // Q), x.shape

    def backward(self, cache, dy):
        B, C, H, W = cache
        R, Q = self.rows, self.cols
        d = dy.reshape(B, R, Q, C, H // R, W // Q).transpose(0, 3, 1, 4, 2, 5)
        return np.ascontiguousarray(d).reshape(cache), {}


@register
class PatchTile(Layer):
    """(P*F, h, w) -> (F, R*h, Q*w): put each patch's features back at its grid cell."""

    kind = "patch_tile"

    def __init__(self, rows, cols):
        super().__init__()
        self.rows, self.cols = int(rows), int(cols)

    def hyper(self):
        return {"rows": self.rows, "cols": self.cols}

    def _build(self, in_shape, rng):
        pc, h, w = in_shape
        if pc % (self.rows * self.cols):
            raise ShapeError(f"{pc} channels do not split over {self.rows}x{self.cols} patches")
        return (pc // (self.rows * self.cols), self.rows * h, self.cols * w)

    def forward(self, x, train=True):
        B, PC, h, w = x.shape
        R, Q = self.rows, self.cols
        F = PC // (R * Q)
        y = x.reshape(B, R, Q, F, h, w).transpose(0, 3, 1, 4, 2, 5)
        return np.ascontiguousarray(y).reshape(B, F, R * h, Q * w), x.shape

    def backward(self, cache, dy):
        B, PC, h, w = cache
        R, Q = self.rows, self.cols
        F = PC // (R * Q)
        d = dy.reshape(B, F, R, h, Q, w).transpose(0, 2, 4, 1, 3, 5)
        return np.ascontiguousarray(d).reshape(cache), {}


@dataclass
class CicConfig:
    rows: int = 2
    cols: int = 4
    channels: tuple = (8, 16, 32)
    head_channels: int = 32
    alpha: float = 0.5
    epochs: int = 30
    batch: int = 32
    lr: float = 1e-3
    held_out: float = 0.2
    split_seed: int = 0
    seed: int = 0


def build_network(in_shape, cfg: CicConfig, seed=0) -> Sequential:
    c, h, w = in_shape
    grid = PatchGrid.for_image(h, w, cfg.rows, cfg.cols)
    P = grid.n_patches
    if P < 4 or cfg.rows > 6 or cfg.cols > 6:
        raise GridError(f"patch grid {cfg.rows}x{cfg.cols} outside the supported 4..36 patches (max 6x6)")
    layers = [PatchCut(cfg.rows, cfg.cols)]
    for ch in cfg.channels:
        layers += [Conv2D(P * ch, 3, 1, "same", groups=P), ReLU(), MixedPool2D(2, cfg.alpha)]
    layers += [PatchTile(cfg.rows, cfg.cols),
               Conv2D(cfg.head_channels, 3), ReLU(), MixedPool2D(2, cfg.alpha),
               Flatten(), Dense(1)]
    return Sequential(layers, in_shape, seed=seed)


class CicModel:
    """Network plus the label normalisation fitted on the training split."""

    def __init__(self, net: Sequential, grid: PatchGrid, lo: float, hi: float, config: CicConfig):
        self.net, self.grid, self.lo, self.hi, self.config = net, grid, float(lo), float(hi), config

    @classmethod
    def create(cls, in_shape, cfg: CicConfig, lo=0.0, hi=1.0, seed=None):
        net = build_network(in_shape, cfg, cfg.seed if seed is None else seed)
        grid = PatchGrid.for_image(in_shape[1], in_shape[2], cfg.rows, cfg.cols)
        return cls(net, grid, lo, hi, cfg)

    def scale(self, y):
        return (np.asarray(y, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def unscale(self, s):
        return self.lo + np.asarray(s, dtype=np.float64) * (self.hi - self.lo)

    def predict(self, images, batch: int = 64) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1:] != self.net.in_shape:
            raise ShapeError(f"expected images of shape (N, {self.net.in_shape}), got {images.shape}")
        out = [self.net(images[i:i + batch])[:, 0] for i in range(0, len(images), batch)]
        return self.unscale(np.concatenate(out)) if out else np.zeros(0)

    def save(self, path, extra=None):
        head, arrays = checkpoint.model_entry("cic", self.net)
        cfg = asdict(self.config)
        cfg["channels"] = list(cfg["channels"])
        header = {"model": "cic", "net": head, "config": cfg, "lo": self.lo, "hi": self.hi,
                  **(extra or {})}
        return checkpoint.save(path, header, arrays)

    @classmethod
    def load(cls, path) -> "CicModel":
        head, arrays = checkpoint.load(path)
        cfg = CicConfig(**{**head["config"], "channels": tuple(head["config"]["channels"])})
        net = Sequential.from_specs(head["net"]["specs"], head["net"]["in_shape"])
        net.load_arrays(*checkpoint.restore_arrays("cic", arrays))
        grid = PatchGrid.for_image(net.in_shape[1], net.in_shape[2], cfg.rows, cfg.cols)
        return cls(net, grid, head["lo"], head["hi"], cfg)


def cic_predict(model: CicModel, image) -> float:
    """Peak-temperature prediction for one (3, H, W) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != model.net.in_shape:
        raise ShapeError(f"image shape {image.shape} does not match model input {model.net.in_shape}")
    return float(model.predict(image[None])[0])


def split_by_snapshot(iters, held_out: float, seed: int) -> np.ndarray:
    """Boolean mask of held-out rows; whole snapshots go to one side only."""
    uniq = np.unique(np.asarray(iters))
    rng = np.random.default_rng(seed)
    n_test = int(round(held_out * len(uniq)))
    if len(uniq) > 1:
        n_test = min(max(n_test, 1), len(uniq) - 1)
    else:
        n_test = 0
    test = rng.permutation(uniq)[:n_test]
    return np.isin(iters, test)


@dataclass
class CicResult:
    model: CicModel
    report: MetricsReport
    history: list = field(default_factory=list)  # mean training loss per epoch
    test_labels: np.ndarray | None = None
    test_preds: np.ndarray | None = None
    test_ids: list = field(default_factory=list)


def fit_cic(images, labels, iters, cfg: CicConfig, keys=None, log=None) -> CicResult:
    """Train on an 80/20 by-snapshot split and report held-out metrics.

    ``keys`` (one sortable id per row, default ``(iter, index)``) fixes a
    canonical row order before the seeded shuffles, so the result does not
    depend on the order rows arrive in.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    iters = np.asarray(iters)
    if len(images) == 0:
        raise TrainingError("empty dataset")
    if not np.all(np.isfinite(labels)):
        raise TrainingError("labels must be finite")
    keys = list(keys) if keys is not None else [(int(i), n) for n, i in enumerate(iters)]
    order = sorted(range(len(keys)), key=lambda n: keys[n])
    images, labels, iters = images[order], labels[order], iters[order]
    keys = [keys[n] for n in order]

    test = split_by_snapshot(iters, cfg.held_out, cfg.split_seed)
    if not np.any(~test):
        raise TrainingError("no training rows after the split")
    Xtr, ytr = images[~test], labels[~test]
    lo, hi = float(ytr.min()), float(ytr.max())
    if hi == lo:
        # constant labels: unit span keeps the scaling invertible
        hi = lo + 1.0
    model = CicModel.create(images.shape[1:], cfg, lo, hi)
    net = model.net
    params = net.parameters()
    opt = AdamState.for_params(params, eps_lr=cfg.lr)
    target = model.scale(ytr)[:, None]
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    good = [p.copy() for p in params]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(Xtr))
        total = 0.0
        for s in range(0, len(perm), cfg.batch):
            idx = perm[s:s + cfg.batch]
            y, cache = net.forward(Xtr[idx], True)
            d = y - target[idx]
            loss = float(np.mean(d * d))
            if not np.isfinite(loss):
                for p, g in zip(params, good):
                    p[...] = g
                raise TrainingError(f"CIC loss became non-finite in epoch {epoch}",
                                    checkpoint=model)
            _, grads = net.backward(cache, 2.0 * d / d.size)
            adam_step(opt, params, grads)
            total += loss * len(idx)
        history.append(total / len(Xtr))
        good = [p.copy() for p in params]
        if log:
            log(f"cic epoch {epoch + 1}/{cfg.epochs} loss {history[-1]:.6g}")

    if np.any(test):
        yte = labels[test]
        pred = model.predict(images[test])
        ids = [keys[n] for n in np.flatnonzero(test)]
    else:
        yte, pred, ids = ytr, model.predict(Xtr), [keys[n] for n in np.flatnonzero(~test)]
    return CicResult(model, regression_metrics(yte, pred), history, yte, pred, ids)


def train_cic(manifest: ds.DatasetManifest, cfg: CicConfig, target: str = "fins",
              log=None) -> CicResult:
    """Train the fin (``target="fins"``) or baseplate (``"base"``) regressor."""
    rows = manifest.fin_rows if target == "fins" else manifest.base_rows
    if not rows:
        raise TrainingError(f"manifest has no {target} rows")
    images, obj, its = ds.load_images(manifest.root, rows)
    keys = [(int(r[1]), str(r[2])) for r in rows]
    return fit_cic(images, obj, its, cfg, keys=keys, log=log)


def default_config(target: str) -> CicConfig:
    return CicConfig(rows=2, cols=4) if target == "fins" else CicConfig(rows=3, cols=4)
