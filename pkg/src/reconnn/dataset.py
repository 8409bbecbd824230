"""Contour rendering, PNG dataset export and loading."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import RangeError, ReconError
from .thermal import BASE_PLANE, FIN_PLANES

# blue -> cyan -> green -> yellow -> red
_CMAP_POS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_CMAP_RGB = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, 0.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
])

FIN_IMAGE_SIZE = (96, 48)  # (width, height)
BASE_IMAGE_SIZE = (96, 72)
MANIFEST_HEADER = ["path", "iter", "plane", "objective"]


def colormap(u: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB through the fixed piecewise-linear colormap."""
    u = np.clip(u, 0.0, 1.0)
    return np.stack([np.interp(u, _CMAP_POS, _CMAP_RGB[:, ch]) for ch in range(3)], axis=-1)


_LUT_U = np.linspace(0.0, 1.0, 4081)
_LUT_RGB = colormap(_LUT_U)


def decode_colors(rgb: np.ndarray) -> np.ndarray:
    """Approximate inverse of :func:`colormap` (nearest colour on the path)."""
    flat = rgb.reshape(-1, 3)
    out = np.empty(len(flat))
    for start in range(0, len(flat), 4096):
        chunk = flat[start:start + 4096]
        d = ((chunk[:, None, :] - _LUT_RGB[None, :, :]) ** 2).sum(-1)
        out[start:start + 4096] = _LUT_U[np.argmin(d, axis=1)]
    return out.reshape(rgb.shape[:-1])


def image_orientation(slice2d: np.ndarray, plane: str) -> np.ndarray:
    """Rows/cols as displayed: fins show z upward with x across, the baseplate y down x across."""
    if plane == BASE_PLANE:
        return slice2d.T
    return slice2d.T[::-1]


def _lerp_axis(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    # a + t * (b - a) keeps constant fields exactly constant
    n = values.shape[axis]
    c = np.clip(coords, 0.0, n - 1)
    i0 = np.minimum(np.floor(c).astype(np.int64), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    t = c - i0
    a = np.take(values, i0, axis=axis)
    b = np.take(values, i1, axis=axis)
    shape = [1, 1]
    shape[axis] = -1
    return a + t.reshape(shape) * (b - a)


def _resample(values: np.ndarray, size, order: int) -> np.ndarray:
    """Resample to (h, w) with pixel-centre alignment and edge clamping.

    ``order`` 1 is bilinear, 0 nearest-neighbour.
    """
    w, h = size
    rows, cols = values.shape
    r = (np.arange(h) + 0.5) * rows / h - 0.5
    c = (np.arange(w) + 0.5) * cols / w - 0.5
    if order == 0:
        ri = np.clip(np.floor(r + 0.5), 0, rows - 1).astype(np.int64)
        ci = np.clip(np.floor(c + 0.5), 0, cols - 1).astype(np.int64)
        return values[np.ix_(ri, ci)]
    return _lerp_axis(_lerp_axis(values, r, 0), c, 1)


def render_contour(slice2d: np.ndarray, value_range, size, plane: str = "A") -> np.ndarray:
    """Render one temperature slice to an (h, w, 3) float image in [0, 1].

    ``slice2d`` is in solver layout (see :func:`reconnn.thermal.slice_field`);
    NaN marks void voxels, which render white.
    """
    t_min, t_max = (float(v) for v in value_range)
    if not t_max > t_min:
        raise RangeError(f"degenerate colour range ({t_min}, {t_max})")
    img = image_orientation(np.asarray(slice2d, dtype=np.float64), plane)
    void = np.isnan(img)
    filled = np.where(void, t_min, img)
    vals = _resample(filled, size, order=1)
    rgb = colormap((vals - t_min) / (t_max - t_min))
    if void.any():
        rgb[_resample(void.astype(np.float64), size, order=0) > 0.5] = 1.0
    return rgb


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: Path, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(rgb)).save(path, format="PNG")


def load_png(path: Path) -> np.ndarray:
    """(3, h, w) float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


@dataclass
class DatasetManifest:
    root: Path
    fin_rows: list  # (path, iter, plane, objective)
    base_rows: list
    value_range: tuple

    @property
    def fin_csv(self) -> Path:
        return self.root / "fins.csv"

    @property
    def base_csv(self) -> Path:
        return self.root / "base.csv"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_manifest(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for p, it, plane, obj in rows:
            w.writerow([p, int(it), plane, _fmt(obj)])


def read_manifest(path: Path) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != MANIFEST_HEADER:
            raise ReconError(f"{path}: unexpected manifest header {header}")
        return [(p, int(it), plane, float(obj)) for p, it, plane, obj in r]


def series_range(snapshots) -> tuple[float, float]:
    lo, hi = np.inf, -np.inf
    for s in snapshots:
        for arr in s.slices.values():
            lo = min(lo, float(np.nanmin(arr)))
            hi = max(hi, float(np.nanmax(arr)))
    return lo, hi


def export_dataset(snapshots, out_dir, value_range=None, fin_size=FIN_IMAGE_SIZE,
                   base_size=BASE_IMAGE_SIZE) -> DatasetManifest:
    """Write one PNG per (snapshot, plane) plus ``fins.csv`` and ``base.csv``."""
    out = Path(out_dir)
    try:
        (out / "fins").mkdir(parents=True, exist_ok=True)
        (out / "base").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    rng = tuple(value_range) if value_range is not None else series_range(snapshots)
    fin_rows, base_rows = [], []
    for s in snapshots:
        for plane in FIN_PLANES + (BASE_PLANE,):
            if plane not in s.slices:
                continue
            is_base = plane == BASE_PLANE
            rel = f"{'base' if is_base else 'fins'}/it{s.iter:07d}_{plane}.png"
            img = render_contour(s.slices[plane], rng, base_size if is_base else fin_size, plane)
            try:
                save_png(out / rel, img)
            except OSError as exc:
                raise OSError(f"failed writing {out / rel}: {exc}") from exc
            (base_rows if is_base else fin_rows).append((rel, s.iter, plane, s.objective))
    manifest = DatasetManifest(out, fin_rows, base_rows, rng)
    write_manifest(manifest.fin_csv, fin_rows)
    write_manifest(manifest.base_csv, base_rows)
    with open(out / "dataset.json", "w") as fh:
        json.dump({"value_range": [_fmt(v) for v in rng], "snapshots": len(snapshots),
                   "fin_size": list(fin_size), "base_size": list(base_size)}, fh, indent=1,
                  sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    with open(root / "dataset.json") as fh:
        meta = json.load(fh)
    return DatasetManifest(root, read_manifest(root / "fins.csv"), read_manifest(root / "base.csv"),
                           tuple(float(v) for v in meta["value_range"]))


def load_images(root, rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack the images of ``rows``: returns (images (N,3,h,w), objectives, iters)."""
    root = Path(root)
    imgs = np.stack([load_png(root / p) for p, *_ in rows]) if rows else np.zeros((0, 3, 1, 1))
    obj = np.array([r[3] for r in rows], dtype=np.float64)
    its = np.array([r[1] for r in rows], dtype=np.int64)
    return imgs, obj, its
