"""Densified heat-transfer timeline.

The objective-vs-iteration curve is refined with sliding-window barycentric
Lagrange interpolation, generated images are slotted onto the new points by
nearest predicted objective, and the six plane slices of a timeline point can
be stacked back into a sparse 3D state.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import dataset as ds
from .errors import (DomainError, IncompleteStateError, OrderingError, RangeError,
                     SingularNodeError)
from .thermal import BASE_PLANE, FIN_PLANES, PLANES

MAX_WINDOW = 8


@dataclass(frozen=True)
class LagrangeWindow:
    xs: tuple
    ys: tuple

    def __post_init__(self):
        k = len(self.xs)
        if k != len(self.ys):
            raise DomainError("node x and y counts differ")
        if not 2 <= k <= MAX_WINDOW:
            raise DomainError(f"window size {k} outside [2, {MAX_WINDOW}]")
        d = np.diff(np.asarray(self.xs, dtype=np.float64))
        if np.any(d == 0):
            raise SingularNodeError("duplicate interpolation node")
        if np.any(d < 0):
            raise OrderingError("interpolation nodes must be strictly increasing")

    @property
    def k(self) -> int:
        return len(self.xs)

    def weights(self) -> np.ndarray:
        x = np.asarray(self.xs, dtype=np.float64)
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, 1.0)
        return 1.0 / diff.prod(axis=1)


def lagrange_eval(window: LagrangeWindow, x: float) -> float:
    """Barycentric (second form) evaluation; nodes return their y exactly."""
    xs = np.asarray(window.xs, dtype=np.float64)
    ys = np.asarray(window.ys, dtype=np.float64)
    x = float(x)
    if not xs[0] <= x <= xs[-1]:
        raise RangeError(f"x={x} outside node range [{xs[0]}, {xs[-1]}]")
    hit = np.flatnonzero(xs == x)
    if hit.size:
        return float(ys[hit[0]])
    t = window.weights() / (x - xs)
    return float(np.dot(t, ys) / t.sum())


def _window_start(xs, x, k):
    i = int(np.searchsorted(xs, x))
    return min(max(i - k // 2, 0), len(xs) - k)


def _gap_counts(xs, extra):
    """Split ``extra`` inserted points across gaps in proportion to gap length."""
    gaps = np.diff(xs)
    share = gaps / gaps.sum() * extra
    base = np.floor(share).astype(np.int64)
    left = extra - int(base.sum())
    if left:
        # largest remainder first; ties go to the earlier gap
        order = sorted(range(len(gaps)), key=lambda i: (-(share[i] - base[i]), i))
        for i in order[:left]:
            base[i] += 1
    return base


@dataclass
class CurvePoint:
    pseudo_iter: float
    objective: float
    original: bool

    def __iter__(self):
        return iter((self.pseudo_iter, self.objective))


def densify_curve(samples, target_count: int, k: int = 4) -> list:
    """Refine ``samples`` [(iter, objective), ...] to ``target_count`` points.

    All original points are kept (their objectives copied, not evaluated) and
    ``target_count - len(samples)`` new points are spread evenly inside the
    gaps, each gap receiving a share proportional to its length. New points
    take the value of the degree-(k-1) interpolant through the k nearest
    original nodes.
    """
    pts = [(float(a), float(b)) for a, b in samples]
    if not 2 <= k <= MAX_WINDOW:
        raise DomainError(f"window size {k} outside [2, {MAX_WINDOW}]")
    if len(pts) < k:
        raise DomainError(f"need at least k={k} samples, got {len(pts)}")
    if target_count < len(pts):
        raise DomainError(f"target_count {target_count} below sample count {len(pts)}")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(np.diff(xs) <= 0):
        raise OrderingError("sample iterations must be strictly increasing")
    counts = _gap_counts(xs, target_count - len(pts))
    out = []
    for i in range(len(xs)):
        out.append(CurvePoint(xs[i], ys[i], True))
        if i == len(xs) - 1:
            break
        m = int(counts[i])
        for j in range(1, m + 1):
            x = xs[i] + (xs[i + 1] - xs[i]) * j / (m + 1)
            s = _window_start(xs, x, k)
            w = LagrangeWindow(tuple(xs[s:s + k]), tuple(ys[s:s + k]))
            out.append(CurvePoint(x, lagrange_eval(w, x), False))
    return out


def greedy_match(targets, values):
    """Pair targets with values, smallest |difference| first, each used once.

    Returns ``assign`` with ``assign[i]`` the value index given to target i
    (-1 if none). Runs on the merged sorted order: the globally closest
    remaining (target, value) pair is always adjacent there, so only
    neighbours need to enter the heap.
    """
    targets = np.asarray(targets, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    nt = len(targets)
    # node j is (keys[j], kind[j], ids[j]); kind 0 = target, 1 = value
    keys = np.concatenate([targets, values])
    kind = np.concatenate([np.zeros(nt, np.int8), np.ones(len(values), np.int8)])
    ids = np.concatenate([np.arange(nt), np.arange(len(values))])
    order = np.lexsort((ids, kind, keys))
    n = len(order)
    prev = np.arange(-1, n - 1)
    nxt = np.arange(1, n + 1)
    nxt[-1:] = -1
    alive = np.ones(n, bool)

    def pair(a, b):
        oa, ob = order[a], order[b]
        if kind[oa] == kind[ob]:
            return None
        t, v = (oa, ob) if kind[oa] == 0 else (ob, oa)
        return (abs(keys[oa] - keys[ob]), int(ids[t]), int(ids[v]), a, b)

    heap = [p for a in range(n - 1) if (p := pair(a, a + 1)) is not None]
    heapq.heapify(heap)
    assign = np.full(nt, -1, dtype=np.int64)
    while heap:
        _, ti, vi, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b] and nxt[a] == b):
            continue
        assign[ti] = vi
        alive[a] = alive[b] = False
        pa, nb = prev[a], nxt[b]
        if pa >= 0:
            nxt[pa] = nb
        if nb >= 0:
            prev[nb] = pa
        if pa >= 0 and nb >= 0 and (p := pair(pa, nb)) is not None:
            heapq.heappush(heap, p)
    return assign


@dataclass
class TimelinePoint:
    pseudo_iter: float
    objective: float
    source: str  # "original" or "generated"
    image_ref: dict = field(default_factory=dict)  # plane -> path or pool index
    residual: dict = field(default_factory=dict)  # plane -> |pred - objective|


@dataclass
class Placement:
    points: list
    gaps: list  # (timeline index, plane) pairs left unfilled

    def residuals(self) -> np.ndarray:
        return np.array([r for p in self.points if p.source == "generated"
                         for r in p.residual.values() if not math.isnan(r)])


def place_generated(curve, fin_preds, base_preds, original_refs=None,
                    fin_refs=None, base_refs=None) -> Placement:
    """Fill every interpolated curve point with generated images.

    ``fin_preds``/``base_preds`` are the regressor's predicted objectives of
    the generated fin and baseplate images. Fin planes A-E draw from the
    shared fin pool, plane F from the baseplate pool; each image is used at
    most once. ``original_refs`` maps an original pseudo_iter to its
    per-plane image paths.
    """
    if not curve:
        raise DomainError("empty curve")
    fin_refs = list(fin_refs) if fin_refs is not None else list(range(len(fin_preds)))
    base_refs = list(base_refs) if base_refs is not None else list(range(len(base_preds)))
    points = []
    open_idx = []
    for i, c in enumerate(curve):
        if c.original:
            refs = dict((original_refs or {}).get(c.pseudo_iter, {}))
            points.append(TimelinePoint(c.pseudo_iter, c.objective, "original", refs,
                                        {p: 0.0 for p in PLANES}))
        else:
            points.append(TimelinePoint(c.pseudo_iter, c.objective, "generated"))
            open_idx.append(i)
    gaps = []
    targets = np.array([curve[i].objective for i in open_idx])
    fin_slots = [(i, p) for p in FIN_PLANES for i in open_idx]
    fin_assign = greedy_match(np.tile(targets, len(FIN_PLANES)), fin_preds)
    base_assign = greedy_match(targets, base_preds)
    for (i, plane), a in zip(fin_slots, fin_assign):
        _fill(points[i], plane, a, fin_preds, fin_refs, gaps, i)
    for i, a in zip(open_idx, base_assign):
        _fill(points[i], BASE_PLANE, a, base_preds, base_refs, gaps, i)
    return Placement(points, gaps)


def place_images(curve, fin_model, fin_images, base_model, base_images, original_refs=None,
                 fin_refs=None, base_refs=None) -> Placement:
    """Score generated images with the two regressors, then :func:`place_generated`."""
    fin_preds = fin_model.predict(fin_images) if len(fin_images) else np.zeros(0)
    base_preds = base_model.predict(base_images) if len(base_images) else np.zeros(0)
    return place_generated(curve, fin_preds, base_preds, original_refs, fin_refs, base_refs)


def _fill(point, plane, a, preds, refs, gaps, i):
    if a < 0:
        point.image_ref[plane] = None
        point.residual[plane] = math.nan
        gaps.append((i, plane))
    else:
        point.image_ref[plane] = refs[a]
        point.residual[plane] = abs(float(preds[a]) - point.objective)


def image_to_slice(rgb, value_range, slice_shape, plane, solid=None) -> np.ndarray:
    """Invert rendering: (3, h, w) image -> temperature slice in solver layout."""
    lo, hi = value_range
    temps = lo + ds.decode_colors(np.moveaxis(np.asarray(rgb, dtype=np.float64), 0, -1)) * (hi - lo)
    rows, cols = (slice_shape[1], slice_shape[0])
    h, w = temps.shape
    r = (np.arange(rows) + 0.5) * h / rows - 0.5
    c = (np.arange(cols) + 0.5) * w / cols - 0.5
    rr, cc = np.meshgrid(r, c, indexing="ij")
    img = ndimage.map_coordinates(temps, [rr, cc], order=1, mode="nearest")
    out = img.T if plane == BASE_PLANE else img[::-1].T
    out = np.ascontiguousarray(out)
    if solid is not None:
        out[~solid] = np.nan
    return out


def reassemble_3d(slices: dict, shape, planes: dict) -> np.ndarray:
    """Put each plane slice back at its layer of a NaN-filled (nx, ny, nz) volume."""
    missing = [p for p in PLANES if p not in slices]
    if missing:
        raise IncompleteStateError(f"missing plane slices: {', '.join(missing)}")
    vol = np.full(tuple(shape), np.nan)
    for p in PLANES:
        axis, layer = planes[p]
        sel = [slice(None)] * 3
        sel["xyz".index(axis)] = layer
        vol[tuple(sel)] = slices[p]
    return vol


def ground_truth_at(trace, pseudo_iters) -> np.ndarray:
    """Dense per-step objective trace, linearly interpolated at fractional steps."""
    trace = np.asarray(trace, dtype=np.float64)
    return np.interp(np.asarray(pseudo_iters, dtype=np.float64), np.arange(len(trace)), trace)


def evaluation_rows(curve, trace):
    x = np.array([c.pseudo_iter for c in curve])
    rec = np.array([c.objective for c in curve])
    gt = ground_truth_at(trace, x)
    re = np.abs(rec - gt) / np.abs(gt)
    return list(zip(x, rec, gt, re))


def write_evaluation_csv(path, rows) -> float:
    """Writes ``pseudo_iter,reconstructed,ground_truth,relative_error``; returns the max RE."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pseudo_iter", "reconstructed", "ground_truth", "relative_error"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    return max(float(r[3]) for r in rows) if rows else math.nan


def write_timeline_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pseudo_iter", "objective", "source", "residual"] + [f"plane_{p}" for p in PLANES])
        for pt in points:
            res = [v for v in pt.residual.values() if not math.isnan(v)]
            w.writerow([repr(float(pt.pseudo_iter)), repr(float(pt.objective)), pt.source,
                        repr(max(res)) if res else "nan"]
                       + ["" if pt.image_ref.get(p) is None else str(pt.image_ref[p]) for p in PLANES])


def read_timeline_csv(path) -> list:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return list(r)
