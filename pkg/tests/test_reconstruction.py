import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reconnn.dataset import render_contour
from reconnn.errors import (DomainError, IncompleteStateError, OrderingError, RangeError,
                            SingularNodeError)
from reconnn.reconstruction import (
    LagrangeWindow,
    densify_curve,
    evaluation_rows,
    greedy_match,
    image_to_slice,
    lagrange_eval,
    place_generated,
    read_timeline_csv,
    reassemble_3d,
    write_evaluation_csv,
    write_timeline_csv,
)
from reconnn.thermal import DESK_RESOLUTION, PLANES, build_geometry, desk_geometry, slice_field


def test_parabola_example():
    w = LagrangeWindow((0.0, 1.0, 2.0), (0.0, 1.0, 4.0))
    assert lagrange_eval(w, 1.5) == pytest.approx(2.25, abs=1e-15)


def test_nodes_reproduced_exactly(rng):
    xs = tuple(np.sort(rng.uniform(0, 10, 6)))
    ys = tuple(rng.normal(size=6))
    w = LagrangeWindow(xs, ys)
    for x, y in zip(xs, ys):
        assert lagrange_eval(w, x) == y


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(2, 8))
def test_reproduces_polynomials_of_degree_below_k(seed, k):
    r = np.random.default_rng(seed)
    coef = r.normal(size=k)  # degree k-1
    xs = np.sort(r.uniform(-3, 3, k))
    if np.min(np.diff(xs)) < 1e-2:
        xs = np.linspace(-3, 3, k) + r.uniform(-0.1, 0.1, k)
    w = LagrangeWindow(tuple(xs), tuple(np.polyval(coef, xs)))
    q = np.linspace(xs[0], xs[-1], 100)
    got = np.array([lagrange_eval(w, x) for x in q])
    want = np.polyval(coef, q)
    scale = max(1.0, np.abs(want).max())
    assert np.max(np.abs(got - want)) / scale < 1e-9


def test_random_cubic_four_nodes(rng):
    coef = rng.normal(size=4)
    xs = np.array([0.0, 0.7, 1.9, 3.0])
    w = LagrangeWindow(tuple(xs), tuple(np.polyval(coef, xs)))
    q = np.linspace(0, 3, 100)
    err = max(abs(lagrange_eval(w, x) - np.polyval(coef, x)) / max(abs(np.polyval(coef, x)), 1e-300)
              for x in q if abs(np.polyval(coef, x)) > 1e-6)
    assert err < 1e-9


def test_window_errors():
    with pytest.raises(SingularNodeError):
        LagrangeWindow((0.0, 1.0, 1.0), (0.0, 1.0, 2.0))
    with pytest.raises(OrderingError):
        LagrangeWindow((0.0, 2.0, 1.0), (0.0, 1.0, 2.0))
    with pytest.raises(DomainError):
        LagrangeWindow(tuple(range(9)), tuple(range(9)))
    with pytest.raises(DomainError):
        LagrangeWindow((0.0,), (1.0,))
    with pytest.raises(RangeError):
        lagrange_eval(LagrangeWindow((0.0, 1.0), (0.0, 1.0)), 1.5)


def test_densify_identity_when_no_points_added(rng):
    samples = [(float(i * 10), float(v)) for i, v in enumerate(rng.normal(size=12))]
    out = densify_curve(samples, 12)
    assert [(p.pseudo_iter, p.objective) for p in out] == samples
    assert all(p.original for p in out)


def test_densify_passes_through_nodes_bitwise(rng):
    its = np.cumsum(rng.integers(5, 20, 40)).astype(float)
    obj = 60 + 20 * np.tanh(its / its[-1] * 3) + rng.normal(0, 1e-3, 40)
    out = densify_curve(list(zip(its, obj)), 333)
    assert len(out) == 333
    orig = [p for p in out if p.original]
    assert [p.pseudo_iter for p in orig] == list(its)
    assert [p.objective for p in orig] == list(obj)
    x = np.array([p.pseudo_iter for p in out])
    assert np.all(np.diff(x) > 0) and x[0] == its[0] and x[-1] == its[-1]


def test_densify_full_length_series():
    its = np.arange(1211) * 100.0
    obj = 90 - 65 * np.exp(-its / 3e4)
    out = densify_curve(list(zip(its, obj)), 5000)
    assert len(out) == 5000
    x = np.array([p.pseudo_iter for p in out])
    # uniform original sampling gives near-uniform spacing
    assert np.diff(x).max() / np.diff(x).min() < 1.5
    got = np.array([p.objective for p in out])
    assert np.max(np.abs(got - (90 - 65 * np.exp(-x / 3e4)))) < 1e-6


def test_densify_errors():
    s = [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)]
    with pytest.raises(OrderingError):
        densify_curve([s[0], s[2], s[1], s[3]], 10)
    with pytest.raises(DomainError):
        densify_curve(s[:3], 10, k=4)
    with pytest.raises(DomainError):
        densify_curve(s, 3)
    with pytest.raises(DomainError):
        densify_curve(s * 3, 30, k=9)


def brute_greedy(targets, values):
    """Repeatedly take the globally closest unused (target, value) pair."""
    assign = [-1] * len(targets)
    free_t, free_v = set(range(len(targets))), set(range(len(values)))
    while free_t and free_v:
        _, ti, vi = min((abs(targets[t] - values[v]), t, v) for t in free_t for v in free_v)
        assign[ti] = vi
        free_t.remove(ti)
        free_v.remove(vi)
    return assign


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), nt=st.integers(0, 25), nv=st.integers(0, 25))
def test_greedy_match_matches_brute_force(seed, nt, nv):
    r = np.random.default_rng(seed)
    t, v = r.uniform(0, 1, nt), r.uniform(0, 1, nv)
    got = greedy_match(t, v)
    assert list(got) == brute_greedy(list(t), list(v))
    used = got[got >= 0]
    assert len(set(used.tolist())) == len(used) == min(nt, nv)


def _curve(n_orig=5, extra=8):
    its = np.arange(n_orig) * 10.0
    return densify_curve(list(zip(its, 50 + its)), n_orig + extra)


def test_perfect_matches_give_zero_residual(rng):
    curve = _curve()
    targets = np.array([c.objective for c in curve if not c.original])
    fin = rng.permutation(np.tile(targets, 5))
    base = rng.permutation(targets)
    pl = place_generated(curve, fin, base)
    assert pl.gaps == []
    assert np.all(pl.residuals() == 0.0)
    refs = [p.image_ref[pl_] for p in pl.points if p.source == "generated" for pl_ in "ABCDE"]
    assert len(set(refs)) == len(refs)


def test_one_image_two_points_fills_one():
    curve = densify_curve([(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)], 6)
    pl = place_generated(curve, np.array([1.4]), np.array([2.6]))
    filled = [(i, p) for i, pt in enumerate(pl.points) for p, ref in pt.image_ref.items()
              if pt.source == "generated" and ref is not None]
    assert len(filled) == 2  # one fin slot and one baseplate slot
    assert len(pl.gaps) == 2 * 6 - 2
    again = place_generated(curve, np.array([1.4]), np.array([2.6]))
    assert [p.image_ref for p in again.points] == [p.image_ref for p in pl.points]
    with pytest.raises(DomainError):
        place_generated([], np.zeros(1), np.zeros(1))


@pytest.fixture
def random_field(rng):
    f = build_geometry(desk_geometry(), DESK_RESOLUTION)
    f.temps[...] = rng.uniform(25, 90, f.shape)
    return f


def test_reassemble_round_trips_slices(random_field):
    f = random_field
    slices = {p: slice_field(f, p) for p in PLANES}
    vol = reassemble_3d(slices, f.shape, f.planes)
    for p in PLANES:
        axis, layer = f.planes[p]
        sel = [slice(None)] * 3
        sel["xyz".index(axis)] = layer
        sel = tuple(sel)
        assert np.array_equal(vol[sel], np.where(f.solid_mask[sel], f.temps[sel], np.nan),
                              equal_nan=True)
    layered = np.zeros(f.shape, bool)
    for axis, layer in f.planes.values():
        sel = [slice(None)] * 3
        sel["xyz".index(axis)] = layer
        layered[tuple(sel)] = True
    assert np.all(np.isnan(vol[~layered]))
    del slices["C"]
    with pytest.raises(IncompleteStateError, match="C"):
        reassemble_3d(slices, f.shape, f.planes)


@pytest.mark.parametrize("plane", ["A", "F"])
def test_image_to_slice_inverts_rendering(plane):
    nx, nm = 16, 10
    s = 30 + 40 * np.add.outer(np.linspace(0, 1, nx), np.linspace(0, 0.5, nm))
    img = render_contour(s, (30.0, 90.0), (nx * 6, nm * 6), plane=plane)
    back = image_to_slice(np.moveaxis(img, -1, 0), (30.0, 90.0), s.shape, plane)
    assert back.shape == s.shape
    # colour quantisation plus edge clamping of the resampling
    assert np.max(np.abs(back - s)) < 0.5


def test_evaluation_and_timeline_csv(tmp_path):
    trace = 50 + np.arange(31.0)  # linear ground truth
    curve = densify_curve([(0.0, 50.0), (10.0, 60.0), (20.0, 70.0), (30.0, 80.0)], 13)
    rows = evaluation_rows(curve, trace)
    worst = write_evaluation_csv(tmp_path / "e.csv", rows)
    assert worst < 1e-12
    with open(tmp_path / "e.csv") as fh:
        body = list(csv.reader(fh))
    assert body[0] == ["pseudo_iter", "reconstructed", "ground_truth", "relative_error"]
    assert max(float(r[3]) for r in body[1:]) == worst
    pl = place_generated(curve, np.full(45, 55.0), np.full(9, 55.0))
    write_timeline_csv(tmp_path / "t.csv", pl.points)
    back = read_timeline_csv(tmp_path / "t.csv")
    assert len(back) == 13
    assert [r["source"] for r in back][:2] == ["original", "generated"]
    assert list(back[0]) == ["pseudo_iter", "objective", "source", "residual"] + \
        [f"plane_{p}" for p in PLANES]
