"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on the same inputs under every available backend; the
outputs are compared bit for bit before any timing is reported.
"""

import argparse
import time

import numpy as np

from reconnn import kernels
from reconnn.thermal import (
    DESK_RESOLUTION,
    MaterialSpec,
    build_geometry,
    build_operator,
    desk_geometry,
    stability_bound,
    study_bc,
)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def heat_case(n_steps=200):
    mat = MaterialSpec()
    field = build_geometry(desk_geometry(), DESK_RESOLUTION)
    op = build_operator(field, mat, study_bc(mat))
    dt = 0.95 * stability_bound(field.spacing, mat)
    T0 = field.temps.ravel()[op.index].astype(np.float64)

    def run(impl):
        T = T0.copy()
        trace = np.empty(n_steps)
        kernels.heat_advance(T, op.nbr, op.G, op.b, op.adiag, op.coef(dt), n_steps, trace, impl=impl)
        return T

    return f"heat_advance ({len(T0)} voxels x {n_steps} steps)", run


def col2im_case():
    # backward pass of a 3x3 stride-1 conv on a 32-image batch of 8x48x96 maps
    rng = np.random.default_rng(0)
    cols = rng.standard_normal((32, 8, 3, 3, 48, 96))

    def run(impl):
        return kernels.col2im(cols, 50, 98, 1, impl=impl)

    return "col2im (32x8x3x3x48x96)", run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.implementations()
    print(f"backends: {', '.join(impls)} (active: {kernels.BACKEND})")
    for label, run in (heat_case(), col2im_case()):
        results = {name: best_of(lambda m=mod: run(m), args.repeat) for name, mod in impls.items()}
        outs = [o for _, o in results.values()]
        same = all(np.array_equal(outs[0], o) for o in outs[1:])
        line = "  ".join(f"{name} {t * 1e3:9.2f} ms" for name, (t, _) in results.items())
        if "cython" in results:
            line += f"  speedup {results['python'][0] / results['cython'][0]:6.1f}x"
        print(f"{label:45s} {line}  identical={same}")


if __name__ == "__main__":
    main()
