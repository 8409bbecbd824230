"""Acceptance suite: one test and one PASS/FAIL line per headline criterion.

The desk-scale criteria share a session fixture that runs the full desk
pipeline twice into fresh directories; expect roughly half an hour on one core.
"""

import csv
import math
import time

import numpy as np
import pytest

from conftest import block_field
from test_metrics import brute_inception, brute_regression
from test_nn import GRAD_CASES
from reconnn import cli
from reconnn import cwgan as cw
from reconnn import nn
from reconnn.cic import CicConfig, build_network
from reconnn.config import load_config
from reconnn.dataset import FIN_IMAGE_SIZE, load_png
from reconnn.metrics import inception_score, read_metrics_csv, regression_metrics
from reconnn.reconstruction import LagrangeWindow, densify_curve, lagrange_eval
from reconnn.thermal import (
    BoundaryCondition,
    GeometrySpec,
    MaterialSpec,
    SolverConfig,
    build_geometry,
    energy_balance,
    solve_to_steady,
    stability_bound,
    steady_state,
    step_explicit,
    study_bc,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for a criterion, then fail the test if any check failed."""

    def report(name, checks, detail=""):
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}  {detail}"
                  + (f"  failed: {', '.join(failed)}" if failed else ""))
        assert ok, f"{name}: {failed}"

    return report


# --- criteria that need no pipeline run -------------------------------------

def test_solver_physics(verdict):
    t0 = time.perf_counter()
    # straight pin fin, 512 cells: Dirichlet base, Robin sides and tip
    n, length, side = 512, 0.1, 0.002
    lam, h, t_f, t_b = 96.0, 30.0, 25.0, 100.0
    rod = block_field((n, 1, 1), spacing=(length / n, side, side), t_f=t_f)
    mat = MaterialSpec(lam=lam, h=h, t_f=t_f, phi_dot=0.0)
    out = steady_state(rod, mat, {"x-": BoundaryCondition.dirichlet(t_b),
                                  "default": BoundaryCondition.robin(h, t_f)})
    m = math.sqrt(h * 4 * side / (lam * side * side))
    x = (np.arange(n) + 0.5) * length / n
    r = h / (m * lam)
    theta = (np.cosh(m * (length - x)) + r * np.sinh(m * (length - x))) / (
        np.cosh(m * length) + r * np.sinh(m * length))
    rod_err = float(np.max(np.abs((out.temps[:, 0, 0] - t_f) / (t_b - t_f) - theta) / theta))

    # adiabatic, source-free stepping conserves energy step by step
    rng = np.random.default_rng(0)
    worst_cons = 0.0
    adiabatic = BoundaryCondition.adiabatic()
    mat0 = MaterialSpec(phi_dot=0.0)
    for _ in range(20):
        f = block_field((6, 5, 4), spacing=(0.01, 0.008, 0.012), temps=rng.uniform(0, 200, (6, 5, 4)))
        dt = stability_bound(f.spacing, mat0)
        e0 = f.temps.sum()
        for _ in range(20):
            g = step_explicit(f, mat0, adiabatic, dt)
            worst_cons = max(worst_cons, abs(g.temps.sum() - f.temps.sum()) / e0)
            f = g

    # time-marched Robin steady state balances source power and boundary outflow
    geo = GeometrySpec(L=0.08, W=0.07, H=0.04, L_h=0.04, W_h=0.04, t_0=0.01, t_1=0.01, S=0.02)
    matr = MaterialSpec()
    res = solve_to_steady(build_geometry(geo, (16, 14, 8)), matr, study_bc(matr),
                          SolverConfig(snapshot_stride=20, residual_tol=1e-5))
    src, flow = energy_balance(res.field, matr, study_bc(matr))
    balance = abs(src - flow) / src
    secs = time.perf_counter() - t0
    verdict("solver physics", {
        "rod analytic < 1e-3": rod_err < 1e-3,
        "conservation < 1e-12": worst_cons < 1e-12,
        "energy balance < 1%": balance < 0.01,
        "runtime < 1 min": secs < 60,
    }, f"rod {rod_err:.2e}, conservation {worst_cons:.1e}, balance {balance:.2e}, {secs:.1f}s")


def _sampled_grad_check(params, grads, f, rng, per_tensor=12, eps=1e-5):
    # gradients below the central-difference round-off level count as zero
    atol = 10 * abs(f()) * np.finfo(float).eps / eps
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        idx = rng.choice(flat.size, size=min(flat.size, per_tensor), replace=False)
        num = np.empty(len(idx))
        for j, c in enumerate(idx):
            old = flat[c]
            flat[c] = old + eps
            fp = f()
            flat[c] = old - eps
            fm = f()
            flat[c] = old
            num[j] = (fp - fm) / (2 * eps)
        worst = max(worst, nn.rel_error(gflat[idx], num, atol=atol))
    return worst


def test_gradient_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for kind, (layers, shape) in sorted(GRAD_CASES.items()):
        net = nn.Sequential([nn.layer_from_spec(l.spec()) for l in layers], shape, seed=1)
        x = rng.normal(size=(4,) + shape)
        w = rng.normal(size=(4,) + net.out_shape)
        worst[kind] = nn.grad_check(net, x, nn.linear_loss(w)).worst

    w_img, h_img = FIN_IMAGE_SIZE
    cic = build_network((3, h_img, w_img), CicConfig(rows=2, cols=4))
    x = rng.uniform(size=(2, 3, h_img, w_img))
    worst["cic stack"] = nn.grad_check(cic, x, nn.squared_loss(np.array([[0.3], [0.7]])),
                                       max_per_tensor=12).worst

    vae = cw.VaeModel.create((3, h_img, w_img), seed=2)
    xv = rng.uniform(size=(3, 3, h_img, w_img))
    eps = rng.standard_normal((3, cw.LATENT))
    _, grads = cw.vae_gradients(vae, xv, eps)
    # a max-pool switch can sit within 1e-5 of a sampled weight at this image size;
    # the smaller step keeps round-off near 1e-7 for a loss of order 1e3
    worst["vae stack"] = _sampled_grad_check(vae.parameters(), grads,
                                             lambda: cw.vae_gradients(vae, xv, eps)[0].total, rng,
                                             eps=1e-6)

    critic = cw._critic(seed=3)
    xc = rng.random((4, 1, 16, 16))
    worst["critic stack"] = nn.grad_check(critic, xc, nn.linear_loss(rng.normal(size=(4, 1))),
                                          max_per_tensor=25).worst
    gen = cw._generator(8, seed=3)
    worst["generator stack"] = nn.grad_check(gen, rng.standard_normal((4, 8)),
                                             nn.linear_loss(rng.normal(size=(4,) + gen.out_shape)),
                                             eps=1e-6, max_per_tensor=25).worst
    secs = time.perf_counter() - t0
    checks = {f"{k} < 1e-4": v < 1e-4 for k, v in worst.items()}
    checks["runtime < 5 min"] = secs < 300
    verdict("gradient correctness", checks,
            f"{len(worst)} checks, worst {max(worst.values()):.2e} ({max(worst, key=worst.get)}), {secs:.1f}s")


def test_optimizer_fidelity(verdict):
    # Adam, written out with plain floats as the oracle
    grads = np.random.default_rng(1).normal(size=25)
    theta, s, r = 0.7, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        s = 0.9 * s + 0.1 * g
        r = 0.999 * r + 0.001 * g * g
        theta -= 0.01 * (s / (1 - 0.9**t)) / (math.sqrt(r / (1 - 0.999**t)) + 1e-8)
    p = [np.array([0.7])]
    state = nn.AdamState(eps_lr=0.01)
    for g in grads:
        nn.adam_step(state, p, [np.array([g])])
    adam_err = abs(p[0][0] - theta)

    # RMSProp
    theta, r = -0.3, 0.0
    for g in grads:
        r = 0.9 * r + 0.1 * g * g
        theta -= 5e-5 / (1e-8 + math.sqrt(r)) * g
    q = [np.array([-0.3])]
    rs = nn.RmsPropState(rho=0.9, eps_lr=5e-5)
    for g in grads:
        nn.rmsprop_step(rs, q, [np.array([g])])
    rms_err = abs(q[0][0] - theta)

    # Adam on theta^2 from 5
    z = [np.array([5.0])]
    st = nn.AdamState(eps_lr=0.01)
    steps = None
    for k in range(1, 5001):
        nn.adam_step(st, z, [2 * z[0]])
        if steps is None and abs(z[0][0]) < 0.1:
            steps = k
    verdict("optimizer fidelity", {
        "adam 1e-12": adam_err < 1e-12,
        "rmsprop 1e-12": rms_err < 1e-12,
        "adam quadratic": abs(z[0][0]) < 0.1,
    }, f"adam {adam_err:.1e}, rmsprop {rms_err:.1e}, |theta|<0.1 after {steps} steps")


def test_metrics_oracle(verdict):
    rng = np.random.default_rng(2)
    worst_reg = worst_is = 0.0
    for _ in range(30):
        n = int(rng.integers(3, 80))
        y = rng.normal(50, 10, n)
        yh = y + rng.normal(0, 3, n)
        got = regression_metrics(y, yh)
        want = brute_regression(list(y), list(yh))
        for a, b in zip((got.r2, got.raae, got.rmae, got.error_pct), want):
            worst_reg = max(worst_reg, abs(a - b) / max(abs(b), 1.0))
        splits = int(rng.choice([1, 2, 5, 10]))
        probs = rng.dirichlet(np.ones(6) * 0.7, size=100)
        res = inception_score(probs, splits)
        mean, std = brute_inception(probs.tolist(), splits)
        worst_is = max(worst_is, abs(res.mean_score - mean) / mean,
                       abs(res.std_score - std) / max(std, 1.0))
    uniform = inception_score(np.full((40, 5), 0.2), 4).mean_score
    one_hot = [inception_score(np.eye(c)[np.arange(10 * c) % c], 10).mean_score for c in (2, 5, 8)]
    verdict("metrics oracle", {
        "regression 1e-9": worst_reg < 1e-9,
        "inception 1e-9": worst_is < 1e-9,
        "uniform = 1": uniform == 1.0,
        "one-hot = C": all(abs(s - c) < 1e-12 * c for s, c in zip(one_hot, (2, 5, 8))),
    }, f"regression {worst_reg:.1e}, inception {worst_is:.1e}, uniform {uniform!r}")


# --- desk-scale criteria ----------------------------------------------------

@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Two complete desk runs with the shipped configuration and root seed 0."""
    base = tmp_path_factory.mktemp("desk")
    a, b = base / "run_a", base / "run_b"
    cfg = load_config(cli.DEFAULT_CONFIG)
    pipe = cli.Pipeline(cfg, a)
    timing = {}
    for name, fn in (("simulate", pipe.simulate), ("train-cic", pipe.train_cic),
                     ("train-vae", pipe.train_vae), ("train-wgan", pipe.train_wgan),
                     ("generate", pipe.generate), ("reconstruct", pipe.reconstruct)):
        t0 = time.perf_counter()
        fn()
        timing[name] = time.perf_counter() - t0
    pipe.report()
    assert cli.main(["--run-dir", str(b), "all"]) == cli.EXIT_OK
    return a, b, cfg, timing


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != ".lock"}


def _stage(run, name):
    import json
    return json.loads((run / "run.json").read_text())["stages"][name]


def test_cic_regression(desk_runs, verdict):
    run, _, cfg, timing = desk_runs
    snaps = _stage(run, "simulate")["snapshots"]
    m = {t: read_metrics_csv(run / "cic" / f"{t}_metrics.csv") for t in cli.TARGETS}
    img = load_png(run / "dataset" / _first_fin_path(run))
    verdict("CIC regression", {
        ">= 200 snapshots": snaps >= 200,
        "96x48 fin images": img.shape == (3, 48, 96),
        "fins R2 > 0.5": m["fins"]["r2"] > 0.5,
        "base R2 > 0.5": m["base"]["r2"] > 0.5,
        "fins Error <= 5%": m["fins"]["error_pct"] <= 5.0,
        "base Error <= 5%": m["base"]["error_pct"] <= 5.0,
        "training < 30 min": timing["train-cic"] < 1800,
    }, f"{snaps} snapshots; fins R2 {m['fins']['r2']:.4f} Error {m['fins']['error_pct']:.3f}%; "
       f"base R2 {m['base']['r2']:.4f} Error {m['base']['error_pct']:.3f}%; "
       f"training {timing['train-cic'] / 60:.1f} min; simulate {timing['simulate']:.0f} s")


def _first_fin_path(run):
    with open(run / "dataset" / "fins.csv", newline="") as fh:
        return next(csv.DictReader(fh))["path"]


def _toy_codes(n, rng):
    comp = rng.random(n) < 0.75
    vals = np.where(comp, rng.normal(0.2, 0.03, n), rng.normal(0.6, 0.03, n))
    return np.clip(vals[:, None, None, None] + rng.normal(0, 0.02, (n, 16, 16, 1)), 0, 1)


def test_vae_cwgan_sanity(desk_runs, verdict):
    run, _, cfg, _ = desk_runs
    rng = np.random.default_rng(3)
    # reparameterisation identities
    m, lv, e = rng.normal(size=50), rng.normal(size=50), rng.normal(size=50)
    rep = max(float(np.max(np.abs(cw.reparameterize(m, lv, 0 * e) - m))),
              float(np.max(np.abs(cw.reparameterize(m, lv, e) - (m + np.exp(lv / 2) * e)))),
              float(np.max(np.abs(cw.reparameterize(m, lv, 2 * e) - 2 * cw.reparameterize(m, lv, e) + m))))

    vae = {t: read_metrics_csv(run / "vae" / f"{t}_report.csv") for t in cli.TARGETS}

    # WGAN on a two-Gaussian toy distribution, critic clip checked after every update
    codes = _toy_codes(512, rng)
    model, trace = cw.train_wgan(codes, cw.WganConfig(lr=1e-3, steps=1500))
    gen = model.sample_codes(np.random.default_rng(1).standard_normal((1000, model.noise_dim)))
    mean_gap = abs(float(gen.mean()) - float(codes.mean()))
    clip_ok = len(trace.max_critic_weight) == 1500 * 5 and max(trace.max_critic_weight) <= 0.01

    # generated image contracts on the desk run
    counts = _stage(run, "generate")["counts"]
    shapes_ok = True
    for t in cli.TARGETS:
        with open(run / "generate" / f"{t}.csv", newline="") as fh:
            paths = [r["path"] for r in csv.DictReader(fh)]
        with open(run / "dataset" / f"{t}.csv", newline="") as fh:
            ref = load_png(run / "dataset" / next(csv.DictReader(fh))["path"]).shape
        shapes_ok &= len(paths) == counts[t]
        shapes_ok &= all(load_png(run / p).shape == ref for p in paths[:: max(len(paths) // 50, 1)])
    dv = cw.VaeModel.load(run / "vae" / "fins.ckpt")
    dw = cw.WganModel.load(run / "wgan" / "fins.ckpt")
    shapes_ok &= cw.generate(dw, dv, 7, seed=5).shape == (7, 3, 48, 96)
    shapes_ok &= cw.generate(dw, dv, 0, seed=5).shape == (0, 3, 48, 96)

    inc = read_metrics_csv(run / "reconstruct" / "inception.csv")
    verdict("VAE/CWGAN sanity", {
        "reparameterisation 1e-12": rep < 1e-12,
        "fins VAE beats mean image": vae["fins"]["final_mse"] < vae["fins"]["mean_image_mse"],
        "base VAE beats mean image": vae["base"]["final_mse"] < vae["base"]["mean_image_mse"],
        "clip bound every update": clip_ok,
        "toy mean within 0.1": mean_gap < 0.1,
        "shape and count contracts": bool(shapes_ok),
        "fins IS > noise IS": inc["fins_generated_mean"] > inc["fins_noise_mean"],
    }, f"VAE MSE fins {vae['fins']['final_mse']:.4f} vs {vae['fins']['mean_image_mse']:.4f}, "
       f"base {vae['base']['final_mse']:.4f} vs {vae['base']['mean_image_mse']:.4f}; "
       f"toy mean gap {mean_gap:.3f}; IS fins {inc['fins_generated_mean']:.3f} vs noise "
       f"{inc['fins_noise_mean']:.3f}")


def test_reconstruction(desk_runs, verdict):
    run, _, cfg, _ = desk_runs
    rng = np.random.default_rng(4)
    worst_poly = 0.0
    for _ in range(200):
        k = int(rng.integers(2, 9))
        coef = rng.normal(size=k)
        xs = np.linspace(-2, 2, k) + rng.uniform(-0.1, 0.1, k)
        w = LagrangeWindow(tuple(xs), tuple(np.polyval(coef, xs)))
        q = np.linspace(xs[0], xs[-1], 50)
        got = np.array([lagrange_eval(w, v) for v in q])
        want = np.polyval(coef, q)
        worst_poly = max(worst_poly, float(np.max(np.abs(got - want)) / max(1.0, np.abs(want).max())))

    with open(run / "simulate" / "snapshots.csv", newline="") as fh:
        snaps = [(float(r["iter"]), float(r["objective"])) for r in csv.DictReader(fh)]
    with open(run / "reconstruct" / "timeline.csv", newline="") as fh:
        timeline = list(csv.DictReader(fh))
    originals = [(float(r["pseudo_iter"]), float(r["objective"])) for r in timeline
                 if r["source"] == "original"]
    curve = densify_curve(snaps, cfg.reconstruction.target_count, cfg.reconstruction.k)
    nodes_exact = originals == snaps and [(p.pseudo_iter, p.objective) for p in curve if p.original] == snaps
    rec = read_metrics_csv(run / "reconstruct" / "reconstruct_metrics.csv")
    verdict("reconstruction", {
        "polynomials 1e-9": worst_poly < 1e-9,
        "nodes exact": nodes_exact,
        "max RE <= 5e-2": rec["max_relative_error"] <= 5e-2,
        "3D round trip exact": rec["roundtrip_exact"] == 1.0,
        "timeline = target_count": len(timeline) == cfg.reconstruction.target_count,
    }, f"poly {worst_poly:.1e}; max RE {rec['max_relative_error']:.3e}; "
       f"{len(timeline)} timeline points")


def test_pipeline_determinism(desk_runs, verdict):
    a, b, _, _ = desk_runs
    ta, tb = _tree(a), _tree(b)
    differ = sorted(k for k in ta.keys() & tb.keys() if ta[k] != tb[k])
    kinds = {k.rsplit(".", 1)[-1] for k in ta}
    verdict("pipeline determinism", {
        "same file set": ta.keys() == tb.keys(),
        "byte-identical": not differ,
        "manifest, checkpoints and CSVs present": {"json", "ckpt", "csv"} <= kinds,
    }, f"{len(ta)} files compared" + (f", first difference {differ[0]}" if differ else ""))
