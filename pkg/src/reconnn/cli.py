"""Command-line pipeline: simulate -> train -> generate -> reconstruct -> report.

Every stage writes its artifacts under the run directory and records its
input hash in ``run.json``; rerunning a stage whose hash is unchanged is a
cache hit unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import fcntl
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import cic as cicmod
from . import cwgan as cw
from . import dataset as ds
from . import metrics as mt
from . import reconstruction as rc
from . import thermal as th
from .config import DEFAULT_CONFIG, StudyConfig, canonical_hash, load_config
from .errors import ConfigError, DependencyError, ReconError
from .nn import checkpoint

log = logging.getLogger("reconnn")

MANIFEST_NAME = "run.json"
STAGES = ("simulate", "train-cic", "train-vae", "train-wgan", "generate", "reconstruct")
REQUIRES = {
    "simulate": (),
    "train-cic": ("simulate",),
    "train-vae": ("simulate",),
    "train-wgan": ("train-vae",),
    "generate": ("train-wgan",),
    "reconstruct": ("train-cic", "generate"),
}
SECTIONS = {
    "simulate": ("geometry", "grid", "material", "solver", "image"),
    "train-cic": ("cic_fins", "cic_base"),
    "train-vae": ("vae_fins", "vae_base"),
    "train-wgan": ("wgan",),
    "generate": ("generate", "reconstruction"),
    "reconstruct": ("reconstruction", "classifier"),
}
TARGETS = ("fins", "base")
EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_DEPENDENCY = 0, 1, 2, 3


def derive_seed(root: int, label: str) -> int:
    """Per-stage seed from the root seed by labelled hashing."""
    return int(hashlib.sha256(f"{root}:{label}".encode()).hexdigest()[:8], 16)


class RunManifest:
    """``run.json``: run id, root seed, config hash and one record per stage."""

    def __init__(self, run_dir: Path, data: dict):
        self.run_dir, self.data = Path(run_dir), data

    @classmethod
    def open(cls, run_dir, cfg: StudyConfig, root_seed: int) -> "RunManifest":
        run_dir = Path(run_dir)
        cfg_hash = canonical_hash(cfg.to_dict())
        path = run_dir / MANIFEST_NAME
        data = json.loads(path.read_text()) if path.exists() else {"stages": {}}
        data.update({
            "format": "reconnn-run",
            "version": 1,
            "run_id": hashlib.sha256(f"{cfg_hash}:{root_seed}".encode()).hexdigest()[:12],
            "config_hash": cfg_hash,
            "root_seed": root_seed,
            "seeds": {},
        })
        m = cls(run_dir, data)
        m.data["seeds"] = {s: m.seed(s) for s in STAGES}
        return m

    def seed(self, label: str) -> int:
        return derive_seed(self.data["root_seed"], label)

    def stage(self, name) -> dict | None:
        return self.data["stages"].get(name)

    def done(self, name) -> bool:
        rec = self.stage(name)
        return bool(rec and rec.get("status") == "done")

    def record(self, name, stage_hash, artifacts, extra=None):
        self.data["stages"][name] = {"status": "done", "hash": stage_hash,
                                     "config_hash": self.data["config_hash"],
                                     "artifacts": sorted(artifacts), **(extra or {})}
        self.save()

    def mark_failed(self, name, stage_hash, message):
        self.data["stages"][name] = {"status": "failed", "hash": stage_hash,
                                     "config_hash": self.data["config_hash"], "error": message}
        self.save()

    def flag_stale(self, hashes: dict):
        for name, rec in self.data["stages"].items():
            rec["stale"] = name in hashes and rec.get("hash") != hashes[name]

    def save(self):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        tmp = self.run_dir / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(self.data, indent=1, sort_keys=True) + "\n")
        tmp.replace(self.run_dir / MANIFEST_NAME)


class RunLock:
    """Exclusive advisory lock on ``<run_dir>/.lock``."""

    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / ".lock"
        self.fh = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w")
        try:
            fcntl.flock(self.fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self.fh.close()
            raise ReconError(f"run directory {self.path.parent} is locked by another process") from None
        return self

    def __exit__(self, *exc):
        fcntl.flock(self.fh, fcntl.LOCK_UN)
        self.fh.close()


class Pipeline:
    def __init__(self, cfg: StudyConfig, run_dir, root_seed: int | None = None, force=False):
        self.cfg = cfg
        self.run = Path(run_dir)
        self.root_seed = cfg.seed if root_seed is None else root_seed
        self.force = force
        self.manifest = RunManifest.open(self.run, cfg, self.root_seed)

    # -- hashing -------------------------------------------------------------
    def stage_hash(self, name) -> str:
        sections = {s: json.loads(json.dumps(dataclasses.asdict(self.cfg.section(s)), default=list))
                    for s in SECTIONS[name]}
        upstream = {d: self.stage_hash(d) for d in REQUIRES[name]}
        return canonical_hash({"stage": name, "sections": sections, "seed": self.manifest.seed(name),
                               "upstream": upstream})

    def all_hashes(self):
        return {s: self.stage_hash(s) for s in STAGES}

    def cached(self, name) -> bool:
        rec = self.manifest.stage(name)
        if self.force or not rec or rec.get("status") != "done" or rec.get("hash") != self.stage_hash(name):
            return False
        return all((self.run / a).exists() for a in rec.get("artifacts", []))

    def require(self, name):
        for dep in REQUIRES[name]:
            if dep == "generate" and name == "reconstruct":
                continue
            if not self.manifest.done(dep):
                raise DependencyError(f"{name} needs stage '{dep}' first (run `reconnn {dep}`)")

    def execute(self, name, fn):
        self.require(name)
        h = self.stage_hash(name)
        if self.cached(name):
            log.info("%s: up to date (cache hit)", name)
            return False
        log.info("%s: running", name)
        try:
            artifacts, extra = fn()
        except DependencyError:
            raise
        except Exception as exc:
            self.manifest.mark_failed(name, h, f"{type(exc).__name__}: {exc}")
            raise ReconError(f"stage {name} failed: {exc}") from exc
        self.manifest.record(name, h, [str(Path(a).relative_to(self.run)) for a in artifacts], extra)
        self.manifest.flag_stale(self.all_hashes())
        self.manifest.save()
        return True

    def seed(self, label):
        return self.manifest.seed(label)

    # -- stages --------------------------------------------------------------
    def simulate(self):
        return self.execute("simulate", self._simulate)

    def _simulate(self):
        c = self.cfg
        field = th.build_geometry(c.geometry, c.grid.resolution, t_f=c.material.t_f)
        res = th.solve_to_steady(field, c.material, th.study_bc(c.material), c.solver)
        out = self.run / "simulate"
        out.mkdir(parents=True, exist_ok=True)
        man = ds.export_dataset(res.snapshots, self.run / "dataset", fin_size=tuple(c.image.fin_size),
                                base_size=tuple(c.image.base_size))
        with open(out / "snapshots.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "tau", "objective", "residual"])
            for s in res.snapshots:
                w.writerow([s.iter, repr(float(s.tau)), repr(float(s.objective)), repr(float(s.residual))])
        arrays = {f"it{s.iter:07d}/{p}": a for s in res.snapshots for p, a in s.slices.items()}
        header = {"dt": res.dt, "iterations": res.iterations, "converged": res.converged,
                  "shape": list(field.shape), "planes": {p: list(v) for p, v in field.planes.items()},
                  "iters": [s.iter for s in res.snapshots]}
        checkpoint.save(out / "slices.ckpt", header, arrays)
        log.info("simulate: %d snapshots, objective %.4f degC, converged=%s",
                 len(res.snapshots), res.snapshots[-1].objective, res.converged)
        arts = [out / "snapshots.csv", out / "slices.ckpt", man.fin_csv, man.base_csv,
                man.root / "dataset.json"]
        return arts, {"snapshots": len(res.snapshots), "fin_rows": len(man.fin_rows),
                      "base_rows": len(man.base_rows)}

    def _manifest(self):
        return ds.load_manifest(self.run / "dataset")

    def train_cic(self):
        return self.execute("train-cic", self._train_cic)

    def _train_cic(self):
        man = self._manifest()
        out = self.run / "cic"
        out.mkdir(parents=True, exist_ok=True)
        arts, extra = [], {}
        for target in TARGETS:
            base_cfg = self.cfg.cic_fins if target == "fins" else self.cfg.cic_base
            cfg = dataclasses.replace(
                base_cfg, seed=self.seed(f"train-cic/{target}") + base_cfg.seed,
                split_seed=self.seed(f"train-cic/{target}/split") + base_cfg.split_seed)
            r = cicmod.train_cic(man, cfg, target, log=log.info)
            r.model.save(out / f"{target}.ckpt")
            mt.write_metrics_csv(out / f"{target}_metrics.csv", r.report.rows())
            mt.write_predictions_csv(out / f"{target}_predictions.csv",
                                     [f"{i}:{p}" for i, p in r.test_ids], r.test_labels, r.test_preds)
            with open(out / f"{target}_history.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "train_loss"])
                for e, v in enumerate(r.history, 1):
                    w.writerow([e, repr(float(v))])
            log.info("train-cic %s: R2 %.4f RAAE %.4f RMAE %.4f Error %.4f%%", target, r.report.r2,
                     r.report.raae, r.report.rmae, r.report.error_pct)
            arts += [out / f"{target}{s}" for s in (".ckpt", "_metrics.csv", "_predictions.csv",
                                                    "_history.csv")]
            extra[target] = {"degenerate": r.report.degenerate}
        return arts, extra

    def train_vae(self):
        return self.execute("train-vae", self._train_vae)

    def _train_vae(self):
        man = self._manifest()
        out = self.run / "vae"
        out.mkdir(parents=True, exist_ok=True)
        arts = []
        for target in TARGETS:
            rows = man.fin_rows if target == "fins" else man.base_rows
            images = ds.load_images(man.root, rows)[0]
            base_cfg = self.cfg.vae_fins if target == "fins" else self.cfg.vae_base
            cfg = dataclasses.replace(base_cfg, seed=self.seed(f"train-vae/{target}") + base_cfg.seed)
            vae, rep = cw.train_vae(images, cfg, log=log.info)
            vae.save(out / f"{target}.ckpt")
            with open(out / f"{target}_loss.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "reconstruction_mse", "kl"])
                for e, (a, b) in enumerate(zip(rep.epoch_mse, rep.epoch_kl), 1):
                    w.writerow([e, repr(float(a)), repr(float(b))])
            mt.write_metrics_csv(out / f"{target}_report.csv",
                                 [("final_mse", rep.final_mse), ("mean_image_mse", rep.baseline_mse)])
            log.info("train-vae %s: reconstruction MSE %.5f (mean-image baseline %.5f)", target,
                     rep.final_mse, rep.baseline_mse)
            arts += [out / f"{target}.ckpt", out / f"{target}_loss.csv", out / f"{target}_report.csv"]
        return arts, {}

    def train_wgan(self):
        return self.execute("train-wgan", self._train_wgan)

    def _train_wgan(self):
        man = self._manifest()
        out = self.run / "wgan"
        out.mkdir(parents=True, exist_ok=True)
        arts = []
        for target in TARGETS:
            rows = man.fin_rows if target == "fins" else man.base_rows
            vae = cw.VaeModel.load(self.run / "vae" / f"{target}.ckpt")
            codes = vae.normalize_codes(cw.compress_batch(vae, ds.load_images(man.root, rows)[0]))
            cfg = dataclasses.replace(self.cfg.wgan, seed=self.seed(f"train-wgan/{target}") + self.cfg.wgan.seed)
            model, trace = cw.train_wgan(codes, cfg, log=log.info)
            model.save(out / f"{target}.ckpt")
            with open(out / f"{target}_trace.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", "critic_loss", "gen_loss", "wasserstein_estimate"])
                for row in trace.rows():
                    w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
            arts += [out / f"{target}.ckpt", out / f"{target}_trace.csv"]
        return arts, {}

    def _open_slots(self):
        k = len(self._snapshots())
        return max(self.cfg.reconstruction.target_count - k, 0)

    def generate_counts(self):
        n_open = self._open_slots()
        over = self.cfg.generate.oversample
        return {"fins": int(math.ceil(n_open * len(th.FIN_PLANES) * over)),
                "base": int(math.ceil(n_open * over))}

    def generate(self):
        return self.execute("generate", self._generate)

    def _generate(self):
        out = self.run / "generate"
        arts = []
        counts = self.generate_counts()
        for target in TARGETS:
            d = out / target
            d.mkdir(parents=True, exist_ok=True)
            for old in d.glob("*.png"):
                old.unlink()
            vae = cw.VaeModel.load(self.run / "vae" / f"{target}.ckpt")
            wgan = cw.WganModel.load(self.run / "wgan" / f"{target}.ckpt")
            seed = self.seed(f"generate/{target}") + self.cfg.generate.seed_offset
            rows = []
            for start in range(0, counts[target], 256):
                n = min(256, counts[target] - start)
                imgs = cw.generate(wgan, vae, n, seed + start)
                for j, img in enumerate(imgs):
                    rel = f"generate/{target}/gen{start + j:06d}.png"
                    ds.save_png(self.run / rel, np.moveaxis(img, 0, -1))
                    rows.append(rel)
            with open(out / f"{target}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["path"])
                w.writerows([r] for r in rows)
            arts.append(out / f"{target}.csv")
            log.info("generate %s: %d images", target, len(rows))
        return arts, {"counts": counts}

    def _snapshots(self):
        with open(self.run / "simulate" / "snapshots.csv", newline="") as fh:
            return [(int(r["iter"]), float(r["objective"])) for r in csv.DictReader(fh)]

    def reconstruct(self):
        for dep in ("train-cic", "train-vae", "train-wgan"):
            if not self.manifest.done(dep):
                raise DependencyError(f"reconstruct needs stage '{dep}' first (run `reconnn {dep}`)")
        if not self.manifest.done("generate") or self.stage_hash("generate") != self.manifest.stage("generate")["hash"]:
            self.generate()
        return self.execute("reconstruct", self._reconstruct)

    def _reconstruct(self):
        c = self.cfg
        out = self.run / "reconstruct"
        out.mkdir(parents=True, exist_ok=True)
        samples = self._snapshots()
        curve = rc.densify_curve(samples, c.reconstruction.target_count, c.reconstruction.k)

        # ground truth: dense rerun of the solver at every step
        head, slices = checkpoint.load(self.run / "simulate" / "slices.ckpt")
        field = th.build_geometry(c.geometry, c.grid.resolution, t_f=c.material.t_f)
        trace = th.objective_trace(field, c.material, th.study_bc(c.material), head["dt"],
                                   int(head["iterations"]))
        max_re = rc.write_evaluation_csv(out / "evaluation.csv", rc.evaluation_rows(curve, trace))

        man = self._manifest()
        refs = {}
        for rows in (man.fin_rows, man.base_rows):
            for path, it, plane, _ in rows:
                refs.setdefault(float(it), {})[plane] = path
        pools, preds = {}, {}
        for target in TARGETS:
            with open(self.run / "generate" / f"{target}.csv", newline="") as fh:
                pools[target] = [r["path"] for r in csv.DictReader(fh)]
            model = cicmod.CicModel.load(self.run / "cic" / f"{target}.ckpt")
            imgs = np.stack([ds.load_png(self.run / p) for p in pools[target]]) if pools[target] else \
                np.zeros((0,) + model.net.in_shape)
            preds[target] = model.predict(imgs)
        placement = rc.place_generated(curve, preds["fins"], preds["base"], refs,
                                       pools["fins"], pools["base"])
        rc.write_timeline_csv(out / "timeline.csv", placement.points)
        res = placement.residuals()
        span = max(o for _, o in samples) - min(o for _, o in samples)
        median_rel = float(np.median(res) / span) if res.size else math.nan

        # 3D-2D-3D: originals must round-trip exactly; a few generated states are stored
        planes = {p: tuple(v) for p, v in head["planes"].items()}
        shape = tuple(head["shape"])
        exact = True
        for it in head["iters"]:
            sl = {p: slices[f"it{it:07d}/{p}"] for p in th.PLANES}
            vol = rc.reassemble_3d(sl, shape, planes)
            for p, (axis, layer) in planes.items():
                sel = [slice(None)] * 3
                sel["xyz".index(axis)] = layer
                exact &= bool(np.array_equal(vol[tuple(sel)], sl[p], equal_nan=True))
        gen_pts = [p for p in placement.points if p.source == "generated"
                   and all(p.image_ref.get(q) for q in th.PLANES)]
        states = {}
        vr = man.value_range
        picks = np.linspace(0, len(gen_pts) - 1, min(8, len(gen_pts))).astype(int) if gen_pts else []
        for idx in picks:
            pt = gen_pts[idx]
            sl = {}
            for p in th.PLANES:
                axis, layer = planes[p]
                sel = [slice(None)] * 3
                sel["xyz".index(axis)] = layer
                solid = field.solid_mask[tuple(sel)]
                sl[p] = rc.image_to_slice(ds.load_png(self.run / pt.image_ref[p]), vr, solid.shape, p, solid)
            states[f"pseudo_iter_{pt.pseudo_iter!r}"] = rc.reassemble_3d(sl, shape, planes)
        checkpoint.save(out / "states.ckpt", {"value_range": list(vr)}, states)

        # inception score of generated vs seed-noise images under an objective-bin classifier
        is_rows = []
        for target in TARGETS:
            rows = man.fin_rows if target == "fins" else man.base_rows
            imgs, obj, _ = ds.load_images(man.root, rows)
            k = c.classifier
            clf = mt.train_classifier(imgs, obj, k.bins, k.epochs, k.batch, k.lr,
                                      self.seed(f"reconstruct/classifier/{target}"), log=log.info)
            clf.save(out / f"classifier_{target}.ckpt")
            n = min(k.n_eval, len(pools[target]))
            n_splits = min(k.n_splits, max(n, 1))
            gen = np.stack([ds.load_png(self.run / p) for p in pools[target][:n]]) if n else None
            noise = mt.seed_noise_images(max(n, n_splits), imgs.shape[1:],
                                         self.seed(f"reconstruct/noise/{target}"))
            g = mt.inception_score(mt.classifier_for_is(clf, gen), n_splits) if n else None
            z = mt.inception_score(mt.classifier_for_is(clf, noise), n_splits)
            is_rows += [(f"{target}_generated_mean", g.mean_score if g else math.nan),
                        (f"{target}_generated_std", g.std_score if g else math.nan),
                        (f"{target}_noise_mean", z.mean_score), (f"{target}_noise_std", z.std_score)]
        mt.write_metrics_csv(out / "inception.csv", is_rows)
        summary = [("max_relative_error", max_re), ("median_residual_over_span", median_rel),
                   ("timeline_points", len(placement.points)), ("gaps", len(placement.gaps)),
                   ("roundtrip_exact", 1.0 if exact else 0.0)]
        mt.write_metrics_csv(out / "reconstruct_metrics.csv", summary)
        log.info("reconstruct: %d points, max RE %.3e, median residual/span %.3e, gaps %d",
                 len(placement.points), max_re, median_rel, len(placement.gaps))
        arts = [out / n for n in ("evaluation.csv", "timeline.csv", "states.ckpt", "inception.csv",
                                  "reconstruct_metrics.csv", "classifier_fins.ckpt",
                                  "classifier_base.ckpt")]
        return arts, {}

    def report(self):
        return write_report(self.run)

    def run_all(self):
        self.simulate()
        self.train_cic()
        self.train_vae()
        self.train_wgan()
        self.generate()
        self.reconstruct()
        return self.report()


HEADLINE = ("r2", "raae", "rmae", "error_pct", "inception_score", "max_relative_error")


def _read_or_none(path):
    try:
        return mt.read_metrics_csv(path)
    except (OSError, StopIteration, ValueError):
        return None


def write_report(run_dir) -> dict:
    """Aggregate stage CSVs into ``report/summary.{txt,csv}`` plus per-figure CSVs.

    Missing stages give rows marked ``missing`` instead of failing.
    """
    run = Path(run_dir)
    out = run / "report"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for target in TARGETS:
        m = _read_or_none(run / "cic" / f"{target}_metrics.csv") or {}
        for key in ("r2", "raae", "rmae", "error_pct"):
            rows.append((f"{target}.{key}", m.get(key)))
    inc = _read_or_none(run / "reconstruct" / "inception.csv") or {}
    for target in TARGETS:
        rows.append((f"{target}.inception_score", inc.get(f"{target}_generated_mean")))
        rows.append((f"{target}.inception_score_std", inc.get(f"{target}_generated_std")))
        rows.append((f"{target}.inception_score_noise", inc.get(f"{target}_noise_mean")))
    rec = _read_or_none(run / "reconstruct" / "reconstruct_metrics.csv") or {}
    rows.append(("max_relative_error", rec.get("max_relative_error")))
    rows.append(("median_residual_over_span", rec.get("median_residual_over_span")))

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in rows:
            w.writerow([k, "missing" if v is None else repr(float(v))])
    lines = []
    mpath = run / MANIFEST_NAME
    if mpath.exists():
        data = json.loads(mpath.read_text())
        lines.append(f"run id: {data.get('run_id')}  root seed: {data.get('root_seed')}")
        for s in STAGES:
            rec_s = data.get("stages", {}).get(s)
            lines.append(f"  {s:12s} {rec_s['status'] if rec_s else 'missing'}"
                         + ("  (stale)" if rec_s and rec_s.get("stale") else ""))
    lines.append("")
    for k, v in rows:
        lines.append(f"{k:32s} {'missing' if v is None else format(float(v), '.6g')}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")

    figs = {
        "fig7_fins_predictions.csv": run / "cic" / "fins_predictions.csv",
        "fig8_base_predictions.csv": run / "cic" / "base_predictions.csv",
        "fig9_timeline.csv": run / "reconstruct" / "timeline.csv",
        "fig10_evaluation.csv": run / "reconstruct" / "evaluation.csv",
    }
    for name, src in figs.items():
        if src.exists():
            (out / name).write_bytes(src.read_bytes())
        elif (out / name).exists():
            (out / name).unlink()
    return dict(rows)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reconnn", description="Heat-sink thermal surrogate and timeline reconstruction study.")
    p.add_argument("--config", help="study TOML file (default: built-in desk configuration)")
    p.add_argument("--run-dir", default="runs/desk", help="artifact directory (default: runs/desk)")
    p.add_argument("--seed", type=int, help="root seed (default: the config's seed)")
    p.add_argument("--force", action="store_true", help="rerun stages even on a cache hit")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("verb", choices=("simulate", "train-cic", "train-vae", "train-wgan", "generate",
                                    "reconstruct", "report", "all"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.verb == "report":
            write_report(args.run_dir)
            print((Path(args.run_dir) / "report" / "summary.txt").read_text(), end="")
            return EXIT_OK
        cfg = load_config(args.config or DEFAULT_CONFIG)
        with RunLock(Path(args.run_dir)):
            pipe = Pipeline(cfg, args.run_dir, args.seed, args.force)
            action = {
                "simulate": pipe.simulate, "train-cic": pipe.train_cic, "train-vae": pipe.train_vae,
                "train-wgan": pipe.train_wgan, "generate": pipe.generate,
                "reconstruct": pipe.reconstruct, "all": pipe.run_all,
            }[args.verb]
            action()
    except ConfigError as exc:
        print(f"reconnn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DependencyError as exc:
        print(f"reconnn: missing dependency: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except ReconError as exc:
        print(f"reconnn: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"reconnn: I/O error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
