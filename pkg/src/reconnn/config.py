"""Study configuration: one TOML file, every key optional, strict validation.

Unknown sections or keys and wrongly typed values fail with the line they
were found on. Defaults are the desk-scale study.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .cic import CicConfig
from .cwgan import VaeConfig, WganConfig
from .errors import ConfigError, ReconError
from .thermal import DESK_RESOLUTION, GeometrySpec, MaterialSpec, SolverConfig, desk_geometry


@dataclass
class GridConfig:
    resolution: tuple = DESK_RESOLUTION


@dataclass
class ImageConfig:
    fin_size: tuple = (96, 48)  # (width, height)
    base_size: tuple = (96, 72)


@dataclass
class GenerateConfig:
    oversample: float = 1.1  # generated images per open timeline slot
    seed_offset: int = 0


@dataclass
class ReconstructionConfig:
    target_count: int = 1200
    k: int = 4


@dataclass
class ClassifierConfig:
    bins: int = 8
    epochs: int = 4
    batch: int = 32
    lr: float = 1e-3
    n_splits: int = 10
    n_eval: int = 500


@dataclass
class StudyConfig:
    geometry: GeometrySpec = field(default_factory=desk_geometry)
    grid: GridConfig = field(default_factory=GridConfig)
    material: MaterialSpec = field(default_factory=MaterialSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    image: ImageConfig = field(default_factory=ImageConfig)
    cic_fins: CicConfig = field(default_factory=lambda: CicConfig(rows=2, cols=4, epochs=20))
    cic_base: CicConfig = field(default_factory=lambda: CicConfig(rows=3, cols=4, epochs=20))
    vae_fins: VaeConfig = field(default_factory=VaeConfig)
    vae_base: VaeConfig = field(default_factory=lambda: VaeConfig(epochs=40))
    wgan: WganConfig = field(default_factory=lambda: WganConfig(lr=1e-3, steps=1500))
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    seed: int = 0

    def section(self, name):
        return getattr(self, name)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self), default=list))


SECTIONS = [f.name for f in dataclasses.fields(StudyConfig) if f.name != "seed"]


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


def _locate(text: str, section: str | None, key: str | None) -> int:
    """Best-effort 1-based line of ``[section]`` / ``key`` in the TOML source."""
    current = None
    sec_line = 0
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]", s)
        if m:
            current = m.group(1)
            if current == section and key is None:
                return n
            if current == section:
                sec_line = n
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return n
    return sec_line


def _coerce(value, default, where):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int) or default is None and isinstance(value, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, tuple):
        if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                           for v in value):
            return tuple(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif default is None and isinstance(value, float):
        return value
    raise ConfigError(f"{where}: expected {type(default).__name__ if default is not None else 'number'}, "
                      f"got {type(value).__name__} {value!r}")


def parse_config(text: str, source: str = "<config>") -> StudyConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = StudyConfig()
    for name, body in raw.items():
        if name == "seed":
            if not isinstance(body, int) or isinstance(body, bool):
                raise ConfigError(f"{source}:{_locate(text, None, 'seed')}: seed must be an integer")
            cfg.seed = body
            continue
        if name not in SECTIONS:
            raise ConfigError(f"{source}:{_locate(text, name, None)}: unknown section [{name}]; "
                              f"expected one of {', '.join(SECTIONS)}")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}:{_locate(text, None, name)}: {name} must be a table")
        obj = cfg.section(name)
        known = {f.name: f for f in dataclasses.fields(obj)}
        updates = {}
        for key, value in body.items():
            line = _locate(text, name, key)
            where = f"{source}:{line}: {name}.{key}"
            if key not in known:
                raise ConfigError(f"{where}: unknown key; expected one of {', '.join(known)}")
            updates[key] = _coerce(value, getattr(obj, key), where)
        try:
            setattr(cfg, name, dataclasses.replace(obj, **updates))
        except (ValueError, TypeError, ReconError) as exc:
            raise ConfigError(f"{source}:{_locate(text, name, None)}: [{name}] {exc}") from None
    _validate(cfg, text, source)
    return cfg


def _validate(cfg: StudyConfig, text, source):
    def fail(section, key, msg):
        raise ConfigError(f"{source}:{_locate(text, section, key)}: {section}.{key}: {msg}")

    if len(cfg.grid.resolution) != 3 or min(cfg.grid.resolution) < 1:
        fail("grid", "resolution", "needs three positive counts")
    for name in ("cic_fins", "cic_base"):
        c = cfg.section(name)
        for key in ("epochs", "batch"):
            if getattr(c, key) < 1:
                fail(name, key, "must be at least 1")
        if not 0.0 <= c.held_out < 1.0:
            fail(name, "held_out", "must lie in [0, 1)")
    for name in ("vae_fins", "vae_base"):
        c = cfg.section(name)
        for key in ("epochs", "batch"):
            if getattr(c, key) < 1:
                fail(name, key, "must be at least 1")
    if cfg.wgan.clip_c <= 0:
        fail("wgan", "clip_c", "must be positive")
    if cfg.wgan.n_critic < 1:
        fail("wgan", "n_critic", "must be at least 1")
    if not 2 <= cfg.reconstruction.k <= 8:
        fail("reconstruction", "k", "must lie in [2, 8]")
    if cfg.classifier.bins < 2:
        fail("classifier", "bins", "needs at least 2 bins")
    if cfg.generate.oversample < 1.0:
        fail("generate", "oversample", "must be at least 1")


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


DEFAULT_CONFIG = Path(__file__).parent / "configs" / "desk.toml"
TINY_CONFIG = Path(__file__).parent / "configs" / "tiny.toml"
