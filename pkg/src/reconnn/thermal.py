"""Voxel finite-volume conduction solver for the plate-fin heat sink.

Axes: x runs along the sink length L, y across the width W (fins are
stacked along y), z up the height H. The baseplate occupies
``0 <= z <= t_0``; fins rise from the baseplate top to H. Temperatures
are stored on a full (nx, ny, nz) grid, void voxels holding the ambient
temperature. Time stepping works on the compact vector of solid voxels
(row-major order) through :func:`reconnn.kernels.heat_advance`.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import (
    DivergenceError,
    DomainError,
    GeometryError,
    ResolutionError,
    StabilityError,
)

FIN_PLANES = ("A", "B", "C", "D", "E")
BASE_PLANE = "F"
PLANES = FIN_PLANES + (BASE_PLANE,)

# face tags in kernel order: -x, +x, -y, +y, -z, +z
FACES = ("x-", "x+", "y-", "y+", "z-", "z+")
_OFFSETS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))
_TOL = 1e-9


@dataclass(frozen=True)
class GeometrySpec:
    """Heat-sink dimensions in metres. ``n`` defaults to (W - t_1) / S."""

    L: float
    W: float
    H: float
    L_h: float
    W_h: float
    t_0: float
    t_1: float
    S: float
    n: int | None = None

    def fin_count(self) -> int:
        ratio = (self.W - self.t_1) / self.S
        count = round(ratio)
        if abs(ratio - count) > _TOL * max(1.0, abs(ratio)):
            raise GeometryError(f"(W - t_1) / S = {ratio!r} is not an integer fin count")
        if count < 1:
            raise GeometryError(f"fin count must be >= 1, got {count}")
        if self.n is not None and self.n != count:
            raise GeometryError(f"n={self.n} disagrees with (W - t_1) / S = {count}")
        return count

    def validate(self) -> int:
        for name in ("L", "W", "H", "L_h", "W_h", "t_0", "t_1", "S"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")
        if self.L_h > self.L or self.W_h > self.W:
            raise GeometryError("heat source footprint exceeds the baseplate")
        if not self.t_0 < self.H:
            raise GeometryError("baseplate thickness t_0 must be below H")
        if not self.t_1 < self.S < self.W:
            raise GeometryError("need t_1 < S < W")
        return self.fin_count()

    @property
    def volume(self) -> float:
        return self.L * self.W * self.H

    def fin_y_ranges(self) -> list[tuple[float, float]]:
        """(y_start, y_end) of each fin; fins are centred with S/2 side margins."""
        n = self.fin_count()
        return [(self.S / 2 + k * self.S, self.S / 2 + k * self.S + self.t_1) for k in range(n)]


@dataclass(frozen=True)
class MaterialSpec:
    """Material and cooling constants (SI, temperatures in degC).

    Defaults: die-cast aluminium alloy, h = 30 W/(m^2 K), 25 degC ambient.
    """

    rho: float = 2.702e3
    c: float = 900.0
    lam: float = 96.0
    h: float = 30.0
    t_f: float = 25.0
    phi_dot: float = 1.5e6

    def __post_init__(self):
        if not (self.rho > 0 and self.c > 0 and self.lam > 0):
            raise DomainError("rho, c and lam must be positive")
        if self.h < 0:
            raise DomainError("h must be non-negative")

    @property
    def diffusivity(self) -> float:
        return self.lam / (self.rho * self.c)


@dataclass(frozen=True)
class BoundaryCondition:
    """One boundary-condition family.

    ``value`` is the wall temperature for dirichlet and the outward heat
    flux density (W/m^2) for neumann.
    """

    kind: str
    value: float = 0.0
    h: float = 0.0
    t_f: float = 25.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "robin", "adiabatic"):
            raise DomainError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == "robin" and self.h < 0:
            raise DomainError("robin condition needs h >= 0")

    @classmethod
    def dirichlet(cls, t_w):
        return cls("dirichlet", value=float(t_w))

    @classmethod
    def neumann(cls, flux):
        return cls("neumann", value=float(flux))

    @classmethod
    def robin(cls, h, t_f):
        return cls("robin", h=float(h), t_f=float(t_f))

    @classmethod
    def adiabatic(cls):
        return cls("adiabatic")


@dataclass
class TemperatureField:
    temps: np.ndarray
    solid_mask: np.ndarray
    spacing: tuple[float, float, float]
    tau: float = 0.0
    source_mask: np.ndarray | None = None
    t_f: float = 25.0
    # plane label -> (axis, layer index)
    planes: dict = dc_field(default_factory=dict)

    @property
    def shape(self):
        return self.temps.shape

    @property
    def voxel_volume(self) -> float:
        dx, dy, dz = self.spacing
        return dx * dy * dz

    def copy(self) -> "TemperatureField":
        return replace(self, temps=self.temps.copy())

    def objective(self) -> float:
        """Highest solid temperature."""
        return float(self.temps[self.solid_mask].max())

    def hottest_voxel(self) -> tuple[int, int, int]:
        """Index of the hottest solid voxel; ties go to the first in row-major order."""
        masked = np.where(self.solid_mask, self.temps, -np.inf)
        return tuple(int(i) for i in np.unravel_index(int(np.argmax(masked)), masked.shape))


@dataclass
class Snapshot:
    iter: int
    objective: float
    tau: float
    slices: dict
    residual: float = float("nan")


@dataclass
class SolverConfig:
    dt: float | None = None  # None -> dt_fraction * stability bound
    dt_fraction: float = 0.95
    snapshot_stride: int = 100
    residual_tol: float = 5e-4
    max_iters: int = 200_000


@dataclass
class SolveResult:
    snapshots: list
    field: TemperatureField
    converged: bool
    iterations: int
    dt: float


def desk_geometry() -> GeometrySpec:
    """Default study geometry: five 10 mm fins, exact on a 5 mm voxel grid."""
    return GeometrySpec(L=0.32, W=0.26, H=0.12, L_h=0.16, W_h=0.13, t_0=0.02, t_1=0.01, S=0.05)


DESK_RESOLUTION = (64, 52, 24)


def _axis_mask(n: int, d: float, lo: float, hi: float) -> np.ndarray:
    # voxel centres inside the closed interval; the tolerance keeps the rule mirror symmetric
    centres = (np.arange(n) + 0.5) * d
    tol = _TOL * d
    return (centres >= lo - tol) & (centres <= hi + tol)


def _middle_layer(indices: np.ndarray, centre: float) -> int:
    m = len(indices)
    if m % 2:
        return int(indices[m // 2])
    lo, hi = int(indices[m // 2 - 1]), int(indices[m // 2])
    return hi if abs(hi - centre) < abs(lo - centre) else lo


def build_geometry(spec: GeometrySpec, resolution, t_f: float = 25.0) -> TemperatureField:
    """Voxelize the baseplate and fins on an (nx, ny, nz) grid."""
    n_fins = spec.validate()
    nx, ny, nz = (int(r) for r in resolution)
    if min(nx, ny, nz) < 1:
        raise ResolutionError("resolution must be positive on every axis")
    dx, dy, dz = spec.L / nx, spec.W / ny, spec.H / nz
    if spec.t_1 / dy < 2 - _TOL or spec.t_0 / dz < 2 - _TOL:
        raise ResolutionError(
            f"need >= 2 voxels across t_1 and t_0 (got {spec.t_1 / dy:.3g} and {spec.t_0 / dz:.3g})"
        )

    base_z = _axis_mask(nz, dz, 0.0, spec.t_0)
    fin_z = _axis_mask(nz, dz, spec.t_0, spec.H)
    solid = np.zeros((nx, ny, nz), dtype=bool)
    solid[:, :, base_z] = True
    fin_layers = []
    for y0, y1 in spec.fin_y_ranges():
        ym = _axis_mask(ny, dy, y0, y1)
        if ym.sum() < 2:
            raise ResolutionError("a fin is thinner than two voxels on this grid")
        solid[:, ym[:, None] & fin_z[None, :]] = True
        fin_layers.append(_middle_layer(np.flatnonzero(ym), (ny - 1) / 2))

    xs = _axis_mask(nx, dx, (spec.L - spec.L_h) / 2, (spec.L + spec.L_h) / 2)
    ys = _axis_mask(ny, dy, (spec.W - spec.W_h) / 2, (spec.W + spec.W_h) / 2)
    source = xs[:, None, None] & ys[None, :, None] & base_z[None, None, :]

    planes = {}
    if n_fins == len(FIN_PLANES):
        for label, j in zip(FIN_PLANES, fin_layers):
            planes[label] = ("y", j)
    planes[BASE_PLANE] = ("z", _middle_layer(np.flatnonzero(base_z), -1.0))

    temps = np.full((nx, ny, nz), float(t_f))
    return TemperatureField(temps, solid, (dx, dy, dz), 0.0, source, float(t_f), planes)


def stability_bound(spacing, mat: MaterialSpec) -> float:
    dx, dy, dz = spacing
    return 1.0 / (2.0 * mat.diffusivity) / (1 / dx**2 + 1 / dy**2 + 1 / dz**2)


def _resolve_bc(bc, face: str) -> BoundaryCondition:
    if isinstance(bc, BoundaryCondition):
        return bc
    if isinstance(bc, Mapping):
        if face in bc:
            return bc[face]
        if "default" in bc:
            return bc["default"]
    raise DomainError(f"no boundary condition for face {face}")


@dataclass
class HeatOperator:
    """Compact linear update ``T' = T + coef * (sum_k G_k (T_nbr - T) + b - adiag * T)``."""

    index: np.ndarray  # flat grid indices of solid voxels
    nbr: np.ndarray  # (6, N) int64, self-index where no solid neighbour
    G: np.ndarray  # (6,) face conductances lam * A / d
    b: np.ndarray
    adiag: np.ndarray
    heat_capacity: float  # rho * c * V per voxel
    # per-face outward boundary flux bookkeeping: list of (voxel, conductance, ref temp, fixed flux)
    boundary: tuple

    def coef(self, dt: float) -> float:
        return dt / self.heat_capacity

    def matrix(self) -> sp.csr_matrix:
        """Steady-state system matrix ``A`` with ``A T = b``."""
        n = len(self.b)
        rows, cols, vals = [], [], []
        diag = self.adiag.copy()
        own = np.arange(n)
        for k in range(6):
            has = self.nbr[k] != own
            diag[has] += self.G[k]
            rows.append(own[has])
            cols.append(self.nbr[k][has])
            vals.append(np.full(int(has.sum()), -self.G[k]))
        rows.append(own)
        cols.append(own)
        vals.append(diag)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )


def build_operator(field: TemperatureField, mat: MaterialSpec, bc) -> HeatOperator:
    solid = field.solid_mask
    nx, ny, nz = solid.shape
    dx, dy, dz = field.spacing
    idx = np.full(solid.shape, -1, dtype=np.int64)
    coords = np.argwhere(solid)
    n = len(coords)
    idx[solid] = np.arange(n)
    own = np.arange(n, dtype=np.int64)

    area = {0: dy * dz, 1: dx * dz, 2: dx * dy}
    dist = {0: dx, 1: dy, 2: dz}
    G = np.empty(6)
    nbr = np.empty((6, n), dtype=np.int64)
    adiag = np.zeros(n)
    b = np.zeros(n)
    bvox, bcond, bref, bflux = [], [], [], []
    for k, (face, off) in enumerate(zip(FACES, _OFFSETS)):
        axis = k // 2
        G[k] = mat.lam * area[axis] / dist[axis]
        nc = coords + np.array(off)
        inside = np.all((nc >= 0) & (nc < np.array([nx, ny, nz])), axis=1)
        nidx = np.full(n, -1, dtype=np.int64)
        nidx[inside] = idx[tuple(nc[inside].T)]
        exposed = nidx < 0
        nbr[k] = np.where(exposed, own, nidx)
        if not exposed.any():
            continue
        cond = _resolve_bc(bc, face)
        A, d = area[axis], dist[axis]
        vox = own[exposed]
        if cond.kind == "robin":
            u = A / (1.0 / cond.h + d / (2 * mat.lam)) if cond.h > 0 else 0.0
            np.add.at(adiag, vox, u)
            np.add.at(b, vox, u * cond.t_f)
            ref, flux = cond.t_f, 0.0
        elif cond.kind == "dirichlet":
            u = 2 * mat.lam * A / d
            np.add.at(adiag, vox, u)
            np.add.at(b, vox, u * cond.value)
            ref, flux = cond.value, 0.0
        elif cond.kind == "neumann":
            u = 0.0
            np.add.at(b, vox, -cond.value * A)
            ref, flux = 0.0, cond.value * A
        else:
            u, ref, flux = 0.0, 0.0, 0.0
        bvox.append(vox)
        bcond.append(np.full(len(vox), u))
        bref.append(np.full(len(vox), ref))
        bflux.append(np.full(len(vox), flux))

    V = dx * dy * dz
    if field.source_mask is not None and mat.phi_dot:
        b += mat.phi_dot * V * field.source_mask[solid]
    cat = (lambda parts: np.concatenate(parts) if parts else np.zeros(0))
    boundary = (cat(bvox).astype(np.int64), cat(bcond), cat(bref), cat(bflux))
    return HeatOperator(
        np.flatnonzero(solid.ravel()), nbr, G, b, adiag, mat.rho * mat.c * V, boundary
    )


def _check_dt(field, mat, dt):
    bound = stability_bound(field.spacing, mat)
    if not dt > 0 or dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt={dt!r} outside (0, {bound!r}]")


def _gather(field, op):
    return field.temps.ravel()[op.index].astype(np.float64, copy=True)


def _scatter(field, op, T, tau):
    temps = np.full(field.temps.shape, field.t_f)
    temps.ravel()[op.index] = T
    return replace(field, temps=temps, tau=tau)


def _advance(op, T, dt, n_steps, trace=None):
    kernels.heat_advance(T, op.nbr, op.G, op.b, op.adiag, op.coef(dt), n_steps, trace)
    if not np.all(np.isfinite(T)):
        raise DivergenceError("non-finite temperature after explicit step")


def step_explicit(field: TemperatureField, mat: MaterialSpec, bc, dt: float,
                  n_steps: int = 1) -> TemperatureField:
    """Advance ``n_steps`` explicit steps of size ``dt``; returns a new field."""
    _check_dt(field, mat, dt)
    if not np.all(np.isfinite(field.temps)):
        raise DivergenceError("input field is not finite")
    op = build_operator(field, mat, bc)
    T = _gather(field, op)
    _advance(op, T, dt, n_steps)
    return _scatter(field, op, T, field.tau + n_steps * dt)


def steady_residual(field: TemperatureField, mat: MaterialSpec) -> float:
    """Max |discrete Laplacian + phi/lam| over fully interior solid voxels, normalised."""
    t = field.temps
    s = field.solid_mask
    interior = s.copy()
    interior[0, :, :] = interior[-1, :, :] = False
    interior[:, 0, :] = interior[:, -1, :] = False
    interior[:, :, 0] = interior[:, :, -1] = False
    core = (slice(1, -1),) * 3
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior[core] &= s[tuple(lo)] & s[tuple(hi)]
    if not interior.any():
        return 0.0
    lap = np.zeros(t.shape)
    for axis, d in enumerate(field.spacing):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        lap[core] += (t[tuple(hi)] - 2 * t[core] + t[tuple(lo)]) / d**2
    src = np.zeros(t.shape)
    if field.source_mask is not None and mat.phi_dot:
        src[field.source_mask] = mat.phi_dot / mat.lam
    scale = mat.phi_dot / mat.lam if mat.phi_dot else 1.0
    return float(np.max(np.abs(lap + src)[interior]) / scale)


def energy_balance(field: TemperatureField, mat: MaterialSpec, bc) -> tuple[float, float]:
    """(source power, total outward boundary heat flow) in watts."""
    op = build_operator(field, mat, bc)
    T = _gather(field, op)
    vox, cond, ref, flux = op.boundary
    outflow = float(np.sum(cond * (T[vox] - ref)) + np.sum(flux))
    src = 0.0
    if field.source_mask is not None:
        src = float(mat.phi_dot * field.voxel_volume * field.source_mask[field.solid_mask].sum())
    return src, outflow


def steady_state(field: TemperatureField, mat: MaterialSpec, bc) -> TemperatureField:
    """Direct sparse solve of the discrete steady problem (same operator as stepping)."""
    op = build_operator(field, mat, bc)
    A = op.matrix().tocsc()
    T = spla.spsolve(A, op.b)
    if not np.all(np.isfinite(T)):
        raise DivergenceError("steady system is singular (no Robin or Dirichlet face?)")
    return _scatter(field, op, T, math.inf)


def slice_field(field: TemperatureField, plane: str) -> np.ndarray:
    """Temperature layer of ``plane`` (A-E fins, F baseplate); void voxels are NaN.

    Fin planes come back as (nx, nz) arrays, the baseplate plane as (nx, ny).
    """
    if plane not in field.planes:
        raise DomainError(f"plane {plane!r} not in {sorted(field.planes)}")
    axis, layer = field.planes[plane]
    sel = [slice(None)] * 3
    sel["xyz".index(axis)] = layer
    sel = tuple(sel)
    return np.where(field.solid_mask[sel], field.temps[sel], np.nan)


def solve_to_steady(field: TemperatureField, mat: MaterialSpec, bc,
                    config: SolverConfig | None = None) -> SolveResult:
    """Step until the steady residual drops below ``residual_tol``.

    A snapshot (objective plus the six plane slices) is recorded at
    iteration 0 and then every ``snapshot_stride`` steps; convergence is
    tested at snapshot points.
    """
    config = config or SolverConfig()
    if not config.residual_tol > 0:
        raise DomainError("residual_tol must be positive")
    dt = config.dt if config.dt is not None else config.dt_fraction * stability_bound(field.spacing, mat)
    _check_dt(field, mat, dt)
    op = build_operator(field, mat, bc)
    T = _gather(field, op)
    it = 0
    current = field

    def snap(cur):
        res = steady_residual(cur, mat)
        slices = {p: slice_field(cur, p) for p in cur.planes}
        return Snapshot(it, cur.objective(), cur.tau, slices, res)

    snaps = [snap(current)]
    converged = snaps[-1].residual < config.residual_tol
    while not converged and it < config.max_iters:
        n = min(config.snapshot_stride, config.max_iters - it)
        _advance(op, T, dt, n)
        it += n
        current = _scatter(field, op, T, field.tau + it * dt)
        snaps.append(snap(current))
        converged = snaps[-1].residual < config.residual_tol
    if not converged:
        warnings.warn(
            f"solve_to_steady stopped at max_iters={config.max_iters} with residual "
            f"{snaps[-1].residual:.3e} >= {config.residual_tol:.3e}",
            RuntimeWarning,
        )
    return SolveResult(snaps, current, converged, it, dt)


def objective_trace(field: TemperatureField, mat: MaterialSpec, bc, dt: float,
                    n_steps: int) -> np.ndarray:
    """Objective after every step 0..n_steps (dense re-run used as ground truth)."""
    _check_dt(field, mat, dt)
    op = build_operator(field, mat, bc)
    T = _gather(field, op)
    trace = np.empty(n_steps + 1)
    trace[0] = field.objective()
    if n_steps:
        out = np.empty(n_steps)
        _advance(op, T, dt, n_steps, out)
        trace[1:] = out
    return trace


def study_bc(mat: MaterialSpec) -> BoundaryCondition:
    """Every exposed face convects to ambient."""
    return BoundaryCondition.robin(mat.h, mat.t_f)
