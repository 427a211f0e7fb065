"""Voxelated reaction-diffusion-advection fields for the extracellular species.

Concentrations are stored as ``(nz, ny, nx)`` arrays so that C-order flattening
is x-fastest.  One step applies, in order: explicit 7-point diffusion with
zero-gradient walls, first-order upwind transport along +x (zero inflow at the
x- face, outflow at the x+ face), exact first-order decay, and an optional
chemostat-style relaxation toward a supply concentration.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DomainError

SPECIES = ("attractant", "repellent", "glucose")


@dataclass(frozen=True)
class GridSpec:
    nx: int = 10
    ny: int = 10
    nz: int = 10
    voxel_edge_um: float = 10.0
    dt_s: float = 0.01

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ConfigurationError(f"grid dims must be >= 1, got {(self.nx, self.ny, self.nz)}")
        if not self.voxel_edge_um > 0:
            raise ConfigurationError("voxel_edge_um must be positive")
        if not self.dt_s > 0:
            raise ConfigurationError("dt_s must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def voxel_volume(self) -> float:
        return self.voxel_edge_um ** 3

    @property
    def extent(self) -> np.ndarray:
        """Box size along (x, y, z) in µm."""
        return np.array([self.nx, self.ny, self.nz], dtype=float) * self.voxel_edge_um

    def contains(self, pos) -> np.ndarray:
        p = np.asarray(pos, dtype=float)
        return np.all((p >= 0.0) & (p <= self.extent), axis=-1)

    def voxel_index(self, pos) -> np.ndarray:
        """Flat x-fastest voxel index of each position.

        A point lying exactly on a voxel face belongs to the lower-index voxel.
        """
        p = np.asarray(pos, dtype=float)
        if not np.all(self.contains(p)):
            raise DomainError(f"position outside domain [0, {self.extent.tolist()}]")
        return self._index(p)

    def _index(self, p: np.ndarray) -> np.ndarray:
        ijk = np.ceil(p * (1.0 / self.voxel_edge_um)).astype(np.int64) - 1
        ijk = np.minimum(np.maximum(ijk, 0), (self.nx - 1, self.ny - 1, self.nz - 1))
        return ijk[..., 0] + self.nx * (ijk[..., 1] + self.ny * ijk[..., 2])

    def check_stability(self, params: "list[SpeciesParams] | tuple") -> None:
        """Raise if ``dt`` breaks the explicit diffusion or advection bounds."""
        h, dt = self.voxel_edge_um, self.dt_s
        d_max = max((p.diffusion_um2_per_s for p in params), default=0.0)
        if d_max > 0 and dt > h * h / (6.0 * d_max) * (1 + 1e-12):
            raise ConfigurationError(
                f"dt_s={dt} violates diffusion bound {h * h / (6.0 * d_max):.6g} s")
        v_max = max((p.flow_um_per_s for p in params), default=0.0)
        if v_max * dt > h * (1 + 1e-12):
            raise ConfigurationError(f"dt_s={dt} violates advection CFL bound {h / v_max:.6g} s")


@dataclass(frozen=True)
class SpeciesParams:
    species_id: str
    diffusion_um2_per_s: float = 100.0
    decay_per_s: float = 0.02
    flow_um_per_s: float = 1.0
    # Uniform relaxation toward supply_conc; only glucose uses it by default.
    supply_rate_per_s: float = 0.0
    supply_conc_per_um3: float = 0.0

    def __post_init__(self):
        if self.species_id not in SPECIES:
            raise ConfigurationError(f"unknown species {self.species_id!r}")
        for name in ("diffusion_um2_per_s", "decay_per_s", "flow_um_per_s",
                     "supply_rate_per_s", "supply_conc_per_um3"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{self.species_id}.{name} must be >= 0")


@dataclass
class ChemicalField:
    spec: GridSpec
    params: SpeciesParams
    conc: np.ndarray = field(repr=False)

    @property
    def flat(self) -> np.ndarray:
        return self.conc.reshape(-1)

    def copy(self) -> "ChemicalField":
        return ChemicalField(self.spec, self.params, self.conc.copy())


def new_field(spec: GridSpec, params: SpeciesParams, initial: float = 0.0) -> ChemicalField:
    if initial < 0:
        raise ConfigurationError("initial concentration must be >= 0")
    spec.check_stability([params])
    return ChemicalField(spec, params, np.full(spec.shape, float(initial)))


def step_field(f: ChemicalField) -> ChemicalField:
    """Advance ``f`` in place by one timestep and return it.

    Diffusion uses ``(1 - 6r) c + r * sum(neighbours)`` with a missing neighbour
    replaced by the voxel itself (zero flux); upwind transport along +x takes
    zero concentration in at x- and lets mass leave at x+.  With
    ``r <= 1/6`` and Courant number ``<= 1`` every substep keeps concentrations
    nonnegative.
    """
    spec, p = f.spec, f.params
    h, dt = spec.voxel_edge_um, spec.dt_s
    f.conc = _kernels.field_step(
        f.conc, p.diffusion_um2_per_s * dt / (h * h), p.flow_um_per_s * dt / h,
        math.exp(-p.decay_per_s * dt), dt * p.supply_rate_per_s, p.supply_conc_per_um3)
    return f


def deposit(f: ChemicalField, position, amount: float) -> ChemicalField:
    if amount < 0:
        raise ConfigurationError("deposit amount must be >= 0")
    idx = f.spec.voxel_index(position)
    f.flat[idx] += amount / f.spec.voxel_volume
    return f


def deposit_many(f: ChemicalField, positions, amounts, idx=None) -> ChemicalField:
    """Deposit per-agent amounts; contributions are summed in agent order.

    ``idx`` may carry precomputed voxel indices for ``positions``.
    """
    if idx is None:
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        if len(positions) == 0:
            return f
        idx = f.spec.voxel_index(positions)
    add = np.bincount(idx, weights=np.asarray(amounts, dtype=float),
                      minlength=f.spec.n_voxels)
    f.flat[:] += add / f.spec.voxel_volume
    return f


def withdraw(f: ChemicalField, position, requested: float) -> tuple[ChemicalField, float]:
    if requested < 0:
        raise ConfigurationError("withdrawal request must be >= 0")
    idx = int(f.spec.voxel_index(position))
    vol = f.spec.voxel_volume
    available = f.flat[idx] * vol
    granted = min(requested, available)
    f.flat[idx] = 0.0 if granted >= available else (available - granted) / vol
    return f, granted


def withdraw_many(f: ChemicalField, positions, requested, idx=None) -> np.ndarray:
    """Sequential withdrawals in agent order.

    Agent ``i`` receives ``min(request_i, what is left in its voxel after agents
    0..i-1 have withdrawn)``.  Returns the granted amounts.
    """
    req = np.asarray(requested, dtype=float)
    if len(req) == 0:
        return np.zeros(0)
    if np.any(req < 0):
        raise ConfigurationError("withdrawal request must be >= 0")
    if idx is None:
        idx = f.spec.voxel_index(np.asarray(positions, dtype=float).reshape(-1, 3))
    return _kernels.withdraw_sequential(f.flat, np.asarray(idx, dtype=np.int64), req,
                                        f.spec.voxel_volume)


def sample(f: ChemicalField, position) -> np.ndarray | float:
    """Piecewise-constant concentration at ``position`` (one or many points)."""
    idx = f.spec.voxel_index(position)
    out = f.flat[idx]
    return float(out) if np.ndim(out) == 0 else out


def total_mass(f: ChemicalField) -> float:
    return float(f.conc.sum() * f.spec.voxel_volume)


def write_field_csv(path, fields: dict[str, ChemicalField], step: int, append: bool = False) -> None:
    """Rows ``(step, species, ix, iy, iz, conc)`` in x-fastest order."""
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(["step", "species", "ix", "iy", "iz", "conc"])
        for name, f in fields.items():
            nz, ny, nx = f.conc.shape
            for iz in range(nz):
                for iy in range(ny):
                    for ix in range(nx):
                        w.writerow([step, name, ix, iy, iz, repr(float(f.conc[iz, iy, ix]))])
