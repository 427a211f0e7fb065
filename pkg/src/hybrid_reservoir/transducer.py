"""Artificial-cell transducers: two-stage leaky integrator with gated secretion."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from . import rng
from .errors import ConfigurationError
from .fields import GridSpec

ROLES = ("attractant", "repellent")


@dataclass(frozen=True)
class ACParams:
    k_u_per_s: float = 1.0
    gamma_x_per_s: float = 0.5
    k_x_per_s: float = 1.0
    gamma_s_per_s: float = 0.5
    attractant_gain_molecules_per_s: float = 2.0e4
    repellent_gain_molecules_per_s: float = 2.0e4
    window_s: float = 10.0
    stim_s: float = 5.0
    speed_um_per_s: float = 1.0
    # Repellent cell driven by (1 - u) instead of u.
    antisymmetric: bool = False

    def __post_init__(self):
        for name in ("k_u_per_s", "gamma_x_per_s", "k_x_per_s", "gamma_s_per_s",
                     "attractant_gain_molecules_per_s", "repellent_gain_molecules_per_s",
                     "speed_um_per_s"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"ac.{name} must be >= 0")
        if not 0 < self.stim_s <= self.window_s:
            raise ConfigurationError("need 0 < stim_s <= window_s")

    def gain(self, role: str) -> float:
        return (self.attractant_gain_molecules_per_s if role == "attractant"
                else self.repellent_gain_molecules_per_s)


@dataclass(frozen=True)
class ACState:
    x_ac: float
    s_ac: float
    position: tuple[float, float, float]
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown AC role {self.role!r}")


@lru_cache(maxsize=64)
def _propagator(k_u, gamma_x, k_x, gamma_s, dt):
    # Augmented generator for (x, s, u) with u held constant.
    a = np.array([[-gamma_x, 0.0, k_u],
                  [k_x, -gamma_s, 0.0],
                  [0.0, 0.0, 0.0]])
    m = expm(a * dt)
    return tuple(float(v) for v in (m[0, 0], m[0, 1], m[1, 0], m[1, 1], m[0, 2], m[1, 2]))


def step_internal(state: ACState, u: float, params: ACParams, dt: float) -> ACState:
    """Advance the integrator by ``dt`` with the exact solution for constant ``u``."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    p00, p01, p10, p11, g0, g1 = _propagator(params.k_u_per_s, params.gamma_x_per_s,
                                             params.k_x_per_s, params.gamma_s_per_s, float(dt))
    x0, s0 = state.x_ac, state.s_ac
    return replace(state, x_ac=p00 * x0 + p01 * s0 + g0 * u, s_ac=p10 * x0 + p11 * s0 + g1 * u)


def fixed_point(u: float, params: ACParams) -> tuple[float, float]:
    x = params.k_u_per_s * u / params.gamma_x_per_s
    return x, params.k_x_per_s * x / params.gamma_s_per_s


def gate(tau: float, params: ACParams) -> int:
    """1 while stimulating (0 < tau < T_p), 0 during relaxation."""
    return 1 if 0.0 < tau < params.stim_s else 0


def secretion_rate(state: ACState, tau: float, params: ACParams) -> float:
    return params.gain(state.role) * state.s_ac * gate(tau, params)


def drive(u: float, role: str, params: ACParams) -> float:
    """Input seen by a cell of ``role``."""
    if params.antisymmetric and role == "repellent":
        return 1.0 - u
    return u


def reflect(pos: np.ndarray, heading: np.ndarray, extent: np.ndarray):
    """Mirror positions back into ``[0, extent]``; flip heading components that hit a wall."""
    pos = pos.copy()
    heading = heading.copy()
    for _ in range(4):
        lo = pos < 0.0
        hi = pos > extent
        if not (lo.any() or hi.any()):
            break
        pos = np.where(lo, -pos, pos)
        pos = np.where(hi, 2.0 * extent - pos, pos)
        heading = np.where(lo | hi, -heading, heading)
    return np.clip(pos, 0.0, extent), heading


def step_motion_ac(state: ACState, dt: float, params: ACParams, grid: GridSpec,
                   seed: int, ac_id: int, step: int) -> ACState:
    """Isotropic random step of length ``speed * dt`` with reflecting walls."""
    if params.speed_um_per_s == 0:
        return state
    direction = rng.unit_vector_scalar(seed, rng.AC_MOTION, ac_id, step)
    ell = params.speed_um_per_s * dt
    pos = []
    for x, d, hi in zip(state.position, direction, (grid.nx, grid.ny, grid.nz)):
        x, hi = x + ell * d, hi * grid.voxel_edge_um
        for _ in range(4):
            if x < 0.0:
                x = -x
            elif x > hi:
                x = 2.0 * hi - x
            else:
                break
        pos.append(min(max(x, 0.0), hi))
    return replace(state, position=tuple(pos))


def write_ac_log(path, rows) -> None:
    """Rows of ``(step, ac_id, x_ac, s_ac, rate, px, py, pz)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "ac_id", "x_ac", "s_ac", "rate", "px", "py", "pz"])
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])
