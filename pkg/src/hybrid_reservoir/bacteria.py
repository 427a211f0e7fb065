"""Bacterial collective: adaptation, run-and-tumble motility, metabolism, quorum output.

Agents are stored column-wise in :class:`Population`; every per-agent rule is
written elementwise so it applies equally to one agent or to the whole roster.
Randomness comes from :mod:`hybrid_reservoir.rng`, keyed by agent id and step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import rng
from .errors import ConfigurationError
from .fields import ChemicalField, GridSpec, deposit_many, withdraw_many
from .transducer import reflect


@dataclass(frozen=True)
class ChemoParams:
    k_R_per_s: float = 0.005
    k_B_per_s: float = 0.005
    T0_per_s: float = 1.0
    gamma_t: float = 10.0
    a0: float = 0.5
    N_r: float = 6.0
    K_a_per_um3: float = 1.0
    K_r_per_um3: float = 1.0
    alpha_m: float = 1.0
    m0: float = 0.0
    run_speed_um_per_s: float = 20.0

    def __post_init__(self):
        if min(self.k_R_per_s, self.k_B_per_s, self.T0_per_s) <= 0:
            raise ConfigurationError("k_R, k_B and T0 must be positive")
        if not 0 < self.a0 < 1:
            raise ConfigurationError("a0 must lie in (0, 1)")
        if min(self.K_a_per_um3, self.K_r_per_um3) <= 0:
            raise ConfigurationError("K_a and K_r must be positive")
        if self.run_speed_um_per_s < 0:
            raise ConfigurationError("run speed must be >= 0")

    @property
    def adapted_activity(self) -> float:
        return self.k_R_per_s / (self.k_R_per_s + self.k_B_per_s)


@dataclass(frozen=True)
class MetabolicParams:
    V_max_per_s: float = 1.0
    K_g_per_um3: float = 5.0
    eta_per_s: float = 0.1
    E_div: float = 4.0
    E_death: float = 0.5
    E_init: float = 2.0
    tox_threshold_per_um3: float = 1.0e3
    p_base_death_per_window: float = 0.02
    # Glucose molecules withdrawn per unit of energy gained.
    molecules_per_energy: float = 1300.0
    cell_length_um: float = 1.0

    def __post_init__(self):
        for name in ("V_max_per_s", "K_g_per_um3", "eta_per_s", "E_div", "E_death",
                     "tox_threshold_per_um3", "molecules_per_energy", "cell_length_um"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"metabolism.{name} must be positive")
        if not self.E_death < self.E_div:
            raise ConfigurationError("need E_death < E_div")
        if not 0 <= self.p_base_death_per_window <= 1:
            raise ConfigurationError("p_base_death_per_window must be a probability")
        if self.E_init < 0:
            raise ConfigurationError("E_init must be >= 0")


@dataclass(frozen=True)
class QuorumParams:
    alpha_AHL_molecules_per_s: float = 20.0
    K_G_AHL_per_um3: float = 5.0

    def __post_init__(self):
        if not (self.alpha_AHL_molecules_per_s > 0 and self.K_G_AHL_per_um3 > 0):
            raise ConfigurationError("quorum parameters must be positive")


@dataclass
class Bacterium:
    position: np.ndarray
    heading: np.ndarray
    m: float
    a: float
    E: float
    alive: bool = True
    agent_id: int = -1


@dataclass
class Population:
    ids: np.ndarray
    pos: np.ndarray
    heading: np.ndarray
    m: np.ndarray
    a: np.ndarray
    E: np.ndarray
    next_id: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    def agent(self, i: int) -> Bacterium:
        return Bacterium(self.pos[i].copy(), self.heading[i].copy(), float(self.m[i]),
                         float(self.a[i]), float(self.E[i]), True, int(self.ids[i]))

    def take(self, keep) -> "Population":
        return Population(self.ids[keep], self.pos[keep], self.heading[keep], self.m[keep],
                          self.a[keep], self.E[keep], self.next_id)

    @staticmethod
    def empty() -> "Population":
        z = np.zeros(0)
        return Population(np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3)),
                          z.copy(), z.copy(), z.copy(), 0)


def seed_population(n: int, grid: GridSpec, chemo: ChemoParams, metab: MetabolicParams,
                    seed: int) -> Population:
    """``n`` agents placed uniformly in the box, adapted to an empty environment."""
    ids = np.arange(n, dtype=np.int64)
    pos = np.stack([rng.uniform(seed, rng.INIT, ids, 0, c) for c in range(3)], axis=-1)
    pos = pos * grid.extent
    heading = rng.unit_vectors(seed, rng.INIT, ids, 0, 3)
    m = np.full(n, chemo.m0)
    a = receptor_activity(0.0, 0.0, m, chemo) * np.ones(n)
    return Population(ids, pos, heading, m, a, np.full(n, metab.E_init), n)


def receptor_activity(c_a, c_r, m, p: ChemoParams):
    """Two-state receptor activity in (0, 1).

    Free energy grows with attractant occupancy and falls with repellent
    occupancy and with methylation, so activity rises with methylation and the
    methylation feedback is stabilizing.
    """
    f = (-p.alpha_m * (np.asarray(m) - p.m0)
         + np.log1p(np.asarray(c_a) / p.K_a_per_um3)
         - np.log1p(np.asarray(c_r) / p.K_r_per_um3))
    return expit(-p.N_r * f)


def methylation_rate(a, p: ChemoParams):
    return p.k_R_per_s * (1.0 - a) - p.k_B_per_s * a


def step_methylation(m, a, c_a, c_r, p: ChemoParams, dt: float):
    """Explicit Euler update of methylation, then activity at the new level."""
    m_new = m + dt * methylation_rate(a, p)
    return m_new, receptor_activity(c_a, c_r, m_new, p)


def tumble_rate(a, p: ChemoParams):
    return p.T0_per_s * np.exp(p.gamma_t * (np.asarray(a) - p.a0))


def tumble_probability(a, p: ChemoParams, dt: float):
    return -np.expm1(-tumble_rate(a, p) * dt)


def step_motion(pos, heading, a, p: ChemoParams, dt: float, grid: GridSpec,
                seed: int, ids, step: int):
    """Tumble with the per-step probability, then run straight with wall reflection."""
    ids = np.asarray(ids)
    tumble = rng.uniform(seed, rng.BACTERIA, ids, step, 0) < tumble_probability(a, p, dt)
    if np.any(tumble):
        fresh = rng.unit_vectors(seed, rng.BACTERIA, ids[tumble], step, 1)
        heading = heading.copy()
        heading[tumble] = fresh
    pos = pos + (p.run_speed_um_per_s * dt) * heading
    return reflect(pos, heading, grid.extent)


def monod_uptake(c_g, p: MetabolicParams):
    return p.V_max_per_s * np.asarray(c_g) / (p.K_g_per_um3 + np.asarray(c_g))


def step_metabolism(E, pos, glucose: ChemicalField, p: MetabolicParams, dt: float, idx=None):
    """Monod uptake from the local voxel and basal expenditure.

    Energy gained is limited by the glucose actually granted from the voxel.
    Returns ``(E_new, consumed_molecules)``.
    """
    if idx is None:
        idx = glucose.spec.voxel_index(np.asarray(pos, dtype=float).reshape(-1, 3))
    c_g = glucose.flat[idx]
    request = dt * monod_uptake(c_g, p) * p.molecules_per_energy
    granted = withdraw_many(glucose, pos, request, idx)
    E_new = E + granted / p.molecules_per_energy - dt * p.eta_per_s * E
    return np.maximum(E_new, 0.0), granted


def ahl_production_rate(G, q: QuorumParams):
    G = np.asarray(G)
    return q.alpha_AHL_molecules_per_s * G / (q.K_G_AHL_per_um3 + G)


def lifecycle(pop: Population, repellent: ChemicalField, p: MetabolicParams,
              seed: int, step: int, grid: GridSpec, window_end: bool = True) -> Population:
    """Division, then starvation, toxicity and baseline death.

    Births are taken from the pre-step roster in index order; daughters are
    appended with fresh ids.  Deaths are then applied to the whole roster.  The
    per-window baseline death draw happens only when ``window_end`` is set.
    """
    if len(pop) == 0:
        return pop
    divide = pop.E >= p.E_div
    if np.any(divide):
        parents = np.flatnonzero(divide)
        E = pop.E.copy()
        E[parents] *= 0.5
        new_ids = np.arange(pop.next_id, pop.next_id + len(parents), dtype=np.int64)
        offset = rng.unit_vectors(seed, rng.LIFECYCLE, pop.ids[parents], step, 0)
        d_pos, d_head = reflect(pop.pos[parents] + p.cell_length_um * offset,
                                pop.heading[parents], grid.extent)
        pop = Population(np.r_[pop.ids, new_ids], np.vstack([pop.pos, d_pos]),
                         np.vstack([pop.heading, d_head]), np.r_[pop.m, pop.m[parents]],
                         np.r_[pop.a, pop.a[parents]], np.r_[E, E[parents]],
                         pop.next_id + len(parents))
    dead = pop.E <= p.E_death
    dead |= repellent.flat[grid._index(pop.pos)] > p.tox_threshold_per_um3
    if window_end and p.p_base_death_per_window > 0:
        dead |= rng.uniform(seed, rng.LIFECYCLE, pop.ids, step, 1) < p.p_base_death_per_window
    if np.any(dead):
        pop = pop.take(~dead)
    return pop


def write_population_csv(path, pop: Population, step: int, append: bool = False) -> None:
    """Rows ``(step, agent_id, px, py, pz, m, a, E)``."""
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(["step", "agent_id", "px", "py", "pz", "m", "a", "E"])
        for i in range(len(pop)):
            w.writerow([step, int(pop.ids[i])] + [repr(float(v)) for v in
                        (*pop.pos[i], pop.m[i], pop.a[i], pop.E[i])])
