"""Windowed orchestration of artificial cells, bacteria and fields.

Per inner timestep the order is fixed: artificial cells (integrator, motion,
secretion), bacteria (sensing, methylation, motion, metabolism, AHL output),
lifecycle, then one field step per species.  The reservoir state of window
``n`` is ``[attractant voxels, repellent voxels, bacteria per voxel]``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng
from . import bacteria as bac
from .bacteria import ChemoParams, MetabolicParams, Population, QuorumParams
from .errors import ConfigurationError, SchemaError
from .fields import (SPECIES, ChemicalField, GridSpec, SpeciesParams, deposit,
                     deposit_many, new_field, step_field)
from .transducer import ACParams, ACState, drive, secretion_rate, step_internal, step_motion_ac

log = logging.getLogger(__name__)

SNAPSHOT_MODES = ("end-of-window", "window-mean")


def default_species() -> dict[str, SpeciesParams]:
    return {
        "attractant": SpeciesParams("attractant", 100.0, 0.02, 1.0),
        "repellent": SpeciesParams("repellent", 100.0, 0.02, 1.0),
        "glucose": SpeciesParams("glucose", 400.0, 0.0, 1.0,
                                 supply_rate_per_s=0.05, supply_conc_per_um3=10.0),
    }


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    species: dict = field(default_factory=default_species)
    initial_conc_per_um3: dict = field(
        default_factory=lambda: {"attractant": 0.0, "repellent": 0.0, "glucose": 10.0})
    ac: ACParams = field(default_factory=ACParams)
    ac_positions_um: tuple = ((30.0, 35.0, 50.0), (30.0, 65.0, 50.0))
    ac_roles: tuple = ("attractant", "repellent")
    chemo: ChemoParams = field(default_factory=ChemoParams)
    metabolism: MetabolicParams = field(default_factory=MetabolicParams)
    quorum: QuorumParams = field(default_factory=QuorumParams)
    n_bact_init: int = 90
    n_windows: int = 650
    n_washin: int = 50
    seed: int = 12345
    snapshot_mode: str = "end-of-window"

    def __post_init__(self):
        if set(self.species) != set(SPECIES):
            raise ConfigurationError(f"species must be exactly {SPECIES}")
        for name, sp in self.species.items():
            if sp.species_id != name:
                raise ConfigurationError(f"species entry {name!r} has id {sp.species_id!r}")
        if set(self.initial_conc_per_um3) != set(SPECIES):
            raise ConfigurationError(f"initial concentrations must cover {SPECIES}")
        if any(v < 0 for v in self.initial_conc_per_um3.values()):
            raise ConfigurationError("initial concentrations must be >= 0")
        if len(self.ac_positions_um) != len(self.ac_roles):
            raise ConfigurationError("one position per artificial cell required")
        if not self.grid.contains(np.asarray(self.ac_positions_um, dtype=float)).all():
            raise ConfigurationError("artificial cell outside the domain")
        if self.n_bact_init < 0:
            raise ConfigurationError("n_bact_init must be >= 0")
        if not self.n_windows > self.n_washin >= 0:
            raise ConfigurationError("need n_windows > n_washin >= 0")
        if self.snapshot_mode not in SNAPSHOT_MODES:
            raise ConfigurationError(f"snapshot_mode must be one of {SNAPSHOT_MODES}")
        if self.metabolism.eta_per_s * self.grid.dt_s >= 1:
            raise ConfigurationError("eta * dt must be < 1 to keep energy nonnegative")
        spw = self.ac.window_s / self.grid.dt_s
        if abs(spw - round(spw)) > 1e-6 or round(spw) < 1:
            raise ConfigurationError("window_s must be a whole number of timesteps")
        sps = self.ac.stim_s / self.grid.dt_s
        if abs(sps - round(sps)) > 1e-6:
            raise ConfigurationError("stim_s must be a whole number of timesteps")
        self.grid.check_stability(list(self.species.values()))

    @property
    def steps_per_window(self) -> int:
        return int(round(self.ac.window_s / self.grid.dt_s))

    @property
    def stim_steps(self) -> int:
        return int(round(self.ac.stim_s / self.grid.dt_s))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ac_positions_um"] = [list(p) for p in self.ac_positions_um]
        d["ac_roles"] = list(self.ac_roles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        _reject_unknown(d, cls, "simulation")
        kw = {}
        simple = {"grid": GridSpec, "ac": ACParams, "chemo": ChemoParams,
                  "metabolism": MetabolicParams, "quorum": QuorumParams}
        for name, typ in simple.items():
            if name in d:
                _reject_unknown(d[name], typ, name)
                kw[name] = typ(**d.pop(name))
        if "species" in d:
            species = default_species()
            for name, sd in d.pop("species").items():
                if name not in SPECIES:
                    raise ConfigurationError(f"unknown species {name!r}")
                sd = {"species_id": name, **sd}
                _reject_unknown(sd, SpeciesParams, f"species.{name}")
                species[name] = SpeciesParams(**sd)
            kw["species"] = species
        if "initial_conc_per_um3" in d:
            init = {"attractant": 0.0, "repellent": 0.0, "glucose": 10.0}
            init.update(d.pop("initial_conc_per_um3"))
            kw["initial_conc_per_um3"] = init
        if "ac_positions_um" in d:
            kw["ac_positions_um"] = tuple(tuple(float(v) for v in p) for p in d.pop("ac_positions_um"))
        if "ac_roles" in d:
            kw["ac_roles"] = tuple(d.pop("ac_roles"))
        kw.update(d)
        return cls(**kw)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def _reject_unknown(d: dict, typ, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(typ)}
    extra = sorted(set(d) - names)
    if extra:
        raise ConfigurationError(f"{where}: unknown key(s) {extra}")


def config_digest(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class StateTrajectory:
    states: np.ndarray
    inputs: np.ndarray
    meta: dict = field(default_factory=dict)
    extinct_at: int | None = None

    def __len__(self) -> int:
        return len(self.states)

    @property
    def n_voxels(self) -> int:
        return self.states.shape[1] // 3

    def save(self, path) -> None:
        """Header JSON line, CSV column names, then one row per window."""
        V = self.n_voxels
        header = dict(self.meta, V=V, n_windows=len(self), extinct_at=self.extinct_at)
        cols = ([f"ca_{j}" for j in range(V)] + [f"cr_{j}" for j in range(V)]
                + [f"p_{j}" for j in range(V)] + ["u"])
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fh.write(",".join(cols) + "\n")
            for row, u in zip(self.states, self.inputs):
                fh.write(",".join(map(repr, row.tolist())) + "," + repr(float(u)) + "\n")

    @classmethod
    def load(cls, path) -> "StateTrajectory":
        with open(path) as fh:
            first = fh.readline()
            cols = fh.readline().rstrip("\n").split(",")
            if not first.startswith("# "):
                raise SchemaError(f"{path}: missing JSON header line")
            try:
                header = json.loads(first[2:])
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: bad header JSON ({exc})") from exc
            V = header.get("V")
            if not isinstance(V, int) or len(cols) != 3 * V + 1 or cols[-1] != "u":
                raise SchemaError(f"{path}: columns do not match V={V}")
            rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
        data = np.array(rows, dtype=float).reshape(-1, 3 * V + 1)
        if len(data) != header.get("n_windows"):
            raise SchemaError(f"{path}: expected {header.get('n_windows')} rows, got {len(data)}")
        extinct = header.pop("extinct_at", None)
        header.pop("V", None)
        header.pop("n_windows", None)
        return cls(data[:, :-1].copy(), data[:, -1].copy(), header, extinct)


def extract_state(fields: dict[str, ChemicalField], pop: Population, grid: GridSpec) -> np.ndarray:
    """``[c_a; c_r; p]`` with x-fastest ordering inside each block."""
    V = grid.n_voxels
    if len(pop):
        density = np.bincount(grid.voxel_index(pop.pos), minlength=V).astype(float)
    else:
        density = np.zeros(V)
    return np.concatenate([fields["attractant"].flat, fields["repellent"].flat, density])


def discard_washin(traj: StateTrajectory, n_washin: int) -> StateTrajectory:
    if n_washin < 0 or n_washin >= len(traj):
        raise ConfigurationError(f"cannot discard {n_washin} of {len(traj)} windows")
    meta = dict(traj.meta, n_washin_discarded=traj.meta.get("n_washin_discarded", 0) + n_washin)
    extinct = None if traj.extinct_at is None else traj.extinct_at - n_washin
    return StateTrajectory(traj.states[n_washin:].copy(), traj.inputs[n_washin:].copy(),
                           meta, extinct)


class Reservoir:
    """Mutable simulation state advanced one timestep or one window at a time."""

    def __init__(self, cfg: SimConfig, seed: int | None = None, workers: int = 1):
        self.cfg = cfg
        self.seed = int(cfg.seed if seed is None else seed)
        self.workers = max(1, int(workers))
        self.grid = cfg.grid
        self.fields = {name: new_field(cfg.grid, cfg.species[name], cfg.initial_conc_per_um3[name])
                       for name in SPECIES}
        self.acs = [ACState(0.0, 0.0, tuple(p), role)
                    for p, role in zip(cfg.ac_positions_um, cfg.ac_roles)]
        self.pop = bac.seed_population(cfg.n_bact_init, cfg.grid, cfg.chemo, cfg.metabolism,
                                       self.seed)
        self.step_count = 0
        self.window = 0
        self.ac_log: list[tuple] = []
        self._last_rates: dict[int, float] = {}
        self._extent = cfg.grid.extent
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # -- one timestep ----------------------------------------------------------

    def _step_acs(self, u: float, j: int) -> None:
        cfg, dt = self.cfg, self.grid.dt_s
        tau = (j + 0.5) * dt  # gate evaluated at the step midpoint
        for i, ac in enumerate(self.acs):
            ac = step_internal(ac, drive(u, ac.role, cfg.ac), cfg.ac, dt)
            ac = step_motion_ac(ac, dt, cfg.ac, self.grid, self.seed, i, self.step_count)
            rate = secretion_rate(ac, tau, cfg.ac)
            if rate > 0:
                deposit(self.fields[ac.role], ac.position, rate * dt)
            self.acs[i] = ac
            self._last_rates[i] = rate

    def _agent_kernel(self, sl: slice):
        # Elementwise per-agent work; reads fields, writes nothing shared.
        # Compiled form of bac.step_methylation followed by bac.step_motion.
        p, c, g = self.pop, self.cfg.chemo, self.grid
        keys = [rng.stream_key(self.seed, rng.BACTERIA, self.step_count, ch) for ch in range(3)]
        return _kernels.agents_step(
            p.pos[sl], p.heading[sl], p.m[sl], p.a[sl], p.ids[sl],
            self.fields["attractant"].flat, self.fields["repellent"].flat,
            1.0 / g.voxel_edge_um, g.nx, g.ny, g.nz, self._extent,
            c.k_R_per_s, c.k_B_per_s, c.T0_per_s, c.gamma_t, c.a0, c.N_r, c.K_a_per_um3,
            c.K_r_per_um3, c.alpha_m, c.m0, c.run_speed_um_per_s, g.dt_s, *keys)

    def _step_bacteria(self) -> None:
        p, cfg, dt = self.pop, self.cfg, self.grid.dt_s
        n = len(p)
        if n == 0:
            return
        if self._pool is not None and n >= 2 * self.workers:
            bounds = np.linspace(0, n, self.workers + 1).astype(int)
            parts = list(self._pool.map(self._agent_kernel,
                                        [slice(b0, b1) for b0, b1 in zip(bounds[:-1], bounds[1:])]))
            pos, heading, m, a, idx = (np.concatenate(x) for x in zip(*parts))
        else:
            pos, heading, m, a, idx = self._agent_kernel(slice(0, n))
        p.m, p.a, p.pos, p.heading = m, a, pos, heading
        glucose = self.fields["glucose"]
        g_local = glucose.flat[idx]
        p.E, _ = bac.step_metabolism(p.E, pos, glucose, cfg.metabolism, dt, idx)
        deposit_many(self.fields["attractant"], pos,
                     bac.ahl_production_rate(g_local, cfg.quorum) * dt, idx)

    def step(self, u: float, j: int) -> None:
        """One timestep; ``j`` is the step index within the current window."""
        self._step_acs(u, j)
        self._step_bacteria()
        self.pop = bac.lifecycle(self.pop, self.fields["repellent"], self.cfg.metabolism,
                                 self.seed, self.step_count, self.grid,
                                 window_end=(j == self.cfg.steps_per_window - 1))
        for f in self.fields.values():
            step_field(f)
        self.step_count += 1

    def run_window(self, u: float) -> np.ndarray:
        spw = self.cfg.steps_per_window
        mean_mode = self.cfg.snapshot_mode == "window-mean"
        acc = None
        for j in range(spw):
            self.step(u, j)
            if mean_mode:
                s = extract_state(self.fields, self.pop, self.grid)
                acc = s if acc is None else acc + s
        for i, ac in enumerate(self.acs):
            self.ac_log.append((self.step_count, i, ac.x_ac, ac.s_ac,
                                self._last_rates.get(i, 0.0), *ac.position))
        self.window += 1
        return acc / spw if mean_mode else extract_state(self.fields, self.pop, self.grid)


def run_simulation(cfg: SimConfig, u, seed: int | None = None, workers: int = 1,
                   on_window=None) -> StateTrajectory:
    """Drive the reservoir with ``u[0 .. n_windows-1]`` and record one state per window.

    If the population dies out, the trajectory stops at that window and
    ``extinct_at`` records it.
    """
    u = np.asarray(u, dtype=float)
    if len(u) < cfg.n_windows:
        raise ConfigurationError(f"need {cfg.n_windows} inputs, got {len(u)}")
    res = Reservoir(cfg, seed, workers)
    states, extinct_at = [], None
    try:
        for n in range(cfg.n_windows):
            had_agents = len(res.pop) > 0
            states.append(res.run_window(float(u[n])))
            if on_window is not None:
                on_window(n, res)
            if had_agents and len(res.pop) == 0:
                extinct_at = n
                log.warning("population extinct in window %d", n)
                break
    finally:
        res.close()
    k = len(states)
    meta = {"config_digest": cfg.digest(), "seed": res.seed}
    return StateTrajectory(np.array(states), u[:k].copy(), meta, extinct_at)
