"""Script execution: system setup, styles, and velocity-Verlet integration.

The Simulation walks a parsed script in order.  Setup commands stage state
(lattice, box, atoms, velocities, styles); `run` materializes the ranked
system, builds neighbor lists, and integrates NVE with skin-criterion list
rebuilds.  Thermo rows capture (step, E_pot, E_kin, E_total, T) plus a
position snapshot so logged energies can be recomputed independently.
"""

from __future__ import annotations

import numpy as np

from ..domain import Box, RankedSystem
from ..memspace import Atomic, Duplicate, Serial
from ..neighbor import any_needs_rebuild, build, build_all
from ..pair_lj import LJCut, PairParams, PairResult, compute_pair
from ..qeq import QeqParams, QeqSystem, build_matrix, qeq_energy, solve_qeq
from ..snap import (
    SnapState, build_neighbor_map, compute_bi, compute_fused_deidrj,
    compute_ui, compute_yi, make_coupling_tables, read_coeff_file,
)
from ..torsion import BondParams, build_bonds, compute_bending, compute_torsion, \
    enumerate_quads
from .registry import StyleRegistry
from .script import Script, parse_script


class RunError(RuntimeError):
    pass


_STRATEGIES = {"serial": Serial, "duplicate": Duplicate, "atomic": Atomic}


class RunConfig:
    """Execution knobs owned by the harness, not the script."""

    def __init__(self, n_ranks: int = 1, strategy: str = "serial",
                 mode: str | None = None, list_style: str | None = None,
                 newton: bool = True, skin: float = 0.3, workers: int | None = None,
                 batch_u: int | None = None, batch_y: int | None = None,
                 tile_v: int | None = None, layout: str | None = None,
                 rng_seed: int | None = None):
        self.n_ranks = int(n_ranks)
        if strategy not in _STRATEGIES:
            raise RunError(f"unknown strategy {strategy!r}; choose from "
                           f"{sorted(_STRATEGIES)}")
        self.strategy = strategy
        self.mode = mode
        self.list_style = list_style
        self.newton = bool(newton)
        self.skin = float(skin)
        self.workers = workers
        self.batch_u = batch_u
        self.batch_y = batch_y
        self.tile_v = tile_v
        self.layout = layout
        self.rng_seed = rng_seed

    def make_strategy(self):
        return _STRATEGIES[self.strategy]()


class LJStyle:
    """Truncated 12-6 pair style; opt variant defaults to neighbor-parallel."""

    list_style = None  # either list style works; config decides

    def __init__(self, r_c: float, mode: str = "atom", name: str = "lj/cut"):
        self.name = name
        self.r_c = float(r_c)
        self.default_mode = mode
        self.kernel = None

    def set_coeff(self, epsilon: float, sigma: float) -> None:
        self.kernel = LJCut(PairParams(epsilon, sigma, self.r_c))

    def compute(self, system: RankedSystem, lists, config: RunConfig) -> PairResult:
        if self.kernel is None:
            raise RunError("pair_coeff must be set before computing forces")
        return compute_pair(self.kernel, system, lists,
                            mode=config.mode or self.default_mode,
                            strategy=config.make_strategy(),
                            n_workers=config.workers)


class SnapStyle:
    """Machine-learned descriptor potential driven by a coefficient file."""

    list_style = "full"  # the expansion needs every neighbor of every atom

    def __init__(self, r_c: float, jmax: float, beta: np.ndarray,
                 name: str = "snap", batch_u: int = 4, batch_y: int = 1,
                 tile_v: int = 0, layout: str = "a"):
        self.name = name
        self.r_c = float(r_c)
        self.tables = make_coupling_tables(jmax)
        self.beta = np.asarray(beta, dtype=np.float64)
        self.batch_u = batch_u
        self.batch_y = batch_y
        self.tile_v = tile_v
        self.layout = layout
        self._states: dict = {}

    @classmethod
    def from_file(cls, r_c: float, path: str, **kw) -> "SnapStyle":
        jmax, beta = read_coeff_file(path)
        return cls(r_c, jmax, beta, **kw)

    def set_coeff(self, *_):
        raise RunError("snap styles read coefficients from their file; "
                       "pair_coeff does not apply")

    def compute(self, system: RankedSystem, lists, config: RunConfig) -> PairResult:
        energy = 0.0
        knobs = {
            "batch_u": config.batch_u if config.batch_u is not None else self.batch_u,
            "batch_y": config.batch_y if config.batch_y is not None else self.batch_y,
            "tile_v": config.tile_v if config.tile_v is not None else self.tile_v,
            "layout": config.layout if config.layout is not None else self.layout,
        }
        for idx, (store, nlist) in enumerate(zip(system.stores, lists)):
            nlist.check_current()
            nmap = build_neighbor_map(store, nlist, self.r_c)
            key = (idx, store.n_local, tuple(sorted(knobs.items())))
            state = self._states.get(key)
            if state is None:
                state = SnapState(self.tables, store.n_local, self.beta, **knobs)
                # keep at most one live state per store slot
                self._states = {k: v for k, v in self._states.items()
                                if k[0] != idx}
                self._states[key] = state
            compute_ui(nmap, state)
            energy += float(np.sum(compute_bi(state) @ self.beta))
            compute_yi(state)
            f = compute_fused_deidrj(nmap, state, store.n_total)
            fr = store.force.read("a")
            fr[: store.n_total] = f
            store.force.mark_modified("a")
        system.reverse_comm()
        return PairResult(energy, system.gather_forces(), np.zeros(6))


def default_registry() -> StyleRegistry:
    reg = StyleRegistry()
    reg.register("lj/cut", lambda args: LJStyle(float(args[0]), mode="atom"))
    reg.register("lj/cut/opt", lambda args: LJStyle(float(args[0]), mode="neighbor",
                                                    name="lj/cut/opt"))
    reg.register("snap", lambda args: SnapStyle.from_file(float(args[0]), args[1]))
    reg.register("snap/opt", lambda args: SnapStyle.from_file(
        float(args[0]), args[1], name="snap/opt", batch_u=8, tile_v=256))
    return reg


def lattice_positions(style: str, rho: float, cells: tuple[int, int, int]
                      ) -> tuple[np.ndarray, Box]:
    """Replicated-lattice coordinates and the matching periodic box."""
    if rho <= 0:
        raise RunError("lattice density must be positive")
    if style == "fcc":
        a = (4.0 / rho) ** (1.0 / 3.0)
        base = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.0],
                         [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]])
    elif style == "sc":
        a = (1.0 / rho) ** (1.0 / 3.0)
        base = np.zeros((1, 3))
    else:
        raise RunError(f"unknown lattice style {style!r}")
    nx, ny, nz = cells
    if min(cells) < 1:
        raise RunError("create_box needs at least one cell per direction")
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    corners = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3).astype(np.float64)
    pos = (corners[:, None, :] + base[None, :, :]).reshape(-1, 3) * a
    box = Box((a * nx, a * ny, a * nz), (True, True, True))
    return pos, box


def seeded_velocities(n: int, temperature: float, mass: float, seed: int
                      ) -> np.ndarray:
    """Gaussian velocities, zero linear momentum, rescaled to the target T."""
    if temperature < 0:
        raise RunError("temperature must be non-negative")
    if temperature == 0.0 or n == 0:
        return np.zeros((n, 3))
    rng = np.random.default_rng(seed)
    v = rng.normal(0.0, np.sqrt(temperature / mass), (n, 3))
    v -= v.mean(axis=0)
    t_now = mass * float(np.sum(v * v)) / (3.0 * n)
    if t_now > 0:
        v *= np.sqrt(temperature / t_now)
    return v


class RunResult:
    """Thermo log plus per-logged-step position snapshots and diagnostics."""

    def __init__(self):
        self.rows = []            # (step, e_pot, e_kin, e_total, T)
        self.snapshots = {}       # step -> positions gathered by global id
        self.qeq_log = []         # (step, iters_s, iters_t, sum_q, energy)
        self.lines = []           # formatted thermo lines

    def log(self, step, e_pot, e_kin, temperature):
        e_total = e_pot + e_kin
        self.rows.append((step, e_pot, e_kin, e_total, temperature))
        self.lines.append(f"{step} {e_pot:.17g} {e_kin:.17g} "
                          f"{e_total:.17g} {temperature:.17g}")


class Simulation:
    """Executes a parsed script against a RunConfig."""

    def __init__(self, config: RunConfig | None = None,
                 registry: StyleRegistry | None = None, log=print):
        self.config = config or RunConfig()
        self.registry = registry or default_registry()
        self.log = log or (lambda *_: None)
        self.suffix: str | None = None
        self.lattice_spec = None
        self.cells = None
        self.box: Box | None = None
        self.mass = 1.0
        self._positions = None
        self._velocities = None
        self.style = None
        self.qeq: QeqParams | None = None
        self.torsion: BondParams | None = None
        self.torsion_k = (1.0, 1.0)        # (k_t, k_b)
        self.torsion_thresh = 0.0
        self.dt = 0.005
        self.thermo_every = 100
        self.system: RankedSystem | None = None
        self.lists = None
        self._bonded_tables = None
        self.results: list[RunResult] = []
        self.bench_rows = []

    # ------------------------------------------------------------------ setup
    def execute(self, script: Script) -> "Simulation":
        for cmd in script:
            handler = getattr(self, f"_cmd_{cmd.name}", None)
            if handler is None:
                raise RunError(f"line {cmd.line_no}: no handler for {cmd.name!r}")
            try:
                handler(cmd.args)
            except (RunError, ValueError) as exc:
                raise RunError(f"line {cmd.line_no} ({cmd.name}): {exc}") from exc
        return self

    def _cmd_units(self, args):
        if args[0] != "lj":
            raise RunError("only reduced units are supported")

    def _cmd_boundary(self, args):
        if tuple(args) != ("p", "p", "p"):
            raise RunError("only fully periodic boundaries are supported")

    def _cmd_lattice(self, args):
        self.lattice_spec = (args[0], float(args[1]))

    def _cmd_create_box(self, args):
        if self.lattice_spec is None:
            raise RunError("lattice must be set before create_box")
        self.cells = tuple(int(a) for a in args)
        _, self.box = lattice_positions(self.lattice_spec[0], self.lattice_spec[1],
                                        self.cells)

    def _cmd_create_atoms(self, args):
        if self.cells is None:
            raise RunError("create_box must run before create_atoms")
        pos, box = lattice_positions(self.lattice_spec[0], self.lattice_spec[1],
                                     self.cells)
        self.box = box
        self._positions = pos
        self._velocities = np.zeros_like(pos)
        self.system = None

    def _cmd_mass(self, args):
        m = float(args[0])
        if m <= 0:
            raise RunError("mass must be positive")
        self.mass = m

    def _cmd_velocity(self, args):
        if self._positions is None:
            raise RunError("create_atoms must run before velocity")
        t, seed = float(args[0]), int(args[1])
        if self.config.rng_seed is not None:
            seed = self.config.rng_seed
        self._velocities = seeded_velocities(len(self._positions), t, self.mass, seed)
        self.system = None

    def _cmd_pair_style(self, args):
        factory = self.registry.resolve(args[0], self.suffix)
        self.style = factory(args[1:])
        self.lists = None

    def _cmd_pair_coeff(self, args):
        if self.style is None:
            raise RunError("pair_style must be set before pair_coeff")
        self.style.set_coeff(float(args[0]), float(args[1]))

    def _cmd_qeq(self, args):
        if args[0] == "off":
            self.qeq = None
            return
        gamma, eta, chi, cutoff = (float(a) for a in args[1:])
        self.qeq = QeqParams(gamma=gamma, eta=eta, chi=chi, cutoff=cutoff)

    def _cmd_torsion(self, args):
        if args[0] == "off":
            self.torsion = None
            return
        r_bond, r0, p, bo_min, bo_thresh, k_t, k_b = (float(a) for a in args[1:])
        self.torsion = BondParams(r_bond=r_bond, r0=r0, p=p, bo_min=bo_min)
        self.torsion_thresh = bo_thresh
        self.torsion_k = (k_t, k_b)
        self._bonded_tables = None

    def _cmd_suffix(self, args):
        self.suffix = None if args[0] == "off" else args[0]

    def _cmd_timestep(self, args):
        dt = float(args[0])
        if dt <= 0:
            raise RunError("timestep must be positive")
        self.dt = dt

    def _cmd_thermo(self, args):
        n = int(args[0])
        if n <= 0:
            raise RunError("thermo interval must be positive")
        self.thermo_every = n

    def _cmd_run(self, args):
        self.run_nve(int(args[0]))

    def _cmd_bench(self, args):
        from .bench import bench_saturation
        sizes = [int(s) for s in args[1].split(",")]
        res = bench_saturation(args[0], sizes, reps=int(args[2]), csv_path=args[3])
        self.bench_rows.append(res)

    # ------------------------------------------------------------ integration
    def _ensure_system(self):
        if self.style is None:
            raise RunError("pair_style must be set before run")
        if self._positions is None:
            raise RunError("create_atoms must run before run")
        if self.system is None:
            self.system = RankedSystem.distribute(
                self.box, self.config.n_ranks, self._positions, self._velocities)
            self.lists = None
        if self.lists is None:
            style_list = self.style.list_style or self.config.list_style or "half"
            if self.style.list_style and self.config.list_style \
                    and self.config.list_style != self.style.list_style:
                raise RunError(f"style {self.style.name} requires "
                               f"{self.style.list_style} lists")
            self._list_style = style_list
            self.lists = build_all(self.system, self.style.r_c, self.config.skin,
                                   style=style_list, newton=self.config.newton)
            self._bonded_tables = None

    def _rebuild_lists(self):
        self.system.migrate(self.style.r_c + self.config.skin)
        self.lists = [build(store, self.system.box, self.style.r_c, self.config.skin,
                            style=self._list_style, newton=self.config.newton)
                      for store in self.system.stores]
        self._bonded_tables = None

    def _bonded(self):
        """Bond/quad/triple tables, rebuilt whenever the neighbor lists are."""
        if self.torsion is None:
            return None
        if self.config.n_ranks != 1:
            raise RunError("torsion requires a single rank")
        if self.torsion.r_bond > self.style.r_c:
            raise RunError("torsion r_bond must not exceed the pair cutoff")
        if self._bonded_tables is None:
            store = self.system.stores[0]
            blist = build(store, self.system.box, self.torsion.r_bond,
                          self.config.skin, style="full", newton=False)
            bonds = build_bonds(store, self.system.box, blist, self.torsion)
            self._bonded_tables = enumerate_quads(bonds, self.torsion_thresh)
        return self._bonded_tables

    def _compute_forces(self) -> float:
        result = self.style.compute(self.system, self.lists, self.config)
        e_pot = result.energy
        tables = self._bonded()
        if tables is not None:
            store = self.system.stores[0]
            pos = store.positions()[: store.n_local]
            k_t, k_b = self.torsion_k
            e_t, f_t, _ = compute_torsion(pos, self.system.box, tables.quads, k_t)
            e_b, f_b = compute_bending(pos, self.system.box, tables.triples, k_b)
            fr = store.force.read("a")
            fr[: store.n_local] += f_t + f_b
            store.force.mark_modified("a")
            e_pot += e_t + e_b
        return e_pot

    def _kinetic(self) -> tuple[float, float]:
        ke = 0.0
        n = 0
        for store in self.system.stores:
            v = store.velocities()
            ke += 0.5 * self.mass * float(np.sum(v * v))
            n += store.n_local
        temperature = 2.0 * ke / (3.0 * n) if n else 0.0
        return ke, temperature

    def _qeq_diagnostic(self, step: int, result: RunResult):
        if self.qeq is None:
            return
        gp, gv, _ = self.system.gather()
        solo = RankedSystem.distribute(self.system.box, 1, gp, gv)
        qlists = build_all(solo, self.qeq.cutoff, self.config.skin,
                           style="full", newton=False)
        store = solo.stores[0]
        H = build_matrix(store, qlists[0], self.qeq)
        qsys = QeqSystem(H, np.full(store.n_local, self.qeq.chi))
        q = solve_qeq(qsys)
        result.qeq_log.append((step, *qsys.iterations, float(q.sum()),
                               qeq_energy(qsys)))

    def step_once(self) -> float:
        """One velocity-Verlet step; returns the new potential energy."""
        dt, mass = self.dt, self.mass
        for store in self.system.stores:
            v = store.velocities()
            v += (0.5 * dt / mass) * store.forces()[: store.n_local]
            store.vel.mark_modified("a")
            p = store.pos.read("a")
            p[: store.n_local] += dt * v
            store.pos.mark_modified("a")
        if any_needs_rebuild(self.lists):
            self._rebuild_lists()
        else:
            self.system.forward_comm()
        e_pot = self._compute_forces()
        for store in self.system.stores:
            v = store.velocities()
            v += (0.5 * dt / mass) * store.forces()[: store.n_local]
            store.vel.mark_modified("a")
        return e_pot

    def run_nve(self, n_steps: int) -> RunResult:
        if n_steps < 0:
            raise RunError("run expects a non-negative step count")
        self._ensure_system()
        result = RunResult()
        self.results.append(result)

        def check_finite(step, e_pot):
            if not np.isfinite(e_pot):
                raise RunError(f"non-finite potential energy at step {step}")
            for store in self.system.stores:
                if not np.all(np.isfinite(store.forces()[: store.n_local])):
                    raise RunError(f"non-finite force at step {step}")

        def log(step, e_pot):
            ke, temperature = self._kinetic()
            result.log(step, e_pot, ke, temperature)
            result.snapshots[step] = self.system.gather()[0]
            self._qeq_diagnostic(step, result)
            self.log(result.lines[-1])

        e_pot = self._compute_forces()
        check_finite(0, e_pot)
        log(0, e_pot)
        for step in range(1, n_steps + 1):
            e_pot = self.step_once()
            check_finite(step, e_pot)
            if step % self.thermo_every == 0 or step == n_steps:
                log(step, e_pot)
        return result


def run_script(text: str, config: RunConfig | None = None, log=print) -> Simulation:
    """Parse and execute a script; returns the executed Simulation."""
    sim = Simulation(config, log=log)
    sim.execute(parse_script(text))
    return sim
