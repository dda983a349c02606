"""MLS-MPM forward simulator.

One step is: elastic stress from the per-particle law, particle-to-grid
scatter (mass, APIC momentum, stress force), explicit grid momentum update
with free-slip boundaries, grid-to-particle gather (velocity and affine
matrix), trial deformation-gradient update, plastic return map, advection.

Quadratic B-spline weights over the 3^3 neighborhood; the affine matrix C
doubles as the velocity gradient, so F_trial = (I + dt * C_new) F. Kernels run
through the selected backend; per-cell accumulation is serialized in fixed
particle order, so runs are bit-reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import backend
from .errors import SimulationDiverged
from .linalg3 import Vec3, transpose
from .materials import ConstitutiveLaw
from .trajectory import Trajectory


@dataclass(frozen=True)
class SimConfig:
    """Time step, domain box, gravity and boundary setup."""

    dt: float = 5e-4
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.8)
    domain: float = 1.0  # cubic box edge length in m
    grid_resolution: int = 20
    boundary_margin_cells: int = 3
    # extra free-slip planes as ((px, py, pz), (nx, ny, nz)) with inward normal
    planes: tuple = ()
    deterministic: bool = True

    @property
    def cell_size(self) -> float:
        return self.domain / self.grid_resolution

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class Particles:
    """Per-particle state plus static attributes; arrays share a leading axis."""

    x: np.ndarray  # (N, 3) positions, m
    v: np.ndarray  # (N, 3) velocities, m/s
    F: np.ndarray  # (N, 3, 3) elastic deformation gradient
    C: np.ndarray  # (N, 3, 3) affine velocity matrix, 1/s
    mass: np.ndarray  # (N,)
    vol0: np.ndarray  # (N,) rest volumes
    material: np.ndarray  # (N,) material ids

    @classmethod
    def create(cls, x, v=None, mass=None, vol0=None, material=None):
        n = x.shape[0]
        return cls(
            x=np.ascontiguousarray(x, dtype=np.float64),
            v=np.zeros((n, 3)) if v is None else np.ascontiguousarray(v, dtype=np.float64),
            F=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
            C=np.zeros((n, 3, 3)),
            mass=np.ones(n) if mass is None else np.ascontiguousarray(mass, dtype=np.float64),
            vol0=np.ones(n) if vol0 is None else np.ascontiguousarray(vol0, dtype=np.float64),
            material=np.zeros(n, dtype=np.int64)
            if material is None
            else np.ascontiguousarray(material, dtype=np.int64),
        )

    @property
    def count(self) -> int:
        return self.x.shape[0]

    def copy(self) -> "Particles":
        return Particles(
            self.x.copy(), self.v.copy(), self.F.copy(), self.C.copy(),
            self.mass, self.vol0, self.material,
        )

    def validate(self, config: SimConfig) -> None:
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.F))):
            raise ValueError("particle state contains non-finite entries")
        if np.any(self.mass <= 0) or np.any(self.vol0 <= 0):
            raise ValueError("masses and rest volumes must be positive")
        if np.any(self.x < 0) or np.any(self.x > config.domain):
            raise ValueError("particles must start inside the domain")


@dataclass
class Grid:
    """Background Eulerian grid; flattened node arrays of length resolution^3."""

    resolution: int
    cell_size: float
    mass: np.ndarray  # (M,)
    momentum: np.ndarray  # (M, 3)
    force: np.ndarray  # (M, 3)
    velocity: np.ndarray | None = None  # (M, 3) after grid_update


@lru_cache(maxsize=16)
def _boundary_surfaces(resolution: int, cell_size: float, margin: int, planes: tuple):
    """Static (node mask, inward normal) pairs: six walls plus optional planes."""
    idx = np.arange(resolution)
    ii, jj, kk = np.meshgrid(idx, idx, idx, indexing="ij")
    coords = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=-1)
    pos = coords * cell_size
    surfaces = []
    for axis in range(3):
        lo = coords[:, axis] < margin
        normal = np.zeros(3)
        normal[axis] = 1.0
        surfaces.append((lo, normal))
        hi = coords[:, axis] >= resolution - margin
        normal = np.zeros(3)
        normal[axis] = -1.0
        surfaces.append((hi, normal))
    for point, normal in planes:
        nrm = np.asarray(normal, dtype=float)
        nrm = nrm / np.linalg.norm(nrm)
        inside = (pos - np.asarray(point, dtype=float)) @ nrm <= 0.0
        surfaces.append((inside, nrm))
    return surfaces


def apply_boundary(node_velocity: Vec3, surface_normal: Vec3) -> Vec3:
    """Free-slip: remove only the inward normal component."""
    vn = float(np.dot(node_velocity, surface_normal))
    return node_velocity - min(0.0, vn) * np.asarray(surface_normal, dtype=float)


def _apply_boundaries(u, surfaces):
    v = u.copy()
    taken = []
    for node_mask, normal in surfaces:
        vn = v @ normal
        act = node_mask & (vn < 0.0)
        v[act] -= vn[act, None] * normal
        taken.append(act)
    return v, taken


def _apply_boundaries_adjoint(vbar, surfaces, taken):
    ubar = vbar.copy()
    for (node_mask, normal), act in zip(reversed(surfaces), reversed(taken)):
        vn = ubar[act] @ normal
        ubar[act] -= vn[:, None] * normal
    return ubar


def _compute_stress(F, material, laws):
    """Kirchhoff stress per particle; keeps per-law caches for the adjoint."""
    if len(laws) == 1:
        tau, cache = laws[0].kirchhoff_batch(F)
        return tau, [(None, cache)]
    tau = np.zeros_like(F)
    caches = []
    for mid, law in enumerate(laws):
        sel = np.nonzero(material == mid)[0]
        if sel.size == 0:
            caches.append(None)
            continue
        t, c = law.kirchhoff_batch(F[sel])
        tau[sel] = t
        caches.append((sel, c))
    return tau, caches


def _stress_adjoint(taubar, material, laws, caches):
    Fbar = np.zeros_like(taubar)
    grads: dict[str, np.ndarray] = {}
    for mid, law in enumerate(laws):
        entry = caches[mid] if mid < len(caches) else None
        if entry is None:
            continue
        sel, cache = entry
        tb = taubar if sel is None else taubar[sel]
        fb, g = law.kirchhoff_adjoint(cache, tb)
        if sel is None:
            Fbar += fb
        else:
            Fbar[sel] += fb
        if law.trainable:
            for name in law.trainable:
                if name in g:
                    grads[name] = grads.get(name, 0.0) + g[name]
    return Fbar, grads


def _apply_plastic(F_trial, material, laws):
    if len(laws) == 1:
        out, cache = laws[0].plastic_batch(F_trial)
        return out, [(None, cache)]
    out = F_trial.copy()
    caches = []
    for mid, law in enumerate(laws):
        sel = np.nonzero(material == mid)[0]
        if sel.size == 0:
            caches.append(None)
            continue
        o, c = law.plastic_batch(F_trial[sel])
        out[sel] = o
        caches.append((sel, c))
    return out, caches


def _plastic_adjoint(Fnew_bar, material, laws, caches):
    Fbar = np.zeros_like(Fnew_bar)
    grads: dict[str, np.ndarray] = {}
    for mid, law in enumerate(laws):
        entry = caches[mid] if mid < len(caches) else None
        if entry is None:
            continue
        sel, cache = entry
        hb = Fnew_bar if sel is None else Fnew_bar[sel]
        fb, g = law.plastic_adjoint(cache, hb)
        if sel is None:
            Fbar += fb
        else:
            Fbar[sel] += fb
        if law.trainable:
            for name in law.trainable:
                if name in g:
                    grads[name] = grads.get(name, 0.0) + g[name]
    return Fbar, grads


def _normalize_laws(laws) -> list[ConstitutiveLaw]:
    if isinstance(laws, ConstitutiveLaw):
        return [laws]
    return list(laws)


def p2g(particles: Particles, laws, config: SimConfig) -> Grid:
    """Particle-to-grid transfer: mass, APIC momentum, stress and body forces."""
    laws = _normalize_laws(laws)
    tau, _ = _compute_stress(particles.F, particles.material, laws)
    k = backend.kernels()
    gm, gmom, gf = k.p2g(
        particles.x, particles.v, particles.C, tau,
        particles.mass, particles.vol0,
        config.cell_size, config.grid_resolution,
    )
    return Grid(config.grid_resolution, config.cell_size, gm, gmom, gf)


def grid_update(grid: Grid, config: SimConfig) -> Grid:
    """Explicit Euler momentum update plus boundary projection; fills grid.velocity."""
    surfaces = _boundary_surfaces(
        grid.resolution, grid.cell_size, config.boundary_margin_cells, config.planes
    )
    has_mass = grid.mass > 0.0
    inv_m = np.zeros_like(grid.mass)
    inv_m[has_mass] = 1.0 / grid.mass[has_mass]
    u = (grid.momentum + config.dt * grid.force) * inv_m[:, None]
    u[has_mass] += config.dt * np.asarray(config.gravity)
    v, _ = _apply_boundaries(u, surfaces)
    grid.velocity = v
    return grid


def g2p(grid: Grid, particles: Particles, dt: float) -> Particles:
    """Grid-to-particle gather; returns particles with new v, C and trial F."""
    k = backend.kernels()
    v_new, C_new = k.g2p(particles.x, grid.velocity, grid.cell_size, grid.resolution)
    out = particles.copy()
    out.v = v_new
    out.C = C_new
    out.F = (np.eye(3) + dt * C_new) @ particles.F
    return out


@dataclass
class StepCache:
    """Forward intermediates needed to replay one step's adjoint."""

    tau: np.ndarray
    stress_caches: list
    grid_mass: np.ndarray
    grid_momentum: np.ndarray
    grid_force: np.ndarray
    grid_u: np.ndarray  # pre-boundary velocities
    grid_v: np.ndarray  # post-boundary velocities
    has_mass: np.ndarray
    bc_taken: list
    v_new: np.ndarray
    C_new: np.ndarray
    F_trial: np.ndarray
    plastic_caches: list


def forward_step(particles: Particles, laws, config: SimConfig):
    """One simulation step; returns the new state and the adjoint cache."""
    laws = _normalize_laws(laws)
    kern = backend.kernels()
    h = config.cell_size
    res = config.grid_resolution
    dt = config.dt

    tau, stress_caches = _compute_stress(particles.F, particles.material, laws)
    gm, gmom, gf = kern.p2g(
        particles.x, particles.v, particles.C, tau, particles.mass, particles.vol0, h, res
    )

    surfaces = _boundary_surfaces(res, h, config.boundary_margin_cells, config.planes)
    has_mass = gm > 0.0
    inv_m = np.zeros_like(gm)
    inv_m[has_mass] = 1.0 / gm[has_mass]
    u = (gmom + dt * gf) * inv_m[:, None]
    u[has_mass] += dt * np.asarray(config.gravity)
    gv, bc_taken = _apply_boundaries(u, surfaces)

    v_new, C_new = kern.g2p(particles.x, gv, h, res)
    F_trial = (np.eye(3) + dt * C_new) @ particles.F
    F_new, plastic_caches = _apply_plastic(F_trial, particles.material, laws)

    out = particles.copy()
    out.v = v_new
    out.C = C_new
    out.F = F_new
    out.x = particles.x + dt * v_new

    cache = StepCache(
        tau=tau, stress_caches=stress_caches,
        grid_mass=gm, grid_momentum=gmom, grid_force=gf,
        grid_u=u, grid_v=gv, has_mass=has_mass, bc_taken=bc_taken,
        v_new=v_new, C_new=C_new, F_trial=F_trial, plastic_caches=plastic_caches,
    )
    return out, cache


def backward_step(particles: Particles, cache: StepCache, laws, config: SimConfig, outbar):
    """Adjoint of forward_step.

    ``particles`` is the step's input state, ``outbar`` the cotangents
    (xbar, vbar, Fbar, Cbar) of the output state. Returns the input-state
    cotangents plus accumulated law-parameter gradients. Boundary and
    plasticity branches taken in the forward pass are frozen.
    """
    laws = _normalize_laws(laws)
    kern = backend.kernels()
    h = config.cell_size
    res = config.grid_resolution
    dt = config.dt
    xbar_out, vbar_out, Fbar_out, Cbar_out = outbar

    grads: dict[str, np.ndarray] = {}

    def merge(g):
        for name, val in g.items():
            grads[name] = grads.get(name, 0.0) + val

    # advection: x' = x + dt v'
    xbar = xbar_out.copy()
    vbar_new = vbar_out + dt * xbar_out

    # plastic return map
    Ftrial_bar, g = _plastic_adjoint(Fbar_out, particles.material, laws, cache.plastic_caches)
    merge(g)

    # F_trial = (I + dt C') F
    A = np.eye(3) + dt * cache.C_new
    Cbar_new = Cbar_out + dt * (Ftrial_bar @ transpose(particles.F))
    Fbar = transpose(A) @ Ftrial_bar

    # grid-to-particle gather
    grid_vbar, xbar_g2p = kern.g2p_adjoint(particles.x, cache.grid_v, vbar_new, Cbar_new, h, res)
    xbar += xbar_g2p

    # boundary projection (frozen branches), then the momentum update
    surfaces = _boundary_surfaces(res, h, config.boundary_margin_cells, config.planes)
    ubar = _apply_boundaries_adjoint(grid_vbar, surfaces, cache.bc_taken)

    inv_m = np.zeros_like(cache.grid_mass)
    inv_m[cache.has_mass] = 1.0 / cache.grid_mass[cache.has_mass]
    mombar = ubar * inv_m[:, None]
    fbar = dt * mombar
    g_vec = np.asarray(config.gravity)
    mbar = -np.einsum("na,na->n", cache.grid_u - dt * g_vec[None, :], ubar) * inv_m

    # particle-to-grid scatter
    vbar_p, Cbar_p, taubar, xbar_p2g = kern.p2g_adjoint(
        particles.x, particles.v, particles.C, cache.tau,
        particles.mass, particles.vol0, h, res, mbar, mombar, fbar,
    )
    xbar += xbar_p2g

    # elastic stress
    Fbar_stress, g = _stress_adjoint(taubar, particles.material, laws, cache.stress_caches)
    merge(g)
    Fbar += Fbar_stress

    return (xbar, vbar_p, Fbar, Cbar_p), grads


def step(particles: Particles, laws, config: SimConfig) -> Particles:
    """One forward step; raises SimulationDiverged on non-finite output."""
    out, _ = forward_step(particles, laws, config)
    if not (np.all(np.isfinite(out.x)) and np.all(np.isfinite(out.v)) and np.all(np.isfinite(out.F))):
        raise SimulationDiverged(0, "non-finite state")
    return out


def check_state(particles: Particles, config: SimConfig, step_index: int) -> None:
    """Divergence test: finite state, positions within one cell of the domain."""
    if not (
        np.all(np.isfinite(particles.x))
        and np.all(np.isfinite(particles.v))
        and np.all(np.isfinite(particles.F))
        and np.all(np.isfinite(particles.C))
    ):
        raise SimulationDiverged(step_index, "non-finite state")
    h = config.cell_size
    if np.any(particles.x < -h) or np.any(particles.x > config.domain + h):
        raise SimulationDiverged(step_index, "particle left the domain by more than one cell")


def run(particles: Particles, laws, config: SimConfig, steps: int, full_state: bool = True) -> Trajectory:
    """Simulate; returns steps+1 frames with frame 0 the initial state."""
    laws = _normalize_laws(laws)
    n = particles.count
    positions = np.empty((steps + 1, n, 3))
    velocities = np.empty((steps + 1, n, 3)) if full_state else None
    def_grads = np.empty((steps + 1, n, 3, 3)) if full_state else None
    affines = np.empty((steps + 1, n, 3, 3)) if full_state else None

    state = particles
    warned_cfl = False
    for s in range(steps + 1):
        positions[s] = state.x
        if full_state:
            velocities[s] = state.v
            def_grads[s] = state.F
            affines[s] = state.C
        if s == steps:
            break
        vmax = float(np.abs(state.v).max(initial=0.0))
        if not warned_cfl and vmax * config.dt >= config.cell_size:
            warnings.warn(
                f"CFL violation at step {s}: dt*|v|max = {vmax * config.dt:.3e} "
                f">= cell size {config.cell_size:.3e}"
            )
            warned_cfl = True
        state, _ = forward_step(state, laws, config)
        check_state(state, config, s)

    return Trajectory(
        dt=config.dt, positions=positions, velocities=velocities,
        def_grads=def_grads, affines=affines,
    )
