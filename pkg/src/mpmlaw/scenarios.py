"""Declarative scene construction: geometry sampling, initial conditions, tasks.

A scenario is a list of bodies (primitive or point-cloud geometry, particle
count, rigid initial velocity field, material) plus simulation overrides and a
step count. Scenarios serialize to YAML and round-trip exactly; sampling is
deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import yaml

from .materials import DEFAULT_DENSITY, ENVIRONMENTS, make_environment_law
from .mpm import Particles, SimConfig

_SUPPORTED_SHAPES = ("box", "sphere", "cylinder", "cloud")


@dataclass(frozen=True)
class Body:
    """One sampled object: geometry, target particle count, velocity, material."""

    shape: str = "box"
    center: tuple = (0.5, 0.5, 0.5)
    size: tuple = (0.3, 0.3, 0.3)  # box edges; (r,) sphere; (r, height) cylinder
    count: int = 1000
    velocity: tuple = (0.0, 0.0, 0.0)
    omega: tuple = (0.0, 0.0, 0.0)  # angular velocity about the centroid, rad/s
    material: str = "jello"
    density: float = DEFAULT_DENSITY
    cloud_path: str = ""
    material_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.shape not in _SUPPORTED_SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.material not in ENVIRONMENTS:
            raise ValueError(f"unknown material {self.material!r}")

    def volume(self) -> float:
        if self.shape == "box":
            return float(np.prod(self.size))
        if self.shape == "sphere":
            return 4.0 / 3.0 * math.pi * self.size[0] ** 3
        if self.shape == "cylinder":
            return math.pi * self.size[0] ** 2 * self.size[1]
        raise ValueError(f"volume undefined for shape {self.shape!r}")


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    steps: int = 1000
    seed: int = 0
    bodies: tuple = (Body(),)
    dt: float = 5e-4
    gravity: tuple = (0.0, 0.0, -9.8)
    domain: float = 1.0
    grid_resolution: int = 20
    boundary_margin_cells: int = 3
    planes: tuple = ()  # ((point), (normal)) free-slip planes

    def sim_config(self) -> SimConfig:
        return SimConfig(
            dt=self.dt,
            gravity=tuple(self.gravity),
            domain=self.domain,
            grid_resolution=self.grid_resolution,
            boundary_margin_cells=self.boundary_margin_cells,
            planes=tuple((tuple(p), tuple(n)) for p, n in self.planes),
        )


# serialization ----------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def scenario_to_dict(s: Scenario) -> dict:
    d = _plain(asdict(s))
    return d


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    bodies = tuple(
        Body(**{**b, "center": tuple(b.get("center", (0.5, 0.5, 0.5))),
                "size": tuple(b.get("size", (0.3, 0.3, 0.3))),
                "velocity": tuple(b.get("velocity", (0.0, 0.0, 0.0))),
                "omega": tuple(b.get("omega", (0.0, 0.0, 0.0)))})
        for b in d.pop("bodies")
    )
    planes = tuple((tuple(p), tuple(n)) for p, n in d.pop("planes", []))
    gravity = tuple(d.pop("gravity", (0.0, 0.0, -9.8)))
    return Scenario(bodies=bodies, planes=planes, gravity=gravity, **d)


def save_scenario(path, s: Scenario) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(scenario_to_dict(s), f, sort_keys=False)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        return scenario_from_dict(yaml.safe_load(f))


# sampling ----------------------------------------------------------------------


def _inside(shape, size, pts) -> np.ndarray:
    if shape == "box":
        half = np.asarray(size) / 2.0
        return np.all(np.abs(pts) <= half, axis=-1)
    if shape == "sphere":
        return np.sum(pts * pts, axis=-1) <= size[0] ** 2
    if shape == "cylinder":
        r, h = size[0], size[1]
        return (pts[:, 0] ** 2 + pts[:, 1] ** 2 <= r * r) & (np.abs(pts[:, 2]) <= h / 2.0)
    raise ValueError(shape)


def sample_primitive(body: Body, target_count: int, seed: int) -> np.ndarray:
    """Stratified jittered positions clipped to the primitive, exactly target_count.

    Lays a jittered grid over the bounding box at a density slightly above the
    target, keeps interior points, then thins with an even stride.
    """
    if target_count <= 0:
        return np.zeros((0, 3))
    if body.shape == "cloud":
        pts = np.loadtxt(body.cloud_path, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None]
        return np.ascontiguousarray(pts[:, :3])
    rng = np.random.default_rng(seed)
    volume = body.volume()
    oversample = 1.1
    for _ in range(8):
        s = (volume / (target_count * oversample)) ** (1.0 / 3.0)
        if body.shape == "box":
            bbox = np.asarray(body.size)
        elif body.shape == "sphere":
            bbox = np.full(3, 2.0 * body.size[0])
        else:
            bbox = np.array([2.0 * body.size[0], 2.0 * body.size[0], body.size[1]])
        counts = np.maximum(1, np.ceil(bbox / s).astype(int))
        cell = bbox / counts
        ii, jj, kk = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
        corners = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=-1) * cell - bbox / 2.0
        pts = corners + rng.uniform(0.0, 1.0, corners.shape) * cell
        pts = pts[_inside(body.shape, body.size, pts)]
        if pts.shape[0] >= target_count:
            stride_idx = np.linspace(0, pts.shape[0] - 1, target_count).round().astype(int)
            return pts[stride_idx] + np.asarray(body.center)
        oversample *= 1.3
    raise RuntimeError("sampling failed to reach the target count")


def initial_velocity_field(positions: np.ndarray, v_lin, omega) -> np.ndarray:
    """Rigid velocity field v + omega x (x - centroid)."""
    if positions.shape[0] == 0:
        return np.zeros_like(positions)
    centroid = positions.mean(axis=0)
    return np.asarray(v_lin) + np.cross(np.broadcast_to(np.asarray(omega, dtype=float), positions.shape), positions - centroid)


def build_particles(scenario: Scenario):
    """Sample all bodies; returns (Particles, laws) with material ids per body."""
    xs, vs, masses, vols, mats = [], [], [], [], []
    laws = []
    h = scenario.domain / scenario.grid_resolution
    for b_index, body in enumerate(scenario.bodies):
        pos = sample_primitive(body, body.count, scenario.seed + b_index)
        vel = initial_velocity_field(pos, body.velocity, body.omega)
        n = pos.shape[0]
        if body.shape == "cloud":
            # assume point clouds sampled near the default 8-per-cell density
            vol0 = np.full(n, h**3 / 8.0)
        else:
            vol0 = np.full(n, body.volume() / n)
        xs.append(pos)
        vs.append(vel)
        vols.append(vol0)
        masses.append(body.density * vol0)
        mats.append(np.full(n, b_index, dtype=np.int64))
        laws.append(make_environment_law(body.material, **body.material_params))
    particles = Particles.create(
        np.concatenate(xs),
        v=np.concatenate(vs),
        mass=np.concatenate(masses),
        vol0=np.concatenate(vols),
        material=np.concatenate(mats),
    )
    return particles, laws


# generalization tasks -----------------------------------------------------------

TASKS = ("extended_time", "new_velocity", "new_geometry", "inclined_boundary", "multi_material")


def build_task(base: Scenario, task: str, *, seed: int = 0, geometry: Body | None = None,
               second_body: Body | None = None) -> Scenario:
    """Out-of-distribution variants of a trained scenario."""
    if task == "extended_time":
        return replace(base, name=f"{base.name}-extended", steps=base.steps * 2)
    if task == "new_velocity":
        rng = np.random.default_rng(seed)
        new_bodies = tuple(
            replace(b, velocity=tuple(rng.uniform(-1.0, 1.0, 3) * np.array([1.0, 1.0, 0.5])),
                    omega=tuple(rng.uniform(-6.0, 6.0, 3)))
            for b in base.bodies
        )
        return replace(base, name=f"{base.name}-velocity", bodies=new_bodies, seed=base.seed + 1000 + seed)
    if task == "new_geometry":
        if geometry is None:
            b0 = base.bodies[0]
            geometry = replace(b0, shape="sphere", size=(0.18,), count=max(b0.count, 2000))
        rest = base.bodies[1:]
        return replace(base, name=f"{base.name}-geometry", bodies=(geometry, *rest))
    if task == "inclined_boundary":
        angle = math.radians(20.0)
        plane = ((0.5, 0.5, 0.25), (-math.sin(angle), 0.0, math.cos(angle)))
        return replace(base, name=f"{base.name}-incline", planes=base.planes + (plane,))
    if task == "multi_material":
        if second_body is None:
            second_body = Body(
                shape="box", center=(0.5, 0.5, 0.28), size=(0.6, 0.6, 0.2),
                count=2 * base.bodies[0].count, velocity=(0.0, 0.0, 0.0),
                omega=(0.0, 0.0, 0.0), material="water",
            )
        return replace(base, name=f"{base.name}-multi", bodies=base.bodies + (second_body,))
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
