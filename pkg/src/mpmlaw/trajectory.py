"""Trajectory container plus the bit-exact binary file format and exporters.

File layout (little-endian): magic "NCTR", version u32, flags u32 (bit 0 set
when velocities, deformation gradients and affine matrices are present),
particle count Q u64, step count T u64, dt f64; then per frame: positions
Q x 3 f32, and with the full-state flag also velocities Q x 3 f32, deformation
gradients Q x 9 f32 and affine matrices Q x 9 f32. Positions are stored f32
(f64 in memory); dt stays f64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch

MAGIC = b"NCTR"
VERSION = 1
FLAG_FULL_STATE = 1


@dataclass
class Trajectory:
    """Time-indexed particle states; frame 0 is the initial state."""

    dt: float
    positions: np.ndarray  # (T+1, Q, 3)
    velocities: np.ndarray | None = None  # (T+1, Q, 3)
    def_grads: np.ndarray | None = None  # (T+1, Q, 3, 3)
    affines: np.ndarray | None = None  # (T+1, Q, 3, 3)

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def particle_count(self) -> int:
        return self.positions.shape[1]

    @property
    def has_full_state(self) -> bool:
        return (
            self.velocities is not None
            and self.def_grads is not None
            and self.affines is not None
        )

    def check_compatible(self, other: "Trajectory") -> None:
        if self.positions.shape != other.positions.shape:
            raise ShapeMismatch(
                f"trajectory shapes differ: {self.positions.shape} vs {other.positions.shape}"
            )


def write_trajectory(path, traj: Trajectory) -> None:
    full = traj.has_full_state
    frames, q = traj.frame_count, traj.particle_count
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", FLAG_FULL_STATE if full else 0))
        f.write(struct.pack("<Q", q))
        f.write(struct.pack("<Q", frames - 1))
        f.write(struct.pack("<d", traj.dt))
        for n in range(frames):
            f.write(np.ascontiguousarray(traj.positions[n], dtype="<f4").tobytes())
            if full:
                f.write(np.ascontiguousarray(traj.velocities[n], dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(traj.def_grads[n], dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(traj.affines[n], dtype="<f4").tobytes())


def read_trajectory(path) -> Trajectory:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad trajectory magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported trajectory version {version}")
        (flags,) = struct.unpack("<I", f.read(4))
        (q,) = struct.unpack("<Q", f.read(8))
        (steps,) = struct.unpack("<Q", f.read(8))
        (dt,) = struct.unpack("<d", f.read(8))
        full = bool(flags & FLAG_FULL_STATE)
        frames = steps + 1

        per_frame = q * 3 * 4 * (1 if not full else 2) + (q * 9 * 4 * 2 if full else 0)
        body = f.read()
        expected = per_frame * frames
        if len(body) != expected:
            raise ValueError(f"trajectory payload is {len(body)} bytes, expected {expected}")

        def grab(offset, count):
            return np.frombuffer(body, dtype="<f4", count=count, offset=offset)

        positions = np.empty((frames, q, 3))
        velocities = np.empty((frames, q, 3)) if full else None
        def_grads = np.empty((frames, q, 3, 3)) if full else None
        affines = np.empty((frames, q, 3, 3)) if full else None
        off = 0
        for n in range(frames):
            positions[n] = grab(off, q * 3).reshape(q, 3)
            off += q * 12
            if full:
                velocities[n] = grab(off, q * 3).reshape(q, 3)
                off += q * 12
                def_grads[n] = grab(off, q * 9).reshape(q, 3, 3)
                off += q * 36
                affines[n] = grab(off, q * 9).reshape(q, 3, 3)
                off += q * 36
    return Trajectory(
        dt=dt, positions=positions, velocities=velocities, def_grads=def_grads, affines=affines
    )


def export_csv(traj: Trajectory, out_dir, stem: str = "trajectory") -> Path:
    """One csv with a frame,particle,x,y,z row per sample; %.9g keeps f32 exact."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.csv"
    pos32 = traj.positions.astype(np.float32)
    with open(path, "w") as f:
        f.write("frame,particle,x,y,z\n")
        for n in range(traj.frame_count):
            for i in range(traj.particle_count):
                x, y, z = pos32[n, i]
                f.write(f"{n},{i},{x:.9g},{y:.9g},{z:.9g}\n")
    return path


def export_ply_sequence(traj: Trajectory, out_dir, stem: str = "frame") -> list[Path]:
    """One ascii point-cloud file per frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    pos32 = traj.positions.astype(np.float32)
    for n in range(traj.frame_count):
        path = out_dir / f"{stem}_{n:05d}.ply"
        with open(path, "w") as f:
            f.write("ply\nformat ascii 1.0\n")
            f.write(f"element vertex {traj.particle_count}\n")
            f.write("property float x\nproperty float y\nproperty float z\n")
            f.write("end_header\n")
            for i in range(traj.particle_count):
                x, y, z = pos32[n, i]
                f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
        paths.append(path)
    return paths


def import_csv(path) -> np.ndarray:
    """Positions array (frames, Q, 3) from an exported csv."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    if rows.ndim == 1:
        rows = rows[None]
    frames = int(rows[:, 0].max()) + 1
    q = int(rows[:, 1].max()) + 1
    out = np.empty((frames, q, 3))
    out[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2:5]
    return out
