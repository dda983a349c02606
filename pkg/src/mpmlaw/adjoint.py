"""Reverse-mode differentiation of the simulator (BPTT).

``record_forward`` stores one full particle-state checkpoint per step;
``backward`` replays the steps in reverse, recomputing each step's grid
intermediates from its checkpoint (checkpoint-and-recompute: particle states
are small, grid scratch is not worth storing) and chaining the state
cotangents through the hand-written step adjoint. Law-parameter gradients
accumulate over all steps; the gradient with respect to the initial state is
computed but dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GradientDiverged, ShapeMismatch
from .mpm import Particles, SimConfig, backward_step, check_state, forward_step, _normalize_laws
from .trajectory import Trajectory


class GradAccumulator:
    """Per-parameter gradient buffers keyed like ConstitutiveLaw.parameters()."""

    def __init__(self, buffers: dict | None = None):
        self.buffers: dict[str, np.ndarray] = {}
        if buffers:
            for k, v in buffers.items():
                self.buffers[k] = np.asarray(v, dtype=np.float64)

    @classmethod
    def zeros_like(cls, law) -> "GradAccumulator":
        acc = cls()
        params = law.parameters()
        for name in law.trainable:
            if name in params:
                acc.buffers[name] = np.zeros_like(params[name])
            else:
                acc.buffers[name] = np.zeros(())
        return acc

    def add_(self, grads: dict) -> "GradAccumulator":
        for k, v in grads.items():
            v = np.asarray(v, dtype=np.float64)
            if k in self.buffers:
                self.buffers[k] = self.buffers[k] + v
            else:
                self.buffers[k] = v
        return self

    def global_norm(self) -> float:
        total = 0.0
        for v in self.buffers.values():
            total += float(np.sum(np.square(v)))
        return float(np.sqrt(total))

    def scaled(self, s: float) -> "GradAccumulator":
        return GradAccumulator({k: v * s for k, v in self.buffers.items()})

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(v))) for v in self.buffers.values())

    def __getitem__(self, key):
        return self.buffers[key]

    def __contains__(self, key):
        return key in self.buffers

    def __len__(self):
        return len(self.buffers)

    def items(self):
        return self.buffers.items()

    def keys(self):
        return self.buffers.keys()


@dataclass
class Tape:
    """Full-state checkpoints of a forward rollout plus the law being differentiated."""

    trajectory: Trajectory  # frames 0..T; frame n is the state before step n
    template: Particles  # carries the static attributes (mass, vol0, material)
    laws: list
    config: SimConfig

    @property
    def steps(self) -> int:
        return self.trajectory.frame_count - 1

    def state(self, n: int) -> Particles:
        """Particle state at frame n (array views into the trajectory buffers)."""
        t = self.trajectory
        return Particles(
            x=t.positions[n], v=t.velocities[n], F=t.def_grads[n], C=t.affines[n],
            mass=self.template.mass, vol0=self.template.vol0,
            material=self.template.material,
        )


def record_forward(state0: Particles, laws, config: SimConfig, steps: int):
    """Run the simulator for ``steps`` steps, checkpointing every state.

    Returns (tape, trajectory); the trajectory holds steps+1 full-state frames
    and doubles as the tape's checkpoint storage.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    laws = _normalize_laws(laws)
    n = state0.count
    positions = np.empty((steps + 1, n, 3))
    velocities = np.empty((steps + 1, n, 3))
    def_grads = np.empty((steps + 1, n, 3, 3))
    affines = np.empty((steps + 1, n, 3, 3))

    state = state0
    for s in range(steps + 1):
        positions[s] = state.x
        velocities[s] = state.v
        def_grads[s] = state.F
        affines[s] = state.C
        if s == steps:
            break
        state, _ = forward_step(state, laws, config)
        check_state(state, config, s)

    traj = Trajectory(
        dt=config.dt, positions=positions, velocities=velocities,
        def_grads=def_grads, affines=affines,
    )
    tape = Tape(trajectory=traj, template=state0, laws=laws, config=config)
    return tape, traj


def backward(tape: Tape, loss_cotangent: np.ndarray, velocity_cotangent: np.ndarray | None = None) -> GradAccumulator:
    """BPTT over the tape.

    ``loss_cotangent``: per-frame position cotangents, shape (T+1, Q, 3);
    frames the loss does not touch carry zeros. ``velocity_cotangent`` is the
    optional analogue on frame velocities (used by the depth regularizer).
    """
    T = tape.steps
    q = tape.template.count
    if loss_cotangent.shape != (T + 1, q, 3):
        raise ShapeMismatch(
            f"cotangents shape {loss_cotangent.shape} != {(T + 1, q, 3)}"
        )
    if velocity_cotangent is not None and velocity_cotangent.shape != (T + 1, q, 3):
        raise ShapeMismatch("velocity cotangent shape mismatch")

    grads = GradAccumulator()
    for law in tape.laws:
        if law.trainable:
            grads.add_({k: v for k, v in GradAccumulator.zeros_like(law).items()})

    xbar = loss_cotangent[T].copy()
    vbar = velocity_cotangent[T].copy() if velocity_cotangent is not None else np.zeros((q, 3))
    Fbar = np.zeros((q, 3, 3))
    Cbar = np.zeros((q, 3, 3))

    for n in range(T - 1, -1, -1):
        state_n = tape.state(n)
        _, cache = forward_step(state_n, tape.laws, tape.config)
        (xbar, vbar, Fbar, Cbar), g = backward_step(
            state_n, cache, tape.laws, tape.config, (xbar, vbar, Fbar, Cbar)
        )
        grads.add_(g)
        xbar = xbar + loss_cotangent[n]
        if velocity_cotangent is not None:
            vbar = vbar + velocity_cotangent[n]
        if not (np.all(np.isfinite(xbar)) and np.all(np.isfinite(Fbar))):
            raise GradientDiverged(n, "non-finite state cotangent")

    if not grads.all_finite():
        raise GradientDiverged(0, "non-finite parameter gradient")
    return grads


def clip_grad_norm(grads: GradAccumulator, max_norm: float) -> GradAccumulator:
    """Scale all buffers by max_norm/norm when the global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = grads.global_norm()
    if norm <= max_norm or norm == 0.0:
        return GradAccumulator(dict(grads.items()))
    return grads.scaled(max_norm / norm)
