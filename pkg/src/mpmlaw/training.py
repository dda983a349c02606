"""Training loops: reconstruction from trajectories, system id, labeled fits.

The reconstruction trainer minimizes position MSE between a neural-law
rollout and a ground-truth trajectory via BPTT. Long rollouts are split into
teacher-forced windows that restart from the ground-truth state; the window
length grows over epochs while the learning rates decay, both on cosine
schedules. One Adam update is taken per window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import GradAccumulator, backward, clip_grad_norm, record_forward
from .errors import ShapeMismatch, SimulationDiverged
from .materials import ConstitutiveLaw, with_trainable, make_environment_law
from .mpm import Particles, SimConfig
from .neural_law import NeuralLaw
from .trajectory import Trajectory


@dataclass
class TrainConfig:
    epochs: int = 300
    lr_elastic: float = 1.0
    lr_plastic: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.1
    teacher_forcing_start: int = 25
    teacher_forcing_end: int = 200
    cosine_lr: bool = True
    depth_reg_weight: float = 0.0
    depth_axis: int = 1
    seed: int = 0

    def validate(self, trajectory_steps: int) -> None:
        if self.lr_elastic <= 0 or self.lr_plastic <= 0:
            raise ValueError("learning rates must be positive")
        if not (1 <= self.teacher_forcing_start <= self.teacher_forcing_end):
            raise ValueError("teacher forcing window bounds out of order")
        if self.depth_reg_weight < 0:
            raise ValueError("depth_reg_weight must be >= 0")
        if self.teacher_forcing_start > trajectory_steps:
            raise ValueError("teacher forcing window exceeds trajectory length")


# losses ----------------------------------------------------------------------


def position_loss(sim: Trajectory, gt: Trajectory, every: int = 1) -> float:
    """Mean squared particle displacement over frames n = 0, every, 2*every, ...

    every=1 is the training loss; every=5 the reporting metric.
    """
    sim.check_compatible(gt)
    d = sim.positions[::every] - gt.positions[::every]
    return float(np.mean(np.sum(d * d, axis=-1)))


def position_loss_cotangent(sim: Trajectory, gt: Trajectory) -> np.ndarray:
    d = sim.positions - gt.positions
    frames = sim.frame_count
    q = sim.particle_count
    return 2.0 * d / (frames * q)


def depth_regularization(sim: Trajectory, depth_axis: int) -> float:
    """Mean squared velocity along the depth axis; planar-motion prior."""
    if sim.velocities is None:
        raise ShapeMismatch("trajectory has no velocities")
    vd = sim.velocities[..., depth_axis]
    return float(np.mean(vd * vd))


def depth_regularization_cotangent(sim: Trajectory, depth_axis: int) -> np.ndarray:
    vd = sim.velocities[..., depth_axis]
    cot = np.zeros_like(sim.velocities)
    cot[..., depth_axis] = 2.0 * vd / vd.size
    return cot


def cosine_anneal(value0: float, value1: float, epoch: int, total: int) -> float:
    """value0 at epoch 0 shading into value1 at epoch == total."""
    return value1 + (value0 - value1) * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


# Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
            v={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
        )


def adam_step(params: dict, grads, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps=1e-8):
    """Standard Adam with bias correction; updates params in place."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, p in params.items():
        g = grads[k] if k in grads else np.zeros_like(np.asarray(p))
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        upd = lr * mhat / (np.sqrt(vhat) + eps)
        if isinstance(p, np.ndarray):
            p -= upd  # in place, so live parameter views stay valid
        else:
            params[k] = p - upd
    return params, state


# reconstruction training ------------------------------------------------------


def _state_from_frame(gt: Trajectory, template: Particles, frame: int) -> Particles:
    if not gt.has_full_state:
        raise ShapeMismatch("teacher forcing needs a full-state trajectory")
    return Particles(
        x=gt.positions[frame].copy(),
        v=gt.velocities[frame].copy(),
        F=gt.def_grads[frame].copy(),
        C=gt.affines[frame].copy(),
        mass=template.mass,
        vol0=template.vol0,
        material=template.material,
    )


def window_length(cfg: TrainConfig, epoch: int) -> int:
    return int(round(cosine_anneal(
        cfg.teacher_forcing_start, cfg.teacher_forcing_end, epoch, cfg.epochs
    )))


@dataclass
class Trainer:
    """Holds the optimizer state across epochs for one law."""

    law: NeuralLaw
    sim_config: SimConfig
    train_config: TrainConfig
    elastic_state: AdamState = None
    plastic_state: AdamState = None

    def __post_init__(self):
        params = self.law.parameters()
        self._elastic = {k: v for k, v in params.items() if k.startswith("elastic.")}
        self._plastic = {k: v for k, v in params.items() if k.startswith("plastic.")}
        if self.elastic_state is None:
            self.elastic_state = AdamState.for_params(self._elastic)
        if self.plastic_state is None:
            self.plastic_state = AdamState.for_params(self._plastic)

    def apply(self, grads: GradAccumulator, epoch: int) -> None:
        cfg = self.train_config
        factor = cosine_anneal(1.0, 0.0, epoch, cfg.epochs) if cfg.cosine_lr else 1.0
        betas = (cfg.beta1, cfg.beta2)
        adam_step(self._elastic, grads, self.elastic_state, cfg.lr_elastic * factor,
                  betas=betas, eps=cfg.adam_eps)
        adam_step(self._plastic, grads, self.plastic_state, cfg.lr_plastic * factor,
                  betas=betas, eps=cfg.adam_eps)


def train_epoch(trainer: Trainer, gt: Trajectory, template: Particles, epoch: int) -> tuple[float, int]:
    """One pass over the trajectory in teacher-forced windows.

    Returns (mean window loss, window length). Raises SimulationDiverged with
    the failing window's start frame on blow-up.
    """
    cfg = trainer.train_config
    total_steps = gt.frame_count - 1
    w = min(window_length(cfg, epoch), total_steps)
    losses = []
    for start in range(0, total_steps, w):
        steps = min(w, total_steps - start)
        state = _state_from_frame(gt, template, start)
        try:
            tape, sim = record_forward(state, trainer.law, trainer.sim_config, steps)
        except SimulationDiverged as e:
            raise SimulationDiverged(start + e.step, f"window starting at frame {start}") from e
        gt_window = Trajectory(
            dt=gt.dt,
            positions=gt.positions[start : start + steps + 1],
            velocities=None if gt.velocities is None else gt.velocities[start : start + steps + 1],
        )
        d = sim.positions - gt_window.positions
        frames = steps + 1
        loss = float(np.mean(np.sum(d * d, axis=-1)))
        cot = 2.0 * d / (frames * template.count)
        vcot = None
        if cfg.depth_reg_weight > 0.0:
            loss += cfg.depth_reg_weight * depth_regularization(sim, cfg.depth_axis)
            vcot = cfg.depth_reg_weight * depth_regularization_cotangent(sim, cfg.depth_axis)
        grads = backward(tape, cot, vcot)
        grads = clip_grad_norm(grads, cfg.grad_clip)
        trainer.apply(grads, epoch)
        losses.append(loss)
    return float(np.mean(losses)), w


def evaluate_rollout(law, gt: Trajectory, template: Particles, sim_config: SimConfig,
                     every: int = 5) -> tuple[float, Trajectory]:
    """Free rollout from the ground-truth initial state; every-N reporting MSE."""
    state = _state_from_frame(gt, template, 0)
    _, sim = record_forward(state, law, sim_config, gt.frame_count - 1)
    return position_loss(sim, gt, every=every), sim


def train(law: NeuralLaw, gt: Trajectory, template: Particles, sim_config: SimConfig,
          train_config: TrainConfig, metrics_path=None, log=None):
    """Full training run; returns per-epoch (train_loss, eval_loss) history.

    Streams one 'epoch,window_len,train_loss,eval_loss_every5' line per epoch.
    On divergence the parameters are rolled back to the last completed epoch
    before the error propagates, so a checkpoint of that epoch can be saved.
    """
    train_config.validate(gt.frame_count - 1)
    trainer = Trainer(law=law, sim_config=sim_config, train_config=train_config)
    history = []
    lines = ["epoch,window_len,train_loss,eval_loss_every5"]
    if log:
        log(lines[0])
    live = law.parameters()
    snapshot = {k: v.copy() for k, v in live.items()}
    for epoch in range(train_config.epochs):
        try:
            train_loss, w = train_epoch(trainer, gt, template, epoch)
        except SimulationDiverged:
            for k, v in snapshot.items():
                live[k][...] = v
            raise
        try:
            eval_loss, _ = evaluate_rollout(law, gt, template, sim_config)
        except SimulationDiverged:
            # reporting rollout blew up; training itself may still recover
            eval_loss = math.nan
        for k, v in live.items():
            snapshot[k] = v.copy()
        history.append((train_loss, eval_loss))
        line = f"{epoch},{w},{train_loss:.8e},{eval_loss:.8e}"
        lines.append(line)
        if log:
            log(line)
        if metrics_path is not None:
            with open(metrics_path, "w") as f:
                f.write("\n".join(lines) + "\n")
    return history


# oracles ----------------------------------------------------------------------

_SYS_ID_PARAMS = {
    "jello": ("mu", "lam"),
    "sand": ("mu", "lam", "friction_angle"),
    "plasticine": ("mu", "lam", "yield_stress"),
    "water": ("lam",),
}


def _law_from_phys(family: str, phys: dict) -> ConstitutiveLaw:
    kwargs = {}
    if family == "water":
        kwargs["water_lam"] = phys["lam"]
    else:
        # convert (mu, lam) back to the constructor's (E, nu) parameterization
        mu, lam = phys["mu"], phys["lam"]
        e = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
        nu = lam / (2.0 * (lam + mu))
        kwargs["youngs_modulus"] = e
        kwargs["poissons_ratio"] = nu
        if family == "sand":
            kwargs["friction_angle"] = phys["friction_angle"]
        if family == "plasticine":
            kwargs["yield_stress"] = phys["yield_stress"]
    law = make_environment_law(family, **kwargs)
    return with_trainable(law, _SYS_ID_PARAMS[family])


def sys_id_fit(law_family: str, init_phys: dict, gt: Trajectory, template: Particles,
               sim_config: SimConfig, iters: int = 200, lr: float = 0.1,
               log=None) -> dict:
    """Identify physical parameters of a known law family from a trajectory.

    Optimizes log-parameters (positivity, scale invariance) with Adam-style
    normalized gradient steps through the differentiable simulator.
    """
    names = [k for k in _SYS_ID_PARAMS[law_family] if k in init_phys]
    if not names:
        raise ValueError(f"no fittable parameters given for {law_family}")
    z = {k: math.log(init_phys[k]) for k in names}
    state = AdamState.for_params({k: 0.0 for k in names})
    steps = gt.frame_count - 1
    best = dict(z)
    best_loss = math.inf
    for it in range(iters):
        phys = dict(init_phys)
        phys.update({k: math.exp(v) for k, v in z.items()})
        law = _law_from_phys(law_family, phys)
        state0 = _state_from_frame(gt, template, 0)
        tape, sim = record_forward(state0, law, sim_config, steps)
        loss = position_loss(sim, gt)
        cot = position_loss_cotangent(sim, gt)
        grads = backward(tape, cot)
        if loss < best_loss:
            best_loss, best = loss, dict(z)
        zgrads = {k: float(grads[k]) * math.exp(z[k]) if k in grads else 0.0 for k in names}
        factor = cosine_anneal(1.0, 0.0, it, iters)
        zparams = dict(z)
        adam_step(zparams, zgrads, state, lr * factor)
        z = {k: float(zparams[k]) for k in names}
        if log and (it % 10 == 0 or it == iters - 1):
            log(f"iter {it}: loss {loss:.6e} " + " ".join(f"{k}={math.exp(z[k]):.5g}" for k in names))
    phys = dict(init_phys)
    phys.update({k: math.exp(v) for k, v in best.items()})
    return phys


def labeled_fit(params, samples, cfg: TrainConfig, epochs: int | None = None, log=None):
    """Supervised regression on (F, P, F_new) triples; no simulator in the loop."""
    if isinstance(samples, tuple) and len(samples) == 3:
        F, P_gt, Fnew_gt = samples
    else:
        samples = list(samples)
        if not samples:
            return params
        F = np.stack([s[0] for s in samples])
        P_gt = np.stack([s[1] for s in samples])
        Fnew_gt = np.stack([s[2] for s in samples])
    if F.shape[0] == 0:
        return params
    law = NeuralLaw(params)
    trainer_params = law.parameters()
    elastic = {k: v for k, v in trainer_params.items() if k.startswith("elastic.")}
    plastic = {k: v for k, v in trainer_params.items() if k.startswith("plastic.")}
    e_state = AdamState.for_params(elastic)
    p_state = AdamState.for_params(plastic)
    n_epochs = epochs if epochs is not None else cfg.epochs
    n = F.shape[0]
    for epoch in range(n_epochs):
        factor = cosine_anneal(1.0, 0.0, epoch, n_epochs) if cfg.cosine_lr else 1.0
        stress, e_cache = law.elastic_batch(F)
        d_e = stress - P_gt
        loss_e = float(np.mean(d_e * d_e))
        _, ge = law.elastic_adjoint(e_cache, 2.0 * d_e / d_e.size)
        fnew, p_cache = law.plastic_batch(F)
        d_p = fnew - Fnew_gt
        loss_p = float(np.mean(d_p * d_p))
        _, gp = law.plastic_adjoint(p_cache, 2.0 * d_p / d_p.size)
        ge = clip_grad_norm(GradAccumulator(ge), cfg.grad_clip)
        gp = clip_grad_norm(GradAccumulator(gp), cfg.grad_clip)
        adam_step(elastic, ge, e_state, cfg.lr_elastic * factor,
                  betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
        adam_step(plastic, gp, p_state, cfg.lr_plastic * factor,
                  betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
        if log and (epoch % 50 == 0 or epoch == n_epochs - 1):
            log(f"epoch {epoch}: stress mse {loss_e:.6e} return mse {loss_p:.6e}")
    return params
