"""Learnable constitutive laws built from bias-free MLPs on rotation invariants.

The networks see only rotation-invariant features of the deformation gradient
(principal stretches, the right Cauchy-Green tensor, the determinant), each
normalized to vanish in the undeformed state. The symmetrized 3x3 output is
rotated back by the polar rotation of F, which makes both maps rotation
equivariant by construction; the absence of bias terms makes F = I an exact
fixed point: zero stress, identity return.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import linalg3 as la
from .errors import ShapeMismatch
from .materials import ConstitutiveLaw

N_INPUT = 13
N_HIDDEN = 64
N_OUTPUT = 9

# fixed step scale of the plastic correction F + alpha * Y
ALPHA = 1e-3
DEFAULT_STRESS_SCALE = 1e5

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class MlpParams:
    """Three bias-free weight matrices, stored (out, in) row-major."""

    w1: np.ndarray  # (64, 13)
    w2: np.ndarray  # (64, 64)
    w3: np.ndarray  # (9, 64)

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.w2.copy(), self.w3.copy())

    @property
    def count(self) -> int:
        return self.w1.size + self.w2.size + self.w3.size


@dataclass
class NeuralLawParams:
    """Weights of the elastic and plastic networks plus fixed output scalings."""

    elastic_net: MlpParams
    plastic_net: MlpParams
    alpha: float = ALPHA
    stress_scale: float = DEFAULT_STRESS_SCALE

    def copy(self) -> "NeuralLawParams":
        return NeuralLawParams(
            self.elastic_net.copy(), self.plastic_net.copy(), self.alpha, self.stress_scale
        )

    @property
    def count(self) -> int:
        return self.elastic_net.count + self.plastic_net.count


def init_params(seed: int, stress_scale: float = DEFAULT_STRESS_SCALE) -> NeuralLawParams:
    """Uniform +-sqrt(1/fan_in) weights, deterministic per seed."""
    rng = np.random.default_rng(seed)

    def w(out_dim, in_dim):
        bound = np.sqrt(1.0 / in_dim)
        return rng.uniform(-bound, bound, (out_dim, in_dim))

    def net():
        return MlpParams(w(N_HIDDEN, N_INPUT), w(N_HIDDEN, N_HIDDEN), w(N_OUTPUT, N_HIDDEN))

    return NeuralLawParams(elastic_net=net(), plastic_net=net(), stress_scale=stress_scale)


def gelu(x):
    """Exact Gaussian-error-function GELU (not the tanh approximation)."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def invariants_batch(F):
    """13 rotation-invariant inputs, exactly zero at F = I.

    Layout: (sigma - 1) [3], row-major vec(F^T F - I) [9], det(F) - 1 [1].
    Also returns the SVD for reuse by the wrapper.
    """
    U, sig, V = la.svd3_batch(F)
    G = la.transpose(F) @ F
    J = la.det3(F)
    n = F.shape[0]
    z = np.empty((n, N_INPUT))
    z[:, 0:3] = sig - 1.0
    z[:, 3:12] = (G - np.eye(3)).reshape(n, 9)
    z[:, 12] = J - 1.0
    return z, (U, sig, V)


def invariants(F: la.Mat3) -> np.ndarray:
    return invariants_batch(F[None])[0][0]


def mlp_forward_batch(params: MlpParams, z):
    a1 = z @ params.w1.T
    h1 = gelu(a1)
    a2 = h1 @ params.w2.T
    h2 = gelu(a2)
    t = h2 @ params.w3.T
    return t, (z, a1, h1, a2, h2)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    if x.shape != (N_INPUT,):
        raise ShapeMismatch(f"expected a {N_INPUT}-vector, got shape {x.shape}")
    return mlp_forward_batch(params, x[None])[0][0]


def mlp_backward_batch(params: MlpParams, cache, tbar):
    """Weight gradients (summed over the batch) and the input cotangent."""
    z, a1, h1, a2, h2 = cache
    w3bar = tbar.T @ h2
    h2bar = tbar @ params.w3
    a2bar = h2bar * gelu_grad(a2)
    w2bar = a2bar.T @ h1
    h1bar = a2bar @ params.w2
    a1bar = h1bar * gelu_grad(a1)
    w1bar = a1bar.T @ z
    zbar = a1bar @ params.w1
    return zbar, {"w1": w1bar, "w2": w2bar, "w3": w3bar}


def equivariant_wrap_batch(params: MlpParams, F):
    """Y = R @ sym(NN(invariants)) with R the polar rotation of F."""
    z, (U, sig, V) = invariants_batch(F)
    R = U @ la.transpose(V)
    t, mlp_cache = mlp_forward_batch(params, z)
    T1 = t.reshape(-1, 3, 3)
    T2 = 0.5 * (T1 + la.transpose(T1))
    Y = R @ T2
    cache = (F, U, sig, V, R, T2, mlp_cache)
    return Y, cache


def equivariant_wrap(params: MlpParams, F: la.Mat3) -> la.Mat3:
    return equivariant_wrap_batch(params, F[None])[0][0]


def equivariant_wrap_adjoint(params: MlpParams, cache, Ybar):
    F, U, sig, V, R, T2, mlp_cache = cache
    Rbar = Ybar @ la.transpose(T2)
    T2bar = la.transpose(R) @ Ybar
    T1bar = 0.5 * (T2bar + la.transpose(T2bar))
    zbar, wgrads = mlp_backward_batch(params, mlp_cache, T1bar.reshape(-1, 9))

    sigbar = zbar[:, 0:3]
    Gbar = zbar[:, 3:12].reshape(-1, 3, 3)
    Jbar = zbar[:, 12]

    Fbar = F @ (Gbar + la.transpose(Gbar))
    Fbar += Jbar[:, None, None] * la.cof3(F)
    Fbar += la.sigma_adjoint_batch(U, V, sigbar)
    Fbar += la.rotation_adjoint_batch(U, sig, V, Rbar)
    return Fbar, wgrads


def neural_elastic(params: NeuralLawParams, F: la.Mat3) -> la.Mat3:
    """First Piola-Kirchhoff stress of the learnable elastic map."""
    Y, _ = equivariant_wrap_batch(params.elastic_net, F[None])
    return params.stress_scale * Y[0]


def neural_plastic(params: NeuralLawParams, F_trial: la.Mat3) -> la.Mat3:
    """Learnable return map F + alpha * Y; identity at F = I."""
    Y, _ = equivariant_wrap_batch(params.plastic_net, F_trial[None])
    return F_trial + params.alpha * Y[0]


class NeuralLaw(ConstitutiveLaw):
    """ConstitutiveLaw interface over a NeuralLawParams bundle."""

    stress_is_kirchhoff = False
    trainable = (
        "elastic.w1",
        "elastic.w2",
        "elastic.w3",
        "plastic.w1",
        "plastic.w2",
        "plastic.w3",
    )

    def __init__(self, params: NeuralLawParams):
        self.params = params

    def parameters(self) -> dict[str, np.ndarray]:
        p = self.params
        return {
            "elastic.w1": p.elastic_net.w1,
            "elastic.w2": p.elastic_net.w2,
            "elastic.w3": p.elastic_net.w3,
            "plastic.w1": p.plastic_net.w1,
            "plastic.w2": p.plastic_net.w2,
            "plastic.w3": p.plastic_net.w3,
        }

    def elastic_batch(self, F):
        Y, cache = equivariant_wrap_batch(self.params.elastic_net, F)
        return self.params.stress_scale * Y, cache

    def elastic_adjoint(self, cache, Pbar):
        Fbar, wgrads = equivariant_wrap_adjoint(
            self.params.elastic_net, cache, self.params.stress_scale * Pbar
        )
        return Fbar, {f"elastic.{k}": v for k, v in wgrads.items()}

    def plastic_batch(self, F):
        Y, cache = equivariant_wrap_batch(self.params.plastic_net, F)
        return F + self.params.alpha * Y, cache

    def plastic_adjoint(self, cache, Fnew_bar):
        Fbar, wgrads = equivariant_wrap_adjoint(
            self.params.plastic_net, cache, self.params.alpha * Fnew_bar
        )
        return Fbar + Fnew_bar, {f"plastic.{k}": v for k, v in wgrads.items()}


# checkpoint file format ------------------------------------------------------

CHECKPOINT_MAGIC = b"NCLW"
CHECKPOINT_VERSION = 1
_LAYER_DIMS = (N_INPUT, N_HIDDEN, N_HIDDEN, N_OUTPUT)


def save_params(path, params: NeuralLawParams) -> None:
    """Little-endian binary checkpoint; see CHECKPOINT_MAGIC for the layout."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(_LAYER_DIMS)))
        f.write(struct.pack(f"<{len(_LAYER_DIMS)}I", *_LAYER_DIMS))
        for net in (params.elastic_net, params.plastic_net):
            for w in (net.w1, net.w2, net.w3):
                f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        f.write(struct.pack("<d", params.alpha))
        f.write(struct.pack("<d", params.stress_scale))


def load_params(path) -> NeuralLawParams:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (ndims,) = struct.unpack("<I", f.read(4))
        dims = struct.unpack(f"<{ndims}I", f.read(4 * ndims))
        if dims != _LAYER_DIMS:
            raise ValueError(f"unexpected layer dims {dims}")

        def read_w(out_dim, in_dim):
            buf = f.read(8 * out_dim * in_dim)
            return np.frombuffer(buf, dtype="<f8").reshape(out_dim, in_dim).copy()

        nets = []
        for _ in range(2):
            nets.append(
                MlpParams(
                    read_w(N_HIDDEN, N_INPUT),
                    read_w(N_HIDDEN, N_HIDDEN),
                    read_w(N_OUTPUT, N_HIDDEN),
                )
            )
        (alpha,) = struct.unpack("<d", f.read(8))
        (stress_scale,) = struct.unpack("<d", f.read(8))
    return NeuralLawParams(nets[0], nets[1], alpha=alpha, stress_scale=stress_scale)
