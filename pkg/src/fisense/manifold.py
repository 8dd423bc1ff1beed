"""Perturbation targets and the local geometry they induce.

A perturbation target names which coordinates of the prediction problem get
an additive disturbance omega (evaluated at omega = 0): the whole input
vector, all trainable parameters, one layer's parameters, or a square pixel
patch of an image input. For a chosen target, the per-class score matrix

    L0[:, y] = sqrt(P(y | x)) * d/d_omega log P(y | x, omega)

factors the Fisher-type metric G = L0 @ L0.T of the perturbed predictive
family. Its compact eigenbasis (rank at most the class count) defines
normalized coordinates in which the metric is the identity; objective
gradients pushed into those coordinates are what the influence measures
consume. Components of a gradient outside the span of the basis cannot move
the predictive distribution and are reported as a residual ratio rather
than an error.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .classifier import (
    flatten_params,
    forward,
    logprob_grad_input,
    logprob_grad_params,
    param_count,
    with_params,
)
from .numerics import RANK_TOL, csvd_tall

# Residual ratios above this are flagged as out-of-span warnings.
RESIDUAL_WARN = 1e-6


@dataclass(frozen=True)
class InputTarget:
    """Perturb every input coordinate."""


@dataclass(frozen=True)
class AllParamsTarget:
    """Perturb all trainable parameters (flatten order)."""


@dataclass(frozen=True)
class LayerTarget:
    """Perturb one layer's parameters (weights row-major, then bias)."""

    layer: int


@dataclass(frozen=True)
class PatchTarget:
    """Perturb a square pixel window of an image input.

    The window is scale x scale centered at (row, col) and clipped at the
    image border. Image vectors are laid out row-major with the channel as
    the fastest axis; ``channel=None`` perturbs every channel inside the
    window, an integer restricts to that single channel.
    """

    row: int
    col: int
    scale: int = 1
    height: int = 28
    width: int = 28
    channels: int = 1
    channel: int = None

    def __post_init__(self):
        if self.scale < 1 or self.scale % 2 == 0:
            raise ValueError(f"patch scale must be odd and positive, got {self.scale}")
        if not (0 <= self.row < self.height and 0 <= self.col < self.width):
            raise ValueError(
                f"patch center ({self.row}, {self.col}) outside "
                f"{self.height}x{self.width} grid"
            )
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.channel is not None and not (0 <= self.channel < self.channels):
            raise ValueError(f"channel {self.channel} outside 0..{self.channels - 1}")


class PerturbationBasis(NamedTuple):
    u0: np.ndarray       # (p, rank), orthonormal columns
    lambda0: np.ndarray  # (rank,), positive metric eigenvalues, descending
    rank: int
    dim: int             # p, the perturbed-coordinate count


class NuGradient(NamedTuple):
    values: np.ndarray       # gradient in normalized coordinates, shape (rank,)
    residual_ratio: float    # |(I - U0 U0^T) grad| / |grad|, 0 for zero grad


# ==================== target resolution ====================


def describe_target(target):
    """Stable string form of a target, used in records and filenames."""
    if isinstance(target, InputTarget):
        return "input"
    if isinstance(target, AllParamsTarget):
        return "all-params"
    if isinstance(target, LayerTarget):
        return f"layer:{target.layer}"
    if isinstance(target, PatchTarget):
        text = f"patch:{target.row},{target.col}:scale{target.scale}"
        if target.channel is not None:
            text += f":ch{target.channel}"
        return text
    raise ValueError(f"unknown perturbation target: {target!r}")


def patch_indices(target):
    """Flat image-vector indices covered by a patch target (sorted)."""
    h = (target.scale - 1) // 2
    rows = range(max(target.row - h, 0), min(target.row + h, target.height - 1) + 1)
    cols = range(max(target.col - h, 0), min(target.col + h, target.width - 1) + 1)
    chans = range(target.channels) if target.channel is None else [target.channel]
    idx = [
        (r * target.width + c) * target.channels + ch
        for r in rows
        for c in cols
        for ch in chans
    ]
    return np.asarray(idx, dtype=np.int64)


def _check_patch_geometry(model, target):
    expected = target.height * target.width * target.channels
    if expected != model.input_dim:
        raise ValueError(
            f"patch geometry {target.height}x{target.width}x{target.channels} "
            f"does not match model input dimension {model.input_dim}"
        )


def target_dimension(model, target):
    if isinstance(target, InputTarget):
        return model.input_dim
    if isinstance(target, AllParamsTarget):
        return param_count(model)
    if isinstance(target, LayerTarget):
        return param_count(model, layer=target.layer)
    if isinstance(target, PatchTarget):
        _check_patch_geometry(model, target)
        return patch_indices(target).size
    raise ValueError(f"unknown perturbation target: {target!r}")


def target_gradient(model, x, target):
    """Rows of d log P(y | x) / d omega for the target's coordinates, (K, p)."""
    if isinstance(target, InputTarget):
        return logprob_grad_input(model, x)
    if isinstance(target, AllParamsTarget):
        return logprob_grad_params(model, x)
    if isinstance(target, LayerTarget):
        return logprob_grad_params(model, x, layer=target.layer)
    if isinstance(target, PatchTarget):
        _check_patch_geometry(model, target)
        return logprob_grad_input(model, x)[:, patch_indices(target)]
    raise ValueError(f"unknown perturbation target: {target!r}")


def apply_perturbation(model, x, target, omega):
    """Shift the target coordinates by omega; returns (model, x) with only
    the affected piece replaced."""
    omega = np.asarray(omega, dtype=np.float64)
    expected = target_dimension(model, target)
    if omega.shape != (expected,):
        raise ValueError(f"omega must have length {expected}, got {omega.shape}")
    if isinstance(target, InputTarget):
        return model, np.asarray(x, dtype=np.float64) + omega
    if isinstance(target, PatchTarget):
        x2 = np.asarray(x, dtype=np.float64).copy()
        x2[patch_indices(target)] += omega
        return model, x2
    if isinstance(target, AllParamsTarget):
        return with_params(model, flatten_params(model) + omega), x
    if isinstance(target, LayerTarget):
        shifted = flatten_params(model, layer=target.layer) + omega
        return with_params(model, shifted, layer=target.layer), x
    raise ValueError(f"unknown perturbation target: {target!r}")


# ==================== metric factor and basis ====================


def build_L0(model, x, target):
    """Score factor of the perturbation metric, shape (p, K).

    Column y is sqrt(P(y | x)) times the gradient of log P(y | x) with
    respect to the target coordinates, so G = L0 @ L0.T is the metric at
    omega = 0.
    """
    grads = target_gradient(model, x, target)  # (K, p)
    p = forward(model, x)
    return grads.T * np.sqrt(p)[None, :]


def build_basis(l0, tol=RANK_TOL):
    """Compact eigenbasis of the metric G = L0 @ L0.T via the Gram route."""
    u0, lam0, rank = csvd_tall(l0, tol=tol)
    if rank > min(l0.shape):
        raise AssertionError(
            f"metric rank {rank} exceeds bound {min(l0.shape)}; numerical breakdown"
        )
    return PerturbationBasis(u0, lam0, rank, l0.shape[0])


def grad_nu(grad_omega, basis):
    """Push an objective gradient into normalized (identity-metric) coordinates.

    Returns the rank-length coordinate vector Lambda^(-1/2) U0^T grad and the
    relative norm of the component of grad outside the basis span. A zero
    gradient reports ratio 0; a nonzero gradient against a rank-0 basis
    reports ratio 1.
    """
    grad_omega = np.asarray(grad_omega, dtype=np.float64)
    if grad_omega.shape != (basis.dim,):
        raise ValueError(f"gradient must have length {basis.dim}")
    gnorm = np.linalg.norm(grad_omega)
    if gnorm == 0.0:
        return NuGradient(np.zeros(basis.rank), 0.0)
    if basis.rank == 0:
        return NuGradient(np.zeros(0), 1.0)
    coords = basis.u0.T @ grad_omega
    resid = grad_omega - basis.u0 @ coords
    return NuGradient(coords / np.sqrt(basis.lambda0), float(np.linalg.norm(resid) / gnorm))
