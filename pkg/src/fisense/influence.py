"""Per-sample influence measures for a chosen perturbation target.

Three measures of how hard a cross-entropy objective can be moved by an
infinitesimal perturbation of the target coordinates:

fi
    Squared norm of the objective gradient in the normalized coordinates of
    the perturbation metric, equivalently grad^T G^+ grad. Invariant under
    reparameterization of the perturbation, which is the property the other
    two baselines lack.
jacobian_norm
    Euclidean norm of the raw objective gradient; cheap, but rescales with
    the perturbation coordinates.
cook_directional / cook_max
    Curvature-based local influence: a normal-curvature quotient of the
    objective Hessian against an identity-plus-gradient metric, either along
    a given direction or maximized over directions (generalized eigenvalue
    problem). The Hessian is approximated by central finite differences of
    the analytic gradient, so these are limited to moderate target
    dimensions.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .classifier import forward
from .manifold import (
    RESIDUAL_WARN,
    apply_perturbation,
    build_basis,
    grad_nu,
    target_dimension,
    target_gradient,
)
from .numerics import RANK_TOL

# Finite-difference Hessians are dense p x p; refuse beyond this size.
COOK_DIM_LIMIT = 2000
HESSIAN_STEP = 1e-4


@dataclass(frozen=True)
class CrossEntropyTrue:
    """f = -log P(label | x) for a fixed true label."""

    label: int


@dataclass(frozen=True)
class CrossEntropyPred:
    """f = -log P(y_pred | x); y_pred resolved at the unperturbed point,
    ties broken toward the smallest class index."""


@dataclass(frozen=True)
class InfluenceValues:
    fi: float
    jacobian_norm: float
    residual_ratio: float
    rank: int
    y_pred: int
    p_pred: float
    warnings: tuple


@dataclass(frozen=True)
class InfluenceRecord:
    sample_id: int
    target: str
    fi: float
    jacobian_norm: float    # None when not requested
    cook_max: float         # None when not requested
    y_true: int             # None when unlabeled
    y_pred: int
    p_pred: float
    residual_ratio: float


# ==================== objective handling ====================


def resolve_label(model, x, objective):
    """Class index whose log-probability the objective tracks."""
    if isinstance(objective, CrossEntropyTrue):
        if not (0 <= objective.label < model.class_count):
            raise ValueError(
                f"label {objective.label} outside 0..{model.class_count - 1}"
            )
        return int(objective.label)
    if isinstance(objective, CrossEntropyPred):
        return int(np.argmax(forward(model, x)))
    raise ValueError(f"unknown objective: {objective!r}")


def objective_gradient(model, x, target, objective, label=None):
    """Gradient of f = -log P(label) w.r.t. the target coordinates."""
    if label is None:
        label = resolve_label(model, x, objective)
    return -target_gradient(model, x, target)[label]


# ==================== first-order measures ====================


def evaluate(model, x, target, objective, tol=RANK_TOL):
    """All first-order measures from one gradient pass.

    The metric factor and the objective gradient share the same per-class
    gradient matrix, so this computes it once. Degenerate metrics (rank 0)
    and out-of-span gradients produce warnings, never failures.
    """
    probs = forward(model, x)
    label = resolve_label(model, x, objective)
    grads = target_gradient(model, x, target)      # (K, p)
    grad_f = -grads[label]
    l0 = grads.T * np.sqrt(probs)[None, :]
    basis = build_basis(l0, tol=tol)
    nu = grad_nu(grad_f, basis)
    warnings = ()
    if basis.rank == 0:
        warnings += ("degenerate perturbation metric (rank 0): fi forced to 0",)
    elif nu.residual_ratio > RESIDUAL_WARN:
        warnings += (
            f"gradient has out-of-span component (residual ratio {nu.residual_ratio:.3e})",
        )
    y_pred = int(np.argmax(probs))
    return InfluenceValues(
        fi=float(np.dot(nu.values, nu.values)),
        jacobian_norm=float(np.linalg.norm(grad_f)),
        residual_ratio=nu.residual_ratio,
        rank=basis.rank,
        y_pred=y_pred,
        p_pred=float(probs[y_pred]),
        warnings=warnings,
    )


def fi(model, x, target, objective, tol=RANK_TOL):
    """Metric-normalized influence grad^T G^+ grad (non-negative scalar)."""
    return evaluate(model, x, target, objective, tol=tol).fi


def jacobian_norm(model, x, target, objective):
    """Euclidean norm of the objective gradient w.r.t. the target."""
    return float(np.linalg.norm(objective_gradient(model, x, target, objective)))


# ==================== curvature measures ====================


def cook_value(grad, hess, eta):
    """Directional normal-curvature influence.

    (1 + |grad|^2)^(-1/2) * eta^T H eta / (eta^T (I + grad grad^T) eta).
    """
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if np.linalg.norm(eta) == 0.0:
        raise ValueError("direction eta must be nonzero")
    gg = float(np.dot(grad, grad))
    quad = float(eta @ hess @ eta)
    denom = float(np.dot(eta, eta) + np.dot(grad, eta) ** 2)
    return quad / denom / np.sqrt(1.0 + gg)


def cook_max_value(grad, hess):
    """Maximum of cook_value over directions: top generalized eigenvalue of
    (H, I + grad grad^T), scaled by (1 + |grad|^2)^(-1/2)."""
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    hess = (hess + hess.T) / 2.0
    m = np.eye(grad.size) + np.outer(grad, grad)
    top = scipy.linalg.eigh(hess, m, eigvals_only=True)[-1]
    return float(top / np.sqrt(1.0 + np.dot(grad, grad)))


def perturbation_hessian(model, x, target, objective, step=HESSIAN_STEP):
    """Objective Hessian w.r.t. the target coordinates.

    Central finite differences of the analytic gradient, symmetrized.
    Dense p x p output, guarded to p <= COOK_DIM_LIMIT.
    """
    p = target_dimension(model, target)
    if p > COOK_DIM_LIMIT:
        raise ValueError(
            f"curvature measures need a dense {p}x{p} Hessian; "
            f"limit is {COOK_DIM_LIMIT} perturbed coordinates"
        )
    label = resolve_label(model, x, objective)
    hess = np.empty((p, p))
    for i in range(p):
        omega = np.zeros(p)
        omega[i] = step
        m_plus, x_plus = apply_perturbation(model, x, target, omega)
        g_plus = objective_gradient(m_plus, x_plus, target, objective, label=label)
        m_minus, x_minus = apply_perturbation(model, x, target, -omega)
        g_minus = objective_gradient(m_minus, x_minus, target, objective, label=label)
        hess[:, i] = (g_plus - g_minus) / (2.0 * step)
    return (hess + hess.T) / 2.0


def cook_directional(model, x, target, objective, eta, step=HESSIAN_STEP):
    grad = objective_gradient(model, x, target, objective)
    hess = perturbation_hessian(model, x, target, objective, step=step)
    return cook_value(grad, hess, eta)


def cook_max(model, x, target, objective, step=HESSIAN_STEP):
    grad = objective_gradient(model, x, target, objective)
    hess = perturbation_hessian(model, x, target, objective, step=step)
    return cook_max_value(grad, hess)
