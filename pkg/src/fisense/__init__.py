"""Sensitivity analysis for softmax classifiers on a perturbation manifold.

Computes a metric-normalized local influence measure (FI) for perturbations
of inputs, parameters, or pixel patches, alongside Jacobian-norm and
curvature (local influence) baselines, plus desk-scale experiment protocols:
outlier screening, per-layer sensitivity, train/test comparison, and
one-pixel attacks guided by pixel-wise influence maps.
"""

__version__ = "0.1.0"
