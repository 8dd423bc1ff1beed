"""Shared builders for test models.

Kept as plain functions (not fixtures) so tests can parameterize them.
"""

import numpy as np

from fisense.classifier import Activation, ClassifierModel, Layer, init_model


def make_binary_logistic(w):
    """Two-class linear model with logits (w . x, 0)."""
    w = np.asarray(w, dtype=np.float64)
    weight = np.vstack([w, np.zeros_like(w)])
    return ClassifierModel([Layer(weight, np.zeros(2), Activation.IDENTITY)])


def x_for_class1_prob(w, s):
    """Input along w that puts P(class 0) = s for make_binary_logistic(w)."""
    w = np.asarray(w, dtype=np.float64)
    margin = np.log(s / (1.0 - s))
    return w * margin / np.dot(w, w)


def random_mlp(dims, seed, activation=Activation.SIGMOID, zero_bias=False):
    return init_model(dims, hidden_activation=activation, seed=seed, zero_bias=zero_bias)
