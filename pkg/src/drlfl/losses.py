"""Per-sample losses for the model families an FL client may train.

Only evaluators live here; the FL task model is always the MLP from
:mod:`drlfl.nn`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

KINDS = ("linear_regression", "logistic_regression", "smooth_svm", "kmeans", "neural_network")


@dataclass(frozen=True)
class LossKind:
    name: str
    clusters: int | None = None  # K', required for kmeans

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown loss kind {self.name!r}")
        if self.name == "kmeans" and (self.clusters is None or self.clusters < 1):
            raise ValueError("kmeans needs clusters >= 1")


def _margin_label(y):
    y = float(y)
    if y not in (-1.0, 1.0):
        raise ValueError(f"label must be -1 or +1, got {y}")
    return y


def linear_regression(w, x, y) -> float:
    r = np.atleast_1d(np.asarray(y, dtype=np.float64)) - np.atleast_1d(np.asarray(w, dtype=np.float64).T @ x)
    return 0.5 * float(r @ r)


def logistic_regression(w, x, y) -> float:
    m = _margin_label(y) * float(np.dot(w, x))
    return float(np.logaddexp(0.0, -m))


def smooth_svm(w, x, y) -> float:
    m = _margin_label(y) * float(np.dot(w, x))
    return 0.5 * max(0.0, 1.0 - m)


def kmeans(centers, x) -> float:
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    d = ((centers - np.asarray(x, dtype=np.float64)) ** 2).sum(axis=1)
    return 0.5 * float(d.min())


def neural_network(spec: nn.MlpSpec, params: nn.ParamVector, x, y) -> float:
    return float(nn.per_sample_losses(spec, params, np.atleast_2d(x), [y])[0])


def loss(kind: LossKind | str, model, x, y=None) -> float:
    """Dispatch to the per-sample loss of ``kind``.

    ``model`` is the weight vector (regression/SVM), the ``(K', d)`` center
    matrix (kmeans) or an ``(MlpSpec, ParamVector)`` pair (neural_network).
    """
    if isinstance(kind, str):
        kind = LossKind(kind, clusters=len(np.atleast_2d(model)) if kind == "kmeans" else None)
    x = np.asarray(x, dtype=np.float64)
    if kind.name == "linear_regression":
        return linear_regression(model, x, y)
    if kind.name == "logistic_regression":
        return logistic_regression(model, x, y)
    if kind.name == "smooth_svm":
        return smooth_svm(model, x, y)
    if kind.name == "kmeans":
        centers = np.atleast_2d(model)
        if len(centers) != kind.clusters:
            raise ValueError(f"expected {kind.clusters} centers, got {len(centers)}")
        return kmeans(centers, x)
    spec, params = model
    return neural_network(spec, params, x, y)
