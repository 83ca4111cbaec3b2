"""Loss functions returning (value, gradient w.r.t. the prediction)."""

from __future__ import annotations

import numpy as np

EPS = 1e-12


def _check(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _check(pred, target)
    return float(np.mean((pred.astype(float) - target) ** 2))


def mse_grad(pred, target):
    pred, target = _check(pred, target)
    return mse(pred, target), 2.0 * (pred - target) / pred.size


def cce(pred, onehot) -> float:
    """Mean over samples of ``-sum(t * log(max(p, 1e-12)))`` along the last axis."""
    pred, onehot = _check(pred, onehot)
    n = pred.shape[0] if pred.ndim > 1 else 1
    return float(-np.sum(onehot * np.log(np.maximum(pred.astype(float), EPS))) / n)


def cce_grad(pred, onehot):
    pred, onehot = _check(pred, onehot)
    n = pred.shape[0] if pred.ndim > 1 else 1
    g = np.where(pred > EPS, -onehot / np.maximum(pred, EPS), 0.0) / n
    return cce(pred, onehot), g


def bce(pred, target) -> float:
    """Two-class cross-entropy of a single sigmoid cell, i.e. CCE over (p, 1 - p)."""
    pred, target = _check(pred, target)
    p = pred.astype(float)
    n = pred.shape[0] if pred.ndim > 1 else 1
    return float(-np.sum(target * np.log(np.maximum(p, EPS)) + (1 - target) * np.log(np.maximum(1 - p, EPS))) / n)


def bce_grad(pred, target):
    pred, target = _check(pred, target)
    n = pred.shape[0] if pred.ndim > 1 else 1
    g = (np.where(pred > EPS, -target / np.maximum(pred, EPS), 0.0)
         + np.where(1 - pred > EPS, (1 - target) / np.maximum(1 - pred, EPS), 0.0)) / n
    return bce(pred, target), g


LOSSES = {"mse": mse_grad, "cce": cce_grad, "bce": bce_grad}

# output activations whose Jacobian cancels against the loss gradient
FUSABLE = {"cce": "softmax", "bce": "sigmoid"}


def fused_grad(name: str, pred, target, weights=None):
    """(loss, gradient w.r.t. the output pre-activation) for softmax+CCE or sigmoid+BCE.

    The pre-activation gradient is ``w * (p - t)`` with ``w = 1/n`` by default,
    which stays informative when ``p`` saturates below the log floor.
    """
    if name not in FUSABLE:
        raise ValueError(f"loss {name!r} has no fused form")
    pred, target = _check(pred, target)
    n = pred.shape[0] if pred.ndim > 1 else 1
    if weights is None:
        return LOSSES[name](pred, target)[0], (pred - target) / n
    w = np.asarray(weights)
    p = np.clip(pred.astype(float), EPS, 1 - EPS)
    if name == "bce":
        per = -(target * np.log(p) + (1 - target) * np.log(1 - p))
    else:
        per = -target * np.log(p)
    return float(np.sum(w * per)), w * (pred - target)
