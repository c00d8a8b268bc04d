"""Convex per-agent loss models.

A batch is a mapping of named arrays whose second-to-last (or last, for
scalar fields) axis indexes samples.  Every model broadcasts leading axes,
so ``theta`` of shape ``(m, D, d)`` evaluated against a batch with leading
shape ``(m, 1)`` yields losses of shape ``(m, D)``.  The engine relies on
this to score every received model on its owner's data in one call.

Reductions use ``einsum`` without BLAS dispatch so results for one row never
depend on how many rows are evaluated together.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidLabelError, InvalidScenarioError, ShapeError


class LossModel:
    """Interface: per-sample losses, batch-mean loss and batch-mean gradient."""

    dim: int

    def sample_losses(self, theta, batch):
        raise NotImplementedError

    def loss(self, theta, batch):
        """Mean loss over the batch axis."""
        return np.mean(self.sample_losses(theta, batch), axis=-1)

    def grad(self, theta, batch):
        raise NotImplementedError

    def _check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.dim,):
            raise ShapeError(f"expected parameters of length {self.dim}, got shape {theta.shape}")
        return theta


class LocalizationLoss(LossModel):
    """Squared residual of a noisy range measurement along a noisy bearing.

    Batch fields: ``pos`` (agent position, ``(..., B, 2)``), ``dist``
    (``(..., B)``) and ``dir`` (``(..., B, 2)``).  Per sample the loss is
    ``(dist - (theta - pos) . dir) ** 2``.
    """

    dim = 2

    def _residual(self, theta, batch):
        theta = self._check_theta(theta)
        pos, u = np.asarray(batch["pos"], float), np.asarray(batch["dir"], float)
        if pos.shape[-1] != 2 or u.shape[-1] != 2:
            raise ShapeError("localization positions and directions must be 2-D")
        w = theta[..., None, :] - pos
        return batch["dist"] - np.sum(w * u, axis=-1), u

    def sample_losses(self, theta, batch):
        r, _ = self._residual(theta, batch)
        return r * r

    def grad(self, theta, batch):
        r, u = self._residual(theta, batch)
        return np.mean(-2.0 * r[..., None] * u, axis=-2)


class SoftmaxLoss(LossModel):
    """Multinomial logistic regression with cross-entropy loss.

    ``theta`` packs a row-major ``(n_classes, n_features)`` weight matrix
    followed by ``n_classes`` biases.  Batch fields: ``x`` (``(..., B, f)``)
    and integer labels ``y`` (``(..., B)``).
    """

    def __init__(self, n_classes: int, n_features: int):
        if n_classes < 2 or n_features < 1:
            raise InvalidScenarioError("softmax model needs >= 2 classes and >= 1 feature")
        self.n_classes = n_classes
        self.n_features = n_features
        self.dim = n_classes * n_features + n_classes

    def unpack(self, theta):
        theta = self._check_theta(theta)
        c, f = self.n_classes, self.n_features
        W = theta[..., : c * f].reshape(theta.shape[:-1] + (c, f))
        return W, theta[..., c * f :]

    def logits(self, theta, x):
        W, b = self.unpack(theta)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return np.einsum("...cf,...bf->...bc", W, x) + b[..., None, :]

    def _labels(self, y, shape):
        y = np.asarray(y)
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise InvalidLabelError(f"labels must lie in [0, {self.n_classes})")
        return np.broadcast_to(y.astype(np.intp), shape)

    def _log_probs(self, theta, batch):
        z = self.logits(theta, batch["x"])
        top = np.max(z, axis=-1, keepdims=True)
        lse = top + np.log(np.sum(np.exp(z - top), axis=-1, keepdims=True))
        return z - lse

    def sample_losses(self, theta, batch):
        logp = self._log_probs(theta, batch)
        y = self._labels(batch["y"], logp.shape[:-1])
        return -np.take_along_axis(logp, y[..., None], axis=-1)[..., 0]

    def grad(self, theta, batch):
        logp = self._log_probs(theta, batch)
        y = self._labels(batch["y"], logp.shape[:-1])
        resid = np.exp(logp) - (np.arange(self.n_classes) == y[..., None])
        x = np.asarray(batch["x"], dtype=float)
        n = resid.shape[-2]
        dW = np.einsum("...bc,...bf->...cf", resid, x) / n
        db = np.mean(resid, axis=-2)
        return np.concatenate([dW.reshape(dW.shape[:-2] + (-1,)), db], axis=-1)

    def predict(self, theta, x):
        return np.argmax(self.logits(theta, x), axis=-1)


class QuadraticLoss(LossModel):
    """Quadratic bowl around a noisy target.

    A sample is a target ``z = theta_star - inv(H) @ eps`` with
    ``eps ~ N(0, sigma2 / d * I)``; the loss is ``0.5 (theta - z)' H (theta - z)``.
    Its stochastic gradient is ``H (theta - theta_star) + eps``, so the model
    meets the strong-convexity, unbiasedness and second-moment conditions with
    ``m = lambda_min(H)``, ``L = lambda_max(H)``, ``c = 1`` and noise ``sigma2``.
    """

    def __init__(self, hessian):
        H = np.atleast_2d(np.asarray(hessian, dtype=float))
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidScenarioError("Hessian must be a square matrix")
        if not np.allclose(H, H.T, rtol=0, atol=1e-12):
            raise InvalidScenarioError("Hessian must be symmetric")
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 0:
            raise InvalidScenarioError(f"Hessian is not positive definite (min eigenvalue {eig[0]:.3g})")
        self.H = H
        self.H_inv = np.linalg.inv(H)
        self.dim = H.shape[0]
        self.m = float(eig[0])
        self.L = float(eig[-1])

    def sample_losses(self, theta, batch):
        diff = self._check_theta(theta)[..., None, :] - batch["target"]
        return 0.5 * np.einsum("...i,ij,...j->...", diff, self.H, diff)

    def grad(self, theta, batch):
        diff = self._check_theta(theta)[..., None, :] - batch["target"]
        return np.mean(np.einsum("...i,ij->...j", diff, self.H), axis=-2)

    def sample_targets(self, theta_star, sigma2, rng, size):
        """Draw ``size`` noisy targets per row of ``theta_star`` -> ``(m, size, d)``."""
        theta_star = np.atleast_2d(theta_star)
        eps = rng.normal(0.0, np.sqrt(sigma2 / self.dim), size=(theta_star.shape[0], size, self.dim))
        return theta_star[:, None, :] - np.einsum("...i,ij->...j", eps, self.H_inv)

    def risk(self, theta, theta_star, sigma2):
        """Expected loss ``0.5 x' H x + sigma2 / (2 d) * tr(inv(H))``."""
        x = self._check_theta(theta) - theta_star
        floor = 0.5 * sigma2 / self.dim * np.trace(self.H_inv)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.H, x) + floor


def finite_diff_gradient(model: LossModel, theta, batch, h: float = 1e-5):
    """Central-difference gradient of ``model.loss`` at a single ``theta``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        out[i] = (model.loss(theta + step, batch) - model.loss(theta - step, batch)) / (2 * h)
    return out


def as_batch(sample):
    """Wrap a single sample (unbatched fields) into a batch of one."""
    return {k: np.asarray(v)[None, ...] for k, v in sample.items()}
