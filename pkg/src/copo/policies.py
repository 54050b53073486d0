"""Parametric stochastic policies with hand-derived scores.

All methods broadcast over leading batch dimensions: ``feats`` has shape
``(..., feature_dim)`` and results carry the same leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DomainError, NumericInputError, RngStream, as_param

LOG_2PI = np.log(2.0 * np.pi)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _with_bias(feats: np.ndarray) -> np.ndarray:
    ones = np.ones(feats.shape[:-1] + (1,))
    return np.concatenate([feats, ones], axis=-1)


@dataclass(frozen=True)
class PolicyFamily:
    kind: str
    action_dim: int
    feature_dim: int

    discrete = False

    @property
    def param_dim(self) -> int:
        raise NotImplementedError

    # validation shared by the module-level entry points
    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise NumericInputError(f"{self.kind}: non-finite parameters")
        return as_param(theta, self.param_dim)

    def feats(self, feats) -> np.ndarray:
        if feats is None:
            feats = np.zeros(0)
        feats = np.atleast_1d(np.asarray(feats, dtype=np.float64))
        if feats.shape[-1] != self.feature_dim:
            raise DomainError(f"{self.kind}: expected {self.feature_dim} features, got shape {feats.shape}")
        return feats

    def log_prob(self, theta, feats, actions):
        raise NotImplementedError

    def sample(self, theta, feats, rng: np.random.Generator):
        raise NotImplementedError

    def score(self, theta, feats, actions):
        raise NotImplementedError

    def fisher_matvec(self, theta, feats, v):
        raise NotImplementedError

    def kl(self, theta, theta_other, feats):
        raise NotImplementedError


# ---------------------------------------------------------------- Gaussians


@dataclass(frozen=True)
class GaussianPolicy(PolicyFamily):
    """Diagonal Gaussian with mean ``W phi + b`` and state-independent log-std.

    ``feature_dim == 0`` gives the constant-mean family (params: mean, log-std).
    """

    def _split(self, theta):
        k, f = self.action_dim, self.feature_dim
        W = theta[: k * f].reshape(k, f)
        b = theta[k * f : k * f + k]
        log_std = theta[k * f + k :]
        return W, b, log_std

    @property
    def param_dim(self) -> int:
        return self.action_dim * (self.feature_dim + 1) + self.action_dim

    def mean(self, theta, feats):
        W, b, _ = self._split(theta)
        return feats @ W.T + b

    def _as_actions(self, actions, lead):
        actions = np.asarray(actions, dtype=np.float64)
        return actions.reshape(lead + (self.action_dim,))

    def log_prob(self, theta, feats, actions):
        _, _, log_std = self._split(theta)
        mu = self.mean(theta, feats)
        a = self._as_actions(actions, mu.shape[:-1])
        z = (a - mu) * np.exp(-log_std)
        return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)

    def sample(self, theta, feats, rng):
        _, _, log_std = self._split(theta)
        mu = self.mean(theta, feats)
        eps = rng.standard_normal(mu.shape)
        a = mu + np.exp(log_std) * eps
        logp = np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI, axis=-1)
        return a, logp

    def score(self, theta, feats, actions):
        _, _, log_std = self._split(theta)
        mu = self.mean(theta, feats)
        a = self._as_actions(actions, mu.shape[:-1])
        inv_std = np.exp(-log_std)
        z = (a - mu) * inv_std
        d_mu = z * inv_std  # (..., k)
        d_log_std = z * z - 1.0
        d_W = d_mu[..., :, None] * feats[..., None, :]
        lead = mu.shape[:-1]
        return np.concatenate(
            [d_W.reshape(lead + (-1,)), d_mu, d_log_std], axis=-1
        )

    def fisher_matvec(self, theta, feats, v):
        # mean block: (1/sigma^2) x x^T per action dim with x = [phi, 1]; log-std block: 2 I
        k, f = self.action_dim, self.feature_dim
        _, _, log_std = self._split(theta)
        inv_var = np.exp(-2.0 * log_std)
        v = np.asarray(v, dtype=np.float64)
        vW = v[: k * f].reshape(k, f)
        vb = v[k * f : k * f + k]
        vs = v[k * f + k :]
        u = (feats @ vW.T + vb) * inv_var  # (..., k)
        out_W = u[..., :, None] * feats[..., None, :]
        lead = u.shape[:-1]
        out_s = np.broadcast_to(2.0 * vs, lead + (k,))
        return np.concatenate([out_W.reshape(lead + (-1,)), u, out_s], axis=-1)

    def kl(self, theta, theta_other, feats):
        _, _, s0 = self._split(theta)
        _, _, s1 = self._split(theta_other)
        m0 = self.mean(theta, feats)
        m1 = self.mean(theta_other, feats)
        var0, var1 = np.exp(2 * s0), np.exp(2 * s1)
        terms = s1 - s0 + (var0 + (m0 - m1) ** 2) / (2.0 * var1) - 0.5
        return np.sum(terms, axis=-1)


# ------------------------------------------------------------- categoricals


@dataclass(frozen=True)
class SoftmaxPolicy(PolicyFamily):
    """Softmax over ``action_dim`` categories with logits ``W [phi, 1]``.

    With ``feature_dim == 0`` the parameters are the raw logits.
    """

    discrete = True

    @property
    def n_actions(self) -> int:
        return self.action_dim

    @property
    def param_dim(self) -> int:
        return self.action_dim * (self.feature_dim + 1)

    def _W(self, theta):
        return np.asarray(theta, dtype=np.float64).reshape(self.action_dim, self.feature_dim + 1)

    def logits(self, theta, feats):
        return _with_bias(feats) @ self._W(theta).T

    def log_probs(self, theta, feats):
        return _log_softmax(self.logits(theta, feats))

    def probs(self, theta, feats):
        return np.exp(self.log_probs(theta, feats))

    def _check_actions(self, actions):
        actions = np.asarray(actions)
        if actions.size and (actions.min() < 0 or actions.max() >= self.action_dim):
            raise DomainError(f"category index out of range [0, {self.action_dim})")
        return actions.astype(np.intp)

    def log_prob(self, theta, feats, actions):
        actions = self._check_actions(actions)
        lp = self.log_probs(theta, feats)
        return np.take_along_axis(lp, actions[..., None], axis=-1)[..., 0]

    def sample(self, theta, feats, rng):
        lp = self.log_probs(theta, feats)
        cdf = np.cumsum(np.exp(lp), axis=-1)
        u = rng.random(lp.shape[:-1])
        a = np.minimum((u[..., None] >= cdf).sum(axis=-1), self.action_dim - 1)
        return a, np.take_along_axis(lp, a[..., None], axis=-1)[..., 0]

    def score(self, theta, feats, actions):
        actions = self._check_actions(actions)
        x = _with_bias(feats)
        p = self.probs(theta, feats)
        g = -p
        np.put_along_axis(g, actions[..., None], np.take_along_axis(g, actions[..., None], -1) + 1.0, -1)
        out = g[..., :, None] * x[..., None, :]
        return out.reshape(out.shape[:-2] + (-1,))

    def fisher_matvec(self, theta, feats, v):
        x = _with_bias(feats)
        p = self.probs(theta, feats)
        u = x @ self._W(v).T  # (..., n)
        w = p * u - p * np.sum(p * u, axis=-1, keepdims=True)
        out = w[..., :, None] * x[..., None, :]
        return out.reshape(out.shape[:-2] + (-1,))

    def kl(self, theta, theta_other, feats):
        lp = self.log_probs(theta, feats)
        lq = self.log_probs(theta_other, feats)
        return np.sum(np.exp(lp) * (lp - lq), axis=-1)


def make_family(kind: str, action_dim: int, feature_dim: int = 0) -> PolicyFamily:
    """Construct a policy family by name.

    kinds: ``gaussian_const``, ``gaussian_linear``, ``categorical``, ``linear_softmax``.
    """
    if kind == "gaussian_const":
        return GaussianPolicy("gaussian_const", action_dim, 0)
    if kind == "gaussian_linear":
        return GaussianPolicy("gaussian_linear", action_dim, feature_dim)
    if kind == "categorical":
        return SoftmaxPolicy("categorical", action_dim, 0)
    if kind == "linear_softmax":
        return SoftmaxPolicy("linear_softmax", action_dim, feature_dim)
    raise DomainError(f"unknown policy family {kind!r}")


# ------------------------------------------------- single-state entry points


def sample_action(family: PolicyFamily, theta, features, rng):
    """Draw one action; returns ``(action, log_prob)``.

    ``rng`` is an :class:`RngStream` (replayed from its start) or a Generator.
    """
    if isinstance(rng, RngStream):
        rng = rng.generator()
    theta = family.check(theta)
    feats = family.feats(features)
    a, lp = family.sample(theta, feats, rng)
    if family.discrete:
        return int(a), float(lp)
    return np.asarray(a, dtype=np.float64), float(lp)


def log_prob(family: PolicyFamily, theta, features, action) -> float:
    theta = family.check(theta)
    return float(family.log_prob(theta, family.feats(features), action))


def score(family: PolicyFamily, theta, features, action) -> np.ndarray:
    theta = family.check(theta)
    return family.score(theta, family.feats(features), action)


def fisher_matvec(family: PolicyFamily, theta, features, v) -> np.ndarray:
    theta = family.check(theta)
    v = as_param(v, family.param_dim)
    return family.fisher_matvec(theta, family.feats(features), v)


def kl_exact(family: PolicyFamily, theta, theta_other, features) -> float:
    theta = family.check(theta)
    theta_other = family.check(theta_other)
    value = float(family.kl(theta, theta_other, family.feats(features)))
    if not np.isfinite(value):
        raise OverflowError("KL divergence overflowed")
    return value


def dense_fisher(family: PolicyFamily, theta, features) -> np.ndarray:
    """Explicit Fisher matrix at one state, assembled column by column."""
    d = family.param_dim
    return np.stack([fisher_matvec(family, theta, features, e) for e in np.eye(d)], axis=1)


def initial_params(family: PolicyFamily, rng: Optional[np.random.Generator] = None, scale: float = 1.0):
    if rng is None:
        return np.zeros(family.param_dim)
    return scale * rng.standard_normal(family.param_dim)
