"""Hybrid log-likelihood of the compositional multiplex blockmodel.

The model couples, per layer, a Bernoulli term for edge presence with a
Dirichlet term for the sender's compositional weights, conditioning each
node's cluster label on the fixed labels of all other nodes. A node that
sends nothing in a layer contributes only its Bernoulli terms there: the
Dirichlet factor is switched off (log contribution zero).

All per-node, per-cluster scores are assembled once by
:func:`component_scores`; the observed likelihood, the expected
complete-data likelihood and the E-step all reduce the same array, so
they cannot drift apart numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, psi

from .network import CompositionalMultiplex
from .special import safe_log

P_CLAMP = 1e-12  # connectivity probabilities are clamped inside logs only
THETA_TOL = 1e-12


@dataclass
class ModelParams:
    """Mixing proportions, connectivity matrices and concentration matrices.

    ``theta`` has length K; ``P`` and ``A`` have shape (S, K, K). Entries
    of ``A`` must be strictly positive; ``P`` entries live in [0, 1] and
    exact 0/1 values are allowed (they are clamped inside log terms only,
    never in the stored estimates).
    """

    theta: np.ndarray
    P: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        K = self.theta.shape[0]
        if self.P.ndim != 3 or self.P.shape[1:] != (K, K):
            raise ValueError(f"P must have shape (S, {K}, {K}), got {self.P.shape}")
        if self.A.shape != self.P.shape:
            raise ValueError(f"A shape {self.A.shape} differs from P shape {self.P.shape}")
        if abs(self.theta.sum() - 1.0) > THETA_TOL or np.any(self.theta < 0):
            raise ValueError("theta must be a probability vector")
        if np.any((self.P < 0) | (self.P > 1)):
            raise ValueError("P entries must lie in [0, 1]")
        if np.any(self.A <= 0):
            raise ValueError("A entries must be strictly positive")

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def S(self) -> int:
        return self.P.shape[0]


def one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in 0..{K - 1}")
    Z = np.zeros((labels.shape[0], K))
    Z[np.arange(labels.shape[0]), labels] = 1.0
    return Z


@dataclass
class Partition:
    """Hard labels plus optional soft responsibilities.

    ``c`` holds 0-based cluster labels, ``Z`` the matching one-hot matrix
    and ``Zhat`` row-stochastic responsibilities once an E-step has run.
    """

    c: np.ndarray
    Z: np.ndarray = field(default=None)  # type: ignore[assignment]
    Zhat: np.ndarray | None = None
    K: int = 0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=int)
        if self.K == 0:
            self.K = int(self.c.max()) + 1 if self.c.size else 0
        if self.Z is None:
            self.Z = one_hot(self.c, self.K)
        else:
            self.Z = np.asarray(self.Z, dtype=float)
            if not np.array_equal(self.Z.argmax(axis=1), self.c):
                raise ValueError("Z is not consistent with labels c")
        if self.Zhat is not None:
            self.Zhat = np.asarray(self.Zhat, dtype=float)
            if np.any(np.abs(self.Zhat.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError("Zhat rows must sum to 1")

    @classmethod
    def from_labels(cls, labels, K: int, Zhat=None) -> "Partition":
        return cls(c=np.asarray(labels, dtype=int), K=K, Zhat=Zhat)


class NetArrays:
    """Arrays precomputed once per network for repeated evaluation."""

    def __init__(self, net: CompositionalMultiplex):
        self.n = net.n
        self.S = net.S
        self.E = net.E
        self.d = net.d
        # log x only where an edge exists; exact zeros elsewhere keep the
        # masked matrix products below honest.
        self.logX = np.where(net.E > 0, safe_log(np.where(net.X > 0, net.X, 1.0)), 0.0)

    def counts(self, Z: np.ndarray):
        """Per-sender edge counts and log-share sums into each cluster."""
        cnt_e = np.einsum("sij,jh->sih", self.E, Z)
        cnt_t = Z.sum(axis=0)[None, :] - Z  # receiver counts excluding self
        xl = np.einsum("sij,jh->sih", self.logX, Z)
        return cnt_e, cnt_t, xl


def component_scores(
    na: NetArrays,
    params: ModelParams,
    labels: np.ndarray,
    use_dirichlet: bool = True,
) -> np.ndarray:
    """Log p(e_i, x_i | own cluster k, everyone else fixed), per layer.

    Returns an (S, n, K) array: entry [s, i, k] is the log of the
    Bernoulli terms of sender i in layer s times its Dirichlet density,
    with the sender's own label set to k and all other labels fixed.
    The Dirichlet factor for a sender with no outgoing edges is 1.
    """
    Z = one_hot(labels, params.K)
    cnt_e, cnt_t, xl = na.counts(Z)
    logP = np.log(np.clip(params.P, P_CLAMP, 1.0 - P_CLAMP))
    log1mP = np.log(np.clip(1.0 - params.P, P_CLAMP, 1.0 - P_CLAMP))
    scores = np.empty((na.S, na.n, params.K))
    for s in range(na.S):
        scores[s] = cnt_e[s] @ logP[s].T + (cnt_t - cnt_e[s]) @ log1mP[s].T
        if use_dirichlet:
            asum = cnt_e[s] @ params.A[s].T
            sender = (na.d[s] > 0)[:, None]
            diri = (
                gammaln(np.where(sender, asum, 1.0))
                - cnt_e[s] @ gammaln(params.A[s]).T
                + xl[s] @ (params.A[s] - 1.0).T
            )
            scores[s] += np.where(sender, diri, 0.0)
    return scores


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    """Log-sum-exp along ``axis``; rows of all -inf stay -inf."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.exp(a - m).sum(axis=axis))


def _log_theta(theta: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(theta)


def hybrid_log_likelihood(
    net: CompositionalMultiplex | NetArrays,
    params: ModelParams,
    part: Partition,
    use_dirichlet: bool = True,
) -> float:
    """Observed hybrid log-likelihood at the partition's hard labels.

    Each (layer, sender) pair contributes the log of a mixture over the
    sender's own cluster, with all other labels fixed; the mixture is
    reduced with log-sum-exp.
    """
    na = net if isinstance(net, NetArrays) else NetArrays(net)
    _check_dims(na, params, part)
    scores = component_scores(na, params, part.c, use_dirichlet)
    return float(_lse(_log_theta(params.theta)[None, None, :] + scores, axis=2).sum())


def expected_complete_ll(
    net: CompositionalMultiplex | NetArrays,
    params: ModelParams,
    part: Partition,
    use_dirichlet: bool = True,
) -> float:
    """Expected complete-data hybrid log-likelihood under ``part.Zhat``.

    With a one-hot ``Zhat`` this is the complete-data value at those hard
    labels. The fixed-label conditioning comes from ``part.c``.
    """
    if part.Zhat is None:
        raise ValueError("expected_complete_ll requires responsibilities Zhat")
    na = net if isinstance(net, NetArrays) else NetArrays(net)
    _check_dims(na, params, part)
    scores = component_scores(na, params, part.c, use_dirichlet)
    per_node = _log_theta(params.theta)[None, None, :] + scores
    w = np.broadcast_to(part.Zhat[None, :, :], per_node.shape)
    return float(np.where(w > 0, w * per_node, 0.0).sum())


def grad_A_expected_complete_ll(
    net: CompositionalMultiplex | NetArrays,
    params: ModelParams,
    part: Partition,
    layer: int,
) -> np.ndarray:
    """Gradient of the expected complete-data objective in one layer's A.

    Entry (k, h) sums, over senders i weighted by their responsibility
    for cluster k: the digamma of the sender's concentration total times
    the count of its out-edges into cluster h, minus that count times
    digamma(a_kh), plus the sum of log shares sent into cluster h.
    Senders with no outgoing edges in the layer contribute nothing.
    """
    if part.Zhat is None:
        raise ValueError("gradient requires responsibilities Zhat")
    na = net if isinstance(net, NetArrays) else NetArrays(net)
    _check_dims(na, params, part)
    Z = one_hot(part.c, params.K)
    cnt_e, _, xl = na.counts(Z)
    A_s = params.A[layer]
    asum = cnt_e[layer] @ A_s.T
    asum = np.where((na.d[layer] > 0)[:, None], asum, 1.0)
    Zhat = part.Zhat
    return (
        (Zhat * psi(asum)).T @ cnt_e[layer]
        - (Zhat.T @ cnt_e[layer]) * psi(A_s)
        + Zhat.T @ xl[layer]
    )


def _check_dims(na: NetArrays, params: ModelParams, part: Partition) -> None:
    if params.S != na.S:
        raise ValueError(f"params have {params.S} layers, network has {na.S}")
    if part.c.shape[0] != na.n:
        raise ValueError(f"partition covers {part.c.shape[0]} nodes, network has {na.n}")
    if part.K != params.K:
        raise ValueError(f"partition has K={part.K}, params have K={params.K}")
    if part.c.size and part.c.max() >= params.K:
        raise ValueError("labels exceed cluster count")
