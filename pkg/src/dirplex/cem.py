"""Classification EM for the compositional multiplex blockmodel.

One iteration runs an E-step (soft responsibilities), a greedy C-step
(sequential per-node reassignment maximising the full hybrid
log-likelihood, with label changes propagated immediately), and an
M-step (closed-form mixing proportions and connectivity, numerical
box-constrained maximisation for the concentration matrices). The run
stops when the relative change of the hybrid log-likelihood falls below
the tolerance.

The C-step scores every candidate label of a node against the complete
hybrid log-likelihood; moving node i only perturbs other senders'
terms through their edge (or non-edge) toward i, so the per-layer score
arrays are updated incrementally. The result is numerically identical
(to ~1e-9) to recomputing the likelihood from scratch per candidate.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, psi

from .likelihood import (
    ModelParams,
    NetArrays,
    Partition,
    P_CLAMP,
    _log_theta,
    _lse,
    component_scores,
    hybrid_log_likelihood,
    one_hot,
)
from .network import CompositionalMultiplex

DEFAULT_ALPHA_BOUNDS = (1e-6, 1e4)


class EstimationError(RuntimeError):
    """Raised when a numerical step cannot produce a usable estimate."""


@dataclass
class FitConfig:
    """Settings for one model fit."""

    K: int
    restarts: int = 5
    tol: float = 1e-4
    max_iter: int = 200
    seed: int = 0
    alpha_bounds: tuple[float, float] = DEFAULT_ALPHA_BOUNDS
    empty_cluster_policy: str = "forbid"
    binary_only: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        lo, hi = self.alpha_bounds
        if not (0 < lo < hi):
            raise ValueError("alpha bounds must satisfy 0 < lo < hi")
        if self.empty_cluster_policy not in ("forbid", "reseed"):
            raise ValueError(f"unknown empty-cluster policy {self.empty_cluster_policy!r}")


@dataclass
class FitResult:
    """Converged parameters, partition and fit diagnostics."""

    params: ModelParams
    partition: Partition
    ll_trace: list[float]
    converged: bool
    iterations: int
    best_restart_index: int
    seed: int
    elapsed_seconds: float
    binary_only: bool = False

    @property
    def hybrid_ll(self) -> float:
        return self.ll_trace[-1]


def e_step(
    net: CompositionalMultiplex | NetArrays,
    params: ModelParams,
    part: Partition,
    use_dirichlet: bool = True,
) -> np.ndarray:
    """Posterior cluster responsibilities given the fixed labels in ``part``.

    Rows are normalised with log-sum-exp and sum to one. A row whose
    every component underflows to -inf signals corrupt parameters.
    """
    na = net if isinstance(net, NetArrays) else NetArrays(net)
    scores = component_scores(na, params, part.c, use_dirichlet)
    logw = _log_theta(params.theta)[None, :] + scores.sum(axis=0)
    rowmax = logw.max(axis=1)
    if np.any(~np.isfinite(rowmax)):
        raise EstimationError("E-step produced a row with no admissible cluster")
    Zhat = np.exp(logw - rowmax[:, None])
    Zhat /= Zhat.sum(axis=1, keepdims=True)
    return Zhat


def m_step_theta(Zhat: np.ndarray) -> np.ndarray:
    """Closed-form mixing proportion update: column means of ``Zhat``."""
    return Zhat.sum(axis=0) / Zhat.shape[0]


def m_step_p(
    net: CompositionalMultiplex | NetArrays,
    Zhat: np.ndarray,
    labels: np.ndarray,
) -> np.ndarray:
    """Closed-form connectivity update, per layer and entry.

    Responsibility-weighted edge counts between cluster pairs divided by
    the weighted count of possible pairs; self-pairs are excluded from
    both sums since self-loops cannot occur. An empty block yields 0
    with a warning.
    """
    na = net if isinstance(net, NetArrays) else NetArrays(net)
    K = Zhat.shape[1]
    Z = one_hot(labels, K)
    den = np.outer(Zhat.sum(axis=0), Z.sum(axis=0)) - Zhat.T @ Z
    num = np.einsum("ik,sij,jh->skh", Zhat, na.E, Z)
    P = np.zeros_like(num)
    if np.any(den <= 0):
        warnings.warn("empty cluster block in connectivity update; setting p to 0", stacklevel=2)
    np.divide(num, den[None, :, :], out=P, where=den[None, :, :] > 0)
    return P


def estimate_A(
    net: CompositionalMultiplex | NetArrays,
    Zhat: np.ndarray,
    labels: np.ndarray,
    layer: int,
    bounds: tuple[float, float] = DEFAULT_ALPHA_BOUNDS,
    warm: np.ndarray | None = None,
) -> np.ndarray:
    """Box-constrained maximiser of the layer's concentration objective.

    Runs L-BFGS-B with the analytic gradient, warm-started from the
    current estimate (all ones on the first call). Senders with no
    outgoing edges in the layer drop out of both the objective and the
    gradient.
    """
    na = net if isinstance(net, NetArrays) else NetArrays(net)
    K = Zhat.shape[1]
    Z = one_hot(labels, K)
    m = na.E[layer] @ Z
    lx = na.logX[layer] @ Z
    sender = (na.d[layer] > 0)[:, None]

    def neg_objective(a_flat: np.ndarray):
        A_s = a_flat.reshape(K, K)
        asum = np.where(sender, m @ A_s.T, 1.0)
        val = (Zhat * (gammaln(asum) - m @ gammaln(A_s).T + lx @ (A_s - 1.0).T)).sum()
        grad = (Zhat * psi(asum)).T @ m - (Zhat.T @ m) * psi(A_s) + Zhat.T @ lx
        return -val, -grad.ravel()

    x0 = np.ones((K, K)) if warm is None else np.asarray(warm, dtype=float)
    box = [(bounds[0], bounds[1])] * (K * K)
    for attempt, start in enumerate((x0, np.ones((K, K)))):
        res = minimize(
            neg_objective,
            np.clip(start.ravel(), bounds[0], bounds[1]),
            jac=True,
            method="L-BFGS-B",
            bounds=box,
            options={"maxiter": 500},
        )
        if res.success and np.all(np.isfinite(res.x)):
            return res.x.reshape(K, K)
        if attempt == 0 and np.array_equal(start, np.ones((K, K))):
            break
    raise EstimationError(
        f"concentration estimation failed in layer {layer}: {res.message}"
    )


def c_step(
    net: CompositionalMultiplex | NetArrays,
    params: ModelParams,
    part: Partition,
    policy: str = "forbid",
    use_dirichlet: bool = True,
) -> Partition:
    """Greedy sequential reassignment maximising the hybrid log-likelihood.

    Nodes are visited in index order; each candidate label is scored by
    the full likelihood sum (the candidate label of node i enters every
    other sender's Bernoulli and Dirichlet terms), the argmax label is
    installed immediately, and ties keep the incumbent label. Under the
    ``forbid`` policy a node that is its cluster's last member stays put.
    """
    na = net if isinstance(net, NetArrays) else NetArrays(net)
    K, S, n = params.K, na.S, na.n
    c = part.c.copy()
    Z = one_hot(c, K)
    cnt_e, cnt_t, xl = na.counts(Z)

    logP = np.log(np.clip(params.P, P_CLAMP, 1.0 - P_CLAMP))
    log1mP = np.log(np.clip(1.0 - params.P, P_CLAMP, 1.0 - P_CLAMP))
    A, lgA = params.A, gammaln(params.A)
    log_theta = _log_theta(params.theta)
    sender = na.d > 0  # (S, n)

    # Per-layer score state for the current labels, updated in place as
    # moves are installed.
    BERN = np.einsum("snh,skh->snk", cnt_e, logP) + np.einsum(
        "snh,skh->snk", cnt_t[None, :, :] - cnt_e, log1mP
    )
    if use_dirichlet:
        ASUM = np.einsum("snh,skh->snk", cnt_e, A)
        LGSUM = np.einsum("snh,skh->snk", cnt_e, lgA)
        XSUM = np.einsum("snh,skh->snk", xl, A - 1.0)
        DIRI = np.where(
            sender[:, :, None],
            gammaln(np.where(sender[:, :, None], ASUM, 1.0)) - LGSUM + XSUM,
            0.0,
        )
    else:
        DIRI = np.zeros_like(BERN)
    sizes = np.bincount(c, minlength=K)

    for i in range(n):
        a = c[i]
        if K == 1 or (policy == "forbid" and sizes[a] == 1):
            continue
        w_e = na.E[:, :, i]  # (S, n); diagonal entry is 0
        w_ne = 1.0 - w_e
        w_ne[:, i] = 0.0
        lx_col = na.logX[:, :, i]
        dP = logP.transpose(0, 2, 1) - logP[:, :, a][:, None, :]  # (S, Kc, K)
        dQ = log1mP.transpose(0, 2, 1) - log1mP[:, :, a][:, None, :]

        logits = (log_theta[None, None, :] + BERN + DIRI)[:, None, :, :] + (
            w_e[:, None, :, None] * dP[:, :, None, :]
            + w_ne[:, None, :, None] * dQ[:, :, None, :]
        )  # (S, Kc, n, K)

        idx = np.nonzero(w_e.sum(axis=0) > 0)[0]
        if use_dirichlet and idx.size:
            dA = A.transpose(0, 2, 1) - A[:, :, a][:, None, :]
            dLG = lgA.transpose(0, 2, 1) - lgA[:, :, a][:, None, :]
            we_i = w_e[:, idx]
            send_i = sender[:, idx][:, None, :, None]
            asum_new = ASUM[:, None, idx, :] + we_i[:, None, :, None] * dA[:, :, None, :]
            diri_new = np.where(
                send_i,
                gammaln(np.where(send_i, asum_new, 1.0))
                - (LGSUM[:, None, idx, :] + we_i[:, None, :, None] * dLG[:, :, None, :])
                + (XSUM[:, None, idx, :] + lx_col[:, idx][:, None, :, None] * dA[:, :, None, :]),
                0.0,
            )
            logits[:, :, idx, :] += diri_new - DIRI[:, None, idx, :]

        scores = _lse(logits, axis=3).sum(axis=(0, 2))  # (Kc,)
        best = int(np.argmax(scores))
        if best == a or scores[best] <= scores[a]:
            continue

        BERN += w_e[:, :, None] * dP[:, best, None, :] + w_ne[:, :, None] * dQ[:, best, None, :]
        if use_dirichlet and idx.size:
            ASUM[:, idx, :] += we_i[:, :, None] * dA[:, best, None, :]
            LGSUM[:, idx, :] += we_i[:, :, None] * dLG[:, best, None, :]
            XSUM[:, idx, :] += lx_col[:, idx][:, :, None] * dA[:, best, None, :]
            DIRI[:, idx, :] = diri_new[:, best]
        sizes[a] -= 1
        sizes[best] += 1
        c[i] = best

    return Partition.from_labels(c, K, Zhat=part.Zhat)


def _random_partition(rng: np.random.Generator, n: int, K: int) -> np.ndarray:
    """Uniform random labels, rejected until every cluster is non-empty."""
    for _ in range(1000):
        c = rng.integers(0, K, size=n)
        if np.unique(c).size == K:
            return c
    c = rng.integers(0, K, size=n)
    c[rng.permutation(n)[:K]] = np.arange(K)
    return c


def _reseed_empty(c: np.ndarray, K: int, Zhat: np.ndarray) -> np.ndarray:
    """Move the lowest-confidence node into each empty cluster."""
    c = c.copy()
    sizes = np.bincount(c, minlength=K)
    for k in np.nonzero(sizes == 0)[0]:
        movable = np.nonzero(sizes[c] > 1)[0]
        i = movable[np.argmin(Zhat[movable, c[movable]])]
        sizes[c[i]] -= 1
        c[i] = k
        sizes[k] += 1
    return c


def _cem_run(na: NetArrays, config: FitConfig, init_labels: np.ndarray):
    """One CEM run from a fixed initial partition."""
    use_diri = not config.binary_only
    K = config.K
    c = np.asarray(init_labels, dtype=int)
    Zhat = one_hot(c, K)
    theta = m_step_theta(Zhat)
    P = m_step_p(na, Zhat, c)
    A = np.ones_like(P)
    if use_diri:
        A = np.stack(
            [estimate_A(na, Zhat, c, s, config.alpha_bounds, warm=None) for s in range(na.S)]
        )
    params = ModelParams(theta, P, A)
    part = Partition.from_labels(c, K)
    prev_ll = hybrid_log_likelihood(na, params, part, use_diri)
    trace = [prev_ll]
    converged = False
    iterations = 0
    for _ in range(config.max_iter):
        iterations += 1
        Zhat = e_step(na, params, part, use_diri)
        part = c_step(na, params, part, config.empty_cluster_policy, use_diri)
        if config.empty_cluster_policy == "reseed":
            if np.unique(part.c).size < K:
                part = Partition.from_labels(_reseed_empty(part.c, K, Zhat), K)
        theta = m_step_theta(Zhat)
        P = m_step_p(na, Zhat, part.c)
        if use_diri:
            A = np.stack(
                [
                    estimate_A(na, Zhat, part.c, s, config.alpha_bounds, warm=params.A[s])
                    for s in range(na.S)
                ]
            )
        params = ModelParams(theta, P, A)
        ll = hybrid_log_likelihood(na, params, part, use_diri)
        trace.append(ll)
        delta = abs(ll - prev_ll)
        rel = delta / abs(ll) if ll != 0 else delta
        if rel < config.tol:
            converged = True
            break
        prev_ll = ll
    part = Partition.from_labels(part.c, K, Zhat=e_step(na, params, part, use_diri))
    return params, part, trace, converged, iterations


def fit(net: CompositionalMultiplex, config: FitConfig) -> FitResult:
    """Fit the blockmodel with several independent restarts.

    Each restart starts from a uniform random partition (every cluster
    seeded with at least one node) drawn from a seed derived from
    ``config.seed``; the run with the highest final hybrid
    log-likelihood wins. The seed fully determines the result.
    """
    if net.n == 0:
        raise ValueError("cannot fit an empty network")
    if config.K > net.n:
        raise ValueError(f"K={config.K} exceeds the number of nodes n={net.n}")
    na = NetArrays(net)
    start = time.perf_counter()
    best = None
    best_index = -1
    for r, child in enumerate(np.random.SeedSequence(config.seed).spawn(config.restarts)):
        rng = np.random.default_rng(child)
        init = _random_partition(rng, net.n, config.K)
        run = _cem_run(na, config, init)
        if best is None or run[2][-1] > best[2][-1]:
            best, best_index = run, r
    params, part, trace, converged, iterations = best
    return FitResult(
        params=params,
        partition=part,
        ll_trace=trace,
        converged=converged,
        iterations=iterations,
        best_restart_index=best_index,
        seed=config.seed,
        elapsed_seconds=time.perf_counter() - start,
        binary_only=config.binary_only,
    )
