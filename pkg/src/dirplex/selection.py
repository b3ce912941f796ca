"""ICL and BIC criteria and the cluster-count sweep.

Both criteria penalise the per-layer connectivity and concentration
matrices (K*K entries each, S layers) against the S*n*(n-1) possible
directed edges; the ICL additionally charges (K-1)/2 * log n for the
mixing proportions and is evaluated on the classification-completed
likelihood. Larger values are better for both criteria.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cem import FitConfig, FitResult, fit
from .likelihood import Partition, expected_complete_ll, hybrid_log_likelihood
from .network import CompositionalMultiplex


def _edge_penalty(K: int, S: int, n: int) -> float:
    return K * K * S * math.log(S * n * (n - 1))


def bic(fit_result: FitResult, net: CompositionalMultiplex) -> float:
    """Hybrid log-likelihood minus the parameter-count penalty."""
    ll = hybrid_log_likelihood(
        net, fit_result.params, fit_result.partition, not fit_result.binary_only
    )
    return ll - _edge_penalty(fit_result.params.K, net.S, net.n)


def icl(fit_result: FitResult, net: CompositionalMultiplex) -> float:
    """Classification-based criterion at the converged hard labels.

    Uses the complete-data hybrid log-likelihood at the hard C-step
    labels (not the soft responsibilities).
    """
    part = fit_result.partition
    hard = Partition.from_labels(part.c, part.K, Zhat=part.Z)
    ll_c = expected_complete_ll(
        net, fit_result.params, hard, not fit_result.binary_only
    )
    K, n = fit_result.params.K, net.n
    return ll_c - _edge_penalty(K, net.S, n) - 0.5 * (K - 1) * math.log(n)


@dataclass
class SelectionRow:
    K: int
    hybrid_ll: float | None = None
    complete_hybrid_ll: float | None = None
    bic: float | None = None
    icl: float | None = None
    converged: bool | None = None
    iterations: int | None = None
    seed: int | None = None
    error: str | None = None
    fit: FitResult | None = None


@dataclass
class SelectionReport:
    """Per-K criteria over a contiguous sweep plus the chosen counts."""

    rows: list[SelectionRow] = field(default_factory=list)

    @property
    def chosen_k_bic(self) -> int | None:
        ok = [r for r in self.rows if r.bic is not None]
        return max(ok, key=lambda r: r.bic).K if ok else None

    @property
    def chosen_k_icl(self) -> int | None:
        ok = [r for r in self.rows if r.icl is not None]
        return max(ok, key=lambda r: r.icl).K if ok else None


def select_k(
    net: CompositionalMultiplex,
    k_min: int,
    k_max: int,
    config: FitConfig,
    keep_fits: bool = False,
) -> SelectionReport:
    """Fit every K in [k_min, k_max] and score both criteria.

    Each K gets an independent seed derived from ``config.seed``. A fit
    failure is recorded in its row instead of aborting the sweep. The
    BIC winner is the default choice.
    """
    if not (1 <= k_min <= k_max <= net.n):
        raise ValueError(f"need 1 <= k_min <= k_max <= n, got {k_min}..{k_max} with n={net.n}")
    report = SelectionReport()
    seeds = np.random.SeedSequence(config.seed).spawn(k_max - k_min + 1)
    for K, child in zip(range(k_min, k_max + 1), seeds):
        seed_k = int(child.generate_state(1)[0])
        row = SelectionRow(K=K, seed=seed_k)
        try:
            cfg = FitConfig(
                K=K,
                restarts=config.restarts,
                tol=config.tol,
                max_iter=config.max_iter,
                seed=seed_k,
                alpha_bounds=config.alpha_bounds,
                empty_cluster_policy=config.empty_cluster_policy,
                binary_only=config.binary_only,
            )
            result = fit(net, cfg)
            part = result.partition
            hard = Partition.from_labels(part.c, part.K, Zhat=part.Z)
            row.hybrid_ll = result.hybrid_ll
            row.complete_hybrid_ll = expected_complete_ll(
                net, result.params, hard, not cfg.binary_only
            )
            row.bic = bic(result, net)
            row.icl = icl(result, net)
            row.converged = result.converged
            row.iterations = result.iterations
            if keep_fits:
                row.fit = result
        except Exception as exc:  # noqa: BLE001 - per-K failures are data, not fatal
            row.error = f"{type(exc).__name__}: {exc}"
        report.rows.append(row)
    return report
