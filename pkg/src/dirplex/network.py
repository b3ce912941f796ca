"""Multiplex network containers and the raw-to-compositional transform.

A raw multiplex holds nonnegative edge weights per layer. The model
works on the compositional form, where every node's outgoing weights in
a layer are shares summing to one (or all zero for a node that sends
nothing in that layer). Zeros can either mark absent edges or be
replaced by a small pseudo-weight before normalisation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ZeroMode:
    """How to treat zero raw weights.

    ``absent`` (the default) reads a zero as a missing edge. ``replace``
    substitutes ``eps`` for every off-diagonal zero first, producing a
    fully connected layer, which matches the classical compositional
    zero-replacement treatment.
    """

    kind: str = "absent"
    eps: float = 0.001

    def __post_init__(self):
        if self.kind not in ("absent", "replace"):
            raise ValueError(f"unknown zero mode {self.kind!r}")
        if self.kind == "replace" and not self.eps > 0:
            raise ValueError("replacement value must be > 0")

    @classmethod
    def absent(cls) -> "ZeroMode":
        return cls("absent")

    @classmethod
    def replace(cls, eps: float = 0.001) -> "ZeroMode":
        return cls("replace", eps)

    @classmethod
    def parse(cls, text: str) -> "ZeroMode":
        """Parse ``absent`` or ``replace[=eps]``."""
        if text == "absent":
            return cls.absent()
        if text == "replace":
            return cls.replace()
        if text.startswith("replace="):
            return cls.replace(float(text.split("=", 1)[1]))
        raise ValueError(f"unknown zero mode {text!r}")


@dataclass
class RawMultiplex:
    """Weighted directed multiplex: S layers of n x n nonnegative weights."""

    node_ids: list[str]
    layer_names: list[str]
    Y: np.ndarray  # (S, n, n), zero diagonal

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim != 3:
            raise ValueError("Y must have shape (S, n, n)")

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def S(self) -> int:
        return len(self.layer_names)


@dataclass
class CompositionalMultiplex:
    """Edge indicators E and compositional weights X per layer.

    Invariants: zero diagonals, x > 0 exactly on present edges, and each
    out-row of X sums to one (or to zero for a node with no outgoing
    edges in that layer). ``d`` holds per-layer out-degrees.
    """

    node_ids: list[str]
    layer_names: list[str]
    E: np.ndarray  # (S, n, n) of {0.0, 1.0}
    X: np.ndarray  # (S, n, n)
    d: np.ndarray = field(init=False)  # (S, n) out-degrees

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.d = self.E.sum(axis=2).astype(int)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def S(self) -> int:
        return len(self.layer_names)

    def violations(self) -> list[str]:
        """Check the container invariants; empty list when all hold."""
        out: list[str] = []
        n, S = self.n, self.S
        if self.E.shape != (S, n, n) or self.X.shape != (S, n, n):
            return [f"shape mismatch: E {self.E.shape}, X {self.X.shape}, expected {(S, n, n)}"]
        for s, name in enumerate(self.layer_names):
            if np.any(np.diagonal(self.E[s]) != 0) or np.any(np.diagonal(self.X[s]) != 0):
                out.append(f"layer {name!r}: nonzero diagonal")
            if np.any((self.X[s] > 0) != (self.E[s] == 1)):
                out.append(f"layer {name!r}: x > 0 does not match e = 1")
            rows = self.X[s].sum(axis=1)
            sender = self.d[s] >= 1
            if np.any(np.abs(rows[sender] - 1.0) > ROW_SUM_TOL):
                bad = int(np.argmax(np.abs(rows - 1.0) * sender))
                out.append(
                    f"layer {name!r}: row {self.node_ids[bad]!r} sums to {rows[bad]!r}"
                )
            if np.any(rows[~sender] != 0):
                bad = int(np.argmax((rows != 0) & ~sender))
                out.append(f"layer {name!r}: isolated sender {self.node_ids[bad]!r} has weight")
        return out


def validate(raw: RawMultiplex) -> list[str]:
    """Diagnostic check of raw-multiplex invariants.

    Returns one message per violation, naming the layer, the offending
    cell, and the rule; an empty list means the input is valid.
    """
    out: list[str] = []
    n = raw.n
    if raw.Y.shape != (raw.S, n, n):
        return [f"Y has shape {raw.Y.shape}, expected {(raw.S, n, n)}"]
    for s, name in enumerate(raw.layer_names):
        diag = np.diagonal(raw.Y[s])
        for i in np.nonzero(diag != 0)[0]:
            out.append(f"nonzero diagonal at ({i}, {i}) layer {name!r}")
        for i, j in zip(*np.nonzero(raw.Y[s] < 0)):
            out.append(f"negative weight at ({i}, {j}) layer {name!r}")
        if not np.all(np.isfinite(raw.Y[s])):
            i, j = np.unravel_index(int(np.argmin(np.isfinite(raw.Y[s]))), (n, n))
            out.append(f"non-finite weight at ({i}, {j}) layer {name!r}")
    return out


def is_weakly_connected(E: np.ndarray) -> bool:
    """Weak connectivity of the union of all layers' edge sets."""
    union = (E.sum(axis=0) > 0).astype(int)
    n = union.shape[0]
    if n <= 1:
        return True
    ncomp, _ = connected_components(csr_matrix(union), directed=True, connection="weak")
    return ncomp == 1


def to_compositional(raw: RawMultiplex, zero_mode: ZeroMode | None = None) -> CompositionalMultiplex:
    """Turn raw weights into edge indicators plus compositional shares.

    Under ``absent`` mode an edge exists wherever the raw weight is
    positive, and each sender's row of positive weights is normalised by
    its row sum (rows with no positive weight stay zero). ``replace``
    mode first substitutes ``eps`` for every off-diagonal zero, so all
    off-diagonal edges exist and every row is normalised.

    The transform normalises from the full-precision row sum each time;
    it never accumulates shares incrementally.
    """
    zero_mode = zero_mode or ZeroMode.absent()
    bad = validate(raw)
    if bad:
        raise ValueError("invalid raw multiplex: " + "; ".join(bad))
    S, n = raw.S, raw.n
    Y = raw.Y.copy()
    if zero_mode.kind == "replace":
        off = ~np.eye(n, dtype=bool)
        for s in range(S):
            layer = Y[s]
            layer[off & (layer == 0)] = zero_mode.eps
    E = (Y > 0).astype(float)
    X = np.zeros_like(Y)
    rowsums = Y.sum(axis=2)
    senders = rowsums > 0
    for s in range(S):
        X[s][senders[s]] = Y[s][senders[s]] / rowsums[s][senders[s], None]
    net = CompositionalMultiplex(raw.node_ids, raw.layer_names, E, X)
    if not is_weakly_connected(net.E):
        warnings.warn(
            "union of layers is not weakly connected; cluster recovery may be unreliable",
            stacklevel=2,
        )
    return net
