"""Marginalized graph kernel between molecular graphs.

Similarity is the expected weight of simultaneous random walks on both
graphs: each walk starts on every vertex (weight ``start_weight``), stops at
a vertex with probability ``q``, or hops to a uniformly chosen neighbour.
Matched vertices and bonds are scored by Kronecker-delta micro-kernels. The
infinite walk-length sum is the fixed point of

    R(v,v') = q^2 + sum_{u in N(v)} sum_{u' in N(v')}
              p_t(u|v) p_t(u'|v') K_v(u,u') K_e(e_vu, e_v'u') R(u,u')

with p_t(u|v) = (1-q)/degree(v), and the raw kernel is
sum_{v,v'} start_weight^2 K_v(v,v') R(v,v'). The map is a contraction with
factor at most (1-q)^2, so Jacobi iteration converges for any q in (0,1).

Normalization divides by the geometric mean of the self-kernels and, when a
finite ``lambda_`` is set, damps pairs with mismatched self-kernel scale.

For alkanes (uniform single bonds) the iteration factorizes into per-graph
transition matrices, letting many pairs be solved in one stacked numpy
contraction. Mixed bond orders fall back to a dense product-space matrix.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .molspace import Atom, Bond, GraphError, MolecularGraph, to_canonical_smiles

# Pairs per stacked fixed-point solve; caps working memory at roughly
# chunk * max_atoms^2 * 8 bytes per array.
_BATCH_CHUNK = 16384

_CACHE_MAGIC = "alkspace-kernel-cache"
_CACHE_VERSION = 1


class KernelConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach tolerance within the cap."""


@dataclass(frozen=True)
class MgkHyperparameters:
    """Random-walk and micro-kernel parameters.

    ``q`` is the per-vertex stopping probability, ``start_weight`` the
    per-vertex starting weight (unnormalized; the normalization step absorbs
    the scale). The ``delta_*`` values are the off-diagonal returns of the
    Kronecker-delta comparators for element, heavy degree and bond order.
    ``lambda_`` scales the self-kernel-mismatch damping (infinite disables
    it). ``fp_tolerance`` and ``fp_max_iters`` control the fixed point.
    """

    q: float = 0.05
    start_weight: float = 1.0
    delta_element: float = 0.3
    delta_degree: float = 0.9
    delta_bond_order: float = 0.9
    lambda_: float = math.inf
    fp_tolerance: float = 1e-10
    fp_max_iters: int = 2000

    def __post_init__(self) -> None:
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0,1), got {self.q}")
        if self.start_weight <= 0.0:
            raise ValueError("start_weight must be positive")
        for name in ("delta_element", "delta_degree", "delta_bond_order"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0,1), got {v}")
        if not self.lambda_ > 0.0:
            raise ValueError("lambda_ must be positive (math.inf disables)")
        if not self.fp_tolerance > 0.0:
            raise ValueError("fp_tolerance must be positive")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be at least 1")

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> "MgkHyperparameters":
        """Build from a config mapping; the file key for lambda_ is "lambda"
        and a null value means infinity."""
        known = {f.name for f in fields(cls)}
        kwargs: dict[str, object] = {}
        for key, value in raw.items():
            name = "lambda_" if key == "lambda" else key
            if name not in known:
                raise ValueError(f"unknown kernel config key {key!r}")
            if name == "lambda_" and value is None:
                value = math.inf
            kwargs[name] = value
        return cls(**kwargs)  # type: ignore[arg-type]

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = {
            "q": self.q,
            "start_weight": self.start_weight,
            "delta_element": self.delta_element,
            "delta_degree": self.delta_degree,
            "delta_bond_order": self.delta_bond_order,
            "lambda": None if math.isinf(self.lambda_) else self.lambda_,
            "fp_tolerance": self.fp_tolerance,
            "fp_max_iters": self.fp_max_iters,
        }
        return out

    def content_hash(self) -> str:
        parts = [
            repr(float(getattr(self, n)))
            for n in (
                "q",
                "start_weight",
                "delta_element",
                "delta_degree",
                "delta_bond_order",
                "lambda_",
                "fp_tolerance",
            )
        ]
        parts.append(repr(int(self.fp_max_iters)))
        return hashlib.sha256("|".join(parts).encode()).hexdigest()


def vertex_kernel(a: Atom, b: Atom, p: MgkHyperparameters) -> float:
    """Product of per-feature deltas over (element, heavy_degree)."""
    out = 1.0
    if a.element != b.element:
        out *= p.delta_element
    if a.heavy_degree != b.heavy_degree:
        out *= p.delta_degree
    return out


def edge_kernel(e1: Bond, e2: Bond, p: MgkHyperparameters) -> float:
    """Delta comparator on bond order."""
    return 1.0 if e1.order == e2.order else p.delta_bond_order


class _GraphArrays:
    """Per-graph arrays reused across all pairs involving the graph."""

    __slots__ = ("n", "elements", "degrees", "trans", "uniform_order", "orders")

    def __init__(self, g: MolecularGraph, q: float):
        n = len(g.vertices)
        if n == 0:
            raise GraphError("kernel requires a non-empty graph")
        self.n = n
        self.elements = np.array([a.element for a in g.vertices], dtype="U4")
        self.degrees = np.array([len(nb) for nb in g.adjacency], dtype=np.int64)
        trans = np.zeros((n, n))
        for v, nbs in enumerate(g.adjacency):
            if nbs:
                w = (1.0 - q) / len(nbs)
                for u in nbs:
                    trans[v, u] = w
        self.trans = trans
        self.orders = {b.endpoints: b.order for b in g.edges}
        distinct = {b.order for b in g.edges}
        # None: no edges; -1: mixed orders (dense path); else the shared order.
        if not distinct:
            self.uniform_order = None
        elif len(distinct) == 1:
            self.uniform_order = distinct.pop()
        else:
            self.uniform_order = -1


def _vertex_matrix(
    a: _GraphArrays, b: _GraphArrays, p: MgkHyperparameters
) -> np.ndarray:
    elem = np.where(a.elements[:, None] == b.elements[None, :], 1.0, p.delta_element)
    deg = np.where(a.degrees[:, None] == b.degrees[None, :], 1.0, p.delta_degree)
    return elem * deg


def _edge_constant(a: _GraphArrays, b: _GraphArrays, p: MgkHyperparameters) -> float:
    if a.uniform_order is None or b.uniform_order is None:
        return 1.0  # no edges on one side; the walk sum has no edge factors
    return 1.0 if a.uniform_order == b.uniform_order else p.delta_bond_order


def _solve_factored_batch(
    tr1: np.ndarray,
    kv: np.ndarray,
    tr2t: np.ndarray,
    edge_c: np.ndarray,
    p: MgkHyperparameters,
) -> np.ndarray:
    """Jacobi iteration on a stack of same-shape pairs at once.

    tr1: (k,n1,n1) transition matrices; kv: (k,n1,n2) vertex kernels;
    tr2t: (k,n2,n2) transposed transitions; edge_c: (k,1,1) edge constants.
    """
    base = p.q * p.q
    R = np.zeros_like(kv)
    for _ in range(p.fp_max_iters):
        nxt = base + edge_c * (tr1 @ (kv * R) @ tr2t)
        delta = float(np.max(np.abs(nxt - R)))
        R = nxt
        if delta < p.fp_tolerance:
            return R
    raise KernelConvergenceError(
        f"no convergence in {p.fp_max_iters} iterations "
        f"(q={p.q}, tolerance={p.fp_tolerance})"
    )


def _solve_dense_pair(
    g1: MolecularGraph,
    g2: MolecularGraph,
    a: _GraphArrays,
    b: _GraphArrays,
    p: MgkHyperparameters,
) -> float:
    """Product-space iteration with per-edge-pair kernels (mixed bond orders)."""
    kv = _vertex_matrix(a, b, p)
    n1, n2 = a.n, b.n
    m = n1 * n2
    T = np.zeros((m, m))
    for v in range(n1):
        for u in g1.adjacency[v]:
            o1 = a.orders[(u, v) if u < v else (v, u)]
            w1 = a.trans[v, u]
            for vp in range(n2):
                for up in g2.adjacency[vp]:
                    o2 = b.orders[(up, vp) if up < vp else (vp, up)]
                    ke = 1.0 if o1 == o2 else p.delta_bond_order
                    T[v * n2 + vp, u * n2 + up] = w1 * b.trans[vp, up] * kv[u, up] * ke
    base = p.q * p.q
    r = np.zeros(m)
    for _ in range(p.fp_max_iters):
        nxt = base + T @ r
        delta = float(np.max(np.abs(nxt - r)))
        r = nxt
        if delta < p.fp_tolerance:
            sw = p.start_weight
            return float(sw * sw * (kv.reshape(-1) @ r))
    raise KernelConvergenceError(
        f"no convergence in {p.fp_max_iters} iterations "
        f"(q={p.q}, tolerance={p.fp_tolerance})"
    )


def _raw_pair(
    g1: MolecularGraph,
    g2: MolecularGraph,
    a: _GraphArrays,
    b: _GraphArrays,
    p: MgkHyperparameters,
) -> float:
    if a.uniform_order == -1 or b.uniform_order == -1:
        return _solve_dense_pair(g1, g2, a, b, p)
    kv = _vertex_matrix(a, b, p)
    ec = np.full((1, 1, 1), _edge_constant(a, b, p))
    R = _solve_factored_batch(
        a.trans[None, :, :], kv[None, :, :], b.trans.T[None, :, :], ec, p
    )
    sw = p.start_weight
    return float(sw * sw * np.sum(kv * R[0]))


def mgk_raw(g1: MolecularGraph, g2: MolecularGraph, p: MgkHyperparameters) -> float:
    """Un-normalized marginalized graph kernel value (non-negative)."""
    a = _GraphArrays(g1, p.q)
    b = _GraphArrays(g2, p.q)
    return _raw_pair(g1, g2, a, b, p)


def _normalize(k12: float, k11: float, k22: float, p: MgkHyperparameters) -> float:
    out = k12 / math.sqrt(k11 * k22)
    if math.isfinite(p.lambda_):
        d = (k11 - k22) / p.lambda_
        out *= math.exp(-(d * d))
    return out


def mgk_normalized(
    g1: MolecularGraph, g2: MolecularGraph, p: MgkHyperparameters
) -> float:
    """Normalized kernel in [0, 1]; exactly 1 for identical inputs."""
    a = _GraphArrays(g1, p.q)
    b = _GraphArrays(g2, p.q)
    k12 = _raw_pair(g1, g2, a, b, p)
    k11 = _raw_pair(g1, g1, a, a, p)
    if g1 is g2:
        return 1.0
    k22 = _raw_pair(g2, g2, b, b, p)
    return _normalize(k12, k11, k22, p)


@dataclass(frozen=True)
class KernelMatrix:
    """Dense block of normalized kernel values with molecule-id axes.

    Square same-key matrices are validated to be symmetric (1e-12) with a
    unit diagonal (1e-10); they can serve directly as a kernel provider for
    the regression and active-learning layers via :meth:`block` and
    :meth:`diag`.
    """

    values: np.ndarray
    keys_a: tuple[str, ...]
    keys_b: tuple[str, ...]

    def __post_init__(self) -> None:
        v = self.values
        if v.shape != (len(self.keys_a), len(self.keys_b)):
            raise ValueError(
                f"value shape {v.shape} does not match key counts "
                f"({len(self.keys_a)}, {len(self.keys_b)})"
            )
        object.__setattr__(self, "_ia", {k: i for i, k in enumerate(self.keys_a)})
        object.__setattr__(self, "_ib", {k: i for i, k in enumerate(self.keys_b)})
        if self.keys_a == self.keys_b and len(self.keys_a) > 0:
            asym = float(np.max(np.abs(v - v.T)))
            if asym > 1e-12:
                raise ValueError(f"square kernel matrix asymmetric by {asym:.3e}")
            diag_err = float(np.max(np.abs(np.diag(v) - 1.0)))
            if diag_err > 1e-10:
                raise ValueError(f"diagonal deviates from 1 by {diag_err:.3e}")

    @property
    def is_square(self) -> bool:
        return self.keys_a == self.keys_b

    def loc(self, key_a: str, key_b: str) -> float:
        return float(self.values[self._ia[key_a], self._ib[key_b]])  # type: ignore[attr-defined]

    def block(self, keys_a: Sequence[str], keys_b: Sequence[str]) -> np.ndarray:
        ia = self._ia  # type: ignore[attr-defined]
        ib = self._ib  # type: ignore[attr-defined]
        rows = np.fromiter((ia[k] for k in keys_a), dtype=np.intp, count=len(keys_a))
        cols = np.fromiter((ib[k] for k in keys_b), dtype=np.intp, count=len(keys_b))
        return self.values[np.ix_(rows, cols)]

    def diag(self, keys: Sequence[str]) -> np.ndarray:
        if not self.is_square:
            raise ValueError("diag requires a square same-key matrix")
        ia = self._ia  # type: ignore[attr-defined]
        idx = np.fromiter((ia[k] for k in keys), dtype=np.intp, count=len(keys))
        return self.values[idx, idx]


class MgkCalculator:
    """Kernel evaluator with a raw-value cache keyed by canonical pair.

    The cache stores raw (un-normalized) values under unordered canonical
    SMILES pairs, including self-kernels, so normalized entries are cheap to
    reassemble. Entries persist to a versioned CSV keyed by a hash of the
    hyperparameters; a file written under different parameters is rejected.

    Evaluations are pure; concurrent duplicate computation of the same pair
    is harmless because insertion is idempotent.
    """

    def __init__(self, params: MgkHyperparameters):
        self.params = params
        self._raw: dict[tuple[str, str], float] = {}
        self._graphs: dict[str, MolecularGraph] = {}
        self._arrays: dict[str, _GraphArrays] = {}

    # -- registry ---------------------------------------------------------

    def register(self, molecules: Sequence[MolecularGraph]) -> list[str]:
        """Record graphs under their canonical ids; returns the id list."""
        ids = []
        for g in molecules:
            key = str(to_canonical_smiles(g))
            self._graphs.setdefault(key, g)
            ids.append(key)
        return ids

    def _arrays_for(self, key: str) -> _GraphArrays:
        arr = self._arrays.get(key)
        if arr is None:
            arr = _GraphArrays(self._graphs[key], self.params.q)
            self._arrays[key] = arr
        return arr

    # -- evaluation -------------------------------------------------------

    def raw(self, key_a: str, key_b: str) -> float:
        pair = (key_a, key_b) if key_a <= key_b else (key_b, key_a)
        value = self._raw.get(pair)
        if value is None:
            self._compute_pairs([pair])
            value = self._raw[pair]
        return value

    def normalized(self, key_a: str, key_b: str) -> float:
        if key_a == key_b:
            return 1.0
        k12 = self.raw(key_a, key_b)
        k11 = self.raw(key_a, key_a)
        k22 = self.raw(key_b, key_b)
        return _normalize(k12, k11, k22, self.params)

    def block(self, keys_a: Sequence[str], keys_b: Sequence[str]) -> np.ndarray:
        """Normalized kernel block; computes missing raw values in batch."""
        needed: set[tuple[str, str]] = set()
        for k in set(keys_a) | set(keys_b):
            needed.add((k, k))
        for ka in set(keys_a):
            for kb in set(keys_b):
                needed.add((ka, kb) if ka <= kb else (kb, ka))
        # Sorted work order keeps batch chunking (and thus the exact float
        # results of the iterated solves) independent of set iteration order.
        missing = sorted(pair for pair in needed if pair not in self._raw)
        if missing:
            self._compute_pairs(missing)
        self_k = {k: self._raw[(k, k)] for k in set(keys_a) | set(keys_b)}
        out = np.empty((len(keys_a), len(keys_b)))
        for i, ka in enumerate(keys_a):
            for j, kb in enumerate(keys_b):
                if ka == kb:
                    out[i, j] = 1.0
                else:
                    pair = (ka, kb) if ka <= kb else (kb, ka)
                    out[i, j] = _normalize(
                        self._raw[pair], self_k[ka], self_k[kb], self.params
                    )
        return out

    def diag(self, keys: Sequence[str]) -> np.ndarray:
        return np.ones(len(keys))

    def matrix(
        self,
        molecules_a: Sequence[MolecularGraph],
        molecules_b: Sequence[MolecularGraph] | None = None,
    ) -> KernelMatrix:
        """Normalized kernel matrix between two molecule lists.

        With one list (or identical lists) the result is symmetrized as
        (M + M^T)/2; entries come from the unordered-pair cache so the
        correction is at rounding level.
        """
        keys_a = self.register(molecules_a)
        same = molecules_b is None
        keys_b = keys_a if same else self.register(molecules_b)
        values = self.block(keys_a, keys_b)
        if same or keys_a == keys_b:
            values = (values + values.T) / 2.0
        return KernelMatrix(values, tuple(keys_a), tuple(keys_b))

    def _compute_pairs(self, pairs: Sequence[tuple[str, str]]) -> None:
        """Batch fixed-point solves grouped by (n_a, n_b) shape."""
        groups: dict[tuple[int, int], list[tuple[str, str]]] = {}
        for ka, kb in pairs:
            a = self._arrays_for(ka)
            b = self._arrays_for(kb)
            if a.uniform_order == -1 or b.uniform_order == -1:
                value = _solve_dense_pair(
                    self._graphs[ka], self._graphs[kb], a, b, self.params
                )
                self._raw[(ka, kb)] = value
                continue
            groups.setdefault((a.n, b.n), []).append((ka, kb))
        sw2 = self.params.start_weight**2
        for (na, nb), members in groups.items():
            for lo in range(0, len(members), _BATCH_CHUNK):
                chunk = members[lo : lo + _BATCH_CHUNK]
                k = len(chunk)
                tr1 = np.empty((k, na, na))
                tr2t = np.empty((k, nb, nb))
                kv = np.empty((k, na, nb))
                ec = np.empty((k, 1, 1))
                for idx, (ka, kb) in enumerate(chunk):
                    a = self._arrays_for(ka)
                    b = self._arrays_for(kb)
                    tr1[idx] = a.trans
                    tr2t[idx] = b.trans.T
                    kv[idx] = _vertex_matrix(a, b, self.params)
                    ec[idx, 0, 0] = _edge_constant(a, b, self.params)
                R = _solve_factored_batch(tr1, kv, tr2t, ec, self.params)
                raw = sw2 * np.sum(kv * R, axis=(1, 2))
                for idx, pair in enumerate(chunk):
                    self._raw[pair] = float(raw[idx])

    # -- persistence ------------------------------------------------------

    def save_cache(self, path: str) -> int:
        """Write cached raw values as CSV; returns the row count."""
        rows = sorted(self._raw.items())
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([_CACHE_MAGIC, str(_CACHE_VERSION), self.params.content_hash()])
            writer.writerow(["key_a", "key_b", "value"])
            for (ka, kb), value in rows:
                writer.writerow([ka, kb, repr(value)])
        return len(rows)

    def load_cache(self, path: str, *, require_match: bool = True) -> int:
        """Load a cache file; returns rows loaded.

        A file written under different hyperparameters (or an unknown
        version) raises ValueError when ``require_match`` is set, and is
        silently skipped (returns 0) otherwise.
        """
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if (
                header is None
                or len(header) != 3
                or header[0] != _CACHE_MAGIC
                or header[1] != str(_CACHE_VERSION)
                or header[2] != self.params.content_hash()
            ):
                if require_match:
                    raise ValueError(
                        f"kernel cache {path!r} does not match current "
                        "hyperparameters/version"
                    )
                return 0
            next(reader, None)  # column header
            count = 0
            for ka, kb, value in reader:
                self._raw[(ka, kb)] = float(value)
                count += 1
        return count


def kernel_matrix(
    molecules_a: Sequence[MolecularGraph],
    molecules_b: Sequence[MolecularGraph] | None,
    p: MgkHyperparameters,
) -> KernelMatrix:
    """One-shot normalized kernel matrix (throwaway cache)."""
    return MgkCalculator(p).matrix(molecules_a, molecules_b)
