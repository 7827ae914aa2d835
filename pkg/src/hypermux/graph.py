"""Multiplex graph representation, adjacency normalization, and disk I/O.

Directory format:
    meta.json      {"n_nodes": N, "n_dims": D, "n_features": F}
    dims/<k>.edges one line per undirected edge, two 0-based node ids
    features.csv   N rows of F comma-separated reals (optional; synthesized
                   from per-dimension degrees when absent)
    labels.csv     optional, one line per node with comma-separated class ids
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps


class GraphFormatError(ValueError):
    """Malformed on-disk graph or invalid in-memory structure."""


@dataclass
class MultiplexGraph:
    """N nodes shared by D adjacency structures plus one feature matrix."""

    n_nodes: int
    dims: list  # list of {0,1} symmetric csr matrices, all N x N
    features: np.ndarray  # N x F
    labels: list | None = None  # per node: list of int class ids

    @property
    def n_dims(self):
        return len(self.dims)

    @property
    def n_features(self):
        return self.features.shape[1]

    def validate(self):
        if self.n_dims < 1:
            raise GraphFormatError("graph needs at least one dimension")
        if self.features.shape[0] != self.n_nodes or self.n_features < 1:
            raise GraphFormatError(
                f"features shape {self.features.shape} inconsistent with N={self.n_nodes}")
        for d, a in enumerate(self.dims):
            if a.shape != (self.n_nodes, self.n_nodes):
                raise GraphFormatError(f"dimension {d} has shape {a.shape}")
            if (abs(a - a.T)).nnz != 0:
                raise GraphFormatError(f"dimension {d} is not symmetric")
        if self.labels is not None and len(self.labels) != self.n_nodes:
            raise GraphFormatError("labels length != n_nodes")
        return self


def graphs_equal(a: MultiplexGraph, b: MultiplexGraph) -> bool:
    if a.n_nodes != b.n_nodes or a.n_dims != b.n_dims:
        return False
    if not np.array_equal(a.features, b.features):
        return False
    if (a.labels is None) != (b.labels is None):
        return False
    if a.labels is not None and list(map(list, a.labels)) != list(map(list, b.labels)):
        return False
    return all((x != y).nnz == 0 for x, y in zip(a.dims, b.dims))


def normalize_adjacency(a):
    """Symmetric degree normalization D^-1/2 (A + I) D^-1/2 as CSR.

    Accepts {0,1} inputs and nonnegative real-valued ones (aggregated
    matrices use weighted degrees). (A + I) keeps every degree >= 1, so
    isolated nodes need no special casing.
    """
    if not sps.issparse(a):
        a = sps.csr_matrix(np.asarray(a, dtype=np.float64))
    a = a.tocsr().astype(np.float64)
    n, m = a.shape
    if n != m:
        raise GraphFormatError(f"adjacency must be square, got {a.shape}")
    if (abs(a - a.T) > 1e-12 * max(1.0, abs(a).max() if a.nnz else 1.0)).nnz != 0:
        raise GraphFormatError("adjacency must be symmetric")
    if a.nnz and a.data.min() < 0:
        raise GraphFormatError("adjacency entries must be nonnegative")
    with_loops = (a + sps.identity(n, format="csr")).tocsr()
    deg = np.asarray(with_loops.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sps.diags(inv_sqrt)
    return (scale @ with_loops @ scale).tocsr()


def normalize_dense(a):
    """Dense-array variant of `normalize_adjacency` (same formula)."""
    a = np.asarray(a, dtype=np.float64)
    with_loops = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return with_loops * inv_sqrt[:, None] * inv_sqrt[None, :]


def corrupt_features(x, seed):
    """Row-shuffle of the feature matrix by a seed-deterministic permutation."""
    x = np.asarray(x)
    perm = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1)])).permutation(x.shape[0])
    return x[perm]


def degree_features(dims):
    """Per-node degree in every dimension, standardized per column.

    The default feature matrix for graphs that ship no features: it is
    structure-derived and carries no label information.
    """
    cols = [np.asarray(a.sum(axis=1)).ravel() for a in dims]
    x = np.stack(cols, axis=1).astype(np.float64)
    mu = x.mean(axis=0, keepdims=True)
    sd = x.std(axis=0, keepdims=True)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def _edges_to_csr(n, pairs):
    if not pairs:
        return sps.csr_matrix((n, n))
    rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    both_r = np.concatenate([rows, cols])
    both_c = np.concatenate([cols, rows])
    mat = sps.csr_matrix((np.ones(both_r.size), (both_r, both_c)), shape=(n, n))
    mat.data[:] = 1.0  # duplicate lines and mirrored self-loops collapse to 1
    return mat


def edges_from_csr(a):
    """Each undirected edge once, as sorted (i, j) with i <= j."""
    coo = sps.triu(a).tocoo()
    return sorted(zip(coo.row.tolist(), coo.col.tolist()))


def load_multiplex(path) -> MultiplexGraph:
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise GraphFormatError(f"missing meta file {meta_file}")
    try:
        meta = json.loads(meta_file.read_text())
        n = int(meta["n_nodes"])
        d = int(meta["n_dims"])
        f = int(meta["n_features"])
    except (KeyError, ValueError, TypeError) as exc:
        raise GraphFormatError(f"bad meta file {meta_file}: {exc}") from exc

    dims = []
    for k in range(d):
        edge_file = path / "dims" / f"{k}.edges"
        if not edge_file.exists():
            raise GraphFormatError(f"missing edge file {edge_file}")
        pairs = set()
        with open(edge_file) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise GraphFormatError(
                        f"{edge_file}:{lineno}: expected two node ids, got {line!r}")
                try:
                    i, j = int(parts[0]), int(parts[1])
                except ValueError as exc:
                    raise GraphFormatError(
                        f"{edge_file}:{lineno}: non-integer node id in {line!r}") from exc
                if not (0 <= i < n and 0 <= j < n):
                    raise GraphFormatError(
                        f"{edge_file}:{lineno}: node id out of range [0, {n}) in {line!r}")
                pairs.add((min(i, j), max(i, j)))
        dims.append(_edges_to_csr(n, sorted(pairs)))

    feat_file = path / "features.csv"
    if feat_file.exists():
        try:
            features = np.loadtxt(feat_file, delimiter=",", ndmin=2, dtype=np.float64)
        except ValueError as exc:
            raise GraphFormatError(f"bad features file {feat_file}: {exc}") from exc
        if features.shape != (n, f):
            raise GraphFormatError(
                f"{feat_file}: shape {features.shape} != meta ({n}, {f})")
    else:
        if f != d:
            raise GraphFormatError(
                f"{path}: no features.csv; synthesized degree features have "
                f"width {d} but meta says n_features={f}")
        features = degree_features(dims)

    labels = None
    label_file = path / "labels.csv"
    if label_file.exists():
        labels = []
        with open(label_file) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    labels.append([int(tok) for tok in line.split(",")])
                except ValueError as exc:
                    raise GraphFormatError(
                        f"{label_file}:{lineno}: bad class id in {line!r}") from exc
        if len(labels) != n:
            raise GraphFormatError(f"{label_file}: {len(labels)} lines for {n} nodes")

    return MultiplexGraph(n, dims, features, labels).validate()


def save_multiplex(graph: MultiplexGraph, path):
    graph.validate()
    path = Path(path)
    (path / "dims").mkdir(parents=True, exist_ok=True)
    meta = {"n_nodes": graph.n_nodes, "n_dims": graph.n_dims,
            "n_features": graph.n_features}
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    for k, a in enumerate(graph.dims):
        lines = [f"{i} {j}" for i, j in edges_from_csr(a)]
        (path / "dims" / f"{k}.edges").write_text("\n".join(lines) + ("\n" if lines else ""))
    rows = [",".join(repr(float(v)) for v in row) for row in graph.features]
    (path / "features.csv").write_text("\n".join(rows) + "\n")
    if graph.labels is not None:
        lines = [",".join(str(c) for c in row) for row in graph.labels]
        (path / "labels.csv").write_text("\n".join(lines) + "\n")
    return path
