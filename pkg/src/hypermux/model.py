"""Hierarchical hyperbolic GNN over multiplex graphs.

Per layer l (with D_{l-1} current latent dimensions):

  1. propagate node states through every dimension's normalized
     adjacency, with the linear map and activation taken in the tangent
     space at the base point:  H_d = exp0( sigma( A_d . log0(H) . W_d ) );
  2. combine the per-dimension states into one consensus state with
     softmax attention weights (a weighted sum in tangent coordinates,
     mapped back through exp0);
  3. aggregate the D_{l-1} adjacency matrices into D_l higher-order
     latent matrices with row-softmax combination weights, apply phi
     (relu), and re-normalize them for the next layer.

The combination logits are traced, so gradients flow through the latent
adjacencies back into them. Each hierarchy level stores its D matrices
as one (D*N, N) vertical block stack: propagation over every dimension
is then a single sparse-or-dense product, and re-normalization
vectorizes across blocks. Aggregated levels denser than
`dense_threshold` stay dense; sparser ones drop entries below
`drop_tol` and propagate through a fixed-pattern sparse product.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sps

from . import autodiff as ad
from . import manifold as mf
from .autodiff import Tensor, val
from .graph import normalize_adjacency


class ModelConfigError(ValueError):
    pass


MODEL_VARIANTS = {
    # name: (manifold, n_layers, trainable aggregation weights)
    "full": (mf.LORENTZ, 2, True),
    "poincare": (mf.POINCARE, 2, True),
    "euclidean": (mf.EUCLIDEAN, 2, True),
    "euclidean-single": (mf.EUCLIDEAN, 1, True),
    "weights-ablation": (mf.LORENTZ, 2, False),
    "layers-ablation": (mf.LORENTZ, 1, True),
}


@dataclass
class ModelConfig:
    n_layers: int = 2
    embed_size: int = 96
    manifold: str = mf.LORENTZ
    dim_schedule: tuple | None = None  # resolved against the input D
    leaky_slope: float = 0.01  # sigma is leaky relu; phi is relu
    dense_threshold: float = 0.25
    drop_tol: float = 1e-4
    train_alpha: bool = True

    @classmethod
    def for_variant(cls, name, embed_size=96, **kwargs):
        if name not in MODEL_VARIANTS:
            raise ModelConfigError(f"unknown model variant {name!r}; "
                                   f"expected one of {sorted(MODEL_VARIANTS)}")
        kind, layers, train_alpha = MODEL_VARIANTS[name]
        return cls(n_layers=layers, embed_size=embed_size, manifold=kind,
                   train_alpha=train_alpha, **kwargs)


def resolve_dim_schedule(d_input, n_layers, given=None):
    """Halving schedule D, max(ceil(D/2), 2), ..., with a final level >= 1.

    Strictly decreasing wherever the previous level allows it; levels
    stuck at 1 stay at 1 (degenerate single-dimension graphs).
    """
    if given is not None:
        schedule = tuple(int(x) for x in given)
        if len(schedule) != n_layers + 1:
            raise ModelConfigError(
                f"dim_schedule needs {n_layers + 1} entries, got {len(schedule)}")
        if schedule[0] != d_input:
            raise ModelConfigError(
                f"dim_schedule starts at {schedule[0]} but the graph has D={d_input}")
        for prev, cur in zip(schedule, schedule[1:]):
            if cur < 1 or cur > prev or (cur == prev and prev > 1):
                raise ModelConfigError(f"dim_schedule must strictly decrease: {schedule}")
        return schedule
    if n_layers < 1:
        raise ModelConfigError("need at least one layer")
    schedule = [int(d_input)]
    for l in range(1, n_layers + 1):
        floor = 1 if l == n_layers else 2
        nxt = max(math.ceil(d_input / 2 ** l), floor)
        nxt = min(nxt, max(schedule[-1] - 1, 1))
        schedule.append(nxt)
    return tuple(schedule)


@dataclass
class LayerParams:
    weights: list  # D_{l-1} Tensors, F_in x F_out
    alpha_logits: Tensor  # D_l x D_{l-1}, row-softmaxed over inputs
    beta_logits: Tensor  # 1 x D_{l-1}, softmaxed over inputs


@dataclass
class ModelParams:
    layers: list

    def named(self):
        for l, layer in enumerate(self.layers, start=1):
            for d, w in enumerate(layer.weights):
                yield f"layer{l}.W{d}", w
            yield f"layer{l}.alpha", layer.alpha_logits
            yield f"layer{l}.beta", layer.beta_logits

    def trainable(self):
        return [(name, t) for name, t in self.named() if t.requires_grad]


def init_params(d_input, f_input, config: ModelConfig, seed=0):
    """Glorot-uniform GCN weights, zero (uniform-attention) logits."""
    schedule = resolve_dim_schedule(d_input, config.n_layers, config.dim_schedule)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 11]))
    layers = []
    f_in = f_input
    for l in range(1, config.n_layers + 1):
        d_prev, d_cur = schedule[l - 1], schedule[l]
        f_out = config.embed_size
        bound = math.sqrt(6.0 / (f_in + f_out))
        weights = [ad.leaf(rng.uniform(-bound, bound, size=(f_in, f_out)),
                           name=f"layer{l}.W{d}")
                   for d in range(d_prev)]
        alpha = Tensor(np.zeros((d_cur, d_prev)),
                       requires_grad=config.train_alpha, name=f"layer{l}.alpha")
        beta = ad.leaf(np.zeros((1, d_prev)), name=f"layer{l}.beta")
        layers.append(LayerParams(weights, alpha, beta))
        f_in = f_out
    return ModelParams(layers)


# ---------------------------------------------------------------------------
# stacked adjacency levels


class StackedAdjacency:
    """D symmetric N x N adjacencies stored as one (D*N, N) block stack.

    modes: "const"  - input level, scipy CSR, never traced;
           "dense"  - traced dense Tensor;
           "sparse" - traced values on a fixed SparsePattern.
    """

    def __init__(self, n, n_blocks, mode, csr=None, csr_t=None, dense=None,
                 pattern=None, values=None):
        self.n = n
        self.n_blocks = n_blocks
        self.mode = mode
        self.csr = csr
        self.csr_t = csr_t
        self.dense = dense
        self.pattern = pattern
        self.values = values

    @classmethod
    def from_csr_list(cls, mats):
        mats = [m.tocsr() for m in mats]
        n = mats[0].shape[0]
        stack = sps.vstack(mats, format="csr")
        out = cls(n, len(mats), "const", csr=stack, csr_t=stack.T.tocsr())
        out._flat_const = None  # densified lazily, then reused every epoch
        return out

    @classmethod
    def from_dense_tensor(cls, dense, n):
        return cls(n, val(dense).shape[0] // n, "dense", dense=dense)

    @classmethod
    def from_sparse_tensor(cls, pattern, values, n):
        return cls(n, pattern.shape[0] // n, "sparse", pattern=pattern, values=values)

    def matmul(self, x):
        """(D*N, N) @ (N, F): propagation through every block at once."""
        if self.mode == "const":
            return ad.spmm_const(self.csr, self.csr_t, x)
        if self.mode == "dense":
            return ad.matmul(self.dense, x)
        return ad.spmm(self.pattern, self.values, x)

    def flat_tensor(self):
        """(D, N*N) view feeding the next aggregation."""
        if self.mode == "const":
            if getattr(self, "_flat_const", None) is None:
                self._flat_const = self.csr.toarray().reshape(self.n_blocks,
                                                              self.n * self.n)
            return ad.constant(self._flat_const)
        if self.mode == "dense":
            return ad.reshape(self.dense, (self.n_blocks, self.n * self.n))
        dense = ad.scatter_nd(self.values, self.pattern.rows, self.pattern.cols,
                              self.pattern.shape)
        return ad.reshape(dense, (self.n_blocks, self.n * self.n))

    def block_values(self):
        """Plain ndarray copies of the individual matrices."""
        if self.mode == "const":
            full = self.csr.toarray()
        elif self.mode == "dense":
            full = val(self.dense)
        else:
            full = self.pattern.to_dense(val(self.values))
        return [full[j * self.n:(j + 1) * self.n] for j in range(self.n_blocks)]


def prepare_adjacencies(graph):
    """Normalize every input dimension once, at load time, and stack them."""
    return StackedAdjacency.from_csr_list(
        [normalize_adjacency(a) for a in graph.dims])


# ---------------------------------------------------------------------------
# single-step public ops


def hyperbolic_gcn_layer(h, a_hat, w, kind=mf.LORENTZ, slope=0.01):
    """One propagation step: exp0( leaky_relu( A . log0(H) . W ) ).

    With the euclidean manifold this is exactly the classic GCN rule.
    `a_hat` is a normalized adjacency (csr, dense array, or Tensor).
    """
    mf.check_manifold(kind)
    tangent = mf.to_euclidean(h, kind)
    tw = ad.matmul(tangent, w)
    if sps.issparse(a_hat):
        a_hat = a_hat.tocsr()
        msg = ad.spmm_const(a_hat, a_hat.T.tocsr(), tw)
    else:
        msg = ad.matmul(a_hat, tw)
    return mf.lift(ad.leaky_relu(msg, slope), kind)


def consensus(per_dim, beta_logits, kind=mf.LORENTZ):
    """Softmax-weighted combination of per-dimension node states.

    Taken in tangent coordinates at the base point and mapped back,
    which coincides with the plain weighted sum in the euclidean case.
    """
    if len(per_dim) == 0:
        raise ModelConfigError("consensus needs at least one input")
    logits = ad.reshape(beta_logits, (1, len(per_dim))) if ad.is_tensor(beta_logits) \
        else np.asarray(beta_logits, dtype=np.float64).reshape(1, -1)
    if val(logits).size != len(per_dim):
        raise ad.ShapeError(f"consensus: {len(per_dim)} inputs but "
                            f"{val(logits).size} logits")
    weights = ad.softmax(logits, axis=-1)
    acc = None
    for d, h in enumerate(per_dim):
        term = ad.mul(ad.slice_cols(weights, d, d + 1), mf.to_euclidean(h, kind))
        acc = term if acc is None else ad.add(acc, term)
    return mf.lift(acc, kind)


def hierarchical_aggregate(adjacencies, alpha_logits):
    """Combine D_in adjacency matrices into D_out latent ones (pre-norm).

    Returns the phi(sum_i alpha_ij A_i) matrices with alpha the row
    softmax of the logits; callers re-normalize before propagating.
    """
    mats = [a.toarray() if sps.issparse(a) else a for a in adjacencies]
    n = val(mats[0]).shape[0]
    logits_v = val(alpha_logits)
    if logits_v.ndim != 2 or logits_v.shape[1] != len(mats):
        raise ad.ShapeError(
            f"aggregation logits shape {logits_v.shape} incompatible with "
            f"{len(mats)} input matrices")
    rows = [ad.reshape(m, (1, n * n)) for m in mats]
    stacked = ad.concat(rows, axis=0) if any(ad.is_tensor(r) for r in rows) \
        else np.concatenate(rows, axis=0)
    out_flat = ad.relu(ad.matmul(ad.softmax(alpha_logits, axis=-1), stacked))
    if ad.is_tensor(out_flat):
        return [ad.reshape(ad.take_row(out_flat, j), (n, n))
                for j in range(logits_v.shape[0])]
    return [out_flat[j].reshape(n, n) for j in range(logits_v.shape[0])]


# ---------------------------------------------------------------------------
# full forward pass


def _level_storage(normalized, n, config, scratch=None, key=None):
    nv = val(normalized)
    keep = np.abs(nv) >= config.drop_tol
    density = keep.mean()
    if density > config.dense_threshold:
        return StackedAdjacency.from_dense_tensor(normalized, n)
    rows, cols = np.nonzero(keep)
    pattern = scratch.get(key) if scratch is not None else None
    if pattern is None or not (np.array_equal(pattern.rows, rows)
                               and np.array_equal(pattern.cols, cols)):
        pattern = ad.SparsePattern(rows, cols, nv.shape)
        if scratch is not None:
            scratch[key] = pattern  # support rarely moves between epochs
    values = ad.gather_nd(normalized, pattern.rows, pattern.cols, unique=True)
    return StackedAdjacency.from_sparse_tensor(pattern, values, n)


@dataclass
class Hierarchy:
    """Adjacency levels 0..L plus diagnostics captured while building."""

    levels: list  # StackedAdjacency per level, block counts = dim_schedule
    raw_flat: list  # per layer, (D_l, N*N) pre-normalization values
    softmax_dev: float  # max |sum(alpha row) - 1| across layers

    def raw_matrices(self, layer):
        """Pre-normalization aggregated (N, N) matrices of one layer."""
        n = self.levels[0].n
        return [row.reshape(n, n).copy() for row in self.raw_flat[layer]]

    @property
    def raw_aggregated(self):
        return [self.raw_matrices(l) for l in range(len(self.raw_flat))]


def build_hierarchy(level0: StackedAdjacency, params: ModelParams,
                    config: ModelConfig, scratch=None):
    """Latent adjacency levels; level 0 is the (constant) normalized input.

    `scratch` is an optional cross-epoch cache (sparsity patterns and the
    like) owned by a training loop.
    """
    n = level0.n
    levels = [level0]
    raw_all = []
    dev = 0.0
    for idx, layer in enumerate(params.layers):
        current = levels[-1]
        if len(layer.weights) != current.n_blocks:
            raise ModelConfigError(
                f"layer has {len(layer.weights)} weight matrices for "
                f"{current.n_blocks} latent dimensions")
        alpha = ad.softmax(layer.alpha_logits, axis=-1)
        dev = max(dev, float(np.abs(val(alpha).sum(axis=-1) - 1.0).max()))
        agg_flat = ad.relu(ad.matmul(alpha, current.flat_tensor()))
        d_out = val(alpha).shape[0]
        raw_all.append(val(agg_flat))
        stacked = ad.reshape(agg_flat, (d_out * n, n))
        levels.append(_level_storage(ad.normalize_blocks(stacked, n), n, config,
                                     scratch=scratch, key=idx))
    return Hierarchy(levels, raw_all, dev)


def propagate(hierarchy: Hierarchy, x, params: ModelParams, config: ModelConfig):
    """Run the embedding layers over a prebuilt adjacency hierarchy.

    Returns (Z, softmax deviation, max Lorentz constraint violation).
    """
    kind = config.manifold
    mf.check_manifold(kind)
    n = hierarchy.levels[0].n
    h = mf.lift(x if ad.is_tensor(x) else ad.constant(np.asarray(x, dtype=np.float64)),
                kind)
    violation = mf.lorentz_violation(val(h)) if kind == mf.LORENTZ else 0.0
    dev = 0.0
    for l, layer in enumerate(params.layers):
        level = hierarchy.levels[l]
        tangent = mf.to_euclidean(h, kind)
        prop_all = level.matmul(tangent)  # (D*N, F_in)
        per_dim = ad.leaky_relu(ad.block_matmul(prop_all, layer.weights, n),
                                config.leaky_slope)
        beta = ad.softmax(ad.reshape(layer.beta_logits, (1, -1)), axis=-1)
        dev = max(dev, float(abs(val(beta).sum() - 1.0)))
        h = mf.lift(ad.block_weighted_sum(per_dim, beta, n), kind)
        if kind == mf.LORENTZ:
            violation = max(violation, mf.lorentz_violation(val(h)))
    return h, dev, violation


@dataclass
class ForwardResult:
    z: Tensor  # N x M node states (N x (M+1) on the hyperboloid)
    hierarchy: Hierarchy
    softmax_dev: float
    lorentz_violation: float


def forward(graph_or_level, x, params: ModelParams, config: ModelConfig):
    """Full multilayer pass: embeddings plus the latent adjacency hierarchy."""
    if isinstance(graph_or_level, StackedAdjacency):
        level0 = graph_or_level
    else:
        level0 = prepare_adjacencies(graph_or_level)
    hierarchy = build_hierarchy(level0, params, config)
    z, dev, violation = propagate(hierarchy, x, params, config)
    return ForwardResult(z, hierarchy, max(dev, hierarchy.softmax_dev), violation)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, params: ModelParams, q, model_config: ModelConfig,
                    meta=None):
    """Write a flat key -> array map (numpy .npz) with a JSON header entry.

    Keys: layer{l}.W{d}, layer{l}.alpha, layer{l}.beta, Q, and __meta__
    (UTF-8 JSON bytes holding the model config, the format version, and
    optional extra metadata).
    """
    arrays = {name: t.value for name, t in params.named()}
    arrays["Q"] = val(q)
    header = {"format": CHECKPOINT_FORMAT, "model": asdict(model_config)}
    if meta:
        header["meta"] = meta
    arrays["__meta__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8).copy()
    np.savez(path, **arrays)
    return path


def load_checkpoint(path):
    """Inverse of `save_checkpoint`: (params, Q tensor, ModelConfig, meta)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["__meta__"]).decode())
        cfg_kwargs = dict(header["model"])
        if cfg_kwargs.get("dim_schedule") is not None:
            cfg_kwargs["dim_schedule"] = tuple(cfg_kwargs["dim_schedule"])
        config = ModelConfig(**cfg_kwargs)
        layers = []
        l = 1
        while f"layer{l}.alpha" in data:
            weights = []
            d = 0
            while f"layer{l}.W{d}" in data:
                weights.append(ad.leaf(data[f"layer{l}.W{d}"], name=f"layer{l}.W{d}"))
                d += 1
            alpha = Tensor(data[f"layer{l}.alpha"], requires_grad=config.train_alpha,
                           name=f"layer{l}.alpha")
            beta = ad.leaf(data[f"layer{l}.beta"], name=f"layer{l}.beta")
            layers.append(LayerParams(weights, alpha, beta))
            l += 1
        q = ad.leaf(data["Q"], name="Q")
    return ModelParams(layers), q, config, header.get("meta")
