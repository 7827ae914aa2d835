"""Reverse-mode automatic differentiation over dense float64 arrays.

A small define-by-run tape, sufficient to train every parameter of the
embedding models in this package. Every op is dual-mode: called on plain
numpy arrays it just computes numpy, called on at least one `Tensor` it
also records a closure mapping the output adjoint onto the input
adjoints. `backward` replays the closures in reverse topological order.

Sparse adjacency matrices participate in two forms: as constants
(`spmm_const`, adjoint w.r.t. the dense operand only) and as traced
values living on a fixed sparsity pattern (`SparsePattern` + `spmm`).

Everything is float64. Elementwise ops broadcast like numpy; adjoints
are summed back onto the original operand shapes. Evaluation is
deterministic (no internal randomness).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested primitive."""


class Tensor:
    """One node of the differentiable trace.

    Leaves are created directly (``Tensor(value, requires_grad=True)``
    for trainables, ``constant(value)`` otherwise); interior nodes are
    created by the ops below. After ``backward``, every leaf on a path
    to the output holds its adjoint in ``.grad``.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, value, requires_grad=False, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = self.name or ("leaf" if self.requires_grad else "node")
        return f"Tensor({tag}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value, name=""):
    return Tensor(value, requires_grad=False, name=name)


def leaf(value, name=""):
    return Tensor(value, requires_grad=True, name=name)


def is_tensor(x):
    return isinstance(x, Tensor)


def val(x):
    """Underlying ndarray of a Tensor, or the input coerced to float64."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _node(value, parents, vjp):
    t = Tensor(value)
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._vjp = vjp
    return t


def _unbroadcast(g, shape):
    """Sum an adjoint back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _wrap2(a, b):
    ta = a if isinstance(a, Tensor) else constant(a)
    tb = b if isinstance(b, Tensor) else constant(b)
    return ta, tb


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return val(a) + val(b)
    a, b = _wrap2(a, b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))


def sub(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return val(a) - val(b)
    a, b = _wrap2(a, b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


def mul(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return val(a) * val(b)
    a, b = _wrap2(a, b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.value.shape),
                            _unbroadcast(g * a.value, b.value.shape)))


def div(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return val(a) / val(b)
    a, b = _wrap2(a, b)
    return _node(a.value / b.value, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.value.shape),
                            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)))


def neg(a):
    if not is_tensor(a):
        return -val(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, exponent):
    """a ** p for a scalar python exponent."""
    p = float(exponent)
    if not is_tensor(a):
        return val(a) ** p
    return _node(a.value ** p, (a,), lambda g: (g * p * a.value ** (p - 1.0),))


# ---------------------------------------------------------------------------
# matrix products


def matmul(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return val(a) @ val(b)
    a, b = _wrap2(a, b)
    av, bv = a.value, b.value
    na, nb = a.requires_grad, b.requires_grad  # skip adjoints nobody needs
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
        return _node(av @ bv, (a, b),
                     lambda g: (g @ bv.T if na else None, av.T @ g if nb else None))
    if av.ndim == 2 and bv.ndim == 1:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
        return _node(av @ bv, (a, b),
                     lambda g: (np.outer(g, bv) if na else None, av.T @ g if nb else None))
    if av.ndim == 1 and bv.ndim == 1:
        if av.shape[0] != bv.shape[0]:
            raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
        return _node(av @ bv, (a, b), lambda g: (g * bv, g * av))
    raise ShapeError(f"matmul: unsupported ranks {av.ndim} @ {bv.ndim}")


class SparsePattern:
    """Fixed sparsity pattern (COO index pairs) with precomputed CSR plumbing.

    The pattern itself is constant; only the values on it may be traced.
    """

    def __init__(self, rows, cols, shape):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.shape = tuple(shape)
        if self.rows.shape != self.cols.shape or self.rows.ndim != 1:
            raise ShapeError("SparsePattern: rows/cols must be equal-length 1-d")
        n, m = self.shape
        order = np.lexsort((self.cols, self.rows))
        self._perm = order
        self._indices = self.cols[order].astype(np.int32)
        self._indptr = np.zeros(n + 1, dtype=np.int32)
        np.cumsum(np.bincount(self.rows, minlength=n), out=self._indptr[1:])
        order_t = np.lexsort((self.rows, self.cols))
        self._perm_t = order_t
        self._indices_t = self.rows[order_t].astype(np.int32)
        self._indptr_t = np.zeros(m + 1, dtype=np.int32)
        np.cumsum(np.bincount(self.cols, minlength=m), out=self._indptr_t[1:])

    @property
    def nnz(self):
        return self.rows.shape[0]

    def csr(self, values):
        return sps.csr_matrix((values[self._perm], self._indices, self._indptr),
                              shape=self.shape)

    def csr_t(self, values):
        return sps.csr_matrix((values[self._perm_t], self._indices_t, self._indptr_t),
                              shape=(self.shape[1], self.shape[0]))

    def to_dense(self, values):
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = values
        return out


def spmm_const(mat, mat_t, x):
    """Sparse @ dense with a constant sparse operand.

    `mat_t` is the precomputed CSR transpose (pass `mat` itself when the
    matrix is symmetric). Gradient flows to the dense operand only.
    """
    if not is_tensor(x):
        return mat @ val(x)
    if mat.shape[1] != x.value.shape[0]:
        raise ShapeError(f"spmm_const: {mat.shape} @ {x.value.shape}")
    return _node(mat @ x.value, (x,), lambda g: (mat_t @ g,))


def spmm(pattern, values, x):
    """Sparse @ dense where the sparse values live on a fixed pattern.

    Gradient flows to both the values and the dense operand.
    """
    if not (is_tensor(values) or is_tensor(x)):
        return pattern.csr(val(values)) @ val(x)
    values, x = _wrap2(values, x)
    if values.value.shape != (pattern.nnz,):
        raise ShapeError(f"spmm: values shape {values.value.shape} != ({pattern.nnz},)")
    if pattern.shape[1] != x.value.shape[0]:
        raise ShapeError(f"spmm: {pattern.shape} @ {x.value.shape}")
    y = pattern.csr(values.value) @ x.value
    nv, nx = values.requires_grad, x.requires_grad
    dense_adjoint = pattern.nnz * 20 > pattern.shape[0] * pattern.shape[1]

    def vjp(g):
        gv = None
        if nv:
            if dense_adjoint:  # contract densely, then pick the pattern
                gv = (g @ x.value.T)[pattern.rows, pattern.cols]
            else:
                gv = np.einsum("ij,ij->i", g[pattern.rows], x.value[pattern.cols])
        gx = pattern.csr_t(values.value) @ g if nx else None
        return gv, gx

    return _node(y, (values, x), vjp)


def gather_nd(x, rows, cols, unique=False):
    """Pick entries x[rows[k], cols[k]] into a flat vector.

    Set `unique=True` when the index pairs are known distinct; the
    adjoint then scatters by assignment instead of `np.add.at`.
    """
    if not is_tensor(x):
        return val(x)[rows, cols]
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(x.value)
        if unique:
            out[rows, cols] = g
        else:
            np.add.at(out, (rows, cols), g)
        return (out,)

    return _node(x.value[rows, cols], (x,), vjp)


def scatter_nd(values, rows, cols, shape):
    """Dense matrix with `values` placed at (rows, cols), zero elsewhere."""
    if not is_tensor(values):
        out = np.zeros(shape)
        out[rows, cols] = val(values)
        return out
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = np.zeros(shape)
    out[rows, cols] = values.value
    return _node(out, (values,), lambda g: (g[rows, cols],))


# ---------------------------------------------------------------------------
# nonlinearities


def _unary(a, fwd, dfn):
    if not is_tensor(a):
        return fwd(val(a))
    y = fwd(a.value)
    return _node(y, (a,), lambda g: (g * dfn(a.value, y),))


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def arctanh(a):
    return _unary(a, np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))


def sinh(a):
    return _unary(a, np.sinh, lambda x, y: np.cosh(x))


def cosh(a):
    return _unary(a, np.cosh, lambda x, y: np.sinh(x))


def arcosh(a):
    return _unary(a, np.arccosh, lambda x, y: 1.0 / np.sqrt(x * x - 1.0))


def sigmoid(a):
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    if not is_tensor(a):
        return fwd(np.atleast_1d(val(a)))[0] if np.ndim(val(a)) == 0 else fwd(val(a))
    y = fwd(a.value)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a):
    if not is_tensor(a):
        return np.maximum(val(a), 0.0)
    y = np.maximum(a.value, 0.0)
    return _node(y, (a,), lambda g: (np.where(a.value > 0, g, 0.0),))


def leaky_relu(a, slope=0.01):
    if not is_tensor(a):
        x = val(a)
        return np.where(x > 0, x, slope * x)
    x = a.value
    return _node(np.where(x > 0, x, slope * x), (a,),
                 lambda g: (np.where(x > 0, g, slope * g),))


def clip(a, lo, hi):
    """Clamp values; the adjoint passes straight through the clamp."""
    if not is_tensor(a):
        return np.clip(val(a), lo, hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g,))


def where_mask(mask, a, b):
    """Select per element by a constant boolean mask."""
    if not (is_tensor(a) or is_tensor(b)):
        return np.where(mask, val(a), val(b))
    a, b = _wrap2(a, b)
    m = np.asarray(mask, dtype=bool)
    y = np.where(m, a.value, b.value)
    return _node(y, (a, b),
                 lambda g: (_unbroadcast(np.where(m, g, 0.0), a.value.shape),
                            _unbroadcast(np.where(m, 0.0, g), b.value.shape)))


def softmax(a, axis=-1):
    def fwd(x):
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)

    if not is_tensor(a):
        return fwd(val(a))
    y = fwd(a.value)
    return _node(y, (a,),
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


# ---------------------------------------------------------------------------
# reductions, shaping


def tsum(a, axis=None, keepdims=False):
    if not is_tensor(a):
        return val(a).sum(axis=axis, keepdims=keepdims)
    y = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _node(y, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    if not is_tensor(a):
        return val(a).mean(axis=axis, keepdims=keepdims)
    n = a.value.size if axis is None else a.value.shape[axis]
    return div(tsum(a, axis=axis, keepdims=keepdims), float(n))


def row_norm(a):
    """Euclidean norm of each row, shape (N, 1). Zero rows get zero adjoint."""
    if not is_tensor(a):
        x = val(a)
        return np.sqrt((x * x).sum(axis=1, keepdims=True))
    x = a.value
    y = np.sqrt((x * x).sum(axis=1, keepdims=True))

    def vjp(g):
        safe = np.where(y > 0, y, 1.0)
        return (g * np.where(y > 0, x / safe, 0.0),)

    return _node(y, (a,), vjp)


def concat(parts, axis=0):
    if not any(is_tensor(p) for p in parts):
        return np.concatenate([val(p) for p in parts], axis=axis)
    parts = [p if isinstance(p, Tensor) else constant(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    y = np.concatenate([p.value for p in parts], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(y, tuple(parts), vjp)


def transpose(a):
    if not is_tensor(a):
        return val(a).T
    return _node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    if not is_tensor(a):
        return val(a).reshape(shape)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take_row(a, i):
    """Row i of a 2-d array, kept 2-d with shape (1, K)."""
    if not is_tensor(a):
        return val(a)[i:i + 1, :]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[i:i + 1, :] = g
        return (out,)

    return _node(a.value[i:i + 1, :], (a,), vjp)


def slice_cols(a, start, stop):
    if not is_tensor(a):
        return val(a)[:, start:stop]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[:, start:stop] = g
        return (out,)

    return _node(a.value[:, start:stop], (a,), vjp)


def slice_rows(a, start, stop):
    if not is_tensor(a):
        return val(a)[start:stop]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return (out,)

    return _node(a.value[start:stop], (a,), vjp)


def block_transpose(a, block):
    """Transpose each (block x block) slab of a vertically stacked matrix.

    Input shape (k*block, block); the op is an entry permutation and an
    involution, so its adjoint is itself.
    """

    def f(v):
        return v.reshape(-1, block, block).transpose(0, 2, 1).reshape(-1, block)

    arr = val(a)
    if arr.ndim != 2 or arr.shape[1] != block or arr.shape[0] % block:
        raise ShapeError(f"block_transpose: shape {arr.shape} not a stack of "
                         f"({block}, {block}) blocks")
    if not is_tensor(a):
        return f(arr)
    return _node(f(a.value), (a,), lambda g: (f(g),))


def block_matmul(x, weights, block):
    """Per-block linear maps: rows [d*block, (d+1)*block) of x hit weights[d].

    One fused op instead of k slice-then-matmul pairs, so the adjoint
    w.r.t. x fills a single buffer.
    """
    xs = val(x)
    k = xs.shape[0] // block
    if xs.ndim != 2 or xs.shape[0] % block or len(weights) != k:
        raise ShapeError(f"block_matmul: {xs.shape} with {len(weights)} weights "
                         f"of block {block}")
    wvals = [val(w) for w in weights]
    f_in, f_out = wvals[0].shape
    for w in wvals:
        if w.shape != (f_in, f_out) or f_in != xs.shape[1]:
            raise ShapeError(f"block_matmul: weight shape {w.shape} incompatible "
                             f"with input {xs.shape}")
    out = np.empty((xs.shape[0], f_out))
    for d in range(k):
        sl = slice(d * block, (d + 1) * block)
        np.matmul(xs[sl], wvals[d], out=out[sl])
    if not (is_tensor(x) or any(is_tensor(w) for w in weights)):
        return out
    xt = x if isinstance(x, Tensor) else constant(x)
    wts = [w if isinstance(w, Tensor) else constant(w) for w in weights]

    def vjp(g):
        gx = np.empty_like(xs) if xt.requires_grad else None
        gws = []
        for d in range(k):
            sl = slice(d * block, (d + 1) * block)
            if gx is not None:
                np.matmul(g[sl], wvals[d].T, out=gx[sl])
            gws.append(xs[sl].T @ g[sl] if wts[d].requires_grad else None)
        return (gx, *gws)

    return _node(out, (xt, *wts), vjp)


def block_weighted_sum(x, coeffs, block):
    """sum_d coeffs[d] * block_d over a (k*block, m) stack -> (block, m)."""
    xs = val(x)
    k = xs.shape[0] // block
    cs = val(coeffs).reshape(-1)
    if xs.ndim != 2 or xs.shape[0] % block or cs.size != k:
        raise ShapeError(f"block_weighted_sum: {xs.shape} with {cs.size} "
                         f"coefficients of block {block}")
    x3 = xs.reshape(k, block, xs.shape[1])
    out = np.einsum("d,dnm->nm", cs, x3)
    if not (is_tensor(x) or is_tensor(coeffs)):
        return out
    xt, ct = _wrap2(x, coeffs)

    def vjp(g):
        gx = None
        if xt.requires_grad:
            gx = np.empty_like(xs)
            for d in range(k):
                np.multiply(g, cs[d], out=gx[d * block:(d + 1) * block])
        gc = np.einsum("nm,dnm->d", g, x3).reshape(ct.value.shape) \
            if ct.requires_grad else None
        return (gx, gc)

    return _node(out, (xt, ct), vjp)


def normalize_blocks(a, block):
    """Degree-normalize every (block x block) slab of a stacked matrix.

    Each slab A becomes S (A + I) S with S = diag(rowsum(A + I))^-1/2.
    Fused single op (forward and adjoint written by hand) because this
    sits on the per-epoch hot path for every aggregated level.
    """
    arr = val(a)
    if arr.ndim != 2 or arr.shape[1] != block or arr.shape[0] % block:
        raise ShapeError(f"normalize_blocks: shape {arr.shape} not a stack of "
                         f"({block}, {block}) blocks")
    k = arr.shape[0] // block

    b = arr.copy()
    idx = np.arange(block)
    for blk in range(k):  # add I without materializing a tiled identity
        b[blk * block + idx, idx] += 1.0
    deg = b.sum(axis=1, keepdims=True)
    s = 1.0 / np.sqrt(deg)
    y = b * s
    s_rows = s.reshape(k, block)
    y3 = y.reshape(k, block, block)
    y3 *= s_rows[:, None, :]
    y = y3.reshape(k * block, block)

    if not is_tensor(a):
        return y

    def vjp(g):
        gb = g * s  # d/dB through the row factors, col factors applied next
        gb3 = gb.reshape(k, block, block)
        gb3 *= s_rows[:, None, :]
        gb = gb3.reshape(k * block, block)
        # d/ds collects the row-factor and column-factor appearances
        row_term = (g.reshape(k, block, block) * y3).sum(axis=2).reshape(-1, 1)
        col_term = (g.reshape(k, block, block)
                    * (b * s).reshape(k, block, block)).sum(axis=1).reshape(-1, 1)
        gs = row_term / s + col_term
        gdeg = -0.5 * gs * s / deg
        return (gb + gdeg,)

    return _node(y, (a,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(out):
    topo, seen, stack = [], set(), [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return topo


def backward(out, seed=None):
    """Accumulate adjoints of `out` into the `.grad` of every reachable node.

    `seed` defaults to ones of the output shape. Leaves that do not lie
    on a path to the output keep `.grad = None`; read them through
    `grad_or_zero`.
    """
    if not isinstance(out, Tensor):
        raise TypeError("backward expects a Tensor")
    if seed is None:
        seed = np.ones_like(out.value)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out.value.shape:
            raise ShapeError(f"seed shape {seed.shape} != output shape {out.value.shape}")
    topo = _toposort(out)
    for node in topo:
        node.grad = None
    out.grad = seed
    # adjoints accumulate in place once a node owns a writable private
    # buffer; views and buffers handed to several parents are never mutated
    owned = set()
    donated = {}  # id(buffer) -> id(parent) it was first handed to
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
                previous = donated.get(id(g))
                if previous is not None:
                    owned.discard(previous)  # buffer is shared, nobody mutates it
                elif g.base is None and g.flags.writeable:
                    owned.add(id(parent))
                donated[id(g)] = id(parent)
            elif id(parent) in owned:
                parent.grad += g
            else:
                parent.grad = parent.grad + g
                owned.add(id(parent))
    return out


def grad_or_zero(t):
    return t.grad if t.grad is not None else np.zeros_like(t.value)


def gradients(out, leaves, seed=None):
    """Adjoints of `out` w.r.t. an iterable of leaves, zeros when off-path."""
    backward(out, seed)
    return [grad_or_zero(t) for t in leaves]


def grad_check(fn, inputs, epsilon=1e-5, n_coords=200, rng=None):
    """Compare reverse-mode adjoints against central finite differences.

    `fn` maps a dict of named Tensors to a scalar Tensor. Returns the
    maximum relative error max(|ad - fd| / max(1, |ad|, |fd|)) over a
    sampled coordinate subset (at least 50 coordinates, or all of them
    when fewer exist).
    """
    rng = rng or np.random.default_rng(0)
    leaves = {k: leaf(np.asarray(v, dtype=np.float64), name=k) for k, v in inputs.items()}
    out = fn(leaves)
    if out.value.size != 1:
        raise ValueError("grad_check requires a scalar-valued expression")
    backward(out)
    ad = {k: grad_or_zero(t) for k, t in leaves.items()}

    coords = [(k, i) for k, v in leaves.items() for i in range(v.value.size)]
    want = max(50, min(n_coords, len(coords)))
    if len(coords) > want:
        idx = rng.choice(len(coords), size=want, replace=False)
        coords = [coords[i] for i in sorted(idx)]

    def eval_at(name, flat_index, delta):
        probe = {}
        for k, t in leaves.items():
            v = t.value.copy()
            if k == name:
                v.flat[flat_index] += delta
            probe[k] = constant(v)
        return float(val(fn(probe)))

    worst = 0.0
    for name, i in coords:
        fplus = eval_at(name, i, epsilon)
        fminus = eval_at(name, i, -epsilon)
        fd = (fplus - fminus) / (2.0 * epsilon)
        a = float(ad[name].flat[i])
        err = abs(a - fd) / max(1.0, abs(a), abs(fd))
        worst = max(worst, err)
    return worst
