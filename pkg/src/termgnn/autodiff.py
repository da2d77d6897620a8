"""Minimal dense-tensor engine with reverse-mode differentiation.

Values are float64 numpy arrays.  Every operation records its inputs
and a backward rule on the output tensor; `backward(loss)` walks the
tape in reverse topological order and accumulates gradients into every
trainable leaf.  The op set is exactly what the graph/recurrent models
need, including segment primitives (scatter-sum, per-segment softmax,
grouped means) driven by precomputed index plans so that message
passing stays vectorized.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("values", "grad", "parents", "trainable", "needs_grad", "_backward")

    def __init__(self, values, parents=(), backward=None, trainable=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.trainable = trainable
        self.needs_grad = trainable or any(p.needs_grad for p in parents)
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, trainable={self.trainable})"


def tensor(values, trainable=False) -> Tensor:
    return Tensor(values, trainable=trainable)


def _accum(t: Tensor, g) -> None:
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # copy: g may be a view
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every trainable ancestor."""
    if loss.values.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.needs_grad:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for t in params.values() if isinstance(params, dict) else params:
        t.grad = None


# ---------------------------------------------------------------------------
# Index plans for scatter/segment operations


class ScatterPlan:
    """Precomputed incidence structure for vectorized scatter-adds.

    scatter_add(values)[r] == sum of values[e] over all e with idx[e] == r,
    realized as one sparse matmul with a fixed 0/1 incidence matrix so the
    summation order is deterministic and the per-call cost is a single
    compiled pass.
    """

    def __init__(self, indices, n_rows: int):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.n_rows = int(n_rows)
        n = self.indices.size
        self._mat = sp.csr_matrix(
            (np.ones(n), (self.indices, np.arange(n))), shape=(self.n_rows, n), dtype=np.float64
        )
        self.perm = np.argsort(self.indices, kind="stable")
        sorted_idx = self.indices[self.perm]
        if n:
            self.starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
            self.present = sorted_idx[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.present = np.zeros(0, dtype=np.int64)

    def scatter_add(self, values: np.ndarray) -> np.ndarray:
        return self._mat @ values

    def segment_max(self, values: np.ndarray) -> np.ndarray:
        out = np.full(self.n_rows, -np.inf, dtype=np.float64)
        if self.indices.size:
            out[self.present] = np.maximum.reduceat(values[self.perm], self.starts)
        return out


class EdgeAggregator:
    """Weighted neighbor aggregation over a fixed edge structure.

    For edges e = (src_e -> dst_e) with per-edge weights w,
    aggregate(w, Z)[i] = sum over incoming e of w_e * Z[src_e].  The
    adjacency sparsity is fixed at construction; each call only swaps
    the weight data in, so the whole aggregation is one sparse matmul.
    Requires (src, dst) pairs to be unique.
    """

    def __init__(self, src, dst, n_nodes: int):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.n_nodes = int(n_nodes)
        n_edges = self.src.size
        order = np.arange(1, n_edges + 1, dtype=np.float64)  # 1-based so no entry is pruned as zero
        mat = sp.csr_matrix((order, (self.dst, self.src)), shape=(self.n_nodes, self.n_nodes))
        if mat.nnz != n_edges:
            raise ValueError("EdgeAggregator needs unique (src, dst) pairs")
        self._mat = mat
        self._perm = mat.data.astype(np.int64) - 1
        mat_t = sp.csr_matrix((order, (self.src, self.dst)), shape=(self.n_nodes, self.n_nodes))
        self._mat_t = mat_t
        self._perm_t = mat_t.data.astype(np.int64) - 1

    def aggregate(self, weights: np.ndarray, Z: np.ndarray) -> np.ndarray:
        self._mat.data = weights[self._perm]
        return self._mat @ Z

    def aggregate_transpose(self, weights: np.ndarray, G: np.ndarray) -> np.ndarray:
        self._mat_t.data = weights[self._perm_t]
        return self._mat_t @ G


def edge_weighted_aggregate(agg: EdgeAggregator, w: Tensor, z: Tensor) -> Tensor:
    """out[i] = sum over incoming edges e of w_e * z[src_e]."""
    if w.values.ndim != 1 or w.values.shape[0] != agg.src.size:
        raise ValueError("edge weights must be one value per edge")
    out = Tensor(agg.aggregate(w.values, z.values), parents=(w, z))

    def bw(g):
        _accum(z, agg.aggregate_transpose(w.values, g))
        if w.needs_grad:
            _accum(w, np.einsum("ij,ij->i", g[agg.dst], z.values[agg.src]))

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# Core ops


def _check_2d(a, name):
    if a.values.ndim != 2:
        raise ValueError(f"{name} expects a matrix, got shape {a.values.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d(a, "matmul")
    _check_2d(b, "matmul")
    if a.values.shape[1] != b.values.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.values.shape} @ {b.values.shape}")
    out = Tensor(a.values @ b.values, parents=(a, b))

    def bw(g):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    out._backward = bw
    return out


def matvec(x: Tensor, v: Tensor) -> Tensor:
    """(N, K) @ (K,) -> (N,)"""
    _check_2d(x, "matvec")
    if v.values.ndim != 1 or x.values.shape[1] != v.values.shape[0]:
        raise ValueError(f"matvec shape mismatch: {x.values.shape} @ {v.values.shape}")
    out = Tensor(x.values @ v.values, parents=(x, v))

    def bw(g):
        _accum(x, np.outer(g, v.values))
        _accum(v, g @ x.values)

    out._backward = bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a row vector b added to every row of a."""
    row_broadcast = a.values.ndim == 2 and b.values.ndim == 1 and a.values.shape[1] == b.values.shape[0]
    if not row_broadcast and a.values.shape != b.values.shape:
        raise ValueError(f"add shape mismatch: {a.values.shape} + {b.values.shape}")
    out = Tensor(a.values + b.values, parents=(a, b))

    def bw(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0) if row_broadcast else g)

    out._backward = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ValueError(f"sub shape mismatch: {a.values.shape} - {b.values.shape}")
    out = Tensor(a.values - b.values, parents=(a, b))

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ValueError(f"mul shape mismatch: {a.values.shape} * {b.values.shape}")
    out = Tensor(a.values * b.values, parents=(a, b))

    def bw(g):
        _accum(a, g * b.values)
        _accum(b, g * a.values)

    out._backward = bw
    return out


def affine(t: Tensor, scale: float, shift: float) -> Tensor:
    out = Tensor(scale * t.values + shift, parents=(t,))
    out._backward = lambda g: _accum(t, scale * g)
    return out


def scale_rows(x: Tensor, v: Tensor) -> Tensor:
    """Multiply row i of x by v[i]."""
    _check_2d(x, "scale_rows")
    if v.values.ndim != 1 or v.values.shape[0] != x.values.shape[0]:
        raise ValueError(f"scale_rows shape mismatch: {x.values.shape} by {v.values.shape}")
    out = Tensor(x.values * v.values[:, None], parents=(x, v))

    def bw(g):
        _accum(x, g * v.values[:, None])
        _accum(v, (g * x.values).sum(axis=1))

    out._backward = bw
    return out


def relu(t: Tensor) -> Tensor:
    mask = t.values > 0
    out = Tensor(np.where(mask, t.values, 0.0), parents=(t,))
    out._backward = lambda g: _accum(t, g * mask)
    return out


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    mask = t.values > 0
    out = Tensor(np.where(mask, t.values, slope * t.values), parents=(t,))
    out._backward = lambda g: _accum(t, g * np.where(mask, 1.0, slope))
    return out


def tanh(t: Tensor) -> Tensor:
    val = np.tanh(t.values)
    out = Tensor(val, parents=(t,))
    out._backward = lambda g: _accum(t, g * (1.0 - val * val))
    return out


def sigmoid(t: Tensor) -> Tensor:
    x = t.values
    val = np.empty_like(x)
    pos = x >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    val[~pos] = ex / (1.0 + ex)
    out = Tensor(val, parents=(t,))
    out._backward = lambda g: _accum(t, g * val * (1.0 - val))
    return out


def slice_vec(v: Tensor, start: int, stop: int) -> Tensor:
    if v.values.ndim != 1:
        raise ValueError("slice_vec expects a vector")
    out = Tensor(v.values[start:stop].copy(), parents=(v,))

    def bw(g):
        full = np.zeros_like(v.values)
        full[start:stop] = g
        _accum(v, full)

    out._backward = bw
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation of two matrices with equal row counts."""
    _check_2d(a, "concat")
    _check_2d(b, "concat")
    if a.values.shape[0] != b.values.shape[0]:
        raise ValueError(f"concat row mismatch: {a.values.shape} | {b.values.shape}")
    na = a.values.shape[1]
    out = Tensor(np.concatenate([a.values, b.values], axis=1), parents=(a, b))

    def bw(g):
        _accum(a, g[:, :na])
        _accum(b, g[:, na:])

    out._backward = bw
    return out


def gather_rows(x: Tensor, indices: np.ndarray, plan: ScatterPlan) -> Tensor:
    """out[e] = x[indices[e]]; plan must be a ScatterPlan over indices."""
    out = Tensor(x.values[indices], parents=(x,))
    out._backward = lambda g: _accum(x, plan.scatter_add(g))
    return out


def segment_sum(x: Tensor, plan: ScatterPlan) -> Tensor:
    """out[r] = sum of rows of x whose plan index equals r."""
    out = Tensor(plan.scatter_add(x.values), parents=(x,))
    out._backward = lambda g: _accum(x, g[plan.indices])
    return out


def softmax_over_segments(scores: Tensor, plan: ScatterPlan) -> Tensor:
    """Softmax of a score vector within each segment of the plan.

    Entries sharing a plan index form one segment; each segment's outputs
    are positive and sum to 1.
    """
    if scores.values.ndim != 1:
        raise ValueError("softmax_over_segments expects a vector of scores")
    s = scores.values
    m = plan.segment_max(s)[plan.indices]
    e = np.exp(s - m)
    z = plan.scatter_add(e)[plan.indices]
    alpha = e / z
    out = Tensor(alpha, parents=(scores,))

    def bw(g):
        inner = plan.scatter_add(alpha * g)[plan.indices]
        _accum(scores, alpha * (g - inner))

    out._backward = bw
    return out


def mean_rows_by_group(x: Tensor, plan: ScatterPlan) -> Tensor:
    """Per-group mean of rows; group of row i is plan.indices[i]."""
    _check_2d(x, "mean_rows_by_group")
    counts = np.bincount(plan.indices, minlength=plan.n_rows).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("every group must contain at least one row")
    out = Tensor(plan.scatter_add(x.values) / counts[:, None], parents=(x,))
    out._backward = lambda g: _accum(x, g[plan.indices] / counts[plan.indices][:, None])
    return out


def softmax_rows(x: Tensor) -> Tensor:
    _check_2d(x, "softmax_rows")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, parents=(x,))

    def bw(g):
        _accum(x, p * (g - (g * p).sum(axis=1, keepdims=True)))

    out._backward = bw
    return out


def select_column(x: Tensor, j: int) -> Tensor:
    _check_2d(x, "select_column")
    out = Tensor(x.values[:, j].copy(), parents=(x,))

    def bw(g):
        full = np.zeros_like(x.values)
        full[:, j] = g
        _accum(x, full)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# Losses

PROB_CLAMP = 1e-7


def cross_entropy(y: np.ndarray, p: Tensor) -> Tensor:
    """Mean binary cross-entropy of probabilities p against labels y in {0,1}.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; the gradient is that of
    the unclamped formula evaluated at the clamped value, so saturated
    predictions keep a bounded, correctly signed gradient.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.values.shape:
        raise ValueError(f"cross_entropy shape mismatch: {y.shape} vs {p.values.shape}")
    pc = np.clip(p.values, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = max(y.size, 1)
    val = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n
    out = Tensor(np.float64(val), parents=(p,))
    out._backward = lambda g: _accum(p, g * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n)
    return out


def focal_loss(y: np.ndarray, p: Tensor, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Mean focal loss: -alpha_t * (1 - p_t)^gamma * log(p_t).

    p_t is p for positive labels and 1-p otherwise; alpha_t is alpha for
    positives and 1-alpha otherwise.  gamma=0, alpha=0.5 reduces to half
    the cross-entropy.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.values.shape:
        raise ValueError(f"focal_loss shape mismatch: {y.shape} vs {p.values.shape}")
    pc = np.clip(p.values, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pt = np.where(y == 1.0, pc, 1.0 - pc)
    at = np.where(y == 1.0, alpha, 1.0 - alpha)
    n = max(y.size, 1)
    one_minus = 1.0 - pt
    val = (at * one_minus**gamma * -np.log(pt)).sum() / n
    out = Tensor(np.float64(val), parents=(p,))

    def bw(g):
        # d/dp_t of -(1-p_t)^g log(p_t), then chain through p_t = +-p
        if gamma == 0.0:
            d_pt = -1.0 / pt
        else:
            d_pt = gamma * one_minus ** (gamma - 1.0) * np.log(pt) - one_minus**gamma / pt
        sign = np.where(y == 1.0, 1.0, -1.0)
        _accum(p, g * at * d_pt * sign / n)

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# Initialization and optimization


def glorot_uniform_init(shape, seed: int) -> Tensor:
    """Trainable tensor drawn uniformly from +-sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(shape)
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        raise ValueError(f"unsupported shape {shape}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-limit, limit, size=shape), trainable=True)


def zeros_init(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), trainable=True)


class AdamState:
    """Per-parameter moment estimates for the Adam update rule."""

    def __init__(self, params: dict[str, Tensor], learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.values) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.values) for k, t in params.items()}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.values)
        if g.shape != p.values.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.values.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def apply_grads(params: dict[str, Tensor], state: AdamState) -> None:
    """Adam step using the gradients accumulated on the tensors."""
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.values)) for k, t in params.items()}
    adam_step(params, grads, state)


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(f, params: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    The error per parameter tensor is ||g_ad - g_fd|| / max(||g_ad||,
    ||g_fd||, 1e-12); the maximum over tensors is returned.
    """
    zero_grads(params)
    loss = f()
    backward(loss)
    analytic = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.values)) for k, t in params.items()
    }
    worst = 0.0
    for k, t in params.items():
        flat = t.values.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().values)
            flat[i] = orig - eps
            lo = float(f().values)
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * eps)
        fd = fd.reshape(t.values.shape)
        num = np.linalg.norm(analytic[k] - fd)
        den = max(np.linalg.norm(analytic[k]), np.linalg.norm(fd), 1e-12)
        worst = max(worst, num / den)
    return worst
