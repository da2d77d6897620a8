"""Graph and recurrent models for termination estimation.

Two layer families share one message-passing core:

* graph convolution: h_i' = relu(b + sum_j h_j W / c_ij) with the
  degree normalization c_ij = sqrt(|N(i)|) * sqrt(|N(j)|), neighborhoods
  including the self-loop;
* graph attention: z = W h, per-edge score e_ij = leaky_relu(a . (z_i | z_j)),
  softmax over each node's incoming edges, h_i' = relu(sum_j alpha_ij z_j).

Classifiers stack four graph layers, mean the node features per graph
and finish with three dense layers and a softmax over (nonterminating,
terminating).  Segmenters keep per-node features and project them to a
single confidence through a logistic.  Vanilla RNN and GRU baselines
consume the per-line token sequence instead of the graph.

Input features are one-hot, so the first layer's h W is a plain row
lookup of W; the models exploit that without changing the math.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import graphenc

HIDDEN_DIM = 64
N_GRAPH_LAYERS = 4
N_DENSE_LAYERS = 3
LEAKY_SLOPE = 0.2
RECURRENT_HIDDEN = 128
N_CLASSES = 2  # index 0: nonterminating, index 1: terminating

MODEL_KINDS = ("gcn-clf", "gat-clf", "gcn-seg", "gat-seg", "rnn", "gru")


class NoAttentionError(Exception):
    """Raised when attention is requested from a model without GAT layers."""


class ModelFormatError(Exception):
    pass


@dataclass
class GcnLayerParams:
    W: ad.Tensor
    b: ad.Tensor


@dataclass
class GatLayerParams:
    W: ad.Tensor
    a: ad.Tensor  # attention vector, length 2 * out_dim


@dataclass
class DenseParams:
    W: ad.Tensor
    b: ad.Tensor


@dataclass
class AttentionRecord:
    """Raw and normalized attention of one GAT layer, per directed edge."""

    src: np.ndarray
    dst: np.ndarray
    raw: np.ndarray
    alpha: np.ndarray

    def alpha_of(self) -> dict[tuple[int, int], float]:
        return {(int(s), int(d)): float(a) for s, d, a in zip(self.src, self.dst, self.alpha)}


class _Plan:
    """Cached index plans and coefficients for one (batched) graph."""

    def __init__(self, graph):
        src, dst = graph.directed_edges()
        self.src = src
        self.dst = dst
        self.n_nodes = graph.n_nodes
        self.agg = ad.EdgeAggregator(src, dst, graph.n_nodes)
        self.dst_plan = ad.ScatterPlan(dst, graph.n_nodes)
        self.src_plan = ad.ScatterPlan(src, graph.n_nodes)
        deg = graph.degrees()
        self.gcn_coef = ad.Tensor(1.0 / np.sqrt(deg[src] * deg[dst]))
        self.token_plan = ad.ScatterPlan(graph.token_indices, graph.vocab_size)
        self.tokens = graph.token_indices
        if hasattr(graph, "graph_id"):
            self.group_plan = ad.ScatterPlan(graph.graph_id, graph.n_graphs)
        else:
            self.group_plan = ad.ScatterPlan(np.zeros(graph.n_nodes, dtype=np.int64), 1)


def plan_for(graph) -> _Plan:
    plan = getattr(graph, "_mp_plan", None)
    if plan is None:
        plan = _Plan(graph)
        graph._mp_plan = plan
    return plan


def _project(H, plan: _Plan, W: ad.Tensor) -> ad.Tensor:
    """h W for every node; one-hot first layer becomes a row lookup."""
    if H is None:
        return ad.gather_rows(W, plan.tokens, plan.token_plan)
    return ad.matmul(H, W)


def gcn_layer(H, plan: _Plan, params: GcnLayerParams, activation: bool = True) -> ad.Tensor:
    """Degree-normalized neighborhood sum followed by bias and ReLU."""
    hw = _project(H, plan, params.W)
    agg = ad.add(ad.edge_weighted_aggregate(plan.agg, plan.gcn_coef, hw), params.b)
    return ad.relu(agg) if activation else agg


def gat_layer(H, plan: _Plan, params: GatLayerParams, activation: bool = True):
    """Attention-weighted neighborhood sum; returns (H', AttentionRecord).

    The edge score a . (z_i | z_j) is evaluated as the sum of two
    per-node projections (the two halves of a), which avoids building
    per-edge concatenations.
    """
    z = _project(H, plan, params.W)
    d = params.W.values.shape[1]
    left = ad.matvec(z, ad.slice_vec(params.a, 0, d))  # receiving-node half
    right = ad.matvec(z, ad.slice_vec(params.a, d, 2 * d))
    scores = ad.add(
        ad.gather_rows(left, plan.dst, plan.dst_plan),
        ad.gather_rows(right, plan.src, plan.src_plan),
    )
    e = ad.leaky_relu(scores, LEAKY_SLOPE)
    alpha = ad.softmax_over_segments(e, plan.dst_plan)
    out = ad.edge_weighted_aggregate(plan.agg, alpha, z)
    if activation:
        out = ad.relu(out)
    record = AttentionRecord(src=plan.src, dst=plan.dst, raw=e.values.copy(), alpha=alpha.values.copy())
    return out, record


def _dense_chain(x, layers):
    for d in layers[:-1]:
        x = ad.relu(ad.add(ad.matmul(x, d.W), d.b))
    last = layers[-1]
    return ad.add(ad.matmul(x, last.W), last.b)


class _ModelBase:
    kind = ""

    def parameters(self) -> dict[str, ad.Tensor]:
        raise NotImplementedError

    def hyperparams(self) -> dict:
        raise NotImplementedError


class GraphClassifier(_ModelBase):
    """Four graph layers, per-graph mean readout, three dense layers, softmax."""

    def __init__(self, vocab_size, hidden_dim=HIDDEN_DIM, n_layers=N_GRAPH_LAYERS, seed=0, attention=False):
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.attention = attention
        self.kind = "gat-clf" if attention else "gcn-clf"
        self.last_attention: AttentionRecord | None = None
        self.graph_layers = []
        k = 0
        for i in range(n_layers):
            in_dim = vocab_size if i == 0 else hidden_dim
            W = ad.glorot_uniform_init((in_dim, hidden_dim), seed * 1000 + k)
            k += 1
            if attention:
                a = ad.glorot_uniform_init((2 * hidden_dim,), seed * 1000 + k)
                k += 1
                self.graph_layers.append(GatLayerParams(W=W, a=a))
            else:
                self.graph_layers.append(GcnLayerParams(W=W, b=ad.zeros_init((hidden_dim,))))
        self.dense = []
        dims = [hidden_dim] * N_DENSE_LAYERS + [N_CLASSES]
        for i in range(N_DENSE_LAYERS):
            W = ad.glorot_uniform_init((dims[i], dims[i + 1]), seed * 1000 + k)
            k += 1
            self.dense.append(DenseParams(W=W, b=ad.zeros_init((dims[i + 1],))))

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.graph_layers):
            out[f"graph{i}.W"] = layer.W
            if self.attention:
                out[f"graph{i}.a"] = layer.a
            else:
                out[f"graph{i}.b"] = layer.b
        for i, d in enumerate(self.dense):
            out[f"dense{i}.W"] = d.W
            out[f"dense{i}.b"] = d.b
        return out

    def hyperparams(self):
        return {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "n_layers": self.n_layers,
            "leaky_slope": LEAKY_SLOPE if self.attention else None,
        }

    def forward(self, graph) -> ad.Tensor:
        plan = plan_for(graph)
        H = None
        for layer in self.graph_layers:
            if self.attention:
                H, record = gat_layer(H, plan, layer)
                self.last_attention = record
            else:
                H = gcn_layer(H, plan, layer)
        pooled = ad.mean_rows_by_group(H, plan.group_plan)
        return ad.softmax_rows(_dense_chain(pooled, self.dense))


class GraphSegmenter(_ModelBase):
    """Four graph layers and a per-node logistic confidence head."""

    def __init__(self, vocab_size, hidden_dim=HIDDEN_DIM, n_layers=N_GRAPH_LAYERS, seed=0, attention=False):
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.attention = attention
        self.kind = "gat-seg" if attention else "gcn-seg"
        self.last_attention: AttentionRecord | None = None
        self.graph_layers = []
        k = 0
        for i in range(n_layers):
            in_dim = vocab_size if i == 0 else hidden_dim
            W = ad.glorot_uniform_init((in_dim, hidden_dim), seed * 1000 + 500 + k)
            k += 1
            if attention:
                a = ad.glorot_uniform_init((2 * hidden_dim,), seed * 1000 + 500 + k)
                k += 1
                self.graph_layers.append(GatLayerParams(W=W, a=a))
            else:
                self.graph_layers.append(GcnLayerParams(W=W, b=ad.zeros_init((hidden_dim,))))
        self.proj = DenseParams(
            W=ad.glorot_uniform_init((hidden_dim, 1), seed * 1000 + 500 + k),
            b=ad.zeros_init((1,)),
        )

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.graph_layers):
            out[f"graph{i}.W"] = layer.W
            if self.attention:
                out[f"graph{i}.a"] = layer.a
            else:
                out[f"graph{i}.b"] = layer.b
        out["proj.W"] = self.proj.W
        out["proj.b"] = self.proj.b
        return out

    def hyperparams(self):
        return {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "n_layers": self.n_layers,
            "leaky_slope": LEAKY_SLOPE if self.attention else None,
        }

    def forward(self, graph) -> ad.Tensor:
        """Per-node confidence in (0, 1); prediction mask is conf >= 0.5."""
        plan = plan_for(graph)
        H = None
        for layer in self.graph_layers:
            if self.attention:
                H, record = gat_layer(H, plan, layer)
                self.last_attention = record
            else:
                H = gcn_layer(H, plan, layer)
        logits = ad.add(ad.matmul(H, self.proj.W), self.proj.b)
        return ad.sigmoid(ad.select_column(logits, 0))


class RecurrentClassifier(_ModelBase):
    """Vanilla RNN or GRU over the one-hot instruction sequence."""

    def __init__(self, vocab_size, hidden_dim=RECURRENT_HIDDEN, seed=0, variant="gru"):
        if variant not in ("rnn", "gru"):
            raise ValueError(f"unknown recurrent variant {variant!r}")
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.variant = variant
        self.kind = variant
        base = seed * 1000 + 7000
        gates = ["h"] if variant == "rnn" else ["r", "z", "n"]
        self.gates = {}
        k = 0
        for gate in gates:
            Wx = ad.glorot_uniform_init((vocab_size, hidden_dim), base + k)
            k += 1
            Wh = ad.glorot_uniform_init((hidden_dim, hidden_dim), base + k)
            k += 1
            self.gates[gate] = (Wx, Wh, ad.zeros_init((hidden_dim,)))
        self.out = DenseParams(
            W=ad.glorot_uniform_init((hidden_dim, N_CLASSES), base + k),
            b=ad.zeros_init((N_CLASSES,)),
        )

    def parameters(self):
        out = {}
        for gate, (Wx, Wh, b) in self.gates.items():
            out[f"{gate}.Wx"] = Wx
            out[f"{gate}.Wh"] = Wh
            out[f"{gate}.b"] = b
        out["out.W"] = self.out.W
        out["out.b"] = self.out.b
        return out

    def hyperparams(self):
        return {"vocab_size": self.vocab_size, "hidden_dim": self.hidden_dim, "variant": self.variant}

    def _step(self, h: ad.Tensor, tok: np.ndarray) -> ad.Tensor:
        plan = ad.ScatterPlan(tok, self.vocab_size)

        def gate_pre(gate):
            Wx, Wh, b = self.gates[gate]
            return ad.add(ad.add(ad.gather_rows(Wx, tok, plan), ad.matmul(h, Wh)), b)

        if self.variant == "rnn":
            return ad.tanh(gate_pre("h"))
        r = ad.sigmoid(gate_pre("r"))
        z = ad.sigmoid(gate_pre("z"))
        Wx, Wh, b = self.gates["n"]
        hn = ad.add(ad.matmul(h, Wh), b)
        n = ad.tanh(ad.add(ad.gather_rows(Wx, tok, plan), ad.mul(r, hn)))
        return ad.add(ad.mul(z, h), ad.mul(ad.affine(z, -1.0, 1.0), n))

    def forward_sequences(self, sequences: list[np.ndarray]) -> ad.Tensor:
        """Class probabilities (one row per sequence), batched over time."""
        if not sequences or any(len(s) == 0 for s in sequences):
            raise ValueError("recurrent models need non-empty sequences")
        n = len(sequences)
        max_t = max(len(s) for s in sequences)
        toks = np.zeros((n, max_t), dtype=np.int64)
        mask = np.zeros((n, max_t), dtype=np.float64)
        for i, s in enumerate(sequences):
            toks[i, : len(s)] = s
            mask[i, : len(s)] = 1.0
        h = ad.Tensor(np.zeros((n, self.hidden_dim)))
        for t in range(max_t):
            h_new = self._step(h, toks[:, t])
            if mask[:, t].min() == 1.0:
                h = h_new
            else:
                m = ad.Tensor(mask[:, t])
                h = ad.add(ad.scale_rows(h_new, m), ad.scale_rows(h, ad.affine(m, -1.0, 1.0)))
        return ad.softmax_rows(ad.add(ad.matmul(h, self.out.W), self.out.b))

    def forward(self, sequences) -> ad.Tensor:
        return self.forward_sequences(sequences)


# ---------------------------------------------------------------------------
# Inference helpers


def classify(graph, model: GraphClassifier) -> np.ndarray:
    """(p_nonterminating, p_terminating) per graph."""
    if graph.vocab_size != model.vocab_size:
        raise ValueError("graph was encoded with a different vocabulary than the model")
    probs = model.forward(graphenc.as_batch(graph)).values
    return probs[0] if not isinstance(graph, graphenc.BatchedGraph) else probs


def segment(graph, model: GraphSegmenter) -> np.ndarray:
    """Per-node confidence that the node causes nontermination."""
    if graph.vocab_size != model.vocab_size:
        raise ValueError("graph was encoded with a different vocabulary than the model")
    return model.forward(graphenc.as_batch(graph)).values


def recurrent_classify(tokens, model: RecurrentClassifier) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("recurrent_classify expects a non-empty token index sequence")
    return model.forward_sequences([tokens]).values[0]


def extract_attention(graph: graphenc.FeatureGraph, model):
    """Last GAT layer's attention plus a per-tree-edge display score.

    The display score of an undirected edge is the larger of its two
    directed attention values, min-max normalized to [0, 1] across the
    graph (a single edge, or all-equal scores, normalize to 1.0).
    """
    if not getattr(model, "attention", False):
        raise NoAttentionError(f"model kind {model.kind!r} has no attention layers")
    model.forward(graphenc.as_batch(graph))
    record = model.last_attention
    directed = record.alpha_of()
    edges = graph.tree_edges()
    raw_scores = {e: max(directed[(e[0], e[1])], directed[(e[1], e[0])]) for e in edges}
    if raw_scores:
        lo = min(raw_scores.values())
        hi = max(raw_scores.values())
        if hi > lo:
            display = {e: (s - lo) / (hi - lo) for e, s in raw_scores.items()}
        else:
            display = {e: 1.0 for e in raw_scores}
    else:
        display = {}
    return record, display


# ---------------------------------------------------------------------------
# Persistence: length-prefixed binary with a JSON header

_MAGIC = b"TGNN"
_VERSION = 1


def build_model(kind: str, vocab_size: int, hidden_dim=None, n_layers=N_GRAPH_LAYERS, seed: int = 0):
    if kind == "gcn-clf":
        return GraphClassifier(vocab_size, hidden_dim or HIDDEN_DIM, n_layers, seed, attention=False)
    if kind == "gat-clf":
        return GraphClassifier(vocab_size, hidden_dim or HIDDEN_DIM, n_layers, seed, attention=True)
    if kind == "gcn-seg":
        return GraphSegmenter(vocab_size, hidden_dim or HIDDEN_DIM, n_layers, seed, attention=False)
    if kind == "gat-seg":
        return GraphSegmenter(vocab_size, hidden_dim or HIDDEN_DIM, n_layers, seed, attention=True)
    if kind in ("rnn", "gru"):
        return RecurrentClassifier(vocab_size, hidden_dim or RECURRENT_HIDDEN, seed=seed, variant=kind)
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model, path, vocab_file: str, vocab_sha256: str, extra: dict | None = None) -> None:
    params = model.parameters()
    header = {
        "format": "termgnn-model",
        "version": _VERSION,
        "kind": model.kind,
        "vocab": {"file": vocab_file, "sha256": vocab_sha256},
        "hyperparams": model.hyperparams(),
        "extra": extra or {},
        "tensors": [{"name": k, "shape": list(t.values.shape)} for k, t in params.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for t in params.values():
            fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())


def load_model(path):
    """Returns (model, header).  Raises ModelFormatError on a bad file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<Q", data, 8)
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header") from exc
    hp = header["hyperparams"]
    model = build_model(header["kind"], hp["vocab_size"], hp.get("hidden_dim"), hp.get("n_layers", N_GRAPH_LAYERS))
    params = model.parameters()
    offset = 16 + hlen
    for spec in header["tensors"]:
        name = spec["name"]
        shape = tuple(spec["shape"])
        if name not in params:
            raise ModelFormatError(f"{path}: unexpected tensor {name!r}")
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        if params[name].values.shape != shape:
            raise ModelFormatError(f"{path}: shape mismatch for {name!r}")
        params[name].values = raw.reshape(shape).astype(np.float64)
    if offset != len(data):
        raise ModelFormatError(f"{path}: trailing bytes")
    return model, header
