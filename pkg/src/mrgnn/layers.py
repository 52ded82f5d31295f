"""Graph-side building blocks: degree-indexed convolution, pooling, gather, LSTM.

Every block works on a :class:`GraphBatch`, the disjoint union of one or
more graphs.  Convolution and pooling never cross graph boundaries, and
gather/global pooling return one row per member graph, so a pair of graphs
goes through the shared (siamese) weights in a single pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, ShapeError, Tensor
from .graph import MolecularGraph, degree_bucket

__all__ = [
    "GraphBatch",
    "DegreeIndexedLinear",
    "GraphGatherLayer",
    "LstmCell",
    "glorot",
    "bucket_linear",
    "weighted_graph_conv",
    "standard_graph_conv",
    "neighborhood_max_pool",
    "graph_gather",
    "global_graph_pool",
    "lstm_step",
    "lstm_unroll",
]


@dataclass(frozen=True)
class GraphBatch:
    """Index structures for a disjoint union of graphs.

    ``groups`` maps each degree bucket present to the node rows in it (all
    graphs together, ascending).  ``segments[s]`` lists the rows of member
    graph ``s``.
    """

    features: np.ndarray
    adjacency: np.ndarray
    pool_index: np.ndarray
    groups: tuple[tuple[int, np.ndarray], ...]
    gather_groups: tuple[tuple[int, tuple[tuple[int, np.ndarray], ...]], ...]
    segments: tuple[np.ndarray, ...]
    d_max: int

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.segments)

    @classmethod
    def from_graphs(cls, items: Sequence[tuple[MolecularGraph, np.ndarray]], d_max: int) -> GraphBatch:
        if not items:
            raise ValueError("a batch needs at least one graph")
        widths = {np.shape(f)[1] for _, f in items}
        if len(widths) != 1:
            raise ShapeError(f"feature widths differ within a batch: {sorted(widths)}")
        feats, buckets, seg_of, segments = [], [], [], []
        nbr_lists: list[list[int]] = []
        offset = 0
        for s, (graph, f) in enumerate(items):
            f = np.asarray(f, dtype=np.float64)
            m = graph.num_nodes
            if m < 1:
                raise ValueError(f"graph {s} is empty")
            if f.shape[0] != m:
                raise ShapeError(f"graph {s}: {f.shape[0]} feature rows for {m} nodes")
            feats.append(f)
            for i in range(m):
                buckets.append(degree_bucket(graph.degree(i), d_max))
                seg_of.append(s)
                nbr_lists.append([offset + i] + [offset + j for j in graph.adjacency[i]])
            segments.append(np.arange(offset, offset + m))
            offset += m

        n = offset
        A = np.zeros((n, n))
        width = max(len(nb) for nb in nbr_lists)
        pool_index = np.empty((n, width), dtype=np.intp)
        for i, nb in enumerate(nbr_lists):
            A[i, nb[1:]] = 1.0
            pool_index[i] = nb + [nb[0]] * (width - len(nb))

        buckets_arr = np.array(buckets)
        seg_arr = np.array(seg_of)
        groups = []
        gather_groups = []
        for b in sorted(set(buckets)):
            rows = np.flatnonzero(buckets_arr == b)
            groups.append((b, rows))
            per_seg = tuple((s, rows[seg_arr[rows] == s]) for s in range(len(items)) if np.any(seg_arr[rows] == s))
            gather_groups.append((b, per_seg))
        return cls(
            features=np.concatenate(feats, axis=0),
            adjacency=A,
            pool_index=pool_index,
            groups=tuple(groups),
            gather_groups=tuple(gather_groups),
            segments=tuple(segments),
            d_max=d_max,
        )

    @classmethod
    def from_graph(cls, graph: MolecularGraph, features: np.ndarray, d_max: int) -> GraphBatch:
        return cls.from_graphs([(graph, features)], d_max)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, int] | None = None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class DegreeIndexedLinear:
    """Per-degree-bucket weights for one convolution layer.

    ``phi[d]`` maps the centre node and ``psi[d]`` the neighbour sum; the
    unweighted (standard) variant has neither ``psi`` nor ``bias``.
    """

    def __init__(self, phi: Sequence[Tensor], psi: Sequence[Tensor] | None, bias: Sequence[Tensor] | None):
        self.phi = list(phi)
        self.psi = list(psi) if psi is not None else None
        self.bias = list(bias) if bias is not None else None
        shapes = {p.shape for p in self.phi}
        if len(shapes) != 1:
            raise ShapeError(f"buckets differ in shape: {sorted(shapes)}")
        if self.psi is not None and len(self.psi) != len(self.phi):
            raise ShapeError("phi and psi bucket counts differ")

    @classmethod
    def create(
        cls, store: ParameterStore, prefix: str, c_in: int, c_out: int, d_max: int,
        rng: np.random.Generator, weighted: bool = True,
    ) -> DegreeIndexedLinear:
        phi, psi, bias = [], [], []
        for d in range(d_max + 1):
            phi.append(store.add(f"{prefix}.phi.{d}", glorot(rng, c_in, c_out)))
            if weighted:
                psi.append(store.add(f"{prefix}.psi.{d}", glorot(rng, c_in, c_out)))
                bias.append(store.add(f"{prefix}.bias.{d}", np.zeros((1, c_out))))
        return cls(phi, psi if weighted else None, bias if weighted else None)

    @classmethod
    def from_arrays(cls, phi, psi=None, bias=None) -> DegreeIndexedLinear:
        def wrap(arrs):
            return None if arrs is None else [Tensor(a, requires_grad=True) for a in arrs]

        return cls(wrap(phi), wrap(psi), wrap(bias))

    @property
    def d_max(self) -> int:
        return len(self.phi) - 1

    @property
    def in_dim(self) -> int:
        return self.phi[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.phi[0].shape[1]

    def num_parameters(self) -> int:
        tensors = self.phi + (self.psi or []) + (self.bias or [])
        return sum(t.data.size for t in tensors)


class GraphGatherLayer:
    def __init__(self, theta: Sequence[Tensor], beta: Sequence[Tensor]):
        self.theta = list(theta)
        self.beta = list(beta)
        if len(self.theta) != len(self.beta) or len({t.shape for t in self.theta}) != 1:
            raise ShapeError("gather buckets must be uniform")

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, c_in: int, c_out: int, d_max: int, rng) -> GraphGatherLayer:
        theta = [store.add(f"{prefix}.theta.{d}", glorot(rng, c_in, c_out)) for d in range(d_max + 1)]
        beta = [store.add(f"{prefix}.beta.{d}", np.zeros((1, c_out))) for d in range(d_max + 1)]
        return cls(theta, beta)

    @classmethod
    def from_arrays(cls, theta, beta) -> GraphGatherLayer:
        return cls([Tensor(a, requires_grad=True) for a in theta], [Tensor(b, requires_grad=True) for b in beta])

    @property
    def out_dim(self) -> int:
        return self.theta[0].shape[1]


class LstmCell:
    """Standard LSTM cell with the four gates fused column-wise.

    Column blocks of ``w_x``, ``w_h`` and ``b`` are, in order, the input,
    forget and output gates and the candidate cell value.
    """

    def __init__(self, w_x: Tensor, w_h: Tensor, b: Tensor):
        h = w_h.shape[0]
        if w_h.shape != (h, 4 * h) or w_x.shape[1] != 4 * h or b.shape != (1, 4 * h):
            raise ShapeError(f"inconsistent LSTM shapes: w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}")
        self.w_x, self.w_h, self.b = w_x, w_h, b

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, w_in: int, w_h: int, rng) -> LstmCell:
        wx = np.concatenate([glorot(rng, w_in, w_h) for _ in range(4)], axis=1)
        wh = np.concatenate([glorot(rng, w_h, w_h) for _ in range(4)], axis=1)
        b = np.zeros((1, 4 * w_h))
        b[0, w_h : 2 * w_h] = 1.0  # forget gate
        return cls(store.add(f"{prefix}.w_x", wx), store.add(f"{prefix}.w_h", wh), store.add(f"{prefix}.b", b))

    @classmethod
    def from_gates(cls, gates: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]) -> LstmCell:
        """Build from per-gate ``(W_x, W_h, b)`` keyed ``"i"``, ``"f"``, ``"o"``, ``"c"``."""
        order = ("i", "f", "o", "c")
        wx = np.concatenate([np.asarray(gates[g][0], float) for g in order], axis=1)
        wh = np.concatenate([np.asarray(gates[g][1], float) for g in order], axis=1)
        b = np.concatenate([np.asarray(gates[g][2], float).reshape(1, -1) for g in order], axis=1)
        return cls(Tensor(wx, True), Tensor(wh, True), Tensor(b, True))

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]


# --- primitives with fused backward rules -------------------------------------


def bucket_linear(
    x: Tensor, groups: Sequence[tuple[int, np.ndarray]], weights: Sequence[Tensor],
    biases: Sequence[Tensor] | None = None,
) -> Tensor:
    """Rows in bucket ``d`` are mapped by ``weights[d]`` (plus ``biases[d]``)."""
    X = x.data
    c_out = weights[0].shape[1]
    if weights[0].shape[0] != X.shape[1]:
        raise ShapeError(f"features of width {X.shape[1]} do not fit bucket weights {weights[0].shape}")
    out = np.empty((X.shape[0], c_out))
    used_w = [weights[b] for b, _ in groups]
    used_b = [biases[b] for b, _ in groups] if biases is not None else []
    for (b, rows), W in zip(groups, used_w):
        out[rows] = X[rows] @ W.data
    for (b, rows), bias in zip(groups, used_b):
        out[rows] += bias.data

    def grad(g):
        dx = np.empty_like(X)
        dws, dbs = [], []
        for (b, rows), W in zip(groups, used_w):
            gr = g[rows]
            dx[rows] = gr @ W.data.T
            dws.append(X[rows].T @ gr)
            if used_b:
                dbs.append(gr.sum(axis=0, keepdims=True))
        return [dx, *dws, *dbs]

    return ad.record(out, (x, *used_w, *used_b), grad)


def weighted_graph_conv(f: Tensor, batch: GraphBatch, layer: DegreeIndexedLinear, activation: bool = True) -> Tensor:
    """``tanh(f_i Phi_d + (sum of neighbour rows) Psi_d + b_d)`` per node, ``d`` its degree bucket."""
    if layer.psi is None or layer.bias is None:
        raise ValueError("weighted convolution needs psi and bias buckets")
    if f.shape[1] != layer.in_dim:
        raise ShapeError(f"features of width {f.shape[1]} do not fit a layer expecting {layer.in_dim}")
    nbr_sum = ad.matmul(Tensor(batch.adjacency), f)
    pre = ad.add(bucket_linear(f, batch.groups, layer.phi, layer.bias), bucket_linear(nbr_sum, batch.groups, layer.psi))
    return ad.tanh(pre) if activation else pre


def standard_graph_conv(f: Tensor, batch: GraphBatch, layer: DegreeIndexedLinear, activation: bool = True) -> Tensor:
    """``tanh((f_i + sum of neighbour rows) W_d)`` with ``W_d`` the layer's ``phi[d]``."""
    if f.shape[1] != layer.in_dim:
        raise ShapeError(f"features of width {f.shape[1]} do not fit a layer expecting {layer.in_dim}")
    nbr_sum = ad.matmul(Tensor(batch.adjacency), f)
    pre = bucket_linear(ad.add(f, nbr_sum), batch.groups, layer.phi)
    return ad.tanh(pre) if activation else pre


def neighborhood_max_pool(f: Tensor, batch: GraphBatch) -> Tensor:
    return ad.neighborhood_max(f, batch.pool_index)


def graph_gather(f: Tensor, batch: GraphBatch, layer: GraphGatherLayer) -> Tensor:
    """One graph-state row per member graph: sum over its nodes of ``f_i Theta_d + beta_d``."""
    X = f.data
    theta0 = layer.theta[0]
    if theta0.shape[0] != X.shape[1]:
        raise ShapeError(f"features of width {X.shape[1]} do not fit gather weights {theta0.shape}")
    n_seg = batch.num_graphs
    out = np.zeros((n_seg, theta0.shape[1]))
    thetas = [layer.theta[b] for b, _ in batch.gather_groups]
    betas = [layer.beta[b] for b, _ in batch.gather_groups]
    sums = []
    for (b, per_seg), th, be in zip(batch.gather_groups, thetas, betas):
        for s, rows in per_seg:
            xs = X[rows].sum(axis=0, keepdims=True)
            sums.append(xs)
            out[s] += (xs @ th.data)[0] + len(rows) * be.data[0]

    def grad(g):
        dx = np.empty_like(X)
        dth, dbe = [], []
        k = 0
        for (b, per_seg), th in zip(batch.gather_groups, thetas):
            gt = np.zeros_like(th.data)
            gb = np.zeros((1, th.shape[1]))
            for s, rows in per_seg:
                gs = g[s : s + 1]
                dx[rows] = gs @ th.data.T
                gt += sums[k].T @ gs
                gb += len(rows) * gs
                k += 1
            dth.append(gt)
            dbe.append(gb)
        return [dx, *dth, *dbe]

    return ad.record(out, (f, *thetas, *betas), grad)


def global_graph_pool(f: Tensor, batch: GraphBatch) -> Tensor:
    """Columnwise max over all nodes, one row per member graph."""
    return ad.segment_max(f, batch.segments)


def lstm_step(cell: LstmCell, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    if x.shape[1] != cell.input_dim or h_prev.shape[1] != cell.hidden_dim:
        raise ShapeError(
            f"LSTM({cell.input_dim}->{cell.hidden_dim}) got input {x.shape} and state {h_prev.shape}"
        )
    n = cell.hidden_dim
    z = ad.add(ad.add(ad.matmul(x, cell.w_x), ad.matmul(h_prev, cell.w_h)), cell.b)
    gates = ad.sigmoid(ad.slice_cols(z, 0, 3 * n))
    cand = ad.tanh(ad.slice_cols(z, 3 * n, 4 * n))
    i = ad.slice_cols(gates, 0, n)
    f = ad.slice_cols(gates, n, 2 * n)
    o = ad.slice_cols(gates, 2 * n, 3 * n)
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, cand))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def lstm_unroll(cell: LstmCell, inputs: Sequence[Tensor]) -> list[Tensor]:
    """Hidden states after each input, starting from all-zero hidden and cell state."""
    rows = inputs[0].shape[0]
    h = Tensor(np.zeros((rows, cell.hidden_dim)))
    c = Tensor(np.zeros((rows, cell.hidden_dim)))
    hs = []
    for x in inputs:
        h, c = lstm_step(cell, h, c, x)
        hs.append(h)
    return hs
