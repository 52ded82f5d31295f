"""Random graphs and tiny models shared by several test files."""

from __future__ import annotations

import numpy as np

from mrgnn import autodiff as ad
from mrgnn.graph import AtomNode, BondKind, MolecularGraph
from mrgnn.model import ModelConfig, MrGnnModel, forward_pair, pair_batch

from oracles import straight_line_forward


def random_graph(rng: np.random.Generator, n: int, extra_edges: int = 2) -> MolecularGraph:
    """Random spanning tree on ``n`` carbons plus a few extra edges."""
    edges = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    for _ in range(extra_edges):
        if n < 3:
            break
        i, j = sorted(rng.choice(n, 2, replace=False).tolist())
        edges.add((i, j))
    return MolecularGraph.from_bonds([AtomNode("C") for _ in range(n)], [(i, j, BondKind.SINGLE) for i, j in sorted(edges)])


def random_item(rng, lo=2, hi=6, c=3):
    g = random_graph(rng, int(rng.integers(lo, hi + 1)))
    return g, rng.normal(size=(g.num_nodes, c))


def tiny_config(**kw) -> ModelConfig:
    base = dict(in_dim=3, conv_widths=(3, 3), c_g=2, c_k=3, k=2, d_max=3)
    base.update(kw)
    return ModelConfig(**base)


def randomize(model: MrGnnModel, rng: np.random.Generator, scale: float = 0.6) -> MrGnnModel:
    for _, p in model.params.items():
        p.data[...] = rng.normal(scale=scale, size=p.shape)
    return model


def weights(model: MrGnnModel) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in model.params.items()}


def adjacency(g: MolecularGraph) -> list[list[int]]:
    return [list(n) for n in g.adjacency]


def oracle_for(model: MrGnnModel, gx, gy) -> dict[str, np.ndarray]:
    cfg = model.config
    return straight_line_forward(
        weights(model), adjacency(gx[0]), gx[1], adjacency(gy[0]), gy[1],
        T=cfg.num_layers, d_max=cfg.d_max, slstm=cfg.use_slstm, ilstm=cfg.use_ilstm,
        weighted=cfg.weighted_conv, linear=cfg.linear_conv,
    )


def pair_loss(model: MrGnnModel, batch, label: int) -> float:
    probs = forward_pair(model, batch).probs
    return ad.cross_entropy(probs, np.eye(model.config.k)[label]).item()


def analytic_grads(model: MrGnnModel, batch, label: int) -> dict[str, np.ndarray]:
    with ad.Tape() as tape:
        probs = forward_pair(model, batch).probs
        loss = ad.cross_entropy(probs, np.eye(model.config.k)[label])
    return ad.backward(tape, loss, model.params)


def max_gradient_error(model: MrGnnModel, gx, gy, label: int, eps: float = 1e-5) -> float:
    """Worst relative error over every scalar parameter against central differences."""
    from oracles import central_difference, relative_error

    batch = pair_batch(gx, gy, model.config.d_max)
    grads = analytic_grads(model, batch, label)
    worst = 0.0
    for name, p in model.params.items():
        numeric = central_difference(lambda: pair_loss(model, batch, label), p.data, eps)
        worst = max(worst, relative_error(grads.get(name, np.zeros_like(p.data)), numeric))
    return worst
