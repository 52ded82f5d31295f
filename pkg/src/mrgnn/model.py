"""The pairwise MR-GNN model: configuration, forward pass and checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, ShapeError, Tensor
from .graph import FeaturizerConfig, MolecularGraph
from .layers import (
    DegreeIndexedLinear,
    GraphBatch,
    GraphGatherLayer,
    LstmCell,
    global_graph_pool,
    glorot,
    graph_gather,
    lstm_unroll,
    neighborhood_max_pool,
    standard_graph_conv,
    weighted_graph_conv,
)

__all__ = [
    "ABLATIONS",
    "ModelConfig",
    "MrGnnModel",
    "ForwardTrace",
    "forward_pair",
    "pair_batch",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

ABLATIONS = ("no-ilstm", "no-slstm", "no-wgcl", "no-lstms")


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int = 75
    conv_widths: tuple[int, ...] = (384, 384, 384)
    c_g: int = 128
    c_k: int = 64
    k: int = 2
    d_max: int = 10
    use_slstm: bool = True
    use_ilstm: bool = True
    weighted_conv: bool = True
    linear_conv: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.conv_widths)

    @property
    def c_f(self) -> int:
        return self.conv_widths[-1]

    @property
    def uses_gather(self) -> bool:
        return self.use_slstm or self.use_ilstm

    @property
    def head_input_dim(self) -> int:
        per_graph = self.c_f + (self.c_g if self.use_slstm else 0)
        return 2 * per_graph + (2 * self.c_g if self.use_ilstm else 0)

    def with_ablation(self, name: str | None) -> ModelConfig:
        if name is None:
            return self
        if name == "no-ilstm":
            return replace(self, use_ilstm=False)
        if name == "no-slstm":
            return replace(self, use_slstm=False)
        if name == "no-wgcl":
            return replace(self, weighted_conv=False)
        if name == "no-lstms":
            return replace(self, use_ilstm=False, use_slstm=False)
        raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        d["conv_widths"] = tuple(int(w) for w in d["conv_widths"])
        return cls(**d)


class MrGnnModel:
    """Parameters and layer objects for one configuration.

    Graph-side layers (convolutions, gathers, S-LSTM) form one set shared by
    both members of a pair.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.k < 2:
            raise ValueError("need at least two labels")
        if config.num_layers < 1:
            raise ValueError("need at least one convolution layer")
        self.config = config
        self.params = ParameterStore()
        rng = np.random.default_rng(seed)
        cfg = config

        widths = (cfg.in_dim, *cfg.conv_widths)
        self.convs = [
            DegreeIndexedLinear.create(self.params, f"conv.{t}", widths[t], widths[t + 1], cfg.d_max, rng, cfg.weighted_conv)
            for t in range(cfg.num_layers)
        ]
        self.gathers = (
            [GraphGatherLayer.create(self.params, f"gather.{t}", widths[t], cfg.c_g, cfg.d_max, rng) for t in range(cfg.num_layers + 1)]
            if cfg.uses_gather
            else []
        )
        self.slstm = LstmCell.create(self.params, "slstm", cfg.c_g, cfg.c_g, rng) if cfg.use_slstm else None
        self.ilstm = LstmCell.create(self.params, "ilstm", 2 * cfg.c_g, 2 * cfg.c_g, rng) if cfg.use_ilstm else None
        self.w1 = self.params.add("head.w1", glorot(rng, cfg.head_input_dim, cfg.c_k))
        self.b1 = self.params.add("head.b1", np.zeros((1, cfg.c_k)))
        self.w2 = self.params.add("head.w2", glorot(rng, cfg.c_k, cfg.k))
        self.b2 = self.params.add("head.b2", np.zeros((1, cfg.k)))

        expected = 2 * cfg.c_f + (2 * cfg.c_g if cfg.use_slstm else 0) + (2 * cfg.c_g if cfg.use_ilstm else 0)
        if self.w1.shape[0] != expected:
            raise ShapeError(f"head input width {self.w1.shape[0]} != {expected}")

    @property
    def head_input_dim(self) -> int:
        return self.w1.shape[0]

    def zero_(self) -> None:
        for _, p in self.params.items():
            p.data[...] = 0.0


@dataclass
class ForwardTrace:
    """Intermediate values of one pair evaluation.

    Arrays with two rows hold the first graph in row 0 and the second in
    row 1.  ``node_features[t]`` is ``(f_x, f_y)`` after ``t`` conv layers.
    """

    node_features: list[tuple[np.ndarray, np.ndarray]]
    graph_states: list[np.ndarray]
    slstm_states: list[np.ndarray]
    ilstm_states: list[np.ndarray]
    pools: np.ndarray
    final_x: np.ndarray
    final_y: np.ndarray
    interaction: np.ndarray | None
    head_input: np.ndarray
    logits: Tensor
    probs: Tensor

    @property
    def R(self) -> np.ndarray:
        return self.probs.data[0]


def pair_batch(gx: tuple[MolecularGraph, np.ndarray], gy: tuple[MolecularGraph, np.ndarray], d_max: int) -> GraphBatch:
    return GraphBatch.from_graphs([gx, gy], d_max)


def forward_pair(model: MrGnnModel, gx, gy=None) -> ForwardTrace:
    """Evaluate the model on one ordered pair.

    Pass either two ``(graph, features)`` tuples or a prebuilt two-graph
    :class:`GraphBatch` as ``gx``.
    """
    cfg = model.config
    batch = gx if isinstance(gx, GraphBatch) else pair_batch(gx, gy, cfg.d_max)
    if batch.num_graphs != 2:
        raise ValueError(f"forward_pair needs exactly two graphs, got {batch.num_graphs}")
    if batch.features.shape[1] != cfg.in_dim:
        raise ShapeError(f"feature width {batch.features.shape[1]} != model input width {cfg.in_dim}")
    split = len(batch.segments[0])

    f = Tensor(batch.features)
    node_features = [(batch.features[:split], batch.features[split:])]
    states = [graph_gather(f, batch, model.gathers[0])] if cfg.uses_gather else []
    conv = weighted_graph_conv if cfg.weighted_conv else standard_graph_conv
    for t, layer in enumerate(model.convs):
        f = neighborhood_max_pool(conv(f, batch, layer, activation=not cfg.linear_conv), batch)
        node_features.append((f.data[:split], f.data[split:]))
        if cfg.uses_gather:
            states.append(graph_gather(f, batch, model.gathers[t + 1]))
    pools = global_graph_pool(f, batch)

    s_hist: list[Tensor] = []
    if model.slstm is not None:
        s_hist = lstm_unroll(model.slstm, states)
        per_graph = ad.concat([s_hist[-1], pools])
    else:
        per_graph = pools
    head_parts = [ad.reshape(per_graph, 1, 2 * per_graph.shape[1])]

    h_hist: list[Tensor] = []
    if model.ilstm is not None:
        h_hist = lstm_unroll(model.ilstm, [ad.reshape(g, 1, 2 * cfg.c_g) for g in states])
        head_parts.append(h_hist[-1])
    head_in = ad.concat(head_parts) if len(head_parts) > 1 else head_parts[0]

    hidden = ad.relu(ad.add(ad.matmul(head_in, model.w1), model.b1))
    logits = ad.add(ad.matmul(hidden, model.w2), model.b2)
    probs = ad.softmax_rows(logits)

    return ForwardTrace(
        node_features=node_features,
        graph_states=[g.data for g in states],
        slstm_states=[s.data for s in s_hist],
        ilstm_states=[h.data for h in h_hist],
        pools=pools.data,
        final_x=per_graph.data[0],
        final_y=per_graph.data[1],
        interaction=h_hist[-1].data[0] if h_hist else None,
        head_input=head_in.data[0],
        logits=logits,
        probs=probs,
    )


# --- checkpoints ----------------------------------------------------------------

_MAGIC = b"MRGNNCKP"
_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: MrGnnModel, featurizer: FeaturizerConfig | None = None,
                    extra: dict | None = None) -> None:
    """Write config manifest and raw little-endian float64 parameters to one file."""
    entries = []
    offset = 0
    for name, p in model.params.items():
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.data.size * 8
    manifest = {
        "format": "mrgnn-checkpoint",
        "version": _VERSION,
        "model": model.config.to_dict(),
        "head_input_dim": model.head_input_dim,
        "featurizer": featurizer.to_dict() if featurizer else None,
        "extra": extra or {},
        "parameters": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for _, p in model.params.items():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_checkpoint_manifest(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)[0]


def _read_header(fh, path) -> tuple[dict, int]:
    head = fh.read(len(_MAGIC) + 12)
    if len(head) < len(_MAGIC) + 12 or head[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not an mrgnn checkpoint")
    version, size = struct.unpack("<IQ", head[len(_MAGIC) :])
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        manifest = json.loads(fh.read(size).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    return manifest, len(head) + size


def load_checkpoint(path: str | Path) -> tuple[MrGnnModel, dict]:
    """Rebuild the model from ``path``; returns it with the full manifest."""
    with open(path, "rb") as fh:
        manifest, _ = _read_header(fh, path)
        payload = fh.read()
    model = MrGnnModel(ModelConfig.from_dict(manifest["model"]))
    arrays = {}
    for e in manifest["parameters"]:
        n = int(np.prod(e["shape"]))
        start = e["offset"]
        if start + 8 * n > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(payload, dtype="<f8", count=n, offset=start).reshape(e["shape"])
    model.params.load(arrays)
    return model, manifest
