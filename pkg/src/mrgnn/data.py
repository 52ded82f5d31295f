"""Pair datasets: TSV loaders, synthetic motif task, feature cache."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import FeaturizerConfig, MolecularGraph, featurize
from .smiles import SmilesError, parse

__all__ = [
    "DataFormatError",
    "PairRecord",
    "LabeledPairDataset",
    "load_cci",
    "load_ddi",
    "write_pairs_tsv",
    "write_label_map",
    "read_label_map",
    "balance",
    "generate_synthetic",
    "MOTIF_RULES",
    "FeatureCache",
    "GraphCache",
]

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PairRecord:
    smiles_a: str
    smiles_b: str
    label: int


@dataclass
class LabeledPairDataset:
    records: list[PairRecord]
    k: int
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> PairRecord:
        return self.records[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.intp)

    def subset(self, indices: Iterable[int]) -> LabeledPairDataset:
        return LabeledPairDataset([self.records[i] for i in indices], self.k, dict(self.metadata))


def _rows(path: str | Path) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            yield lineno, cols


def _int_column(path, lineno: int, text: str, what: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: {what} {text!r} is not an integer") from None


def _parseable(smiles: str, cache: dict[str, bool]) -> bool:
    ok = cache.get(smiles)
    if ok is None:
        try:
            parse(smiles)
            ok = True
        except SmilesError:
            ok = False
        cache[smiles] = ok
    return ok


def load_cci(path: str | Path, threshold: int = 900) -> LabeledPairDataset:
    """Chemical pairs scored 0..999: ``score >= threshold`` is positive, ``score == 0`` negative.

    Pairs strictly between the two are discarded; pairs whose SMILES cannot
    be parsed are skipped.  Both are counted in ``metadata``.
    """
    if not 0 < threshold <= 999:
        raise ValueError(f"threshold {threshold} outside 1..999")
    records: list[PairRecord] = []
    seen_ok: dict[str, bool] = {}
    rows = discarded = skipped = 0
    for lineno, (a, b, score_text) in _rows(path):
        rows += 1
        score = _int_column(path, lineno, score_text, "score")
        if not 0 <= score <= 999:
            raise DataFormatError(f"{path}:{lineno}: score {score} outside 0..999")
        if 0 < score < threshold:
            discarded += 1
            continue
        if not (_parseable(a, seen_ok) and _parseable(b, seen_ok)):
            skipped += 1
            continue
        records.append(PairRecord(a, b, 1 if score >= threshold else 0))
    if rows == 0:
        raise DataFormatError(f"{path}: no records")
    meta = {"source": str(path), "mode": "cci", "threshold": threshold, "rows": rows,
            "emitted": len(records), "discarded": discarded, "skipped": skipped}
    return LabeledPairDataset(records, 2, meta)


def load_ddi(path: str | Path) -> LabeledPairDataset:
    """Drug pairs with integer interaction ids, re-indexed densely in ascending id order."""
    raw: list[tuple[str, str, int]] = []
    seen_ok: dict[str, bool] = {}
    rows = skipped = 0
    for lineno, (a, b, label_text) in _rows(path):
        rows += 1
        label = _int_column(path, lineno, label_text, "label")
        if not (_parseable(a, seen_ok) and _parseable(b, seen_ok)):
            skipped += 1
            continue
        raw.append((a, b, label))
    if rows == 0:
        raise DataFormatError(f"{path}: no records")
    label_map = {orig: i for i, orig in enumerate(sorted({r[2] for r in raw}))}
    records = [PairRecord(a, b, label_map[lab]) for a, b, lab in raw]
    meta = {"source": str(path), "mode": "ddi", "rows": rows, "emitted": len(records), "discarded": 0,
            "skipped": skipped, "label_map": {str(k): v for k, v in label_map.items()}}
    return LabeledPairDataset(records, max(len(label_map), 1), meta)


_LABEL_MAP_FORMAT = "mrgnn-label-map"


def write_label_map(path: str | Path, label_map: dict) -> None:
    doc = {"format": _LABEL_MAP_FORMAT, "version": 1, "map": {str(k): int(v) for k, v in label_map.items()}}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_label_map(path: str | Path) -> dict[str, int]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != _LABEL_MAP_FORMAT or doc.get("version") != 1:
        raise DataFormatError(f"{path}: not a version-1 label map")
    return {k: int(v) for k, v in doc["map"].items()}


def write_pairs_tsv(path: str | Path, rows: Iterable[tuple[str, str, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# mrgnn-pairs v1\n")
        for a, b, third in rows:
            fh.write(f"{a}\t{b}\t{int(third)}\n")


def balance(dataset: LabeledPairDataset, seed: int) -> LabeledPairDataset:
    """Downsample every class to the size of the rarest one (kept in original order)."""
    y = dataset.labels
    classes, counts = np.unique(y, return_counts=True)
    n = int(counts.min())
    rng = np.random.default_rng(seed)
    keep = np.concatenate([np.sort(rng.choice(np.flatnonzero(y == c), n, replace=False)) for c in classes])
    out = dataset.subset(sorted(keep.tolist()))
    out.metadata["balanced_per_class"] = n
    return out


# --- synthetic motif task ---------------------------------------------------------
#
# Label 1 iff the first molecule has an O=C-O fragment AND the second has a
# hydroxyl on a ring atom.  Molecules are assembled from a core (chain or
# ring) plus substituents; no filler piece can create either motif, so the
# generator knows each label by construction.

MOTIF_RULES = ("carboxyl-ringoh",)

_CHAIN_ATOMS = ("C", "C", "C", "N")
_RINGS = ("c1ccccc1", "C1CCCCC1", "c1ccncc1")
_CARBOXYL = ("C(=O)O",)
_RING_OH = ("O",)
# none of these completes O=C-O on one carbon or puts a lone O on a ring
_FILLERS = ("C", "CC", "N", "F", "Cl", "C(=O)C", "C=O", "C(=O)N", "CO", "OC", "CCO", "C#N")
_CHAIN_ONLY = ("O",)  # aliphatic hydroxyl: near-miss for the ring rule


@dataclass(frozen=True)
class _Plan:
    ring: str | None
    chain: tuple[str, ...]
    subs: tuple[tuple[int, str], ...]  # (core position, substituent)


def _ring_positions(ring: str) -> list[int]:
    # positions of aromatic/aliphatic carbons that may carry a substituent
    atoms = [ch for ch in ring if ch.isalpha()]
    return [i for i, ch in enumerate(atoms) if ch in "cC"]


def _plan_smiles(plan: _Plan) -> str:
    by_pos: dict[int, list[str]] = {}
    for pos, sub in plan.subs:
        by_pos.setdefault(pos, []).append(sub)
    if plan.ring is not None:
        atoms = [ch for ch in plan.ring if ch.isalpha()]
        parts = []
        for i, a in enumerate(atoms):
            text = a + ("1" if i in (0, len(atoms) - 1) else "")
            parts.append(text + "".join(f"({s})" for s in by_pos.get(i, [])))
        return "".join(parts)
    parts = []
    for i, a in enumerate(plan.chain):
        parts.append(a + "".join(f"({s})" for s in by_pos.get(i, [])))
    return "".join(parts)


def _heavy_atoms(fragment: str) -> int:
    return sum(1 for i, ch in enumerate(fragment) if ch.isalpha() and not (ch in "lr" and i > 0 and fragment[i - 1] in "CB"))


def _sample_molecule(rng: np.random.Generator, carboxyl: bool, ring_oh: bool) -> str:
    for _ in range(1000):
        use_ring = ring_oh or rng.random() < 0.5
        if use_ring:
            ring = _RINGS[rng.integers(len(_RINGS))]
            core_n = 6
            positions = _ring_positions(ring)
            chain: tuple[str, ...] = ()
        else:
            ring = None
            core_n = int(rng.integers(2, 6))
            chain = tuple(_CHAIN_ATOMS[rng.integers(len(_CHAIN_ATOMS))] for _ in range(core_n))
            positions = [i for i, a in enumerate(chain) if a == "C"]
            if not positions:
                continue
        subs: list[tuple[int, str]] = []
        required = []
        if carboxyl:
            required.append(_CARBOXYL[0])
        if ring_oh:
            required.append(_RING_OH[0])
        pool = list(_FILLERS) + ([] if use_ring else list(_CHAIN_ONLY))
        n_fill = int(rng.integers(0, 3))
        pieces = required + [pool[rng.integers(len(pool))] for _ in range(n_fill)]
        if len(pieces) > len(positions):
            continue
        slots = rng.permutation(positions)[: len(pieces)]
        # carbon substituent positions in a chain take at most one piece each
        subs = sorted(zip((int(s) for s in slots), pieces))
        smiles = _plan_smiles(_Plan(ring, chain, tuple(subs)))
        size = core_n + sum(_heavy_atoms(p) for p in pieces)
        if 4 <= size <= 12:
            return smiles
    raise RuntimeError("could not sample a molecule in the size range")


def generate_synthetic(n_pairs: int, seed: int, motif_rule: str = "carboxyl-ringoh") -> LabeledPairDataset:
    """Balanced pairs for the two-motif interaction rule; deterministic per seed."""
    if n_pairs < 2:
        raise ValueError("n_pairs must be at least 2")
    if motif_rule not in MOTIF_RULES:
        raise ValueError(f"unknown motif rule {motif_rule!r}; expected one of {MOTIF_RULES}")
    rng = np.random.default_rng(seed)
    n_pos = n_pairs // 2
    labels = np.array([1] * n_pos + [0] * (n_pairs - n_pos))
    rng.shuffle(labels)
    records = []
    for y in labels:
        if y == 1:
            a_has, b_has = True, True
        else:
            # each single-motif near miss is as common as having neither
            a_has, b_has = [(True, False), (False, True), (False, False)][rng.integers(3)]
        # the "wrong" motif may appear on the other side, so order matters
        a_extra = rng.random() < 0.25
        b_extra = rng.random() < 0.25
        a = _sample_molecule(rng, carboxyl=a_has, ring_oh=a_extra)
        b = _sample_molecule(rng, carboxyl=b_extra, ring_oh=b_has)
        records.append(PairRecord(a, b, int(y)))
    meta = {"source": "synthetic", "mode": "synthetic", "motif_rule": motif_rule, "seed": seed,
            "rows": n_pairs, "emitted": n_pairs, "discarded": 0, "skipped": 0}
    return LabeledPairDataset(records, 2, meta)


# --- caches ---------------------------------------------------------------------

_CACHE_MAGIC = b"MRGNNFC1"


class FeatureCache:
    """Content-addressed on-disk store of feature matrices.

    Entries live at ``<root>/<key[:2]>/<key>.feat`` where ``key`` hashes the
    SMILES string together with the featurizer configuration.  Each file is
    the magic ``MRGNNFC1``, two little-endian uint32 extents, then float64
    row-major data.  Unreadable entries are rebuilt with a warning.
    """

    def __init__(self, root: str | Path, featurizer: FeaturizerConfig = FeaturizerConfig()):
        self.root = Path(root)
        self.featurizer = featurizer
        self.hits = 0
        self.misses = 0
        self._config_digest = featurizer.digest()

    def key(self, smiles: str) -> str:
        return hashlib.sha256(f"{self._config_digest}\x00{smiles}".encode()).hexdigest()

    def path(self, smiles: str) -> Path:
        k = self.key(smiles)
        return self.root / k[:2] / f"{k}.feat"

    def _read(self, p: Path) -> np.ndarray | None:
        try:
            blob = p.read_bytes()
        except FileNotFoundError:
            return None
        head = len(_CACHE_MAGIC) + 8
        if len(blob) < head or blob[: len(_CACHE_MAGIC)] != _CACHE_MAGIC:
            log.warning("feature cache entry %s is corrupt; rebuilding", p)
            return None
        m, c = struct.unpack("<II", blob[len(_CACHE_MAGIC) : head])
        if len(blob) != head + 8 * m * c:
            log.warning("feature cache entry %s has the wrong size; rebuilding", p)
            return None
        return np.frombuffer(blob, dtype="<f8", offset=head).reshape(m, c).copy()

    def get(self, smiles: str, graph: MolecularGraph | None = None) -> np.ndarray:
        p = self.path(smiles)
        X = self._read(p)
        if X is not None and (graph is None or X.shape[0] == graph.num_nodes):
            self.hits += 1
            return X
        self.misses += 1
        X = featurize(graph if graph is not None else parse(smiles), self.featurizer)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(".tmp")
        tmp.write_bytes(_CACHE_MAGIC + struct.pack("<II", *X.shape) + np.ascontiguousarray(X, "<f8").tobytes())
        tmp.replace(p)
        return X

    def warm(self, dataset: LabeledPairDataset) -> None:
        for smiles in dict.fromkeys(s for r in dataset.records for s in (r.smiles_a, r.smiles_b)):
            self.get(smiles)


class GraphCache:
    """In-memory SMILES -> (graph, features), optionally backed by a :class:`FeatureCache`."""

    def __init__(self, featurizer: FeaturizerConfig = FeaturizerConfig(), features: FeatureCache | None = None):
        self.featurizer = featurizer
        self.features = features
        self._items: dict[str, tuple[MolecularGraph, np.ndarray]] = {}

    def __call__(self, smiles: str) -> tuple[MolecularGraph, np.ndarray]:
        item = self._items.get(smiles)
        if item is None:
            graph = parse(smiles)
            X = self.features.get(smiles, graph) if self.features else featurize(graph, self.featurizer)
            item = self._items[smiles] = (graph, X)
        return item
